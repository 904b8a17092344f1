//! Linear model of coregionalization: a mixing matrix combines Q latent
//! periodic processes into D output channels, trained and sampled through
//! the same two-stage pipeline as the scalar model. Joint covariances use
//! channel-major ordering `index = channel * n_times + time_index`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{RepetitionSet, phase_grid};
use crate::error::{Error, Result};
use crate::generator::DEFAULT_GRID_CAP;
use crate::gp::PosteriorGaussian;
use crate::kernels::{EnvelopeHyperParams, Kernel, PeriodicHyperParams, gram};
use crate::numerics::{
    DEFAULT_MAX_JITTER, RngSeed, cholesky_psd, finite_diff_grad, log_det, min_eigenvalue,
    sample_mvn, solve_posdef, solve_posdef_vec,
};
use crate::training::{AdamState, FitReport, stage2_fit};

const LN_2PI: f64 = 1.8378770664093453;

/// Mixing matrix plus one periodic kernel per latent process. The latent
/// signal variances stay fixed at one; the mixing matrix carries all
/// output scale, which keeps the parameterization identifiable.
#[derive(Debug, Clone)]
pub struct CoregionalizationParams {
    /// D x Q mixing matrix.
    pub mixing: DMatrix<f64>,
    /// Per-latent kernels; the shared observation noise lives in each
    /// latent's noise field (kept equal across latents).
    pub latents: Vec<PeriodicHyperParams>,
}

impl CoregionalizationParams {
    pub fn new(mixing: DMatrix<f64>, latents: Vec<PeriodicHyperParams>) -> Result<Self> {
        if mixing.ncols() != latents.len() {
            return Err(Error::DimensionMismatch {
                expected: mixing.ncols(),
                got: latents.len(),
            });
        }
        let params = Self { mixing, latents };
        params.validate()?;
        Ok(params)
    }

    pub fn output_dim(&self) -> usize {
        self.mixing.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.mixing.ncols()
    }

    pub fn noise_variance(&self) -> f64 {
        self.latents[0].noise_variance()
    }

    /// `B B^T` must be PSD up to eigensolver tolerance.
    pub fn validate(&self) -> Result<()> {
        let bbt = &self.mixing * self.mixing.transpose();
        let min = min_eigenvalue(&bbt)?;
        if min < -1e-8 {
            return Err(Error::ConfigInvalid(format!(
                "mixing matrix gives indefinite B B^T (min eigenvalue {min:.3e})"
            )));
        }
        Ok(())
    }
}

/// Cross-covariance block matrix between two sets of times under the LMC:
/// entry ((i, a), (j, b)) = sum_q B[i,q] B[j,q] k_q(rows[a], cols[b]).
pub fn lmc_gram_cross(
    params: &CoregionalizationParams,
    rows: &[f64],
    cols: &[f64],
) -> DMatrix<f64> {
    let d = params.output_dim();
    let (nr, nc) = (rows.len(), cols.len());
    let mut out = DMatrix::zeros(d * nr, d * nc);
    for (q, latent) in params.latents.iter().enumerate() {
        let kq = gram(&Kernel::Periodic(*latent), rows, cols);
        for i in 0..d {
            for j in 0..d {
                let scale = params.mixing[(i, q)] * params.mixing[(j, q)];
                if scale == 0.0 {
                    continue;
                }
                let mut block = out.view_mut((i * nr, j * nc), (nr, nc));
                for a in 0..nr {
                    for b in 0..nc {
                        block[(a, b)] += scale * kq[(a, b)];
                    }
                }
            }
        }
    }
    out
}

/// Square joint covariance over one time vector.
pub fn lmc_gram(params: &CoregionalizationParams, times: &[f64]) -> DMatrix<f64> {
    lmc_gram_cross(params, times, times)
}

fn stacked_values(rs: &RepetitionSet, batch: &[usize]) -> (Vec<f64>, DVector<f64>) {
    let mut times = Vec::new();
    for &i in batch {
        times.extend_from_slice(rs.repetitions()[i].times());
    }
    let n = times.len();
    let d = rs.dim();
    let mut y = DVector::zeros(d * n);
    let mut offset = 0;
    for c in 0..d {
        for &i in batch {
            let vals = rs.repetitions()[i].channel(c);
            for &v in vals {
                y[offset] = v;
                offset += 1;
            }
        }
    }
    debug_assert_eq!(offset, d * n);
    (times, y)
}

fn lmc_nll(params: &CoregionalizationParams, times: &[f64], y: &DVector<f64>) -> Result<f64> {
    let mut sigma = lmc_gram(params, times);
    let noise = params.noise_variance();
    for i in 0..sigma.nrows() {
        sigma[(i, i)] += noise;
    }
    let factor = cholesky_psd(&sigma, DEFAULT_MAX_JITTER)?;
    let alpha = solve_posdef_vec(&factor, y)?;
    let n = y.len() as f64;
    Ok(0.5 * (y.dot(&alpha) + log_det(&factor) + n * LN_2PI))
}

/// Stage-1 parameter vector layout:
/// `[log l_1 .. log l_Q, log sigma_theta^2, B row-major]`.
fn unpack_params(x: &[f64], d: usize, q: usize, period: f64) -> CoregionalizationParams {
    let latents: Vec<PeriodicHyperParams> = (0..q)
        .map(|k| PeriodicHyperParams::from_log_params([x[k], 0.0, x[q]], period))
        .collect();
    let mixing = DMatrix::from_fn(d, q, |i, j| x[q + 1 + i * q + j]);
    CoregionalizationParams { mixing, latents }
}

/// Mini-batched NLL fit of the latent length scales, shared noise and
/// mixing matrix. Gradients come from central finite differences; at desk
/// scale the extra NLL evaluations are cheap and spare the B-dependent
/// derivative algebra.
pub fn stage1_fit_lmc(
    rs: &RepetitionSet,
    batch_size: usize,
    steps: usize,
    lr: f64,
    seed: RngSeed,
) -> Result<(CoregionalizationParams, FitReport)> {
    if batch_size < 1 || batch_size > rs.r() {
        return Err(Error::InvalidBatchSize {
            batch_size,
            repetitions: rs.r(),
        });
    }
    let d = rs.dim();
    let q = d;
    let period = rs.period();
    let mut x = Vec::with_capacity(q + 1 + d * q);
    x.extend(std::iter::repeat(0.0).take(q)); // log l_q = 0 -> l = 1
    x.push(0.1_f64.ln());
    for i in 0..d {
        for j in 0..q {
            x.push(if i == j { 1.0 } else { 0.0 });
        }
    }
    let mut adam = AdamState::new(x.len(), lr);
    let mut rng = seed.rng();
    let mut trace = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut batch = rand::seq::index::sample(&mut rng, rs.r(), batch_size).into_vec();
        batch.sort_unstable();
        let (times, y) = stacked_values(rs, &batch);
        let params = unpack_params(&x, d, q, period);
        trace.push(lmc_nll(&params, &times, &y)?);
        let grad = finite_diff_grad(
            |probe| lmc_nll(&unpack_params(probe, d, q, period), &times, &y),
            &x,
            1e-5,
        )?;
        adam.update(&mut x, &grad);
    }
    let params = unpack_params(&x, d, q, period);
    let mut names: Vec<String> = (1..=q).map(|k| format!("latent_{k}_length_scale")).collect();
    names.push("noise_variance".into());
    for i in 0..d {
        for j in 0..q {
            names.push(format!("mixing_{}_{}", i + 1, j + 1));
        }
    }
    let mut natural: Vec<f64> = params.latents.iter().map(|l| l.length_scale()).collect();
    natural.push(params.noise_variance());
    natural.extend(params.mixing.transpose().iter().copied());
    let report = FitReport {
        param_names: names,
        params_natural: natural,
        params_log: x,
        nll_trace: trace,
        steps,
        seed,
    };
    Ok((params, report))
}

/// Joint posterior of all channels at `eval_times` given the training
/// repetitions, channel-major on both sides.
pub fn lmc_posterior(
    params: &CoregionalizationParams,
    rs: &RepetitionSet,
    eval_times: &[f64],
) -> Result<PosteriorGaussian> {
    let all: Vec<usize> = (0..rs.r()).collect();
    let (train_times, y) = stacked_values(rs, &all);
    let mut k_train = lmc_gram(params, &train_times);
    let noise = params.noise_variance();
    for i in 0..k_train.nrows() {
        k_train[(i, i)] += noise;
    }
    let factor = cholesky_psd(&k_train, DEFAULT_MAX_JITTER)?;
    let k_cross = lmc_gram_cross(params, eval_times, &train_times);
    let mean = &k_cross * solve_posdef_vec(&factor, &y)?;
    let k_eval = lmc_gram(params, eval_times);
    let cov = k_eval - &k_cross * solve_posdef(&factor, &k_cross.transpose())?;
    let d = params.output_dim();
    let mut grid = Vec::with_capacity(d * eval_times.len());
    for _ in 0..d {
        grid.extend_from_slice(eval_times);
    }
    Ok(PosteriorGaussian::new(grid, mean, cov))
}

/// Configuration of the end-to-end multichannel experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LmcFitConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: RngSeed,
    /// Repetitions to generate.
    pub gen_repetitions: usize,
    pub samples_per_rep: usize,
    pub sample_count: usize,
}

/// Fitted multichannel model plus generated trajectories.
#[derive(Debug)]
pub struct LmcResult {
    pub coreg: CoregionalizationParams,
    pub psi: EnvelopeHyperParams,
    pub stage1: FitReport,
    pub stage2: FitReport,
    /// Time grid of one channel; the joint vectors are channel-major
    /// over this grid.
    pub time_grid: Vec<f64>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// `sample_count` rows of joint channel-major trajectories.
    pub samples: DMatrix<f64>,
}

impl LmcResult {
    pub fn output_dim(&self) -> usize {
        self.coreg.output_dim()
    }

    /// View of one channel of one sampled trajectory.
    pub fn sample_channel(&self, sample: usize, channel: usize) -> Vec<f64> {
        let n = self.time_grid.len();
        (0..n).map(|j| self.samples[(sample, channel * n + j)]).collect()
    }
}

/// Full pipeline on a multichannel dataset: stage-1 LMC fit, noise
/// rescaling, joint stage-1 posterior, stage-2 envelope fit (a single
/// envelope shared across channels) and sampling of the joint generative
/// distribution.
pub fn fit_and_sample_2d(rs: &RepetitionSet, cfg: &LmcFitConfig) -> Result<LmcResult> {
    if rs.dim() < 2 {
        return Err(Error::ConfigInvalid(format!(
            "multioutput pipeline expects D >= 2 channels, got {}",
            rs.dim()
        )));
    }
    let (mut coreg, stage1) = stage1_fit_lmc(rs, cfg.batch_size, cfg.steps, cfg.lr, cfg.seed)?;
    // Rescale the shared noise by the number of repetitions, as in the
    // scalar pipeline.
    let r = rs.r() as f64;
    coreg.latents = coreg
        .latents
        .iter()
        .map(|l| l.with_noise_variance(l.noise_variance() * r))
        .collect();

    let all: Vec<usize> = (0..rs.r()).collect();
    let (train_times, y) = stacked_values(rs, &all);
    let post_train = lmc_posterior(&coreg, rs, &train_times)?;
    let (psi, stage2) = stage2_fit(&y, &post_train, rs.period(), cfg.steps, cfg.lr, cfg.seed.derive(1))?;

    let time_grid = phase_grid(cfg.gen_repetitions, cfg.samples_per_rep, rs.period());
    let joint = rs.dim() * time_grid.len();
    if joint > DEFAULT_GRID_CAP {
        return Err(Error::GridTooLarge {
            requested: joint,
            cap: DEFAULT_GRID_CAP,
        });
    }
    let post_gen = lmc_posterior(&coreg, rs, &time_grid)?;
    let envelope = Kernel::Envelope {
        params: psi,
        period: rs.period(),
    };
    let w = gram(&envelope, &post_gen.grid, &post_gen.grid);
    let mut cov = w.component_mul(&post_gen.cov);
    let noise = psi.output_noise();
    for i in 0..cov.nrows() {
        cov[(i, i)] += noise;
    }
    let factor = cholesky_psd(&cov, DEFAULT_MAX_JITTER)?;
    let samples = sample_mvn(&post_gen.mean, &factor, cfg.sample_count, cfg.seed.derive(2))?;
    Ok(LmcResult {
        coreg,
        psi,
        stage1,
        stage2,
        time_grid,
        mean: post_gen.mean,
        cov,
        samples,
    })
}
