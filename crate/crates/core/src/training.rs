//! Two-stage hyperparameter training. Stage 1 minimizes the mini-batched
//! NLL of a periodic GP over theta = (l_theta, sigma_f^2, sigma_theta^2);
//! the learned noise is then rescaled by the effective number of
//! repetitions to undo the evidence accumulation of joint conditioning.
//! Stage 2 minimizes the full NLL of the envelope-modulated posterior
//! covariance over psi = (l_psi, sigma_gamma^2, sigma_psi^2).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{PosteriorGaussian, posterior};
use crate::kernels::{EnvelopeHyperParams, Kernel, PeriodicHyperParams, gram, kernel_grads};
use crate::numerics::{DEFAULT_MAX_JITTER, RngSeed, cholesky_psd, log_det, solve_posdef, solve_posdef_vec};

use crate::dataset::RepetitionSet;

const LN_2PI: f64 = 1.8378770664093453;

/// Default optimizer settings reported in the experiments.
pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_LR: f64 = 0.1;

/// Natural-space initialization of both stages.
const INIT_LENGTH_SCALE: f64 = 1.0;
const INIT_VARIANCE: f64 = 1.0;
const INIT_NOISE: f64 = 0.1;

/// Adam optimizer state over one parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    step_count: usize,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl AdamState {
    pub fn new(dim: usize, lr: f64) -> Self {
        Self {
            step_count: 0,
            first_moment: vec![0.0; dim],
            second_moment: vec![0.0; dim],
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected descent step in place.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.first_moment.len());
        assert_eq!(grad.len(), params.len());
        self.step_count += 1;
        let t = self.step_count as i32;
        for i in 0..params.len() {
            self.first_moment[i] = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * grad[i];
            self.second_moment[i] =
                self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.first_moment[i] / (1.0 - self.beta1.powi(t));
            let v_hat = self.second_moment[i] / (1.0 - self.beta2.powi(t));
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }
}

/// Outcome of one optimization run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub param_names: Vec<String>,
    pub params_natural: Vec<f64>,
    pub params_log: Vec<f64>,
    pub nll_trace: Vec<f64>,
    pub steps: usize,
    pub seed: RngSeed,
}

fn ensure_finite(nll: f64) -> Result<f64> {
    if nll.is_finite() {
        Ok(nll)
    } else {
        Err(Error::ConfigInvalid(
            "non-finite objective; check the data for NaN or Inf".into(),
        ))
    }
}

/// Concatenated inputs and outputs of a repetition subset (channel 0).
fn batch_data(rs: &RepetitionSet, batch: &[usize]) -> (Vec<f64>, DVector<f64>) {
    let mut times = Vec::new();
    let mut values = Vec::new();
    for &i in batch {
        let rep = &rs.repetitions()[i];
        times.extend_from_slice(rep.times());
        values.extend_from_slice(rep.channel(0));
    }
    (times, DVector::from_vec(values))
}

fn stage1_covariance(theta: &PeriodicHyperParams, times: &[f64]) -> DMatrix<f64> {
    let mut k = gram(&Kernel::Periodic(*theta), times, times);
    let noise = theta.noise_variance();
    for i in 0..times.len() {
        k[(i, i)] += noise;
    }
    k
}

/// Stage-1 objective on one mini-batch of repetitions:
/// `1/2 [ y^T (K + sigma^2 I)^-1 y + log det(K + sigma^2 I) + n log 2pi ]`
/// over the concatenated batch inputs.
pub fn stage1_nll(theta: &PeriodicHyperParams, rs: &RepetitionSet, batch: &[usize]) -> Result<f64> {
    assert!(!batch.is_empty());
    let (times, y) = batch_data(rs, batch);
    let sigma = stage1_covariance(theta, &times);
    let factor = cholesky_psd(&sigma, DEFAULT_MAX_JITTER)?;
    let alpha = solve_posdef_vec(&factor, &y)?;
    let n = y.len() as f64;
    ensure_finite(0.5 * (y.dot(&alpha) + log_det(&factor) + n * LN_2PI))
}

/// Analytic stage-1 gradient over `(log l, log sigma_f^2, log sigma_theta^2)`:
/// `1/2 [ tr(S^-1 dS) - a^T dS a ]` with `a = S^-1 y`.
pub fn stage1_grad(
    theta: &PeriodicHyperParams,
    rs: &RepetitionSet,
    batch: &[usize],
) -> Result<[f64; 3]> {
    assert!(!batch.is_empty());
    let (times, y) = batch_data(rs, batch);
    let n = times.len();
    let sigma = stage1_covariance(theta, &times);
    let factor = cholesky_psd(&sigma, DEFAULT_MAX_JITTER)?;
    let alpha = solve_posdef_vec(&factor, &y)?;
    let sigma_inv = solve_posdef(&factor, &DMatrix::identity(n, n))?;

    let kernel = Kernel::Periodic(*theta);
    let grads = kernel_grads(&kernel, &times);
    let mut out = [0.0_f64; 3];
    for (p, d_sigma) in grads.iter().enumerate() {
        let trace = sigma_inv.component_mul(d_sigma).sum();
        let quad = alpha.dot(&(d_sigma * &alpha));
        out[p] = 0.5 * (trace - quad);
    }
    // Noise enters only on the diagonal: dS/d(log sigma^2) = sigma^2 I.
    let noise = theta.noise_variance();
    let trace = noise * sigma_inv.trace();
    let quad = noise * alpha.dot(&alpha);
    out[2] = 0.5 * (trace - quad);
    Ok(out)
}

/// Stage-1 fit: each step draws a uniformly random batch of `batch_size`
/// distinct repetitions (without replacement within a step, resampled
/// across steps) and applies one Adam update in log-space.
pub fn stage1_fit(
    rs: &RepetitionSet,
    batch_size: usize,
    steps: usize,
    lr: f64,
    seed: RngSeed,
) -> Result<(PeriodicHyperParams, FitReport)> {
    if batch_size < 1 || batch_size > rs.r() {
        return Err(Error::InvalidBatchSize {
            batch_size,
            repetitions: rs.r(),
        });
    }
    let mut rng = seed.rng();
    let mut log_params = [
        INIT_LENGTH_SCALE.ln(),
        INIT_VARIANCE.ln(),
        INIT_NOISE.ln(),
    ];
    let mut adam = AdamState::new(3, lr);
    let mut trace = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut batch = rand::seq::index::sample(&mut rng, rs.r(), batch_size).into_vec();
        batch.sort_unstable();
        let theta = PeriodicHyperParams::from_log_params(log_params, rs.period());
        trace.push(stage1_nll(&theta, rs, &batch)?);
        let grad = stage1_grad(&theta, rs, &batch)?;
        adam.update(&mut log_params, &grad);
    }
    let theta = PeriodicHyperParams::from_log_params(log_params, rs.period());
    let report = FitReport {
        param_names: vec![
            "length_scale".into(),
            "signal_variance".into(),
            "noise_variance".into(),
        ],
        params_natural: vec![
            theta.length_scale(),
            theta.signal_variance(),
            theta.noise_variance(),
        ],
        params_log: log_params.to_vec(),
        nll_trace: trace,
        steps,
        seed,
    };
    Ok((theta, report))
}

/// Restores per-repetition uncertainty after joint conditioning:
/// conditioning on `r` repetitions behaves like a single repetition with
/// noise `sigma^2 / r`, so the trained noise is multiplied by `r`.
pub fn rescale_noise(theta: &PeriodicHyperParams, r_effective: u64) -> PeriodicHyperParams {
    theta.with_noise_variance(theta.noise_variance() * r_effective as f64)
}

fn stage2_covariance(
    psi: &EnvelopeHyperParams,
    post: &PosteriorGaussian,
    period: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let envelope = Kernel::Envelope {
        params: *psi,
        period,
    };
    let w = gram(&envelope, &post.grid, &post.grid);
    let mut sigma = w.component_mul(&post.cov);
    let noise = psi.output_noise();
    for i in 0..sigma.nrows() {
        sigma[(i, i)] += noise;
    }
    (sigma, w)
}

/// Stage-2 objective: Gaussian NLL of the observations under
/// `N(mu_theta, W o Sigma_theta + sigma_psi^2 I)` where `o` is the
/// elementwise (Schur) product and the posterior is evaluated at exactly
/// the training inputs. Includes the `n log 2pi` constant so values stay
/// comparable across dimensions.
pub fn stage2_nll(
    psi: &EnvelopeHyperParams,
    y: &DVector<f64>,
    post: &PosteriorGaussian,
    period: f64,
) -> Result<f64> {
    if y.len() != post.len() {
        return Err(Error::DimensionMismatch {
            expected: post.len(),
            got: y.len(),
        });
    }
    let (sigma, _) = stage2_covariance(psi, post, period);
    let factor = cholesky_psd(&sigma, DEFAULT_MAX_JITTER)?;
    let residual = y - &post.mean;
    let beta = solve_posdef_vec(&factor, &residual)?;
    let n = y.len() as f64;
    ensure_finite(0.5 * (residual.dot(&beta) + log_det(&factor) + n * LN_2PI))
}

/// Analytic stage-2 gradient over `(log l_psi, log sigma_gamma^2,
/// log sigma_psi^2)`; the envelope derivatives enter through the Schur
/// product with the fixed stage-1 covariance.
pub fn stage2_grad(
    psi: &EnvelopeHyperParams,
    y: &DVector<f64>,
    post: &PosteriorGaussian,
    period: f64,
) -> Result<[f64; 3]> {
    if y.len() != post.len() {
        return Err(Error::DimensionMismatch {
            expected: post.len(),
            got: y.len(),
        });
    }
    let n = post.len();
    let (sigma, _) = stage2_covariance(psi, post, period);
    let factor = cholesky_psd(&sigma, DEFAULT_MAX_JITTER)?;
    let residual = y - &post.mean;
    let beta = solve_posdef_vec(&factor, &residual)?;
    let sigma_inv = solve_posdef(&factor, &DMatrix::identity(n, n))?;

    let envelope = Kernel::Envelope {
        params: *psi,
        period,
    };
    let w_grads = kernel_grads(&envelope, &post.grid);
    let mut out = [0.0_f64; 3];
    for (p, dw) in w_grads.iter().enumerate() {
        let d_sigma = dw.component_mul(&post.cov);
        let trace = sigma_inv.component_mul(&d_sigma).sum();
        let quad = beta.dot(&(&d_sigma * &beta));
        out[p] = 0.5 * (trace - quad);
    }
    let noise = psi.output_noise();
    out[2] = 0.5 * (noise * sigma_inv.trace() - noise * beta.dot(&beta));
    Ok(out)
}

/// Stage-2 fit: full-batch Adam in log-space; all repetitions enter
/// jointly since the envelope couples them.
pub fn stage2_fit(
    y: &DVector<f64>,
    post: &PosteriorGaussian,
    period: f64,
    steps: usize,
    lr: f64,
    seed: RngSeed,
) -> Result<(EnvelopeHyperParams, FitReport)> {
    let mut log_params = [
        INIT_LENGTH_SCALE.ln(),
        INIT_VARIANCE.ln(),
        INIT_NOISE.ln(),
    ];
    let mut adam = AdamState::new(3, lr);
    let mut trace = Vec::with_capacity(steps);
    for _ in 0..steps {
        let psi = EnvelopeHyperParams::from_log_params(log_params);
        trace.push(stage2_nll(&psi, y, post, period)?);
        let grad = stage2_grad(&psi, y, post, period)?;
        adam.update(&mut log_params, &grad);
    }
    let psi = EnvelopeHyperParams::from_log_params(log_params);
    let report = FitReport {
        param_names: vec![
            "envelope_length_scale".into(),
            "envelope_variance".into(),
            "output_noise".into(),
        ],
        params_natural: vec![
            psi.envelope_length_scale(),
            psi.envelope_variance(),
            psi.output_noise(),
        ],
        params_log: log_params.to_vec(),
        nll_trace: trace,
        steps,
        seed,
    };
    Ok((psi, report))
}

/// Full univariate pipeline: stage-1 fit, noise rescaling, stage-1
/// posterior at the training inputs, stage-2 fit.
#[derive(Debug, Clone)]
pub struct FittedModel {
    /// Stage-1 parameters as trained (before noise rescaling).
    pub theta_trained: PeriodicHyperParams,
    /// Stage-1 parameters with the noise rescaled by `r_effective`.
    pub theta: PeriodicHyperParams,
    pub psi: EnvelopeHyperParams,
    pub r_effective: u64,
    pub stage1: FitReport,
    pub stage2: FitReport,
}

pub fn fit_two_stage(
    rs: &RepetitionSet,
    batch_size: usize,
    steps: usize,
    lr: f64,
    seed: RngSeed,
    r_effective: Option<u64>,
) -> Result<FittedModel> {
    let (theta_trained, stage1) = stage1_fit(rs, batch_size, steps, lr, seed)?;
    let r_eff = r_effective.unwrap_or(rs.r() as u64);
    let theta = rescale_noise(&theta_trained, r_eff);
    let times = rs.concat_times();
    let y = DVector::from_vec(rs.concat_values(0));
    let post = posterior(
        &times,
        &y,
        &Kernel::Periodic(theta),
        theta.noise_variance(),
        &times,
    )?;
    let (psi, stage2) = stage2_fit(&y, &post, rs.period(), steps, lr, seed.derive(1))?;
    Ok(FittedModel {
        theta_trained,
        theta,
        psi,
        r_effective: r_eff,
        stage1,
        stage2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{SynthConfig, synth_dataset};
    use crate::numerics::finite_diff_grad;
    use approx::assert_relative_eq;

    fn theta(l: f64, sf2: f64, sn2: f64) -> PeriodicHyperParams {
        PeriodicHyperParams::new(l, sf2, sn2, 1.0).unwrap()
    }

    fn small_synth(seed: u64) -> RepetitionSet {
        synth_dataset(&SynthConfig {
            n_repetitions: 4,
            points_per_rep: 8,
            dense_grid_per_rep: 24,
            cond_points_per_rep: 12,
            seed: RngSeed(seed),
            ..SynthConfig::default()
        })
        .unwrap()
        .train
    }

    #[test]
    fn stage1_nll_standard_normal_case() {
        // Single observation with unit total variance.
        let rs = RepetitionSet::univariate(vec![(vec![0.5], vec![0.0])], 1.0).unwrap();
        let th = theta(1.0, 0.5, 0.5);
        let nll = stage1_nll(&th, &rs, &[0]).unwrap();
        assert_relative_eq!(nll, 0.5 * LN_2PI, epsilon = 1e-12);
    }

    #[test]
    fn stage1_nll_noise_doubling_matches_gaussian_closed_form() {
        // With a vanishing kernel the model is i.i.d. N(0, sigma^2).
        let times = vec![0.1, 0.4, 0.8];
        let values = vec![0.3, -0.7, 0.2];
        let rs = RepetitionSet::univariate(vec![(times, values.clone())], 1.0).unwrap();
        let yy: f64 = values.iter().map(|v| v * v).sum();
        let s2 = 0.4;
        let low = stage1_nll(&theta(1.0, 1e-30, s2), &rs, &[0]).unwrap();
        let high = stage1_nll(&theta(1.0, 1e-30, 2.0 * s2), &rs, &[0]).unwrap();
        let expected = 0.5 * (yy * (1.0 / (2.0 * s2) - 1.0 / s2) + 3.0 * 2.0_f64.ln());
        assert_relative_eq!(high - low, expected, epsilon = 1e-8);
    }

    #[test]
    fn stage1_nll_does_not_factorize_over_splits() {
        let rs = small_synth(3);
        let th = theta(0.8, 1.0, 0.2);
        let joint = stage1_nll(&th, &rs, &[0, 1]).unwrap();
        let split = stage1_nll(&th, &rs, &[0]).unwrap() + stage1_nll(&th, &rs, &[1]).unwrap();
        assert!((joint - split).abs() > 1e-6);
    }

    #[test]
    fn stage1_grad_matches_finite_differences() {
        let rs = small_synth(5);
        for (i, th) in [
            theta(0.7, 1.2, 0.3),
            theta(1.3, 0.6, 0.05),
            theta(0.5, 2.0, 1.0),
        ]
        .iter()
        .enumerate()
        {
            let batch = vec![0, (i % 3) + 1];
            let analytic = stage1_grad(th, &rs, &batch).unwrap();
            let fd = finite_diff_grad(
                |log| {
                    let t = PeriodicHyperParams::from_log_params(
                        [log[0], log[1], log[2]],
                        rs.period(),
                    );
                    stage1_nll(&t, &rs, &batch)
                },
                &th.log_params(),
                1e-5,
            )
            .unwrap();
            for p in 0..3 {
                let scale = analytic[p].abs().max(fd[p].abs()).max(1.0);
                assert!(
                    (analytic[p] - fd[p]).abs() <= 1e-4 * scale,
                    "param {p}: analytic {} vs fd {}",
                    analytic[p],
                    fd[p]
                );
            }
        }
    }

    #[test]
    fn stage1_noise_gradient_sign_matches_oracle_on_zero_data() {
        let times: Vec<f64> = (0..6).map(|i| i as f64 / 6.0).collect();
        let rs = RepetitionSet::univariate(vec![(times, vec![0.0; 6])], 1.0).unwrap();
        let th = theta(0.8, 1.0, 0.3);
        let analytic = stage1_grad(&th, &rs, &[0]).unwrap()[2];
        let fd = finite_diff_grad(
            |log| {
                let t =
                    PeriodicHyperParams::from_log_params([log[0], log[1], log[2]], rs.period());
                stage1_nll(&t, &rs, &[0])
            },
            &th.log_params(),
            1e-5,
        )
        .unwrap()[2];
        assert_eq!(analytic.signum(), fd.signum());
    }

    #[test]
    fn stage1_fit_is_deterministic_and_traces_are_finite() {
        let rs = small_synth(9);
        let (a, ra) = stage1_fit(&rs, 2, 30, 0.1, RngSeed(4)).unwrap();
        let (b, rb) = stage1_fit(&rs, 2, 30, 0.1, RngSeed(4)).unwrap();
        assert_eq!(a.log_params(), b.log_params());
        assert_eq!(ra.nll_trace, rb.nll_trace);
        assert_eq!(ra.nll_trace.len(), 30);
        assert!(ra.nll_trace.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn stage1_fit_rejects_bad_batch_size() {
        let rs = small_synth(1);
        assert!(matches!(
            stage1_fit(&rs, 0, 10, 0.1, RngSeed(0)),
            Err(Error::InvalidBatchSize { .. })
        ));
        assert!(matches!(
            stage1_fit(&rs, 99, 10, 0.1, RngSeed(0)),
            Err(Error::InvalidBatchSize { .. })
        ));
    }

    #[test]
    fn stage1_gradient_small_near_optimum() {
        let rs = small_synth(13);
        let (start, _) = stage1_fit(&rs, rs.r(), 100, 0.1, RngSeed(2)).unwrap();
        // Polish with full batches and a shrinking step to a local optimum.
        let all: Vec<usize> = (0..rs.r()).collect();
        let mut log = start.log_params();
        for lr in [0.02, 0.005, 0.001] {
            let mut adam = AdamState::new(3, lr);
            for _ in 0..200 {
                let th = PeriodicHyperParams::from_log_params(log, rs.period());
                let g = stage1_grad(&th, &rs, &all).unwrap();
                adam.update(&mut log, &g);
            }
        }
        let th = PeriodicHyperParams::from_log_params(log, rs.period());
        let g = stage1_grad(&th, &rs, &all).unwrap();
        let norm = g.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
        assert!(norm <= 1e-3, "gradient norm {norm}");
    }

    #[test]
    fn rescale_noise_examples() {
        let th = theta(1.0, 1.0, 0.3);
        assert_eq!(rescale_noise(&th, 1).noise_variance(), 0.3);
        assert_relative_eq!(
            rescale_noise(&th, 10).noise_variance(),
            3.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn rescaled_noise_restores_single_repetition_variance() {
        use crate::gp::{posterior, replicated_grid_posterior};
        let grid: Vec<f64> = (0..8).map(|i| i as f64 / 8.0).collect();
        let kernel = Kernel::Periodic(theta(0.6, 1.0, 0.0));
        let k = gram(&kernel, &grid, &grid);
        let y = DVector::from_fn(8, |i, _| (std::f64::consts::TAU * grid[i]).sin());
        let s2 = 0.25;
        let r = 5;
        let replicated = replicated_grid_posterior(&grid, &k, &y, s2 * r as f64, r).unwrap();
        let single = posterior(&grid, &y, &kernel, s2, &grid).unwrap();
        for i in 0..8 {
            assert!((replicated.cov[(i, i)] - single.cov[(i, i)]).abs() <= 1e-8);
        }
    }

    #[test]
    fn stage2_nll_identity_envelope_reduces_to_plain_gaussian() {
        let rs = small_synth(21);
        let times = rs.concat_times();
        let y = DVector::from_vec(rs.concat_values(0));
        let th = theta(0.8, 1.0, 0.5);
        let post = posterior(&times, &y, &Kernel::Periodic(th), 0.5, &times).unwrap();
        let psi = EnvelopeHyperParams::new(1e12, 1.0, 0.0).unwrap();
        let nll = stage2_nll(&psi, &y, &post, 1.0).unwrap();
        // Plain Gaussian NLL under the stage-1 posterior covariance.
        let factor = cholesky_psd(&post.cov, DEFAULT_MAX_JITTER).unwrap();
        let e = &y - &post.mean;
        let beta = solve_posdef_vec(&factor, &e).unwrap();
        let n = y.len() as f64;
        let plain = 0.5 * (e.dot(&beta) + log_det(&factor) + n * LN_2PI);
        assert_relative_eq!(nll, plain, max_relative = 1e-10);
    }

    #[test]
    fn stage2_nll_zero_residual_is_half_log_det() {
        let rs = small_synth(22);
        let times = rs.concat_times();
        let y = DVector::from_vec(rs.concat_values(0));
        let th = theta(0.8, 1.0, 0.5);
        let post = posterior(&times, &y, &Kernel::Periodic(th), 0.5, &times).unwrap();
        let psi = EnvelopeHyperParams::new(0.8, 1.5, 0.3).unwrap();
        let mu = post.mean.clone();
        let nll = stage2_nll(&psi, &mu, &post, 1.0).unwrap();
        let (sigma, _) = stage2_covariance(&psi, &post, 1.0);
        let factor = cholesky_psd(&sigma, DEFAULT_MAX_JITTER).unwrap();
        let n = mu.len() as f64;
        assert_relative_eq!(
            nll,
            0.5 * (log_det(&factor) + n * LN_2PI),
            max_relative = 1e-10
        );
    }

    #[test]
    fn stage2_grad_matches_finite_differences() {
        let rs = small_synth(23);
        let times = rs.concat_times();
        let y = DVector::from_vec(rs.concat_values(0));
        let th = theta(0.9, 1.0, 0.4);
        let post = posterior(&times, &y, &Kernel::Periodic(th), 0.4, &times).unwrap();
        for psi in [
            EnvelopeHyperParams::new(0.8, 1.5, 0.2).unwrap(),
            EnvelopeHyperParams::new(0.4, 0.7, 0.05).unwrap(),
            EnvelopeHyperParams::new(2.0, 3.0, 0.5).unwrap(),
        ] {
            let analytic = stage2_grad(&psi, &y, &post, 1.0).unwrap();
            let fd = finite_diff_grad(
                |log| {
                    let p = EnvelopeHyperParams::from_log_params([log[0], log[1], log[2]]);
                    stage2_nll(&p, &y, &post, 1.0)
                },
                &psi.log_params(),
                1e-5,
            )
            .unwrap();
            for p in 0..3 {
                let scale = analytic[p].abs().max(fd[p].abs()).max(1.0);
                assert!(
                    (analytic[p] - fd[p]).abs() <= 1e-4 * scale,
                    "param {p}: analytic {} vs fd {}",
                    analytic[p],
                    fd[p]
                );
            }
        }
    }

    #[test]
    fn stage2_fit_is_deterministic() {
        let rs = small_synth(31);
        let times = rs.concat_times();
        let y = DVector::from_vec(rs.concat_values(0));
        let th = theta(0.9, 1.0, 0.4);
        let post = posterior(&times, &y, &Kernel::Periodic(th), 0.4, &times).unwrap();
        let (pa, ra) = stage2_fit(&y, &post, 1.0, 25, 0.1, RngSeed(6)).unwrap();
        let (pb, rb) = stage2_fit(&y, &post, 1.0, 25, 0.1, RngSeed(6)).unwrap();
        assert_eq!(pa.log_params(), pb.log_params());
        assert_eq!(ra.nll_trace, rb.nll_trace);
        assert!(ra.nll_trace.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn two_stage_pipeline_runs() {
        let rs = small_synth(41);
        let model = fit_two_stage(&rs, 2, 20, 0.1, RngSeed(8), None).unwrap();
        assert_eq!(model.r_effective, rs.r() as u64);
        assert_relative_eq!(
            model.theta.noise_variance(),
            model.theta_trained.noise_variance() * rs.r() as f64,
            max_relative = 1e-12
        );
        assert!(model.psi.envelope_length_scale() > 0.0);
    }
}
