//! The posterior-weighted generative distribution: a multivariate normal
//! `gamma ~ N(mu_theta, W_psi o Sigma_theta + sigma_psi^2 I)` on an
//! explicit evaluation grid spanning arbitrarily many repetitions, plus
//! trajectory sampling and log-likelihood scoring.
//!
//! This is deliberately not a GP posterior: the mean is the exactly
//! periodic stage-1 posterior mean, while the Schur product with the
//! envelope decays inter-repetition correlations without touching
//! phase-aligned variances.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{RepetitionSet, phase_grid};
use crate::error::{Error, Result};
use crate::gp::posterior;
use crate::kernels::{EnvelopeHyperParams, Kernel, PeriodicHyperParams, gram};
use crate::numerics::{
    DEFAULT_MAX_JITTER, PosDefFactor, RngSeed, cholesky_psd, log_det, sample_mvn, solve_posdef_vec,
};

/// Dense-covariance guard: grids larger than this are refused.
pub const DEFAULT_GRID_CAP: usize = 2000;

const LN_2PI: f64 = 1.8378770664093453;

/// How the envelope combines with the stage-1 posterior covariance. The
/// additive form exists only as a diagnostic: it fails to remove
/// long-range periodic correlations and is tested against, not used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modulation {
    Multiplicative,
    Additive,
}

/// Finite-dimensional generative distribution on an evaluation grid.
#[derive(Debug, Clone)]
pub struct GammaModel {
    pub grid: Vec<f64>,
    /// Stage-1 posterior mean, exactly periodic on the grid.
    pub mean: DVector<f64>,
    /// Full covariance including the output-noise diagonal.
    pub cov: DMatrix<f64>,
    pub theta: PeriodicHyperParams,
    pub psi: EnvelopeHyperParams,
    pub repetitions: usize,
    pub samples_per_rep: usize,
    pub modulation: Modulation,
}

impl GammaModel {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Covariance with the output-noise diagonal removed, for sampling
    /// noiseless trajectories.
    pub fn noiseless_cov(&self) -> DMatrix<f64> {
        let mut c = self.cov.clone();
        let noise = self.psi.output_noise();
        for i in 0..c.nrows() {
            c[(i, i)] -= noise;
        }
        c
    }

    /// Pointwise standard deviations `sqrt(diag cov)`.
    pub fn std_dev(&self) -> DVector<f64> {
        DVector::from_fn(self.len(), |i, _| self.cov[(i, i)].max(0.0).sqrt())
    }
}

/// Builds the generative distribution over `repetitions * samples_per_rep`
/// equispaced points: the stage-1 posterior conditions on all training
/// repetitions jointly (theta must already carry the rescaled noise), the
/// envelope Gram is Schur-multiplied in, and the output noise lands on
/// the diagonal.
pub fn build_gamma(
    rs: &RepetitionSet,
    theta: &PeriodicHyperParams,
    psi: &EnvelopeHyperParams,
    repetitions: usize,
    samples_per_rep: usize,
) -> Result<GammaModel> {
    build_gamma_with(
        rs,
        theta,
        psi,
        repetitions,
        samples_per_rep,
        Modulation::Multiplicative,
        DEFAULT_GRID_CAP,
    )
}

/// [`build_gamma`] with an explicit modulation and grid cap.
pub fn build_gamma_with(
    rs: &RepetitionSet,
    theta: &PeriodicHyperParams,
    psi: &EnvelopeHyperParams,
    repetitions: usize,
    samples_per_rep: usize,
    modulation: Modulation,
    grid_cap: usize,
) -> Result<GammaModel> {
    if rs.dim() != 1 {
        return Err(Error::ConfigInvalid(
            "build_gamma expects a univariate repetition set; use the multioutput module".into(),
        ));
    }
    if repetitions < 1 || samples_per_rep < 1 {
        return Err(Error::ConfigInvalid(format!(
            "repetitions {repetitions} and samples_per_rep {samples_per_rep} must be positive"
        )));
    }
    let n = repetitions * samples_per_rep;
    if n > grid_cap {
        return Err(Error::GridTooLarge {
            requested: n,
            cap: grid_cap,
        });
    }
    let grid = phase_grid(repetitions, samples_per_rep, rs.period());
    let times = rs.concat_times();
    let y = DVector::from_vec(rs.concat_values(0));
    let post = posterior(
        &times,
        &y,
        &Kernel::Periodic(*theta),
        theta.noise_variance(),
        &grid,
    )?;
    let envelope = Kernel::Envelope {
        params: *psi,
        period: rs.period(),
    };
    let w = gram(&envelope, &grid, &grid);
    let mut cov = match modulation {
        Modulation::Multiplicative => w.component_mul(&post.cov),
        Modulation::Additive => w + &post.cov,
    };
    let noise = psi.output_noise();
    for i in 0..n {
        cov[(i, i)] += noise;
    }
    Ok(GammaModel {
        grid,
        mean: post.mean,
        cov,
        theta: *theta,
        psi: *psi,
        repetitions,
        samples_per_rep,
        modulation,
    })
}

/// Draws `count` trajectories, one per output row. With
/// `drop_output_noise` the sampling covariance excludes the
/// `sigma_psi^2 I` term, per the recommendation to discard it when
/// noiseless trajectories are wanted.
pub fn sample_trajectories(
    model: &GammaModel,
    count: usize,
    drop_output_noise: bool,
    seed: RngSeed,
) -> Result<DMatrix<f64>> {
    if count == 0 {
        return Ok(DMatrix::zeros(0, model.len()));
    }
    let cov = if drop_output_noise {
        model.noiseless_cov()
    } else {
        model.cov.clone()
    };
    let factor = cholesky_psd(&cov, DEFAULT_MAX_JITTER)?;
    sample_mvn(&model.mean, &factor, count, seed)
}

fn scoring_factor(model: &GammaModel) -> Result<PosDefFactor> {
    cholesky_psd(&model.cov, DEFAULT_MAX_JITTER)
}

/// Gaussian log-density of one trajectory under the model.
pub fn log_likelihood(model: &GammaModel, trajectory: &DVector<f64>) -> Result<f64> {
    let factor = scoring_factor(model)?;
    log_likelihood_with(model, &factor, trajectory)
}

/// Scores many trajectories (rows) against one factorization.
pub fn log_likelihoods(model: &GammaModel, trajectories: &DMatrix<f64>) -> Result<Vec<f64>> {
    let factor = scoring_factor(model)?;
    (0..trajectories.nrows())
        .map(|s| log_likelihood_with(model, &factor, &trajectories.row(s).transpose()))
        .collect()
}

fn log_likelihood_with(
    model: &GammaModel,
    factor: &PosDefFactor,
    trajectory: &DVector<f64>,
) -> Result<f64> {
    if trajectory.len() != model.len() {
        return Err(Error::DimensionMismatch {
            expected: model.len(),
            got: trajectory.len(),
        });
    }
    let residual = trajectory - &model.mean;
    let beta = solve_posdef_vec(factor, &residual)?;
    let n = model.len() as f64;
    Ok(-0.5 * (residual.dot(&beta) + log_det(factor) + n * LN_2PI))
}
