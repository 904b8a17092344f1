//! Exact Gaussian-process posteriors: the generic closed form, the
//! replicated-grid shortcut for repeated observations of one latent
//! function, its brute-force block-covariance oracle, and the naive
//! weighted-prior diagnostic that motivates the two-stage construction.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::kernels::{EnvelopeHyperParams, Kernel, PeriodicHyperParams, gram};
use crate::numerics::{DEFAULT_MAX_JITTER, cholesky_psd, solve_posdef, solve_posdef_vec};

/// Gaussian over latent function values on an explicit evaluation grid.
#[derive(Debug, Clone)]
pub struct PosteriorGaussian {
    pub grid: Vec<f64>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl PosteriorGaussian {
    /// Stores the triple, symmetrizing the covariance so downstream
    /// factorizations never see floating-point asymmetry.
    pub fn new(grid: Vec<f64>, mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        assert_eq!(grid.len(), mean.len());
        assert_eq!(mean.len(), cov.nrows());
        assert_eq!(cov.nrows(), cov.ncols());
        let cov = symmetrize(cov);
        Self { grid, mean, cov }
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Pointwise standard deviations `sqrt(diag cov)`, clamped at zero.
    pub fn std_dev(&self) -> DVector<f64> {
        DVector::from_fn(self.len(), |i, _| self.cov[(i, i)].max(0.0).sqrt())
    }
}

fn symmetrize(mut a: DMatrix<f64>) -> DMatrix<f64> {
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

/// Standard GP posterior at `eval_grid` given noisy observations
/// `(train_times, train_values)` under a zero prior mean:
/// `mu = K_* (K + sigma^2 I)^-1 y` and
/// `cov = K_** - K_* (K + sigma^2 I)^-1 K_*^T`.
pub fn posterior(
    train_times: &[f64],
    train_values: &DVector<f64>,
    kernel: &Kernel,
    noise_variance: f64,
    eval_grid: &[f64],
) -> Result<PosteriorGaussian> {
    assert_eq!(train_times.len(), train_values.len());
    let mut k_train = gram(kernel, train_times, train_times);
    for i in 0..train_times.len() {
        k_train[(i, i)] += noise_variance;
    }
    let factor = cholesky_psd(&k_train, DEFAULT_MAX_JITTER)?;
    let k_cross = gram(kernel, eval_grid, train_times);
    let alpha = solve_posdef_vec(&factor, train_values)?;
    let mean = &k_cross * alpha;
    let k_eval = gram(kernel, eval_grid, eval_grid);
    let v = solve_posdef(&factor, &k_cross.transpose())?;
    let cov = k_eval - &k_cross * v;
    Ok(PosteriorGaussian::new(eval_grid.to_vec(), mean, cov))
}

/// Closed form for `r` phase-aligned grid repetitions: conditioning on
/// all of them equals conditioning on the mean repetition with the noise
/// scaled by `1/r`:
/// `mu = K (K + sigma^2/r I)^-1 y_bar`,
/// `cov = K - K (K + sigma^2/r I)^-1 K`.
pub fn replicated_grid_posterior(
    grid: &[f64],
    k: &DMatrix<f64>,
    y_bar: &DVector<f64>,
    noise_variance: f64,
    repetitions: u64,
) -> Result<PosteriorGaussian> {
    assert!(repetitions >= 1);
    assert_eq!(k.nrows(), y_bar.len());
    let n = k.nrows();
    let scaled_noise = noise_variance / repetitions as f64;
    let mut shifted = k.clone();
    for i in 0..n {
        shifted[(i, i)] += scaled_noise;
    }
    let factor = cholesky_psd(&shifted, DEFAULT_MAX_JITTER)?;
    let mean = k * solve_posdef_vec(&factor, y_bar)?;
    let cov = k - k * solve_posdef(&factor, k)?;
    Ok(PosteriorGaussian::new(grid.to_vec(), mean, cov))
}

/// Brute-force oracle for [`replicated_grid_posterior`]: materializes the
/// full `nr x nr` joint covariance, whose diagonal blocks are
/// `K + sigma^2 I` and whose off-diagonal blocks are `K`, and solves the
/// dense system. Deliberately takes no algebraic shortcut so it stays an
/// independent check of the closed form.
pub fn block_posterior_oracle(
    grid: &[f64],
    k: &DMatrix<f64>,
    repetitions: &[DVector<f64>],
    noise_variance: f64,
) -> Result<PosteriorGaussian> {
    let n = k.nrows();
    let r = repetitions.len();
    assert!(r >= 1);
    for rep in repetitions {
        assert_eq!(rep.len(), n);
    }
    let mut sigma_r = DMatrix::zeros(n * r, n * r);
    for bi in 0..r {
        for bj in 0..r {
            let mut block = sigma_r.view_mut((bi * n, bj * n), (n, n));
            block.copy_from(k);
            if bi == bj {
                for d in 0..n {
                    block[(d, d)] += noise_variance;
                }
            }
        }
    }
    let mut y_full = DVector::zeros(n * r);
    for (bi, rep) in repetitions.iter().enumerate() {
        y_full.rows_mut(bi * n, n).copy_from(rep);
    }
    // Cross covariance of the latent grid values with every repetition:
    // the row block [K K ... K].
    let mut cross = DMatrix::zeros(n, n * r);
    for bi in 0..r {
        cross.view_mut((0, bi * n), (n, n)).copy_from(k);
    }
    let factor = cholesky_psd(&sigma_r, DEFAULT_MAX_JITTER)?;
    let mean = &cross * solve_posdef_vec(&factor, &y_full)?;
    let cov = k - &cross * solve_posdef(&factor, &cross.transpose())?;
    Ok(PosteriorGaussian::new(grid.to_vec(), mean, cov))
}

/// Posterior under the weighted-periodic prior `g = w * k`.
///
/// Kept as a diagnostic only: far from the data the mean decays to zero
/// and the variance inflates back to `g(t, t)`, which is exactly the
/// pathology the two-stage construction avoids.
pub fn naive_weighted_posterior(
    train_times: &[f64],
    train_values: &DVector<f64>,
    theta: &PeriodicHyperParams,
    psi: &EnvelopeHyperParams,
    eval_grid: &[f64],
) -> Result<PosteriorGaussian> {
    let kernel = Kernel::Weighted {
        theta: *theta,
        psi: *psi,
    };
    posterior(
        train_times,
        train_values,
        &kernel,
        theta.noise_variance(),
        eval_grid,
    )
}
