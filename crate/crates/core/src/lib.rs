//! Generative modeling of approximately periodic time series with a
//! posterior-weighted Gaussian process.
//!
//! The model separates intra-repetition structure from inter-repetition
//! variability in two stages. Stage 1 fits a strictly periodic GP to the
//! time-normalized repetitions and computes its posterior, which pins the
//! mean to a single repetition template. Stage 2 modulates the posterior
//! covariance with a smoothly decaying envelope kernel (a Schur product)
//! and adds learned output noise, yielding a multivariate normal
//! distribution over arbitrarily many repetitions that keeps the mean
//! exactly periodic while letting individual repetitions drift apart.
//!
//! Module map:
//! - [`numerics`]: dense positive-definite factorization with a jitter
//!   ladder, solves, log-determinants, multivariate-normal sampling, and a
//!   finite-difference gradient oracle.
//! - [`kernels`]: the periodic kernel, the phase-embedded envelope kernel,
//!   their product, Gram assembly and analytic log-parameter derivatives.
//! - [`dataset`]: repetition containers, time normalization, the
//!   approximate-periodicity check, synthetic data generation and CSV/JSON
//!   file I/O.
//! - [`gp`]: exact GP posteriors, the replicated-grid closed form and its
//!   brute-force block oracle, and the naive weighted-prior diagnostic.
//! - [`training`]: stage-1 mini-batched NLL with Adam, noise rescaling,
//!   and the stage-2 envelope NLL.
//! - [`generator`]: the posterior-weighted distribution on an evaluation
//!   grid, trajectory sampling and log-likelihood scoring.
//! - [`multioutput`]: a linear model of coregionalization wrapper for
//!   multichannel data.

pub mod dataset;
pub mod error;
pub mod generator;
pub mod gp;
pub mod kernels;
pub mod multioutput;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
