//! Synthetic approximately periodic test data: a draw from a
//! weighted-periodic GP conditioned on a base signal, with random
//! per-repetition training subsets.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Repetition, RepetitionSet, phase_grid};
use crate::error::{Error, Result};
use crate::gp::posterior;
use crate::kernels::{EnvelopeHyperParams, Kernel, PeriodicHyperParams};
use crate::numerics::{DEFAULT_MAX_JITTER, RngSeed, cholesky_psd, sample_mvn};

/// Stabilizing nugget added to the conditioning noise so the zero-noise
/// degenerate configuration stays factorizable.
const COND_NUGGET: f64 = 1e-6;

/// Signal the generator prior is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaseSignal {
    /// `sin(2 pi t)`, one channel.
    Sine,
    /// `[sin(2 pi t), -sin(4 pi t)]`, two channels.
    DualSine,
}

impl BaseSignal {
    pub fn dim(&self) -> usize {
        match self {
            BaseSignal::Sine => 1,
            BaseSignal::DualSine => 2,
        }
    }

    pub fn eval(&self, channel: usize, t: f64) -> f64 {
        let tau = std::f64::consts::TAU;
        match (self, channel) {
            (BaseSignal::Sine, 0) => (tau * t).sin(),
            (BaseSignal::DualSine, 0) => (tau * t).sin(),
            (BaseSignal::DualSine, 1) => -(2.0 * tau * t).sin(),
            _ => panic!("channel {channel} out of range"),
        }
    }
}

/// Configuration of the synthetic generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_repetitions: usize,
    pub points_per_rep: usize,
    pub base_signal: BaseSignal,
    /// Periodic length scale of the generator prior.
    pub gen_length_scale_k: f64,
    /// Envelope length scale of the generator prior.
    pub gen_length_scale_w: f64,
    /// Observation noise of the generator prior.
    pub gen_noise_variance: f64,
    /// Extra i.i.d. noise added to the test draw.
    pub output_noise: f64,
    pub seed: RngSeed,
    /// Dense evaluation points per repetition for the test trajectory.
    pub dense_grid_per_rep: usize,
    /// Conditioning points per repetition.
    pub cond_points_per_rep: usize,
    /// With `false` the envelope is dropped from the prior and the draw
    /// is strictly periodic.
    pub envelope_in_prior: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_repetitions: 10,
            points_per_rep: 20,
            base_signal: BaseSignal::Sine,
            gen_length_scale_k: 0.7,
            gen_length_scale_w: 0.8,
            gen_noise_variance: 1.5,
            output_noise: 0.0,
            seed: RngSeed(0),
            dense_grid_per_rep: 100,
            cond_points_per_rep: 15,
            envelope_in_prior: true,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.n_repetitions >= 1
            && self.points_per_rep >= 1
            && self.dense_grid_per_rep >= 2
            && self.cond_points_per_rep >= 2
            && self.points_per_rep <= self.dense_grid_per_rep
            && self.gen_length_scale_k > 0.0
            && self.gen_length_scale_w > 0.0
            && self.gen_noise_variance >= 0.0
            && self.output_noise >= 0.0;
        if !ok {
            return Err(Error::ConfigInvalid(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Ground-truth posterior and draw of one output channel.
#[derive(Debug, Clone)]
pub struct SynthChannel {
    pub test_mean: DVector<f64>,
    pub test_cov: DMatrix<f64>,
    pub test_draw: DVector<f64>,
}

/// Synthetic dataset: training repetitions plus the dense ground truth
/// they were subsampled from.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub train: RepetitionSet,
    pub dense_grid: Vec<f64>,
    pub channels: Vec<SynthChannel>,
}

impl SynthOutput {
    /// Channel-0 accessors for the common univariate case.
    pub fn test_mean(&self) -> &DVector<f64> {
        &self.channels[0].test_mean
    }

    pub fn test_cov(&self) -> &DMatrix<f64> {
        &self.channels[0].test_cov
    }

    pub fn test_draw(&self) -> &DVector<f64> {
        &self.channels[0].test_draw
    }
}

/// Generates the synthetic dataset: conditions the weighted-periodic
/// prior (noise `gen_noise_variance`) on the base signal sampled densely
/// over the whole horizon, evaluates the posterior on the dense grid,
/// draws one test trajectory (plus optional output noise) and picks
/// `points_per_rep` random points per repetition for training. Channels
/// of a multivariate signal are generated independently but share the
/// training times.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let period = 1.0;
    let dim = cfg.base_signal.dim();
    let dense_grid = phase_grid(cfg.n_repetitions, cfg.dense_grid_per_rep, period);
    let cond_grid = phase_grid(cfg.n_repetitions, cfg.cond_points_per_rep, period);

    let theta = PeriodicHyperParams::new(cfg.gen_length_scale_k, 1.0, 0.0, period)?;
    let kernel = if cfg.envelope_in_prior {
        Kernel::Weighted {
            theta,
            psi: EnvelopeHyperParams::new(cfg.gen_length_scale_w, 1.0, 0.0)?,
        }
    } else {
        Kernel::Periodic(theta)
    };
    let cond_noise = cfg.gen_noise_variance + COND_NUGGET;

    let mut channels = Vec::with_capacity(dim);
    for c in 0..dim {
        let signal = DVector::from_fn(cond_grid.len(), |i, _| cfg.base_signal.eval(c, cond_grid[i]));
        let post = posterior(&cond_grid, &signal, &kernel, cond_noise, &dense_grid)?;
        let factor = cholesky_psd(&post.cov, DEFAULT_MAX_JITTER)?;
        let draw_seed = cfg.seed.derive(1000 + c as u64);
        let mut draw: DVector<f64> =
            sample_mvn(&post.mean, &factor, 1, draw_seed)?.row(0).transpose();
        if cfg.output_noise > 0.0 {
            let mut rng = cfg.seed.derive(2000 + c as u64).rng();
            let sd = cfg.output_noise.sqrt();
            for v in draw.iter_mut() {
                *v += sd * rng.sample::<f64, _>(StandardNormal);
            }
        }
        channels.push(SynthChannel {
            test_mean: post.mean,
            test_cov: post.cov,
            test_draw: draw,
        });
    }

    // Shared training times across channels: one multivariate series.
    let mut pick_rng = cfg.seed.derive(3000).rng();
    let spr = cfg.dense_grid_per_rep;
    let mut reps = Vec::with_capacity(cfg.n_repetitions);
    for rep in 0..cfg.n_repetitions {
        let mut idx = rand::seq::index::sample(&mut pick_rng, spr, cfg.points_per_rep).into_vec();
        idx.sort_unstable();
        let times: Vec<f64> = idx.iter().map(|&s| dense_grid[rep * spr + s]).collect();
        let values: Vec<Vec<f64>> = channels
            .iter()
            .map(|ch| idx.iter().map(|&s| ch.test_draw[rep * spr + s]).collect())
            .collect();
        reps.push(Repetition::new(times, values));
    }
    let train = RepetitionSet::new(reps, dim, period)?;

    Ok(SynthOutput {
        train,
        dense_grid,
        channels,
    })
}
