//! Subcommand implementations.

use std::fs;
use std::io::ErrorKind;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use pwgp::dataset::{
    self, BaseSignal, DatasetMeta, SynthConfig, SynthOutput, phase_grid, read_dataset,
    read_trajectories, write_dataset_with_meta, write_trajectories,
};
use pwgp::error::{Error, Result};
use pwgp::generator::{build_gamma, log_likelihoods, sample_trajectories};
use pwgp::numerics::RngSeed;
use pwgp::training::fit_two_stage;

use crate::args::{FitArgs, SampleArgs, ScoreArgs, SynthArgs};
use crate::model::ModelFile;

/// Ensures the output directory exists, creating it only when asked to.
pub fn ensure_out_dir(dir: &Path, create: bool) -> Result<()> {
    if dir.is_dir() {
        return Ok(());
    }
    if create {
        fs::create_dir_all(dir)?;
        return Ok(());
    }
    Err(Error::Io(std::io::Error::new(
        ErrorKind::NotFound,
        format!("output directory {} does not exist (use --create)", dir.display()),
    )))
}

pub fn synth_config_from_args(args: &SynthArgs) -> SynthConfig {
    SynthConfig {
        n_repetitions: args.reps,
        points_per_rep: args.points_per_rep,
        base_signal: if args.two_channels {
            BaseSignal::DualSine
        } else {
            BaseSignal::Sine
        },
        output_noise: args.noise,
        seed: RngSeed(args.seed),
        dense_grid_per_rep: args.dense_grid_per_rep,
        envelope_in_prior: !args.periodic,
        ..SynthConfig::default()
    }
}

/// Writes the dense ground truth next to the training set: the drawn
/// trajectory plus the posterior mean and standard deviation per channel.
pub fn write_test_csv(out: &SynthOutput, path: &Path) -> Result<()> {
    let d = out.channels.len();
    let mut text = String::from("repetition_index,t");
    for c in 1..=d {
        text.push_str(&format!(",y_{c}"));
    }
    for c in 1..=d {
        text.push_str(&format!(",mean_{c}"));
    }
    for c in 1..=d {
        text.push_str(&format!(",sd_{c}"));
    }
    text.push('\n');
    let period = out.train.period();
    for (j, &t) in out.dense_grid.iter().enumerate() {
        let rep = (t / period).floor() as usize;
        text.push_str(&format!("{rep},{}", dataset::format_float(t)));
        for ch in &out.channels {
            text.push(',');
            text.push_str(&dataset::format_float(ch.test_draw[j]));
        }
        for ch in &out.channels {
            text.push(',');
            text.push_str(&dataset::format_float(ch.test_mean[j]));
        }
        for ch in &out.channels {
            text.push(',');
            text.push_str(&dataset::format_float(ch.test_cov[(j, j)].max(0.0).sqrt()));
        }
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    ensure_out_dir(&args.out, args.create)?;
    let cfg = synth_config_from_args(args);
    let out = pwgp::dataset::synth_dataset(&cfg)?;
    let meta = DatasetMeta {
        period: out.train.period(),
        dim: out.train.dim(),
        repetitions: out.train.r(),
        seed: Some(args.seed),
        synth_config: Some(cfg),
    };
    write_dataset_with_meta(&out.train, &args.out.join("train.csv"), &meta)?;
    write_test_csv(&out, &args.out.join("test.csv"))?;
    Ok(())
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let rs = read_dataset(&args.data)?;
    let fit = fit_two_stage(
        &rs,
        args.batch_size,
        args.steps,
        args.lr,
        RngSeed(args.seed),
        args.r_effective,
    )?;
    let file = ModelFile::from_fit(&fit, args.seed, args.batch_size, args.steps, args.lr);
    file.write(&args.out)?;
    Ok(())
}

/// Sidecar describing a trajectory file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub repetitions: usize,
    pub samples_per_rep: usize,
    pub count: usize,
    pub seed: u64,
    pub no_output_noise: bool,
    pub period: f64,
}

pub fn cmd_sample(args: &SampleArgs) -> Result<()> {
    let model = ModelFile::read(&args.model)?;
    let rs = read_dataset(&args.data)?;
    let theta = model.theta.to_params()?;
    let psi = model.psi.to_params()?;
    let gamma = build_gamma(&rs, &theta, &psi, args.reps, args.samples_per_rep)?;
    let trajectories =
        sample_trajectories(&gamma, args.count, args.no_output_noise, RngSeed(args.seed))?;
    write_trajectories(&args.out, &gamma.grid, rs.period(), &trajectories)?;
    let meta = TrajectoryMeta {
        repetitions: args.reps,
        samples_per_rep: args.samples_per_rep,
        count: args.count,
        seed: args.seed,
        no_output_noise: args.no_output_noise,
        period: rs.period(),
    };
    let json = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::ConfigInvalid(format!("metadata serialization failed: {e}")))?;
    fs::write(args.out.with_extension("meta.json"), json)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub trajectory: usize,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreReport {
    pub count: usize,
    pub grid_points: usize,
    /// Sorted best-first.
    pub scores: Vec<ScoreEntry>,
}

pub fn cmd_score(args: &ScoreArgs) -> Result<()> {
    let model = ModelFile::read(&args.model)?;
    let rs = read_dataset(&args.data)?;
    let (grid, trajectories) = read_trajectories(&args.trajectories)?;

    // Recover the grid layout and require an exact match with the grid the
    // model generates; anything else is a usage error.
    let period = rs.period();
    let samples_per_rep = grid.iter().take_while(|&&t| t < period).count();
    if samples_per_rep == 0 || grid.len() % samples_per_rep != 0 {
        return Err(Error::DimensionMismatch {
            expected: samples_per_rep.max(1),
            got: grid.len(),
        });
    }
    let reps = grid.len() / samples_per_rep;
    let expected = phase_grid(reps, samples_per_rep, period);
    if expected != grid {
        return Err(Error::ConfigInvalid(
            "trajectory grid does not match the model's evaluation grid".into(),
        ));
    }

    let theta = model.theta.to_params()?;
    let psi = model.psi.to_params()?;
    let gamma = build_gamma(&rs, &theta, &psi, reps, samples_per_rep)?;
    let lls = log_likelihoods(&gamma, &trajectories)?;
    let mut scores: Vec<ScoreEntry> = lls
        .iter()
        .enumerate()
        .map(|(i, &ll)| ScoreEntry {
            trajectory: i + 1,
            log_likelihood: ll,
        })
        .collect();
    scores.sort_by(|a, b| b.log_likelihood.total_cmp(&a.log_likelihood));
    let report = ScoreReport {
        count: scores.len(),
        grid_points: grid.len(),
        scores,
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::ConfigInvalid(format!("report serialization failed: {e}")))?;
    fs::write(&args.out, json)?;
    Ok(())
}

/// Mean of the gamma model on the training grid, used by tests.
pub fn gamma_mean_for(model: &ModelFile, rs: &pwgp::dataset::RepetitionSet, reps: usize, spr: usize) -> Result<DVector<f64>> {
    let gamma = build_gamma(&rs.clone(), &model.theta.to_params()?, &model.psi.to_params()?, reps, spr)?;
    Ok(gamma.mean)
}
