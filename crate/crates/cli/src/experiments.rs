//! Desk-scale experiment harness: reruns the batch-size, output-noise and
//! periodic-data studies end to end and emits their result tables plus
//! raw plot data.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use pwgp::dataset::{self, SynthConfig, SynthOutput, phase_grid, synth_dataset};
use pwgp::error::Result;
use pwgp::generator::build_gamma;
use pwgp::gp::naive_weighted_posterior;
use pwgp::kernels::{EnvelopeHyperParams, PeriodicHyperParams};
use pwgp::multioutput::{LmcFitConfig, LmcResult, fit_and_sample_2d};
use pwgp::numerics::RngSeed;
use pwgp::training::{FittedModel, fit_two_stage};

use crate::args::{ExperimentArgs, ExperimentKind};
use crate::commands::ensure_out_dir;

pub const TABLE_BATCH_SIZES: [usize; 5] = [1, 2, 3, 5, 10];
pub const TABLE_NOISE_LEVELS: [f64; 5] = [0.01, 0.05, 0.1, 0.3, 0.5];

/// One result-table row: the swept key (batch size or output noise), the
/// two MSE columns and all fitted hyperparameters. `sigma2_theta` is the
/// trained (pre-rescaling) noise, which is what the study tables track.
#[derive(Debug, Clone)]
pub struct TrendRow {
    pub key: f64,
    pub mse_mean: f64,
    pub mse_sd: f64,
    pub l_theta: f64,
    pub l_psi: f64,
    pub sigma2_theta: f64,
    pub sigma2_psi: f64,
    pub sigma2_f: f64,
    pub sigma2_gamma: f64,
}

pub fn default_synth(seed: RngSeed) -> SynthConfig {
    SynthConfig {
        seed,
        ..SynthConfig::default()
    }
}

pub fn periodic_synth(seed: RngSeed) -> SynthConfig {
    SynthConfig {
        seed,
        envelope_in_prior: false,
        ..SynthConfig::default()
    }
}

/// MSE of the generative mean and pointwise standard deviation against
/// the dense ground truth, evaluated on the test grid.
pub fn evaluate_against_truth(out: &SynthOutput, fit: &FittedModel) -> Result<(f64, f64)> {
    let reps = out.train.r();
    let dense_per_rep = out.dense_grid.len() / reps;
    let gamma = build_gamma(&out.train, &fit.theta, &fit.psi, reps, dense_per_rep)?;
    let mse_mean = (&gamma.mean - out.test_mean()).map(|v| v * v).mean();
    let sd_gamma = gamma.std_dev();
    let sd_test = DVector::from_fn(out.test_cov().nrows(), |i, _| {
        out.test_cov()[(i, i)].max(0.0).sqrt()
    });
    let mse_sd = (&sd_gamma - &sd_test).map(|v| v * v).mean();
    Ok((mse_mean, mse_sd))
}

fn row_from_fit(key: f64, out: &SynthOutput, fit: &FittedModel) -> Result<TrendRow> {
    let (mse_mean, mse_sd) = evaluate_against_truth(out, fit)?;
    Ok(TrendRow {
        key,
        mse_mean,
        mse_sd,
        l_theta: fit.theta.length_scale(),
        l_psi: fit.psi.envelope_length_scale(),
        sigma2_theta: fit.theta_trained.noise_variance(),
        sigma2_psi: fit.psi.output_noise(),
        sigma2_f: fit.theta.signal_variance(),
        sigma2_gamma: fit.psi.envelope_variance(),
    })
}

/// Batch-size study on one dataset drawn from the master seed.
pub fn run_table1_rows(master: RngSeed, batch_sizes: &[usize]) -> Result<Vec<TrendRow>> {
    let out = synth_dataset(&default_synth(master.derive(1000)))?;
    batch_sizes
        .iter()
        .map(|&bs| {
            let fit = fit_two_stage(&out.train, bs, 100, 0.1, master.derive(bs as u64), None)?;
            row_from_fit(bs as f64, &out, &fit)
        })
        .collect()
}

pub fn run_table1(master: RngSeed) -> Result<Vec<TrendRow>> {
    run_table1_rows(master, &TABLE_BATCH_SIZES)
}

/// Output-noise study at fixed batch size 2.
pub fn run_table2(master: RngSeed) -> Result<Vec<TrendRow>> {
    TABLE_NOISE_LEVELS
        .iter()
        .enumerate()
        .map(|(i, &noise)| {
            let cfg = SynthConfig {
                output_noise: noise,
                ..default_synth(master.derive(2000 + i as u64))
            };
            let out = synth_dataset(&cfg)?;
            let fit = fit_two_stage(&out.train, 2, 100, 0.1, master.derive(100 + i as u64), None)?;
            row_from_fit(noise, &out, &fit)
        })
        .collect()
}

/// Batch-size study on strictly periodic data.
pub fn run_table3(master: RngSeed) -> Result<Vec<TrendRow>> {
    let out = synth_dataset(&periodic_synth(master.derive(3000)))?;
    TABLE_BATCH_SIZES
        .iter()
        .map(|&bs| {
            let fit = fit_two_stage(&out.train, bs, 100, 0.1, master.derive(300 + bs as u64), None)?;
            row_from_fit(bs as f64, &out, &fit)
        })
        .collect()
}

/// Curve data for the naive weighted-prior diagnostic: the posterior
/// mean decays and the variance inflates back to the prior once the
/// evaluation point leaves the data.
#[derive(Debug, Clone)]
pub struct Fig2Data {
    pub grid: Vec<f64>,
    pub mean: DVector<f64>,
    pub sd: DVector<f64>,
    pub max_abs_y: f64,
    pub prior_sd: f64,
}

pub fn run_fig2(master: RngSeed) -> Result<Fig2Data> {
    let cfg = SynthConfig {
        n_repetitions: 3,
        ..default_synth(master.derive(4000))
    };
    let out = synth_dataset(&cfg)?;
    let theta = PeriodicHyperParams::new(0.7, 1.0, 0.05, 1.0)?;
    let psi = EnvelopeHyperParams::new(0.5, 1.0, 0.0)?;
    let times = out.train.concat_times();
    let y = DVector::from_vec(out.train.concat_values(0));
    let grid = phase_grid(15, 40, 1.0);
    let post = naive_weighted_posterior(&times, &y, &theta, &psi, &grid)?;
    let sd = post.std_dev();
    Ok(Fig2Data {
        grid,
        mean: post.mean,
        sd,
        max_abs_y: y.amax(),
        prior_sd: (theta.signal_variance() * psi.envelope_variance()).sqrt(),
    })
}

/// Curve and sample data for the fitted generative distribution.
#[derive(Debug, Clone)]
pub struct Fig4Data {
    pub grid: Vec<f64>,
    pub mean: DVector<f64>,
    pub sd: DVector<f64>,
    pub samples: DMatrix<f64>,
}

pub fn run_fig4(master: RngSeed) -> Result<Fig4Data> {
    let out = synth_dataset(&default_synth(master.derive(5000)))?;
    let fit = fit_two_stage(&out.train, 2, 100, 0.1, master.derive(5001), None)?;
    let gamma = build_gamma(&out.train, &fit.theta, &fit.psi, 10, 50)?;
    let samples =
        pwgp::generator::sample_trajectories(&gamma, 3, false, master.derive(5002))?;
    Ok(Fig4Data {
        grid: gamma.grid.clone(),
        mean: gamma.mean.clone(),
        sd: gamma.std_dev(),
        samples,
    })
}

pub fn run_experiment2d(master: RngSeed) -> Result<LmcResult> {
    let cfg = SynthConfig {
        base_signal: dataset::BaseSignal::DualSine,
        ..default_synth(master.derive(6000))
    };
    let out = synth_dataset(&cfg)?;
    let lmc_cfg = LmcFitConfig {
        batch_size: 2,
        steps: 100,
        lr: 0.1,
        seed: master.derive(6001),
        gen_repetitions: 6,
        samples_per_rep: 40,
        sample_count: 3,
    };
    fit_and_sample_2d(&out.train, &lmc_cfg)
}

fn fmt(v: f64) -> String {
    dataset::format_float(v)
}

pub fn write_trend_csv(path: &Path, key_name: &str, rows: &[TrendRow]) -> Result<()> {
    let mut text = format!(
        "{key_name},mse_mean,mse_sd,l_theta,l_psi,sigma2_theta,sigma2_psi,sigma2_f,sigma2_gamma\n"
    );
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            fmt(r.key),
            fmt(r.mse_mean),
            fmt(r.mse_sd),
            fmt(r.l_theta),
            fmt(r.l_psi),
            fmt(r.sigma2_theta),
            fmt(r.sigma2_psi),
            fmt(r.sigma2_f),
            fmt(r.sigma2_gamma),
        ));
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_curve_csv(path: &Path, grid: &[f64], columns: &[(&str, &DVector<f64>)]) -> Result<()> {
    let mut text = String::from("t");
    for (name, _) in columns {
        text.push(',');
        text.push_str(name);
    }
    text.push('\n');
    for (j, &t) in grid.iter().enumerate() {
        text.push_str(&fmt(t));
        for (_, col) in columns {
            text.push(',');
            text.push_str(&fmt(col[j]));
        }
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn cmd_experiment(args: &ExperimentArgs) -> Result<()> {
    ensure_out_dir(&args.out, args.create)?;
    let master = RngSeed(args.seed);
    match args.which {
        ExperimentKind::Table1 => {
            let rows = run_table1(master)?;
            write_trend_csv(&args.out.join("table1.csv"), "batch_size", &rows)?;
        }
        ExperimentKind::Table2 => {
            let rows = run_table2(master)?;
            write_trend_csv(&args.out.join("table2.csv"), "output_noise", &rows)?;
        }
        ExperimentKind::Table3 => {
            let rows = run_table3(master)?;
            write_trend_csv(&args.out.join("table3.csv"), "batch_size", &rows)?;
        }
        ExperimentKind::Fig2 => {
            let data = run_fig2(master)?;
            write_curve_csv(
                &args.out.join("fig2_curve.csv"),
                &data.grid,
                &[("mean", &data.mean), ("sd", &data.sd)],
            )?;
            let meta = format!(
                "{{\n  \"max_abs_y\": {},\n  \"prior_sd\": {}\n}}\n",
                fmt(data.max_abs_y),
                fmt(data.prior_sd)
            );
            fs::write(args.out.join("fig2_meta.json"), meta)?;
        }
        ExperimentKind::Fig4 => {
            let data = run_fig4(master)?;
            write_curve_csv(
                &args.out.join("fig4_curve.csv"),
                &data.grid,
                &[("mean", &data.mean), ("sd", &data.sd)],
            )?;
            dataset::write_trajectories(
                &args.out.join("fig4_samples.csv"),
                &data.grid,
                1.0,
                &data.samples,
            )?;
        }
        ExperimentKind::Experiment2d => {
            let result = run_experiment2d(master)?;
            // Channel-major joint samples flattened into per-channel columns.
            let n = result.time_grid.len();
            let mut text = String::from("t");
            for s in 0..result.samples.nrows() {
                for c in 0..result.output_dim() {
                    text.push_str(&format!(",sample_{}_y_{}", s + 1, c + 1));
                }
            }
            text.push('\n');
            for j in 0..n {
                text.push_str(&fmt(result.time_grid[j]));
                for s in 0..result.samples.nrows() {
                    for c in 0..result.output_dim() {
                        text.push(',');
                        text.push_str(&fmt(result.samples[(s, c * n + j)]));
                    }
                }
                text.push('\n');
            }
            fs::write(args.out.join("experiment2d_samples.csv"), text)?;

            let mixing = &result.coreg.mixing;
            let mut params = String::from("{\n  \"mixing\": [");
            for i in 0..mixing.nrows() {
                if i > 0 {
                    params.push_str(", ");
                }
                params.push('[');
                for q in 0..mixing.ncols() {
                    if q > 0 {
                        params.push_str(", ");
                    }
                    params.push_str(&fmt(mixing[(i, q)]));
                }
                params.push(']');
            }
            params.push_str("],\n  \"latent_length_scales\": [");
            for (q, latent) in result.coreg.latents.iter().enumerate() {
                if q > 0 {
                    params.push_str(", ");
                }
                params.push_str(&fmt(latent.length_scale()));
            }
            params.push_str(&format!(
                "],\n  \"noise_variance\": {},\n  \"envelope_length_scale\": {},\n  \"envelope_variance\": {},\n  \"output_noise\": {}\n}}\n",
                fmt(result.coreg.noise_variance()),
                fmt(result.psi.envelope_length_scale()),
                fmt(result.psi.envelope_variance()),
                fmt(result.psi.output_noise()),
            ));
            fs::write(args.out.join("experiment2d_model.json"), params)?;
        }
    }
    Ok(())
}

/// Median of a small sample, used by the acceptance suite's trend checks.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[sorted.len() / 2]
}
