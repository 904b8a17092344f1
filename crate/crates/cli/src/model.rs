//! Model file format: all hyperparameters in natural space plus both fit
//! reports, serialized as JSON.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use pwgp::error::{Error, Result};
use pwgp::kernels::{EnvelopeHyperParams, PeriodicHyperParams};
use pwgp::training::{FitReport, FittedModel};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThetaJson {
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub period: f64,
}

impl ThetaJson {
    pub fn from_params(p: &PeriodicHyperParams) -> Self {
        Self {
            length_scale: p.length_scale(),
            signal_variance: p.signal_variance(),
            noise_variance: p.noise_variance(),
            period: p.period(),
        }
    }

    pub fn to_params(&self) -> Result<PeriodicHyperParams> {
        PeriodicHyperParams::new(
            self.length_scale,
            self.signal_variance,
            self.noise_variance,
            self.period,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsiJson {
    pub envelope_length_scale: f64,
    pub envelope_variance: f64,
    pub output_noise: f64,
}

impl PsiJson {
    pub fn from_params(p: &EnvelopeHyperParams) -> Self {
        Self {
            envelope_length_scale: p.envelope_length_scale(),
            envelope_variance: p.envelope_variance(),
            output_noise: p.output_noise(),
        }
    }

    pub fn to_params(&self) -> Result<EnvelopeHyperParams> {
        EnvelopeHyperParams::new(
            self.envelope_length_scale,
            self.envelope_variance,
            self.output_noise,
        )
    }
}

/// On-disk fitted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub seed: u64,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub r_effective: u64,
    /// Stage-1 parameters with rescaled noise (the generative ones).
    pub theta: ThetaJson,
    /// Stage-1 parameters as trained, before rescaling.
    pub theta_trained: ThetaJson,
    pub psi: PsiJson,
    pub stage1_report: FitReport,
    pub stage2_report: FitReport,
}

impl ModelFile {
    pub fn from_fit(
        fit: &FittedModel,
        seed: u64,
        batch_size: usize,
        steps: usize,
        lr: f64,
    ) -> Self {
        Self {
            seed,
            batch_size,
            steps,
            lr,
            r_effective: fit.r_effective,
            theta: ThetaJson::from_params(&fit.theta),
            theta_trained: ThetaJson::from_params(&fit.theta_trained),
            psi: PsiJson::from_params(&fit.psi),
            stage1_report: fit.stage1.clone(),
            stage2_report: fit.stage2.clone(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::ConfigInvalid(format!("model serialization failed: {e}")))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            line: e.line(),
            message: format!("bad model file: {e}"),
        })
    }
}
