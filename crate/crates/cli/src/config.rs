//! Run configuration: one JSON document, overridden field by field by
//! command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tabdiff::denoiser::DenoiserConfig;
use tabdiff::eval::{MissingMechanism, MissingSpec, ProbeKind};
use tabdiff::trainer::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSection {
    pub rows: usize,
    pub seed: u64,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self { rows: 1000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImputeSection {
    pub seed: u64,
    pub draws: usize,
}

impl Default for ImputeSection {
    fn default() -> Self {
        Self { seed: 0, draws: 1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub real: Option<PathBuf>,
    pub synthetic: Option<PathBuf>,
    /// Held-out real rows for the probe comparison.
    pub test: Option<PathBuf>,
    pub probe: ProbeKind,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSection {
    pub specs: Vec<MissingSpec>,
    pub probe: ProbeKind,
    pub draws: usize,
    pub seed: u64,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        let mut specs = Vec::new();
        for mechanism in [MissingMechanism::Mcar, MissingMechanism::Mar, MissingMechanism::Mnar] {
            for rate in [0.10, 0.25, 0.40] {
                specs.push(MissingSpec { mechanism, rate, seed: 0 });
            }
        }
        Self {
            specs,
            probe: ProbeKind::Linear,
            draws: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Input CSV for train, impute and benchmark.
    pub data: Option<PathBuf>,
    /// Schema JSON; inferred from the data when absent.
    pub schema: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Output directory.
    pub out: Option<PathBuf>,
    pub denoiser: DenoiserConfig,
    pub train: TrainConfig,
    pub generate: GenerateSection,
    pub impute: ImputeSection,
    pub evaluate: EvaluateSection,
    pub benchmark: BenchmarkSection,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let core = |e: tabdiff::Error| CliError::Config(e.to_string());
        self.denoiser.validate().map_err(core)?;
        self.train.validate().map_err(core)?;
        for s in &self.benchmark.specs {
            s.validate().map_err(core)?;
        }
        if self.impute.draws == 0 || self.benchmark.draws == 0 {
            return Err(CliError::Config("draws must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.benchmark.specs.len(), 9);
        assert_eq!(c.train.timesteps, 100);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"trian": {}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"epoch": 3}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"denoiser": {"latent": 3}}"#).is_err());
    }

    #[test]
    fn nested_fields_parse() {
        let c = RunConfig::from_json(
            r#"{"train": {"epochs": 3, "mask_mode": "dynamic"},
                "benchmark": {"specs": [{"mechanism": "MNAR", "rate": 0.25}]}}"#,
        )
        .unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.benchmark.specs[0].mechanism, MissingMechanism::Mnar);
        c.validate().unwrap();
        let bad = RunConfig::from_json(r#"{"benchmark": {"specs": [{"mechanism": "MCAR", "rate": 1.5}]}}"#).unwrap();
        assert!(bad.validate().is_err());
    }
}
