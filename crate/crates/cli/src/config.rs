//! TOML configuration. Every section and key is optional; unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use salient_core::convnet::{GridSpec, TrainConfig};
use salient_core::pipeline::LrConfig;
use salient_core::signal::{CohortConfig, DatasetFormat, PreprocessParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub data: DataSection,
    pub synth: CohortConfig,
    pub cnn: CnnSection,
    pub saliency: SaliencySection,
    pub kshape: KshapeSection,
    pub lr: LrSection,
    pub seeds: Seeds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// External dataset to preprocess instead of the synthetic cohort.
    pub input: Option<PathBuf>,
    pub format: DatasetFormat,
    pub n_folds: usize,
    pub preprocess: PreprocessParams,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            input: None,
            format: DatasetFormat::Bundle,
            n_folds: 5,
            preprocess: PreprocessParams::default(),
        }
    }
}

/// Explicit network shape for `train-cnn`, bypassing the grid result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelChoice {
    pub filters: usize,
    pub kernel: usize,
    pub deepness: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CnnSection {
    pub filters: Vec<usize>,
    pub kernels: Vec<usize>,
    pub deepness: Vec<usize>,
    pub model: Option<ModelChoice>,
    pub lr0: f64,
    pub decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub min_delta: f64,
    pub projection_iters: usize,
    pub resample: bool,
}

impl Default for CnnSection {
    fn default() -> Self {
        let g = GridSpec::default();
        let t = TrainConfig::default();
        Self {
            filters: g.filters,
            kernels: g.kernels,
            deepness: g.deepness,
            model: None,
            lr0: t.lr0,
            decay: t.decay,
            max_epochs: t.max_epochs,
            patience: t.patience,
            batch_size: t.batch_size,
            min_delta: t.min_delta,
            projection_iters: t.projection_iters,
            resample: t.resample,
        }
    }
}

impl CnnSection {
    pub fn grid(&self) -> GridSpec {
        GridSpec {
            filters: self.filters.clone(),
            kernels: self.kernels.clone(),
            deepness: self.deepness.clone(),
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr0: self.lr0,
            decay: self.decay,
            max_epochs: self.max_epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            seed,
            min_delta: self.min_delta,
            projection_iters: self.projection_iters,
            resample: self.resample,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaliencySection {
    pub roar_fractions: Vec<f64>,
}

impl Default for SaliencySection {
    fn default() -> Self {
        Self {
            roar_fractions: (0..=9).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KshapeSection {
    pub k: usize,
    pub l_seconds: f64,
    pub max_iter: usize,
}

impl Default for KshapeSection {
    fn default() -> Self {
        Self {
            k: 32,
            l_seconds: 2.0,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSection {
    pub lambdas: Vec<f64>,
    pub n_folds: usize,
    pub resample: bool,
    pub gamma: Option<f64>,
    pub importance_repeats: usize,
    pub alpha: f64,
}

impl Default for LrSection {
    fn default() -> Self {
        let l = LrConfig::default();
        Self {
            lambdas: l.lambdas,
            n_folds: l.n_folds,
            resample: l.resample,
            gamma: l.gamma,
            importance_repeats: 10,
            alpha: 0.05,
        }
    }
}

impl LrSection {
    pub fn lr_config(&self, seed: u64) -> LrConfig {
        LrConfig {
            lambdas: self.lambdas.clone(),
            n_folds: self.n_folds,
            resample: self.resample,
            gamma: self.gamma,
            seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub split: u64,
    pub train: u64,
    pub kshape: u64,
    pub lr: u64,
    pub roar: u64,
    pub importance: u64,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new("config", "io", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().trim().to_string();
            match e.span() {
                Some(s) => {
                    let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
                    CliError::new("config", "config", format!("{msg} (line {line})"))
                }
                None => CliError::new("config", "config", msg),
            }
        })
    }

    /// Canonical TOML of the resolved configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = Config::parse("[kshape]\nkk = 3\n").unwrap_err();
        assert!(err.msg.contains("kk"), "{}", err.msg);
        let err = Config::parse("[nope]\n").unwrap_err();
        assert!(err.msg.contains("nope"), "{}", err.msg);
    }

    #[test]
    fn type_mismatch_is_rejected() {
        let err = Config::parse("[kshape]\nk = \"many\"\n").unwrap_err();
        assert_eq!(err.kind, "config");
        assert!(err.msg.contains("line 2"), "{}", err.msg);
    }

    #[test]
    fn round_trip_and_hash() {
        let c = Config::parse("[lr]\nlambdas = [1.0]\n[seeds]\nsplit = 7\n").unwrap();
        assert_eq!(Config::parse(&c.to_toml()).unwrap(), c);
        assert_eq!(c.hash(), c.clone().hash());
        assert_ne!(c.hash(), Config::default().hash());
    }
}
