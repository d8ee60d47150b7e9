//! Experiment configuration: JSON on disk, validated before any stage runs.

use crate::data::{self, ColumnSpec, Dataset};
use crate::error::{Error, Result};
use crate::explain::ExplainerSpec;
use crate::model::{ModelKind, TrainConfig};
use crate::stability::MetricConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Where the rows come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// CSV file plus a JSON schema sidecar.
    Csv { path: PathBuf, schema: PathBuf },
    /// Synthetic two-ring dataset.
    Circles {
        #[serde(default = "defaults::circles_n")]
        n: usize,
        #[serde(default = "defaults::data_noise")]
        noise_std: f64,
        #[serde(default = "defaults::circles_factor")]
        factor: f64,
    },
    /// Synthetic pair of Gaussian blobs.
    Blobs {
        #[serde(default = "defaults::blobs_n")]
        n: usize,
        #[serde(default = "defaults::blobs_separation")]
        separation: f64,
        #[serde(default = "defaults::blobs_std")]
        std: f64,
    },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Circles {
            n: defaults::circles_n(),
            noise_std: defaults::data_noise(),
            factor: defaults::circles_factor(),
        }
    }
}

impl DatasetSource {
    pub fn build(&self, seed: u64) -> Result<Dataset> {
        match self {
            DatasetSource::Csv { path, schema } => {
                let specs: Vec<ColumnSpec> = data::load_schema(schema)?;
                data::load_csv(path, &specs)
            }
            DatasetSource::Circles {
                n,
                noise_std,
                factor,
            } => data::make_circles(*n, *noise_std, *factor, seed),
            DatasetSource::Blobs {
                n,
                separation,
                std,
            } => data::make_blobs(*n, *separation, *std, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub kind: ModelKind,
    pub hidden_width: usize,
    /// Load a previously trained artifact instead of training.
    pub load_path: Option<PathBuf>,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            kind: ModelKind::Mlp,
            hidden_width: 100,
            load_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationSettings {
    pub std: f64,
    pub p_flip: f64,
    /// 0 selects the automatic budget of `100·m`.
    pub max_attempts: usize,
}

impl Default for PerturbationSettings {
    fn default() -> Self {
        PerturbationSettings {
            std: 0.05,
            p_flip: 0.03,
            max_attempts: 0,
        }
    }
}

mod defaults {
    pub fn circles_n() -> usize {
        2000
    }
    pub fn data_noise() -> f64 {
        0.05
    }
    pub fn circles_factor() -> f64 {
        0.5
    }
    pub fn blobs_n() -> usize {
        1000
    }
    pub fn blobs_separation() -> f64 {
        4.0
    }
    pub fn blobs_std() -> f64 {
        0.6
    }
    pub fn seed() -> u64 {
        7
    }
    pub fn n_test_points() -> usize {
        100
    }
    pub fn m_perturbations() -> usize {
        50
    }
}

/// Everything one `run` invocation depends on, minus the output directory.
///
/// Output location and worker count are runtime knobs, not experiment
/// identity: records must be byte-identical across both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub dataset: DatasetSource,
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default = "defaults::seed")]
    pub seed: u64,
    #[serde(default = "defaults::n_test_points")]
    pub n_test_points: usize,
    #[serde(default = "defaults::m_perturbations")]
    pub m_perturbations: usize,
    #[serde(default = "ExplainerSpec::default_suite")]
    pub explainers: Vec<ExplainerSpec>,
    #[serde(default)]
    pub metric: MetricConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub perturbation: PerturbationSettings,
    /// Retain per-neighbor ratio vectors in the records.
    #[serde(default)]
    pub keep_per_neighbor: bool,
    /// Dump each accepted neighborhood as CSV (anchor row first).
    #[serde(default)]
    pub dump_neighborhoods: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("cannot parse {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_test_points == 0 {
            return Err(Error::Config("n_test_points must be positive".into()));
        }
        if self.m_perturbations == 0 {
            return Err(Error::Config("m_perturbations must be positive".into()));
        }
        if self.explainers.is_empty() {
            return Err(Error::Config("explainers must not be empty".into()));
        }
        if let DatasetSource::Csv { path, schema } = &self.dataset {
            for (what, p) in [("dataset csv", path), ("schema", schema)] {
                if !p.exists() {
                    return Err(Error::Config(format!(
                        "{what} file {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        if let Some(p) = &self.model.load_path {
            if !p.exists() {
                return Err(Error::Config(format!(
                    "model file {} does not exist",
                    p.display()
                )));
            }
        }
        if self.model.kind == ModelKind::Mlp && self.model.hidden_width == 0 {
            return Err(Error::Config("mlp hidden_width must be positive".into()));
        }
        Ok(())
    }

    /// Stable short hash of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(16);
        for byte in digest.iter().take(8) {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_losslessly() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn defaults_match_headline_setup() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.n_test_points, 100);
        assert_eq!(cfg.m_perturbations, 50);
        assert_eq!(cfg.explainers.len(), 7);
        assert_eq!(cfg.perturbation.std, 0.05);
        assert_eq!(cfg.perturbation.p_flip, 0.03);
        assert_eq!(cfg.train.learning_rate, 2e-3);
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.train.epochs, 100);
        assert_eq!(cfg.model.hidden_width, 100);
    }

    #[test]
    fn unknown_fields_are_config_errors() {
        let err = serde_json::from_str::<ExperimentConfig>("{\"n_test_pts\": 3}");
        assert!(err.is_err());
    }

    #[test]
    fn missing_files_fail_validation() {
        let cfg = ExperimentConfig {
            dataset: DatasetSource::Csv {
                path: "/nonexistent/data.csv".into(),
                schema: "/nonexistent/schema.json".into(),
            },
            ..ExperimentConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.seed = 12345;
        assert_ne!(a.hash(), b.hash());
    }
}
