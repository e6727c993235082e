use std::fs;
use std::path::{Path, PathBuf};

use mvfd::dataset::{Dims, GenerateConfig, SplitRatios};
use mvfd::eval::Experiment;
use mvfd::model::ModelConfig;
use mvfd::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Overrides the output directory and nothing else.
pub const OUT_DIR_ENV: &str = "MVFD_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Runs per summary in `ablate`.
    pub n_runs: usize,
    pub out_dir: PathBuf,
    /// Dataset directory read by `train` and `eval`, written by `gen-data`.
    pub data_dir: PathBuf,
    pub bench_trials: usize,
    /// Volume `[depth, height, width]` for the 3-D cost row; defaults to the
    /// main view's extents with the top view's width as the third axis.
    pub volume: Option<[usize; 3]>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n_runs: 10,
            out_dir: PathBuf::from("out"),
            data_dir: PathBuf::from("data"),
            bench_trials: 10,
            volume: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: GenerateConfig,
    pub split: SplitRatios,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl ExperimentConfig {
    /// Strict parse; relative paths are taken from the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::Missing(path.to_path_buf()),
            _ => CliError::io(path, e),
        })?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.eval.out_dir = base.join(&cfg.eval.out_dir);
        cfg.eval.data_dir = base.join(&cfg.eval.data_dir);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |e: mvfd::Error| CliError::Config(e.to_string());
        self.dataset.validate().map_err(bad)?;
        self.split.validate().map_err(bad)?;
        self.train.validate().map_err(bad)?;
        self.train.model_config(&self.model).validate().map_err(bad)?;
        if self.model.main_dims != self.dataset.main_dims || self.model.top_dims != self.dataset.top_dims {
            return Err(CliError::Config(format!(
                "model expects views {:?}/{:?} but the dataset section generates {:?}/{:?}",
                self.model.main_dims, self.model.top_dims, self.dataset.main_dims, self.dataset.top_dims
            )));
        }
        if self.eval.n_runs == 0 || self.eval.bench_trials == 0 {
            return Err(CliError::Config("eval.n_runs and eval.bench_trials must be positive".into()));
        }
        Ok(())
    }

    pub fn experiment(&self) -> Experiment {
        Experiment {
            data: self.dataset.clone(),
            split: self.split,
            model: self.model.clone(),
            train: self.train.clone(),
        }
    }

    pub fn volume(&self) -> [usize; 3] {
        let Dims { height, width } = self.model.main_dims;
        self.eval.volume.unwrap_or([height, width, self.model.top_dims.width])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

/// Hex SHA-256 of the compact JSON encoding of `value`.
pub fn config_hash(value: &impl Serialize) -> String {
    let bytes = serde_json::to_vec(value).expect("config serialises");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default_config() {
        let cfg: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        cfg.validate().unwrap();
        assert_eq!(cfg.dataset.counts.iter().sum::<usize>(), 682);
    }

    #[test]
    fn volume_defaults_to_the_matched_view_extents() {
        assert_eq!(ExperimentConfig::default().volume(), [32, 32, 24]);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.train.seed = 1;
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }

    #[test]
    fn mismatched_model_and_dataset_extents_are_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.model.main_dims = Dims::new(16, 16);
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }
}
