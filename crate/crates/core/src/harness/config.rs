use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineKind;
use crate::error::{Error, Result};
use crate::models::{Architecture, CnnArch, MlpArch};
use crate::netcore::{AdamWConfig, Objective};
use crate::preprocessing::ZScope;

/// Where samples come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    /// Simulate the surrogate campaign in memory.
    Generate,
    /// Read columnar run directories from `data.dir`.
    Dir,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub dir: Option<PathBuf>,
    /// Generator preset name or path to a generator TOML file.
    pub generator: String,
    pub generator_seed: u64,
    pub zscore: ZScope,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Generate,
            dir: None,
            generator: "static-dominant".into(),
            generator_seed: 0,
            zscore: ZScope::Joint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub cnn: CnnArch,
    pub mlp: MlpArch,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::FcnCnn,
            cnn: CnnArch::default(),
            mlp: MlpArch::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub optimizer: AdamWConfig,
    pub label_smoothing: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub plateau_min_delta: f64,
    pub min_learning_rate: f64,
    pub early_stopping_patience: usize,
    /// Rows per inference chunk when evaluating.
    pub eval_chunk: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 150,
            optimizer: AdamWConfig::default(),
            label_smoothing: 0.05,
            plateau_factor: 0.5,
            plateau_patience: 10,
            plateau_min_delta: 1e-4,
            min_learning_rate: 1e-5,
            early_stopping_patience: 12,
            eval_chunk: 256,
        }
    }
}

/// Which split slice a command works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slice {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for Slice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Slice::Train),
            "validation" => Ok(Slice::Validation),
            "test" => Ok(Slice::Test),
            other => Err(Error::Config(format!("unknown slice {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributionConfig {
    pub baseline: BaselineKind,
    pub steps: usize,
    pub objective: Objective,
    pub chunk: usize,
    pub slice: Slice,
    /// Cap on attributed samples; 0 means all.
    pub max_samples: usize,
    /// Full maps written to disk; the rest only contribute channel sums.
    pub max_exported_maps: usize,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        Self {
            baseline: BaselineKind::Tvb,
            steps: 200,
            objective: Objective::Logit,
            chunk: 50,
            slice: Slice::Validation,
            max_samples: 0,
            max_exported_maps: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectraConfig {
    /// `coarse` or `fine`.
    pub preset: String,
    pub sensor_id: usize,
    pub test_series: usize,
    pub damage_class: usize,
    pub run_index: usize,
    pub strouhal: f64,
    pub chord_m: f64,
    /// Candidate frequencies; empty means the Strouhal estimate for the
    /// series' inflow speed.
    pub candidates: Vec<f64>,
    pub threshold_db: f64,
    pub min_frames: usize,
}

impl Default for SpectraConfig {
    fn default() -> Self {
        Self {
            preset: "coarse".into(),
            sensor_id: 39,
            test_series: 8,
            damage_class: 4,
            run_index: 1,
            strouhal: crate::spectra::DEFAULT_STROUHAL,
            chord_m: crate::spectra::DEFAULT_CHORD_M,
            candidates: Vec::new(),
            threshold_db: 6.0,
            min_frames: 3,
        }
    }
}

/// Everything a command needs; serialized into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Model initialization and batch order.
    pub seed: u64,
    /// Validation draw within the training runs.
    pub split_seed: u64,
    pub aoa_deg: f64,
    pub split_index: usize,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub attribution: AttributionConfig,
    pub spectra: SpectraConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            split_seed: 0,
            aoa_deg: 0.0,
            split_index: 1,
            out_dir: PathBuf::from("runs"),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            training: TrainingConfig::default(),
            attribution: AttributionConfig::default(),
            spectra: SpectraConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("experiment config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.aoa_deg != 0.0 && self.aoa_deg != 8.0 {
            return Err(Error::Config(format!(
                "angle of attack {} not in {{0, 8}}",
                self.aoa_deg
            )));
        }
        if !(1..=3).contains(&self.split_index) {
            return Err(Error::Config(format!(
                "split index {} outside 1..=3",
                self.split_index
            )));
        }
        let t = &self.training;
        if t.batch_size == 0 || t.max_epochs == 0 || t.eval_chunk == 0 {
            return Err(Error::Config(
                "batch size, epochs and eval chunk must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&t.label_smoothing) {
            return Err(Error::Config(format!(
                "label smoothing {} outside [0, 1)",
                t.label_smoothing
            )));
        }
        if !(t.plateau_factor > 0.0 && t.plateau_factor < 1.0) {
            return Err(Error::Config(format!(
                "plateau factor {} outside (0, 1)",
                t.plateau_factor
            )));
        }
        if !(t.optimizer.learning_rate >= 0.0) || !(t.min_learning_rate >= 0.0) {
            return Err(Error::Config("learning rates must be non-negative".into()));
        }
        let a = &self.attribution;
        if !(crate::attribution::MIN_STEPS..=crate::attribution::MAX_STEPS).contains(&a.steps)
            || a.chunk == 0
        {
            return Err(Error::Config(format!(
                "attribution steps {} or chunk {} invalid",
                a.steps, a.chunk
            )));
        }
        if self.data.source == DataSource::Dir && self.data.dir.is_none() {
            return Err(Error::Config("data.source = \"dir\" needs data.dir".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(
            ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap(),
            c
        );
        assert_eq!(c.training.batch_size, 32);
        assert_eq!(c.training.max_epochs, 150);
        assert_eq!(c.training.optimizer.learning_rate, 1e-3);
        assert_eq!(c.training.optimizer.weight_decay, 1e-5);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c = ExperimentConfig::from_toml_str("seed = 4\n[training]\nmax_epochs = 3\n").unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.training.max_epochs, 3);
        assert_eq!(c.training.batch_size, 32);
    }

    #[test]
    fn bad_values_are_config_errors() {
        for text in [
            "aoa_deg = 4.0",
            "split_index = 0",
            "[training]\nbatch_size = 0",
            "colour = 1",
            "[attribution]\nsteps = 5",
        ] {
            assert!(
                matches!(ExperimentConfig::from_toml_str(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }
}
