use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{make_baseline, BaselineKind};
use crate::error::{Error, Result};
use crate::models::Architecture;
use crate::netcore::LayerStack;
use crate::preprocessing::{channel_means, Dataset, MeanVectorStats};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "damage-ig-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// How a stored sample becomes a model input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InputTransform {
    /// The `[C, T]` window, optionally replaced by one of its baselines.
    Series { baseline: Option<BaselineKind> },
    /// Channel means z-scored with training statistics.
    MeanVector { stats: MeanVectorStats },
}

impl InputTransform {
    pub fn apply(&self, values: &Tensor) -> Result<Tensor> {
        match self {
            InputTransform::Series { baseline: None } => Ok(values.clone()),
            InputTransform::Series {
                baseline: Some(kind),
            } => Ok(make_baseline(values, *kind)),
            InputTransform::MeanVector { stats } => {
                let v = stats.normalize(&channel_means(values))?;
                Tensor::new(vec![v.len()], v)
            }
        }
    }

    pub fn batch(&self, dataset: &Dataset, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let inputs: Vec<Tensor> = indices
            .iter()
            .map(|&i| self.apply(&dataset.samples[i].values))
            .collect::<Result<_>>()?;
        let refs: Vec<&Tensor> = inputs.iter().collect();
        let labels = indices.iter().map(|&i| dataset.samples[i].label).collect();
        Ok((Tensor::stack(&refs)?, labels))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    pub input: InputTransform,
    pub seed: u64,
    pub aoa_deg: f64,
    pub split_index: usize,
    /// Epoch of the stored weights (1-based).
    pub epoch: usize,
    pub validation_loss: f64,
    /// sha256 of the training data.
    pub data_hash: String,
    pub model: LayerStack,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let c: Self = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Data(format!("{}: not a checkpoint: {e}", path.display())))?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "{}: unsupported checkpoint {} v{}",
                path.display(),
                c.format,
                c.version
            )));
        }
        Ok(c)
    }

    /// Input shape produced by the transform for samples of `sample_shape`.
    pub fn check_input(&self, sample_shape: &[usize]) -> Result<()> {
        let expect = match &self.input {
            InputTransform::Series { .. } => sample_shape.to_vec(),
            InputTransform::MeanVector { stats } => {
                if sample_shape.first() != Some(&stats.mean.len()) {
                    return Err(Error::Shape(format!(
                        "checkpoint expects {} channels, data has {:?}",
                        stats.mean.len(),
                        sample_shape
                    )));
                }
                vec![stats.mean.len()]
            }
        };
        if expect != self.model.input_shape() {
            return Err(Error::Shape(format!(
                "{} checkpoint takes inputs {:?}, data gives {:?}",
                self.architecture,
                self.model.input_shape(),
                expect
            )));
        }
        Ok(())
    }
}
