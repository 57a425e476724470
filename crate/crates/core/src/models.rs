//! Builders for the two classifiers: the three-block fully convolutional
//! network and the mean-vector MLP.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::{LayerSpec, LayerStack};

/// Number of structural states (five crack lengths plus added mass).
pub const CLASSES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "fcn-cnn")]
    FcnCnn,
    #[serde(rename = "mean-mlp")]
    MeanMlp,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::FcnCnn => "fcn-cnn",
            Architecture::MeanMlp => "mean-mlp",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fcn-cnn" => Ok(Architecture::FcnCnn),
            "mean-mlp" => Ok(Architecture::MeanMlp),
            other => Err(Error::Config(format!(
                "unknown architecture {other:?} (expected fcn-cnn or mean-mlp)"
            ))),
        }
    }
}

/// Conv block layout `(filters, kernel)`; each block is conv, batchnorm, ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnArch {
    pub blocks: [(usize, usize); 3],
    pub classes: usize,
}

impl Default for CnnArch {
    fn default() -> Self {
        Self {
            blocks: [(128, 8), (256, 5), (128, 3)],
            classes: CLASSES,
        }
    }
}

impl CnnArch {
    /// Same kernels as the default, different filter counts.
    pub fn with_filters(filters: [usize; 3]) -> Self {
        let d = Self::default();
        Self {
            blocks: [
                (filters[0], d.blocks[0].1),
                (filters[1], d.blocks[1].1),
                (filters[2], d.blocks[2].1),
            ],
            ..d
        }
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::with_capacity(12);
        for &(filters, kernel) in &self.blocks {
            specs.push(LayerSpec::conv1d(filters, kernel));
            specs.push(LayerSpec::batchnorm());
            specs.push(LayerSpec::Relu);
        }
        specs.push(LayerSpec::GlobalAvgPool);
        specs.push(LayerSpec::dense(self.classes));
        specs.push(LayerSpec::Softmax);
        specs
    }

    fn max_kernel(&self) -> usize {
        self.blocks.iter().map(|b| b.1).max().unwrap_or(1)
    }
}

/// Dense widths and dropout placement of the mean-vector classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpArch {
    pub hidden: [usize; 3],
    pub classes: usize,
    pub input_dropout: f64,
    pub hidden_dropout: f64,
}

impl Default for MlpArch {
    fn default() -> Self {
        Self {
            hidden: [128, 128, 64],
            classes: CLASSES,
            input_dropout: 0.2,
            hidden_dropout: 0.4,
        }
    }
}

impl MlpArch {
    pub fn specs(&self) -> Vec<LayerSpec> {
        let mut specs = vec![LayerSpec::dropout(self.input_dropout)];
        for (i, &width) in self.hidden.iter().enumerate() {
            specs.push(LayerSpec::dense(width));
            specs.push(LayerSpec::batchnorm());
            specs.push(LayerSpec::Relu);
            if i < 2 {
                specs.push(LayerSpec::dropout(self.hidden_dropout));
            }
        }
        specs.push(LayerSpec::dense(self.classes));
        specs.push(LayerSpec::Softmax);
        specs
    }
}

pub fn build_cnn(input_channels: usize, input_steps: usize, seed: u64) -> Result<LayerStack> {
    build_cnn_with(&CnnArch::default(), input_channels, input_steps, seed)
}

pub fn build_cnn_with(
    arch: &CnnArch,
    input_channels: usize,
    input_steps: usize,
    seed: u64,
) -> Result<LayerStack> {
    if input_channels == 0 || input_steps < arch.max_kernel() {
        return Err(Error::InvalidArgument(format!(
            "fcn-cnn needs >= 1 channel and >= {} steps, got {input_channels}x{input_steps}",
            arch.max_kernel()
        )));
    }
    LayerStack::from_specs(&[input_channels, input_steps], &arch.specs(), seed)
}

pub fn build_mlp(input_dim: usize, seed: u64) -> Result<LayerStack> {
    build_mlp_with(&MlpArch::default(), input_dim, seed)
}

pub fn build_mlp_with(arch: &MlpArch, input_dim: usize, seed: u64) -> Result<LayerStack> {
    if input_dim == 0 {
        return Err(Error::InvalidArgument(
            "mean-mlp needs input dimension >= 1".into(),
        ));
    }
    LayerStack::from_specs(&[input_dim], &arch.specs(), seed)
}
