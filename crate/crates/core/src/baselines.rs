//! Reference inputs that each remove one signal property of a sample.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocessing::{channel_means, Dataset};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BaselineKind {
    /// All zeros: no aerodynamic loading.
    Apb,
    /// Per-channel offset removed, temporal variations kept.
    Tvb,
    /// Every channel held at its temporal mean.
    Mvb,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [BaselineKind::Apb, BaselineKind::Tvb, BaselineKind::Mvb];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Apb => "APB",
            BaselineKind::Tvb => "TVB",
            BaselineKind::Mvb => "MVB",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "apb" => Ok(BaselineKind::Apb),
            "tvb" => Ok(BaselineKind::Tvb),
            "mvb" => Ok(BaselineKind::Mvb),
            other => Err(Error::Config(format!(
                "unknown baseline {other:?} (expected apb, tvb or mvb)"
            ))),
        }
    }
}

/// Baseline of a normalized `[C, T]` sample.
pub fn make_baseline(values: &Tensor, kind: BaselineKind) -> Tensor {
    match kind {
        BaselineKind::Apb => Tensor::zeros(values.shape().to_vec()),
        BaselineKind::Tvb | BaselineKind::Mvb => {
            let t = values.shape()[1];
            let means = channel_means(values);
            let mut out = values.clone();
            for (row, m) in out.data_mut().chunks_exact_mut(t).zip(means) {
                for v in row.iter_mut() {
                    *v = if kind == BaselineKind::Tvb { *v - m } else { m };
                }
            }
            out
        }
    }
}

/// Replaces every sample by its baseline; labels and provenance are kept.
pub fn reduce_dataset(dataset: &Dataset, kind: BaselineKind) -> Result<Dataset> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot reduce an empty dataset".into(),
        ));
    }
    Ok(dataset.map_values(|v| make_baseline(v, kind)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_step_channel() {
        let x = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(
            make_baseline(&x, BaselineKind::Tvb).data(),
            &[-1.0, 0.0, 1.0]
        );
        assert_eq!(
            make_baseline(&x, BaselineKind::Mvb).data(),
            &[2.0, 2.0, 2.0]
        );
        assert_eq!(
            make_baseline(&x, BaselineKind::Apb).data(),
            &[0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn names_parse_case_insensitively() {
        for k in BaselineKind::ALL {
            assert_eq!(k.name().parse::<BaselineKind>().unwrap(), k);
            assert_eq!(k.name().to_lowercase().parse::<BaselineKind>().unwrap(), k);
        }
        assert!("freq".parse::<BaselineKind>().is_err());
        assert_eq!(
            serde_json::to_string(&BaselineKind::Mvb).unwrap(),
            "\"MVB\""
        );
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(reduce_dataset(&Dataset::default(), BaselineKind::Apb).is_err());
    }
}
