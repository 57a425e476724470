use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

/// Classification quality on one slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub samples: usize,
    pub accuracy: f64,
    /// Mean of per-class recalls over classes present in the slice.
    pub balanced_accuracy: f64,
    /// `None` for classes absent from the slice.
    pub per_class_recall: Vec<Option<f64>>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl Metrics {
    pub fn compute(labels: &[usize], predictions: &[usize], classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("metrics of an empty slice".into()));
        }
        if labels.len() != predictions.len() {
            return Err(Error::Shape(format!(
                "{} labels vs {} predictions",
                labels.len(),
                predictions.len()
            )));
        }
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&l, &p) in labels.iter().zip(predictions) {
            if l >= classes || p >= classes {
                return Err(Error::InvalidArgument(format!(
                    "class {} outside [0, {classes})",
                    l.max(p)
                )));
            }
            confusion[l][p] += 1;
        }
        let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
        let per_class_recall: Vec<Option<f64>> = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row[c] as f64 / n as f64)
            })
            .collect();
        let present: Vec<f64> = per_class_recall.iter().flatten().copied().collect();
        Ok(Self {
            samples: labels.len(),
            accuracy: correct as f64 / labels.len() as f64,
            balanced_accuracy: present.iter().sum::<f64>() / present.len() as f64,
            per_class_recall,
            confusion,
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

/// Machine-readable outcome of one command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    pub config: ExperimentConfig,
    pub metrics: BTreeMap<String, Metrics>,
    /// Command-specific results.
    pub details: serde_json::Value,
    /// sha256 of inputs (dataset, checkpoint) by name.
    pub inputs: BTreeMap<String, String>,
    /// sha256 of written files by file name.
    pub artifacts: BTreeMap<String, String>,
    pub notes: Vec<String>,
    pub wall_clock_s: f64,
}

impl Report {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Self {
            command: command.into(),
            config: config.clone(),
            metrics: BTreeMap::new(),
            details: serde_json::Value::Null,
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            notes: Vec::new(),
            wall_clock_s: 0.0,
        }
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command: {}", self.command);
        let _ = writeln!(
            s,
            "aoa {} deg, split {}, seed {}, architecture {}",
            self.config.aoa_deg,
            self.config.split_index,
            self.config.seed,
            self.config.model.architecture
        );
        for (name, m) in &self.metrics {
            let _ = writeln!(
                s,
                "{name}: balanced accuracy {:.2}% ({} samples)",
                100.0 * m.balanced_accuracy,
                m.samples
            );
            let recalls: Vec<String> = m
                .per_class_recall
                .iter()
                .map(|r| r.map_or("-".into(), |r| format!("{:.1}", 100.0 * r)))
                .collect();
            let _ = writeln!(s, "  per-class recall %: {}", recalls.join(" "));
            for row in &m.confusion {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:5}")).collect();
                let _ = writeln!(s, "  {}", cells.join(""));
            }
        }
        for note in &self.notes {
            let _ = writeln!(s, "note: {note}");
        }
        for (name, hash) in self.inputs.iter().chain(&self.artifacts) {
            let _ = writeln!(s, "sha256 {name}: {hash}");
        }
        let _ = writeln!(s, "wall clock: {:.1} s", self.wall_clock_s);
        s
    }

    /// Writes `<stem>.json` and `<stem>.txt`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join(format!("{stem}.json"));
        fs::write(&json, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(&json, e))?;
        let txt = dir.join(format!("{stem}.txt"));
        fs::write(&txt, self.summary()).map_err(|e| Error::io(&txt, e))
    }
}
