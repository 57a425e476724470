//! On-disk run formats.
//!
//! Columnar: a directory per run holding `meta.json` and `values.f64`, the
//! latter little-endian IEEE-754 doubles, channel-major (all steps of
//! channel 0, then channel 1, ...). CSV: one row per time step with a
//! `time_s` column and one `s<id>` column per physical sensor, plus a JSON
//! sidecar `<stem>.json` holding the run metadata.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{RawRun, RunMeta};
use crate::error::{Error, Result};
use crate::layout::SensorLayout;

pub const RUN_FORMAT: &str = "damage-ig-run";
pub const RUN_FORMAT_VERSION: u32 = 1;
pub const META_FILE: &str = "meta.json";
pub const VALUES_FILE: &str = "values.f64";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub format: String,
    pub version: u32,
    #[serde(flatten)]
    pub meta: RunMeta,
    pub channels: usize,
    pub steps: usize,
    pub sensor_ids: Vec<usize>,
}

pub fn run_dir_name(meta: &RunMeta) -> String {
    format!(
        "ts{}_class{}_run{}",
        meta.test_series, meta.damage_class, meta.run_index
    )
}

pub fn write_run_dir(dir: &Path, run: &RawRun, layout: &SensorLayout) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let header = RunHeader {
        format: RUN_FORMAT.into(),
        version: RUN_FORMAT_VERSION,
        meta: run.meta.clone(),
        channels: run.channels(),
        steps: run.steps(),
        sensor_ids: layout.channel_ids(),
    };
    let meta_path = dir.join(META_FILE);
    fs::write(&meta_path, serde_json::to_vec_pretty(&header)?)
        .map_err(|e| Error::io(&meta_path, e))?;
    let mut bytes = Vec::with_capacity(run.values().len() * 8);
    for v in run.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let values_path = dir.join(VALUES_FILE);
    fs::write(&values_path, bytes).map_err(|e| Error::io(&values_path, e))
}

pub fn read_run_dir(dir: &Path, layout: &SensorLayout) -> Result<RawRun> {
    let meta_path = dir.join(META_FILE);
    let text = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let header: RunHeader = serde_json::from_slice(&text)
        .map_err(|e| Error::Data(format!("{}: {e}", meta_path.display())))?;
    if header.format != RUN_FORMAT || header.version != RUN_FORMAT_VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported format {} v{}",
            meta_path.display(),
            header.format,
            header.version
        )));
    }
    header.meta.validate()?;
    let expected = layout.channel_ids();
    if let Some(missing) = expected.iter().find(|id| !header.sensor_ids.contains(id)) {
        return Err(Error::Data(format!(
            "{}: missing sensor {missing} ({} channels present)",
            dir.display(),
            header.sensor_ids.len()
        )));
    }
    if header.channels != header.sensor_ids.len() {
        return Err(Error::Data(format!(
            "{}: {} channels but {} sensor ids",
            dir.display(),
            header.channels,
            header.sensor_ids.len()
        )));
    }
    let values_path = dir.join(VALUES_FILE);
    let bytes = fs::read(&values_path).map_err(|e| Error::io(&values_path, e))?;
    if bytes.len() != header.channels * header.steps * 8 {
        return Err(Error::Data(format!(
            "{}: {} bytes, expected {}",
            values_path.display(),
            bytes.len(),
            header.channels * header.steps * 8
        )));
    }
    let all: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
        .collect();
    let mut values = Vec::with_capacity(expected.len() * header.steps);
    for id in &expected {
        let c = header
            .sensor_ids
            .iter()
            .position(|s| s == id)
            .expect("checked above");
        let series = &all[c * header.steps..(c + 1) * header.steps];
        if let Some(t) = series.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "{}: non-finite value at sensor {id}, step {t}",
                values_path.display()
            )));
        }
        values.extend_from_slice(series);
    }
    RawRun::new(header.meta, expected.len(), values)
}

/// Reads every run directory below `root`, sorted by directory name.
pub fn read_dataset(root: &Path, layout: &SensorLayout) -> Result<Vec<RawRun>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.join(META_FILE).is_file())
        .collect();
    if dirs.is_empty() {
        return Err(Error::Data(format!(
            "no runs found under {}",
            root.display()
        )));
    }
    dirs.sort();
    dirs.iter().map(|d| read_run_dir(d, layout)).collect()
}

pub fn write_dataset(root: &Path, runs: &[RawRun], layout: &SensorLayout) -> Result<()> {
    for run in runs {
        write_run_dir(&root.join(run_dir_name(&run.meta)), run, layout)?;
    }
    Ok(())
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn write_run_csv(path: &Path, run: &RawRun, layout: &SensorLayout) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let ids = layout.channel_ids();
    let mut header = vec!["time_s".to_string()];
    header.extend(ids.iter().map(|id| format!("s{id}")));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for t in 0..run.steps() {
        let mut row = vec![format!("{}", t as f64 / run.meta.sample_rate_hz)];
        row.extend((0..run.channels()).map(|c| format!("{}", run.channel(c)[t])));
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let meta_path = sidecar(path);
    fs::write(&meta_path, serde_json::to_vec_pretty(&run.meta)?)
        .map_err(|e| Error::io(&meta_path, e))
}

/// Reads a CSV run; dead-sensor columns are dropped, every working sensor
/// must be present.
pub fn read_run_csv(path: &Path, layout: &SensorLayout) -> Result<RawRun> {
    let meta_path = sidecar(path);
    let meta_text = fs::read(&meta_path)
        .map_err(|_| Error::Data(format!("missing metadata sidecar {}", meta_path.display())))?;
    let meta: RunMeta = serde_json::from_slice(&meta_text)
        .map_err(|e| Error::Data(format!("{}: {e}", meta_path.display())))?;
    meta.validate()?;

    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let mut column_of = Vec::new();
    for id in layout.channel_ids() {
        let name = format!("s{id}");
        let col = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| {
                Error::Data(format!(
                    "{}: missing column for sensor {id}",
                    path.display()
                ))
            })?;
        column_of.push(col);
    }
    let mut series: Vec<Vec<f64>> = vec![Vec::new(); column_of.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        for (c, &col) in column_of.iter().enumerate() {
            let field = record.get(col).unwrap_or("");
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "{}: row {}, sensor {}: cannot parse {field:?}",
                    path.display(),
                    row + 1,
                    headers[col].trim()
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "{}: non-finite value at row {}, sensor {}",
                    path.display(),
                    row + 1,
                    headers[col].trim()
                )));
            }
            series[c].push(v);
        }
    }
    let values: Vec<f64> = series.into_iter().flatten().collect();
    RawRun::new(meta, column_of.len(), values)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocessing::SAMPLE_RATE_HZ;

    fn run() -> RawRun {
        let layout = SensorLayout::default();
        let c = layout.channels();
        let steps = 25;
        let values = (0..c * steps)
            .map(|i| (i as f64 * 0.1234567).sin() / 3.0)
            .collect();
        RawRun::new(
            RunMeta {
                test_series: 3,
                damage_class: 4,
                run_index: 2,
                aoa_deg: 0.0,
                sample_rate_hz: SAMPLE_RATE_HZ,
            },
            c,
            values,
        )
        .unwrap()
    }

    #[test]
    fn columnar_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let layout = SensorLayout::default();
        let r = run();
        write_dataset(dir.path(), std::slice::from_ref(&r), &layout).unwrap();
        let back = read_dataset(dir.path(), &layout).unwrap();
        assert_eq!(back, vec![r]);
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let layout = SensorLayout::default();
        let r = run();
        let path = dir.path().join("run.csv");
        write_run_csv(&path, &r, &layout).unwrap();
        assert_eq!(read_run_csv(&path, &layout).unwrap(), r);
    }

    #[test]
    fn csv_with_missing_sensor_names_it() {
        let dir = tempfile::tempdir().unwrap();
        let layout = SensorLayout::default();
        let path = dir.path().join("run.csv");
        write_run_csv(&path, &run(), &layout).unwrap();
        // drop the column of sensor 17 (column 18 after time_s)
        let text = fs::read_to_string(&path).unwrap();
        let cut: Vec<String> = text
            .lines()
            .map(|l| {
                let mut f: Vec<&str> = l.split(',').collect();
                f.remove(18);
                f.join(",")
            })
            .collect();
        fs::write(&path, cut.join("\n")).unwrap();
        let err = read_run_csv(&path, &layout).unwrap_err();
        assert!(err.to_string().contains("sensor 17"), "{err}");
    }

    #[test]
    fn csv_with_nan_reports_location() {
        let dir = tempfile::tempdir().unwrap();
        let layout = SensorLayout::default();
        let path = dir.path().join("run.csv");
        let mut r = run();
        r.channel_mut(2)[4] = f64::NAN;
        write_run_csv(&path, &r, &layout).unwrap();
        let err = read_run_csv(&path, &layout).unwrap_err().to_string();
        assert!(err.contains("row 5") && err.contains("s2"), "{err}");
    }

    #[test]
    fn csv_dead_sensor_columns_are_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let layout = SensorLayout::default();
        let path = dir.path().join("run.csv");
        let r = run();
        write_run_csv(&path, &r, &layout).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let widened: Vec<String> = text
            .lines()
            .enumerate()
            .map(|(i, l)| {
                if i == 0 {
                    format!("{l},s20")
                } else {
                    format!("{l},99")
                }
            })
            .collect();
        fs::write(&path, widened.join("\n")).unwrap();
        assert_eq!(read_run_csv(&path, &layout).unwrap(), r);
    }

    #[test]
    fn missing_sidecar_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.csv");
        fs::write(&path, "time_s,s0\n0,1\n").unwrap();
        assert!(read_run_csv(&path, &SensorLayout::default()).is_err());
    }
}
