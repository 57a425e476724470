//! End-to-end protocols: data loading, training, evaluation, baseline
//! ablation and retraining, attribution campaigns and spectral scans.

pub mod checkpoint;
pub mod config;
pub mod report;
pub mod train;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::attribution::{
    channel_sum, export_map, export_stats, integrated_gradients, population_stats, top_channels,
    AttributionMap, AttributionStats, ChannelAttributionVector, IgConfig,
};
use crate::baselines::{reduce_dataset, BaselineKind};
use crate::error::{Error, Result};
use crate::layout::SensorLayout;
use crate::models::{build_cnn_with, build_mlp_with, Architecture, CLASSES};
use crate::preprocessing::io::read_dataset;
use crate::preprocessing::{assign_splits, SplitAssignment};
use crate::preprocessing::{build_dataset, channel_means, Dataset, MeanVectorStats};
use crate::spectra::{
    shedding_scan, strouhal_frequency, DetectorConfig, ScanReport, Spectrogram, StftSpec,
};
use crate::surrogate::{campaign_plan, simulate_campaign_run, GeneratorConfig};

pub use checkpoint::{Checkpoint, InputTransform, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{DataSource, ExperimentConfig, Slice};
pub use report::{sha256_file, sha256_hex, Metrics, Report};
pub use train::{fit, history_csv, EpochRecord, Trained};

/// Preset name or path to a generator TOML file.
pub fn generator_config(name_or_path: &str) -> Result<GeneratorConfig> {
    match GeneratorConfig::preset(name_or_path) {
        Ok(c) => Ok(c),
        Err(_) if Path::new(name_or_path).is_file() => {
            GeneratorConfig::load(Path::new(name_or_path))
        }
        Err(e) => Err(e),
    }
}

/// Order-sensitive digest of labels, provenance and values.
pub fn dataset_hash(dataset: &Dataset) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for s in &dataset.samples {
        let p = s.provenance;
        for v in [
            s.label,
            p.test_series,
            p.damage_class,
            p.run_index,
            p.window_index,
        ] {
            h.update((v as u64).to_le_bytes());
        }
        for v in s.values.data() {
            h.update(v.to_le_bytes());
        }
    }
    format!("{:x}", h.finalize())
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: Dataset,
    pub split: SplitAssignment,
    pub runs: usize,
    pub hash: String,
}

impl LoadedData {
    pub fn slice(&self, which: Slice) -> &[usize] {
        match which {
            Slice::Train => &self.split.train,
            Slice::Validation => &self.split.validation,
            Slice::Test => &self.split.test,
        }
    }
}

/// Builds the windowed dataset of one angle of attack and its split.
pub fn load_data(cfg: &ExperimentConfig) -> Result<LoadedData> {
    cfg.validate()?;
    let mut dataset = Dataset::default();
    let mut runs = 0;
    match cfg.data.source {
        DataSource::Generate => {
            let gen = generator_config(&cfg.data.generator)?;
            gen.validate()?;
            for (series, class, run) in campaign_plan(&gen, Some(cfg.aoa_deg)) {
                let raw =
                    simulate_campaign_run(&gen, &series, class, run, cfg.data.generator_seed)?;
                dataset
                    .samples
                    .extend(build_dataset(&[raw], cfg.data.zscore)?.samples);
                runs += 1;
            }
        }
        DataSource::Dir => {
            let dir = cfg.data.dir.as_ref().expect("validated");
            for raw in read_dataset(dir, &SensorLayout::default())? {
                if raw.meta.aoa_deg == cfg.aoa_deg {
                    dataset
                        .samples
                        .extend(build_dataset(&[raw], cfg.data.zscore)?.samples);
                    runs += 1;
                }
            }
        }
    }
    if dataset.is_empty() {
        return Err(Error::Data(format!(
            "no runs at angle of attack {} deg",
            cfg.aoa_deg
        )));
    }
    let split = assign_splits(&dataset, cfg.split_index, cfg.split_seed)?;
    let hash = dataset_hash(&dataset);
    Ok(LoadedData {
        dataset,
        split,
        runs,
        hash,
    })
}

/// Predictions of a checkpoint on selected samples, inference mode.
pub fn predict(
    ckpt: &Checkpoint,
    dataset: &Dataset,
    indices: &[usize],
    chunk: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot evaluate an empty slice".into(),
        ));
    }
    ckpt.check_input(dataset.sample_shape().expect("nonempty"))?;
    let mut preds = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    for part in indices.chunks(chunk.max(1)) {
        let (x, y) = ckpt.input.batch(dataset, part)?;
        preds.extend(ckpt.model.predict(&x, part.len())?);
        labels.extend(y);
    }
    Ok((labels, preds))
}

pub fn evaluate(
    ckpt: &Checkpoint,
    dataset: &Dataset,
    indices: &[usize],
    chunk: usize,
) -> Result<Metrics> {
    let (labels, preds) = predict(ckpt, dataset, indices, chunk)?;
    Metrics::compute(&labels, &preds, CLASSES)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub report: Report,
}

impl TrainOutcome {
    /// Writes `checkpoint.json`, `history.csv` and `<command>.{json,txt}`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let ckpt = dir.join("checkpoint.json");
        fs::write(&ckpt, self.checkpoint.to_bytes()?).map_err(|e| Error::io(&ckpt, e))?;
        let hist = dir.join("history.csv");
        fs::write(&hist, history_csv(&self.history)).map_err(|e| Error::io(&hist, e))?;
        self.report.write(dir, &self.report.command)
    }
}

fn train_with(
    cfg: &ExperimentConfig,
    data: &LoadedData,
    arch: Architecture,
    baseline: Option<BaselineKind>,
    command: &str,
) -> Result<TrainOutcome> {
    let start = Instant::now();
    let shape = data.dataset.sample_shape().expect("nonempty").to_vec();
    let (model, input) = match arch {
        Architecture::FcnCnn => (
            build_cnn_with(&cfg.model.cnn, shape[0], shape[1], cfg.seed)?,
            InputTransform::Series { baseline },
        ),
        Architecture::MeanMlp => {
            // channel means of an MVB-reduced sample are the sample's own means
            if baseline == Some(BaselineKind::Tvb) || baseline == Some(BaselineKind::Apb) {
                return Err(Error::Config(format!(
                    "mean-mlp cannot be trained on {} inputs",
                    baseline.unwrap()
                )));
            }
            let vectors: Vec<Vec<f64>> = data
                .split
                .train
                .iter()
                .map(|&i| channel_means(&data.dataset.samples[i].values))
                .collect();
            (
                build_mlp_with(&cfg.model.mlp, shape[0], cfg.seed)?,
                InputTransform::MeanVector {
                    stats: MeanVectorStats::fit(&vectors)?,
                },
            )
        }
    };
    let trained = fit(
        model,
        &data.dataset,
        &input,
        &data.split.train,
        &data.split.validation,
        &cfg.training,
        cfg.seed,
    )?;
    let checkpoint = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        architecture: arch,
        input,
        seed: cfg.seed,
        aoa_deg: cfg.aoa_deg,
        split_index: cfg.split_index,
        epoch: trained.best_epoch,
        validation_loss: trained.best_validation_loss,
        data_hash: data.hash.clone(),
        model: trained.model,
    };
    let chunk = cfg.training.eval_chunk;
    let mut used = cfg.clone();
    used.model.architecture = arch;
    let mut report = Report::new(command, &used);
    report.metrics.insert(
        "validation".into(),
        evaluate(&checkpoint, &data.dataset, &data.split.validation, chunk)?,
    );
    report.metrics.insert(
        "test".into(),
        evaluate(&checkpoint, &data.dataset, &data.split.test, chunk)?,
    );
    report.details = json!({
        "architecture": arch,
        "input": match &checkpoint.input { InputTransform::Series { baseline } => json!({"series": baseline}), InputTransform::MeanVector { .. } => json!("mean-vector") },
        "parameters": checkpoint.model.parameter_count(),
        "best_epoch": trained.best_epoch,
        "epochs_run": trained.history.len(),
        "stopped_early": trained.stopped_early,
        "best_validation_loss": trained.best_validation_loss,
        "runs": data.runs,
        "samples": {"train": data.split.train.len(), "validation": data.split.validation.len(), "test": data.split.test.len()},
    });
    report.inputs.insert("dataset".into(), data.hash.clone());
    report.artifacts.insert(
        "checkpoint.json".into(),
        sha256_hex(&checkpoint.to_bytes()?),
    );
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(TrainOutcome {
        checkpoint,
        history: trained.history,
        report,
    })
}

/// Trains the configured architecture on raw samples (mean vectors for the
/// MLP).
pub fn train_classifier(cfg: &ExperimentConfig, data: &LoadedData) -> Result<TrainOutcome> {
    train_with(cfg, data, cfg.model.architecture, None, "train")
}

/// TVB: the CNN on baseline-reduced windows. MVB: the MLP on mean vectors.
pub fn retrain_on_baseline(
    cfg: &ExperimentConfig,
    data: &LoadedData,
    kind: BaselineKind,
) -> Result<TrainOutcome> {
    match kind {
        BaselineKind::Apb => Err(Error::Config(
            "training a classifier on zero-only samples is not possible".into(),
        )),
        BaselineKind::Tvb => train_with(cfg, data, Architecture::FcnCnn, Some(kind), "retrain"),
        BaselineKind::Mvb => train_with(cfg, data, Architecture::MeanMlp, Some(kind), "retrain"),
    }
}

/// Slice metrics of a checkpoint.
pub fn evaluate_report(
    ckpt: &Checkpoint,
    cfg: &ExperimentConfig,
    data: &LoadedData,
    which: Slice,
) -> Result<Report> {
    let start = Instant::now();
    let mut report = Report::new("eval", cfg);
    let name = serde_json::to_value(which)?
        .as_str()
        .unwrap_or("slice")
        .to_string();
    report.metrics.insert(
        name,
        evaluate(
            ckpt,
            &data.dataset,
            data.slice(which),
            cfg.training.eval_chunk,
        )?,
    );
    report.inputs.insert("dataset".into(), data.hash.clone());
    report
        .inputs
        .insert("checkpoint".into(), sha256_hex(&ckpt.to_bytes()?));
    if ckpt.data_hash != data.hash {
        report
            .notes
            .push("checkpoint was trained on different data".into());
    }
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Test-slice metrics of an unmodified checkpoint on baseline-reduced inputs.
pub fn ablate_on_baselines(
    ckpt: &Checkpoint,
    cfg: &ExperimentConfig,
    data: &LoadedData,
    kinds: &[BaselineKind],
) -> Result<Report> {
    let start = Instant::now();
    let mut report = Report::new("ablate", cfg);
    let test = Dataset {
        samples: data
            .split
            .test
            .iter()
            .map(|&i| data.dataset.samples[i].clone())
            .collect(),
    };
    let all: Vec<usize> = (0..test.len()).collect();
    report.metrics.insert(
        "raw".into(),
        evaluate(ckpt, &test, &all, cfg.training.eval_chunk)?,
    );
    for &kind in kinds {
        let reduced = reduce_dataset(&test, kind)?;
        report.metrics.insert(
            kind.name().into(),
            evaluate(ckpt, &reduced, &all, cfg.training.eval_chunk)?,
        );
    }
    report.inputs.insert("dataset".into(), data.hash.clone());
    report
        .inputs
        .insert("checkpoint".into(), sha256_hex(&ckpt.to_bytes()?));
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleAttribution {
    pub sample_id: usize,
    pub label: usize,
    pub completeness_gap: f64,
    pub relative_gap: f64,
    /// Top three channels by |c|.
    pub top_channels: Vec<usize>,
    pub top_sensors: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct AttributionOutcome {
    pub report: Report,
    pub samples: Vec<SampleAttribution>,
    pub vectors: Vec<ChannelAttributionVector>,
    pub stats: AttributionStats,
    /// Full maps of the first few attributed samples.
    pub maps: Vec<(usize, AttributionMap)>,
}

impl AttributionOutcome {
    /// Channels ordered by population-mean |c|, descending.
    pub fn ranking(&self) -> Vec<usize> {
        top_channels(&self.stats.mean_abs, self.stats.mean_abs.len())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let ids = SensorLayout::default().channel_ids();
        let stem = self
            .report
            .config
            .attribution
            .baseline
            .name()
            .to_lowercase();
        export_stats(&self.stats, &ids, dir, &format!("{stem}_stats"))?;
        let mut top = String::from(
            "sample_id,label,completeness_gap,relative_gap,top1_sensor,top2_sensor,top3_sensor\n",
        );
        for s in &self.samples {
            let sensors: Vec<String> = s.top_sensors.iter().map(|v| v.to_string()).collect();
            top.push_str(&format!(
                "{},{},{},{},{}\n",
                s.sample_id,
                s.label,
                s.completeness_gap,
                s.relative_gap,
                sensors.join(",")
            ));
        }
        let path = dir.join(format!("{stem}_samples.csv"));
        fs::write(&path, top).map_err(|e| Error::io(&path, e))?;
        for (id, map) in &self.maps {
            export_map(map, &ids, dir, &format!("{stem}_map_{id}"))?;
        }
        self.report.write(dir, "attribute")
    }
}

/// Integrated Gradients for every correctly classified sample of the
/// configured slice.
pub fn attribute_campaign(
    ckpt: &Checkpoint,
    cfg: &ExperimentConfig,
    data: &LoadedData,
) -> Result<AttributionOutcome> {
    let start = Instant::now();
    let a = &cfg.attribution;
    if !matches!(ckpt.input, InputTransform::Series { .. }) {
        return Err(Error::InvalidArgument(
            "attribution needs a time-series checkpoint".into(),
        ));
    }
    let mut indices = data.slice(a.slice).to_vec();
    if a.max_samples > 0 {
        indices.truncate(a.max_samples);
    }
    let (labels, preds) = predict(ckpt, &data.dataset, &indices, cfg.training.eval_chunk)?;
    let layout = SensorLayout::default();
    let ig = IgConfig {
        steps: a.steps,
        objective: a.objective,
        target: None,
        chunk: a.chunk,
    };
    let mut samples = Vec::new();
    let mut vectors = Vec::new();
    let mut maps = Vec::new();
    for ((&i, &label), &pred) in indices.iter().zip(&labels).zip(&preds) {
        if label != pred {
            continue;
        }
        let x = ckpt.input.apply(&data.dataset.samples[i].values)?;
        let map = integrated_gradients(
            &ckpt.model,
            &x,
            a.baseline,
            &IgConfig {
                target: Some(label),
                ..ig
            },
        )?;
        let c = channel_sum(&map, i);
        let top = top_channels(&c.values, 3);
        samples.push(SampleAttribution {
            sample_id: i,
            label,
            completeness_gap: map.completeness_gap,
            relative_gap: map.relative_gap(),
            top_sensors: top
                .iter()
                .map(|&ch| layout.sensor_of_channel(ch))
                .collect::<Result<_>>()?,
            top_channels: top,
        });
        vectors.push(c);
        if maps.len() < a.max_exported_maps {
            maps.push((i, map));
        }
    }
    if vectors.is_empty() {
        return Err(Error::Data(
            "no correctly classified samples to attribute".into(),
        ));
    }
    let stats = population_stats(&vectors)?;
    let ranking = top_channels(&stats.mean_abs, 5);
    let within = samples.iter().filter(|s| s.relative_gap <= 0.01).count();
    let mut report = Report::new("attribute", cfg);
    report.details = json!({
        "baseline": a.baseline,
        "steps": a.steps,
        "objective": a.objective,
        "slice_samples": indices.len(),
        "attributed_samples": samples.len(),
        "misclassified_excluded": indices.len() - samples.len(),
        "completeness_within_1pct": within,
        "top5_mean_abs_sensors": ranking.iter().map(|&c| layout.sensor_of_channel(c)).collect::<Result<Vec<_>>>()?,
    });
    report.notes.push(format!(
        "{} of {} samples correctly classified and attributed",
        samples.len(),
        indices.len()
    ));
    report.inputs.insert("dataset".into(), data.hash.clone());
    report
        .inputs
        .insert("checkpoint".into(), sha256_hex(&ckpt.to_bytes()?));
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(AttributionOutcome {
        report,
        samples,
        vectors,
        stats,
        maps,
    })
}

#[derive(Debug, Clone)]
pub struct SpectraOutcome {
    pub spectrogram: Spectrogram,
    pub scan: ScanReport,
    pub report: Report,
}

impl SpectraOutcome {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let stem = format!("sensor{}", self.scan.sensor_id);
        let csv = dir.join(format!("{stem}_stft.csv"));
        fs::write(&csv, self.spectrogram.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join(format!("{stem}_scan.json"));
        fs::write(&json, serde_json::to_vec_pretty(&self.scan)?)
            .map_err(|e| Error::io(&json, e))?;
        self.report.write(dir, "spectra")
    }
}

/// Shedding scan of one run of the configured data source.
pub fn spectra_scan(cfg: &ExperimentConfig) -> Result<SpectraOutcome> {
    let start = Instant::now();
    let s = &cfg.spectra;
    let gen = generator_config(&cfg.data.generator)?;
    let series = gen.series(s.test_series)?.clone();
    let run = match cfg.data.source {
        DataSource::Generate => simulate_campaign_run(
            &gen,
            &series,
            s.damage_class,
            s.run_index,
            cfg.data.generator_seed,
        )?,
        DataSource::Dir => {
            let dir = cfg.data.dir.as_ref().expect("validated");
            read_dataset(dir, &SensorLayout::default())?
                .into_iter()
                .find(|r| {
                    r.meta.test_series == s.test_series
                        && r.meta.damage_class == s.damage_class
                        && r.meta.run_index == s.run_index
                })
                .ok_or_else(|| {
                    Error::Data(format!(
                        "run ts{} class{} run{} not found in {}",
                        s.test_series,
                        s.damage_class,
                        s.run_index,
                        dir.display()
                    ))
                })?
        }
    };
    let candidates = if s.candidates.is_empty() {
        vec![strouhal_frequency(s.strouhal, series.speed, s.chord_m)?]
    } else {
        s.candidates.clone()
    };
    let spec = StftSpec::preset(&s.preset)?;
    let detector = DetectorConfig {
        threshold_db: s.threshold_db,
        min_frames: s.min_frames,
        ..DetectorConfig::default()
    };
    let scan = shedding_scan(
        &run,
        s.sensor_id,
        &candidates,
        Some(series.excitation_hz),
        &spec,
        &detector,
    )?;
    let spectrogram = crate::spectra::sensor_spectrogram(&run, s.sensor_id, &spec)?;
    let mut report = Report::new("spectra", cfg);
    report.details = serde_json::to_value(&scan)?;
    let mut notes = BTreeMap::new();
    for c in &scan.candidates {
        notes.insert(format!("{} Hz", c.frequency_hz), c.detected);
    }
    report
        .notes
        .push(format!("candidate detections: {notes:?}"));
    if let Some(e) = &scan.excitation {
        report.notes.push(format!(
            "excitation band {} Hz detected: {}",
            e.frequency_hz, e.detected
        ));
    }
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(SpectraOutcome {
        spectrogram,
        scan,
        report,
    })
}
