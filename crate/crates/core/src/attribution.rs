//! Integrated Gradients along the straight path from a baseline to the
//! sample, per-channel aggregation, and population statistics.
//!
//! The path integral is approximated with the midpoint rule: path points
//! `x' + γ_k (x - x')` with `γ_k = (k - 1/2) / L`, `k = 1..=L`.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{make_baseline, BaselineKind};
use crate::error::{Error, Result};
use crate::netcore::{argmax, LayerStack, Mode, Objective};
use crate::tensor::Tensor;

pub const DEFAULT_STEPS: usize = 200;
pub const MIN_STEPS: usize = 20;
pub const MAX_STEPS: usize = 5000;
pub const DEFAULT_CHUNK: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IgConfig {
    pub steps: usize,
    pub objective: Objective,
    /// Target class; `None` uses the model's prediction on the sample.
    pub target: Option<usize>,
    /// Path points per forward/backward batch. Does not affect results.
    pub chunk: usize,
}

impl Default for IgConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            objective: Objective::Logit,
            target: None,
            chunk: DEFAULT_CHUNK,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    /// `[C, T]`.
    pub scores: Tensor,
    pub baseline: BaselineKind,
    pub steps: usize,
    pub target_class: usize,
    pub objective: Objective,
    /// `F(x)` for the target class.
    pub output_at_input: f64,
    /// `F(x')` for the target class.
    pub output_at_baseline: f64,
    /// `|sum IG - (F(x) - F(x'))|`.
    pub completeness_gap: f64,
}

impl AttributionMap {
    pub fn output_difference(&self) -> f64 {
        self.output_at_input - self.output_at_baseline
    }

    /// Gap relative to `|F(x) - F(x')|`.
    pub fn relative_gap(&self) -> f64 {
        self.completeness_gap / self.output_difference().abs()
    }
}

/// Raw path integral for an explicit baseline and any `steps >= 1`.
#[derive(Debug, Clone)]
pub struct PathIntegral {
    pub scores: Tensor,
    pub output_at_input: f64,
    pub output_at_baseline: f64,
    pub completeness_gap: f64,
}

fn objective_at(
    model: &LayerStack,
    x: &Tensor,
    target: usize,
    objective: Objective,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pass = model.forward(&Tensor::stack(&[x])?, Mode::Infer, &mut rng)?;
    let m = pass.logits.shape()[1];
    if target >= m {
        return Err(Error::InvalidArgument(format!(
            "target class {target} outside [0, {m})"
        )));
    }
    Ok(LayerStack::objective_values(&pass, &[target], objective)[0])
}

/// Midpoint Riemann approximation of the path integral; any `steps >= 1`.
pub fn path_integral(
    model: &LayerStack,
    x: &Tensor,
    baseline: &Tensor,
    steps: usize,
    target: usize,
    objective: Objective,
    chunk: usize,
) -> Result<PathIntegral> {
    if steps == 0 {
        return Err(Error::InvalidArgument(
            "path integral needs at least one step".into(),
        ));
    }
    if x.shape() != baseline.shape() {
        return Err(Error::Shape(format!(
            "sample {:?} vs baseline {:?}",
            x.shape(),
            baseline.shape()
        )));
    }
    let delta: Vec<f64> = x
        .data()
        .iter()
        .zip(baseline.data())
        .map(|(a, b)| a - b)
        .collect();
    let mut grad_sum = vec![0.0; x.len()];
    // Infer mode never draws from the generator.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let chunk = chunk.max(1);
    for start in (0..steps).step_by(chunk) {
        let end = (start + chunk).min(steps);
        let n = end - start;
        let mut data = Vec::with_capacity(n * x.len());
        for k in start..end {
            let gamma = (k as f64 + 0.5) / steps as f64;
            data.extend(
                baseline
                    .data()
                    .iter()
                    .zip(&delta)
                    .map(|(b, d)| b + gamma * d),
            );
        }
        let mut shape = vec![n];
        shape.extend_from_slice(x.shape());
        let points = Tensor::new(shape, data)?;
        let pass = model.forward(&points, Mode::Infer, &mut rng)?;
        let grads = model.backward_target(&pass, &vec![target; n], objective, false)?;
        for row in grads.input.data().chunks_exact(x.len()) {
            for (s, g) in grad_sum.iter_mut().zip(row) {
                *s += g;
            }
        }
    }
    let scores: Vec<f64> = grad_sum
        .iter()
        .zip(&delta)
        .map(|(g, d)| d * g / steps as f64)
        .collect();
    let scores = Tensor::new(x.shape().to_vec(), scores)?;
    scores.ensure_finite("attribution scores")?;
    let output_at_input = objective_at(model, x, target, objective)?;
    let output_at_baseline = objective_at(model, baseline, target, objective)?;
    let completeness_gap = (scores.sum() - (output_at_input - output_at_baseline)).abs();
    Ok(PathIntegral {
        scores,
        output_at_input,
        output_at_baseline,
        completeness_gap,
    })
}

/// Predicted class of a single `[C, T]` sample.
pub fn predicted_class(model: &LayerStack, x: &Tensor) -> Result<usize> {
    let probs = model.infer(&Tensor::stack(&[x])?)?;
    Ok(argmax(probs.data()))
}

/// Integrated Gradients of one sample against one of the three baselines.
pub fn integrated_gradients(
    model: &LayerStack,
    x: &Tensor,
    kind: BaselineKind,
    config: &IgConfig,
) -> Result<AttributionMap> {
    if !(MIN_STEPS..=MAX_STEPS).contains(&config.steps) {
        return Err(Error::InvalidArgument(format!(
            "step count {} outside [{MIN_STEPS}, {MAX_STEPS}]",
            config.steps
        )));
    }
    let target = match config.target {
        Some(t) => t,
        None => predicted_class(model, x)?,
    };
    let baseline = make_baseline(x, kind);
    let p = path_integral(
        model,
        x,
        &baseline,
        config.steps,
        target,
        config.objective,
        config.chunk,
    )?;
    Ok(AttributionMap {
        scores: p.scores,
        baseline: kind,
        steps: config.steps,
        target_class: target,
        objective: config.objective,
        output_at_input: p.output_at_input,
        output_at_baseline: p.output_at_baseline,
        completeness_gap: p.completeness_gap,
    })
}

/// Summed attribution per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelAttributionVector {
    pub sample_id: usize,
    pub values: Vec<f64>,
}

pub fn channel_sum(map: &AttributionMap, sample_id: usize) -> ChannelAttributionVector {
    let t = map.scores.shape()[1];
    ChannelAttributionVector {
        sample_id,
        values: map
            .scores
            .data()
            .chunks_exact(t)
            .map(|row| row.iter().sum())
            .collect(),
    }
}

/// Channels ordered by `|c_i|` descending, ties to the lower index.
pub fn top_channels(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .abs()
            .partial_cmp(&values[a].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k.min(values.len()));
    order
}

/// Per-channel distribution summary of a population of vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionStats {
    pub count: usize,
    pub mean: Vec<f64>,
    pub median: Vec<f64>,
    pub q1: Vec<f64>,
    pub q3: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Mean of `|c_i|`.
    pub mean_abs: Vec<f64>,
    /// Raw vectors, one per sample, for external violin plots.
    pub raw: Vec<ChannelAttributionVector>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn population_stats(vectors: &[ChannelAttributionVector]) -> Result<AttributionStats> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::InvalidArgument("statistics of an empty population".into()))?;
    let channels = first.values.len();
    if vectors.iter().any(|v| v.values.len() != channels) {
        return Err(Error::Shape("attribution vectors differ in length".into()));
    }
    let n = vectors.len() as f64;
    let mut stats = AttributionStats {
        count: vectors.len(),
        mean: Vec::with_capacity(channels),
        median: Vec::with_capacity(channels),
        q1: Vec::with_capacity(channels),
        q3: Vec::with_capacity(channels),
        min: Vec::with_capacity(channels),
        max: Vec::with_capacity(channels),
        mean_abs: Vec::with_capacity(channels),
        raw: vectors.to_vec(),
    };
    for c in 0..channels {
        let mut col: Vec<f64> = vectors.iter().map(|v| v.values[c]).collect();
        stats.mean.push(col.iter().sum::<f64>() / n);
        stats
            .mean_abs
            .push(col.iter().map(|v| v.abs()).sum::<f64>() / n);
        col.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        stats.median.push(quantile(&col, 0.5));
        stats.q1.push(quantile(&col, 0.25));
        stats.q3.push(quantile(&col, 0.75));
        stats.min.push(col[0]);
        stats.max.push(col[col.len() - 1]);
    }
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub steps: usize,
    pub completeness_gap: f64,
    /// `max |IG_L - IG_ref|` against the largest step count.
    pub max_abs_diff: f64,
}

pub fn convergence_study(
    model: &LayerStack,
    x: &Tensor,
    kind: BaselineKind,
    steps_list: &[usize],
    objective: Objective,
) -> Result<Vec<ConvergenceRow>> {
    let reference_steps = *steps_list
        .iter()
        .max()
        .ok_or_else(|| Error::InvalidArgument("empty step list".into()))?;
    let target = predicted_class(model, x)?;
    let baseline = make_baseline(x, kind);
    let run = |l| path_integral(model, x, &baseline, l, target, objective, DEFAULT_CHUNK);
    let reference = run(reference_steps)?;
    steps_list
        .iter()
        .map(|&l| {
            let p = if l == reference_steps {
                reference.clone()
            } else {
                run(l)?
            };
            Ok(ConvergenceRow {
                steps: l,
                completeness_gap: p.completeness_gap,
                max_abs_diff: p.scores.max_abs_diff(&reference.scores),
            })
        })
        .collect()
}

#[derive(Serialize)]
struct MapSidecar<'a> {
    baseline: BaselineKind,
    steps: usize,
    target_class: usize,
    objective: Objective,
    output_at_input: f64,
    output_at_baseline: f64,
    completeness_gap: f64,
    sensor_ids: &'a [usize],
}

/// Writes `<stem>.csv` (one row per channel) and `<stem>.json`.
pub fn export_map(
    map: &AttributionMap,
    sensor_ids: &[usize],
    dir: &Path,
    stem: &str,
) -> Result<()> {
    let (c, t) = (map.scores.shape()[0], map.scores.shape()[1]);
    if sensor_ids.len() != c {
        return Err(Error::Shape(format!(
            "{} sensor ids for {c} channels",
            sensor_ids.len()
        )));
    }
    let csv_path = dir.join(format!("{stem}.csv"));
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Data(e.to_string()))?;
    let mut header = vec!["channel".to_string(), "sensor_id".to_string()];
    header.extend((0..t).map(|i| format!("t{i}")));
    w.write_record(&header)
        .map_err(|e| Error::Data(e.to_string()))?;
    for ch in 0..c {
        let mut row = vec![ch.to_string(), sensor_ids[ch].to_string()];
        row.extend(
            map.scores.data()[ch * t..(ch + 1) * t]
                .iter()
                .map(|v| format!("{v}")),
        );
        w.write_record(&row)
            .map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    let side = MapSidecar {
        baseline: map.baseline,
        steps: map.steps,
        target_class: map.target_class,
        objective: map.objective,
        output_at_input: map.output_at_input,
        output_at_baseline: map.output_at_baseline,
        completeness_gap: map.completeness_gap,
        sensor_ids,
    };
    let json_path = dir.join(format!("{stem}.json"));
    fs::write(&json_path, serde_json::to_vec_pretty(&side)?).map_err(|e| Error::io(&json_path, e))
}

/// Writes `<stem>_summary.csv` and `<stem>_raw.csv`.
pub fn export_stats(
    stats: &AttributionStats,
    sensor_ids: &[usize],
    dir: &Path,
    stem: &str,
) -> Result<()> {
    let path = dir.join(format!("{stem}_summary.csv"));
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Data(e.to_string()))?;
    w.write_record([
        "channel",
        "sensor_id",
        "mean",
        "median",
        "q1",
        "q3",
        "min",
        "max",
        "mean_abs",
    ])
    .map_err(|e| Error::Data(e.to_string()))?;
    for (ch, id) in sensor_ids.iter().enumerate() {
        let row = [
            ch.to_string(),
            id.to_string(),
            stats.mean[ch].to_string(),
            stats.median[ch].to_string(),
            stats.q1[ch].to_string(),
            stats.q3[ch].to_string(),
            stats.min[ch].to_string(),
            stats.max[ch].to_string(),
            stats.mean_abs[ch].to_string(),
        ];
        w.write_record(&row)
            .map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join(format!("{stem}_raw.csv"));
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Data(e.to_string()))?;
    let mut header = vec!["sample_id".to_string()];
    header.extend(sensor_ids.iter().map(|id| format!("s{id}")));
    w.write_record(&header)
        .map_err(|e| Error::Data(e.to_string()))?;
    for v in &stats.raw {
        let mut row = vec![v.sample_id.to_string()];
        row.extend(v.values.iter().map(|x| x.to_string()));
        w.write_record(&row)
            .map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{Layer, LayerSpec};

    fn map_of(scores: Tensor) -> AttributionMap {
        AttributionMap {
            scores,
            baseline: BaselineKind::Apb,
            steps: 20,
            target_class: 0,
            objective: Objective::Logit,
            output_at_input: 0.0,
            output_at_baseline: 0.0,
            completeness_gap: 0.0,
        }
    }

    #[test]
    fn channel_sum_cases() {
        let zero = map_of(Tensor::zeros(vec![37, 150]));
        assert!(channel_sum(&zero, 0).values.iter().all(|&v| v == 0.0));

        let mut t = Tensor::zeros(vec![37, 150]);
        t.data_mut()[14 * 150 + 7] = 0.5;
        let c = channel_sum(&map_of(t), 3);
        assert_eq!(c.values[14], 0.5);
        assert_eq!(c.values.iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(c.sample_id, 3);
    }

    #[test]
    fn top_channel_ranking_and_ties() {
        let mut c = vec![0.0; 37];
        c[14] = 2.0;
        c[15] = -1.5;
        c[16] = 1.0;
        assert_eq!(top_channels(&c, 3), vec![14, 15, 16]);
        let flat = vec![-1.0; 37];
        assert_eq!(top_channels(&flat, 4), vec![0, 1, 2, 3]);
        assert_eq!(top_channels(&[1.0, 2.0], 5), vec![1, 0]);
    }

    #[test]
    fn stats_of_small_populations() {
        let a = ChannelAttributionVector {
            sample_id: 0,
            values: vec![1.0, -2.0, 3.0],
        };
        let s = population_stats(std::slice::from_ref(&a)).unwrap();
        assert_eq!(s.mean, a.values);
        assert_eq!(s.median, a.values);
        let b = ChannelAttributionVector {
            sample_id: 1,
            values: vec![3.0, 2.0, -1.0],
        };
        let s = population_stats(&[a, b]).unwrap();
        assert_eq!(s.mean, vec![2.0, 0.0, 1.0]);
        assert_eq!(s.mean_abs, vec![2.0, 2.0, 2.0]);
        assert_eq!(s.q1, vec![1.5, -1.0, 0.0]);
        assert!(population_stats(&[]).is_err());
    }

    fn linear_model(channels: usize, steps: usize) -> (LayerStack, Vec<f64>) {
        // Conv with one filter spanning a single tap is w . x per step; the
        // pool and a unit dense head keep it linear.
        let mut model = LayerStack::from_specs(
            &[channels, steps],
            &[
                LayerSpec::conv1d(1, 1),
                LayerSpec::GlobalAvgPool,
                LayerSpec::dense(1),
            ],
            1,
        )
        .unwrap();
        let w: Vec<f64> = (0..channels).map(|c| (c as f64 * 0.7).sin()).collect();
        if let Layer::Conv1d(conv) = &mut model.layers_mut()[0] {
            conv.weight = w.clone();
            conv.bias = vec![0.3];
        }
        if let Layer::Dense(d) = &mut model.layers_mut()[2] {
            d.weight = vec![steps as f64];
            d.bias = vec![-0.1];
        }
        (model, w)
    }

    #[test]
    fn sample_equal_to_baseline_has_zero_map() {
        let (model, _) = linear_model(3, 5);
        let x = Tensor::zeros(vec![3, 5]);
        let cfg = IgConfig {
            target: Some(0),
            steps: 20,
            ..Default::default()
        };
        let map = integrated_gradients(&model, &x, BaselineKind::Apb, &cfg).unwrap();
        assert!(map.scores.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_count_is_validated() {
        let (model, _) = linear_model(2, 4);
        let x = Tensor::filled(vec![2, 4], 1.0);
        for steps in [19, 5001] {
            let cfg = IgConfig {
                steps,
                target: Some(0),
                ..Default::default()
            };
            assert!(integrated_gradients(&model, &x, BaselineKind::Apb, &cfg).is_err());
        }
    }

    #[test]
    fn linear_model_is_exact_for_one_step() {
        let (model, w) = linear_model(3, 4);
        let x = Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64).cos()).collect()).unwrap();
        let base = make_baseline(&x, BaselineKind::Mvb);
        let p = path_integral(&model, &x, &base, 1, 0, Objective::Logit, 8).unwrap();
        for c in 0..3 {
            for t in 0..4 {
                let i = c * 4 + t;
                let want = w[c] * (x.data()[i] - base.data()[i]);
                assert!((p.scores.data()[i] - want).abs() < 1e-12);
            }
        }
        assert!(p.completeness_gap < 1e-12);
    }

    #[test]
    fn chunk_size_does_not_change_results() {
        let model = LayerStack::from_specs(
            &[2, 8],
            &[
                LayerSpec::conv1d(3, 3),
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::dense(6),
                LayerSpec::Softmax,
            ],
            4,
        )
        .unwrap();
        let x = Tensor::new(
            vec![2, 8],
            (0..16).map(|i| (i as f64 * 0.9).sin()).collect(),
        )
        .unwrap();
        let base = Tensor::zeros(vec![2, 8]);
        let a = path_integral(&model, &x, &base, 37, 2, Objective::Logit, 1).unwrap();
        let b = path_integral(&model, &x, &base, 37, 2, Objective::Logit, 37).unwrap();
        let c = path_integral(&model, &x, &base, 37, 2, Objective::Logit, 10).unwrap();
        assert_eq!(a.scores, b.scores);
        assert_eq!(a.scores, c.scores);
    }

    #[test]
    fn convergence_study_reports_degenerate_step_counts() {
        let model = LayerStack::from_specs(
            &[2, 8],
            &[
                LayerSpec::conv1d(4, 3),
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::dense(6),
                LayerSpec::Softmax,
            ],
            6,
        )
        .unwrap();
        let x = Tensor::new(
            vec![2, 8],
            (0..16).map(|i| (i as f64 * 1.3).cos() * 2.0).collect(),
        )
        .unwrap();
        let rows = convergence_study(
            &model,
            &x,
            BaselineKind::Apb,
            &[1, 20, 400],
            Objective::Probability,
        )
        .unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].max_abs_diff, 0.0);
        assert!(rows[0].completeness_gap.is_finite());
        assert!(rows[2].completeness_gap <= rows[0].completeness_gap);
    }
}
