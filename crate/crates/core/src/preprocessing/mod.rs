//! From raw runs to normalized windowed samples: trimming, windowing,
//! per-sample z-scoring, mean vectors, and the run-based splits.

pub mod io;
mod split;

use serde::{Deserialize, Serialize};

pub use split::{assign_splits, held_out_run, SplitAssignment};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SAMPLE_RATE_HZ: f64 = 100.0;
pub const TRIM_HEAD_S: f64 = 40.0;
pub const TRIM_TAIL_S: f64 = 10.0;
pub const WINDOW_STEPS: usize = 150;
pub const WINDOW_COUNT: usize = 89;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub test_series: usize,
    pub damage_class: usize,
    pub run_index: usize,
    pub aoa_deg: f64,
    pub sample_rate_hz: f64,
}

impl RunMeta {
    pub fn validate(&self) -> Result<()> {
        if !(1..=8).contains(&self.test_series) {
            return Err(Error::Data(format!(
                "test series {} outside 1..=8",
                self.test_series
            )));
        }
        if self.damage_class > 5 {
            return Err(Error::Data(format!(
                "damage class {} outside 0..=5",
                self.damage_class
            )));
        }
        if !(1..=3).contains(&self.run_index) {
            return Err(Error::Data(format!(
                "run index {} outside 1..=3",
                self.run_index
            )));
        }
        if self.sample_rate_hz != SAMPLE_RATE_HZ {
            return Err(Error::Data(format!(
                "sample rate {} Hz, expected {SAMPLE_RATE_HZ} Hz",
                self.sample_rate_hz
            )));
        }
        Ok(())
    }
}

/// One recording: `channels` series of equal length, stored channel-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRun {
    pub meta: RunMeta,
    channels: usize,
    values: Vec<f64>,
}

impl RawRun {
    pub fn new(meta: RunMeta, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || values.len() % channels != 0 {
            return Err(Error::Data(format!(
                "{} values do not split into {channels} channels",
                values.len()
            )));
        }
        Ok(Self {
            meta,
            channels,
            values,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn steps(&self) -> usize {
        self.values.len() / self.channels
    }

    pub fn duration_s(&self) -> f64 {
        self.steps() as f64 / self.meta.sample_rate_hz
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.steps();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.steps();
        &mut self.values[c * n..(c + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Copy of steps `[start, end)` of every channel.
    pub fn slice(&self, start: usize, end: usize) -> RawRun {
        let mut values = Vec::with_capacity(self.channels * (end - start));
        for c in 0..self.channels {
            values.extend_from_slice(&self.channel(c)[start..end]);
        }
        RawRun {
            meta: self.meta.clone(),
            channels: self.channels,
            values,
        }
    }
}

/// Where a sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub test_series: usize,
    pub damage_class: usize,
    pub run_index: usize,
    pub window_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[C, T]`.
    pub values: Tensor,
    pub label: usize,
    pub provenance: Provenance,
}

/// Scope of the per-sample z-score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZScope {
    /// One mean and standard deviation over all `C x T` elements.
    #[default]
    Joint,
    PerChannel,
}

/// Drops the first 40 s and the last 10 s.
pub fn trim_run(run: &RawRun) -> Result<RawRun> {
    let rate = run.meta.sample_rate_hz;
    let head = (TRIM_HEAD_S * rate).round() as usize;
    let tail = (TRIM_TAIL_S * rate).round() as usize;
    let n = run.steps();
    if n <= head + tail {
        return Err(Error::Data(format!(
            "run of {:.2} s is too short to trim {TRIM_HEAD_S} s + {TRIM_TAIL_S} s",
            run.duration_s()
        )));
    }
    Ok(run.slice(head, n - tail))
}

/// Stride between window starts: `floor((N - W) / (count - 1))`.
pub fn window_stride(steps: usize, window_steps: usize, window_count: usize) -> usize {
    if window_count <= 1 {
        0
    } else {
        (steps - window_steps) / (window_count - 1)
    }
}

/// Extracts `window_count` equally strided windows, ordered by start.
pub fn window_run(run: &RawRun, window_steps: usize, window_count: usize) -> Result<Vec<Sample>> {
    let n = run.steps();
    if window_steps == 0 || window_count == 0 {
        return Err(Error::InvalidArgument(
            "window length and count must be >= 1".into(),
        ));
    }
    if n < window_steps {
        return Err(Error::Data(format!(
            "run of {n} steps is shorter than one {window_steps}-step window"
        )));
    }
    let stride = window_stride(n, window_steps, window_count);
    let c = run.channels();
    (0..window_count)
        .map(|w| {
            let start = w * stride;
            let mut data = Vec::with_capacity(c * window_steps);
            for ch in 0..c {
                data.extend_from_slice(&run.channel(ch)[start..start + window_steps]);
            }
            Ok(Sample {
                values: Tensor::new(vec![c, window_steps], data)?,
                label: run.meta.damage_class,
                provenance: Provenance {
                    test_series: run.meta.test_series,
                    damage_class: run.meta.damage_class,
                    run_index: run.meta.run_index,
                    window_index: w,
                },
            })
        })
        .collect()
}

fn standardize(values: &mut [f64]) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= 1e-12 * mean.abs().max(1.0) {
        values.iter_mut().for_each(|v| *v = 0.0);
    } else {
        values.iter_mut().for_each(|v| *v = (*v - mean) / std);
    }
}

/// Z-scores a `[C, T]` matrix; zero-variance groups become zeros.
pub fn zscore(values: &Tensor, scope: ZScope) -> Tensor {
    let mut out = values.clone();
    match scope {
        ZScope::Joint => standardize(out.data_mut()),
        ZScope::PerChannel => {
            let t = *values.shape().last().unwrap_or(&1);
            for row in out.data_mut().chunks_exact_mut(t.max(1)) {
                standardize(row);
            }
        }
    }
    out
}

pub fn zscore_sample(sample: &Sample, scope: ZScope) -> Sample {
    Sample {
        values: zscore(&sample.values, scope),
        ..sample.clone()
    }
}

/// Per-channel temporal means of a `[C, T]` matrix.
pub fn channel_means(values: &Tensor) -> Vec<f64> {
    let t = values.shape()[1];
    values
        .data()
        .chunks_exact(t)
        .map(|row| row.iter().sum::<f64>() / t as f64)
        .collect()
}

/// Feature-wise mean and standard deviation fitted on training vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanVectorStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl MeanVectorStats {
    pub fn fit(vectors: &[Vec<f64>]) -> Result<Self> {
        let first = vectors
            .first()
            .ok_or_else(|| Error::InvalidArgument("no training vectors to fit".into()))?;
        let d = first.len();
        let n = vectors.len() as f64;
        let mut mean = vec![0.0; d];
        for v in vectors {
            if v.len() != d {
                return Err(Error::Shape(format!("mean vector of {} vs {d}", v.len())));
            }
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for v in vectors {
            for i in 0..d {
                var[i] += (v[i] - mean[i]).powi(2);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Ok(Self { mean, std })
    }

    pub fn normalize(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.mean.len() {
            return Err(Error::Shape(format!(
                "mean vector of {} vs statistics of {}",
                v.len(),
                self.mean.len()
            )));
        }
        Ok(v.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| if *s > 0.0 { (x - m) / s } else { 0.0 })
            .collect())
    }
}

/// Channel means of a sample, z-scored with training statistics.
pub fn mean_vector(sample: &Sample, stats: Option<&MeanVectorStats>) -> Result<Vec<f64>> {
    let stats = stats.ok_or_else(|| {
        Error::InvalidArgument("mean-vector normalization needs training statistics".into())
    })?;
    stats.normalize(&channel_means(&sample.values))
}

/// Windowed, normalized samples of many runs.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_shape(&self) -> Option<&[usize]> {
        self.samples.first().map(|s| s.values.shape())
    }

    /// Stacks the selected samples into `[N, C, T]` plus labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let refs: Vec<&Tensor> = indices.iter().map(|&i| &self.samples[i].values).collect();
        let labels = indices.iter().map(|&i| self.samples[i].label).collect();
        Ok((Tensor::stack(&refs)?, labels))
    }

    pub fn map_values(&self, f: impl Fn(&Tensor) -> Tensor) -> Dataset {
        Dataset {
            samples: self
                .samples
                .iter()
                .map(|s| Sample {
                    values: f(&s.values),
                    ..s.clone()
                })
                .collect(),
        }
    }
}

/// Trim, window, and z-score every run.
pub fn build_dataset(runs: &[RawRun], scope: ZScope) -> Result<Dataset> {
    let mut samples = Vec::with_capacity(runs.len() * WINDOW_COUNT);
    for run in runs {
        run.meta.validate()?;
        let trimmed = trim_run(run)?;
        for s in window_run(&trimmed, WINDOW_STEPS, WINDOW_COUNT)? {
            samples.push(zscore_sample(&s, scope));
        }
    }
    Ok(Dataset { samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> RunMeta {
        RunMeta {
            test_series: 1,
            damage_class: 2,
            run_index: 1,
            aoa_deg: 0.0,
            sample_rate_hz: SAMPLE_RATE_HZ,
        }
    }

    fn ramp_run(steps: usize, channels: usize) -> RawRun {
        let values = (0..channels * steps).map(|i| (i % steps) as f64).collect();
        RawRun::new(meta(), channels, values).unwrap()
    }

    #[test]
    fn trim_keeps_interior() {
        let run = ramp_run(15_000, 2);
        let t = trim_run(&run).unwrap();
        assert_eq!(t.steps(), 10_000);
        assert_eq!(t.channel(1)[0], 4000.0);
        assert_eq!(*t.channel(0).last().unwrap(), 13_999.0);

        let t = trim_run(&ramp_run(16_000, 1)).unwrap();
        assert_eq!(t.steps(), 11_000);
        assert_eq!(t.channel(0)[0], 4000.0);

        assert!(trim_run(&ramp_run(5_000, 1)).is_err());
    }

    #[test]
    fn window_layout_on_full_run() {
        assert_eq!(window_stride(10_000, 150, 89), 111);
        let run = ramp_run(10_000, 3);
        let w = window_run(&run, 150, 89).unwrap();
        assert_eq!(w.len(), 89);
        assert_eq!(w[88].values.data()[0], 9768.0);
        assert!(w.iter().all(|s| s.label == 2));
        assert!(w
            .windows(2)
            .all(|p| p[0].provenance.window_index < p[1].provenance.window_index));
    }

    #[test]
    fn window_edge_cases() {
        let run = ramp_run(150, 1);
        let w = window_run(&run, 150, 1).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].values.data()[149], 149.0);

        let run = ramp_run(300, 1);
        let w = window_run(&run, 150, 2).unwrap();
        assert_eq!(w[0].values.data()[0], 0.0);
        assert_eq!(w[1].values.data()[0], 150.0);
        assert_eq!(w[1].values.data()[149], 299.0);

        assert!(window_run(&ramp_run(149, 1), 150, 1).is_err());
    }

    #[test]
    fn zscore_rules() {
        let c = Tensor::filled(vec![2, 5], 3.7);
        assert!(zscore(&c, ZScope::Joint).data().iter().all(|&v| v == 0.0));
        assert!(zscore(&c, ZScope::PerChannel)
            .data()
            .iter()
            .all(|&v| v == 0.0));

        // mean 5, std 2
        let x = Tensor::new(vec![1, 4], vec![3.0, 7.0, 3.0, 7.0]).unwrap();
        let z = zscore(&x, ZScope::Joint);
        assert_eq!(z.data(), &[-1.0, 1.0, -1.0, 1.0]);

        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 6.0, -4.0, 0.5, 9.0]).unwrap();
        for scope in [ZScope::Joint, ZScope::PerChannel] {
            let once = zscore(&x, scope);
            let twice = zscore(&once, scope);
            assert!(once.max_abs_diff(&twice) < 1e-12);
        }
    }

    #[test]
    fn joint_scope_keeps_channel_offsets() {
        let x = Tensor::new(vec![2, 2], vec![1.0, 1.0, 3.0, 3.0]).unwrap();
        assert_eq!(zscore(&x, ZScope::Joint).data(), &[-1.0, -1.0, 1.0, 1.0]);
        assert_eq!(zscore(&x, ZScope::PerChannel).data(), &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn mean_vector_of_constant_sample() {
        let values = Tensor::new(
            vec![3, 4],
            [
                1.0, 1.0, 1.0, 1.0, 5.0, 5.0, 5.0, 5.0, -2.0, -2.0, -2.0, -2.0,
            ]
            .to_vec(),
        )
        .unwrap();
        let sample = Sample {
            values,
            label: 0,
            provenance: Provenance {
                test_series: 1,
                damage_class: 0,
                run_index: 1,
                window_index: 0,
            },
        };
        let stats = MeanVectorStats {
            mean: vec![0.0, 1.0, -1.0],
            std: vec![2.0, 4.0, 0.5],
        };
        assert_eq!(
            mean_vector(&sample, Some(&stats)).unwrap(),
            vec![0.5, 1.0, -2.0]
        );
        assert!(mean_vector(&sample, None).is_err());
    }

    #[test]
    fn fitted_statistics_center_the_training_vectors() {
        let vectors: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![i as f64, (i * i) as f64 * 0.1, -3.0 + (i as f64).sin()])
            .collect();
        let stats = MeanVectorStats::fit(&vectors).unwrap();
        let mut sum = vec![0.0; 3];
        for v in &vectors {
            for (s, x) in sum.iter_mut().zip(stats.normalize(v).unwrap()) {
                *s += x;
            }
        }
        assert!(sum.iter().all(|s| (s / 10.0).abs() < 1e-9));
    }
}
