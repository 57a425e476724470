//! Short-time Fourier analysis and a persistent-band detector used to look
//! for vortex shedding near Strouhal-predicted frequencies.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::SensorLayout;
use crate::preprocessing::RawRun;

pub const DEFAULT_STROUHAL: f64 = 0.2;
/// Chord length used as the characteristic dimension, metres.
pub const DEFAULT_CHORD_M: f64 = 0.16;

/// `St · V / D`. Evaluated as `St · (V / D)`, which is exact for the
/// campaign speeds.
pub fn strouhal_frequency(st: f64, speed: f64, length: f64) -> Result<f64> {
    if !(speed > 0.0) || !(length > 0.0) || !(st >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Strouhal frequency needs St >= 0, V > 0, D > 0 (got {st}, {speed}, {length})"
        )));
    }
    Ok(st * (speed / length))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StftSpec {
    /// Hann window length in samples.
    pub window: usize,
    /// Frame advance in samples.
    pub hop: usize,
    pub sample_rate_hz: f64,
    /// Frequency range kept by [`Spectrogram::band`].
    pub f_min: f64,
    pub f_max: f64,
}

impl StftSpec {
    /// Δt = 1.0 s, Δf = 0.5 Hz over 0.5-50 Hz.
    pub fn coarse() -> Self {
        Self {
            window: 200,
            hop: 100,
            sample_rate_hz: 100.0,
            f_min: 0.5,
            f_max: 50.0,
        }
    }

    /// Δt = 0.5 s, Δf = 1.0 Hz over 10-35 Hz.
    pub fn fine() -> Self {
        Self {
            window: 100,
            hop: 50,
            sample_rate_hz: 100.0,
            f_min: 10.0,
            f_max: 35.0,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "coarse" => Ok(Self::coarse()),
            "fine" => Ok(Self::fine()),
            other => Err(Error::Config(format!(
                "unknown STFT preset {other:?} (coarse or fine)"
            ))),
        }
    }

    pub fn resolution_hz(&self) -> f64 {
        self.sample_rate_hz / self.window as f64
    }

    pub fn frame_step_s(&self) -> f64 {
        self.hop as f64 / self.sample_rate_hz
    }

    pub fn nyquist_hz(&self) -> f64 {
        0.5 * self.sample_rate_hz
    }

    fn validate(&self) -> Result<()> {
        if self.window < 2 || self.hop == 0 || !(self.sample_rate_hz > 0.0) {
            return Err(Error::Config(format!(
                "invalid STFT window {} / hop {}",
                self.window, self.hop
            )));
        }
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max <= self.nyquist_hz()) {
            return Err(Error::Config(format!(
                "STFT range {}-{} Hz invalid for Nyquist {} Hz",
                self.f_min,
                self.f_max,
                self.nyquist_hz()
            )));
        }
        Ok(())
    }
}

fn hann(n: usize) -> Vec<f64> {
    // periodic form, as used for spectral analysis
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// One-sided magnitude spectrogram, scaled by `1 / sum(window)` so a unit
/// sinusoid on a bin centre reads 0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrogram {
    pub spec: StftSpec,
    /// Frame centre times, seconds.
    pub times: Vec<f64>,
    /// Bin frequencies `0, Δf, ..., fs/2`.
    pub freqs: Vec<f64>,
    /// `[frame][bin]`.
    pub magnitude: Vec<Vec<f64>>,
}

impl Spectrogram {
    pub fn bin_of(&self, f: f64) -> usize {
        ((f / self.spec.resolution_hz()).round() as usize).min(self.freqs.len() - 1)
    }

    /// Bin indices inside the spec's frequency range.
    pub fn band(&self) -> std::ops::RangeInclusive<usize> {
        let df = self.spec.resolution_hz();
        let lo = (self.spec.f_min / df).ceil() as usize;
        let hi = ((self.spec.f_max / df).floor() as usize).min(self.freqs.len() - 1);
        lo..=hi
    }

    /// CSV with one row per frame: `time_s,<f>Hz,...` over the band.
    pub fn to_csv(&self) -> String {
        let band = self.band();
        let mut out = String::from("time_s");
        for k in band.clone() {
            out.push_str(&format!(",{}", self.freqs[k]));
        }
        out.push('\n');
        for (t, row) in self.times.iter().zip(&self.magnitude) {
            out.push_str(&t.to_string());
            for k in band.clone() {
                out.push_str(&format!(",{}", row[k]));
            }
            out.push('\n');
        }
        out
    }
}

fn frames(signal: &[f64], spec: &StftSpec) -> Result<Vec<Vec<Complex<f64>>>> {
    spec.validate()?;
    if signal.len() < spec.window {
        return Err(Error::InvalidArgument(format!(
            "signal of {} samples shorter than one {}-sample window",
            signal.len(),
            spec.window
        )));
    }
    let w = hann(spec.window);
    let fft = FftPlanner::new().plan_fft_forward(spec.window);
    let count = (signal.len() - spec.window) / spec.hop + 1;
    let mut out = Vec::with_capacity(count);
    for f in 0..count {
        let start = f * spec.hop;
        let mut buf: Vec<Complex<f64>> = signal[start..start + spec.window]
            .iter()
            .zip(&w)
            .map(|(x, w)| Complex::new(x * w, 0.0))
            .collect();
        fft.process(&mut buf);
        out.push(buf);
    }
    Ok(out)
}

pub fn stft(signal: &[f64], spec: &StftSpec) -> Result<Spectrogram> {
    let raw = frames(signal, spec)?;
    let scale = 1.0 / hann(spec.window).iter().sum::<f64>();
    let bins = spec.window / 2 + 1;
    let df = spec.resolution_hz();
    Ok(Spectrogram {
        spec: spec.clone(),
        times: (0..raw.len())
            .map(|f| {
                (f * spec.hop) as f64 / spec.sample_rate_hz
                    + 0.5 * spec.window as f64 / spec.sample_rate_hz
            })
            .collect(),
        freqs: (0..bins).map(|k| k as f64 * df).collect(),
        magnitude: raw
            .iter()
            .map(|fr| fr[..bins].iter().map(|c| c.norm() * scale).collect())
            .collect(),
    })
}

/// STFT energy over time-domain energy of the covered span. The frame
/// energies are divided by the mean overlap-added squared window, so the
/// ratio is near one for stationary signals.
pub fn energy_ratio(signal: &[f64], spec: &StftSpec) -> Result<f64> {
    let raw = frames(signal, spec)?;
    let w = hann(spec.window);
    let overlap_gain = w.iter().map(|v| v * v).sum::<f64>() / spec.hop as f64;
    let stft_energy: f64 = raw
        .iter()
        .map(|fr| fr.iter().map(|c| c.norm_sqr()).sum::<f64>() / spec.window as f64)
        .sum::<f64>()
        / overlap_gain;
    let span = (raw.len() - 1) * spec.hop + spec.window;
    let time_energy: f64 = signal[..span].iter().map(|x| x * x).sum();
    Ok(stft_energy / time_energy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Required band level over the local noise floor, dB (power).
    pub threshold_db: f64,
    /// Required run of consecutive frames above threshold.
    pub min_frames: usize,
    /// Bins on each side of the candidate bin forming the band.
    pub band_halfwidth_bins: usize,
    /// Half-width of the neighbourhood used for the noise floor, Hz.
    pub floor_halfwidth_hz: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            threshold_db: 6.0,
            min_frames: 3,
            band_halfwidth_bins: 1,
            floor_halfwidth_hz: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandDetection {
    pub frequency_hz: f64,
    pub detected: bool,
    /// Mean band power over all frames.
    pub band_power: f64,
    /// Noise-floor power.
    pub floor_power: f64,
    /// Longest run of consecutive frames above threshold.
    pub longest_run: usize,
}

fn check_candidate(f: f64, spec: &StftSpec) -> Result<()> {
    if !(f > 0.0) || f >= spec.nyquist_hz() {
        return Err(Error::InvalidArgument(format!(
            "candidate {f} Hz outside (0, {}) Hz (Nyquist)",
            spec.nyquist_hz()
        )));
    }
    Ok(())
}

/// Persistent-band test of one frequency: the mean power of the band must
/// exceed the local noise floor by `threshold_db` in enough consecutive
/// frames. The floor is the mean power of the surrounding bins (band and
/// guard bins excluded) over all frames; a per-frame floor fluctuates too
/// much and raises false alarms on white noise.
pub fn detect_band(sg: &Spectrogram, f: f64, cfg: &DetectorConfig) -> Result<BandDetection> {
    check_candidate(f, &sg.spec)?;
    let bins = sg.freqs.len();
    let centre = sg.bin_of(f);
    let hw = cfg.band_halfwidth_bins;
    let band = centre.saturating_sub(hw)..=(centre + hw).min(bins - 1);
    let guard = hw + 2;
    let reach = (cfg.floor_halfwidth_hz / sg.spec.resolution_hz()).ceil() as usize;
    let floor_bins: Vec<usize> = (centre.saturating_sub(reach)..=(centre + reach).min(bins - 1))
        .filter(|&k| k.abs_diff(centre) > guard && k > 0)
        .collect();
    if floor_bins.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no noise-floor bins around {f} Hz"
        )));
    }
    let n = sg.magnitude.len() as f64;
    let power = |row: &[f64], k: usize| row[k] * row[k];
    let floor = sg
        .magnitude
        .iter()
        .map(|row| floor_bins.iter().map(|&k| power(row, k)).sum::<f64>())
        .sum::<f64>()
        / (n * floor_bins.len() as f64);
    let factor = 10f64.powf(cfg.threshold_db / 10.0);
    let (mut run, mut longest, mut band_sum) = (0, 0, 0.0);
    for row in &sg.magnitude {
        let band_power =
            band.clone().map(|k| power(row, k)).sum::<f64>() / band.clone().count() as f64;
        band_sum += band_power;
        if band_power > factor * floor {
            run += 1;
            longest = longest.max(run);
        } else {
            run = 0;
        }
    }
    Ok(BandDetection {
        frequency_hz: f,
        detected: longest >= cfg.min_frames,
        band_power: band_sum / n,
        floor_power: floor,
        longest_run: longest,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub sensor_id: usize,
    pub spec: StftSpec,
    pub detector: DetectorConfig,
    pub candidates: Vec<BandDetection>,
    /// The known excitation band, when given.
    pub excitation: Option<BandDetection>,
}

/// Removes the signal mean so leakage from the static pressure does not
/// swamp the lowest bins.
fn centred(x: &[f64]) -> Vec<f64> {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - m).collect()
}

pub fn sensor_spectrogram(run: &RawRun, sensor_id: usize, spec: &StftSpec) -> Result<Spectrogram> {
    let channel = SensorLayout::default().channel_of_sensor(sensor_id)?;
    if channel >= run.channels() {
        return Err(Error::InvalidArgument(format!(
            "sensor {sensor_id} not present in run"
        )));
    }
    stft(&centred(run.channel(channel)), spec)
}

/// Checks each candidate for a persistent band in one sensor's spectrum.
pub fn shedding_scan(
    run: &RawRun,
    sensor_id: usize,
    candidates: &[f64],
    excitation_hz: Option<f64>,
    spec: &StftSpec,
    cfg: &DetectorConfig,
) -> Result<ScanReport> {
    for &f in candidates.iter().chain(excitation_hz.iter()) {
        check_candidate(f, spec)?;
    }
    let sg = sensor_spectrogram(run, sensor_id, spec)?;
    Ok(ScanReport {
        sensor_id,
        spec: spec.clone(),
        detector: cfg.clone(),
        candidates: candidates
            .iter()
            .map(|&f| detect_band(&sg, f, cfg))
            .collect::<Result<_>>()?,
        excitation: excitation_hz
            .map(|f| detect_band(&sg, f, cfg))
            .transpose()?,
    })
}
