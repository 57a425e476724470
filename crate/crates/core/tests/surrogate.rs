use damage_ig::harness::sha256_hex;
use damage_ig::layout::{SensorLayout, LEADING_EDGE_SENSOR};
use damage_ig::preprocessing::{RawRun, RunMeta, SAMPLE_RATE_HZ};
use damage_ig::spectra::{stft, StftSpec};
use damage_ig::surrogate::{
    campaign_plan, ingest_external_run, simulate_campaign_run, simulate_run, GeneratorConfig,
    RunFormat,
};

fn quiet(mut c: GeneratorConfig) -> GeneratorConfig {
    c.pressure.noise_std = 0.0;
    c.pressure.offset_std = 0.0;
    c.pressure.turbulence_std = 0.0;
    c
}

fn meta(series: usize, class: usize) -> RunMeta {
    RunMeta {
        test_series: series,
        damage_class: class,
        run_index: 1,
        aoa_deg: 0.0,
        sample_rate_hz: SAMPLE_RATE_HZ,
    }
}

/// (heave amplitude, |mean shift| of the leading-edge channel) after settling.
fn signature(c: &GeneratorConfig, class: usize) -> (f64, f64) {
    let series = &c.series[2];
    let d = &c.damage[class];
    let p = c.params_for(series, d).unwrap();
    let traj = damage_ig::surrogate::integrate(&p, d, &c.timing, 0.0).unwrap();
    let tail = &traj.heave[(60.0 * SAMPLE_RATE_HZ) as usize..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let amp = tail.iter().map(|y| (y - mean).abs()).fold(0.0, f64::max);
    let run = simulate_run(c, &p, d, meta(series.id, class), 3).unwrap();
    let layout = SensorLayout::default();
    let ch = layout.channel_of_sensor(LEADING_EDGE_SENSOR).unwrap();
    let values = &run.channel(ch)[(60.0 * SAMPLE_RATE_HZ) as usize..];
    let le_mean = values.iter().sum::<f64>() / values.len() as f64;
    let base = c
        .pressure
        .base(&layout, LEADING_EDGE_SENSOR, series.aoa_deg);
    (amp, (le_mean - base).abs())
}

#[test]
fn crack_severity_is_monotone_and_added_mass_is_distinct() {
    let c = quiet(GeneratorConfig::static_dominant());
    let sig: Vec<(f64, f64)> = (0..6).map(|d| signature(&c, d)).collect();
    for d in 0..4 {
        assert!(sig[d + 1].0 > sig[d].0, "heave amplitude {d}: {:?}", sig);
        assert!(sig[d + 1].1 > sig[d].1, "leading-edge shift {d}: {:?}", sig);
    }
    for d in 0..5 {
        let (a, s) = (sig[5].0 - sig[d].0, sig[5].1 - sig[d].1);
        assert!(a.abs() > 1e-6 || s.abs() > 1e-6, "added mass vs class {d}");
    }
}

#[test]
fn dynamics_profile_changes_amplitude_without_static_shift() {
    let c = quiet(GeneratorConfig::dynamics_dominant());
    let sig: Vec<(f64, f64)> = (0..5).map(|d| signature(&c, d)).collect();
    for d in 0..4 {
        assert!(sig[d + 1].0 > sig[d].0);
    }
    let static_shift = signature(&quiet(GeneratorConfig::static_dominant()), 4).1;
    assert!(sig.iter().all(|s| s.1 < 0.01 * static_shift), "{sig:?}");
}

/// Frequency of the largest mean STFT magnitude inside the preset band.
fn spectral_peak(signal: &[f64]) -> f64 {
    let spec = StftSpec::coarse();
    let m = signal.iter().sum::<f64>() / signal.len() as f64;
    let centred: Vec<f64> = signal.iter().map(|v| v - m).collect();
    let sg = stft(&centred, &spec).unwrap();
    let band = sg.band();
    let mut best = (0.0, f64::MIN);
    for k in band {
        let p = sg.magnitude.iter().map(|fr| fr[k] * fr[k]).sum::<f64>();
        if p > best.1 {
            best = (sg.freqs[k], p);
        }
    }
    best.0
}

fn after_settle(run: &RawRun) -> RawRun {
    run.slice((20.0 * SAMPLE_RATE_HZ) as usize, run.steps())
}

#[test]
fn every_channel_oscillates_at_the_excitation_frequency() {
    // Turbulence is a low-frequency process outside the structural response,
    // so it is switched off here; noise and calibration offsets stay on.
    let mut c = GeneratorConfig::static_dominant();
    c.pressure.turbulence_std = 0.0;
    c.timing.duration_s = 80.0;
    let df = StftSpec::coarse().resolution_hz();
    for series in c.series.clone() {
        let run = after_settle(&simulate_campaign_run(&c, &series, 2, 1, 11).unwrap());
        for ch in 0..run.channels() {
            let f = spectral_peak(run.channel(ch));
            assert!(
                (f - series.excitation_hz).abs() <= df + 1e-9,
                "TS{} channel {ch}: {f} Hz",
                series.id
            );
        }
    }
}

#[test]
fn leading_edge_channels_peak_at_the_excitation_frequency_with_turbulence() {
    let mut c = GeneratorConfig::static_dominant();
    c.timing.duration_s = 80.0;
    let layout = SensorLayout::default();
    let df = StftSpec::coarse().resolution_hz();
    for series in c.series.clone() {
        let run = after_settle(&simulate_campaign_run(&c, &series, 0, 2, 5).unwrap());
        for id in 13..=17 {
            let f = spectral_peak(run.channel(layout.channel_of_sensor(id).unwrap()));
            assert!(
                (f - series.excitation_hz).abs() <= df + 1e-9,
                "TS{} sensor {id}: {f} Hz",
                series.id
            );
        }
    }
}

#[test]
fn zero_degree_campaign_is_complete_and_reproducible() {
    let mut c = GeneratorConfig::static_dominant();
    c.timing.duration_s = 50.0;
    let plan = campaign_plan(&c, Some(0.0));
    assert_eq!(plan.len(), 72);
    assert_eq!(campaign_plan(&c, None).len(), 144);
    let digest = |seed: u64| -> Vec<String> {
        plan.iter()
            .map(|(s, class, run)| {
                let r = simulate_campaign_run(&c, s, *class, *run, seed).unwrap();
                assert_eq!(
                    (r.meta.test_series, r.meta.damage_class, r.meta.run_index),
                    (s.id, *class, *run)
                );
                assert_eq!(r.meta.aoa_deg, 0.0);
                assert_eq!(r.channels(), 37);
                assert_eq!(r.steps(), 5000);
                let bytes: Vec<u8> = r.values().iter().flat_map(|v| v.to_le_bytes()).collect();
                sha256_hex(&bytes)
            })
            .collect()
    };
    let first = digest(4);
    assert_eq!(first, digest(4));
    let distinct: std::collections::BTreeSet<&String> = first.iter().collect();
    assert_eq!(distinct.len(), 72);
}

#[test]
fn exported_run_ingests_bit_identically() {
    let mut c = GeneratorConfig::static_dominant();
    c.timing.duration_s = 50.0;
    let run = simulate_campaign_run(&c, &c.series[1], 3, 2, 8).unwrap();
    let layout = SensorLayout::default();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("run.csv");
    damage_ig::preprocessing::io::write_run_csv(&csv, &run, &layout).unwrap();
    assert_eq!(ingest_external_run(&csv, RunFormat::Csv).unwrap(), run);
    let col = dir.path().join("run");
    damage_ig::preprocessing::io::write_run_dir(&col, &run, &layout).unwrap();
    assert_eq!(ingest_external_run(&col, RunFormat::Columnar).unwrap(), run);
}

#[test]
fn shipped_generator_files_match_the_presets() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["static-dominant", "dynamics-dominant"] {
        let file = GeneratorConfig::load(&root.join(format!("{name}.toml"))).unwrap();
        assert_eq!(file, GeneratorConfig::preset(name).unwrap());
    }
}
