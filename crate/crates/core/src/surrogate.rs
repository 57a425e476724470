//! Synthetic wind-tunnel campaign from a two-degree-of-freedom section model.
//!
//! Heave `y` and twist `φ` follow linear spring-mass-damper dynamics under a
//! sinusoidal tip force switched on after a settling period:
//!
//! ```text
//! M ÿ + D_y ẏ + k_y(d) K_y (y - Δy(d)) = F(t)
//! I φ̈ + D_φ φ̇ + k_φ(d) K_φ φ         = e F(t)
//! ```
//!
//! The effective angle of attack is `α0 + Δφ(d) + φ + atan(ẏ / V)` and every
//! barometer reads `base + sensitivity · (α_eff - α0) + offset + turbulence +
//! noise`, with a sensitivity profile that peaks at the leading edge and
//! turbulence that grows towards the trailing edge. All coefficients are
//! invented; they only reproduce the qualitative damage effects.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{SensorLayout, LEADING_EDGE_SENSOR};
use crate::preprocessing::{RawRun, RunMeta, SAMPLE_RATE_HZ};

pub const CLASSES: usize = 6;
pub const RUNS_PER_CONFIG: usize = 3;

/// Physical parameters of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionParams {
    /// kg
    pub mass: f64,
    /// kg m^2
    pub inertia: f64,
    /// N/m
    pub heave_stiffness: f64,
    /// N s/m
    pub heave_damping: f64,
    /// N m/rad
    pub twist_stiffness: f64,
    /// N m s/rad
    pub twist_damping: f64,
    /// Lever arm turning the tip force into a torque, m.
    pub torque_arm: f64,
    /// Tip force amplitude, N.
    pub excitation_amplitude: f64,
    pub excitation_hz: f64,
    /// m/s
    pub speed: f64,
    pub aoa_deg: f64,
}

impl SectionParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("inertia", self.inertia),
            ("heave_stiffness", self.heave_stiffness),
            ("heave_damping", self.heave_damping),
            ("twist_stiffness", self.twist_stiffness),
            ("twist_damping", self.twist_damping),
            ("speed", self.speed),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("torque_arm", self.torque_arm),
            ("excitation_amplitude", self.excitation_amplitude),
            ("excitation_hz", self.excitation_hz),
            ("aoa_deg", self.aoa_deg),
        ] {
            if !v.is_finite() || (name != "aoa_deg" && name != "torque_arm" && v < 0.0) {
                return Err(Error::Config(format!("invalid {name}: {v}")));
            }
        }
        Ok(())
    }
}

/// Structural state of one damage class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DamageModel {
    pub class: usize,
    pub heave_stiffness_scale: f64,
    pub twist_stiffness_scale: f64,
    /// Δφ, degrees.
    pub static_twist_deg: f64,
    /// Δy, metres.
    pub static_heave: f64,
    pub added_mass: bool,
}

impl DamageModel {
    pub fn undamaged() -> Self {
        Self {
            class: 0,
            heave_stiffness_scale: 1.0,
            twist_stiffness_scale: 1.0,
            static_twist_deg: 0.0,
            static_heave: 0.0,
            added_mass: false,
        }
    }
}

/// Chordwise pressure pattern and its angle-of-attack sensitivity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureField {
    /// Base pressure coefficient at the leading edge for α0 = 0.
    pub le_base: f64,
    /// Change of the leading-edge base coefficient per degree of α0.
    pub le_base_per_deg: f64,
    /// Width of the leading-edge base bump, in sensor-arc units.
    pub base_width: f64,
    pub upper_base: f64,
    pub lower_base: f64,
    /// Linear recovery of the base coefficient towards the trailing edge.
    pub chord_gradient: f64,
    /// Peak |dCp/dα| per degree, reached at the leading-edge sensor.
    pub sensitivity_peak: f64,
    /// Gaussian width of the sensitivity profile in sensor-arc units.
    pub sensitivity_width: f64,
    /// |dCp/dα| everywhere else.
    pub sensitivity_floor: f64,
    /// Standard deviation of white measurement noise.
    pub noise_std: f64,
    /// Standard deviation of the per-run, per-sensor calibration offset.
    pub offset_std: f64,
    /// Standard deviation of boundary-layer turbulence at the trailing edge;
    /// it scales linearly with chord position and vanishes at the leading edge.
    pub turbulence_std: f64,
    /// Correlation time of the turbulence (first-order Gauss-Markov), seconds.
    pub turbulence_tau_s: f64,
}

impl PressureField {
    pub fn base(&self, layout: &SensorLayout, id: usize, aoa_deg: f64) -> f64 {
        let s = &layout.sensors()[id];
        let bump = (-0.5 * (s.arc / self.base_width).powi(2)).exp();
        let side = if id <= LEADING_EDGE_SENSOR {
            self.upper_base
        } else {
            self.lower_base
        };
        (self.le_base + self.le_base_per_deg * aoa_deg) * bump
            + side * (1.0 - bump)
            + self.chord_gradient * s.chord
    }

    /// dCp/dα in 1/deg; suction side and leading edge negative.
    pub fn sensitivity(&self, layout: &SensorLayout, id: usize) -> f64 {
        let s = &layout.sensors()[id];
        let mag = self.sensitivity_peak * (-0.5 * (s.arc / self.sensitivity_width).powi(2)).exp()
            + self.sensitivity_floor;
        if id <= LEADING_EDGE_SENSOR {
            -mag
        } else {
            mag
        }
    }
}

/// Run-to-run variation drawn per run in a campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    /// Relative standard deviation of both stiffnesses.
    pub stiffness: f64,
    /// Relative standard deviation of the excitation amplitude.
    pub amplitude: f64,
    /// Standard deviation of the static twist, degrees.
    pub static_twist_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSeries {
    pub id: usize,
    pub aoa_deg: f64,
    pub excitation_hz: f64,
    pub speed: f64,
}

/// Section properties shared by every test series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Structure {
    pub mass: f64,
    pub inertia: f64,
    pub heave_stiffness: f64,
    pub heave_damping: f64,
    pub twist_stiffness: f64,
    pub twist_damping: f64,
    pub torque_arm: f64,
    pub excitation_amplitude: f64,
    /// Mass multiplier of the added-mass class.
    pub added_mass_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub duration_s: f64,
    /// Excitation is off before this time.
    pub settle_s: f64,
    /// Integrator steps per output sample.
    pub substeps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub profile: String,
    pub timing: Timing,
    pub structure: Structure,
    pub pressure: PressureField,
    pub jitter: Jitter,
    pub series: Vec<TestSeries>,
    pub damage: Vec<DamageModel>,
}

fn grid() -> Vec<TestSeries> {
    let mut out = Vec::new();
    for (i, aoa) in [0.0, 8.0].into_iter().enumerate() {
        for (j, (f, v)) in [(1.0, 12.0), (1.0, 24.0), (1.9, 12.0), (1.9, 24.0)]
            .into_iter()
            .enumerate()
        {
            out.push(TestSeries {
                id: 4 * i + j + 1,
                aoa_deg: aoa,
                excitation_hz: f,
                speed: v,
            });
        }
    }
    out
}

fn damage_table(
    heave: [f64; 5],
    twist_stiff: [f64; 5],
    twist_deg: [f64; 6],
    heave_off: [f64; 6],
) -> Vec<DamageModel> {
    (0..CLASSES)
        .map(|d| DamageModel {
            class: d,
            heave_stiffness_scale: if d < 5 { heave[d] } else { 1.0 },
            twist_stiffness_scale: if d < 5 { twist_stiff[d] } else { 1.0 },
            static_twist_deg: twist_deg[d],
            static_heave: heave_off[d],
            added_mass: d == 5,
        })
        .collect()
}

impl GeneratorConfig {
    /// Damage mostly shifts the static twist; stiffness loss is mild and
    /// hidden by amplitude jitter.
    pub fn static_dominant() -> Self {
        Self {
            profile: "static-dominant".into(),
            timing: Timing {
                duration_s: 150.0,
                settle_s: 15.0,
                substeps: 10,
            },
            structure: Structure {
                mass: 1.0,
                inertia: 0.01,
                heave_stiffness: 400.0,
                heave_damping: 2.0,
                twist_stiffness: 14.0,
                twist_damping: 0.04,
                torque_arm: 0.005,
                excitation_amplitude: 2.0,
                added_mass_factor: 1.2,
            },
            pressure: PressureField {
                le_base: 0.9,
                le_base_per_deg: -0.35,
                base_width: 1.5,
                upper_base: -0.35,
                lower_base: 0.15,
                chord_gradient: 0.2,
                sensitivity_peak: 0.25,
                sensitivity_width: 1.2,
                sensitivity_floor: 0.03,
                noise_std: 0.005,
                offset_std: 0.01,
                turbulence_std: 0.1,
                turbulence_tau_s: 1.0,
            },
            jitter: Jitter {
                stiffness: 0.01,
                amplitude: 0.10,
                static_twist_deg: 0.04,
            },
            series: grid(),
            damage: damage_table(
                [1.0, 0.99, 0.98, 0.97, 0.96],
                [1.0, 0.98, 0.96, 0.94, 0.92],
                [0.0, 0.4, 0.8, 1.2, 1.6, -0.8],
                [0.0, -0.001, -0.002, -0.003, -0.004, -0.005],
            ),
        }
    }

    /// No static signature; damage changes the oscillation amplitude only.
    pub fn dynamics_dominant() -> Self {
        let mut c = Self::static_dominant();
        c.profile = "dynamics-dominant".into();
        c.jitter = Jitter {
            stiffness: 0.005,
            amplitude: 0.02,
            static_twist_deg: 0.0,
        };
        c.damage = damage_table(
            [1.0, 0.9, 0.8, 0.7, 0.6],
            [1.0, 0.9, 0.8, 0.7, 0.6],
            [0.0; 6],
            [0.0; 6],
        );
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "static-dominant" => Ok(Self::static_dominant()),
            "dynamics-dominant" => Ok(Self::dynamics_dominant()),
            other => Err(Error::Config(format!(
                "unknown generator profile {other:?} (expected static-dominant or dynamics-dominant)"
            ))),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("generator config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.timing;
        if !(t.duration_s >= 50.0) {
            return Err(Error::Config(format!(
                "duration {} s below 50 s",
                t.duration_s
            )));
        }
        if !(t.settle_s >= 0.0 && t.settle_s < t.duration_s) || t.substeps == 0 {
            return Err(Error::Config("invalid settle time or substep count".into()));
        }
        if self.damage.len() != CLASSES {
            return Err(Error::Config(format!(
                "{} damage classes, expected {CLASSES}",
                self.damage.len()
            )));
        }
        for (d, m) in self.damage.iter().enumerate() {
            if m.class != d {
                return Err(Error::Config(format!(
                    "damage entry {d} has class {}",
                    m.class
                )));
            }
            for s in [m.heave_stiffness_scale, m.twist_stiffness_scale] {
                if !(s > 0.0 && s <= 1.0) {
                    return Err(Error::Config(format!(
                        "class {d}: stiffness scale {s} outside (0, 1]"
                    )));
                }
            }
        }
        let d0 = &self.damage[0];
        if *d0 != DamageModel::undamaged() {
            return Err(Error::Config("class 0 must be undamaged".into()));
        }
        for w in self.damage[..5].windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if b.heave_stiffness_scale > a.heave_stiffness_scale
                || b.twist_stiffness_scale > a.twist_stiffness_scale
                || b.static_twist_deg.abs() < a.static_twist_deg.abs()
                || b.static_heave.abs() < a.static_heave.abs()
            {
                return Err(Error::Config(format!(
                    "damage severity not monotone between classes {} and {}",
                    a.class, b.class
                )));
            }
        }
        if self.damage[..5].iter().any(|m| m.added_mass) || !self.damage[5].added_mass {
            return Err(Error::Config("only class 5 carries the added mass".into()));
        }
        if self.series.is_empty() {
            return Err(Error::Config("no test series".into()));
        }
        for s in &self.series {
            if !(1..=8).contains(&s.id) {
                return Err(Error::Config(format!(
                    "test series id {} outside 1..=8",
                    s.id
                )));
            }
            self.params_for(s, &self.damage[0])?;
        }
        let p = &self.pressure;
        if !(p.noise_std >= 0.0
            && p.offset_std >= 0.0
            && p.turbulence_std >= 0.0
            && p.turbulence_tau_s > 0.0
            && p.base_width > 0.0
            && p.sensitivity_width > 0.0)
        {
            return Err(Error::Config(
                "invalid pressure-field widths or noise levels".into(),
            ));
        }
        let j = &self.jitter;
        if !(j.stiffness >= 0.0
            && j.stiffness < 0.5
            && j.amplitude >= 0.0
            && j.static_twist_deg >= 0.0)
        {
            return Err(Error::Config("invalid jitter".into()));
        }
        Ok(())
    }

    /// Section parameters of a test series for a damage state (no jitter).
    pub fn params_for(&self, series: &TestSeries, damage: &DamageModel) -> Result<SectionParams> {
        let s = &self.structure;
        let p = SectionParams {
            mass: if damage.added_mass {
                s.mass * s.added_mass_factor
            } else {
                s.mass
            },
            inertia: s.inertia,
            heave_stiffness: s.heave_stiffness * damage.heave_stiffness_scale,
            heave_damping: s.heave_damping,
            twist_stiffness: s.twist_stiffness * damage.twist_stiffness_scale,
            twist_damping: s.twist_damping,
            torque_arm: s.torque_arm,
            excitation_amplitude: s.excitation_amplitude,
            excitation_hz: series.excitation_hz,
            speed: series.speed,
            aoa_deg: series.aoa_deg,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn series(&self, id: usize) -> Result<&TestSeries> {
        self.series
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::Config(format!("test series {id} not configured")))
    }
}

/// Structural response sampled at the output rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub heave: Vec<f64>,
    pub heave_rate: Vec<f64>,
    pub twist: Vec<f64>,
}

/// Integrates the section model with classical Runge-Kutta, starting at
/// rest in the undeflected position.
pub fn integrate(
    params: &SectionParams,
    damage: &DamageModel,
    timing: &Timing,
    phase: f64,
) -> Result<Trajectory> {
    params.validate()?;
    let steps = (timing.duration_s * SAMPLE_RATE_HZ).round() as usize;
    let dt = 1.0 / (SAMPLE_RATE_HZ * timing.substeps as f64);
    let omega = 2.0 * std::f64::consts::PI * params.excitation_hz;
    let force = |t: f64| {
        if t < timing.settle_s {
            0.0
        } else {
            params.excitation_amplitude * (omega * t + phase).sin()
        }
    };
    let rhs = |t: f64, s: [f64; 4]| -> [f64; 4] {
        let f = force(t);
        let [y, v, phi, w] = s;
        [
            v,
            (f - params.heave_damping * v - params.heave_stiffness * (y - damage.static_heave))
                / params.mass,
            w,
            (params.torque_arm * f - params.twist_damping * w - params.twist_stiffness * phi)
                / params.inertia,
        ]
    };
    let axpy = |s: [f64; 4], k: [f64; 4], h: f64| {
        [
            s[0] + h * k[0],
            s[1] + h * k[1],
            s[2] + h * k[2],
            s[3] + h * k[3],
        ]
    };

    let mut state = [0.0; 4];
    let mut out = Trajectory {
        heave: Vec::with_capacity(steps),
        heave_rate: Vec::with_capacity(steps),
        twist: Vec::with_capacity(steps),
    };
    for n in 0..steps {
        out.heave.push(state[0]);
        out.heave_rate.push(state[1]);
        out.twist.push(state[2]);
        for m in 0..timing.substeps {
            let t = (n * timing.substeps + m) as f64 * dt;
            let k1 = rhs(t, state);
            let k2 = rhs(t + 0.5 * dt, axpy(state, k1, 0.5 * dt));
            let k3 = rhs(t + 0.5 * dt, axpy(state, k2, 0.5 * dt));
            let k4 = rhs(t + dt, axpy(state, k3, dt));
            for i in 0..4 {
                state[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        if state.iter().any(|v| !v.is_finite() || v.abs() > 1e6) {
            return Err(Error::NonFinite(format!(
                "section model integration unstable at t = {:.2} s (dt = {dt} s)",
                (n + 1) as f64 / SAMPLE_RATE_HZ
            )));
        }
    }
    Ok(out)
}

/// Effective angle of attack minus α0, in degrees.
pub fn aoa_deviation_deg(traj: &Trajectory, damage: &DamageModel, speed: f64, n: usize) -> f64 {
    damage.static_twist_deg + (traj.twist[n] + (traj.heave_rate[n] / speed).atan()).to_degrees()
}

/// Simulates one run. `seed` drives the excitation phase, calibration
/// offsets and measurement noise.
pub fn simulate_run(
    config: &GeneratorConfig,
    params: &SectionParams,
    damage: &DamageModel,
    meta: RunMeta,
    seed: u64,
) -> Result<RawRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
    let traj = integrate(params, damage, &config.timing, phase)?;
    let layout = SensorLayout::default();
    let p = &config.pressure;
    let alpha: Vec<f64> = (0..traj.heave.len())
        .map(|n| aoa_deviation_deg(&traj, damage, params.speed, n))
        .collect();
    let noise = Normal::new(0.0, p.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let offset = Normal::new(0.0, p.offset_std).map_err(|e| Error::Config(e.to_string()))?;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let decay = (-1.0 / (SAMPLE_RATE_HZ * p.turbulence_tau_s)).exp();
    let drive = (1.0 - decay * decay).sqrt();
    let mut values = Vec::with_capacity(layout.channels() * alpha.len());
    for id in layout.channel_ids() {
        let base = p.base(&layout, id, params.aoa_deg) + offset.sample(&mut rng);
        let sens = p.sensitivity(&layout, id);
        let turb_std = p.turbulence_std * layout.sensors()[id].chord;
        let mut turb = turb_std * std_normal.sample(&mut rng);
        for a in &alpha {
            values.push(base + sens * a + turb + noise.sample(&mut rng));
            turb = decay * turb + drive * turb_std * std_normal.sample(&mut rng);
        }
    }
    RawRun::new(meta, layout.channels(), values)
}

/// Independent stream per (seed, test series, class, run).
pub fn run_seed(seed: u64, series: usize, class: usize, run: usize) -> u64 {
    let mut z = seed ^ ((series as u64) << 40 | (class as u64) << 20 | run as u64);
    // splitmix64 finalizer
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Simulates one campaign run with its seed-derived parameter jitter.
pub fn simulate_campaign_run(
    config: &GeneratorConfig,
    series: &TestSeries,
    class: usize,
    run: usize,
    seed: u64,
) -> Result<RawRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed(seed, series.id, class, run));
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let j = &config.jitter;
    let mut damage = config.damage[class].clone();
    let mut params = config.params_for(series, &damage)?;
    params.heave_stiffness *= 1.0 + j.stiffness * std.sample(&mut rng);
    params.twist_stiffness *= 1.0 + j.stiffness * std.sample(&mut rng);
    params.excitation_amplitude *= (1.0 + j.amplitude * std.sample(&mut rng)).max(0.0);
    if damage.static_twist_deg != 0.0 {
        damage.static_twist_deg += j.static_twist_deg * std.sample(&mut rng);
    } else {
        let _ = std.sample(&mut rng);
    }
    let meta = RunMeta {
        test_series: series.id,
        damage_class: class,
        run_index: run,
        aoa_deg: series.aoa_deg,
        sample_rate_hz: SAMPLE_RATE_HZ,
    };
    simulate_run(config, &params, &damage, meta, rng.gen())
}

/// Every (test series, class, run) of the grid, optionally restricted to one
/// angle of attack, in series-class-run order.
pub fn campaign_plan(
    config: &GeneratorConfig,
    aoa_deg: Option<f64>,
) -> Vec<(TestSeries, usize, usize)> {
    let mut plan = Vec::new();
    for s in &config.series {
        if aoa_deg.is_some_and(|a| a != s.aoa_deg) {
            continue;
        }
        for class in 0..CLASSES {
            for run in 1..=RUNS_PER_CONFIG {
                plan.push((s.clone(), class, run));
            }
        }
    }
    plan
}

/// Simulates the whole grid (144 runs, or 72 for one angle of attack).
pub fn generate_campaign(
    config: &GeneratorConfig,
    aoa_deg: Option<f64>,
    seed: u64,
) -> Result<Vec<RawRun>> {
    config.validate()?;
    let plan = campaign_plan(config, aoa_deg);
    if plan.is_empty() {
        return Err(Error::Config(format!(
            "no test series at angle of attack {aoa_deg:?}"
        )));
    }
    plan.iter()
        .map(|(s, class, run)| simulate_campaign_run(config, s, *class, *run, seed))
        .collect()
}

/// On-disk layouts accepted by [`ingest_external_run`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunFormat {
    Csv,
    Columnar,
}

pub fn ingest_external_run(path: &Path, format: RunFormat) -> Result<RawRun> {
    let layout = SensorLayout::default();
    match format {
        RunFormat::Csv => crate::preprocessing::io::read_run_csv(path, &layout),
        RunFormat::Columnar => crate::preprocessing::io::read_run_dir(path, &layout),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(mut c: GeneratorConfig) -> GeneratorConfig {
        c.pressure.noise_std = 0.0;
        c.pressure.offset_std = 0.0;
        c.pressure.turbulence_std = 0.0;
        c
    }

    fn meta(class: usize) -> RunMeta {
        RunMeta {
            test_series: 3,
            damage_class: class,
            run_index: 1,
            aoa_deg: 0.0,
            sample_rate_hz: SAMPLE_RATE_HZ,
        }
    }

    #[test]
    fn presets_validate_and_round_trip_through_toml() {
        for c in [
            GeneratorConfig::static_dominant(),
            GeneratorConfig::dynamics_dominant(),
        ] {
            c.validate().unwrap();
            assert_eq!(
                GeneratorConfig::from_toml_str(&c.to_toml_string()).unwrap(),
                c
            );
        }
    }

    #[test]
    fn grid_matches_the_campaign_table() {
        let c = GeneratorConfig::static_dominant();
        let fh: Vec<f64> = c.series.iter().map(|s| s.excitation_hz).collect();
        let v: Vec<f64> = c.series.iter().map(|s| s.speed).collect();
        assert_eq!(fh, [1.0, 1.0, 1.9, 1.9, 1.0, 1.0, 1.9, 1.9]);
        assert_eq!(v, [12.0, 24.0, 12.0, 24.0, 12.0, 24.0, 12.0, 24.0]);
        assert!(c.series[..4].iter().all(|s| s.aoa_deg == 0.0));
        assert!(c.series[4..].iter().all(|s| s.aoa_deg == 8.0));
        assert_eq!(campaign_plan(&c, None).len(), 144);
        assert_eq!(campaign_plan(&c, Some(0.0)).len(), 72);
    }

    #[test]
    fn undamaged_unexcited_noise_free_run_is_constant() {
        let mut c = quiet(GeneratorConfig::static_dominant());
        c.timing.duration_s = 50.0;
        let mut p = c.params_for(&c.series[2], &c.damage[0]).unwrap();
        p.excitation_amplitude = 0.0;
        let run = simulate_run(&c, &p, &c.damage[0], meta(0), 5).unwrap();
        let layout = SensorLayout::default();
        for (ch, id) in layout.channel_ids().into_iter().enumerate() {
            let base = c.pressure.base(&layout, id, 0.0);
            assert!(run.channel(ch).iter().all(|&v| v == base));
        }
    }

    #[test]
    fn decays_to_damaged_equilibrium_without_excitation() {
        let c = GeneratorConfig::static_dominant();
        let d = &c.damage[4];
        let mut p = c.params_for(&c.series[0], d).unwrap();
        p.excitation_amplitude = 0.0;
        let traj = integrate(&p, d, &c.timing, 0.0).unwrap();
        let last = traj.heave.len() - 1;
        assert!((traj.heave[last] - d.static_heave).abs() < 1e-9);
        assert!(traj.heave_rate[last].abs() < 1e-9);
        // starts undeflected, so energy is released on the way
        assert!((traj.heave[0] - d.static_heave).abs() > 1e-3);
    }

    #[test]
    fn unstable_integration_is_reported() {
        let c = GeneratorConfig::static_dominant();
        let mut p = c.params_for(&c.series[0], &c.damage[1]).unwrap();
        p.heave_stiffness = 1e9;
        let timing = Timing {
            substeps: 1,
            ..c.timing.clone()
        };
        let err = integrate(&p, &c.damage[1], &timing, 0.0).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)), "{err}");
    }

    #[test]
    fn torsion_stays_much_smaller_than_heave_induced_aoa() {
        let c = GeneratorConfig::static_dominant();
        let p = c.params_for(&c.series[2], &c.damage[0]).unwrap();
        let traj = integrate(&p, &c.damage[0], &c.timing, 0.0).unwrap();
        let tail = 5000..traj.twist.len();
        let twist = tail
            .clone()
            .map(|n| traj.twist[n].abs())
            .fold(0.0, f64::max);
        let heave = tail
            .map(|n| (traj.heave_rate[n] / p.speed).atan().abs())
            .fold(0.0, f64::max);
        assert!(twist < 0.25 * heave, "{twist} vs {heave}");
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let mut c = GeneratorConfig::static_dominant();
        c.timing.duration_s = 60.0;
        let s = c.series[0].clone();
        assert_eq!(
            simulate_campaign_run(&c, &s, 2, 1, 9).unwrap(),
            simulate_campaign_run(&c, &s, 2, 1, 9).unwrap()
        );
        assert_ne!(
            simulate_campaign_run(&c, &s, 2, 1, 9).unwrap(),
            simulate_campaign_run(&c, &s, 2, 2, 9).unwrap()
        );
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = GeneratorConfig::static_dominant();
        c.damage[3].heave_stiffness_scale = 1.0;
        assert!(c.validate().is_err());
        let mut c = GeneratorConfig::static_dominant();
        c.timing.duration_s = 40.0;
        assert!(c.validate().is_err());
        let mut c = GeneratorConfig::static_dominant();
        c.structure.heave_damping = 0.0;
        assert!(c.validate().is_err());
        assert!(GeneratorConfig::preset("turbulent").is_err());
        assert!(GeneratorConfig::from_toml_str("profile = 3").is_err());
    }
}
