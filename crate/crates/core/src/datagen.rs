//! Synthetic fault-event voltage-magnitude records.
//!
//! Each event is a temporary three-phase fault on one of two lines, observed as
//! the voltage magnitude at one generator bus. The waveform is a flat
//! pre-fault segment, a fault-on dip whose depth scales with 1/(Z + Z0), and a
//! damped post-clearing oscillation whose frequency, damping and gain depend on
//! the (line, generator) pair.

use std::f64::consts::PI;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{mix, rng_from, salt};

pub const MAX_IMPEDANCE_OHM: f64 = 1000.0;
pub const MIN_FAULT_CYCLES: f64 = 10.0;
pub const MAX_FAULT_CYCLES: f64 = 20.0;

#[derive(Debug, Error, PartialEq)]
pub enum DatagenError {
    #[error("signal parameter `{0}` is not finite")]
    NonFinite(&'static str),
    #[error("invalid signal parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },
    #[error("fault clears at {clear_s:.4} s, outside the {window_s:.4} s window")]
    FaultOutsideWindow { clear_s: f64, window_s: f64 },
    #[error("time series needs at least 2 finite samples, got {0}")]
    BadSeries(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LineClass {
    LineA,
    LineB,
}

impl LineClass {
    pub const ALL: [LineClass; 2] = [LineClass::LineA, LineClass::LineB];

    /// SVM label: LineA is the negative class.
    pub fn label(self) -> i8 {
        match self {
            LineClass::LineA => -1,
            LineClass::LineB => 1,
        }
    }

    pub fn from_label(label: i8) -> Self {
        if label < 0 {
            LineClass::LineA
        } else {
            LineClass::LineB
        }
    }

    pub fn index(self) -> usize {
        match self {
            LineClass::LineA => 0,
            LineClass::LineB => 1,
        }
    }
}

impl fmt::Display for LineClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LineClass::LineA => "LineA",
            LineClass::LineB => "LineB",
        })
    }
}

impl std::str::FromStr for LineClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "LineA" => Ok(LineClass::LineA),
            "LineB" => Ok(LineClass::LineB),
            other => Err(format!("unknown line class `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GeneratorId {
    Gen1,
    Gen4,
}

impl GeneratorId {
    pub const ALL: [GeneratorId; 2] = [GeneratorId::Gen1, GeneratorId::Gen4];

    fn key(self) -> u64 {
        match self {
            GeneratorId::Gen1 => 1,
            GeneratorId::Gen4 => 4,
        }
    }
}

impl fmt::Display for GeneratorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeneratorId::Gen1 => "Gen1",
            GeneratorId::Gen4 => "Gen4",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub event_id: u64,
    pub line_class: LineClass,
    pub generator_id: GeneratorId,
    pub impedance_ohm: f64,
    pub duration_s: f64,
    pub seed: u64,
}

/// Draws the random fault characteristics for one event.
///
/// Impedance and duration depend only on `(global_seed, event_id)`, so the same
/// fault is seen identically from both generator buses.
pub fn sample_event(
    global_seed: u64,
    event_id: u64,
    line_class: LineClass,
    generator_id: GeneratorId,
) -> FaultEvent {
    let seed = mix(global_seed ^ salt::EVENT, event_id);
    let mut rng = rng_from(seed);
    let impedance_ohm = rng.random_range(0.0..MAX_IMPEDANCE_OHM);
    let duration_s =
        rng.random_range(MIN_FAULT_CYCLES..MAX_FAULT_CYCLES) / SignalModelParams::NOMINAL_FREQ_HZ;
    FaultEvent {
        event_id,
        line_class,
        generator_id,
        impedance_ohm,
        duration_s,
        seed,
    }
}

/// Generator response to a fault on one line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseParams {
    /// Fault-on dip is `dip_gain / (Z + dip_offset_ohm)` pu.
    pub dip_gain: f64,
    pub dip_offset_ohm: f64,
    pub osc_freq_hz: f64,
    pub damping_ratio: f64,
    /// Post-clearing oscillation amplitude is `osc_amp_gain / (Z + dip_offset_ohm)` pu.
    pub osc_amp_gain: f64,
    pub phase_rad: f64,
}

impl ResponseParams {
    fn validate(&self) -> Result<(), DatagenError> {
        for (name, v) in [
            ("dip_gain", self.dip_gain),
            ("dip_offset_ohm", self.dip_offset_ohm),
            ("osc_freq_hz", self.osc_freq_hz),
            ("damping_ratio", self.damping_ratio),
            ("osc_amp_gain", self.osc_amp_gain),
            ("phase_rad", self.phase_rad),
        ] {
            if !v.is_finite() {
                return Err(DatagenError::NonFinite(name));
            }
        }
        if !(self.damping_ratio > 0.0 && self.damping_ratio < 1.0) {
            return Err(DatagenError::InvalidParam {
                name: "damping_ratio",
                reason: format!("{} not in (0, 1)", self.damping_ratio),
            });
        }
        if self.osc_freq_hz <= 0.0 {
            return Err(DatagenError::InvalidParam {
                name: "osc_freq_hz",
                reason: format!("{} must be positive", self.osc_freq_hz),
            });
        }
        if self.dip_offset_ohm <= 0.0 {
            return Err(DatagenError::InvalidParam {
                name: "dip_offset_ohm",
                reason: format!("{} must be positive", self.dip_offset_ohm),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseTable {
    pub gen1_line_a: ResponseParams,
    pub gen1_line_b: ResponseParams,
    pub gen4_line_a: ResponseParams,
    pub gen4_line_b: ResponseParams,
}

impl ResponseTable {
    pub fn get(&self, line: LineClass, generator: GeneratorId) -> &ResponseParams {
        match (generator, line) {
            (GeneratorId::Gen1, LineClass::LineA) => &self.gen1_line_a,
            (GeneratorId::Gen1, LineClass::LineB) => &self.gen1_line_b,
            (GeneratorId::Gen4, LineClass::LineA) => &self.gen4_line_a,
            (GeneratorId::Gen4, LineClass::LineB) => &self.gen4_line_b,
        }
    }

    fn all(&self) -> [&ResponseParams; 4] {
        [
            &self.gen1_line_a,
            &self.gen1_line_b,
            &self.gen4_line_a,
            &self.gen4_line_b,
        ]
    }
}

impl Default for ResponseTable {
    fn default() -> Self {
        const Z0: f64 = 200.0;
        // Dip depth at a bolted fault: 0.4 pu at Gen1, 0.25 pu at Gen4.
        let line_a = |dip_at_zero: f64| ResponseParams {
            dip_gain: dip_at_zero * Z0,
            dip_offset_ohm: Z0,
            osc_freq_hz: 0.8,
            damping_ratio: 0.08,
            osc_amp_gain: 0.5 * dip_at_zero * Z0,
            phase_rad: 0.0,
        };
        let line_b = |dip_at_zero: f64| ResponseParams {
            dip_gain: dip_at_zero * Z0,
            dip_offset_ohm: Z0,
            osc_freq_hz: 1.3,
            damping_ratio: 0.15,
            osc_amp_gain: 0.35 * dip_at_zero * Z0,
            phase_rad: PI / 2.0,
        };
        ResponseTable {
            gen1_line_a: line_a(0.4),
            gen1_line_b: line_b(0.4),
            gen4_line_a: line_a(0.25),
            gen4_line_b: line_b(0.25),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalModelParams {
    pub f_nom_hz: f64,
    pub sample_rate_hz: f64,
    pub window_s: f64,
    pub prefault_s: f64,
    pub noise_std: f64,
    /// Fault inception is jittered by U(0, start_jitter_s) when positive.
    #[serde(default)]
    pub start_jitter_s: f64,
    pub responses: ResponseTable,
}

impl SignalModelParams {
    pub const NOMINAL_FREQ_HZ: f64 = 60.0;
    pub const DEFAULT_NOISE_STD: f64 = 0.002;

    /// Default parameters with the window sized to produce exactly `n_samples`
    /// raw samples.
    pub fn with_samples(n_samples: usize) -> Self {
        let sample_rate_hz = 60.0;
        SignalModelParams {
            f_nom_hz: Self::NOMINAL_FREQ_HZ,
            sample_rate_hz,
            window_s: n_samples as f64 / sample_rate_hz,
            prefault_s: 1.0,
            noise_std: Self::DEFAULT_NOISE_STD,
            start_jitter_s: 0.0,
            responses: ResponseTable::default(),
        }
    }

    pub fn n_samples(&self) -> usize {
        (self.window_s * self.sample_rate_hz).round() as usize
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        for (name, v) in [
            ("f_nom_hz", self.f_nom_hz),
            ("sample_rate_hz", self.sample_rate_hz),
            ("window_s", self.window_s),
            ("prefault_s", self.prefault_s),
            ("noise_std", self.noise_std),
            ("start_jitter_s", self.start_jitter_s),
        ] {
            if !v.is_finite() {
                return Err(DatagenError::NonFinite(name));
            }
        }
        let positive = [
            ("f_nom_hz", self.f_nom_hz),
            ("sample_rate_hz", self.sample_rate_hz),
            ("window_s", self.window_s),
        ];
        for (name, v) in positive {
            if v <= 0.0 {
                return Err(DatagenError::InvalidParam {
                    name,
                    reason: format!("{v} must be positive"),
                });
            }
        }
        let nonneg = [
            ("prefault_s", self.prefault_s),
            ("noise_std", self.noise_std),
            ("start_jitter_s", self.start_jitter_s),
        ];
        for (name, v) in nonneg {
            if v < 0.0 {
                return Err(DatagenError::InvalidParam {
                    name,
                    reason: format!("{v} must be nonnegative"),
                });
            }
        }
        let all = self.responses.all();
        for (i, r) in all.iter().enumerate() {
            r.validate()?;
            if all[i + 1..].iter().any(|o| o == r) {
                return Err(DatagenError::InvalidParam {
                    name: "responses",
                    reason: "the four (line, generator) responses must be pairwise distinct".into(),
                });
            }
        }
        if self.n_samples() < 2 {
            return Err(DatagenError::InvalidParam {
                name: "window_s",
                reason: "window holds fewer than 2 samples".into(),
            });
        }
        Ok(())
    }
}

/// Uniformly sampled scalar signal.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub samples: Vec<f64>,
    pub dt_s: f64,
    pub t0_s: f64,
}

impl TimeSeries {
    pub fn new(samples: Vec<f64>, dt_s: f64, t0_s: f64) -> Result<Self, DatagenError> {
        if samples.len() < 2 {
            return Err(DatagenError::BadSeries(format!("{} samples", samples.len())));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(DatagenError::BadSeries(format!("sample {i} is not finite")));
        }
        if !(dt_s > 0.0 && dt_s.is_finite()) || !t0_s.is_finite() {
            return Err(DatagenError::BadSeries(format!("bad time base dt={dt_s} t0={t0_s}")));
        }
        Ok(TimeSeries { samples, dt_s, t0_s })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0_s + i as f64 * self.dt_s
    }
}

/// Noise-free voltage magnitude at time `t` for a fault starting at `fault_start_s`.
fn clean_voltage(r: &ResponseParams, event: &FaultEvent, fault_start_s: f64, t: f64) -> f64 {
    let clear_s = fault_start_s + event.duration_s;
    let z = event.impedance_ohm + r.dip_offset_ohm;
    if t < fault_start_s {
        1.0
    } else if t < clear_s {
        1.0 - r.dip_gain / z
    } else {
        let omega = 2.0 * PI * r.osc_freq_hz;
        let tau = t - clear_s;
        let damped = omega * (1.0 - r.damping_ratio * r.damping_ratio).sqrt();
        1.0 - (r.osc_amp_gain / z)
            * (-r.damping_ratio * omega * tau).exp()
            * (damped * tau + r.phase_rad).cos()
    }
}

/// Renders the voltage-magnitude record for one event.
pub fn synthesize(event: &FaultEvent, params: &SignalModelParams) -> Result<TimeSeries, DatagenError> {
    params.validate()?;
    if !event.impedance_ohm.is_finite() || event.impedance_ohm < 0.0 {
        return Err(DatagenError::InvalidParam {
            name: "impedance_ohm",
            reason: format!("{} must be finite and nonnegative", event.impedance_ohm),
        });
    }
    if !(event.duration_s.is_finite() && event.duration_s > 0.0) {
        return Err(DatagenError::InvalidParam {
            name: "duration_s",
            reason: format!("{} must be positive", event.duration_s),
        });
    }

    let mut noise_rng = rng_from(mix(event.seed ^ salt::NOISE, event.generator_id.key()));
    let jitter = if params.start_jitter_s > 0.0 {
        noise_rng.random_range(0.0..params.start_jitter_s)
    } else {
        0.0
    };
    let fault_start_s = params.prefault_s + jitter;
    let clear_s = fault_start_s + event.duration_s;
    if params.window_s <= clear_s {
        return Err(DatagenError::FaultOutsideWindow {
            clear_s,
            window_s: params.window_s,
        });
    }

    let response = params.responses.get(event.line_class, event.generator_id);
    let dt = 1.0 / params.sample_rate_hz;
    let samples = (0..params.n_samples())
        .map(|i| {
            let v = clean_voltage(response, event, fault_start_s, i as f64 * dt);
            if params.noise_std > 0.0 {
                let e: f64 = StandardNormal.sample(&mut noise_rng);
                v + params.noise_std * e
            } else {
                v
            }
        })
        .collect();
    TimeSeries::new(samples, dt, 0.0)
}
