//! Second-order equivalent-circuit model of a constant-current discharge pulse.
//!
//! The cell is modelled as a series resistance `R_int` plus two parallel RC
//! branches `(R1, tau1)` and `(R2, tau2)`. For a current step `I` applied at
//! `t = 0` the terminal-voltage deviation from its pre-pulse value is
//!
//! ```text
//! dV(t) = I * (R_int + R1 * (1 - exp(-t/tau1)) + R2 * (1 - exp(-t/tau2)))
//! ```
//!
//! Discharge current is signed negative, so a discharge pulse produces a
//! negative voltage delta. All operations here are pure functions over
//! immutable inputs.

use thiserror::Error;

/// Index order used whenever parameters travel as a flat `[f64; 5]`.
pub const PARAM_NAMES: [&str; 5] = ["r_int", "r1", "tau1", "r2", "tau2"];

#[derive(Debug, Error)]
pub enum EcmError {
    #[error("parameter {name} must be finite and positive, got {value}")]
    InvalidParam { name: &'static str, value: f64 },
    #[error("time must be finite and nonnegative, got {0}")]
    InvalidTime(f64),
    #[error("current must be finite, got {0}")]
    InvalidCurrent(f64),
    #[error("trace must contain at least one sample")]
    EmptyTrace,
    #[error("sample {index}: {reason}")]
    InvalidSample { index: usize, reason: String },
    #[error("trace current is not constant: sample {index} has {value} A, mean {mean} A")]
    NonConstantCurrent { index: usize, value: f64, mean: f64 },
    #[error("no pre-pulse sample (t < 0) to take the voltage reference from")]
    NoPrePulseReference,
    #[error("fit window [{t_min}, {t_max}] is invalid (need 0 <= t_min < t_max)")]
    InvalidWindow { t_min: f64, t_max: f64 },
    #[error("window [{t_min}, {t_max}] contains {found} samples, need at least {needed}")]
    DegenerateWindow {
        t_min: f64,
        t_max: f64,
        found: usize,
        needed: usize,
    },
}

/// The five model parameters. Strictly positive and finite by construction.
///
/// The model is symmetric under swapping the two RC branches; [`EcmParams::normalized`]
/// fixes the canonical ordering `tau1 < tau2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcmParams {
    r_int: f64,
    r1: f64,
    tau1: f64,
    r2: f64,
    tau2: f64,
}

impl EcmParams {
    pub fn new(r_int: f64, r1: f64, tau1: f64, r2: f64, tau2: f64) -> Result<Self, EcmError> {
        let check = |name: &'static str, value: f64| {
            if value.is_finite() && value > 0.0 {
                Ok(value)
            } else {
                Err(EcmError::InvalidParam { name, value })
            }
        };
        Ok(Self {
            r_int: check("r_int", r_int)?,
            r1: check("r1", r1)?,
            tau1: check("tau1", tau1)?,
            r2: check("r2", r2)?,
            tau2: check("tau2", tau2)?,
        })
    }

    pub fn from_array(a: [f64; 5]) -> Result<Self, EcmError> {
        Self::new(a[0], a[1], a[2], a[3], a[4])
    }

    /// Flat view in [`PARAM_NAMES`] order.
    pub fn to_array(&self) -> [f64; 5] {
        [self.r_int, self.r1, self.tau1, self.r2, self.tau2]
    }

    pub fn r_int(&self) -> f64 {
        self.r_int
    }
    pub fn r1(&self) -> f64 {
        self.r1
    }
    pub fn tau1(&self) -> f64 {
        self.tau1
    }
    pub fn r2(&self) -> f64 {
        self.r2
    }
    pub fn tau2(&self) -> f64 {
        self.tau2
    }

    /// Asymptotic series resistance `R_int + R1 + R2`.
    pub fn total_resistance(&self) -> f64 {
        self.r_int + self.r1 + self.r2
    }

    /// Canonical branch ordering: swaps the RC pairs so that `tau1 <= tau2`.
    /// The pulse response is invariant under this swap.
    pub fn normalized(self) -> Self {
        if self.tau1 > self.tau2 {
            Self {
                r_int: self.r_int,
                r1: self.r2,
                tau1: self.tau2,
                r2: self.r1,
                tau2: self.tau1,
            }
        } else {
            self
        }
    }

    /// Relative gap between the two time constants, `|tau2 - tau1| / max`.
    pub fn tau_separation(&self) -> f64 {
        (self.tau2 - self.tau1).abs() / self.tau1.max(self.tau2)
    }
}

/// One time-stamped measurement of a pulse, relative to pulse onset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    /// Seconds since pulse onset.
    pub t_s: f64,
    /// Cell current in amperes, discharge negative.
    pub current_a: f64,
    /// Terminal voltage minus the pre-pulse terminal voltage, in volts.
    pub voltage_delta_v: f64,
}

/// Identity of the cycle a pulse belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceMeta {
    pub battery_id: String,
    pub cycle_index: u32,
    /// Ambient temperature during the pulse, if logged.
    pub ambient_temp_celsius: Option<f64>,
}

/// Relative spread of sample currents tolerated by the constant-current check.
pub const DEFAULT_CURRENT_TOLERANCE: f64 = 1e-2;

/// Measured voltage response of one constant-current discharge pulse.
///
/// Invariants enforced at construction: sample times strictly increasing and
/// starting at `t >= 0`, all values finite, and current constant across the
/// trace within a configured relative tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseTrace {
    samples: Vec<Sample>,
    meta: TraceMeta,
}

impl PulseTrace {
    pub fn new(samples: Vec<Sample>, meta: TraceMeta) -> Result<Self, EcmError> {
        Self::with_current_tolerance(samples, meta, DEFAULT_CURRENT_TOLERANCE)
    }

    pub fn with_current_tolerance(
        samples: Vec<Sample>,
        meta: TraceMeta,
        current_tolerance: f64,
    ) -> Result<Self, EcmError> {
        if samples.is_empty() {
            return Err(EcmError::EmptyTrace);
        }
        let mut prev_t = f64::NEG_INFINITY;
        for (index, s) in samples.iter().enumerate() {
            if !s.t_s.is_finite() || !s.current_a.is_finite() || !s.voltage_delta_v.is_finite() {
                return Err(EcmError::InvalidSample {
                    index,
                    reason: format!(
                        "non-finite value (t={}, i={}, dv={})",
                        s.t_s, s.current_a, s.voltage_delta_v
                    ),
                });
            }
            if index == 0 && s.t_s < 0.0 {
                return Err(EcmError::InvalidSample {
                    index,
                    reason: format!("first sample time {} is before pulse onset", s.t_s),
                });
            }
            if s.t_s <= prev_t {
                return Err(EcmError::InvalidSample {
                    index,
                    reason: format!("time {} not strictly increasing (previous {})", s.t_s, prev_t),
                });
            }
            prev_t = s.t_s;
        }
        let mean = samples.iter().map(|s| s.current_a).sum::<f64>() / samples.len() as f64;
        let allowed = current_tolerance * mean.abs().max(f64::MIN_POSITIVE);
        for (index, s) in samples.iter().enumerate() {
            if (s.current_a - mean).abs() > allowed {
                return Err(EcmError::NonConstantCurrent {
                    index,
                    value: s.current_a,
                    mean,
                });
            }
        }
        Ok(Self { samples, meta })
    }

    /// Builds a trace from absolute terminal-voltage samples.
    ///
    /// The voltage reference is the last sample taken before pulse onset
    /// (`t < 0`); pre-pulse samples are dropped, the remaining voltages are
    /// converted to deltas against that reference.
    pub fn from_absolute(
        samples: &[(f64, f64, f64)],
        meta: TraceMeta,
    ) -> Result<Self, EcmError> {
        let reference = samples
            .iter()
            .rfind(|(t, _, _)| *t < 0.0)
            .map(|(_, _, v)| *v)
            .ok_or(EcmError::NoPrePulseReference)?;
        let converted: Vec<Sample> = samples
            .iter()
            .filter(|(t, _, _)| *t >= 0.0)
            .map(|&(t, i, v)| Sample {
                t_s: t,
                current_a: i,
                voltage_delta_v: v - reference,
            })
            .collect();
        Self::new(converted, meta)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn meta(&self) -> &TraceMeta {
        &self.meta
    }

    pub fn mean_current(&self) -> f64 {
        self.samples.iter().map(|s| s.current_a).sum::<f64>() / self.samples.len() as f64
    }

    /// Samples with `t_min <= t <= t_max`, in time order.
    pub fn in_window<'a>(&'a self, window: &'a FitWindow) -> impl Iterator<Item = &'a Sample> {
        self.samples.iter().filter(move |s| window.contains(s.t_s))
    }
}

/// Closed time interval the identification cost is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitWindow {
    t_min: f64,
    t_max: f64,
}

impl FitWindow {
    pub fn new(t_min: f64, t_max: f64) -> Result<Self, EcmError> {
        if t_min.is_finite() && t_max.is_finite() && 0.0 <= t_min && t_min < t_max {
            Ok(Self { t_min, t_max })
        } else {
            Err(EcmError::InvalidWindow { t_min, t_max })
        }
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn contains(&self, t: f64) -> bool {
        self.t_min <= t && t <= self.t_max
    }
}

/// `1 - exp(-x)` computed without cancellation for small `x`.
#[inline]
fn one_minus_exp_neg(x: f64) -> f64 {
    -(-x).exp_m1()
}

/// Hot-path evaluation on a pre-validated flat parameter vector.
#[inline]
pub(crate) fn response_raw(p: &[f64; 5], current: f64, t: f64) -> f64 {
    current * (p[0] + p[1] * one_minus_exp_neg(t / p[2]) + p[3] * one_minus_exp_neg(t / p[4]))
}

/// Voltage delta of the model at time `t` after onset of a `current` step.
///
/// Returns `current * (r_int + r1*(1 - e^(-t/tau1)) + r2*(1 - e^(-t/tau2)))`.
/// The sign of the result follows the sign of the current.
pub fn pulse_response(params: &EcmParams, current: f64, t: f64) -> Result<f64, EcmError> {
    if !t.is_finite() || t < 0.0 {
        return Err(EcmError::InvalidTime(t));
    }
    if !current.is_finite() {
        return Err(EcmError::InvalidCurrent(current));
    }
    Ok(response_raw(&params.to_array(), current, t))
}

/// Model response at each sample of the trace, in trace order.
pub fn response_series(params: &EcmParams, trace: &PulseTrace) -> Result<Vec<f64>, EcmError> {
    trace
        .samples()
        .iter()
        .map(|s| pulse_response(params, s.current_a, s.t_s))
        .collect()
}

/// Hot-path Jacobian row on a pre-validated flat parameter vector.
///
/// Order: `(d/d r_int, d/d r1, d/d tau1, d/d r2, d/d tau2)`.
#[inline]
pub(crate) fn jacobian_raw(p: &[f64; 5], current: f64, t: f64) -> [f64; 5] {
    let e1 = (-t / p[2]).exp();
    let e2 = (-t / p[4]).exp();
    [
        current,
        current * one_minus_exp_neg(t / p[2]),
        -current * p[1] * (t / (p[2] * p[2])) * e1,
        current * one_minus_exp_neg(t / p[4]),
        -current * p[3] * (t / (p[4] * p[4])) * e2,
    ]
}

/// Partial derivatives of [`pulse_response`] with respect to each parameter,
/// in [`PARAM_NAMES`] order.
pub fn jacobian(params: &EcmParams, current: f64, t: f64) -> Result<[f64; 5], EcmError> {
    if !t.is_finite() || t < 0.0 {
        return Err(EcmError::InvalidTime(t));
    }
    if !current.is_finite() {
        return Err(EcmError::InvalidCurrent(current));
    }
    Ok(jacobian_raw(&params.to_array(), current, t))
}

/// Sum of squared voltage residuals over the samples inside `window`.
///
/// Plain unweighted sum; comparisons across traces assume equal sampling
/// rates. At least two in-window samples are required.
pub fn sse(params: &EcmParams, trace: &PulseTrace, window: &FitWindow) -> Result<f64, EcmError> {
    let p = params.to_array();
    let mut acc = 0.0;
    let mut count = 0usize;
    for s in trace.in_window(window) {
        let r = s.voltage_delta_v - response_raw(&p, s.current_a, s.t_s);
        acc += r * r;
        count += 1;
    }
    if count < 2 {
        return Err(EcmError::DegenerateWindow {
            t_min: window.t_min,
            t_max: window.t_max,
            found: count,
            needed: 2,
        });
    }
    Ok(acc)
}
