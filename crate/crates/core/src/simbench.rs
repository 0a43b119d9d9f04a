//! Synthetic aging-campaign generator used as the verification oracle for
//! the whole toolkit: known parameter-drift trajectories, per-cycle
//! discharged capacities, and noisy pulse traces for a configurable set of
//! virtual batteries.
//!
//! Every numeric default here is a synthetic-benchmark constant chosen to
//! produce a plausible large-format LiFePO4 campaign shape; none of them is
//! a measurement of a physical cell.
//!
//! Generation is fully deterministic: each battery gets its own sub-seeded
//! stream, so per-battery generation could run in parallel and still agree
//! bit-for-bit with a serial run.

use crate::ecm::{pulse_response, EcmError, EcmParams, PulseTrace, Sample, TraceMeta};
use crate::pipeline::CycleRecord;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid battery spec '{battery_id}': {reason}")]
    InvalidSpec { battery_id: String, reason: String },
    #[error("no battery specs given")]
    NoSpecs,
    #[error("drift profile drives {param} to {value} at SoH {soh}% (must stay positive)")]
    ProfileNotPositive {
        param: &'static str,
        soh: f64,
        value: f64,
    },
    #[error("invalid drift profile: {0}")]
    InvalidProfile(String),
    #[error("capacity noise drove discharged_ah to {0} Ah (must stay positive)")]
    CapacityCollapsed(f64),
    #[error(transparent)]
    Ecm(#[from] EcmError),
}

/// Geometry of one simulated battery's cycling campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatterySpec {
    pub battery_id: String,
    /// Amp-hours; 105 matches a common large-format LiFePO4 cell.
    #[serde(default = "default_nominal_ah")]
    pub nominal_ah: f64,
    /// Amperes, discharge negative.
    #[serde(default = "default_pulse_current")]
    pub pulse_current: f64,
    /// Seconds.
    #[serde(default = "default_pulse_duration")]
    pub pulse_duration: f64,
    /// Hertz.
    #[serde(default = "default_sample_rate")]
    pub sample_rate: f64,
    /// Cycles before the capacity peak; fresh cells gain capacity first.
    pub burn_in_cycles: u32,
    pub n_cycles: u32,
    #[serde(default = "default_ambient")]
    pub ambient_temp_celsius: f64,
}

fn default_nominal_ah() -> f64 {
    105.0
}
fn default_pulse_current() -> f64 {
    -60.0
}
fn default_pulse_duration() -> f64 {
    10.0
}
fn default_sample_rate() -> f64 {
    10.0
}
fn default_ambient() -> f64 {
    21.0
}

impl BatterySpec {
    fn validate(&self) -> Result<(), SimError> {
        let fail = |reason: String| SimError::InvalidSpec {
            battery_id: self.battery_id.clone(),
            reason,
        };
        if !(self.nominal_ah.is_finite() && self.nominal_ah > 0.0) {
            return Err(fail(format!("nominal_ah must be positive, got {}", self.nominal_ah)));
        }
        if !self.pulse_current.is_finite() || self.pulse_current == 0.0 {
            return Err(fail(format!(
                "pulse_current must be nonzero, got {}",
                self.pulse_current
            )));
        }
        if !(self.pulse_duration.is_finite() && self.pulse_duration > 0.0) {
            return Err(fail(format!(
                "pulse_duration must be positive, got {}",
                self.pulse_duration
            )));
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(fail(format!(
                "sample_rate must be positive, got {}",
                self.sample_rate
            )));
        }
        if self.n_cycles > 0 && self.n_cycles < self.burn_in_cycles + 2 {
            return Err(fail(format!(
                "n_cycles {} leaves no fade phase after {} burn-in cycles",
                self.n_cycles, self.burn_in_cycles
            )));
        }
        Ok(())
    }
}

/// Affine-plus-curvature drift of one parameter as a function of SoH:
/// `value(soh) = base + slope * (100 - soh) + quad * (100 - soh)^2`.
/// The quadratic term defaults to zero and exists to stress-test
/// nonlinear estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamDrift {
    pub base: f64,
    #[serde(default)]
    pub slope_per_point: f64,
    #[serde(default)]
    pub quad_per_point2: f64,
}

impl ParamDrift {
    pub fn value_at(&self, soh_percent: f64) -> f64 {
        let lost = 100.0 - soh_percent;
        self.base + self.slope_per_point * lost + self.quad_per_point2 * lost * lost
    }
}

/// Shape of the post-burn-in capacity fade.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "shape")]
pub enum FadeShape {
    /// SoH falls linearly from 100% at the burn-in peak to `end_soh` exactly
    /// at the final cycle.
    Linear,
    /// SoH decays exponentially toward `end_soh` with the given per-cycle rate.
    ExponentialToFloor { rate: f64 },
}

/// Ground-truth generator configuration: per-parameter drift against SoH,
/// capacity fade shape, and noise magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftProfile {
    pub r_int: ParamDrift,
    pub r1: ParamDrift,
    pub tau1: ParamDrift,
    pub r2: ParamDrift,
    pub tau2: ParamDrift,
    /// SoH at cycle 0, before the burn-in rise to 100%.
    pub start_soh: f64,
    /// SoH floor the fade approaches (reached exactly for [`FadeShape::Linear`]).
    pub end_soh: f64,
    pub fade: FadeShape,
    /// Standard deviation of the iid Gaussian voltage noise, volts.
    pub voltage_sigma: f64,
    /// Standard deviation of the per-cycle capacity noise, amp-hours.
    pub capacity_sigma_ah: f64,
    /// Relative standard deviation of the per-cycle parameter jitter.
    pub param_jitter_rel: f64,
}

/// Default drift profile: a 1.0 mOhm / 0.5 mOhm / 1 s / 0.8 mOhm / 20 s cell
/// whose time constants grow by ~2%/point (tau1) and ~1%/point (tau2) of SoH
/// lost and whose resistances grow by ~1.5%/point. Synthetic-benchmark
/// constants, not cell measurements.
pub fn default_profile() -> DriftProfile {
    DriftProfile {
        r_int: ParamDrift {
            base: 1.0e-3,
            slope_per_point: 1.5e-5,
            quad_per_point2: 0.0,
        },
        r1: ParamDrift {
            base: 0.5e-3,
            slope_per_point: 7.5e-6,
            quad_per_point2: 0.0,
        },
        tau1: ParamDrift {
            base: 1.0,
            slope_per_point: 0.02,
            quad_per_point2: 0.0,
        },
        r2: ParamDrift {
            base: 0.8e-3,
            slope_per_point: 1.2e-5,
            quad_per_point2: 0.0,
        },
        tau2: ParamDrift {
            base: 20.0,
            slope_per_point: 0.2,
            quad_per_point2: 0.0,
        },
        start_soh: 97.0,
        end_soh: 85.0,
        fade: FadeShape::Linear,
        voltage_sigma: 1e-4,
        capacity_sigma_ah: 0.15,
        param_jitter_rel: 0.02,
    }
}

impl DriftProfile {
    /// Ground-truth parameters at a given SoH, before jitter.
    pub fn params_at(&self, soh_percent: f64) -> Result<EcmParams, SimError> {
        let values = [
            ("r_int", self.r_int.value_at(soh_percent)),
            ("r1", self.r1.value_at(soh_percent)),
            ("tau1", self.tau1.value_at(soh_percent)),
            ("r2", self.r2.value_at(soh_percent)),
            ("tau2", self.tau2.value_at(soh_percent)),
        ];
        for (param, value) in values {
            if !(value.is_finite() && value > 0.0) {
                return Err(SimError::ProfileNotPositive {
                    param,
                    soh: soh_percent,
                    value,
                });
            }
        }
        Ok(EcmParams::new(
            values[0].1,
            values[1].1,
            values[2].1,
            values[3].1,
            values[4].1,
        )?)
    }

    /// Checks positivity of every drifted parameter over a SoH interval.
    pub fn validate_over(&self, soh_lo: f64, soh_hi: f64) -> Result<(), SimError> {
        if !(soh_lo.is_finite() && soh_hi.is_finite() && 0.0 < soh_lo && soh_lo < soh_hi) {
            return Err(SimError::InvalidProfile(format!(
                "bad SoH interval [{soh_lo}, {soh_hi}]"
            )));
        }
        let mut soh = soh_lo;
        while soh <= soh_hi {
            self.params_at(soh)?;
            soh += 0.25;
        }
        self.params_at(soh_hi)?;
        Ok(())
    }

    fn validate(&self) -> Result<(), SimError> {
        if !(self.end_soh > 0.0 && self.end_soh < 100.0) {
            return Err(SimError::InvalidProfile(format!(
                "end_soh must lie in (0, 100), got {}",
                self.end_soh
            )));
        }
        if !(self.start_soh > 0.0 && self.start_soh <= 100.0) {
            return Err(SimError::InvalidProfile(format!(
                "start_soh must lie in (0, 100], got {}",
                self.start_soh
            )));
        }
        for (name, v) in [
            ("voltage_sigma", self.voltage_sigma),
            ("capacity_sigma_ah", self.capacity_sigma_ah),
            ("param_jitter_rel", self.param_jitter_rel),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::InvalidProfile(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        if let FadeShape::ExponentialToFloor { rate } = self.fade {
            if !(rate.is_finite() && rate > 0.0) {
                return Err(SimError::InvalidProfile(format!(
                    "exponential fade rate must be positive, got {rate}"
                )));
            }
        }
        self.validate_over(self.end_soh.min(self.start_soh), 100.0)
    }

    /// Ground-truth SoH at a cycle: a saturating rise from `start_soh` to
    /// 100% over the burn-in, then the configured fade. The burn-in peak is
    /// the unique global maximum.
    pub fn soh_at_cycle(&self, cycle: u32, spec: &BatterySpec) -> f64 {
        let burn_in = spec.burn_in_cycles;
        if cycle < burn_in {
            let x = cycle as f64 / burn_in as f64;
            self.start_soh + (100.0 - self.start_soh) * x * (2.0 - x)
        } else {
            let aged = (cycle - burn_in) as f64;
            match self.fade {
                FadeShape::Linear => {
                    let span = (spec.n_cycles.saturating_sub(1) - burn_in) as f64;
                    if span == 0.0 {
                        100.0
                    } else {
                        100.0 - (100.0 - self.end_soh) * (aged / span)
                    }
                }
                FadeShape::ExponentialToFloor { rate } => {
                    self.end_soh + (100.0 - self.end_soh) * (-rate * aged).exp()
                }
            }
        }
    }
}

/// Ground truth for one simulated cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleTruth {
    pub battery_id: String,
    pub cycle_index: u32,
    pub true_soh_percent: f64,
    pub true_params: EcmParams,
    /// Noisy measured capacity, the value a cycler would log.
    pub discharged_ah: f64,
}

impl CycleTruth {
    /// The unlabeled cycle record a real campaign would hand the pipeline,
    /// carrying the ground-truth parameters in place of fitted ones.
    pub fn to_cycle_record(&self) -> CycleRecord {
        CycleRecord {
            battery_id: self.battery_id.clone(),
            cycle_index: self.cycle_index,
            discharged_ah: self.discharged_ah,
            params: self.true_params,
            soh_percent: None,
        }
    }
}

/// Full output of a simulated campaign: per battery, per cycle, the ground
/// truth plus one noisy pulse trace. Ordered by spec order, then cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedCampaign {
    pub truths: Vec<CycleTruth>,
    pub traces: Vec<PulseTrace>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Per-battery sub-seed so battery streams are independent of one another.
fn battery_seed(campaign_seed: u64, ordinal: u64) -> u64 {
    splitmix64(campaign_seed ^ splitmix64(ordinal.wrapping_add(1)))
}

/// Generates the campaign. Deterministic for a fixed `(specs, profile, seed)`
/// triple; unused noise draws are still consumed so that turning a sigma to
/// zero does not reshuffle the remaining streams.
pub fn simulate_campaign(
    specs: &[BatterySpec],
    profile: &DriftProfile,
    seed: u64,
) -> Result<SimulatedCampaign, SimError> {
    if specs.is_empty() {
        return Err(SimError::NoSpecs);
    }
    for spec in specs {
        spec.validate()?;
    }
    profile.validate()?;
    let unit = Normal::new(0.0, 1.0).expect("unit normal is valid");

    let mut truths = Vec::new();
    let mut traces = Vec::new();
    for (ordinal, spec) in specs.iter().enumerate() {
        let mut rng = ChaCha12Rng::seed_from_u64(battery_seed(seed, ordinal as u64));
        let n_samples = (spec.pulse_duration * spec.sample_rate).round() as usize + 1;
        for cycle in 0..spec.n_cycles {
            let soh = profile.soh_at_cycle(cycle, spec);
            let clean = profile.params_at(soh)?.to_array();
            let mut jittered = [0.0f64; 5];
            for (k, value) in clean.iter().enumerate() {
                let eps: f64 = unit.sample(&mut rng);
                jittered[k] = value * (1.0 + profile.param_jitter_rel * eps);
            }
            let true_params = EcmParams::from_array(jittered).map_err(SimError::Ecm)?;

            let cap_eps: f64 = unit.sample(&mut rng);
            let discharged_ah =
                soh / 100.0 * spec.nominal_ah + profile.capacity_sigma_ah * cap_eps;
            if !(discharged_ah.is_finite() && discharged_ah > 0.0) {
                return Err(SimError::CapacityCollapsed(discharged_ah));
            }

            let mut samples = Vec::with_capacity(n_samples);
            for i in 0..n_samples {
                let t = i as f64 / spec.sample_rate;
                let clean_v = pulse_response(&true_params, spec.pulse_current, t)?;
                let eps: f64 = unit.sample(&mut rng);
                samples.push(Sample {
                    t_s: t,
                    current_a: spec.pulse_current,
                    voltage_delta_v: clean_v + profile.voltage_sigma * eps,
                });
            }
            let trace = PulseTrace::new(
                samples,
                TraceMeta {
                    battery_id: spec.battery_id.clone(),
                    cycle_index: cycle,
                    ambient_temp_celsius: Some(spec.ambient_temp_celsius),
                },
            )?;

            truths.push(CycleTruth {
                battery_id: spec.battery_id.clone(),
                cycle_index: cycle,
                true_soh_percent: soh,
                true_params,
                discharged_ah,
            });
            traces.push(trace);
        }
    }
    Ok(SimulatedCampaign { truths, traces })
}

/// Default four-battery campaign with the standard profile: 105 Ah cells,
/// -60 A / 10 s pulses sampled at 10 Hz, burn-in lengths drawn from
/// [60, 80], SoH fading to 85%.
pub fn standard_campaign(
    n_batteries: u32,
    n_cycles: u32,
    seed: u64,
) -> (Vec<BatterySpec>, DriftProfile) {
    let specs = (1..=n_batteries)
        .map(|i| {
            // Burn-in drawn deterministically per battery from the seed.
            let spread = splitmix64(battery_seed(seed, 0xb0).wrapping_add(i as u64)) % 21;
            BatterySpec {
                battery_id: i.to_string(),
                nominal_ah: default_nominal_ah(),
                pulse_current: default_pulse_current(),
                pulse_duration: default_pulse_duration(),
                sample_rate: default_sample_rate(),
                burn_in_cycles: 60 + spread as u32,
                n_cycles,
                ambient_temp_celsius: default_ambient(),
            }
        })
        .collect();
    (specs, default_profile())
}
