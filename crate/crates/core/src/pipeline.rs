//! Turns per-cycle records into training-ready features: capacity
//! corrections, SoH labelling, burn-in trimming, causal sliding-mean
//! filtering, and feature assembly.
//!
//! All transformations are pure and deterministic; batteries are processed
//! independently and never share smoothing state.

use crate::ecm::EcmParams;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("correction for unknown battery '{0}'")]
    UnknownBattery(String),
    #[error(
        "correction ({battery_id}, cycles {cycle_from}..={cycle_to}, {delta_ah} Ah) drives \
         cycle {cycle_index} to {resulting_ah} Ah (must stay positive)"
    )]
    InvalidCorrection {
        battery_id: String,
        cycle_from: u32,
        cycle_to: u32,
        delta_ah: f64,
        cycle_index: u32,
        resulting_ah: f64,
    },
    #[error("correction range {cycle_from}..={cycle_to} is reversed")]
    ReversedCorrectionRange { cycle_from: u32, cycle_to: u32 },
    #[error("SoH reference capacity must be positive and finite, got {0}")]
    InvalidReference(f64),
    #[error("record ({battery_id}, cycle {cycle_index}) has no SoH label")]
    UnlabeledRecord { battery_id: String, cycle_index: u32 },
    #[error("sliding-mean window must be at least 1")]
    ZeroWindow,
    #[error("smoothed SoH {soh_percent}% for battery '{battery_id}' is outside (0, 110]")]
    SohOutOfRange { battery_id: String, soh_percent: f64 },
    #[error("discharged capacity must be positive and finite, got {discharged_ah} Ah at ({battery_id}, cycle {cycle_index})")]
    InvalidCapacity {
        battery_id: String,
        cycle_index: u32,
        discharged_ah: f64,
    },
}

/// One charge/discharge cycle: measured capacity plus the parameters fitted
/// from that cycle's pulse. `soh_percent` stays `None` until labelled by
/// [`compute_soh`].
#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub battery_id: String,
    pub cycle_index: u32,
    pub discharged_ah: f64,
    pub params: EcmParams,
    pub soh_percent: Option<f64>,
}

/// Additive capacity correction over an inclusive cycle range, as declared by
/// an operator after inspecting a capacity log.
#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    pub battery_id: String,
    pub cycle_from: u32,
    pub cycle_to: u32,
    pub delta_ah: f64,
}

impl Correction {
    pub fn new(
        battery_id: impl Into<String>,
        cycle_from: u32,
        cycle_to: u32,
        delta_ah: f64,
    ) -> Result<Self, PipelineError> {
        if cycle_from > cycle_to {
            return Err(PipelineError::ReversedCorrectionRange { cycle_from, cycle_to });
        }
        Ok(Self {
            battery_id: battery_id.into(),
            cycle_from,
            cycle_to,
            delta_ah,
        })
    }

    fn matches(&self, record: &CycleRecord) -> bool {
        record.battery_id == self.battery_id
            && self.cycle_from <= record.cycle_index
            && record.cycle_index <= self.cycle_to
    }
}

/// Denominator used when converting discharged capacity to SoH.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SohReference {
    /// Per-battery maximum discharged capacity; the best cycle reads 100%.
    PerBatteryMax,
    /// Fixed reference in amp-hours (for example the nominal capacity).
    FixedAh(f64),
}

/// Smoothed feature vector paired with its smoothed SoH label. The ohmic
/// resistance is deliberately absent: it varies between cells for reasons
/// unrelated to ageing (wiring, assembly) and would not generalize.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub battery_id: String,
    pub cycle_index: u32,
    pub r1: f64,
    pub r2: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub soh_percent: f64,
}

/// Default smoothing window, in cycles. SoH moves little over 20 consecutive
/// cycles, so averaging over them suppresses fit noise without masking ageing.
pub const DEFAULT_SMOOTHING_WINDOW: usize = 20;

/// Applies declared capacity corrections. Matched records get
/// `discharged_ah += delta_ah`; everything else is returned unchanged, in the
/// original order.
pub fn apply_corrections(
    records: &[CycleRecord],
    corrections: &[Correction],
) -> Result<Vec<CycleRecord>, PipelineError> {
    for c in corrections {
        if c.cycle_from > c.cycle_to {
            return Err(PipelineError::ReversedCorrectionRange {
                cycle_from: c.cycle_from,
                cycle_to: c.cycle_to,
            });
        }
        if !records.iter().any(|r| r.battery_id == c.battery_id) {
            return Err(PipelineError::UnknownBattery(c.battery_id.clone()));
        }
    }
    let mut out = records.to_vec();
    for record in &mut out {
        for c in corrections {
            if !c.matches(record) {
                continue;
            }
            let updated = record.discharged_ah + c.delta_ah;
            if !(updated.is_finite() && updated > 0.0) {
                return Err(PipelineError::InvalidCorrection {
                    battery_id: c.battery_id.clone(),
                    cycle_from: c.cycle_from,
                    cycle_to: c.cycle_to,
                    delta_ah: c.delta_ah,
                    cycle_index: record.cycle_index,
                    resulting_ah: updated,
                });
            }
            record.discharged_ah = updated;
        }
    }
    Ok(out)
}

/// Labels every record with `soh_percent = 100 * discharged_ah / reference`.
pub fn compute_soh(
    records: &[CycleRecord],
    reference: SohReference,
) -> Result<Vec<CycleRecord>, PipelineError> {
    if let SohReference::FixedAh(ah) = reference {
        if !(ah.is_finite() && ah > 0.0) {
            return Err(PipelineError::InvalidReference(ah));
        }
    }
    for r in records {
        if !(r.discharged_ah.is_finite() && r.discharged_ah > 0.0) {
            return Err(PipelineError::InvalidCapacity {
                battery_id: r.battery_id.clone(),
                cycle_index: r.cycle_index,
                discharged_ah: r.discharged_ah,
            });
        }
    }
    let mut out = records.to_vec();
    for record in &mut out {
        let reference_ah = match reference {
            SohReference::FixedAh(ah) => ah,
            SohReference::PerBatteryMax => records
                .iter()
                .filter(|r| r.battery_id == record.battery_id)
                .map(|r| r.discharged_ah)
                .fold(f64::NEG_INFINITY, f64::max),
        };
        record.soh_percent = Some(100.0 * record.discharged_ah / reference_ah);
    }
    Ok(out)
}

/// Drops, per battery, every cycle strictly before the first cycle that
/// reaches that battery's maximum discharged capacity. Fresh cells gain
/// capacity over their first tens of cycles; training starts at the peak.
///
/// Records must be ordered by cycle within each battery. The output is a
/// per-battery suffix of the input and keeps the original record order.
pub fn trim_burn_in(records: &[CycleRecord]) -> Vec<CycleRecord> {
    // First position of the per-battery maximum, in encounter order.
    let mut keep = vec![false; records.len()];
    let mut batteries: Vec<&str> = Vec::new();
    for r in records {
        if !batteries.contains(&r.battery_id.as_str()) {
            batteries.push(&r.battery_id);
        }
    }
    for battery in batteries {
        let positions: Vec<usize> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.battery_id == battery)
            .map(|(i, _)| i)
            .collect();
        let best = positions
            .iter()
            .copied()
            .max_by(|&a, &b| {
                records[a]
                    .discharged_ah
                    .partial_cmp(&records[b].discharged_ah)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    // On ties, prefer the earliest occurrence.
                    .then(b.cmp(&a))
            })
            .expect("battery has at least one record");
        let cut = positions.iter().position(|&p| p == best).unwrap();
        for &p in &positions[cut..] {
            keep[p] = true;
        }
    }
    records
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(r, _)| r.clone())
        .collect()
}

/// Trailing (causal) mean: `out[i]` averages the last `window` values up to
/// and including `i`. The first `window - 1` outputs average the shorter
/// available prefix, so the output has the same length as the input.
pub fn sliding_mean(series: &[f64], window: usize) -> Result<Vec<f64>, PipelineError> {
    if window == 0 {
        return Err(PipelineError::ZeroWindow);
    }
    Ok((0..series.len())
        .map(|i| {
            let start = (i + 1).saturating_sub(window);
            let slice = &series[start..=i];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect())
}

/// Assembles one [`FeatureRow`] per labelled record, smoothing the four
/// branch parameters and the SoH label independently per battery.
pub fn build_features(
    records: &[CycleRecord],
    window: usize,
) -> Result<Vec<FeatureRow>, PipelineError> {
    if window == 0 {
        return Err(PipelineError::ZeroWindow);
    }
    for r in records {
        if r.soh_percent.is_none() {
            return Err(PipelineError::UnlabeledRecord {
                battery_id: r.battery_id.clone(),
                cycle_index: r.cycle_index,
            });
        }
    }
    let mut batteries: Vec<&str> = Vec::new();
    for r in records {
        if !batteries.contains(&r.battery_id.as_str()) {
            batteries.push(&r.battery_id);
        }
    }
    let mut out: Vec<Option<FeatureRow>> = vec![None; records.len()];
    for battery in batteries {
        let positions: Vec<usize> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.battery_id == battery)
            .map(|(i, _)| i)
            .collect();
        let column = |f: &dyn Fn(&CycleRecord) -> f64| -> Vec<f64> {
            positions.iter().map(|&p| f(&records[p])).collect()
        };
        let r1 = sliding_mean(&column(&|r| r.params.r1()), window)?;
        let r2 = sliding_mean(&column(&|r| r.params.r2()), window)?;
        let tau1 = sliding_mean(&column(&|r| r.params.tau1()), window)?;
        let tau2 = sliding_mean(&column(&|r| r.params.tau2()), window)?;
        let soh = sliding_mean(&column(&|r| r.soh_percent.unwrap()), window)?;
        for (k, &p) in positions.iter().enumerate() {
            if !(soh[k].is_finite() && soh[k] > 0.0 && soh[k] <= 110.0) {
                return Err(PipelineError::SohOutOfRange {
                    battery_id: battery.to_string(),
                    soh_percent: soh[k],
                });
            }
            out[p] = Some(FeatureRow {
                battery_id: records[p].battery_id.clone(),
                cycle_index: records[p].cycle_index,
                r1: r1[k],
                r2: r2[k],
                tau1: tau1[k],
                tau2: tau2[k],
                soh_percent: soh[k],
            });
        }
    }
    Ok(out.into_iter().map(|r| r.expect("every record emitted")).collect())
}
