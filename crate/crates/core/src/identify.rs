//! Parameter identification: fits [`EcmParams`] to a measured [`PulseTrace`]
//! by damped Gauss-Newton iteration on the in-window sum of squared
//! residuals, using the analytic Jacobian from [`crate::ecm`].
//!
//! Damping is multiplicative on the scaled normal equations
//! `(J'J + lambda * diag(J'J)) step = J'r`, raised x10 on a rejected step and
//! lowered /10 on an accepted one. Bounds are enforced by projecting each
//! accepted iterate onto the box.

use crate::ecm::{self, EcmError, EcmParams, FitWindow, PulseTrace, Sample};
use crate::linalg;
use thiserror::Error;

/// Default fit window: the first second after onset is excluded because real
/// cells show fast dynamics there that a second-order model cannot follow.
pub const DEFAULT_WINDOW: (f64, f64) = (1.0, 10.0);

/// Default box bounds, wide enough for any plausible large-format cell.
pub const DEFAULT_LOWER_BOUNDS: [f64; 5] = [1e-6, 1e-6, 1e-3, 1e-6, 1e-3];
pub const DEFAULT_UPPER_BOUNDS: [f64; 5] = [1.0, 1.0, 1e3, 1.0, 1e3];

/// Minimum number of in-window residuals for a nontrivial 5-parameter fit.
pub const MIN_FIT_SAMPLES: usize = 6;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("window holds {found} samples, need at least {needed}")]
    InsufficientSamples { needed: usize, found: usize },
    #[error("trace current is zero; parameters are unidentifiable")]
    ZeroCurrent,
    #[error("invalid fit options: {0}")]
    InvalidOptions(String),
    #[error(
        "solver diverged (non-finite cost) after {iterations} iterations; \
         last good sse {last_sse:e}"
    )]
    Diverged {
        last_params: Box<EcmParams>,
        last_sse: f64,
        iterations: usize,
    },
    #[error(transparent)]
    Ecm(#[from] EcmError),
}

/// Solver configuration.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub window: FitWindow,
    pub max_iterations: usize,
    /// Relative SSE improvement below which an accepted step means convergence.
    pub cost_tolerance: f64,
    /// Relative step norm below which an accepted step means convergence.
    pub param_tolerance: f64,
    pub initial_damping: f64,
    /// Per-parameter box, in [`crate::ecm::PARAM_NAMES`] order.
    pub lower_bounds: [f64; 5],
    pub upper_bounds: [f64; 5],
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            window: FitWindow::new(DEFAULT_WINDOW.0, DEFAULT_WINDOW.1)
                .expect("default window is valid"),
            max_iterations: 200,
            cost_tolerance: 1e-10,
            param_tolerance: 1e-8,
            initial_damping: 1e-3,
            lower_bounds: DEFAULT_LOWER_BOUNDS,
            upper_bounds: DEFAULT_UPPER_BOUNDS,
        }
    }
}

impl FitOptions {
    fn validate(&self) -> Result<(), FitError> {
        if self.max_iterations == 0 {
            return Err(FitError::InvalidOptions("max_iterations must be > 0".into()));
        }
        for (name, v) in [
            ("cost_tolerance", self.cost_tolerance),
            ("param_tolerance", self.param_tolerance),
            ("initial_damping", self.initial_damping),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(FitError::InvalidOptions(format!("{name} must be positive, got {v}")));
            }
        }
        for k in 0..5 {
            let (lo, hi) = (self.lower_bounds[k], self.upper_bounds[k]);
            if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo < hi) {
                return Err(FitError::InvalidOptions(format!(
                    "bounds for {} must satisfy 0 < lower < upper, got [{lo}, {hi}]",
                    ecm::PARAM_NAMES[k]
                )));
            }
        }
        Ok(())
    }
}

/// Outcome of one identification run.
#[derive(Debug, Clone)]
pub struct FitReport {
    /// Fitted parameters, normalized to `tau1 <= tau2`.
    pub params: EcmParams,
    /// In-window sum of squared residuals at the returned parameters.
    pub sse: f64,
    /// Outer iterations performed.
    pub iterations: usize,
    /// Whether a convergence criterion fired before the iteration cap.
    pub converged: bool,
    /// Root-mean-square in-window residual, volts.
    pub residual_rms: f64,
    /// Set when the Jacobian is near-degenerate (smallest singular value
    /// below 1e-8 of the largest) or the two time constants nearly coincide.
    pub condition_warning: bool,
    /// SSE after the initial guess and after each accepted step; nonincreasing.
    pub sse_history: Vec<f64>,
}

const CONDITION_RATIO_WARN: f64 = 1e-8;
const TAU_TIE_WARN: f64 = 1e-6;
const DAMPING_LIMIT: f64 = 1e14;
const SSE_FLOOR: f64 = 1e-30;

#[inline]
fn clip(p: [f64; 5], lo: &[f64; 5], hi: &[f64; 5]) -> [f64; 5] {
    let mut out = p;
    for k in 0..5 {
        out[k] = out[k].clamp(lo[k], hi[k]);
    }
    out
}

fn sse_over(samples: &[&Sample], p: &[f64; 5]) -> f64 {
    samples
        .iter()
        .map(|s| {
            let r = s.voltage_delta_v - ecm::response_raw(p, s.current_a, s.t_s);
            r * r
        })
        .sum()
}

/// Deterministic starting point for the solver.
///
/// Uses only in-window samples so that data outside the window can never
/// influence a fit: the ohmic resistance comes from the earliest in-window
/// voltage step divided by the current, the asymptotic total resistance from
/// the latest in-window sample, the remainder is split 40/60 between the two
/// branches, and the time constants start at 0.1 and 1.0 times the window
/// end. Everything is clipped to the default bounds.
pub fn initial_guess(trace: &PulseTrace, window: &FitWindow) -> Result<EcmParams, FitError> {
    let samples: Vec<&Sample> = trace.in_window(window).collect();
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(FitError::InsufficientSamples {
            needed: MIN_FIT_SAMPLES,
            found: samples.len(),
        });
    }
    let current = samples[0].current_a;
    if current == 0.0 {
        return Err(FitError::ZeroCurrent);
    }
    let r_int_est = samples[0].voltage_delta_v / current;
    let r_total_est = samples[samples.len() - 1].voltage_delta_v / current;
    let remaining = r_total_est - r_int_est;
    let remaining = if remaining > 0.0 {
        remaining
    } else {
        // Degenerate step shape (noise or a flat trace): fall back to a
        // fraction of the ohmic estimate so the guess stays positive.
        0.25 * r_int_est.abs().max(DEFAULT_LOWER_BOUNDS[0])
    };
    let guess = clip(
        [
            r_int_est,
            0.4 * remaining,
            0.1 * window.t_max(),
            0.6 * remaining,
            1.0 * window.t_max(),
        ],
        &DEFAULT_LOWER_BOUNDS,
        &DEFAULT_UPPER_BOUNDS,
    );
    Ok(EcmParams::from_array(guess)?)
}

/// Fits the five model parameters to the in-window samples of `trace`.
///
/// The returned SSE never exceeds the SSE of the initial guess, and the
/// accepted-step SSE sequence in `sse_history` is nonincreasing.
pub fn fit_pulse(trace: &PulseTrace, options: &FitOptions) -> Result<FitReport, FitError> {
    options.validate()?;
    let samples: Vec<&Sample> = trace.in_window(&options.window).collect();
    let n = samples.len();
    if n < MIN_FIT_SAMPLES {
        return Err(FitError::InsufficientSamples {
            needed: MIN_FIT_SAMPLES,
            found: n,
        });
    }
    if samples.iter().all(|s| s.current_a == 0.0) {
        return Err(FitError::ZeroCurrent);
    }

    let guess = initial_guess(trace, &options.window)?;
    let mut p = clip(guess.to_array(), &options.lower_bounds, &options.upper_bounds);
    let mut sse = sse_over(&samples, &p);
    if !sse.is_finite() {
        return Err(FitError::Diverged {
            last_params: Box::new(EcmParams::from_array(p)?),
            last_sse: sse,
            iterations: 0,
        });
    }
    let mut history = vec![sse];
    let mut damping = options.initial_damping;
    let mut converged = false;
    let mut iterations = 0;

    'outer: for _ in 0..options.max_iterations {
        iterations += 1;
        // Normal equations J'J and J'r for residual r = measured - model.
        let mut jtj = [0.0f64; 25];
        let mut jtr = [0.0f64; 5];
        for s in &samples {
            let row = ecm::jacobian_raw(&p, s.current_a, s.t_s);
            let resid = s.voltage_delta_v - ecm::response_raw(&p, s.current_a, s.t_s);
            for a in 0..5 {
                jtr[a] += row[a] * resid;
                for b in a..5 {
                    jtj[a * 5 + b] += row[a] * row[b];
                }
            }
        }
        for a in 0..5 {
            for b in 0..a {
                jtj[a * 5 + b] = jtj[b * 5 + a];
            }
        }

        let mut saw_finite_trial = false;
        let mut saw_nonfinite_cost = false;
        loop {
            let mut a = jtj;
            for k in 0..5 {
                let d = jtj[k * 5 + k];
                a[k * 5 + k] += damping * if d > 0.0 { d } else { 1.0 };
            }
            let mut rhs = jtr;
            let step = linalg::solve_dense(5, &mut a, &mut rhs);
            let candidate = step.as_ref().map(|delta| {
                let mut q = p;
                for k in 0..5 {
                    q[k] += delta[k];
                }
                clip(q, &options.lower_bounds, &options.upper_bounds)
            });
            let trial_sse = candidate.map(|q| sse_over(&samples, &q));

            match (candidate, trial_sse) {
                (Some(q), Some(new_sse)) if new_sse.is_finite() && new_sse <= sse => {
                    // Accepted step.
                    let step_norm = (0..5)
                        .map(|k| {
                            let d = q[k] - p[k];
                            d * d
                        })
                        .sum::<f64>()
                        .sqrt();
                    let p_norm = (0..5).map(|k| p[k] * p[k]).sum::<f64>().sqrt();
                    let improvement = sse - new_sse;
                    p = q;
                    let prev = sse;
                    sse = new_sse;
                    history.push(sse);
                    damping = (damping / 10.0).max(1e-15);
                    if sse <= SSE_FLOOR
                        || improvement <= options.cost_tolerance * prev
                        || step_norm <= options.param_tolerance * p_norm
                    {
                        converged = true;
                        break 'outer;
                    }
                    break;
                }
                (_, trial) => {
                    match trial {
                        Some(v) if v.is_finite() => saw_finite_trial = true,
                        Some(_) => saw_nonfinite_cost = true,
                        None => {} // singular damped system
                    }
                    damping *= 10.0;
                    if damping > DAMPING_LIMIT {
                        if saw_nonfinite_cost && !saw_finite_trial {
                            return Err(FitError::Diverged {
                                last_params: Box::new(EcmParams::from_array(p)?),
                                last_sse: sse,
                                iterations,
                            });
                        }
                        // Finite trials that cannot improve the cost mean a
                        // numerical minimum; a solver that could not even
                        // form a step reports non-convergence instead.
                        converged = saw_finite_trial;
                        break 'outer;
                    }
                }
            }
        }
    }

    let params = EcmParams::from_array(p)?.normalized();
    let condition_warning = {
        let mut jtj = [0.0f64; 25];
        let arr = params.to_array();
        for s in &samples {
            let row = ecm::jacobian_raw(&arr, s.current_a, s.t_s);
            for a in 0..5 {
                for b in 0..5 {
                    jtj[a * 5 + b] += row[a] * row[b];
                }
            }
        }
        let eig = linalg::sym_eigenvalues(5, &jtj);
        let max = eig.iter().cloned().fold(0.0f64, f64::max);
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min).max(0.0);
        let ratio = if max > 0.0 { (min / max).sqrt() } else { 0.0 };
        ratio < CONDITION_RATIO_WARN || params.tau_separation() < TAU_TIE_WARN
    };

    Ok(FitReport {
        params,
        sse,
        iterations,
        converged,
        residual_rms: (sse / n as f64).sqrt(),
        condition_warning,
        sse_history: history,
    })
}
