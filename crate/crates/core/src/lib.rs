//! Battery state-of-health estimation from short end-of-charge discharge
//! pulses.
//!
//! A 10-second constant-current pulse applied at end of charge carries
//! enough information to track ageing: the voltage response is fitted with a
//! second-order equivalent-circuit model, the fitted branch parameters are
//! smoothed across cycles, and a regression estimator trained on reference
//! batteries maps them to SoH. A built-in synthetic campaign generator
//! provides ground truth for end-to-end verification.
//!
//! Modules, in pipeline order:
//!
//! - [`ecm`] — the pulse-response model, residuals, SSE, analytic Jacobian
//! - [`identify`] — damped Gauss-Newton identification of the five parameters
//! - [`pipeline`] — corrections, SoH labels, burn-in trim, sliding mean, features
//! - [`estimator`] — OLS / Huber / Theil-Sen regression, metrics, model files
//! - [`simbench`] — deterministic synthetic aging campaigns with ground truth
//!
//! ```
//! use soh_core::ecm::{EcmParams, pulse_response};
//!
//! let params = EcmParams::new(1.0e-3, 0.5e-3, 1.0, 0.8e-3, 20.0).unwrap();
//! let dv = pulse_response(&params, -60.0, 10.0).unwrap();
//! assert!(dv < 0.0); // discharge pulls the terminal voltage down
//! ```

pub mod ecm;
pub mod estimator;
pub mod identify;
mod linalg;
pub mod pipeline;
pub mod simbench;

pub use ecm::{EcmParams, FitWindow, PulseTrace};
pub use estimator::{EstimatorKind, EvalReport, SohModel};
pub use identify::{fit_pulse, FitOptions, FitReport};
pub use pipeline::{CycleRecord, Correction, FeatureRow};
pub use simbench::{simulate_campaign, BatterySpec, DriftProfile};
