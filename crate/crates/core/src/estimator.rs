//! SoH regression estimators over [`FeatureRow`]s: ordinary least squares,
//! a Huber M-estimator, and a multivariate Theil-Sen estimator, plus the
//! MAE / R-squared metrics and the cross-battery train/test protocol.
//!
//! OLS is solved by Householder QR on the column-equilibrated design matrix.
//! Huber and Theil-Sen standardize features and label internally (their
//! losses are not scale-equivariant) and un-standardize the coefficients
//! afterwards.

use crate::linalg;
use crate::pipeline::FeatureRow;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::collections::BTreeSet;
use thiserror::Error;

/// Fixed feature order used by every model.
pub const FEATURE_NAMES: [&str; 4] = ["r1", "r2", "tau1", "tau2"];

/// Serialized model schema version.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Huber transition point in units of the MAD-based robust residual scale.
/// 1.345 gives 95% efficiency on clean Gaussian residuals.
pub const DEFAULT_HUBER_TRANSITION: f64 = 1.345;

/// Default number of random minimal subsets for Theil-Sen.
pub const DEFAULT_THEIL_SEN_SUBSETS: usize = 10_000;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("need at least {needed} rows, got {found}")]
    TooFewRows { needed: usize, found: usize },
    #[error("design matrix is rank deficient; offending columns: {}", columns.join(", "))]
    Collinear { columns: Vec<String> },
    #[error("length mismatch: {left} predictions vs {right} labels")]
    LengthMismatch { left: usize, right: usize },
    #[error("metric inputs must be nonempty")]
    EmptyInput,
    #[error("labels have zero variance; R-squared is undefined")]
    ZeroVariance,
    #[error("non-finite feature in row (battery '{battery_id}', cycle {cycle_index})")]
    NonFiniteFeature { battery_id: String, cycle_index: u32 },
    #[error("train and test sets overlap: {}", ids.join(", "))]
    OverlappingIds { ids: Vec<String> },
    #[error("battery id set is empty")]
    EmptyIdSet,
    #[error("no rows for battery '{0}'")]
    MissingBattery(String),
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error("model JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Which regression family produced a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Ols,
    Huber,
    TheilSen,
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EstimatorKind::Ols => write!(f, "ols"),
            EstimatorKind::Huber => write!(f, "huber"),
            EstimatorKind::TheilSen => write!(f, "theil_sen"),
        }
    }
}

/// Provenance recorded alongside the trained coefficients.
///
/// `train_r2` follows the usual definition; for the degenerate case of a
/// constant training label it records 1.0 when the residuals vanish and 0.0
/// otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub battery_ids: Vec<String>,
    pub row_count: usize,
    pub train_mae: f64,
    pub train_r2: f64,
}

/// A trained linear SoH estimator: `soh = coefficients . (r1, r2, tau1, tau2) + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SohModel {
    pub kind: EstimatorKind,
    pub feature_names: Vec<String>,
    /// One coefficient per entry of [`FEATURE_NAMES`], in %/ohm and %/s.
    pub coefficients: [f64; 4],
    /// Percent.
    pub intercept: f64,
    pub training_meta: TrainingMeta,
    pub format_version: u32,
}

impl SohModel {
    pub fn to_json(&self) -> Result<String, EstimatorError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, EstimatorError> {
        let model: SohModel = serde_json::from_str(text)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(EstimatorError::ModelFormat(format!(
                "unsupported format_version {} (expected {})",
                model.format_version, MODEL_FORMAT_VERSION
            )));
        }
        if model.feature_names != FEATURE_NAMES {
            return Err(EstimatorError::ModelFormat(format!(
                "unexpected feature_names {:?}",
                model.feature_names
            )));
        }
        if !model.coefficients.iter().all(|c| c.is_finite()) || !model.intercept.is_finite() {
            return Err(EstimatorError::ModelFormat("non-finite coefficients".into()));
        }
        Ok(model)
    }
}

/// Per-battery evaluation figures.
#[derive(Debug, Clone, PartialEq)]
pub struct BatteryEval {
    pub mae_percent: f64,
    pub r2: f64,
    pub max_abs_error_percent: f64,
}

/// One per-cycle prediction/label pair from an evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualEntry {
    pub battery_id: String,
    pub cycle_index: u32,
    pub predicted: f64,
    pub actual: f64,
}

impl ResidualEntry {
    pub fn error(&self) -> f64 {
        self.predicted - self.actual
    }
}

/// Evaluation outcome: pooled metrics, per-battery metrics, raw residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mae_percent: f64,
    pub r2: f64,
    pub per_battery: BTreeMap<String, BatteryEval>,
    pub residuals: Vec<ResidualEntry>,
}

/// Estimator selection plus its knobs, for protocol-level entry points.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum TrainConfig {
    #[default]
    Ols,
    Huber { transition_scale: f64 },
    TheilSen { max_subsets: usize, seed: u64 },
}

impl TrainConfig {
    pub fn kind(&self) -> EstimatorKind {
        match self {
            TrainConfig::Ols => EstimatorKind::Ols,
            TrainConfig::Huber { .. } => EstimatorKind::Huber,
            TrainConfig::TheilSen { .. } => EstimatorKind::TheilSen,
        }
    }
}

fn features_of(row: &FeatureRow) -> [f64; 4] {
    [row.r1, row.r2, row.tau1, row.tau2]
}

fn validate_rows(rows: &[FeatureRow], needed: usize) -> Result<(), EstimatorError> {
    if rows.len() < needed {
        return Err(EstimatorError::TooFewRows {
            needed,
            found: rows.len(),
        });
    }
    for row in rows {
        let f = features_of(row);
        if !f.iter().all(|v| v.is_finite()) || !row.soh_percent.is_finite() {
            return Err(EstimatorError::NonFiniteFeature {
                battery_id: row.battery_id.clone(),
                cycle_index: row.cycle_index,
            });
        }
    }
    Ok(())
}

fn unique_battery_ids(rows: &[FeatureRow]) -> Vec<String> {
    let mut ids = Vec::new();
    for row in rows {
        if !ids.contains(&row.battery_id) {
            ids.push(row.battery_id.clone());
        }
    }
    ids
}

/// R-squared with the constant-label convention used for training metadata.
fn train_r2_convention(predicted: &[f64], actual: &[f64]) -> f64 {
    match r2(predicted, actual) {
        Ok(v) => v,
        Err(_) => {
            let exact = predicted
                .iter()
                .zip(actual)
                .all(|(p, a)| (p - a).abs() <= 1e-9 * a.abs().max(1.0));
            if exact {
                1.0
            } else {
                0.0
            }
        }
    }
}

fn finish_model(
    kind: EstimatorKind,
    coefficients: [f64; 4],
    intercept: f64,
    rows: &[FeatureRow],
) -> SohModel {
    let model = SohModel {
        kind,
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        coefficients,
        intercept,
        training_meta: TrainingMeta {
            battery_ids: unique_battery_ids(rows),
            row_count: rows.len(),
            train_mae: 0.0,
            train_r2: 0.0,
        },
        format_version: MODEL_FORMAT_VERSION,
    };
    let predicted: Vec<f64> = rows
        .iter()
        .map(|r| predict(&model, r).expect("training rows validated"))
        .collect();
    let actual: Vec<f64> = rows.iter().map(|r| r.soh_percent).collect();
    let train_mae = mae(&predicted, &actual).expect("nonempty training set");
    let train_r2 = train_r2_convention(&predicted, &actual);
    SohModel {
        training_meta: TrainingMeta {
            train_mae,
            train_r2,
            ..model.training_meta
        },
        ..model
    }
}

/// Least squares on the raw design matrix `[features | 1]`, with column
/// equilibration for numerical stability. Returns `(coefficients, intercept)`.
fn lstsq_with_intercept(
    rows: &[FeatureRow],
    row_weights: Option<&[f64]>,
) -> Result<([f64; 4], f64), EstimatorError> {
    let n = rows.len();
    let cols = 5;
    let mut matrix = vec![0.0f64; n * cols];
    let mut rhs = vec![0.0f64; n];
    for (i, row) in rows.iter().enumerate() {
        let f = features_of(row);
        let w = row_weights.map_or(1.0, |w| w[i].sqrt());
        for j in 0..4 {
            matrix[i * cols + j] = w * f[j];
        }
        matrix[i * cols + 4] = w;
        rhs[i] = w * row.soh_percent;
    }
    // Equilibrate columns to unit norm so resistances (~1e-3) and time
    // constants (~1e1) do not skew the factorization.
    let mut scales = vec![0.0f64; cols];
    for j in 0..cols {
        let norm = (0..n).map(|i| matrix[i * cols + j].powi(2)).sum::<f64>().sqrt();
        scales[j] = if norm > 0.0 { norm } else { 1.0 };
        for i in 0..n {
            matrix[i * cols + j] /= scales[j];
        }
    }
    let solved = linalg::householder_lstsq(n, cols, &mut matrix, &mut rhs);
    let collinear_error = |r_diag: Option<&[f64]>| {
        let mut columns = Vec::new();
        match r_diag {
            Some(diag) => {
                let max = diag.iter().cloned().fold(0.0f64, f64::max);
                for (j, d) in diag.iter().enumerate() {
                    if *d <= 1e-10 * max.max(f64::MIN_POSITIVE) {
                        columns.push(column_name(j));
                    }
                }
            }
            None => columns = (0..cols).map(column_name).collect(),
        }
        EstimatorError::Collinear { columns }
    };
    let (scaled, r_diag) = solved.ok_or_else(|| collinear_error(None))?;
    let max_diag = r_diag.iter().cloned().fold(0.0f64, f64::max);
    if r_diag.iter().any(|d| *d <= 1e-10 * max_diag.max(f64::MIN_POSITIVE)) {
        return Err(collinear_error(Some(&r_diag)));
    }
    let mut coefficients = [0.0f64; 4];
    for j in 0..4 {
        coefficients[j] = scaled[j] / scales[j];
    }
    let intercept = scaled[4] / scales[4];
    Ok((coefficients, intercept))
}

fn column_name(j: usize) -> String {
    if j < 4 {
        FEATURE_NAMES[j].to_string()
    } else {
        "intercept".to_string()
    }
}

/// Ordinary least squares, the reference estimator.
pub fn train_ols(rows: &[FeatureRow]) -> Result<SohModel, EstimatorError> {
    validate_rows(rows, 5)?;
    let (coefficients, intercept) = lstsq_with_intercept(rows, None)?;
    Ok(finish_model(EstimatorKind::Ols, coefficients, intercept, rows))
}

/// Feature/label standardization used by the robust estimators.
struct Standardized {
    rows: Vec<FeatureRow>,
    feature_mean: [f64; 4],
    feature_std: [f64; 4],
    label_mean: f64,
    label_std: f64,
}

fn standardize(rows: &[FeatureRow]) -> Result<Standardized, EstimatorError> {
    let n = rows.len() as f64;
    let mut feature_mean = [0.0f64; 4];
    let mut label_mean = 0.0;
    for row in rows {
        let f = features_of(row);
        for j in 0..4 {
            feature_mean[j] += f[j] / n;
        }
        label_mean += row.soh_percent / n;
    }
    let mut feature_var = [0.0f64; 4];
    let mut label_var = 0.0;
    for row in rows {
        let f = features_of(row);
        for j in 0..4 {
            feature_var[j] += (f[j] - feature_mean[j]).powi(2) / n;
        }
        label_var += (row.soh_percent - label_mean).powi(2) / n;
    }
    // Variances are computed from accumulated means, so "constant" columns
    // carry rounding residue; compare against the column's own scale.
    let effectively_zero = |std: f64, mean: f64| std <= 1e-12 * mean.abs().max(1.0);
    let mut feature_std = [0.0f64; 4];
    let mut collinear = Vec::new();
    for j in 0..4 {
        feature_std[j] = feature_var[j].sqrt();
        if effectively_zero(feature_std[j], feature_mean[j]) {
            collinear.push(FEATURE_NAMES[j].to_string());
        }
    }
    if !collinear.is_empty() {
        return Err(EstimatorError::Collinear { columns: collinear });
    }
    let label_std = {
        let raw = label_var.sqrt();
        if effectively_zero(raw, label_mean) {
            0.0
        } else {
            raw
        }
    };
    let rows = rows
        .iter()
        .map(|r| FeatureRow {
            battery_id: r.battery_id.clone(),
            cycle_index: r.cycle_index,
            r1: (r.r1 - feature_mean[0]) / feature_std[0],
            r2: (r.r2 - feature_mean[1]) / feature_std[1],
            tau1: (r.tau1 - feature_mean[2]) / feature_std[2],
            tau2: (r.tau2 - feature_mean[3]) / feature_std[3],
            soh_percent: if label_std > 0.0 {
                (r.soh_percent - label_mean) / label_std
            } else {
                0.0
            },
        })
        .collect();
    Ok(Standardized {
        rows,
        feature_mean,
        feature_std,
        label_mean,
        label_std,
    })
}

fn unstandardize(s: &Standardized, w: [f64; 4], b: f64) -> ([f64; 4], f64) {
    let mut coefficients = [0.0f64; 4];
    let mut intercept = s.label_mean + s.label_std * b;
    for j in 0..4 {
        coefficients[j] = s.label_std * w[j] / s.feature_std[j];
        intercept -= coefficients[j] * s.feature_mean[j];
    }
    (coefficients, intercept)
}

/// Huber M-estimator via iteratively reweighted least squares.
///
/// `transition_scale` is the loss transition point in multiples of the
/// MAD-based robust residual scale; see [`DEFAULT_HUBER_TRANSITION`].
pub fn train_huber(rows: &[FeatureRow], transition_scale: f64) -> Result<SohModel, EstimatorError> {
    validate_rows(rows, 5)?;
    let s = standardize(rows)?;
    if s.label_std == 0.0 {
        // Constant label: the flat model is already the optimum.
        return Ok(finish_model(EstimatorKind::Huber, [0.0; 4], s.label_mean, rows));
    }
    let mut weights = vec![1.0f64; rows.len()];
    let (mut w, mut b) = lstsq_with_intercept(&s.rows, None)?;
    for _ in 0..100 {
        // Residuals at the current iterate (standardized units).
        let mut resid: Vec<f64> = s
            .rows
            .iter()
            .map(|r| {
                let f = features_of(r);
                r.soh_percent - (f.iter().zip(&w).map(|(x, c)| x * c).sum::<f64>() + b)
            })
            .collect();
        let mut abs_dev: Vec<f64> = {
            let center = linalg::median(&mut resid.clone());
            resid.iter().map(|r| (r - center).abs()).collect()
        };
        let scale = 1.4826 * linalg::median(&mut abs_dev);
        if scale <= 1e-12 {
            break; // residuals are numerically zero; OLS solution stands
        }
        let threshold = transition_scale * scale;
        for (i, r) in resid.iter_mut().enumerate() {
            let a = r.abs();
            weights[i] = if a <= threshold { 1.0 } else { threshold / a };
        }
        let (new_w, new_b) = lstsq_with_intercept(&s.rows, Some(&weights))?;
        let change = new_w
            .iter()
            .zip(&w)
            .chain(std::iter::once((&new_b, &b)))
            .map(|(new, old)| (new - old).abs() / old.abs().max(1e-12))
            .fold(0.0f64, f64::max);
        w = new_w;
        b = new_b;
        if change < 1e-8 {
            break;
        }
    }
    let (coefficients, intercept) = unstandardize(&s, w, b);
    Ok(finish_model(EstimatorKind::Huber, coefficients, intercept, rows))
}

/// Multivariate Theil-Sen: component-wise median of exact solutions over
/// seeded random minimal subsets of five rows. Deterministic for a fixed seed.
pub fn train_theil_sen(
    rows: &[FeatureRow],
    max_subsets: usize,
    seed: u64,
) -> Result<SohModel, EstimatorError> {
    validate_rows(rows, 6)?;
    let s = standardize(rows)?;
    if s.label_std == 0.0 {
        return Ok(finish_model(EstimatorKind::TheilSen, [0.0; 4], s.label_mean, rows));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = s.rows.len();
    let mut solutions: Vec<[f64; 5]> = Vec::new();
    for _ in 0..max_subsets {
        let picks = rand::seq::index::sample(&mut rng, n, 5);
        let mut a = [0.0f64; 25];
        let mut b = [0.0f64; 5];
        for (k, idx) in picks.iter().enumerate() {
            let row = &s.rows[idx];
            let f = features_of(row);
            a[k * 5..k * 5 + 4].copy_from_slice(&f);
            a[k * 5 + 4] = 1.0;
            b[k] = row.soh_percent;
        }
        if let Some(x) = linalg::solve_dense(5, &mut a, &mut b) {
            // Discard wildly ill-conditioned subsets; they carry no signal.
            if x.iter().all(|v| v.is_finite() && v.abs() < 1e8) {
                solutions.push([x[0], x[1], x[2], x[3], x[4]]);
            }
        }
    }
    if solutions.is_empty() {
        return Err(EstimatorError::Collinear {
            columns: (0..5).map(column_name).collect(),
        });
    }
    let mut w = [0.0f64; 4];
    for j in 0..4 {
        let mut comp: Vec<f64> = solutions.iter().map(|sol| sol[j]).collect();
        w[j] = linalg::median(&mut comp);
    }
    let mut intercepts: Vec<f64> = solutions.iter().map(|sol| sol[4]).collect();
    let b = linalg::median(&mut intercepts);
    let (coefficients, intercept) = unstandardize(&s, w, b);
    Ok(finish_model(EstimatorKind::TheilSen, coefficients, intercept, rows))
}

/// Trains with the given configuration.
pub fn train(rows: &[FeatureRow], config: &TrainConfig) -> Result<SohModel, EstimatorError> {
    match config {
        TrainConfig::Ols => train_ols(rows),
        TrainConfig::Huber { transition_scale } => train_huber(rows, *transition_scale),
        TrainConfig::TheilSen { max_subsets, seed } => train_theil_sen(rows, *max_subsets, *seed),
    }
}

/// Applies the model to one row. Out-of-range predictions are returned as-is
/// so that extrapolation stays visible.
pub fn predict(model: &SohModel, row: &FeatureRow) -> Result<f64, EstimatorError> {
    let f = features_of(row);
    if !f.iter().all(|v| v.is_finite()) {
        return Err(EstimatorError::NonFiniteFeature {
            battery_id: row.battery_id.clone(),
            cycle_index: row.cycle_index,
        });
    }
    Ok(f.iter()
        .zip(&model.coefficients)
        .map(|(x, c)| x * c)
        .sum::<f64>()
        + model.intercept)
}

/// Mean absolute error, in percentage points.
pub fn mae(predicted: &[f64], actual: &[f64]) -> Result<f64, EstimatorError> {
    if predicted.len() != actual.len() {
        return Err(EstimatorError::LengthMismatch {
            left: predicted.len(),
            right: actual.len(),
        });
    }
    if predicted.is_empty() {
        return Err(EstimatorError::EmptyInput);
    }
    Ok(predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a).abs())
        .sum::<f64>()
        / predicted.len() as f64)
}

/// Coefficient of determination `1 - SS_res / SS_tot`. May be negative.
pub fn r2(predicted: &[f64], actual: &[f64]) -> Result<f64, EstimatorError> {
    if predicted.len() != actual.len() {
        return Err(EstimatorError::LengthMismatch {
            left: predicted.len(),
            right: actual.len(),
        });
    }
    if predicted.len() < 2 {
        return Err(EstimatorError::TooFewRows {
            needed: 2,
            found: predicted.len(),
        });
    }
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(EstimatorError::ZeroVariance);
    }
    let ss_res: f64 = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (a - p).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Trains on the rows of `train_ids` and evaluates every battery of
/// `test_ids` separately. The id sets must be disjoint and nonempty, and all
/// referenced batteries must be present in `rows`.
pub fn cross_battery_eval(
    rows: &[FeatureRow],
    train_ids: &BTreeSet<String>,
    test_ids: &BTreeSet<String>,
    config: &TrainConfig,
) -> Result<(SohModel, EvalReport), EstimatorError> {
    if train_ids.is_empty() || test_ids.is_empty() {
        return Err(EstimatorError::EmptyIdSet);
    }
    let overlap: Vec<String> = train_ids.intersection(test_ids).cloned().collect();
    if !overlap.is_empty() {
        return Err(EstimatorError::OverlappingIds { ids: overlap });
    }
    for id in train_ids.iter().chain(test_ids) {
        if !rows.iter().any(|r| &r.battery_id == id) {
            return Err(EstimatorError::MissingBattery(id.clone()));
        }
    }
    let train_rows: Vec<FeatureRow> = rows
        .iter()
        .filter(|r| train_ids.contains(&r.battery_id))
        .cloned()
        .collect();
    let model = train(&train_rows, config)?;
    let report = evaluate(&model, rows, test_ids)?;
    Ok((model, report))
}

/// Evaluates a trained model on every battery in `test_ids`.
pub fn evaluate(
    model: &SohModel,
    rows: &[FeatureRow],
    test_ids: &BTreeSet<String>,
) -> Result<EvalReport, EstimatorError> {
    if test_ids.is_empty() {
        return Err(EstimatorError::EmptyIdSet);
    }
    let mut per_battery = BTreeMap::new();
    let mut residuals = Vec::new();
    let mut pooled_pred = Vec::new();
    let mut pooled_actual = Vec::new();
    for id in test_ids {
        let battery_rows: Vec<&FeatureRow> =
            rows.iter().filter(|r| &r.battery_id == id).collect();
        if battery_rows.is_empty() {
            return Err(EstimatorError::MissingBattery(id.clone()));
        }
        let mut predicted = Vec::with_capacity(battery_rows.len());
        let mut actual = Vec::with_capacity(battery_rows.len());
        for row in &battery_rows {
            let p = predict(model, row)?;
            predicted.push(p);
            actual.push(row.soh_percent);
            residuals.push(ResidualEntry {
                battery_id: row.battery_id.clone(),
                cycle_index: row.cycle_index,
                predicted: p,
                actual: row.soh_percent,
            });
        }
        let max_abs = predicted
            .iter()
            .zip(&actual)
            .map(|(p, a)| (p - a).abs())
            .fold(0.0f64, f64::max);
        per_battery.insert(
            id.clone(),
            BatteryEval {
                mae_percent: mae(&predicted, &actual)?,
                r2: r2(&predicted, &actual)?,
                max_abs_error_percent: max_abs,
            },
        );
        pooled_pred.extend(predicted);
        pooled_actual.extend(actual);
    }
    Ok(EvalReport {
        mae_percent: mae(&pooled_pred, &pooled_actual)?,
        r2: r2(&pooled_pred, &pooled_actual)?,
        per_battery,
        residuals,
    })
}
