//! Command implementations. Each function takes paths plus parsed options,
//! performs the work through `soh_core`, and writes the output files; the
//! binary in `main.rs` only parses arguments and reports outcomes.

use crate::error::CliError;
use crate::formats::{self, CycleRow, ParamsRow, ReportRow, ResidualRow};
use soh_core::estimator::{self, EvalReport, SohModel, TrainConfig};
use soh_core::identify::{fit_pulse, FitOptions};
use soh_core::pipeline::{
    apply_corrections, build_features, compute_soh, trim_burn_in, CycleRecord, SohReference,
};
use soh_core::simbench::{simulate_campaign, standard_campaign, BatterySpec, DriftProfile};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

/// Outcome of `fit`: rows written plus per-file failures (the run continues
/// past individual fit errors; the caller decides the exit status).
pub struct FitOutcome {
    pub rows: usize,
    pub failures: Vec<(PathBuf, String)>,
}

/// Fits every trace file and writes one params row per successful fit,
/// ordered by (battery_id, cycle_index).
pub fn cmd_fit(
    inputs: &[PathBuf],
    options: &FitOptions,
    out: &Path,
) -> Result<FitOutcome, CliError> {
    if inputs.is_empty() {
        return Err(CliError::Usage("fit: no input trace files given".into()));
    }
    // Identify every file first so duplicate keys fail before any fitting.
    let mut seen: BTreeMap<(String, u32), PathBuf> = BTreeMap::new();
    for path in inputs {
        let key = formats::parse_trace_filename(path)?;
        if seen.contains_key(&key) {
            return Err(CliError::DuplicateKey {
                battery_id: key.0,
                cycle_index: key.1,
                path: path.clone(),
            });
        }
        seen.insert(key, path.clone());
    }
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for ((battery_id, cycle_index), path) in seen {
        let trace = match formats::read_trace(&path) {
            Ok(t) => t,
            Err(e) => {
                failures.push((path, e.to_string()));
                continue;
            }
        };
        match fit_pulse(&trace, options) {
            Ok(report) => rows.push(ParamsRow {
                battery_id,
                cycle_index,
                params: report.params,
                sse: report.sse,
                converged: report.converged,
                residual_rms: report.residual_rms,
            }),
            Err(e) => failures.push((path, e.to_string())),
        }
    }
    formats::write_params(out, &rows)?;
    Ok(FitOutcome {
        rows: rows.len(),
        failures,
    })
}

/// Joins fitted parameters with the cycle capacity log, applies declared
/// corrections, labels SoH, trims the burn-in, smooths, and writes features.
pub fn cmd_pipeline(
    params_path: &Path,
    cycles_path: &Path,
    corrections_path: Option<&Path>,
    window: usize,
    reference: SohReference,
    out: &Path,
) -> Result<usize, CliError> {
    let params = formats::read_params(params_path)?;
    let cycles = formats::read_cycles(cycles_path)?;

    let mut capacity: BTreeMap<(String, u32), f64> = BTreeMap::new();
    for row in &cycles {
        let key = (row.battery_id.clone(), row.cycle_index);
        if capacity.insert(key, row.discharged_ah).is_some() {
            return Err(CliError::DuplicateKey {
                battery_id: row.battery_id.clone(),
                cycle_index: row.cycle_index,
                path: cycles_path.to_path_buf(),
            });
        }
    }
    let mut records: BTreeMap<(String, u32), CycleRecord> = BTreeMap::new();
    let mut orphan_params = Vec::new();
    for row in &params {
        let key = (row.battery_id.clone(), row.cycle_index);
        match capacity.get(&key) {
            Some(&discharged_ah) => {
                let clash = records.insert(
                    key,
                    CycleRecord {
                        battery_id: row.battery_id.clone(),
                        cycle_index: row.cycle_index,
                        discharged_ah,
                        params: row.params,
                        soh_percent: None,
                    },
                );
                if clash.is_some() {
                    return Err(CliError::DuplicateKey {
                        battery_id: row.battery_id.clone(),
                        cycle_index: row.cycle_index,
                        path: params_path.to_path_buf(),
                    });
                }
            }
            None => orphan_params.push(format!("({}, {})", row.battery_id, row.cycle_index)),
        }
    }
    if !orphan_params.is_empty() {
        return Err(CliError::JoinMismatch(format!(
            "{} params rows have no cycles row: {}",
            orphan_params.len(),
            preview(&orphan_params)
        )));
    }
    let orphan_cycles: Vec<String> = capacity
        .keys()
        .filter(|key| !records.contains_key(*key))
        .map(|(b, c)| format!("({b}, {c})"))
        .collect();
    if !orphan_cycles.is_empty() {
        return Err(CliError::JoinMismatch(format!(
            "{} cycles rows have no params row: {}",
            orphan_cycles.len(),
            preview(&orphan_cycles)
        )));
    }

    // BTreeMap order is (battery_id, cycle_index) ascending, which is the
    // ordering the pipeline stages expect.
    let ordered: Vec<CycleRecord> = records.into_values().collect();
    let corrected = match corrections_path {
        Some(path) => apply_corrections(&ordered, &formats::read_corrections(path)?)?,
        None => ordered,
    };
    let labeled = compute_soh(&corrected, reference)?;
    let trimmed = trim_burn_in(&labeled);
    let rows = build_features(&trimmed, window)?;
    formats::write_features(out, &rows)?;
    Ok(rows.len())
}

fn preview(keys: &[String]) -> String {
    const SHOW: usize = 8;
    if keys.len() <= SHOW {
        keys.join(", ")
    } else {
        format!("{}, ... ({} more)", keys[..SHOW].join(", "), keys.len() - SHOW)
    }
}

/// Trains an estimator on the given batteries and writes the model JSON.
pub fn cmd_train(
    features_path: &Path,
    train_ids: &BTreeSet<String>,
    config: &TrainConfig,
    model_out: &Path,
) -> Result<SohModel, CliError> {
    if train_ids.is_empty() {
        return Err(CliError::Usage("train: no training battery ids given".into()));
    }
    let rows = formats::read_features(features_path)?;
    for id in train_ids {
        if !rows.iter().any(|r| &r.battery_id == id) {
            return Err(CliError::Estimator(
                estimator::EstimatorError::MissingBattery(id.clone()),
            ));
        }
    }
    let train_rows: Vec<_> = rows
        .iter()
        .filter(|r| train_ids.contains(&r.battery_id))
        .cloned()
        .collect();
    let model = estimator::train(&train_rows, config)?;
    let mut text = model.to_json()?;
    text.push('\n');
    formats::write_file(model_out, &text)?;
    Ok(model)
}

/// Evaluates a stored model on the given test batteries, writing the
/// per-battery report and the per-cycle residuals.
pub fn cmd_eval(
    features_path: &Path,
    model_path: &Path,
    test_ids: &BTreeSet<String>,
    report_out: &Path,
    residuals_out: &Path,
) -> Result<EvalReport, CliError> {
    if test_ids.is_empty() {
        return Err(CliError::Usage("eval: no test battery ids given".into()));
    }
    let text =
        std::fs::read_to_string(model_path).map_err(|source| CliError::Io {
            path: model_path.to_path_buf(),
            source,
        })?;
    let model = SohModel::from_json(&text).map_err(|e| CliError::Json {
        path: model_path.to_path_buf(),
        message: e.to_string(),
    })?;
    let trained_on: BTreeSet<String> = model.training_meta.battery_ids.iter().cloned().collect();
    let overlap: Vec<String> = test_ids.intersection(&trained_on).cloned().collect();
    if !overlap.is_empty() {
        return Err(CliError::Usage(format!(
            "eval: test batteries overlap the model's training set: {}",
            overlap.join(", ")
        )));
    }
    let rows = formats::read_features(features_path)?;
    let report = estimator::evaluate(&model, &rows, test_ids)?;

    let report_rows: Vec<ReportRow> = report
        .per_battery
        .iter()
        .map(|(id, b)| ReportRow {
            battery_id: id.clone(),
            mae_percent: b.mae_percent,
            r2: b.r2,
            max_abs_error_percent: b.max_abs_error_percent,
        })
        .collect();
    formats::write_file(report_out, &formats::render_report(&report_rows))?;

    let mut residual_rows: Vec<ResidualRow> = report
        .residuals
        .iter()
        .map(|r| ResidualRow {
            battery_id: r.battery_id.clone(),
            cycle_index: r.cycle_index,
            predicted: r.predicted,
            actual: r.actual,
        })
        .collect();
    residual_rows.sort_by(|a, b| {
        (&a.battery_id, a.cycle_index).cmp(&(&b.battery_id, b.cycle_index))
    });
    formats::write_file(residuals_out, &formats::render_residuals(&residual_rows))?;
    Ok(report)
}

/// What `simulate` wrote.
pub struct SimulateOutcome {
    pub trace_files: usize,
    pub cycles_path: PathBuf,
    pub ground_truth_path: PathBuf,
    pub traces_dir: PathBuf,
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Generates a campaign and writes per-pulse trace CSVs plus the cycles and
/// ground-truth CSVs. Identical seeds and inputs produce byte-identical files.
pub fn cmd_simulate(
    out_dir: &Path,
    seed: u64,
    n_batteries: u32,
    n_cycles: u32,
    spec_file: Option<&Path>,
    profile_file: Option<&Path>,
) -> Result<SimulateOutcome, CliError> {
    let (default_specs, default_profile) = standard_campaign(n_batteries, n_cycles, seed);
    let specs: Vec<BatterySpec> = match spec_file {
        Some(path) => load_json(path)?,
        None => default_specs,
    };
    let profile: DriftProfile = match profile_file {
        Some(path) => load_json(path)?,
        None => default_profile,
    };
    let mut ids = BTreeSet::new();
    for spec in &specs {
        let id = &spec.battery_id;
        if id.is_empty() || id.contains(',') || id.contains('/') || id.contains('\\') {
            return Err(CliError::Usage(format!("simulate: invalid battery id '{id}'")));
        }
        if !ids.insert(id.clone()) {
            return Err(CliError::Usage(format!("simulate: duplicate battery id '{id}'")));
        }
    }

    let campaign = simulate_campaign(&specs, &profile, seed)?;

    let traces_dir = out_dir.join("traces");
    std::fs::create_dir_all(&traces_dir).map_err(|source| CliError::Io {
        path: traces_dir.clone(),
        source,
    })?;
    for trace in &campaign.traces {
        let name = formats::trace_filename(&trace.meta().battery_id, trace.meta().cycle_index);
        formats::write_trace(&traces_dir.join(name), trace)?;
    }

    let cycles: Vec<CycleRow> = campaign
        .truths
        .iter()
        .map(|t| CycleRow {
            battery_id: t.battery_id.clone(),
            cycle_index: t.cycle_index,
            discharged_ah: t.discharged_ah,
        })
        .collect();
    let cycles_path = out_dir.join("cycles.csv");
    formats::write_cycles(&cycles_path, &cycles)?;

    let truth_rows: Vec<formats::GroundTruthRow> =
        campaign.truths.iter().map(Into::into).collect();
    let ground_truth_path = out_dir.join("ground_truth.csv");
    formats::write_file(&ground_truth_path, &formats::render_ground_truth(&truth_rows))?;

    Ok(SimulateOutcome {
        trace_files: campaign.traces.len(),
        cycles_path,
        ground_truth_path,
        traces_dir,
    })
}
