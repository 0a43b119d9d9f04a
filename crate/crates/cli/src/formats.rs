//! File formats shared by every subcommand.
//!
//! | file            | header                                                                   |
//! |-----------------|--------------------------------------------------------------------------|
//! | pulse trace     | `t_s,current_a,voltage_delta_v` (one file per pulse, named `b<id>_c<n>.csv`) |
//! | params          | `battery_id,cycle_index,r_int,r1,tau1,r2,tau2,sse,converged,residual_rms` |
//! | cycles          | `battery_id,cycle_index,discharged_ah`                                    |
//! | corrections     | `battery_id,cycle_from,cycle_to,delta_ah`                                  |
//! | features        | `battery_id,cycle_index,r1,r2,tau1,tau2,soh_percent`                       |
//! | ground truth    | `battery_id,cycle_index,true_soh_percent,r_int,r1,tau1,r2,tau2`            |
//! | eval report     | `battery_id,mae_percent,r2,max_abs_error_percent`                          |
//! | residuals       | `battery_id,cycle_index,predicted_soh_percent,actual_soh_percent,error_percent` |
//!
//! Floats are written with 12 significant digits in scientific notation;
//! re-emitting a parsed file reproduces it byte for byte. Units are fixed
//! (seconds, amperes, volts, ohms, amp-hours, percent) and never embedded in
//! values. Trained models are stored as JSON, see [`soh_core::SohModel`].

use crate::error::CliError;
use soh_core::ecm::{EcmParams, PulseTrace, Sample, TraceMeta};
use soh_core::pipeline::{Correction, FeatureRow};
use soh_core::simbench::CycleTruth;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub const TRACE_HEADER: &str = "t_s,current_a,voltage_delta_v";
pub const PARAMS_HEADER: &str =
    "battery_id,cycle_index,r_int,r1,tau1,r2,tau2,sse,converged,residual_rms";
pub const CYCLES_HEADER: &str = "battery_id,cycle_index,discharged_ah";
pub const CORRECTIONS_HEADER: &str = "battery_id,cycle_from,cycle_to,delta_ah";
pub const FEATURES_HEADER: &str = "battery_id,cycle_index,r1,r2,tau1,tau2,soh_percent";
pub const GROUND_TRUTH_HEADER: &str =
    "battery_id,cycle_index,true_soh_percent,r_int,r1,tau1,r2,tau2";
pub const REPORT_HEADER: &str = "battery_id,mae_percent,r2,max_abs_error_percent";
pub const RESIDUALS_HEADER: &str =
    "battery_id,cycle_index,predicted_soh_percent,actual_soh_percent,error_percent";

/// 12 significant digits, scientific notation. Strings produced here parse
/// back to an f64 that formats to the same string again.
pub fn format_float(value: f64) -> String {
    debug_assert!(value.is_finite());
    format!("{value:.11e}")
}

/// One row of a params CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamsRow {
    pub battery_id: String,
    pub cycle_index: u32,
    pub params: EcmParams,
    pub sse: f64,
    pub converged: bool,
    pub residual_rms: f64,
}

/// One row of a cycles CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleRow {
    pub battery_id: String,
    pub cycle_index: u32,
    pub discharged_ah: f64,
}

/// One row of a residuals CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRow {
    pub battery_id: String,
    pub cycle_index: u32,
    pub predicted: f64,
    pub actual: f64,
}

/// One row of an eval report CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub battery_id: String,
    pub mae_percent: f64,
    pub r2: f64,
    pub max_abs_error_percent: f64,
}

/// Filename carrying a pulse's identity: `b<battery_id>_c<cycle_index>.csv`.
pub fn trace_filename(battery_id: &str, cycle_index: u32) -> String {
    format!("b{battery_id}_c{cycle_index}.csv")
}

/// Inverse of [`trace_filename`]. Splits on the last `_c` so battery ids may
/// themselves contain underscores.
pub fn parse_trace_filename(path: &Path) -> Result<(String, u32), CliError> {
    let bad = || CliError::BadTraceName {
        path: path.to_path_buf(),
    };
    let stem = path
        .file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_suffix(".csv"))
        .ok_or_else(bad)?;
    let rest = stem.strip_prefix('b').ok_or_else(bad)?;
    let (battery_id, cycle) = rest.rsplit_once("_c").ok_or_else(bad)?;
    if battery_id.is_empty() {
        return Err(bad());
    }
    let cycle_index: u32 = cycle.parse().map_err(|_| bad())?;
    Ok((battery_id.to_string(), cycle_index))
}

fn read_to_string(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Splits CSV text into non-empty lines, checking the header. Line numbers
/// reported to the caller are 1-based file lines.
fn body_lines<'a>(
    path: &Path,
    text: &'a str,
    header: &str,
) -> Result<Vec<(usize, &'a str)>, CliError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first == header => {}
        Some((_, first)) => {
            return Err(CliError::Csv {
                path: path.to_path_buf(),
                line: 1,
                message: format!("expected header '{header}', found '{first}'"),
            })
        }
        None => {
            return Err(CliError::Csv {
                path: path.to_path_buf(),
                line: 1,
                message: format!("empty file, expected header '{header}'"),
            })
        }
    }
    Ok(lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| (i + 1, l))
        .collect())
}

fn split_fields<'a>(
    path: &Path,
    line_no: usize,
    line: &'a str,
    expected: usize,
) -> Result<Vec<&'a str>, CliError> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != expected {
        return Err(CliError::Csv {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("expected {expected} fields, found {}", fields.len()),
        });
    }
    Ok(fields)
}

fn parse_f64(path: &Path, line: usize, field: &str, what: &str) -> Result<f64, CliError> {
    field.parse::<f64>().map_err(|_| CliError::Csv {
        path: path.to_path_buf(),
        line,
        message: format!("cannot parse {what} from '{field}'"),
    })
}

fn parse_u32(path: &Path, line: usize, field: &str, what: &str) -> Result<u32, CliError> {
    field.parse::<u32>().map_err(|_| CliError::Csv {
        path: path.to_path_buf(),
        line,
        message: format!("cannot parse {what} from '{field}'"),
    })
}

fn validate_battery_id(path: &Path, line: usize, id: &str) -> Result<String, CliError> {
    if id.is_empty() || id.contains(',') || id.contains('/') || id.contains('\\') {
        return Err(CliError::Csv {
            path: path.to_path_buf(),
            line,
            message: format!("invalid battery id '{id}'"),
        });
    }
    Ok(id.to_string())
}

// ---------------------------------------------------------------- traces

pub fn render_trace(trace: &PulseTrace) -> String {
    let mut out = String::with_capacity(32 * trace.samples().len());
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for s in trace.samples() {
        let _ = writeln!(
            out,
            "{},{},{}",
            format_float(s.t_s),
            format_float(s.current_a),
            format_float(s.voltage_delta_v)
        );
    }
    out
}

pub fn write_trace(path: &Path, trace: &PulseTrace) -> Result<(), CliError> {
    write_file(path, &render_trace(trace))
}

pub fn read_trace(path: &Path) -> Result<PulseTrace, CliError> {
    let (battery_id, cycle_index) = parse_trace_filename(path)?;
    let text = read_to_string(path)?;
    let mut samples = Vec::new();
    for (line_no, line) in body_lines(path, &text, TRACE_HEADER)? {
        let f = split_fields(path, line_no, line, 3)?;
        samples.push(Sample {
            t_s: parse_f64(path, line_no, f[0], "t_s")?,
            current_a: parse_f64(path, line_no, f[1], "current_a")?,
            voltage_delta_v: parse_f64(path, line_no, f[2], "voltage_delta_v")?,
        });
    }
    PulseTrace::new(
        samples,
        TraceMeta {
            battery_id,
            cycle_index,
            ambient_temp_celsius: None,
        },
    )
    .map_err(|e| CliError::Csv {
        path: path.to_path_buf(),
        line: 1,
        message: format!("invalid trace: {e}"),
    })
}

// ---------------------------------------------------------------- params

pub fn render_params(rows: &[ParamsRow]) -> String {
    let mut out = String::new();
    out.push_str(PARAMS_HEADER);
    out.push('\n');
    for r in rows {
        let p = r.params.to_array();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.battery_id,
            r.cycle_index,
            format_float(p[0]),
            format_float(p[1]),
            format_float(p[2]),
            format_float(p[3]),
            format_float(p[4]),
            format_float(r.sse),
            r.converged,
            format_float(r.residual_rms)
        );
    }
    out
}

pub fn write_params(path: &Path, rows: &[ParamsRow]) -> Result<(), CliError> {
    write_file(path, &render_params(rows))
}

pub fn read_params(path: &Path) -> Result<Vec<ParamsRow>, CliError> {
    let text = read_to_string(path)?;
    let mut rows = Vec::new();
    for (line_no, line) in body_lines(path, &text, PARAMS_HEADER)? {
        let f = split_fields(path, line_no, line, 10)?;
        let params = EcmParams::new(
            parse_f64(path, line_no, f[2], "r_int")?,
            parse_f64(path, line_no, f[3], "r1")?,
            parse_f64(path, line_no, f[4], "tau1")?,
            parse_f64(path, line_no, f[5], "r2")?,
            parse_f64(path, line_no, f[6], "tau2")?,
        )
        .map_err(|e| CliError::Csv {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        let converged = match f[8] {
            "true" => true,
            "false" => false,
            other => {
                return Err(CliError::Csv {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: format!("cannot parse converged flag from '{other}'"),
                })
            }
        };
        rows.push(ParamsRow {
            battery_id: validate_battery_id(path, line_no, f[0])?,
            cycle_index: parse_u32(path, line_no, f[1], "cycle_index")?,
            params,
            sse: parse_f64(path, line_no, f[7], "sse")?,
            converged,
            residual_rms: parse_f64(path, line_no, f[9], "residual_rms")?,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------- cycles

pub fn render_cycles(rows: &[CycleRow]) -> String {
    let mut out = String::new();
    out.push_str(CYCLES_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{}",
            r.battery_id,
            r.cycle_index,
            format_float(r.discharged_ah)
        );
    }
    out
}

pub fn write_cycles(path: &Path, rows: &[CycleRow]) -> Result<(), CliError> {
    write_file(path, &render_cycles(rows))
}

pub fn read_cycles(path: &Path) -> Result<Vec<CycleRow>, CliError> {
    let text = read_to_string(path)?;
    let mut rows = Vec::new();
    for (line_no, line) in body_lines(path, &text, CYCLES_HEADER)? {
        let f = split_fields(path, line_no, line, 3)?;
        rows.push(CycleRow {
            battery_id: validate_battery_id(path, line_no, f[0])?,
            cycle_index: parse_u32(path, line_no, f[1], "cycle_index")?,
            discharged_ah: parse_f64(path, line_no, f[2], "discharged_ah")?,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------- corrections

pub fn read_corrections(path: &Path) -> Result<Vec<Correction>, CliError> {
    let text = read_to_string(path)?;
    let mut rows = Vec::new();
    for (line_no, line) in body_lines(path, &text, CORRECTIONS_HEADER)? {
        let f = split_fields(path, line_no, line, 4)?;
        let correction = Correction::new(
            validate_battery_id(path, line_no, f[0])?,
            parse_u32(path, line_no, f[1], "cycle_from")?,
            parse_u32(path, line_no, f[2], "cycle_to")?,
            parse_f64(path, line_no, f[3], "delta_ah")?,
        )
        .map_err(|e| CliError::Csv {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        rows.push(correction);
    }
    Ok(rows)
}

// ---------------------------------------------------------------- features

pub fn render_features(rows: &[FeatureRow]) -> String {
    let mut out = String::new();
    out.push_str(FEATURES_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.battery_id,
            r.cycle_index,
            format_float(r.r1),
            format_float(r.r2),
            format_float(r.tau1),
            format_float(r.tau2),
            format_float(r.soh_percent)
        );
    }
    out
}

pub fn write_features(path: &Path, rows: &[FeatureRow]) -> Result<(), CliError> {
    write_file(path, &render_features(rows))
}

pub fn read_features(path: &Path) -> Result<Vec<FeatureRow>, CliError> {
    let text = read_to_string(path)?;
    let mut rows = Vec::new();
    for (line_no, line) in body_lines(path, &text, FEATURES_HEADER)? {
        let f = split_fields(path, line_no, line, 7)?;
        rows.push(FeatureRow {
            battery_id: validate_battery_id(path, line_no, f[0])?,
            cycle_index: parse_u32(path, line_no, f[1], "cycle_index")?,
            r1: parse_f64(path, line_no, f[2], "r1")?,
            r2: parse_f64(path, line_no, f[3], "r2")?,
            tau1: parse_f64(path, line_no, f[4], "tau1")?,
            tau2: parse_f64(path, line_no, f[5], "tau2")?,
            soh_percent: parse_f64(path, line_no, f[6], "soh_percent")?,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------- ground truth

/// One row of a ground-truth CSV, used by oracle comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRow {
    pub battery_id: String,
    pub cycle_index: u32,
    pub true_soh_percent: f64,
    pub true_params: EcmParams,
}

impl From<&CycleTruth> for GroundTruthRow {
    fn from(t: &CycleTruth) -> Self {
        GroundTruthRow {
            battery_id: t.battery_id.clone(),
            cycle_index: t.cycle_index,
            true_soh_percent: t.true_soh_percent,
            true_params: t.true_params,
        }
    }
}

pub fn render_ground_truth(rows: &[GroundTruthRow]) -> String {
    let mut out = String::new();
    out.push_str(GROUND_TRUTH_HEADER);
    out.push('\n');
    for t in rows {
        let p = t.true_params.to_array();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            t.battery_id,
            t.cycle_index,
            format_float(t.true_soh_percent),
            format_float(p[0]),
            format_float(p[1]),
            format_float(p[2]),
            format_float(p[3]),
            format_float(p[4])
        );
    }
    out
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthRow>, CliError> {
    let text = read_to_string(path)?;
    let mut rows = Vec::new();
    for (line_no, line) in body_lines(path, &text, GROUND_TRUTH_HEADER)? {
        let f = split_fields(path, line_no, line, 8)?;
        let true_params = EcmParams::new(
            parse_f64(path, line_no, f[3], "r_int")?,
            parse_f64(path, line_no, f[4], "r1")?,
            parse_f64(path, line_no, f[5], "tau1")?,
            parse_f64(path, line_no, f[6], "r2")?,
            parse_f64(path, line_no, f[7], "tau2")?,
        )
        .map_err(|e| CliError::Csv {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        rows.push(GroundTruthRow {
            battery_id: validate_battery_id(path, line_no, f[0])?,
            cycle_index: parse_u32(path, line_no, f[1], "cycle_index")?,
            true_soh_percent: parse_f64(path, line_no, f[2], "true_soh_percent")?,
            true_params,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------- eval outputs

pub fn render_report(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    out.push_str(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.battery_id,
            format_float(r.mae_percent),
            format_float(r.r2),
            format_float(r.max_abs_error_percent)
        );
    }
    out
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>, CliError> {
    let text = read_to_string(path)?;
    let mut rows = Vec::new();
    for (line_no, line) in body_lines(path, &text, REPORT_HEADER)? {
        let f = split_fields(path, line_no, line, 4)?;
        rows.push(ReportRow {
            battery_id: validate_battery_id(path, line_no, f[0])?,
            mae_percent: parse_f64(path, line_no, f[1], "mae_percent")?,
            r2: parse_f64(path, line_no, f[2], "r2")?,
            max_abs_error_percent: parse_f64(path, line_no, f[3], "max_abs_error_percent")?,
        });
    }
    Ok(rows)
}

pub fn render_residuals(rows: &[ResidualRow]) -> String {
    let mut out = String::new();
    out.push_str(RESIDUALS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.battery_id,
            r.cycle_index,
            format_float(r.predicted),
            format_float(r.actual),
            format_float(r.predicted - r.actual)
        );
    }
    out
}
