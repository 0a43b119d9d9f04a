//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! (run with `--nocapture` to see them on success).
//!
//! A1  model correctness against a double-double oracle
//! A2  identification round-trip, noiseless and noisy
//! A3  the [1s, 10s] window beats [0s, 10s] under an unmodeled fast transient
//! A4  cross-battery estimation regime on the default synthetic campaign
//! A5  capacity-correction effect direction and restoration
//! A6  metric implementations against naive-loop oracles
//! A7  estimator invariants (orthogonality, scaling equivariance, determinism)
//! A8  byte-stable file round-trips and seeded reproducibility

mod dd;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use soh_cli::commands::{cmd_eval, cmd_fit, cmd_pipeline, cmd_simulate, cmd_train};
use soh_cli::formats;
use soh_core::ecm::{self, EcmParams, FitWindow, PulseTrace, Sample, TraceMeta};
use soh_core::estimator::{
    self, cross_battery_eval, predict, train_ols, train_theil_sen, SohModel, TrainConfig,
};
use soh_core::identify::{fit_pulse, FitOptions};
use soh_core::pipeline::{
    apply_corrections, build_features, compute_soh, trim_burn_in, Correction, CycleRecord,
    FeatureRow, SohReference,
};
use soh_core::simbench::{self, simulate_campaign, BatterySpec, DriftProfile, SimulatedCampaign};
use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

fn criterion(name: &str, pass: bool, detail: &str) {
    println!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

fn ids(list: &[&str]) -> BTreeSet<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn meta() -> TraceMeta {
    TraceMeta {
        battery_id: "1".into(),
        cycle_index: 0,
        ambient_temp_celsius: Some(21.0),
    }
}

// ===================================================================== A1

#[test]
fn a1_model_correctness() {
    let mut rng = ChaCha12Rng::seed_from_u64(0xA1);
    let mut worst_response: f64 = 0.0;
    let mut worst_jacobian: f64 = 0.0;
    for _ in 0..1000 {
        let p = [
            rng.random_range(1e-4..1e-2),
            rng.random_range(1e-4..1e-2),
            rng.random_range(0.3..3.0),
            rng.random_range(1e-4..1e-2),
            rng.random_range(5.0..50.0),
        ];
        let current = -rng.random_range(5.0..120.0);
        let t = rng.random_range(0.1..12.0);
        let params = EcmParams::from_array(p).unwrap();

        let got = ecm::pulse_response(&params, current, t).unwrap();
        let reference = dd::response_dd(&p, current, t).to_f64();
        let rel = ((got - reference) / reference).abs();
        worst_response = worst_response.max(rel);

        let analytic = ecm::jacobian(&params, current, t).unwrap();
        for k in 0..5 {
            let h = 1e-6 * p[k];
            let mut up = p;
            let mut dn = p;
            up[k] += h;
            dn[k] -= h;
            // Central difference evaluated in double-double so the
            // subtraction keeps the cancelled digits.
            let diff = dd::response_dd(&up, current, t).sub(dd::response_dd(&dn, current, t));
            let fd = diff.to_f64() / (up[k] - dn[k]);
            let rel = ((analytic[k] - fd) / fd).abs();
            worst_jacobian = worst_jacobian.max(rel);
        }
    }
    criterion(
        "A1 model correctness",
        worst_response <= 1e-12 && worst_jacobian <= 1e-5,
        &format!(
            "1000 draws: worst response rel err {worst_response:.2e} (<=1e-12), \
             worst jacobian rel err {worst_jacobian:.2e} (<=1e-5)"
        ),
    );
}

// ===================================================================== A2

fn oracle_battery(voltage_sigma: f64) -> (Vec<BatterySpec>, DriftProfile) {
    let spec = BatterySpec {
        battery_id: "1".into(),
        nominal_ah: 105.0,
        pulse_current: -60.0,
        pulse_duration: 10.0,
        sample_rate: 10.0,
        burn_in_cycles: 10,
        n_cycles: 100,
        ambient_temp_celsius: 21.0,
    };
    let profile = DriftProfile {
        voltage_sigma,
        capacity_sigma_ah: 0.0,
        param_jitter_rel: 0.0,
        ..simbench::default_profile()
    };
    (vec![spec], profile)
}

#[test]
fn a2_identification_round_trip() {
    // Noiseless: every parameter within 1e-4 relative on 100 traces.
    let (specs, profile) = oracle_battery(0.0);
    let campaign = simulate_campaign(&specs, &profile, 0xA2).unwrap();
    let options = FitOptions::default();
    let mut worst_noiseless: f64 = 0.0;
    for (truth, trace) in campaign.truths.iter().zip(&campaign.traces) {
        let got = fit_pulse(trace, &options).unwrap().params.to_array();
        let want = truth.true_params.to_array();
        for k in 0..5 {
            worst_noiseless = worst_noiseless.max(((got[k] - want[k]) / want[k]).abs());
        }
    }

    // Noisy: median relative errors bounded per parameter.
    let (specs, profile) = oracle_battery(1e-4);
    let campaign = simulate_campaign(&specs, &profile, 0xA2).unwrap();
    let mut errors: [Vec<f64>; 5] = Default::default();
    for (truth, trace) in campaign.truths.iter().zip(&campaign.traces) {
        let got = fit_pulse(trace, &options).unwrap().params.to_array();
        let want = truth.true_params.to_array();
        for k in 0..5 {
            errors[k].push(((got[k] - want[k]) / want[k]).abs());
        }
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let m_r1 = median(&mut errors[1]);
    let m_tau1 = median(&mut errors[2]);
    let m_r2 = median(&mut errors[3]);
    let m_tau2 = median(&mut errors[4]);

    let pass = worst_noiseless <= 1e-4
        && m_r1 <= 0.10
        && m_r2 <= 0.10
        && m_tau1 <= 0.20
        && m_tau2 <= 0.20;
    criterion(
        "A2 identification round-trip",
        pass,
        &format!(
            "noiseless worst rel err {worst_noiseless:.2e} (<=1e-4); noisy medians \
             r1 {m_r1:.3} r2 {m_r2:.3} (<=0.10), tau1 {m_tau1:.3} tau2 {m_tau2:.3} (<=0.20)"
        ),
    );
}

// ===================================================================== A3

#[test]
fn a3_window_rationale() {
    let base = EcmParams::new(1e-3, 5e-4, 1.0, 8e-4, 20.0).unwrap();
    let current = -60.0;
    let (r_fast, tau_fast) = (4e-4, 0.05);
    let noise = Normal::new(0.0, 1e-4).unwrap();
    let eval_window = FitWindow::new(1.0, 10.0).unwrap();
    let narrow = FitOptions::default();
    let wide = FitOptions {
        window: FitWindow::new(0.0, 10.0).unwrap(),
        ..FitOptions::default()
    };
    let mut narrow_wins = 0;
    let seeds = 100;
    for seed in 0..seeds {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let samples: Vec<Sample> = (0..101)
            .map(|i| {
                let t = i as f64 * 0.1;
                let clean = ecm::pulse_response(&base, current, t).unwrap()
                    + current * r_fast * (1.0 - (-t / tau_fast).exp());
                Sample {
                    t_s: t,
                    current_a: current,
                    voltage_delta_v: clean + noise.sample(&mut rng),
                }
            })
            .collect();
        let trace = PulseTrace::new(samples, meta()).unwrap();
        let fit_narrow = fit_pulse(&trace, &narrow).unwrap();
        let fit_wide = fit_pulse(&trace, &wide).unwrap();
        let sse_narrow = ecm::sse(&fit_narrow.params, &trace, &eval_window).unwrap();
        let sse_wide = ecm::sse(&fit_wide.params, &trace, &eval_window).unwrap();
        if sse_narrow < sse_wide {
            narrow_wins += 1;
        }
    }
    criterion(
        "A3 window rationale",
        narrow_wins >= 95,
        &format!("[1,10] fit beat [0,10] fit on [1,10] SSE in {narrow_wins}/{seeds} seeds (>=95)"),
    );
}

// ===================================================================== A4

const CAMPAIGN_SEED: u64 = 77;
/// Rows per battery whose sliding mean still averages a partial window.
const WARM_UP_ROWS: usize = 19;

fn drop_warm_up(rows: &[FeatureRow]) -> Vec<FeatureRow> {
    let mut batteries: Vec<&str> = Vec::new();
    for r in rows {
        if !batteries.contains(&r.battery_id.as_str()) {
            batteries.push(&r.battery_id);
        }
    }
    let mut out = Vec::new();
    for battery in batteries {
        out.extend(
            rows.iter()
                .filter(|r| r.battery_id == battery)
                .skip(WARM_UP_ROWS)
                .cloned(),
        );
    }
    out
}

#[test]
fn a4_cross_battery_regime() {
    // Full path through the file formats: simulate -> fit -> pipeline ->
    // train on batteries 3 and 4 -> evaluate on batteries 1 and 2.
    let dir = tempfile::tempdir().unwrap();
    let camp = dir.path().join("camp");
    cmd_simulate(&camp, CAMPAIGN_SEED, 4, 400, None, None).unwrap();

    let traces: Vec<PathBuf> = fs::read_dir(camp.join("traces"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    let params = dir.path().join("params.csv");
    let outcome = cmd_fit(&traces, &FitOptions::default(), &params).unwrap();
    assert!(outcome.failures.is_empty(), "{:?}", outcome.failures);

    let features = dir.path().join("features.csv");
    cmd_pipeline(
        &params,
        &camp.join("cycles.csv"),
        None,
        20,
        SohReference::PerBatteryMax,
        &features,
    )
    .unwrap();

    // The first rows after the burn-in trim average a partial window; the
    // estimator is judged on fully smoothed rows.
    let all_rows = formats::read_features(&features).unwrap();
    let eval_rows = drop_warm_up(&all_rows);
    let features_eval = dir.path().join("features_eval.csv");
    formats::write_features(&features_eval, &eval_rows).unwrap();

    let model_path = dir.path().join("model.json");
    cmd_train(&features_eval, &ids(&["3", "4"]), &TrainConfig::Ols, &model_path).unwrap();
    let report = cmd_eval(
        &features_eval,
        &model_path,
        &ids(&["1", "2"]),
        &dir.path().join("report.csv"),
        &dir.path().join("residuals.csv"),
    )
    .unwrap();

    let mut detail = String::new();
    let mut pass = true;
    for (id, b) in &report.per_battery {
        detail.push_str(&format!(
            "battery {id}: MAE {:.3}% (<=1.3), R2 {:.3} (>=0.75); ",
            b.mae_percent, b.r2
        ));
        pass &= b.mae_percent <= 1.3 && b.r2 >= 0.75;
    }
    criterion("A4 cross-battery regime", pass, detail.trim_end());
}

// ===================================================================== A5

fn default_campaign_records() -> (SimulatedCampaign, Vec<CycleRecord>) {
    let (specs, profile) = simbench::standard_campaign(4, 400, 20240615);
    let campaign = simulate_campaign(&specs, &profile, CAMPAIGN_SEED).unwrap();
    let options = FitOptions::default();
    let records: Vec<CycleRecord> = campaign
        .truths
        .iter()
        .zip(&campaign.traces)
        .map(|(truth, trace)| {
            let report = fit_pulse(trace, &options).unwrap();
            CycleRecord {
                battery_id: truth.battery_id.clone(),
                cycle_index: truth.cycle_index,
                discharged_ah: truth.discharged_ah,
                params: report.params,
                soh_percent: None,
            }
        })
        .collect();
    (campaign, records)
}

#[test]
fn a5_correction_effect() {
    let (_, records) = default_campaign_records();
    let eval_battery_1 = |records: &[CycleRecord]| {
        let labeled = compute_soh(records, SohReference::PerBatteryMax).unwrap();
        let rows = drop_warm_up(&build_features(&trim_burn_in(&labeled), 20).unwrap());
        let (_, report) =
            cross_battery_eval(&rows, &ids(&["3", "4"]), &ids(&["1"]), &TrainConfig::Ols)
                .unwrap();
        report.per_battery["1"].clone()
    };

    let baseline = eval_battery_1(&records);
    let corrupted_records: Vec<CycleRecord> = records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if r.battery_id == "1" && (51..=259).contains(&r.cycle_index) {
                r.discharged_ah += 1.0;
            }
            r
        })
        .collect();
    let corrupted = eval_battery_1(&corrupted_records);
    let corrected_records = apply_corrections(
        &corrupted_records,
        &[Correction::new("1", 51, 259, -1.0).unwrap()],
    )
    .unwrap();
    let corrected = eval_battery_1(&corrected_records);

    let degraded = corrupted.mae_percent > baseline.mae_percent && corrupted.r2 < baseline.r2;
    let mae_restored =
        (corrected.mae_percent - baseline.mae_percent).abs() <= 0.2 * baseline.mae_percent;
    let r2_restored = (corrected.r2 - baseline.r2).abs() <= 0.2 * baseline.r2.abs();
    criterion(
        "A5 correction effect",
        degraded && mae_restored && r2_restored,
        &format!(
            "MAE base {:.3} -> corrupted {:.3} -> corrected {:.3}; \
             R2 base {:.3} -> corrupted {:.3} -> corrected {:.3}",
            baseline.mae_percent,
            corrupted.mae_percent,
            corrected.mae_percent,
            baseline.r2,
            corrupted.r2,
            corrected.r2
        ),
    );
}

// ===================================================================== A6

fn naive_mae(predicted: &[f64], actual: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..predicted.len() {
        let diff = predicted[i] - actual[i];
        total += if diff < 0.0 { -diff } else { diff };
    }
    total / predicted.len() as f64
}

fn naive_r2(predicted: &[f64], actual: &[f64]) -> f64 {
    let mut mean = 0.0;
    for a in actual {
        mean += a;
    }
    mean /= actual.len() as f64;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for i in 0..actual.len() {
        ss_res += (actual[i] - predicted[i]) * (actual[i] - predicted[i]);
        ss_tot += (actual[i] - mean) * (actual[i] - mean);
    }
    1.0 - ss_res / ss_tot
}

#[test]
fn a6_metric_oracles() {
    let mut rng = ChaCha12Rng::seed_from_u64(0xA6);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(2..60);
        let predicted: Vec<f64> = (0..n).map(|_| rng.random_range(70.0..110.0)).collect();
        let actual: Vec<f64> = (0..n).map(|_| rng.random_range(70.0..110.0)).collect();
        let mae_diff =
            (estimator::mae(&predicted, &actual).unwrap() - naive_mae(&predicted, &actual)).abs();
        let r2_diff =
            (estimator::r2(&predicted, &actual).unwrap() - naive_r2(&predicted, &actual)).abs();
        worst = worst.max(mae_diff).max(r2_diff);
    }

    let actual = [85.0, 88.5, 92.0, 97.5, 100.0];
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let mean_predictor = vec![mean; actual.len()];
    let r2_mean = estimator::r2(&mean_predictor, &actual).unwrap();
    let r2_perfect = estimator::r2(&actual, &actual).unwrap();

    criterion(
        "A6 metric oracles",
        worst <= 1e-12 && r2_mean == 0.0 && r2_perfect == 1.0,
        &format!(
            "worst |metric - naive oracle| {worst:.2e} (<=1e-12); \
             mean predictor r2 {r2_mean}, perfect r2 {r2_perfect}"
        ),
    );
}

// ===================================================================== A7

/// Noisy affine rows: features drift with SoH plus Gaussian noise.
fn noisy_affine_rows(n: usize, seed: u64) -> Vec<FeatureRow> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|i| {
            let soh = 100.0 - 15.0 * (i as f64 / n as f64);
            let lost = 100.0 - soh;
            let eps = |rng: &mut ChaCha12Rng, s: f64| s * noise.sample(rng);
            FeatureRow {
                battery_id: "b".into(),
                cycle_index: i as u32,
                r1: 5e-4 + 7.5e-6 * lost + eps(&mut rng, 5e-6),
                r2: 8e-4 + 1.2e-5 * lost + eps(&mut rng, 1e-5),
                tau1: 1.0 + 0.02 * lost + eps(&mut rng, 0.01),
                tau2: 20.0 + 0.2 * lost + eps(&mut rng, 0.2),
                soh_percent: soh + eps(&mut rng, 0.05),
            }
        })
        .collect()
}

#[test]
fn a7_estimator_invariants() {
    let rows = noisy_affine_rows(240, 0xA7);
    let model = train_ols(&rows).unwrap();

    // Residual orthogonality: cosine of every design column with the
    // residual vector, including the intercept column.
    let residuals: Vec<f64> = rows
        .iter()
        .map(|r| r.soh_percent - predict(&model, r).unwrap())
        .collect();
    let r_norm = residuals.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut worst_cosine: f64 = 0.0;
    for j in 0..5 {
        let column: Vec<f64> = rows
            .iter()
            .map(|r| [r.r1, r.r2, r.tau1, r.tau2, 1.0][j])
            .collect();
        let dot: f64 = column.iter().zip(&residuals).map(|(x, r)| x * r).sum();
        let col_norm = column.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst_cosine = worst_cosine.max((dot / (col_norm * r_norm)).abs());
    }

    // Feature-scaling equivariance: scaling r1 by k divides its coefficient
    // by k and leaves predictions unchanged.
    let k = 1000.0;
    let scaled_rows: Vec<FeatureRow> = rows
        .iter()
        .map(|r| FeatureRow {
            r1: r.r1 * k,
            ..r.clone()
        })
        .collect();
    let scaled_model = train_ols(&scaled_rows).unwrap();
    let coef_rel =
        ((scaled_model.coefficients[0] * k - model.coefficients[0]) / model.coefficients[0]).abs();
    let mut worst_pred_rel: f64 = 0.0;
    for (r, s) in rows.iter().zip(&scaled_rows) {
        let a = predict(&model, r).unwrap();
        let b = predict(&scaled_model, s).unwrap();
        worst_pred_rel = worst_pred_rel.max(((a - b) / a).abs());
    }

    // Theil-Sen determinism under a fixed seed.
    let ts_a = train_theil_sen(&rows, 2000, 42).unwrap();
    let ts_b = train_theil_sen(&rows, 2000, 42).unwrap();
    let ts_deterministic = ts_a == ts_b
        && ts_a
            .coefficients
            .iter()
            .zip(&ts_b.coefficients)
            .all(|(x, y)| x.to_bits() == y.to_bits())
        && ts_a.intercept.to_bits() == ts_b.intercept.to_bits();

    criterion(
        "A7 estimator invariants",
        worst_cosine <= 1e-8 && coef_rel <= 1e-8 && worst_pred_rel <= 1e-8 && ts_deterministic,
        &format!(
            "orthogonality cosine {worst_cosine:.2e} (<=1e-8); scaling: coef rel {coef_rel:.2e}, \
             pred rel {worst_pred_rel:.2e} (<=1e-8); theil-sen bit-identical: {ts_deterministic}"
        ),
    );
}

// ===================================================================== A8

fn collect_files(root: &Path) -> Vec<PathBuf> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push(path);
            }
        }
    }
    files.sort();
    files
}

#[test]
fn a8_io_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("spec.json");
    fs::write(
        &spec_path,
        r#"[{"battery_id": "1", "burn_in_cycles": 5, "n_cycles": 25},
           {"battery_id": "2", "burn_in_cycles": 7, "n_cycles": 25}]"#,
    )
    .unwrap();

    // Seeded reproducibility: two runs, byte-identical trees.
    let run_a = dir.path().join("a");
    let run_b = dir.path().join("b");
    cmd_simulate(&run_a, 0xA8, 0, 0, Some(&spec_path), None).unwrap();
    cmd_simulate(&run_b, 0xA8, 0, 0, Some(&spec_path), None).unwrap();
    let files_a = collect_files(&run_a);
    let files_b = collect_files(&run_b);
    let mut reproducible = files_a.len() == files_b.len();
    for (a, b) in files_a.iter().zip(&files_b) {
        reproducible &= a.strip_prefix(&run_a).unwrap() == b.strip_prefix(&run_b).unwrap();
        reproducible &= fs::read(a).unwrap() == fs::read(b).unwrap();
    }

    // Every emitted CSV re-parses to values that re-emit byte-identically.
    let mut stable = true;
    for trace_path in collect_files(&run_a.join("traces")) {
        let original = fs::read_to_string(&trace_path).unwrap();
        let parsed = formats::read_trace(&trace_path).unwrap();
        stable &= formats::render_trace(&parsed) == original;
    }
    let cycles_path = run_a.join("cycles.csv");
    stable &= formats::render_cycles(&formats::read_cycles(&cycles_path).unwrap())
        == fs::read_to_string(&cycles_path).unwrap();
    let truth_path = run_a.join("ground_truth.csv");
    stable &= formats::render_ground_truth(&formats::read_ground_truth(&truth_path).unwrap())
        == fs::read_to_string(&truth_path).unwrap();

    // Chain outputs: params, features, report, residuals, model JSON.
    let traces: Vec<PathBuf> = collect_files(&run_a.join("traces"));
    let params_path = dir.path().join("params.csv");
    cmd_fit(&traces, &FitOptions::default(), &params_path).unwrap();
    stable &= formats::render_params(&formats::read_params(&params_path).unwrap())
        == fs::read_to_string(&params_path).unwrap();

    let features_path = dir.path().join("features.csv");
    cmd_pipeline(
        &params_path,
        &cycles_path,
        None,
        5,
        SohReference::PerBatteryMax,
        &features_path,
    )
    .unwrap();
    stable &= formats::render_features(&formats::read_features(&features_path).unwrap())
        == fs::read_to_string(&features_path).unwrap();

    let model_path = dir.path().join("model.json");
    let trained = cmd_train(&features_path, &ids(&["2"]), &TrainConfig::Ols, &model_path).unwrap();
    let report_path = dir.path().join("report.csv");
    let residuals_path = dir.path().join("residuals.csv");
    cmd_eval(&features_path, &model_path, &ids(&["1"]), &report_path, &residuals_path).unwrap();
    stable &= formats::render_report(&formats::read_report(&report_path).unwrap())
        == fs::read_to_string(&report_path).unwrap();

    // Model JSON: reload must reproduce the text and predict bit-identically.
    let model_text = fs::read_to_string(&model_path).unwrap();
    let reloaded = SohModel::from_json(&model_text).unwrap();
    let mut model_ok = format!("{}\n", reloaded.to_json().unwrap()) == model_text;
    for row in formats::read_features(&features_path).unwrap() {
        model_ok &= predict(&trained, &row).unwrap().to_bits()
            == predict(&reloaded, &row).unwrap().to_bits();
    }

    criterion(
        "A8 I/O round-trips",
        reproducible && stable && model_ok,
        &format!(
            "seeded runs byte-identical: {reproducible} ({} files); \
             CSV re-emission byte-stable: {stable}; model JSON exact: {model_ok}",
            files_a.len()
        ),
    );
}
