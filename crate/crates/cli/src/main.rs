use clap::{Parser, Subcommand, ValueEnum};
use soh_cli::commands;
use soh_core::estimator::{TrainConfig, DEFAULT_HUBER_TRANSITION, DEFAULT_THEIL_SEN_SUBSETS};
use soh_core::identify::FitOptions;
use soh_core::pipeline::{SohReference, DEFAULT_SMOOTHING_WINDOW};
use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

/// Battery state-of-health estimation from end-of-charge discharge pulses.
#[derive(Parser)]
#[command(name = "soh", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the pulse model to trace CSVs (named `b<battery_id>_c<cycle>.csv`)
    Fit {
        /// Input trace files
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        /// Output params CSV
        #[arg(long)]
        out: PathBuf,
        /// Fit window start, seconds
        #[arg(long, default_value_t = 1.0)]
        t_min: f64,
        /// Fit window end, seconds
        #[arg(long, default_value_t = 10.0)]
        t_max: f64,
        #[arg(long, default_value_t = 200)]
        max_iterations: usize,
        /// Relative SSE improvement treated as converged
        #[arg(long, default_value_t = 1e-10)]
        cost_tolerance: f64,
        /// Relative step norm treated as converged
        #[arg(long, default_value_t = 1e-8)]
        param_tolerance: f64,
        #[arg(long, default_value_t = 1e-3)]
        initial_damping: f64,
    },
    /// Join params with cycle capacities and emit smoothed feature rows
    Pipeline {
        /// Params CSV from `fit`
        #[arg(long)]
        params: PathBuf,
        /// Cycles CSV (battery_id,cycle_index,discharged_ah)
        #[arg(long)]
        cycles: PathBuf,
        /// Optional corrections CSV (battery_id,cycle_from,cycle_to,delta_ah)
        #[arg(long)]
        corrections: Option<PathBuf>,
        /// Sliding-mean window, cycles
        #[arg(long, default_value_t = DEFAULT_SMOOTHING_WINDOW)]
        window: usize,
        /// SoH reference: `per-battery-max` or a capacity in amp-hours
        #[arg(long, default_value = "per-battery-max", value_parser = parse_reference)]
        reference: SohReference,
        /// Output features CSV
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a SoH estimator on selected batteries
    Train {
        #[arg(long)]
        features: PathBuf,
        /// Comma-separated battery ids to train on
        #[arg(long, value_delimiter = ',', required = true)]
        train_ids: Vec<String>,
        #[arg(long, value_enum, default_value_t = KindArg::Ols)]
        kind: KindArg,
        /// Seed for the subset sampling of theil-sen
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Huber transition point, in robust-scale units
        #[arg(long, default_value_t = DEFAULT_HUBER_TRANSITION)]
        huber_transition: f64,
        /// Number of random subsets for theil-sen
        #[arg(long, default_value_t = DEFAULT_THEIL_SEN_SUBSETS)]
        max_subsets: usize,
        /// Output model JSON
        #[arg(long)]
        model: PathBuf,
    },
    /// Evaluate a stored model on held-out batteries
    Eval {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated battery ids to evaluate
        #[arg(long, value_delimiter = ',', required = true)]
        test_ids: Vec<String>,
        /// Output per-battery report CSV
        #[arg(long)]
        report: PathBuf,
        /// Output per-cycle residuals CSV
        #[arg(long)]
        residuals: PathBuf,
    },
    /// Generate a synthetic aging campaign with ground truth
    Simulate {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of batteries in the default campaign
        #[arg(long, default_value_t = 4)]
        batteries: u32,
        /// Cycles per battery in the default campaign
        #[arg(long, default_value_t = 400)]
        cycles: u32,
        /// JSON list of battery specs overriding the default campaign
        #[arg(long)]
        spec_file: Option<PathBuf>,
        /// JSON drift profile overriding the default
        #[arg(long)]
        profile_file: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Ols,
    Huber,
    TheilSen,
}

fn parse_reference(text: &str) -> Result<SohReference, String> {
    if text == "per-battery-max" {
        return Ok(SohReference::PerBatteryMax);
    }
    match text.parse::<f64>() {
        Ok(ah) if ah.is_finite() && ah > 0.0 => Ok(SohReference::FixedAh(ah)),
        _ => Err(format!(
            "expected 'per-battery-max' or a positive capacity in Ah, got '{text}'"
        )),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, soh_cli::CliError> {
    match cli.command {
        Command::Fit {
            traces,
            out,
            t_min,
            t_max,
            max_iterations,
            cost_tolerance,
            param_tolerance,
            initial_damping,
        } => {
            let window = soh_core::ecm::FitWindow::new(t_min, t_max)?;
            let options = FitOptions {
                window,
                max_iterations,
                cost_tolerance,
                param_tolerance,
                initial_damping,
                ..FitOptions::default()
            };
            let outcome = commands::cmd_fit(&traces, &options, &out)?;
            for (path, message) in &outcome.failures {
                eprintln!("fit failed for {}: {message}", path.display());
            }
            println!("fit: wrote {} rows to {}", outcome.rows, out.display());
            if outcome.failures.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                Err(soh_cli::CliError::FitsFailed {
                    count: outcome.failures.len(),
                    total: outcome.failures.len() + outcome.rows,
                })
            }
        }
        Command::Pipeline {
            params,
            cycles,
            corrections,
            window,
            reference,
            out,
        } => {
            let rows = commands::cmd_pipeline(
                &params,
                &cycles,
                corrections.as_deref(),
                window,
                reference,
                &out,
            )?;
            println!("pipeline: wrote {rows} feature rows to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Train {
            features,
            train_ids,
            kind,
            seed,
            huber_transition,
            max_subsets,
            model,
        } => {
            let config = match kind {
                KindArg::Ols => TrainConfig::Ols,
                KindArg::Huber => TrainConfig::Huber {
                    transition_scale: huber_transition,
                },
                KindArg::TheilSen => TrainConfig::TheilSen { max_subsets, seed },
            };
            let ids: BTreeSet<String> = train_ids.into_iter().collect();
            let trained = commands::cmd_train(&features, &ids, &config, &model)?;
            println!(
                "train: {} on batteries [{}], {} rows, train MAE {:.3}%, train R2 {:.4} -> {}",
                trained.kind,
                trained.training_meta.battery_ids.join(", "),
                trained.training_meta.row_count,
                trained.training_meta.train_mae,
                trained.training_meta.train_r2,
                model.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval {
            features,
            model,
            test_ids,
            report,
            residuals,
        } => {
            let ids: BTreeSet<String> = test_ids.into_iter().collect();
            let outcome = commands::cmd_eval(&features, &model, &ids, &report, &residuals)?;
            for (id, b) in &outcome.per_battery {
                println!(
                    "eval: battery {id}: MAE {:.3}%, R2 {:.4}, max |error| {:.3}%",
                    b.mae_percent, b.r2, b.max_abs_error_percent
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate {
            out_dir,
            seed,
            batteries,
            cycles,
            spec_file,
            profile_file,
        } => {
            let outcome = commands::cmd_simulate(
                &out_dir,
                seed,
                batteries,
                cycles,
                spec_file.as_deref(),
                profile_file.as_deref(),
            )?;
            println!(
                "simulate: {} traces in {}, cycles in {}, ground truth in {}",
                outcome.trace_files,
                outcome.traces_dir.display(),
                outcome.cycles_path.display(),
                outcome.ground_truth_path.display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}
