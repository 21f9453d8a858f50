//! Batch experiment runner for learned-sketch pipelines on synthetic
//! ensembles.
//!
//! Exit codes: 0 success, 2 invalid configuration, 3 missing upstream
//! artifact, 1 anything else. Every error prints a single
//! machine-parsable line on stderr.

mod config;
mod report;
mod stages;
mod tasks;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ExperimentConfig, Task};
use sketchlearn::datagen::DistributionSpec;
use stages::{EvalArgs, EvalSource, TrainPositionsArgs, TrainValuesArgs};

#[derive(Parser)]
#[command(name = "sketchlearn", version, about = "Learned CountSketch experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ensemble directory from a config file.
    GenData {
        /// Experiment config (or bare distribution spec) JSON.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn sketch positions from the train split of a data directory.
    TrainPositions {
        #[arg(long)]
        data: PathBuf,
        /// greedy | inner_product | heavy_rows | classical
        #[arg(long)]
        method: String,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// given | nonincreasing_norm (greedy only)
        #[arg(long, default_value = "nonincreasing_norm")]
        order: String,
        /// proxy | exact (greedy only)
        #[arg(long, default_value = "proxy")]
        objective: String,
        #[arg(long, default_value_t = 0.3)]
        heavy_fraction: f64,
        #[arg(long, default_value_t = 5.0)]
        threshold_mult: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimize the values of a fixed-position plan by SGD.
    TrainValues {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        /// fewshot | subspace | empirical_lra
        #[arg(long)]
        loss: String,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 0.02)]
        lr: f64,
        #[arg(long, default_value_t = 100)]
        iters: usize,
        #[arg(long, default_value_t = 2)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Optional loss-trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Evaluate a sketch, plan, or classical baseline on the test split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// lra_one | lra_two | ihs_lasso | ihs_nuclear | fast_regression | fewshot
        #[arg(long)]
        task: String,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        sketch: Option<PathBuf>,
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Evaluate a fresh classical CountSketch instead of a file.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 7)]
        t_iters: usize,
        #[arg(long, default_value_t = 200)]
        pg_iters: usize,
        #[arg(long, default_value_t = 1.0)]
        fr_lr: f64,
        #[arg(long, default_value_t = 30)]
        fr_iters: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render aggregate JSON files into a table and a gnuplot data file.
    Report {
        #[arg(long)]
        results: PathBuf,
        /// Table output path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Gnuplot-compatible data file.
        #[arg(long)]
        dat: Option<PathBuf>,
    },
    /// Run a full experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker pool size.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

enum CliError {
    Config(String),
    Missing(String),
    Other(anyhow::Error),
}

impl CliError {
    fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Missing(_) => ExitCode::from(3),
            CliError::Other(_) => ExitCode::from(1),
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Config(m) => format!("config: {m}"),
            CliError::Missing(m) => format!("missing-artifact: {m}"),
            CliError::Other(e) => format!("runtime: {e:#}"),
        }
    }
}

/// Anyhow messages starting with "config:" carry invalid-configuration
/// semantics through the stage helpers.
fn classify(e: anyhow::Error) -> CliError {
    let text = format!("{e:#}");
    if text.contains("config:") {
        CliError::Config(text.replace("config: ", ""))
    } else {
        CliError::Other(e)
    }
}

fn require_exists(path: &Path, what: &str) -> Result<(), CliError> {
    if !path.exists() {
        return Err(CliError::Missing(format!("{what} not found at {path:?}")));
    }
    Ok(())
}

fn read_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    require_exists(path, "config file")?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Other(anyhow::anyhow!("reading {path:?}: {e}")))?;
    let config: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{path:?}: {e}")))?;
    config.validate().map_err(CliError::Config)?;
    Ok(config)
}

fn parse_task(s: &str) -> Result<Task, CliError> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| CliError::Config(format!("unknown task {s:?}")))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { config, out } => {
            require_exists(&config, "config file")?;
            let text = std::fs::read_to_string(&config)
                .map_err(|e| CliError::Other(anyhow::anyhow!("reading {config:?}: {e}")))?;
            // Accept a full experiment config or a bare distribution spec.
            let spec: DistributionSpec = match serde_json::from_str::<ExperimentConfig>(&text) {
                Ok(c) => c.distribution,
                Err(_) => serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{config:?}: {e}")))?,
            };
            tasks::generate_and_save(&spec, &out).map_err(classify)
        }
        Command::TrainPositions {
            data,
            method,
            m,
            k,
            seed,
            order,
            objective,
            heavy_fraction,
            threshold_mult,
            out,
        } => {
            require_exists(&data, "data directory")?;
            require_exists(&data.join("manifest.json"), "ensemble manifest")?;
            let args = TrainPositionsArgs {
                method,
                m,
                k,
                seed,
                order,
                objective,
                heavy_fraction,
                threshold_mult,
            };
            stages::train_positions(&data, &args, &out).map_err(classify)
        }
        Command::TrainValues {
            data,
            plan,
            loss,
            k,
            lr,
            iters,
            batch_size,
            seed,
            out,
            trace,
        } => {
            require_exists(&data, "data directory")?;
            require_exists(&data.join("manifest.json"), "ensemble manifest")?;
            require_exists(&plan, "position plan")?;
            let args = TrainValuesArgs { loss, k, lr, iters, batch_size, seed };
            stages::train_values(&data, &plan, &args, &out, trace.as_deref()).map_err(classify)
        }
        Command::Eval {
            data,
            task,
            k,
            sketch,
            plan,
            method,
            m,
            seed,
            t_iters,
            pg_iters,
            fr_lr,
            fr_iters,
            out,
        } => {
            require_exists(&data, "data directory")?;
            require_exists(&data.join("manifest.json"), "ensemble manifest")?;
            let task = parse_task(&task)?;
            let source = match (&sketch, &plan, &method) {
                (Some(path), None, None) => {
                    require_exists(path, "sketch file")?;
                    EvalSource::SketchFile(stages::read_sketch(path).map_err(classify)?)
                }
                (None, Some(path), None) => {
                    require_exists(path, "position plan")?;
                    EvalSource::PlanFile(stages::read_plan(path).map_err(classify)?)
                }
                (None, None, Some(name)) if name == "classical" => {
                    let m = m.ok_or_else(|| {
                        CliError::Config("--method classical requires --m".into())
                    })?;
                    EvalSource::Classical { m }
                }
                (None, None, Some(name)) => {
                    return Err(CliError::Config(format!(
                        "eval --method only supports classical, got {name:?}; train {name} with train-positions first"
                    )))
                }
                _ => {
                    return Err(CliError::Config(
                        "eval needs exactly one of --sketch, --plan, --method classical".into(),
                    ))
                }
            };
            let args = EvalArgs { task, k, seed, t_iters, pg_iters, fr_lr, fr_iters };
            stages::eval(&data, source, &args, &out).map_err(classify)
        }
        Command::Report { results, out, dat } => {
            require_exists(&results, "results directory")?;
            let table = report::render_table(&results).map_err(classify)?;
            match out {
                Some(path) => std::fs::write(path, &table)
                    .map_err(|e| CliError::Other(anyhow::anyhow!("writing table: {e}")))?,
                None => print!("{table}"),
            }
            if let Some(path) = dat {
                let data = report::render_dat(&results).map_err(classify)?;
                std::fs::write(path, data)
                    .map_err(|e| CliError::Other(anyhow::anyhow!("writing dat: {e}")))?;
            }
            Ok(())
        }
        Command::Run { config, seed, out, jobs } => {
            let mut cfg = read_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let out_dir = out
                .or_else(|| cfg.out.clone().map(PathBuf::from))
                .ok_or_else(|| CliError::Config("run: no output directory (--out or config.out)".into()))?;
            let output = tasks::run_experiment(&cfg, jobs).map_err(classify)?;
            std::fs::create_dir_all(&out_dir)
                .map_err(|e| CliError::Other(anyhow::anyhow!("creating {out_dir:?}: {e}")))?;
            std::fs::write(out_dir.join("results.csv"), tasks::rows_to_csv(&output.rows))
                .map_err(|e| CliError::Other(anyhow::anyhow!("writing results: {e}")))?;
            let json = serde_json::to_string_pretty(&output.aggregate)
                .map_err(|e| CliError::Other(anyhow::anyhow!("serializing aggregate: {e}")))?;
            std::fs::write(out_dir.join("aggregate.json"), json)
                .map_err(|e| CliError::Other(anyhow::anyhow!("writing aggregate: {e}")))?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}
