//! Resumable pipeline stages: each one reads the serialized artifacts of
//! the stage before it.

use std::path::Path;

use anyhow::{bail, Context, Result};

use sketchlearn::datagen::{load_ensemble, Ensemble};
use sketchlearn::lra::lra_one_sided;
use sketchlearn::position::{
    greedy_positions, heavy_row_plan, inner_product_positions, learn_heavy_row_indices,
    ColumnOrder, GreedyObjective, PositionPlan, Provenance, TrainingSet,
};
use sketchlearn::rng::derive_seed;
use sketchlearn::second_order::{fast_regression_solve, ihs_solve, GdConfig, PgConfig};
use sketchlearn::sketch::{CountSketch, Sketch};
use sketchlearn::value::{optimize_values, trace_to_csv, SgdConfig, ValueLossKind};

use crate::config::Task;
use crate::tasks::{heavy_indices_from_plan, rows_to_csv, AggregateFile, AggregateRecord, ResultRow, TimingRecord};

pub fn read_plan(path: &Path) -> Result<PositionPlan> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {path:?}"))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_plan(path: &Path, plan: &PositionPlan) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(plan)?)?;
    Ok(())
}

pub fn read_sketch(path: &Path) -> Result<CountSketch> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {path:?}"))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_sketch(path: &Path, sketch: &CountSketch) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(sketch)?)?;
    Ok(())
}

/// The train split of a data directory as a TrainingSet of design matrices.
pub fn load_training_set(data: &Path) -> Result<(TrainingSet, Ensemble)> {
    let (_, ensemble) = load_ensemble(data)?;
    let tr = match &ensemble {
        Ensemble::Matrices(ts) => ts.clone(),
        Ensemble::Problems(ps) => ps.design_training_set()?,
    };
    Ok((tr, ensemble))
}

pub struct TrainPositionsArgs {
    pub method: String,
    pub m: usize,
    pub k: usize,
    pub seed: u64,
    pub order: String,
    pub objective: String,
    pub heavy_fraction: f64,
    pub threshold_mult: f64,
}

pub fn train_positions(data: &Path, args: &TrainPositionsArgs, out: &Path) -> Result<()> {
    let (tr, _) = load_training_set(data)?;
    let order = match args.order.as_str() {
        "given" => ColumnOrder::Given,
        "nonincreasing_norm" => ColumnOrder::NonincreasingNorm,
        other => bail!("config: unknown order {other:?}"),
    };
    let objective = match args.objective.as_str() {
        "proxy" => GreedyObjective::Proxy,
        "exact" => GreedyObjective::Exact,
        other => bail!("config: unknown objective {other:?}"),
    };
    let plan = match args.method.as_str() {
        "greedy" => greedy_positions(&tr, args.m, args.k, order, objective)?.plan,
        "inner_product" => {
            inner_product_positions(&tr.train_average(), args.m, args.k, args.seed)?
                .position_plan()?
        }
        "heavy_rows" => {
            let budget =
                ((args.heavy_fraction * args.m as f64).round() as usize).min(args.m.saturating_sub(1));
            let heavy = learn_heavy_row_indices(&tr, args.threshold_mult, budget)?;
            heavy_row_plan(&heavy, args.m, tr.rows(), args.seed)?
        }
        "classical" => PositionPlan::classical(args.m, tr.rows(), args.seed)?,
        other => bail!("config: unknown method {other:?}"),
    };
    write_plan(out, &plan)?;
    Ok(())
}

pub struct TrainValuesArgs {
    pub loss: String,
    pub k: Option<usize>,
    pub lr: f64,
    pub iters: usize,
    pub batch_size: usize,
    pub seed: u64,
}

pub fn train_values(
    data: &Path,
    plan_path: &Path,
    args: &TrainValuesArgs,
    out: &Path,
    trace_out: Option<&Path>,
) -> Result<()> {
    let (tr, _) = load_training_set(data)?;
    let plan = read_plan(plan_path)?;
    let loss = match args.loss.as_str() {
        "fewshot" => {
            let k = args.k.context("config: fewshot loss requires --k")?;
            ValueLossKind::Fewshot { k }
        }
        "subspace" => ValueLossKind::Subspace,
        "empirical_lra" => {
            let k = args.k.context("config: empirical_lra loss requires --k")?;
            ValueLossKind::EmpiricalLra { k }
        }
        other => bail!("config: unknown loss {other:?}"),
    };
    let cfg = SgdConfig {
        lr: args.lr,
        iters: args.iters,
        batch_size: args.batch_size,
        seed: args.seed,
    };
    let outcome = optimize_values(&plan, &tr, loss, cfg)?;
    write_sketch(out, &outcome.sketch)?;
    if let Some(path) = trace_out {
        std::fs::write(path, trace_to_csv(&outcome.trace))?;
    }
    Ok(())
}

/// How `eval` obtains its sketch.
pub enum EvalSource {
    SketchFile(CountSketch),
    PlanFile(PositionPlan),
    Classical { m: usize },
}

impl EvalSource {
    fn label(&self) -> &'static str {
        match self {
            EvalSource::SketchFile(_) => "sketch_file",
            EvalSource::PlanFile(plan) => match plan.provenance {
                Provenance::Greedy => "greedy",
                Provenance::InnerProduct => "inner_product",
                Provenance::HeavyRows => "heavy_rows",
                Provenance::Classical => "classical",
            },
            EvalSource::Classical { .. } => "classical",
        }
    }

    fn m(&self) -> usize {
        match self {
            EvalSource::SketchFile(s) => s.m,
            EvalSource::PlanFile(p) => p.m,
            EvalSource::Classical { m } => *m,
        }
    }
}

pub struct EvalArgs {
    pub task: Task,
    pub k: Option<usize>,
    pub seed: u64,
    pub t_iters: usize,
    pub pg_iters: usize,
    pub fr_lr: f64,
    pub fr_iters: usize,
}

pub fn eval(data: &Path, source: EvalSource, args: &EvalArgs, out_dir: &Path) -> Result<()> {
    let (_, ensemble) = load_ensemble(data)?;
    let label = source.label();
    let m = source.m();
    let task = args.task.as_str();

    let mut rows = Vec::new();
    let mut rhos = Vec::new();
    let mut failed = 0usize;
    match (&ensemble, args.task) {
        (Ensemble::Matrices(tr), Task::LraOne | Task::LraTwo | Task::Fewshot) => {
            let k = args.k.context("config: LRA evaluation requires --k")?;
            let sketch = match &source {
                EvalSource::SketchFile(s) => Sketch::Count(s.clone()),
                EvalSource::PlanFile(p) => Sketch::Count(p.to_countsketch()),
                EvalSource::Classical { m } => {
                    Sketch::Count(CountSketch::random(*m, tr.rows(), args.seed)?)
                }
            };
            for (slot, a) in tr.test_matrices().enumerate() {
                let test_index = tr.test_indices()[slot];
                match lra_one_sided(&sketch, a, k) {
                    Ok(res) => {
                        let f = sketchlearn::linalg::truncated_svd(a, k)?;
                        let opt = a.sub(&f.reconstruct()).frobenius_norm_sq();
                        rows.push(row(task, label, m, test_index, res.error - opt));
                    }
                    Err(_) => {
                        failed += 1;
                        rows.push(row(task, label, m, test_index, f64::NAN));
                    }
                }
            }
        }
        (Ensemble::Problems(ps), Task::IhsLasso | Task::IhsNuclear) => {
            let n = ps.problems[0].a.rows();
            let heavy = match &source {
                EvalSource::PlanFile(p) if p.provenance == Provenance::HeavyRows => {
                    Some(heavy_indices_from_plan(p))
                }
                _ => None,
            };
            let per_iteration = |t: usize| -> sketchlearn::Result<Sketch> {
                match (&source, &heavy) {
                    (_, Some(idx)) => {
                        let plan =
                            heavy_row_plan(idx, m, n, derive_seed(args.seed, 100 + t as u64))?;
                        Ok(Sketch::Count(plan.to_countsketch()))
                    }
                    (EvalSource::Classical { m }, _) => Ok(Sketch::Count(CountSketch::random(
                        *m,
                        n,
                        derive_seed(args.seed, 100 + t as u64),
                    )?)),
                    (EvalSource::SketchFile(s), _) => Ok(Sketch::Count(s.clone())),
                    (EvalSource::PlanFile(p), _) => Ok(Sketch::Count(p.to_countsketch())),
                }
            };
            let pg = PgConfig { iters: args.pg_iters };
            for (slot, problem) in ps.test_problems().enumerate() {
                let test_index = ps.test[slot];
                match ihs_solve(problem, &per_iteration, args.t_iters, pg) {
                    Ok(trace) => {
                        rhos.push(trace.rate);
                        rows.push(row(task, label, m, test_index, trace.rate));
                    }
                    Err(_) => {
                        failed += 1;
                        rows.push(row(task, label, m, test_index, f64::NAN));
                    }
                }
            }
        }
        (Ensemble::Problems(ps), Task::FastRegression) => {
            let n = ps.problems[0].a.rows();
            let sketch = match &source {
                EvalSource::SketchFile(s) => Sketch::Count(s.clone()),
                EvalSource::PlanFile(p) => Sketch::Count(p.to_countsketch()),
                EvalSource::Classical { m } => Sketch::Count(CountSketch::random(*m, n, args.seed)?),
            };
            let gd = GdConfig { lr: args.fr_lr, iters: args.fr_iters };
            for (slot, problem) in ps.test_problems().enumerate() {
                let test_index = ps.test[slot];
                if problem.b.cols() != 1 {
                    bail!("config: fast_regression needs single-column responses");
                }
                let y = problem.a.transpose().matmul(&problem.b);
                match fast_regression_solve(&problem.a, &y, &sketch, gd) {
                    Ok(res) if !res.diverged => {
                        rows.push(row(task, label, m, test_index, *res.residuals.last().unwrap()))
                    }
                    Ok(_) | Err(_) => {
                        failed += 1;
                        rows.push(row(task, label, m, test_index, f64::NAN));
                    }
                }
            }
        }
        _ => bail!(
            "config: task {} does not match the data directory's ensemble flavor",
            task
        ),
    }

    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("results.csv"), rows_to_csv(&rows))?;
    let finite: Vec<f64> = rows.iter().map(|r| r.error).filter(|e| e.is_finite()).collect();
    let mean_error = if finite.is_empty() {
        None
    } else {
        Some(finite.iter().sum::<f64>() / finite.len() as f64)
    };
    let rho_hat = if rhos.is_empty() {
        None
    } else {
        Some(rhos.iter().sum::<f64>() / rhos.len() as f64)
    };
    let aggregate = AggregateFile {
        task: args.task.as_str(),
        records: vec![AggregateRecord {
            task: args.task.as_str(),
            method: label,
            m,
            trials: 1,
            mean_error,
            rho_hat,
            failed,
        }],
        timing: vec![TimingRecord { method: label, m, train_time_seconds: 0.0 }],
    };
    std::fs::write(
        out_dir.join("aggregate.json"),
        serde_json::to_string_pretty(&aggregate)?,
    )?;
    Ok(())
}

fn row(task: &'static str, method: &'static str, m: usize, test_index: usize, error: f64) -> ResultRow {
    ResultRow { task, method, m, trial: 0, test_index, error }
}
