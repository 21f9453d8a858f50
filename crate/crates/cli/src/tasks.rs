//! Experiment execution: train per (method, m, trial), evaluate on the
//! test split, and aggregate.

use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use sketchlearn::datagen::{DistributionSpec, Ensemble, ProblemSet};
use sketchlearn::linalg::truncated_svd;
use sketchlearn::lra::{lra_one_sided, lra_two_sided, SketchSet};
use sketchlearn::matrix::Matrix;
use sketchlearn::position::{
    greedy_positions, heavy_row_plan, inner_product_positions, learn_heavy_row_indices,
    ColumnOrder, GreedyObjective, PositionPlan, TrainingSet,
};
use sketchlearn::rng::derive_seed;
use sketchlearn::second_order::{fast_regression_solve, ihs_solve, GdConfig, PgConfig};
use sketchlearn::sketch::{CountSketch, Sketch};
use sketchlearn::value::{optimize_values, SgdConfig, ValueLossKind};

use crate::config::{ExperimentConfig, Method, Task};

/// One CSV row of the per-trial results.
#[derive(Debug, Clone)]
pub struct ResultRow {
    pub task: &'static str,
    pub method: &'static str,
    pub m: usize,
    pub trial: usize,
    pub test_index: usize,
    pub error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregateRecord {
    pub task: &'static str,
    pub method: &'static str,
    pub m: usize,
    pub trials: usize,
    pub mean_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_hat: Option<f64>,
    pub failed: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TimingRecord {
    pub method: &'static str,
    pub m: usize,
    pub train_time_seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct AggregateFile {
    pub task: &'static str,
    pub records: Vec<AggregateRecord>,
    /// Isolated so determinism checks can strip it.
    pub timing: Vec<TimingRecord>,
}

pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub aggregate: AggregateFile,
}

pub fn rows_to_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from("task,method,m,trial,test_index,error\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.task, r.method, r.m, r.trial, r.test_index, r.error
        ));
    }
    out
}

struct TrialOut {
    rows: Vec<(usize, f64)>,
    rho: Option<f64>,
    failed: usize,
    train_seconds: f64,
}

/// Run every (method, m, trial) cell; `jobs` sizes the worker pool.
pub fn run_experiment(config: &ExperimentConfig, jobs: usize) -> Result<ExperimentOutput> {
    config.validate().map_err(|e| anyhow!(e))?;
    let ensemble = config.distribution.generate().context("generating ensemble")?;
    let sizes = config.sketch_sizes();

    let cells: Vec<(usize, usize, usize)> = (0..config.methods.len())
        .flat_map(|mi| {
            let sizes = &sizes;
            (0..sizes.len()).flat_map(move |si| (0..config.trials).map(move |t| (mi, si, t)))
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("building worker pool")?;
    let outcomes: Vec<(usize, usize, usize, TrialOut)> = pool.install(|| {
        use rayon::prelude::*;
        cells
            .par_iter()
            .map(|&(mi, si, t)| {
                let out = run_trial(config, &ensemble, config.methods[mi], sizes[si], mi, si, t)?;
                Ok((mi, si, t, out))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    // Deterministic order regardless of pool scheduling.
    let mut outcomes = outcomes;
    outcomes.sort_by_key(|&(mi, si, t, _)| (mi, si, t));

    let mut rows = Vec::new();
    let mut records = Vec::new();
    let mut timing = Vec::new();
    for mi in 0..config.methods.len() {
        for (si, &m) in sizes.iter().enumerate() {
            let method = config.methods[mi].as_str();
            let mut errors = Vec::new();
            let mut rhos = Vec::new();
            let mut failed = 0usize;
            let mut seconds = 0.0;
            let mut trials = 0usize;
            for (_, _, t, out) in outcomes.iter().filter(|&&(a, b, _, _)| a == mi && b == si) {
                trials += 1;
                seconds += out.train_seconds;
                failed += out.failed;
                if let Some(r) = out.rho {
                    rhos.push(r);
                }
                for &(test_index, error) in &out.rows {
                    rows.push(ResultRow {
                        task: config.task.as_str(),
                        method,
                        m,
                        trial: *t,
                        test_index,
                        error,
                    });
                    if error.is_finite() {
                        errors.push(error);
                    }
                }
            }
            let mean_error = if errors.is_empty() {
                None
            } else {
                Some(errors.iter().sum::<f64>() / errors.len() as f64)
            };
            let rho_hat = if rhos.is_empty() {
                None
            } else {
                Some(rhos.iter().sum::<f64>() / rhos.len() as f64)
            };
            records.push(AggregateRecord {
                task: config.task.as_str(),
                method,
                m,
                trials,
                mean_error,
                rho_hat,
                failed,
            });
            timing.push(TimingRecord {
                method,
                m,
                train_time_seconds: seconds / trials.max(1) as f64,
            });
        }
    }
    Ok(ExperimentOutput {
        rows,
        aggregate: AggregateFile { task: config.task.as_str(), records, timing },
    })
}

fn trial_seed(config: &ExperimentConfig, mi: usize, si: usize, trial: usize) -> u64 {
    let stream = ((mi as u64) << 40) | ((si as u64) << 20) | trial as u64;
    derive_seed(config.seed, stream)
}

fn run_trial(
    config: &ExperimentConfig,
    ensemble: &Ensemble,
    method: Method,
    m: usize,
    mi: usize,
    si: usize,
    trial: usize,
) -> Result<TrialOut> {
    let seed = trial_seed(config, mi, si, trial);
    match (config.task, ensemble) {
        (Task::LraOne, Ensemble::Matrices(tr)) => lra_one_trial(config, tr, method, m, seed),
        (Task::LraTwo, Ensemble::Matrices(tr)) => lra_two_trial(config, tr, method, m, seed),
        (Task::Fewshot, Ensemble::Matrices(tr)) => fewshot_trial(config, tr, method, m, seed),
        (Task::IhsLasso | Task::IhsNuclear, Ensemble::Problems(ps)) => {
            ihs_trial(config, ps, method, m, seed)
        }
        (Task::FastRegression, Ensemble::Problems(ps)) => {
            fast_regression_trial(config, ps, method, m, seed)
        }
        _ => bail!(
            "config: task {} does not match the generated ensemble flavor",
            config.task.as_str()
        ),
    }
}

fn heavy_budget(config: &ExperimentConfig, m: usize) -> usize {
    let frac = config.ihs.unwrap_or_default().heavy_fraction;
    ((frac * m as f64).round() as usize).min(m.saturating_sub(1))
}

fn value_sgd(config: &ExperimentConfig, seed: u64) -> SgdConfig {
    let v = config.values.unwrap_or_default();
    SgdConfig { lr: v.lr, iters: v.iters, batch_size: v.batch_size, seed }
}

/// Learned (or random) positions for a training set of matrices.
fn position_plan(
    config: &ExperimentConfig,
    tr: &TrainingSet,
    method: Method,
    m: usize,
    k: usize,
    seed: u64,
) -> Result<PositionPlan> {
    let n = tr.rows();
    Ok(match method {
        Method::Classical => PositionPlan::classical(m, n, seed)?,
        Method::Greedy => {
            greedy_positions(tr, m, k, ColumnOrder::NonincreasingNorm, GreedyObjective::Proxy)?
                .plan
        }
        Method::InnerProduct => {
            inner_product_positions(&tr.train_average(), m, k, seed)?.position_plan()?
        }
        Method::HeavyRows | Method::HeavyRowsPlusValues => {
            let mult = config.ihs.unwrap_or_default().threshold_mult;
            let heavy = learn_heavy_row_indices(tr, mult, heavy_budget(config, m))?;
            heavy_row_plan(&heavy, m, n, seed)?
        }
    })
}

/// A sketch ready for LRA evaluation: positions by the method, values
/// either the plan's signs, the inner-product method's per-bucket
/// singular-vector values, or
/// SGD-optimized values.
fn lra_sketch(
    config: &ExperimentConfig,
    tr: &TrainingSet,
    method: Method,
    m: usize,
    k: usize,
    seed: u64,
) -> Result<CountSketch> {
    if method == Method::InnerProduct {
        // The per-bucket singular-vector values live in S1 directly.
        return Ok(inner_product_positions(&tr.train_average(), m, k, seed)?.s1);
    }
    let plan = position_plan(config, tr, method, m, k, seed)?;
    if method == Method::HeavyRowsPlusValues {
        let out = optimize_values(
            &plan,
            tr,
            ValueLossKind::Fewshot { k },
            value_sgd(config, derive_seed(seed, 0x77)),
        )?;
        return Ok(out.sketch);
    }
    Ok(plan.to_countsketch())
}

fn lra_one_trial(
    config: &ExperimentConfig,
    tr: &TrainingSet,
    method: Method,
    m: usize,
    seed: u64,
) -> Result<TrialOut> {
    let k = config.k.expect("validated");
    let started = Instant::now();
    let sketch = Sketch::Count(lra_sketch(config, tr, method, m, k, seed)?);
    let train_seconds = started.elapsed().as_secs_f64();

    let mut rows = Vec::new();
    let mut failed = 0;
    for (slot, a) in tr.test_matrices().enumerate() {
        let test_index = tr.test_indices()[slot];
        match lra_one_sided(&sketch, a, k) {
            Ok(res) => rows.push((test_index, res.error - best_rank_k_error(a, k)?)),
            Err(_) => {
                failed += 1;
                rows.push((test_index, f64::NAN));
            }
        }
    }
    Ok(TrialOut { rows, rho: None, failed, train_seconds })
}

fn transposed_training_set(tr: &TrainingSet) -> Result<TrainingSet> {
    let mats: Vec<Matrix> = tr.matrices().iter().map(|m| m.transpose()).collect();
    Ok(TrainingSet::new(
        mats,
        tr.train_indices().to_vec(),
        tr.test_indices().to_vec(),
    )?)
}

fn lra_two_trial(
    config: &ExperimentConfig,
    tr: &TrainingSet,
    method: Method,
    m: usize,
    seed: u64,
) -> Result<TrialOut> {
    let k = config.k.expect("validated");
    let n = tr.rows();
    let d = tr.cols();
    let started = Instant::now();
    let s = Sketch::Count(lra_sketch(config, tr, method, m, k, seed)?);
    let trt = transposed_training_set(tr)?;
    let r = Sketch::Count(lra_sketch(config, &trt, method, m, k, derive_seed(seed, 1))?);
    let train_seconds = started.elapsed().as_secs_f64();

    // Estimator sketches: classical, 5m rows, fresh per trial.
    let v = Sketch::Count(CountSketch::random(5 * m, n, derive_seed(seed, 2))?);
    let w = Sketch::Count(CountSketch::random(5 * m, d, derive_seed(seed, 3))?);
    let set = SketchSet { s, r, v, w };

    let mut rows = Vec::new();
    let mut failed = 0;
    for (slot, a) in tr.test_matrices().enumerate() {
        let test_index = tr.test_indices()[slot];
        match lra_two_sided(&set, a, k) {
            Ok(res) => rows.push((test_index, res.error - best_rank_k_error(a, k)?)),
            Err(_) => {
                failed += 1;
                rows.push((test_index, f64::NAN));
            }
        }
    }
    Ok(TrialOut { rows, rho: None, failed, train_seconds })
}

fn fewshot_trial(
    config: &ExperimentConfig,
    tr: &TrainingSet,
    method: Method,
    m: usize,
    seed: u64,
) -> Result<TrialOut> {
    let k = config.k.expect("validated");
    let started = Instant::now();
    // Every method's plan goes through few-shot SGD; the method controls
    // the initialization.
    let plan = position_plan(config, tr, method, m, k, seed)?;
    let out = optimize_values(
        &plan,
        tr,
        ValueLossKind::Fewshot { k },
        value_sgd(config, derive_seed(seed, 0x77)),
    )?;
    let sketch = Sketch::Count(out.sketch);
    let train_seconds = started.elapsed().as_secs_f64();

    let mut rows = Vec::new();
    let mut failed = 0;
    for (slot, a) in tr.test_matrices().enumerate() {
        let test_index = tr.test_indices()[slot];
        match lra_one_sided(&sketch, a, k) {
            Ok(res) => rows.push((test_index, res.error - best_rank_k_error(a, k)?)),
            Err(_) => {
                failed += 1;
                rows.push((test_index, f64::NAN));
            }
        }
    }
    Ok(TrialOut { rows, rho: None, failed, train_seconds })
}

fn best_rank_k_error(a: &Matrix, k: usize) -> Result<f64> {
    let f = truncated_svd(a, k)?;
    Ok(a.sub(&f.reconstruct()).frobenius_norm_sq())
}

fn ihs_trial(
    config: &ExperimentConfig,
    ps: &ProblemSet,
    method: Method,
    m: usize,
    seed: u64,
) -> Result<TrialOut> {
    let settings = config.ihs.unwrap_or_default();
    let designs = ps.design_training_set()?;
    let n = designs.rows();

    let started = Instant::now();
    let heavy = match method {
        Method::HeavyRows | Method::HeavyRowsPlusValues => {
            learn_heavy_row_indices(&designs, settings.threshold_mult, heavy_budget(config, m))?
        }
        _ => Vec::new(),
    };
    // Value-optimized sketches are trained offline, once per iteration
    // index, and reused across every test problem.
    let trained: Vec<CountSketch> = if method == Method::HeavyRowsPlusValues {
        (0..settings.t_iters)
            .map(|t| {
                let plan = heavy_row_plan(&heavy, m, n, derive_seed(seed, 100 + t as u64))?;
                let out = optimize_values(
                    &plan,
                    &designs,
                    ValueLossKind::Subspace,
                    value_sgd(config, derive_seed(seed, 200 + t as u64)),
                )?;
                Ok(out.sketch)
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let train_seconds = started.elapsed().as_secs_f64();

    let source = |t: usize| -> sketchlearn::Result<Sketch> {
        match method {
            Method::Classical => Ok(Sketch::Count(CountSketch::random(
                m,
                n,
                derive_seed(seed, 100 + t as u64),
            )?)),
            Method::HeavyRows => {
                let plan = heavy_row_plan(&heavy, m, n, derive_seed(seed, 100 + t as u64))?;
                Ok(Sketch::Count(plan.to_countsketch()))
            }
            Method::HeavyRowsPlusValues => Ok(Sketch::Count(trained[t].clone())),
            _ => unreachable!("validated: method defined for IHS tasks"),
        }
    };

    let pg = PgConfig { iters: settings.pg_iters };
    let mut rows = Vec::new();
    let mut rhos = Vec::new();
    let mut failed = 0;
    for (slot, problem) in ps.test_problems().enumerate() {
        let test_index = ps.test[slot];
        match ihs_solve(problem, &source, settings.t_iters, pg) {
            Ok(trace) => {
                rows.push((test_index, trace.rate));
                rhos.push(trace.rate);
            }
            Err(_) => {
                failed += 1;
                rows.push((test_index, f64::NAN));
            }
        }
    }
    let rho = if rhos.is_empty() {
        None
    } else {
        Some(rhos.iter().sum::<f64>() / rhos.len() as f64)
    };
    Ok(TrialOut { rows, rho, failed, train_seconds })
}

fn fast_regression_trial(
    config: &ExperimentConfig,
    ps: &ProblemSet,
    method: Method,
    m: usize,
    seed: u64,
) -> Result<TrialOut> {
    let designs = ps.design_training_set()?;
    let n = designs.rows();
    let settings = config.fast_regression.unwrap_or_default();

    let started = Instant::now();
    let sketch = match method {
        Method::Classical => Sketch::Count(CountSketch::random(m, n, derive_seed(seed, 100))?),
        Method::HeavyRows => {
            let mult = config.ihs.unwrap_or_default().threshold_mult;
            let heavy = learn_heavy_row_indices(&designs, mult, heavy_budget(config, m))?;
            Sketch::Count(heavy_row_plan(&heavy, m, n, derive_seed(seed, 100))?.to_countsketch())
        }
        Method::HeavyRowsPlusValues => {
            let mult = config.ihs.unwrap_or_default().threshold_mult;
            let heavy = learn_heavy_row_indices(&designs, mult, heavy_budget(config, m))?;
            let plan = heavy_row_plan(&heavy, m, n, derive_seed(seed, 100))?;
            let out = optimize_values(
                &plan,
                &designs,
                ValueLossKind::Subspace,
                value_sgd(config, derive_seed(seed, 200)),
            )?;
            Sketch::Count(out.sketch)
        }
        _ => unreachable!("validated: method defined for fast regression"),
    };
    let train_seconds = started.elapsed().as_secs_f64();

    let gd = GdConfig { lr: settings.lr, iters: settings.iters };
    let mut rows = Vec::new();
    let mut failed = 0;
    for (slot, problem) in ps.test_problems().enumerate() {
        let test_index = ps.test[slot];
        if problem.b.cols() != 1 {
            bail!("config: fast_regression needs single-column responses");
        }
        // Newton right-hand side at x = 0.
        let y = problem.a.transpose().matmul(&problem.b);
        match fast_regression_solve(&problem.a, &y, &sketch, gd) {
            Ok(out) if !out.diverged => rows.push((test_index, *out.residuals.last().unwrap())),
            Ok(_) | Err(_) => {
                failed += 1;
                rows.push((test_index, f64::NAN));
            }
        }
    }
    Ok(TrialOut { rows, rho: None, failed, train_seconds })
}

/// Shared by `gen-data`: generate and persist the configured ensemble.
pub fn generate_and_save(spec: &DistributionSpec, dir: &std::path::Path) -> Result<()> {
    let ensemble = spec.generate().context("generating ensemble")?;
    sketchlearn::datagen::save_ensemble(dir, spec, &ensemble).context("writing ensemble")?;
    Ok(())
}

/// Recover the heavy index set from a heavy-rows plan: the unique
/// occupants of the leading run of singleton buckets.
pub fn heavy_indices_from_plan(plan: &PositionPlan) -> Vec<usize> {
    let mut occupancy = vec![0usize; plan.m];
    for &b in &plan.p {
        occupancy[b] += 1;
    }
    let mut prefix = 0;
    while prefix < plan.m && occupancy[prefix] == 1 {
        prefix += 1;
    }
    let mut heavy: Vec<usize> =
        (0..plan.p.len()).filter(|&i| plan.p[i] < prefix).collect();
    heavy.sort_unstable();
    heavy
}
