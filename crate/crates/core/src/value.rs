//! Optimizing the non-zero *values* of a fixed-position CountSketch by
//! mini-batch gradient descent on the few-shot, subspace-embedding, or
//! empirical low-rank losses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{qr, solve_upper_right, solve_upper_transpose, svd};
use crate::lra::lra_proxy_objective;
use crate::matrix::{vec_dot, Matrix};
use crate::position::{PositionPlan, TrainingSet};
use crate::rng::rng_from_seed;
use crate::sketch::{CountSketch, Sketch};

/// Which loss drives the value optimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "loss", rename_all = "snake_case")]
pub enum ValueLossKind {
    /// `||U_k^T S^T S U - I_0||_F^2` from the SVD of each training matrix.
    Fewshot { k: usize },
    /// `||(A R^{-1})^T A R^{-1} - I||_F` with R from QR(SA).
    Subspace,
    /// The one-sided LRA error itself.
    EmpiricalLra { k: usize },
}

/// Mini-batch SGD settings; plain constant-step descent.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub iters: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl SgdConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.iters == 0 || self.batch_size == 0 {
            return Err(Error::invalid("SgdConfig: lr, iters, batch_size must be positive"));
        }
        Ok(())
    }
}

/// Few-shot loss: with A = U Sigma V^T, evaluates
/// `||(S U_k)^T (S U) - I_0||_F^2` where I_0 is the k x r left-identity.
pub fn fewshot_loss(s: &Sketch, a: &Matrix, k: usize) -> Result<f64> {
    let f = svd(a)?;
    if k == 0 || k > f.rank() {
        return Err(Error::invalid(format!(
            "fewshot_loss: k={k} out of range 1..={}",
            f.rank()
        )));
    }
    let su = s.apply_left(&f.u)?;
    Ok(fewshot_loss_from_su(&su, k))
}

fn fewshot_loss_from_su(su: &Matrix, k: usize) -> f64 {
    let r = su.cols();
    let mut total = 0.0;
    for t in 0..k {
        for c in 0..r {
            let mut acc = 0.0;
            for row in 0..su.rows() {
                acc += su.get(row, t) * su.get(row, c);
            }
            if t == c {
                acc -= 1.0;
            }
            total += acc * acc;
        }
    }
    total
}

/// Subspace-embedding loss: QR-factor SA = QR and return
/// `||(A R^{-1})^T A R^{-1} - I||_F`. Errors when SA is rank-deficient.
pub fn subspace_loss(s: &Sketch, a: &Matrix) -> Result<f64> {
    let sa = s.apply_left(a)?;
    subspace_loss_from_sa(&sa, &a.gram())
}

fn subspace_loss_from_sa(sa: &Matrix, a_gram: &Matrix) -> Result<f64> {
    let d = a_gram.rows();
    if sa.rows() < d {
        return Err(Error::RankDeficient {
            factor: "SA",
            detail: format!("{} rows cannot span {d} columns", sa.rows()),
        });
    }
    let f = qr(sa)?;
    if f.min_rel_diag() <= 1e-12 {
        return Err(Error::RankDeficient {
            factor: "SA",
            detail: "QR of SA has a vanishing diagonal".into(),
        });
    }
    // (A R^{-1})^T (A R^{-1}) = R^{-T} (A^T A) R^{-1}.
    let m1 = solve_upper_transpose(&f.r, a_gram);
    let m2 = solve_upper_right(&m1, &f.r);
    let d_id = Matrix::identity(d);
    Ok(m2.sub(&d_id).frobenius_norm())
}

/// Empirical LRA loss: the exact one-sided rank-k error of S on A.
pub fn empirical_lra_loss(s: &Sketch, a: &Matrix, k: usize) -> Result<f64> {
    lra_proxy_objective(s, a, k)
}

/// Per-matrix context reused across SGD iterations.
enum MatrixCtx {
    Fewshot { u: Matrix },
    Subspace { a: Matrix, gram: Matrix },
    Empirical { a: Matrix },
}

impl MatrixCtx {
    fn prepare(kind: ValueLossKind, a: &Matrix) -> Result<Self> {
        match kind {
            ValueLossKind::Fewshot { k } => {
                let f = svd(a)?;
                if k == 0 || k > f.rank() {
                    return Err(Error::invalid(format!(
                        "optimize_values: fewshot k={k} exceeds rank {}",
                        f.rank()
                    )));
                }
                Ok(MatrixCtx::Fewshot { u: f.u })
            }
            ValueLossKind::Subspace => {
                Ok(MatrixCtx::Subspace { a: a.clone(), gram: a.gram() })
            }
            ValueLossKind::EmpiricalLra { k } => {
                if k == 0 {
                    return Err(Error::invalid("optimize_values: k must be >= 1"));
                }
                Ok(MatrixCtx::Empirical { a: a.clone() })
            }
        }
    }

    fn loss(&self, kind: ValueLossKind, m: usize, p: &[usize], v: &[f64]) -> Result<f64> {
        match (self, kind) {
            (MatrixCtx::Fewshot { u }, ValueLossKind::Fewshot { k }) => {
                let su = scatter(u, m, p, v);
                Ok(fewshot_loss_from_su(&su, k))
            }
            (MatrixCtx::Subspace { a, gram }, ValueLossKind::Subspace) => {
                let sa = scatter(a, m, p, v);
                subspace_loss_from_sa(&sa, gram)
            }
            (MatrixCtx::Empirical { a }, ValueLossKind::EmpiricalLra { k }) => {
                let cs = CountSketch { m, n: p.len(), p: p.to_vec(), v: v.to_vec() };
                lra_proxy_objective(&Sketch::Count(cs), a, k)
            }
            _ => unreachable!("context and loss kind always match"),
        }
    }

    fn gradient(&self, kind: ValueLossKind, m: usize, p: &[usize], v: &[f64]) -> Result<Vec<f64>> {
        match (self, kind) {
            (MatrixCtx::Fewshot { u }, ValueLossKind::Fewshot { k }) => {
                Ok(fewshot_gradient(u, k, m, p, v))
            }
            _ => {
                // Central differences, step scaled per coordinate.
                let mut grad = vec![0.0; v.len()];
                let mut probe = v.to_vec();
                for i in 0..v.len() {
                    let h = 1e-5 * v[i].abs().max(1.0);
                    let orig = probe[i];
                    probe[i] = orig + h;
                    let up = self.loss(kind, m, p, &probe)?;
                    probe[i] = orig - h;
                    let down = self.loss(kind, m, p, &probe)?;
                    probe[i] = orig;
                    grad[i] = (up - down) / (2.0 * h);
                }
                Ok(grad)
            }
        }
    }
}

/// `S X` for the sketch encoded by (m, p, v): bucket accumulation.
fn scatter(x: &Matrix, m: usize, p: &[usize], v: &[f64]) -> Matrix {
    let mut out = Matrix::zeros(m, x.cols());
    for (i, (&bucket, &coeff)) in p.iter().zip(v).enumerate() {
        if coeff == 0.0 {
            continue;
        }
        let src = x.row(i);
        let dst = out.row_mut(bucket);
        for (d, s) in dst.iter_mut().zip(src) {
            *d += coeff * s;
        }
    }
    out
}

/// Closed-form gradient of the few-shot loss in the sketch values.
fn fewshot_gradient(u: &Matrix, k: usize, m: usize, p: &[usize], v: &[f64]) -> Vec<f64> {
    let n = u.rows();
    let r = u.cols();
    let b = scatter(u, m, p, v); // S U, m x r

    // M = B_k^T B - I_0, k x r.
    let mut mm = Matrix::zeros(k, r);
    for t in 0..k {
        for c in 0..r {
            let mut acc = 0.0;
            for row in 0..m {
                acc += b.get(row, t) * b.get(row, c);
            }
            if t == c {
                acc -= 1.0;
            }
            mm.set(t, c, acc);
        }
    }
    // mb = M B^T (k x m); p2 = B_k M (m x r).
    let mb = mm.matmul(&b.transpose());
    let bk = b.take_cols(k);
    let p2 = bk.matmul(&mm);

    let mut grad = vec![0.0; n];
    for i in 0..n {
        let bucket = p[i];
        let u_row = u.row(i);
        let term1: f64 = (0..k).map(|t| u_row[t] * mb.get(t, bucket)).sum();
        let term2 = vec_dot(p2.row(bucket), u_row);
        grad[i] = 2.0 * (term1 + term2);
    }
    grad
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TracePoint {
    pub iter: usize,
    pub train_loss: f64,
    pub holdout_loss: Option<f64>,
}

/// CSV rows `iter,train_loss,holdout_loss`; the holdout column is empty
/// when no test split exists.
pub fn trace_to_csv(trace: &[TracePoint]) -> String {
    let mut out = String::from("iter,train_loss,holdout_loss\n");
    for pt in trace {
        match pt.holdout_loss {
            Some(h) => out.push_str(&format!("{},{},{}\n", pt.iter, pt.train_loss, h)),
            None => out.push_str(&format!("{},{},\n", pt.iter, pt.train_loss)),
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct ValueOptimization {
    /// The plan's positions with the best-seen values.
    pub sketch: CountSketch,
    pub best_train_loss: f64,
    pub initial_train_loss: f64,
    pub trace: Vec<TracePoint>,
}

/// Mini-batch gradient descent on the values of a fixed-position plan.
/// Returns the iterate with the best full-training-set loss seen. The seed
/// fixes the batch shuffle, so identical seeds give bit-identical traces.
pub fn optimize_values(
    plan: &PositionPlan,
    tr: &TrainingSet,
    loss: ValueLossKind,
    cfg: SgdConfig,
) -> Result<ValueOptimization> {
    cfg.validate()?;
    if plan.n() != tr.rows() {
        return Err(Error::dims(format!(
            "optimize_values: plan covers {} rows, data has {}",
            plan.n(),
            tr.rows()
        )));
    }
    if let ValueLossKind::Subspace = loss {
        if plan.m < tr.cols() {
            return Err(Error::invalid(format!(
                "optimize_values: subspace loss needs m >= d, got m={} d={}",
                plan.m,
                tr.cols()
            )));
        }
    }

    let train_ctx: Vec<MatrixCtx> = tr
        .train_matrices()
        .map(|a| MatrixCtx::prepare(loss, a))
        .collect::<Result<_>>()?;
    let test_ctx: Vec<MatrixCtx> = tr
        .test_matrices()
        .map(|a| MatrixCtx::prepare(loss, a))
        .collect::<Result<_>>()?;

    let m = plan.m;
    let p = &plan.p;
    let mean_loss = |ctxs: &[MatrixCtx], v: &[f64]| -> Result<f64> {
        let mut acc = 0.0;
        for ctx in ctxs {
            acc += ctx.loss(loss, m, p, v)?;
        }
        Ok(acc / ctxs.len() as f64)
    };

    let mut v = plan.signs.clone();
    let initial = mean_loss(&train_ctx, &v)?;
    let holdout = |v: &[f64]| -> Result<Option<f64>> {
        if test_ctx.is_empty() {
            Ok(None)
        } else {
            mean_loss(&test_ctx, v).map(Some)
        }
    };

    let mut best_v = v.clone();
    let mut best = initial;
    let mut trace = vec![TracePoint { iter: 0, train_loss: initial, holdout_loss: holdout(&v)? }];
    let divergence_limit = 1e6 * initial.max(f64::MIN_POSITIVE);

    let mut rng = rng_from_seed(cfg.seed);
    let train_count = train_ctx.len();
    let mut epoch_order: Vec<usize> = (0..train_count).collect();
    let mut cursor = train_count; // force an initial shuffle

    for iter in 1..=cfg.iters {
        // Next mini-batch, reshuffling at epoch boundaries.
        let mut batch = Vec::with_capacity(cfg.batch_size.min(train_count));
        while batch.len() < cfg.batch_size.min(train_count) {
            if cursor >= train_count {
                for i in (1..train_count).rev() {
                    let j = rand::Rng::random_range(&mut rng, 0..=i);
                    epoch_order.swap(i, j);
                }
                cursor = 0;
            }
            batch.push(epoch_order[cursor]);
            cursor += 1;
        }

        let mut grad = vec![0.0; v.len()];
        for &b in &batch {
            let g = train_ctx[b].gradient(loss, m, p, &v)?;
            for (acc, gi) in grad.iter_mut().zip(&g) {
                *acc += gi;
            }
        }
        let scale = cfg.lr / batch.len() as f64;
        for (vi, gi) in v.iter_mut().zip(&grad) {
            *vi -= scale * gi;
        }

        let train_loss = mean_loss(&train_ctx, &v)?;
        trace.push(TracePoint { iter, train_loss, holdout_loss: holdout(&v)? });
        if !train_loss.is_finite() || train_loss > divergence_limit {
            return Err(Error::Divergence {
                initial,
                current: train_loss,
                limit: divergence_limit,
                trace: trace.iter().map(|t| t.train_loss).collect(),
            });
        }
        if train_loss < best {
            best = train_loss;
            best_v.copy_from_slice(&v);
        }
    }

    Ok(ValueOptimization {
        sketch: CountSketch { m, n: p.len(), p: p.clone(), v: best_v },
        best_train_loss: best,
        initial_train_loss: initial,
        trace,
    })
}

/// Compare the analytic few-shot gradient against central differences with
/// step `h` over every value coordinate; returns the largest deviation
/// relative to the largest finite-difference magnitude. The other losses
/// carry no analytic gradient: their loss is still evaluated (surfacing
/// precondition failures) before an unsupported-loss error is returned.
pub fn gradient_check(
    loss: ValueLossKind,
    s: &CountSketch,
    a: &Matrix,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::invalid("gradient_check: h must be positive"));
    }
    let ctx = MatrixCtx::prepare(loss, a)?;
    ctx.loss(loss, s.m, &s.p, &s.v)?;
    let k = match loss {
        ValueLossKind::Fewshot { k } => k,
        _ => {
            return Err(Error::invalid(
                "gradient_check: analytic gradient is only available for the fewshot loss",
            ))
        }
    };
    let f = svd(a)?;
    let analytic = fewshot_gradient(&f.u, k, s.m, &s.p, &s.v);

    let mut probe = s.v.clone();
    let mut fd = vec![0.0; s.v.len()];
    for i in 0..s.v.len() {
        let step = h * s.v[i].abs().max(1.0);
        let orig = probe[i];
        probe[i] = orig + step;
        let up = ctx.loss(loss, s.m, &s.p, &probe)?;
        probe[i] = orig - step;
        let down = ctx.loss(loss, s.m, &s.p, &probe)?;
        probe[i] = orig;
        fd[i] = (up - down) / (2.0 * step);
    }
    let scale = fd.iter().map(|x| x.abs()).fold(0.0f64, f64::max).max(1e-12);
    let max_dev = analytic
        .iter()
        .zip(&fd)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    Ok(max_dev / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::gen_lasso_planted;
    use crate::linalg::{leverage_scores, svd_values};
    use crate::lra::lra_one_sided;
    use crate::position::{heavy_row_plan, Provenance};
    use crate::rng::rng_from_seed;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = rng_from_seed(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn permutation_sketch(n: usize) -> CountSketch {
        CountSketch::new(n, (0..n).rev().collect(), vec![1.0; n]).unwrap()
    }

    #[test]
    fn fewshot_orthonormal_sketch_is_zero() {
        let a = random_matrix(10, 6, 3);
        let s = Sketch::Count(permutation_sketch(10));
        let loss = fewshot_loss(&s, &a, 3).unwrap();
        assert!(loss <= 1e-20, "loss {loss}");
    }

    #[test]
    fn fewshot_zero_sketch_is_k() {
        let a = random_matrix(10, 6, 5);
        let dead = CountSketch::new(4, vec![0; 10], vec![0.0; 10]).unwrap();
        for k in [1usize, 2, 4] {
            let loss = fewshot_loss(&Sketch::Count(dead.clone()), &a, k).unwrap();
            assert!((loss - k as f64).abs() <= 1e-12, "k={k}: {loss}");
        }
    }

    #[test]
    fn fewshot_matches_dense_formula() {
        let (n, d, k, m) = (16, 6, 2, 8);
        let a = random_matrix(n, d, 7);
        let cs = CountSketch::random(m, n, 9).unwrap();
        let loss = fewshot_loss(&Sketch::Count(cs.clone()), &a, k).unwrap();

        // Dense oracle: U_k^T S^T S U - I_0 built by explicit matmuls.
        let f = crate::linalg::svd(&a).unwrap();
        let s_dense = cs.to_dense();
        let sts = s_dense.transpose().matmul(&s_dense);
        let m_full = f.u.take_cols(k).transpose().matmul(&sts).matmul(&f.u);
        let mut want = 0.0;
        for t in 0..k {
            for c in 0..f.rank() {
                let e = m_full.get(t, c) - if t == c { 1.0 } else { 0.0 };
                want += e * e;
            }
        }
        assert!((loss - want).abs() <= 1e-10, "{loss} vs {want}");
    }

    #[test]
    fn subspace_identity_on_orthonormal_columns_is_zero() {
        let a = crate::linalg::qr(&random_matrix(12, 4, 11)).unwrap().q;
        let loss = subspace_loss(&Sketch::identity(12), &a).unwrap();
        assert!(loss <= 1e-10, "loss {loss}");
    }

    #[test]
    fn subspace_loss_bounded_by_operator_deviation() {
        // For a (1 +- eps)-embedding, the Frobenius loss is at most
        // sqrt(d) * 3 eps for small eps.
        let d = 4;
        for seed in 0..5 {
            let a = random_matrix(300, d, 100 + seed);
            let cs = CountSketch::random(120, 300, 200 + seed).unwrap();
            let s = Sketch::Count(cs);
            let sa = s.apply_left(&a).unwrap();
            let f = crate::linalg::qr(&sa).unwrap();
            let ar = crate::linalg::solve_upper_right(&a, &f.r);
            let sig = svd_values(&ar).unwrap();
            let eps = sig
                .iter()
                .map(|x| (x * x - 1.0f64).abs())
                .fold(0.0f64, f64::max);
            if eps >= 0.5 {
                continue;
            }
            let loss = subspace_loss(&s, &a).unwrap();
            assert!(
                loss <= (d as f64).sqrt() * 3.0 * eps.max(1e-12),
                "seed {seed}: loss {loss} vs eps {eps}"
            );
        }
    }

    #[test]
    fn subspace_matches_dense_oracle() {
        let (n, d, m) = (64, 4, 24);
        let a = random_matrix(n, d, 31);
        let cs = CountSketch::random(m, n, 33).unwrap();
        let loss = subspace_loss(&Sketch::Count(cs.clone()), &a).unwrap();

        // Oracle: explicit R^{-1}, then T = A R^{-1} and || T^T T - I ||_F.
        let sa = cs.to_dense().matmul(&a);
        let f = crate::linalg::qr(&sa).unwrap();
        let r_inv = crate::linalg::solve_upper(&f.r, &Matrix::identity(d));
        let t = a.matmul(&r_inv);
        let want = t.transpose().matmul(&t).sub(&Matrix::identity(d)).frobenius_norm();
        assert!((loss - want).abs() <= 1e-10, "{loss} vs {want}");
    }

    #[test]
    fn subspace_rank_deficient_errors() {
        let a = random_matrix(12, 4, 41);
        let dead = CountSketch::new(6, vec![0; 12], vec![0.0; 12]).unwrap();
        match subspace_loss(&Sketch::Count(dead), &a) {
            Err(Error::RankDeficient { factor, .. }) => assert_eq!(factor, "SA"),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn subspace_embedding_sandwich() {
        // Measured operator deviation <= 0.4 implies the (1 +- eps) norm
        // sandwich for every direction.
        let d = 5;
        let mut checked = 0;
        for seed in 0..40 {
            if checked >= 5 {
                break;
            }
            let a = random_matrix(200, d, 300 + seed);
            let s = Sketch::Count(CountSketch::random(80, 200, 400 + seed).unwrap());
            let sa = s.apply_left(&a).unwrap();
            let Ok(f) = crate::linalg::qr(&sa) else { continue };
            if f.min_rel_diag() <= 1e-10 {
                continue;
            }
            let ar = crate::linalg::solve_upper_right(&a, &f.r);
            let sig = svd_values(&ar).unwrap();
            let eps = sig.iter().map(|x| (x * x - 1.0f64).abs()).fold(0.0f64, f64::max);
            if eps > 0.4 {
                continue;
            }
            checked += 1;
            let mut rng = rng_from_seed(500 + seed);
            for _ in 0..1000 {
                let x = Matrix::from_fn(d, 1, |_, _| rng.sample(StandardNormal));
                let ax = a.matmul(&x).frobenius_norm();
                let sax = s.apply_left(&a).unwrap().matmul(&x).frobenius_norm();
                assert!(
                    sax >= (1.0 - eps) * ax - 1e-9 && sax <= (1.0 + eps) * ax + 1e-9,
                    "sandwich violated: {sax} vs {ax} at eps {eps}"
                );
            }
        }
        assert!(checked >= 3, "too few instances with eps <= 0.4");
    }

    #[test]
    fn empirical_loss_equals_one_sided_error() {
        let a = random_matrix(20, 8, 51);
        let s = Sketch::Count(CountSketch::random(6, 20, 53).unwrap());
        let loss = empirical_lra_loss(&s, &a, 3).unwrap();
        let exact = lra_one_sided(&s, &a, 3).unwrap().error;
        assert!((loss - exact).abs() <= 1e-9 * exact.max(1.0));
    }

    #[test]
    fn optimize_zero_loss_returns_initial_values() {
        let a = random_matrix(8, 4, 61);
        let tr = TrainingSet::all_train(vec![a]).unwrap();
        // Permutation positions: loss already zero, gradient zero.
        let plan = PositionPlan::new(
            8,
            (0..8).rev().collect(),
            vec![1.0; 8],
            Provenance::Classical,
        )
        .unwrap();
        let out = optimize_values(
            &plan,
            &tr,
            ValueLossKind::Fewshot { k: 2 },
            SgdConfig { lr: 0.1, iters: 20, batch_size: 1, seed: 1 },
        )
        .unwrap();
        assert_eq!(out.sketch.v, plan.signs);
        assert!(out.best_train_loss <= 1e-20);
    }

    #[test]
    fn optimize_fewshot_descends() {
        // Positions isolating the top-k leverage rows; SGD drives the loss
        // under 0.1x initial within 500 iterations.
        let (n, d, k, m) = (32usize, 8usize, 3usize, 8usize);
        let a = {
            // A few dominant rows so the top leverage set is meaningful.
            let mut base = random_matrix(n, d, 71);
            for i in 0..k {
                let row: Vec<f64> = (0..d).map(|j| base.get(i, j) * 6.0).collect();
                for (j, x) in row.iter().enumerate() {
                    base.set(i, j, *x);
                }
            }
            base
        };
        let tau = leverage_scores(&a).unwrap();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&x, &y| tau[y].partial_cmp(&tau[x]).unwrap());
        let top: Vec<usize> = idx[..k].to_vec();
        let plan = heavy_row_plan(&top, m, n, 73).unwrap();
        let tr = TrainingSet::all_train(vec![a]).unwrap();
        let out = optimize_values(
            &plan,
            &tr,
            ValueLossKind::Fewshot { k },
            SgdConfig { lr: 0.05, iters: 500, batch_size: 1, seed: 5 },
        )
        .unwrap();
        assert!(
            out.best_train_loss <= 0.1 * out.initial_train_loss,
            "loss {} from {}",
            out.best_train_loss,
            out.initial_train_loss
        );
    }

    #[test]
    fn optimize_subspace_beats_classical_on_heldout() {
        let (n, d, m) = (64usize, 6usize, 36usize);
        let mut wins = 0;
        for seed in 0..10 {
            let mats: Vec<Matrix> = (0..8)
                .map(|t| gen_lasso_planted(n, d, 6, 20.0, 0.1, seed, t).unwrap().a)
                .collect();
            let tr = TrainingSet::new(mats, (0..6).collect(), vec![6, 7]).unwrap();
            let heavy = crate::position::learn_heavy_row_indices(&tr, 5.0, 6).unwrap();
            let plan = heavy_row_plan(&heavy, m, n, 900 + seed).unwrap();
            let out = optimize_values(
                &plan,
                &tr,
                ValueLossKind::Subspace,
                SgdConfig { lr: 0.02, iters: 120, batch_size: 2, seed: 700 + seed },
            )
            .unwrap();
            let learned = Sketch::Count(out.sketch.clone());
            let classical = Sketch::Count(plan.to_countsketch());
            let mut learned_loss = 0.0;
            let mut classical_loss = 0.0;
            for t in tr.test_matrices() {
                learned_loss += subspace_loss(&learned, t).unwrap();
                classical_loss += subspace_loss(&classical, t).unwrap();
            }
            if learned_loss < classical_loss {
                wins += 1;
            }
        }
        assert!(wins >= 8, "learned values won only {wins}/10 seeds");
    }

    #[test]
    fn optimize_diverges_with_absurd_lr() {
        let a = random_matrix(16, 4, 81);
        let tr = TrainingSet::all_train(vec![a]).unwrap();
        let plan = PositionPlan::classical(6, 16, 83).unwrap();
        let out = optimize_values(
            &plan,
            &tr,
            ValueLossKind::Fewshot { k: 2 },
            SgdConfig { lr: 1e9, iters: 200, batch_size: 1, seed: 1 },
        );
        match out {
            Err(Error::Divergence { trace, .. }) => assert!(!trace.is_empty()),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn optimize_deterministic_across_runs() {
        let mats: Vec<Matrix> = (0..4).map(|t| random_matrix(12, 5, 90 + t)).collect();
        let tr = TrainingSet::all_train(mats).unwrap();
        let plan = PositionPlan::classical(6, 12, 91).unwrap();
        let cfg = SgdConfig { lr: 0.05, iters: 30, batch_size: 2, seed: 17 };
        let a = optimize_values(&plan, &tr, ValueLossKind::Fewshot { k: 2 }, cfg).unwrap();
        let b = optimize_values(&plan, &tr, ValueLossKind::Fewshot { k: 2 }, cfg).unwrap();
        assert_eq!(a.sketch.v, b.sketch.v);
        let ta: Vec<f64> = a.trace.iter().map(|t| t.train_loss).collect();
        let tb: Vec<f64> = b.trace.iter().map(|t| t.train_loss).collect();
        assert_eq!(ta, tb);
        assert!(a.best_train_loss <= a.initial_train_loss);
    }

    #[test]
    fn gradient_check_fewshot_tight() {
        let (n, d, k, m) = (12, 4, 2, 6);
        let a = random_matrix(n, d, 101);
        let cs = CountSketch::random(m, n, 103).unwrap();
        let dev = gradient_check(ValueLossKind::Fewshot { k }, &cs, &a, 1e-5).unwrap();
        assert!(dev <= 1e-5, "deviation {dev}");
    }

    #[test]
    fn gradient_check_error_paths() {
        let a = random_matrix(12, 4, 111);
        let dead = CountSketch::new(6, vec![0; 12], vec![0.0; 12]).unwrap();
        // Zero sketch: the subspace loss itself is undefined.
        match gradient_check(ValueLossKind::Subspace, &dead, &a, 1e-5) {
            Err(Error::RankDeficient { .. }) => {}
            other => panic!("expected precondition error, got {other:?}"),
        }
        // Well-posed subspace loss still has no analytic gradient.
        let live = CountSketch::random(8, 12, 113).unwrap();
        match gradient_check(ValueLossKind::Subspace, &live, &a, 1e-5) {
            Err(Error::InvalidArgument(_)) => {}
            other => panic!("expected unsupported-loss error, got {other:?}"),
        }
    }

    #[test]
    fn fewshot_gradient_taylor_consistency() {
        let (n, d, k, m) = (10, 5, 2, 5);
        let a = random_matrix(n, d, 121);
        let cs = CountSketch::random(m, n, 123).unwrap();
        let f = crate::linalg::svd(&a).unwrap();
        let g = fewshot_gradient(&f.u, k, cs.m, &cs.p, &cs.v);
        let base = fewshot_loss(&Sketch::Count(cs.clone()), &a, k).unwrap();
        // L(v + t e_i) - L(v) - t g_i should shrink like t^2.
        for i in [0usize, 3, 7] {
            let mut prev_ratio = f64::INFINITY;
            for &t in &[1e-2, 1e-3] {
                let mut v = cs.v.clone();
                v[i] += t;
                let bumped = CountSketch::new(cs.m, cs.p.clone(), v).unwrap();
                let shifted = fewshot_loss(&Sketch::Count(bumped), &a, k).unwrap();
                let remainder = (shifted - base - t * g[i]).abs();
                let ratio = remainder / (t * t);
                // Quadratic remainder: ratio stays bounded as t shrinks.
                assert!(ratio <= prev_ratio.max(10.0) + 10.0, "coord {i}: ratio {ratio}");
                prev_ratio = ratio;
            }
        }
    }
}
