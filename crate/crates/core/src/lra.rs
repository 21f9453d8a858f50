//! Sketched low-rank approximation and its worst-case check procedures.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{pivoted_qr, projection_error_rank_k, ridge_leverage_scores, solve_upper, svd, svd_values};
use crate::matrix::Matrix;
use crate::sketch::{CountSketch, Sketch};

/// The (S, R, V, W) quadruple consumed by two-sided LRA: S and R compress
/// rows and columns, V and W estimate the residual regression.
#[derive(Debug, Clone)]
pub struct SketchSet {
    pub s: Sketch,
    pub r: Sketch,
    pub v: Sketch,
    pub w: Sketch,
}

impl SketchSet {
    /// All four sketches identity: the exact, uncompressed algorithm.
    pub fn identity(n: usize, d: usize) -> Self {
        SketchSet {
            s: Sketch::identity(n),
            r: Sketch::identity(d),
            v: Sketch::identity(n),
            w: Sketch::identity(d),
        }
    }

    /// Exact evaluation of a given (S, R): V and W identity.
    pub fn exact_eval(s: Sketch, r: Sketch, n: usize, d: usize) -> Self {
        SketchSet { s, r, v: Sketch::identity(n), w: Sketch::identity(d) }
    }

    fn check_dims(&self, n: usize, d: usize) -> Result<()> {
        if self.s.cols() != n || self.v.cols() != n {
            return Err(Error::dims(format!(
                "SketchSet: S/V must have {n} columns, got {}/{}",
                self.s.cols(),
                self.v.cols()
            )));
        }
        if self.r.cols() != d || self.w.cols() != d {
            return Err(Error::dims(format!(
                "SketchSet: R/W must have {d} columns, got {}/{}",
                self.r.cols(),
                self.w.cols()
            )));
        }
        Ok(())
    }
}

/// Rank-k approximation in factored form `P Q` with its exact squared
/// Frobenius error.
#[derive(Debug, Clone)]
pub struct LraResult {
    /// n x k_used.
    pub p: Matrix,
    /// k_used x d.
    pub q: Matrix,
    /// Requested rank.
    pub k: usize,
    /// Rank actually achievable from the sketched spaces.
    pub k_used: usize,
    /// Exact `||A - P Q||_F^2`.
    pub error: f64,
}

impl LraResult {
    /// True when the sketch could not support the requested rank.
    pub fn clamped(&self) -> bool {
        self.k_used < self.k
    }

    pub fn summary(&self, which_branch: Option<&str>) -> LraSummary {
        LraSummary {
            k: self.k,
            k_used: self.k_used,
            error: self.error,
            which_branch: which_branch.map(|s| s.to_string()),
        }
    }

    fn zero(a: &Matrix, k: usize) -> LraResult {
        LraResult {
            p: Matrix::zeros(a.rows(), 1),
            q: Matrix::zeros(1, a.cols()),
            k,
            k_used: 0,
            error: a.frobenius_norm_sq(),
        }
    }
}

/// JSON-facing summary of an [`LraResult`].
#[derive(Debug, Clone, Serialize)]
pub struct LraSummary {
    pub k: usize,
    pub k_used: usize,
    pub error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub which_branch: Option<String>,
}

/// One-sided sketched LRA: compact SVD of SA gives V, return `[AV]_k V^T`
/// factored as P, Q. The error field is exact.
pub fn lra_one_sided(s: &Sketch, a: &Matrix, k: usize) -> Result<LraResult> {
    if s.cols() != a.rows() {
        return Err(Error::dims(format!(
            "lra_one_sided: sketch has {} columns, A has {} rows",
            s.cols(),
            a.rows()
        )));
    }
    if k == 0 {
        return Err(Error::invalid("lra_one_sided: k must be >= 1"));
    }
    let sa = s.apply_left(a)?;
    if sa.is_zero() {
        return Ok(LraResult::zero(a, k));
    }
    let f = svd(&sa)?;
    let av = a.matmul(&f.v);
    if av.is_zero() {
        return Ok(LraResult::zero(a, k));
    }
    let fy = svd(&av)?;
    let k_used = k.min(fy.rank());
    // P = U_k diag(sigma_k), Q = V_k^T V^T.
    let p = Matrix::from_fn(a.rows(), k_used, |i, j| fy.u.get(i, j) * fy.sigma[j]);
    let q = fy.v.take_cols(k_used).transpose().matmul(&f.v.transpose());
    let error = a.sub(&p.matmul(&q)).frobenius_norm_sq();
    Ok(LraResult { p, q, k, k_used, error })
}

/// Proxy objective: best rank-k error of A restricted to row(SA), computed
/// in closed form as `||A||_F^2 - sum_{i<=k} sigma_i(AV)^2`. Equals
/// `lra_one_sided(S, A, k).error`; the R-side proxy is the same call on A^T.
pub fn lra_proxy_objective(s: &Sketch, a: &Matrix, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("lra_proxy_objective: k must be >= 1"));
    }
    let sa = s.apply_left(a)?;
    let total = a.frobenius_norm_sq();
    if sa.is_zero() {
        return Ok(total);
    }
    let f = svd(&sa)?;
    let av = a.matmul(&f.v);
    if av.is_zero() {
        return Ok(total);
    }
    let sig = svd_values(&av)?;
    let captured: f64 = sig.iter().take(k).map(|x| x * x).sum();
    Ok((total - captured).max(0.0))
}

/// Factored solution of `min_{rank-k Z} ||C Z D - G||_F^2`.
struct RankConstrainedFactors {
    /// cols(C) x k_used.
    z_left: Matrix,
    /// k_used x rows(D).
    z_right: Matrix,
    k_used: usize,
}

/// Orthogonalize C and D^T by column-pivoted QR, truncate `U_C^T G U_D` to
/// rank k, back-substitute through the triangular factors.
fn solve_rank_constrained_factored(
    c: &Matrix,
    d: &Matrix,
    g: &Matrix,
    k: usize,
) -> Result<RankConstrainedFactors> {
    if g.rows() != c.rows() || g.cols() != d.cols() {
        return Err(Error::dims(format!(
            "solve_rank_constrained: G is {}x{}, expected {}x{}",
            g.rows(),
            g.cols(),
            c.rows(),
            d.cols()
        )));
    }
    if k == 0 {
        return Err(Error::invalid("solve_rank_constrained: k must be >= 1"));
    }
    let qc = pivoted_qr(c)?;
    if qc.rank == 0 {
        return Err(Error::RankDeficient { factor: "C", detail: "C is numerically zero".into() });
    }
    let qd = pivoted_qr(&d.transpose())?;
    if qd.rank == 0 {
        return Err(Error::RankDeficient { factor: "D", detail: "D is numerically zero".into() });
    }
    let t_c = qc.t.take_cols(qc.rank);
    let t_d = qd.t.take_cols(qd.rank);

    let core = qc.q.transpose().matmul(g).matmul(&qd.q);
    if core.is_zero() {
        // Z = 0 already attains the optimum.
        return Ok(RankConstrainedFactors {
            z_left: Matrix::zeros(c.cols(), 1),
            z_right: Matrix::zeros(1, d.rows()),
            k_used: 0,
        });
    }
    let fm = svd(&core)?;
    let k_used = k.min(fm.rank());
    let zl_core = Matrix::from_fn(qc.rank, k_used, |i, j| fm.u.get(i, j) * fm.sigma[j]);
    let zr_core = fm.v.take_cols(k_used).transpose();

    // X_L = T_C^{-1} Z_L'; X_R = Z_R' (T_D^{-1})^T via T_D X_R^T = Z_R'^T.
    let x_l = solve_upper(&t_c, &zl_core);
    let x_r = solve_upper(&t_d, &zr_core.transpose()).transpose();

    // Scatter through the pivot permutations.
    let mut z_left = Matrix::zeros(c.cols(), k_used);
    for i in 0..qc.rank {
        for j in 0..k_used {
            z_left.set(qc.perm[i], j, x_l.get(i, j));
        }
    }
    let mut z_right = Matrix::zeros(k_used, d.rows());
    for j in 0..qd.rank {
        for i in 0..k_used {
            z_right.set(i, qd.perm[j], x_r.get(i, j));
        }
    }
    Ok(RankConstrainedFactors { z_left, z_right, k_used })
}

/// `argmin_{rank-k Z} ||C Z D - G||_F^2`, returned as the full matrix Z.
pub fn solve_rank_constrained(c: &Matrix, d: &Matrix, g: &Matrix, k: usize) -> Result<Matrix> {
    let f = solve_rank_constrained_factored(c, d, g, k)?;
    Ok(f.z_left.matmul(&f.z_right))
}

/// Two-sided sketched LRA (Sketch-LowRank): returns `P = AR^T Z_L`,
/// `Q = Z_R SA` with rank at most k and the exact error.
pub fn lra_two_sided(sketches: &SketchSet, a: &Matrix, k: usize) -> Result<LraResult> {
    let n = a.rows();
    let d = a.cols();
    sketches.check_dims(n, d)?;
    if k == 0 {
        return Err(Error::invalid("lra_two_sided: k must be >= 1"));
    }
    let at = a.transpose();
    let ar_t = sketches.r.apply_left(&at)?.transpose(); // n x m_R
    let sa = sketches.s.apply_left(a)?; // m_S x d
    let aw_t = sketches.w.apply_left(&at)?.transpose(); // n x m_W

    let c = sketches.v.apply_left(&ar_t)?; // m_V x m_R
    let dd = sketches.s.apply_left(&aw_t)?; // m_S x m_W
    let g = sketches.v.apply_left(&aw_t)?; // m_V x m_W

    let f = solve_rank_constrained_factored(&c, &dd, &g, k).map_err(|e| match e {
        Error::RankDeficient { factor: "C", detail } => {
            Error::RankDeficient { factor: "VAR^T", detail }
        }
        Error::RankDeficient { factor: "D", detail } => {
            Error::RankDeficient { factor: "SAW^T", detail }
        }
        other => other,
    })?;
    if f.k_used == 0 {
        return Ok(LraResult::zero(a, k));
    }
    let p = ar_t.matmul(&f.z_left);
    let q = f.z_right.matmul(&sa);
    let error = a.sub(&p.matmul(&q)).frobenius_norm_sq();
    Ok(LraResult { p, q, k, k_used: f.k_used, error })
}

/// Which branch an [`approx_check`] run returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Branch {
    Learned,
    Classical,
}

/// Outcome of the LRA ApproxCheck procedure.
#[derive(Debug, Clone)]
pub struct ApproxCheckOutcome {
    pub result: LraResult,
    pub branch: Branch,
    /// Estimated error of the learned branch (infinite if it failed).
    pub delta_learned: f64,
    /// Estimated error of the classical branch (infinite if it failed).
    pub delta_classical: f64,
}

/// Run the two-sided algorithm with both sketch sets, estimate both errors
/// with fresh CountSketches of about `1/beta^2` rows per side, and return
/// the branch with the smaller estimate.
pub fn approx_check(
    learned: &SketchSet,
    classical: &SketchSet,
    a: &Matrix,
    k: usize,
    beta: f64,
    seed: u64,
) -> Result<ApproxCheckOutcome> {
    if !(beta > 0.0) {
        return Err(Error::invalid("approx_check: beta must be positive"));
    }
    let n = a.rows();
    let d = a.cols();
    let m_est = (1.0 / (beta * beta)).ceil() as usize;
    let s_est = CountSketch::random(m_est.clamp(1, n), n, seed.wrapping_add(1))?;
    let r_est = CountSketch::random(m_est.clamp(1, d), d, seed.wrapping_add(2))?;

    let estimate = |branch: Result<LraResult>| -> (Option<LraResult>, f64) {
        match branch {
            Ok(res) => {
                let resid = res.p.matmul(&res.q).sub(a);
                let sr = s_est.apply_left(&resid).expect("estimator dims");
                let srr = r_est.apply_left(&sr.transpose()).expect("estimator dims");
                let delta = srr.frobenius_norm_sq();
                (Some(res), delta)
            }
            Err(_) => (None, f64::INFINITY),
        }
    };

    let (res_l, delta_l) = estimate(lra_two_sided(learned, a, k));
    let (res_c, delta_c) = estimate(lra_two_sided(classical, a, k));

    let (result, branch) = if delta_l <= delta_c {
        match res_l {
            Some(r) => (r, Branch::Learned),
            None => match res_c {
                Some(r) => (r, Branch::Classical),
                None => {
                    return Err(Error::Numerical("approx_check: both branches failed".into()))
                }
            },
        }
    } else {
        (res_c.expect("finite delta implies a result"), Branch::Classical)
    };
    Ok(ApproxCheckOutcome { result, branch, delta_learned: delta_l, delta_classical: delta_c })
}

/// Total variation distance between the normalized ridge-leverage
/// distributions of two matrices with the same row count.
pub fn tv_distance_diagnostic(a_train: &Matrix, a_test: &Matrix, k: usize) -> Result<f64> {
    if a_train.rows() != a_test.rows() {
        return Err(Error::dims(format!(
            "tv_distance_diagnostic: row counts {} and {} differ",
            a_train.rows(),
            a_test.rows()
        )));
    }
    let normalize = |m: &Matrix| -> Result<Vec<f64>> {
        let scores = ridge_leverage_scores(m, k)?.scores;
        let total: f64 = scores.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid(
                "tv_distance_diagnostic: degenerate all-zero leverage scores",
            ));
        }
        Ok(scores.iter().map(|s| s / total).collect())
    };
    let p = normalize(a_train)?;
    let q = normalize(a_test)?;
    Ok(0.5 * p.iter().zip(&q).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

/// One-sided LRA error equals the rank-k projection error onto row(SA);
/// exposed for cross-checks between the two routes.
pub fn one_sided_error_via_projection(s: &Sketch, a: &Matrix, k: usize) -> Result<f64> {
    let sa = s.apply_left(a)?;
    if sa.is_zero() {
        return Ok(a.frobenius_norm_sq());
    }
    Ok(projection_error_rank_k(a, &sa, k)?.error)
}
