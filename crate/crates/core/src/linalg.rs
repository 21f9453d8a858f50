//! Dense factorizations, leverage scores, and error functionals.
//!
//! The SVD is a one-sided Jacobi; the contract throughout is reconstruction
//! accuracy, not method. All routines are pure functions on immutable inputs.

use crate::error::{Error, Result};
use crate::matrix::{vec_dot, Matrix};

/// Relative threshold below which a singular value counts as zero:
/// `sigma <= max(n, d) * sigma_max * 1e-12`.
pub const RANK_TOL_FACTOR: f64 = 1e-12;

// Rotations apply down to ROTATE_TOL relative; a sweep whose worst pair
// stayed below CONVERGE_TOL counts as converged. The gap stops chatter at
// the rotation threshold.
const ROTATE_TOL: f64 = 1e-15;
const CONVERGE_TOL: f64 = 1e-13;
const MAX_SWEEPS: usize = 100;

/// Compact SVD `A = U diag(sigma) V^T`, trimmed at numerical rank.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    /// n x r, orthonormal columns.
    pub u: Matrix,
    /// Non-increasing, strictly positive (numerical rank only).
    pub sigma: Vec<f64>,
    /// d x r, orthonormal columns.
    pub v: Matrix,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn reconstruct(&self) -> Matrix {
        let r = self.rank();
        let scaled = Matrix::from_fn(self.u.rows(), r, |i, j| self.u.get(i, j) * self.sigma[j]);
        scaled.matmul(&self.v.transpose())
    }
}

/// Thin QR `A = Q R` with Q m x d orthonormal columns and R d x d upper
/// triangular with non-negative diagonal.
#[derive(Debug, Clone)]
pub struct QrFactors {
    pub q: Matrix,
    pub r: Matrix,
}

impl QrFactors {
    /// Smallest diagonal magnitude of R relative to the largest; zero for a
    /// rank-deficient factor.
    pub fn min_rel_diag(&self) -> f64 {
        let d = self.r.rows();
        let mut max = 0.0f64;
        let mut min = f64::INFINITY;
        for j in 0..d {
            let x = self.r.get(j, j).abs();
            max = max.max(x);
            min = min.min(x);
        }
        if max == 0.0 {
            0.0
        } else {
            min / max
        }
    }
}

/// Column-pivoted QR truncated at numerical rank:
/// `A P = Q [T T']` with T upper triangular r x r, non-increasing diagonal.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    /// m x r orthonormal columns.
    pub q: Matrix,
    /// r x cols(A) upper trapezoidal, columns in pivot order.
    pub t: Matrix,
    /// `perm[j]` = original column index placed at pivot position j.
    pub perm: Vec<usize>,
    /// Numerical rank r.
    pub rank: usize,
}

fn rank_tolerance(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * sigma_max * RANK_TOL_FACTOR
}

/// One-sided Jacobi with accumulated right rotations. Returns the column
/// matrix W (columns mutually orthogonal, norms = singular values) and V.
/// Expects rows >= cols for efficiency; callers transpose as needed.
fn jacobi_orthogonalize(a: &Matrix) -> Result<(Vec<Vec<f64>>, Matrix)> {
    let n = a.rows();
    let d = a.cols();
    let mut w: Vec<Vec<f64>> = (0..d).map(|j| a.col_vec(j)).collect();
    let mut v = Matrix::identity(d);

    // A column that collapses below 1e-14 of the initial scale is roundoff
    // junk: rotations against it chatter at rel ~ 1 forever while its norm
    // shrinks. Freeze such columns; their singular values sit far below the
    // rank tolerance and are trimmed by the callers.
    let negligible = w
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>())
        .fold(0.0f64, f64::max)
        * 1e-28;

    let mut worst = f64::INFINITY;
    for _sweep in 0..MAX_SWEEPS {
        worst = 0.0;
        for p in 0..d {
            for q in (p + 1)..d {
                let alpha: f64 = w[p].iter().map(|x| x * x).sum();
                let beta: f64 = w[q].iter().map(|x| x * x).sum();
                let gamma = vec_dot(&w[p], &w[q]);
                let scale = (alpha * beta).sqrt();
                if scale == 0.0 || alpha <= negligible || beta <= negligible {
                    continue;
                }
                let rel = gamma.abs() / scale;
                worst = worst.max(rel);
                if rel <= ROTATE_TOL {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..n {
                    let wp = w[p][i];
                    let wq = w[q][i];
                    w[p][i] = c * wp - s * wq;
                    w[q][i] = s * wp + c * wq;
                }
                for i in 0..d {
                    let vp = v.get(i, p);
                    let vq = v.get(i, q);
                    v.set(i, p, c * vp - s * vq);
                    v.set(i, q, s * vp + c * vq);
                }
            }
        }
        if worst <= CONVERGE_TOL {
            return Ok((w, v));
        }
    }
    // Accept a fully practical factorization even when the last few pairs
    // keep chattering at roundoff level.
    if worst <= 1e-8 {
        return Ok((w, v));
    }
    Err(Error::Numerical(format!(
        "one-sided Jacobi SVD did not converge in {MAX_SWEEPS} sweeps ({n}x{d}, off-diagonal {worst:.3e})"
    )))
}

/// All `min(n, d)` singular values of A, non-increasing, including zeros.
pub fn svd_values(a: &Matrix) -> Result<Vec<f64>> {
    let work = if a.rows() >= a.cols() { a.clone() } else { a.transpose() };
    let (w, _) = jacobi_orthogonalize(&work)?;
    let mut sigma: Vec<f64> = w.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    sigma.sort_by(|x, y| y.partial_cmp(x).unwrap());
    Ok(sigma)
}

/// Compact SVD trimmed at numerical rank. Errors on an all-zero matrix,
/// which has no compact factorization.
pub fn svd(a: &Matrix) -> Result<SvdFactors> {
    let transposed = a.rows() < a.cols();
    let work = if transposed { a.transpose() } else { a.clone() };
    let n = work.rows();
    let d = work.cols();
    let (w, v) = jacobi_orthogonalize(&work)?;

    let mut order: Vec<(usize, f64)> = w
        .iter()
        .enumerate()
        .map(|(j, c)| (j, c.iter().map(|x| x * x).sum::<f64>().sqrt()))
        .collect();
    order.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));

    let sigma_max = order.first().map(|x| x.1).unwrap_or(0.0);
    if sigma_max == 0.0 {
        return Err(Error::invalid("svd: zero matrix has no compact SVD"));
    }
    let tol = rank_tolerance(n, d, sigma_max);
    let rank = order.iter().take_while(|(_, s)| *s > tol).count();
    if rank == 0 {
        return Err(Error::invalid("svd: matrix is numerically zero"));
    }

    let mut u = Matrix::zeros(n, rank);
    let mut vr = Matrix::zeros(d, rank);
    let mut sigma = Vec::with_capacity(rank);
    for (out_j, &(j, s)) in order.iter().take(rank).enumerate() {
        sigma.push(s);
        for i in 0..n {
            u.set(i, out_j, w[j][i] / s);
        }
        for i in 0..d {
            vr.set(i, out_j, v.get(i, j));
        }
    }
    if transposed {
        Ok(SvdFactors { u: vr, sigma, v: u })
    } else {
        Ok(SvdFactors { u, sigma, v: vr })
    }
}

/// Top-k truncation of the compact SVD; returns `min(k, rank)` factors.
pub fn truncated_svd(a: &Matrix, k: usize) -> Result<SvdFactors> {
    let max_k = a.rows().min(a.cols());
    if k == 0 || k > max_k {
        return Err(Error::invalid(format!(
            "truncated_svd: k={k} out of range 1..={max_k}"
        )));
    }
    let f = svd(a)?;
    let keep = k.min(f.rank());
    Ok(SvdFactors {
        u: f.u.take_cols(keep),
        sigma: f.sigma[..keep].to_vec(),
        v: f.v.take_cols(keep),
    })
}

/// Moore-Penrose pseudo-inverse via the compact SVD. Singular values below
/// the rank tolerance are treated as zero; the zero matrix maps to zero.
pub fn pseudo_inverse(a: &Matrix) -> Result<Matrix> {
    if a.is_zero() {
        return Ok(Matrix::zeros(a.cols(), a.rows()));
    }
    let f = svd(a)?;
    let scaled = Matrix::from_fn(f.v.rows(), f.rank(), |i, j| f.v.get(i, j) / f.sigma[j]);
    Ok(scaled.matmul(&f.u.transpose()))
}

/// Leverage scores `tau_i = a_i (A^T A)^† a_i^T`, the squared row norms of U.
pub fn leverage_scores(a: &Matrix) -> Result<Vec<f64>> {
    if a.is_zero() {
        return Ok(vec![0.0; a.rows()]);
    }
    let f = svd(a)?;
    Ok((0..a.rows())
        .map(|i| f.u.row(i).iter().map(|x| x * x).sum())
        .collect())
}

/// Ridge leverage scores with the regularizer `lambda = ||A - A_k||_F^2 / k`.
#[derive(Debug, Clone)]
pub struct RidgeLeverage {
    pub scores: Vec<f64>,
    pub lambda: f64,
    /// True when A has numerical rank <= k, so lambda = 0 and the plain
    /// leverage scores were returned instead.
    pub fell_back_to_plain: bool,
}

pub fn ridge_leverage_scores(a: &Matrix, k: usize) -> Result<RidgeLeverage> {
    if k == 0 {
        return Err(Error::invalid("ridge_leverage_scores: k must be >= 1"));
    }
    if a.is_zero() {
        return Ok(RidgeLeverage { scores: vec![0.0; a.rows()], lambda: 0.0, fell_back_to_plain: true });
    }
    let f = svd(a)?;
    let tail: f64 = f.sigma.iter().skip(k).map(|s| s * s).sum();
    let lambda = tail / k as f64;
    if lambda <= f.sigma[0] * f.sigma[0] * 1e-14 {
        return Ok(RidgeLeverage {
            scores: leverage_scores(a)?,
            lambda: 0.0,
            fell_back_to_plain: true,
        });
    }
    let scores = (0..a.rows())
        .map(|i| {
            f.u.row(i)
                .iter()
                .zip(&f.sigma)
                .map(|(u, s)| {
                    let s2 = s * s;
                    u * u * s2 / (s2 + lambda)
                })
                .sum()
        })
        .collect();
    Ok(RidgeLeverage { scores, lambda, fell_back_to_plain: false })
}

/// Best rank-k approximation error of A restricted to the row space of B.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionError {
    pub error: f64,
    /// Rank actually used; `min(k, rank(B))`.
    pub k_used: usize,
    /// True when k exceeded rank(B).
    pub clamped: bool,
}

/// `min { ||A - X||_F^2 : rank(X) <= k, row(X) ⊆ row(B) }` computed exactly
/// through the SVD of B: with B = U Σ V^T the optimum is
/// `||A||_F^2 - sum_{i<=k} sigma_i(AV)^2`.
pub fn projection_error_rank_k(a: &Matrix, b: &Matrix, k: usize) -> Result<ProjectionError> {
    if a.cols() != b.cols() {
        return Err(Error::dims(format!(
            "projection_error_rank_k: A has {} columns, B has {}",
            a.cols(),
            b.cols()
        )));
    }
    if k == 0 {
        return Err(Error::invalid("projection_error_rank_k: k must be >= 1"));
    }
    let total = a.frobenius_norm_sq();
    if b.is_zero() {
        return Ok(ProjectionError { error: total, k_used: 0, clamped: true });
    }
    let fb = svd(b)?;
    let k_used = k.min(fb.rank());
    let m = a.matmul(&fb.v);
    let sig = svd_values(&m)?;
    let captured: f64 = sig.iter().take(k_used).map(|s| s * s).sum();
    Ok(ProjectionError {
        error: (total - captured).max(0.0),
        k_used,
        clamped: k_used < k,
    })
}

/// Thin Householder QR; requires rows >= cols. The diagonal of R is made
/// non-negative by sign flips.
pub fn qr(a: &Matrix) -> Result<QrFactors> {
    let m = a.rows();
    let d = a.cols();
    if m < d {
        return Err(Error::invalid(format!("qr: need rows >= cols, got {m}x{d}")));
    }
    let mut r = a.clone();
    // Householder vectors stored per step.
    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(d);
    for j in 0..d {
        let mut v: Vec<f64> = (j..m).map(|i| r.get(i, j)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            vs.push(vec![0.0; m - j]);
            continue;
        }
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            vs.push(vec![0.0; m - j]);
            continue;
        }
        for x in v.iter_mut() {
            *x /= vnorm;
        }
        // Apply reflector to remaining columns of R.
        for col in j..d {
            let dot: f64 = (0..m - j).map(|i| v[i] * r.get(j + i, col)).sum();
            for i in 0..m - j {
                let val = r.get(j + i, col) - 2.0 * dot * v[i];
                r.set(j + i, col, val);
            }
        }
        vs.push(v);
    }
    // Materialize thin Q by applying reflectors to the first d identity cols.
    let mut q = Matrix::from_fn(m, d, |i, j| if i == j { 1.0 } else { 0.0 });
    for j in (0..d).rev() {
        let v = &vs[j];
        if v.iter().all(|&x| x == 0.0) {
            continue;
        }
        for col in 0..d {
            let dot: f64 = (0..m - j).map(|i| v[i] * q.get(j + i, col)).sum();
            for i in 0..m - j {
                let val = q.get(j + i, col) - 2.0 * dot * v[i];
                q.set(j + i, col, val);
            }
        }
    }
    // Zero strict lower part, flip signs for non-negative diagonal.
    let mut r_thin = Matrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            r_thin.set(i, j, r.get(i, j));
        }
    }
    for i in 0..d {
        if r_thin.get(i, i) < 0.0 {
            for j in i..d {
                r_thin.set(i, j, -r_thin.get(i, j));
            }
            for row in 0..m {
                q.set(row, i, -q.get(row, i));
            }
        }
    }
    Ok(QrFactors { q, r: r_thin })
}

/// Column-pivoted QR truncated at numerical rank; `A[:, perm] = Q T`.
pub fn pivoted_qr(a: &Matrix) -> Result<PivotedQr> {
    let m = a.rows();
    let n = a.cols();
    let mut work = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut col_norms: Vec<f64> = (0..n)
        .map(|j| (0..m).map(|i| work.get(i, j).powi(2)).sum())
        .collect();
    let max_steps = m.min(n);
    let mut vs: Vec<Vec<f64>> = Vec::new();

    let initial_max = col_norms.iter().cloned().fold(0.0f64, f64::max).sqrt();
    if initial_max == 0.0 {
        return Ok(PivotedQr {
            q: Matrix::zeros(m, 1),
            t: Matrix::zeros(1, n),
            perm,
            rank: 0,
        });
    }
    let tol = rank_tolerance(m, n, initial_max);

    let mut rank = 0;
    for step in 0..max_steps {
        // Recompute remaining column norms exactly; cheap at desk scale and
        // immune to downdating cancellation.
        for j in step..n {
            col_norms[j] = (step..m).map(|i| work.get(i, j).powi(2)).sum();
        }
        let (pivot, &best) = col_norms[step..]
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
            .map(|(off, v)| (step + off, v))
            .unwrap();
        if best.sqrt() <= tol {
            break;
        }
        rank = step + 1;
        if pivot != step {
            for i in 0..m {
                let tmp = work.get(i, step);
                work.set(i, step, work.get(i, pivot));
                work.set(i, pivot, tmp);
            }
            perm.swap(step, pivot);
            col_norms.swap(step, pivot);
        }
        let mut v: Vec<f64> = (step..m).map(|i| work.get(i, step)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vnorm > 0.0 {
            for x in v.iter_mut() {
                *x /= vnorm;
            }
            for col in step..n {
                let dot: f64 = (0..m - step).map(|i| v[i] * work.get(step + i, col)).sum();
                for i in 0..m - step {
                    let val = work.get(step + i, col) - 2.0 * dot * v[i];
                    work.set(step + i, col, val);
                }
            }
        }
        vs.push(v);
    }

    if rank == 0 {
        return Ok(PivotedQr {
            q: Matrix::zeros(m, 1),
            t: Matrix::zeros(1, n),
            perm,
            rank: 0,
        });
    }

    let mut q = Matrix::from_fn(m, rank, |i, j| if i == j { 1.0 } else { 0.0 });
    for j in (0..rank).rev() {
        let v = &vs[j];
        if v.iter().all(|&x| x == 0.0) {
            continue;
        }
        for col in 0..rank {
            let dot: f64 = (0..m - j).map(|i| v[i] * q.get(j + i, col)).sum();
            for i in 0..m - j {
                let val = q.get(j + i, col) - 2.0 * dot * v[i];
                q.set(j + i, col, val);
            }
        }
    }
    let mut t = Matrix::zeros(rank, n);
    for i in 0..rank {
        for j in i..n {
            t.set(i, j, work.get(i, j));
        }
    }
    for i in 0..rank {
        if t.get(i, i) < 0.0 {
            for j in i..n {
                t.set(i, j, -t.get(i, j));
            }
            for row in 0..m {
                q.set(row, i, -q.get(row, i));
            }
        }
    }
    Ok(PivotedQr { q, t, perm, rank })
}

/// Solve `R X = B` for upper triangular R (back substitution per column).
pub fn solve_upper(r: &Matrix, b: &Matrix) -> Matrix {
    let d = r.rows();
    assert_eq!(r.cols(), d);
    assert_eq!(b.rows(), d);
    let mut x = b.clone();
    for col in 0..b.cols() {
        for i in (0..d).rev() {
            let mut acc = x.get(i, col);
            for j in (i + 1)..d {
                acc -= r.get(i, j) * x.get(j, col);
            }
            x.set(i, col, acc / r.get(i, i));
        }
    }
    x
}

/// Solve `R^T X = B` for upper triangular R (forward substitution).
pub fn solve_upper_transpose(r: &Matrix, b: &Matrix) -> Matrix {
    let d = r.rows();
    assert_eq!(r.cols(), d);
    assert_eq!(b.rows(), d);
    let mut x = b.clone();
    for col in 0..b.cols() {
        for i in 0..d {
            let mut acc = x.get(i, col);
            for j in 0..i {
                acc -= r.get(j, i) * x.get(j, col);
            }
            x.set(i, col, acc / r.get(i, i));
        }
    }
    x
}

/// Solve `X R = B` for upper triangular R, i.e. `X = B R^{-1}`
/// (forward substitution per row).
pub fn solve_upper_right(b: &Matrix, r: &Matrix) -> Matrix {
    let d = r.rows();
    assert_eq!(r.cols(), d);
    assert_eq!(b.cols(), d);
    let mut x = b.clone();
    for row in 0..b.rows() {
        for j in 0..d {
            let mut acc = x.get(row, j);
            for i in 0..j {
                acc -= x.get(row, i) * r.get(i, j);
            }
            x.set(row, j, acc / r.get(j, j));
        }
    }
    x
}

/// Symmetric Jacobi eigendecomposition: `M = V diag(lambda) V^T` with
/// eigenvalues sorted non-increasing. For small matrices.
pub fn eigh(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = m.rows();
    assert_eq!(m.cols(), n, "eigh: square input required");
    let mut a = m.clone();
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm();
    if scale == 0.0 {
        return Ok((vec![0.0; n], v));
    }
    for _sweep in 0..MAX_SWEEPS {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a.get(p, q).powi(2);
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() <= 1e-18 * scale {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..n {
                    let aip = a.get(i, p);
                    let aiq = a.get(i, q);
                    a.set(i, p, c * aip - s * aiq);
                    a.set(i, q, s * aip + c * aiq);
                }
                for j in 0..n {
                    let apj = a.get(p, j);
                    let aqj = a.get(q, j);
                    a.set(p, j, c * apj - s * aqj);
                    a.set(q, j, s * apj + c * aqj);
                }
                for i in 0..n {
                    let vip = v.get(i, p);
                    let viq = v.get(i, q);
                    v.set(i, p, c * vip - s * viq);
                    v.set(i, q, s * vip + c * viq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).partial_cmp(&a.get(i, i)).unwrap().then(i.cmp(&j)));
    let lambdas: Vec<f64> = order.iter().map(|&i| a.get(i, i)).collect();
    let vecs = Matrix::from_fn(n, n, |i, j| v.get(i, order[j]));
    Ok((lambdas, vecs))
}
