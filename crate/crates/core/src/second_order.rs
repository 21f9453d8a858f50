//! Iterative Hessian Sketch for constrained least squares, constraint
//! projections, fast preconditioned regression, and subspace-embedding
//! diagnostics with the learned-vs-random sketch chooser.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{qr, solve_upper, solve_upper_right, solve_upper_transpose, svd, svd_values};
use crate::matrix::Matrix;
use crate::rng::rng_for_stream;
use crate::sketch::{CountSketch, Sketch};

/// Feasible set of the least-squares problem. The nuclear ball applies to
/// the solution viewed as a d1 x d2 matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    Unconstrained,
    L1Ball { lambda: f64 },
    NuclearBall { rho: f64, d1: usize, d2: usize },
}

impl Constraint {
    pub fn project(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            Constraint::Unconstrained => Ok(x.clone()),
            Constraint::L1Ball { lambda } => {
                let projected = project_l1(x.entries(), *lambda)?;
                Matrix::new(x.rows(), x.cols(), projected)
            }
            Constraint::NuclearBall { rho, d1, d2 } => {
                if x.rows() != *d1 || x.cols() != *d2 {
                    return Err(Error::dims(format!(
                        "nuclear projection: solution is {}x{}, ball declared {d1}x{d2}",
                        x.rows(),
                        x.cols()
                    )));
                }
                project_nuclear(x, *rho)
            }
        }
    }
}

/// `(A, b, constraint)`: minimize `1/2 ||A x - b||_F^2` over the set. The
/// solution has shape `a.cols() x b.cols()`.
#[derive(Debug, Clone)]
pub struct ConstrainedLsProblem {
    pub a: Matrix,
    pub b: Matrix,
    pub constraint: Constraint,
}

impl ConstrainedLsProblem {
    pub fn new(a: Matrix, b: Matrix, constraint: Constraint) -> Result<Self> {
        if a.rows() != b.rows() {
            return Err(Error::dims(format!(
                "problem: A has {} rows, b has {}",
                a.rows(),
                b.rows()
            )));
        }
        if let Constraint::L1Ball { lambda } = &constraint {
            if !(*lambda > 0.0) {
                return Err(Error::invalid("problem: l1 radius must be positive"));
            }
        }
        if let Constraint::NuclearBall { rho, d1, d2 } = &constraint {
            if !(*rho > 0.0) {
                return Err(Error::invalid("problem: nuclear radius must be positive"));
            }
            if *d1 != a.cols() || *d2 != b.cols() {
                return Err(Error::dims(format!(
                    "problem: nuclear ball {d1}x{d2} does not match solution shape {}x{}",
                    a.cols(),
                    b.cols()
                )));
            }
        }
        Ok(ConstrainedLsProblem { a, b, constraint })
    }

    pub fn objective(&self, x: &Matrix) -> f64 {
        0.5 * self.a.matmul(x).sub(&self.b).frobenius_norm_sq()
    }

    fn zero_solution(&self) -> Matrix {
        Matrix::zeros(self.a.cols(), self.b.cols())
    }
}

/// Euclidean projection onto the l1 ball of radius `lambda`, by sorting and
/// soft-thresholding. Feasible inputs come back unchanged.
pub fn project_l1(x: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::invalid("project_l1: radius must be positive"));
    }
    let l1: f64 = x.iter().map(|v| v.abs()).sum();
    if l1 <= lambda {
        return Ok(x.to_vec());
    }
    let mut mags: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut running = 0.0;
    let mut theta = 0.0;
    for (j, &u) in mags.iter().enumerate() {
        running += u;
        let candidate = (running - lambda) / (j + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    Ok(x.iter()
        .map(|&v| v.signum() * (v.abs() - theta).max(0.0))
        .collect())
}

/// Projection onto the nuclear-norm ball: project the singular values onto
/// the l1 ball and reconstruct.
pub fn project_nuclear(x: &Matrix, rho: f64) -> Result<Matrix> {
    if !(rho > 0.0) {
        return Err(Error::invalid("project_nuclear: radius must be positive"));
    }
    if x.is_zero() {
        return Ok(x.clone());
    }
    let f = svd(x)?;
    let nuclear: f64 = f.sigma.iter().sum();
    if nuclear <= rho {
        return Ok(x.clone());
    }
    let sigma = project_l1(&f.sigma, rho)?;
    let scaled = Matrix::from_fn(f.u.rows(), f.rank(), |i, j| f.u.get(i, j) * sigma[j]);
    Ok(scaled.matmul(&f.v.transpose()))
}

/// Projected-gradient budget for the IHS subproblems.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PgConfig {
    pub iters: usize,
}

impl Default for PgConfig {
    fn default() -> Self {
        PgConfig { iters: 200 }
    }
}

/// One sketched Newton step: solve
/// `min_u 1/2 ||S A u||^2 - <grad_term, u>` over `u` with `x_t + u`
/// feasible, by projected gradient with step `1 / sigma_max(SA)^2`.
/// Returns the increment u.
pub fn ihs_subproblem(
    sa: &Matrix,
    grad_term: &Matrix,
    x_t: &Matrix,
    constraint: &Constraint,
    pg: PgConfig,
) -> Result<Matrix> {
    let sigma_all = svd_values(sa)?;
    let sigma_max = sigma_all[0];
    if sigma_max == 0.0 {
        return Err(Error::Numerical("ihs_subproblem: sketched matrix is zero".into()));
    }
    let step = 1.0 / (sigma_max * sigma_max);
    let mut u = Matrix::zeros(x_t.rows(), x_t.cols());
    for _ in 0..pg.iters {
        let sau = sa.matmul(&u);
        let grad = sa.transpose().matmul(&sau).sub(grad_term);
        let candidate = x_t.add(&u.sub(&grad.scale(step)));
        u = constraint.project(&candidate)?.sub(x_t);
    }
    Ok(u)
}

/// Per-iteration sketch provider for [`ihs_solve`].
pub type SketchSource<'a> = &'a dyn Fn(usize) -> Result<Sketch>;

/// Trajectory of an IHS run: iterates, suboptimality errors against a
/// converged reference, and the estimated convergence rate
/// `(e_T / e_1)^(1/T)`.
#[derive(Debug, Clone)]
pub struct IhsTrace {
    pub iterates: Vec<Matrix>,
    pub errors: Vec<f64>,
    pub rate: f64,
}

impl IhsTrace {
    /// CSV rows `t,error,log10_error`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,error,log10_error\n");
        for (t, e) in self.errors.iter().enumerate() {
            let log = if *e > 0.0 { e.log10() } else { f64::NEG_INFINITY };
            out.push_str(&format!("{t},{e},{log}\n"));
        }
        out
    }
}

/// Long-run projected gradient on the exact objective; the reference
/// optimum for error traces.
pub fn reference_solution(problem: &ConstrainedLsProblem) -> Result<Matrix> {
    let sigma_all = svd_values(&problem.a)?;
    let sigma_max = sigma_all[0];
    if sigma_max == 0.0 {
        return Err(Error::invalid("reference_solution: zero design matrix"));
    }
    let step = 1.0 / (sigma_max * sigma_max);
    let mut x = problem.constraint.project(&problem.zero_solution())?;
    for _ in 0..100_000 {
        let grad = problem.a.transpose().matmul(&problem.a.matmul(&x).sub(&problem.b));
        let next = problem.constraint.project(&x.sub(&grad.scale(step)))?;
        let movement = next.sub(&x).frobenius_norm();
        x = next;
        if movement / step < 1e-10 {
            break;
        }
    }
    Ok(x)
}

/// Iterative Hessian Sketch: T updates with fresh sketches from the
/// provider; errors are measured against [`reference_solution`].
pub fn ihs_solve(
    problem: &ConstrainedLsProblem,
    source: SketchSource,
    t_iters: usize,
    pg: PgConfig,
) -> Result<IhsTrace> {
    if t_iters == 0 {
        return Err(Error::invalid("ihs_solve: T must be >= 1"));
    }
    let x_star = reference_solution(problem)?;
    let f_star = problem.objective(&x_star);

    let mut x = problem.constraint.project(&problem.zero_solution())?;
    let mut iterates = vec![x.clone()];
    let mut errors = vec![problem.objective(&x) - f_star];
    for t in 0..t_iters {
        let sketch = source(t)?;
        if sketch.cols() != problem.a.rows() {
            return Err(Error::dims(format!(
                "ihs_solve: sketch at iteration {t} has {} columns, A has {} rows",
                sketch.cols(),
                problem.a.rows()
            )));
        }
        let sa = sketch.apply_left(&problem.a)?;
        let grad_term = problem
            .a
            .transpose()
            .matmul(&problem.b.sub(&problem.a.matmul(&x)));
        let u = ihs_subproblem(&sa, &grad_term, &x, &problem.constraint, pg)?;
        x = problem.constraint.project(&x.add(&u))?;
        iterates.push(x.clone());
        errors.push(problem.objective(&x) - f_star);
    }

    let e1 = errors[1];
    let et = errors[t_iters];
    let rate = if e1 <= 0.0 {
        0.0
    } else {
        (et.max(0.0) / e1).powf(1.0 / t_iters as f64)
    };
    Ok(IhsTrace { iterates, errors, rate })
}

/// Exact subspace-embedding statistics of S on col(A).
#[derive(Debug, Clone, Copy)]
pub struct Distortion {
    /// `sigma_min(SU)^2` over an orthonormal basis U of col(A).
    pub z1: f64,
    /// `||U^T (S^T S - I) U||_op`.
    pub z2: f64,
    /// `max(|sigma_max(SU)^2 - 1|, |1 - sigma_min(SU)^2|)`.
    pub eps: f64,
}

pub fn subspace_distortion(s: &Sketch, a: &Matrix) -> Result<Distortion> {
    if a.is_zero() {
        return Err(Error::invalid("subspace_distortion: zero matrix"));
    }
    let f = svd(a)?;
    let su = s.apply_left(&f.u)?;
    let r = f.rank();
    // SU acts on R^r; a sketch with fewer than r rows contributes zero
    // singular values.
    let mut sig = svd_values(&su)?;
    sig.resize(r, 0.0);
    let smax = sig[0];
    let smin = sig[r - 1];
    let z1 = smin * smin;
    let z2 = sig.iter().map(|x| (x * x - 1.0).abs()).fold(0.0f64, f64::max);
    let eps = (smax * smax - 1.0).abs().max((1.0 - smin * smin).abs());
    Ok(Distortion { z1, z2, eps })
}

/// Largest-magnitude eigenvalue of a symmetric matrix by shifted power
/// iteration: both ends of the spectrum are probed through `H + cI` and
/// `cI - H` with `c = ||H||_F`.
pub fn operator_norm_sym(h: &Matrix, iters: usize, seed: u64) -> f64 {
    let n = h.rows();
    assert_eq!(h.cols(), n);
    let c = h.frobenius_norm();
    if c == 0.0 {
        return 0.0;
    }
    let power = |m: &Matrix, stream: u64| -> f64 {
        let mut rng = rng_for_stream(seed, stream);
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in v.iter_mut() {
            *x /= norm;
        }
        let mut nu = 0.0;
        for _ in 0..iters {
            let mut w = vec![0.0; n];
            for i in 0..n {
                let row = m.row(i);
                w[i] = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            }
            nu = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nu == 0.0 {
                return 0.0;
            }
            for (vi, wi) in v.iter_mut().zip(&w) {
                *vi = wi / nu;
            }
        }
        nu
    };
    // H + cI has spectrum lambda + c >= 0, so the power method converges to
    // lambda_max + c; likewise cI - H gives c - lambda_min.
    let shifted_up = h.add(&Matrix::identity(n).scale(c));
    let lambda_max = power(&shifted_up, 1) - c;
    let shifted_down = Matrix::identity(n).scale(c).sub(h);
    let lambda_min = c - power(&shifted_down, 2);
    lambda_max.abs().max(lambda_min.abs())
}

/// Estimates of the unsquared `Z_1` and of `Z_2` through a sparse
/// embedding T and the preconditioner from QR(TA): `sigma_min(S A R^-1)`
/// and a power-method estimate of `||(SAR^-1)^T SAR^-1 - I||_op`.
pub fn estimate_z(s: &Sketch, a: &Matrix, eta: f64, seed: u64) -> Result<(f64, f64)> {
    if !(eta > 0.0) {
        return Err(Error::invalid("estimate_z: eta must be positive"));
    }
    let n = a.rows();
    let d = a.cols();
    let m_t = ((9.0 * (d * d) as f64) / (eta * eta)).ceil() as usize;

    let mut attempt = 0u64;
    let r_factor = loop {
        let t_sketch = if m_t >= n {
            Sketch::identity(n)
        } else {
            Sketch::Count(CountSketch::random(m_t, n, seed.wrapping_add(attempt))?)
        };
        let ta = t_sketch.apply_left(a)?;
        if ta.rows() < d {
            return Err(Error::invalid("estimate_z: sketched matrix has too few rows"));
        }
        let f = qr(&ta)?;
        if f.min_rel_diag() > 1e-10 {
            break f.r;
        }
        attempt += 1;
        if attempt > 1 || m_t >= n {
            return Err(Error::RankDeficient {
                factor: "TA",
                detail: "embedding sketch of A is rank-deficient after retry".into(),
            });
        }
    };

    let ar_inv = solve_upper_right(a, &r_factor);
    let m_mat = s.apply_left(&ar_inv)?;
    let mut sig = svd_values(&m_mat)?;
    if m_mat.rows() < d {
        sig.resize(d, 0.0);
    }
    let z1_hat = sig[d - 1];

    let h = m_mat.gram().sub(&Matrix::identity(d));
    let z2_hat = operator_norm_sym(&h, 300, seed.wrapping_add(7));
    Ok((z1_hat, z2_hat))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ChosenSketch {
    Learned,
    Random,
}

#[derive(Debug, Clone)]
pub struct SketchChoice {
    pub chosen: ChosenSketch,
    pub ratio_learned: f64,
    pub ratio_random: f64,
    pub z_learned: (f64, f64),
    pub z_random: (f64, f64),
}

/// Estimate `Z_2 / Z_1` for both sketches and keep the smaller; a zero
/// `Z_1` estimate forces the other sketch through an infinite ratio.
pub fn choose_sketch(
    s_learned: &Sketch,
    s_random: &Sketch,
    a: &Matrix,
    eta: f64,
    seed: u64,
) -> Result<SketchChoice> {
    let z_learned = estimate_z(s_learned, a, eta, seed)?;
    let z_random = estimate_z(s_random, a, eta, seed.wrapping_add(101))?;
    let ratio = |z: (f64, f64)| -> f64 {
        if z.0 <= 0.0 {
            f64::INFINITY
        } else {
            z.1 / z.0
        }
    };
    let ratio_learned = ratio(z_learned);
    let ratio_random = ratio(z_random);
    let chosen = if ratio_learned <= ratio_random {
        ChosenSketch::Learned
    } else {
        ChosenSketch::Random
    };
    Ok(SketchChoice { chosen, ratio_learned, ratio_random, z_learned, z_random })
}

/// Plain gradient-descent budget for the fast regression solver.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GdConfig {
    pub lr: f64,
    pub iters: usize,
}

#[derive(Debug, Clone)]
pub struct FastRegressionResult {
    /// The returned solution `R z_hat` for the system `A^T A x = y`.
    pub x: Matrix,
    /// Relative residual `||A^T A R z_t - y|| / ||y||` per step.
    pub residuals: Vec<f64>,
    pub diverged: bool,
}

/// Fast regression for `A^T A x = y`: precondition with R from QR(SA) so
/// that `SAR^{-1}` has orthonormal columns, run gradient descent in the
/// preconditioned variable, return the back-transformed solution.
pub fn fast_regression_solve(
    a: &Matrix,
    y: &Matrix,
    s: &Sketch,
    cfg: GdConfig,
) -> Result<FastRegressionResult> {
    let d = a.cols();
    if y.rows() != d || y.cols() != 1 {
        return Err(Error::dims(format!(
            "fast_regression_solve: y must be {d}x1, got {}x{}",
            y.rows(),
            y.cols()
        )));
    }
    let sa = s.apply_left(a)?;
    if sa.rows() < d {
        return Err(Error::invalid(
            "fast_regression_solve: sketch has fewer rows than columns of A",
        ));
    }
    let f = qr(&sa)?;
    if f.min_rel_diag() <= 1e-12 {
        return Err(Error::RankDeficient {
            factor: "SA",
            detail: "sketched matrix is rank-deficient".into(),
        });
    }
    let ar = solve_upper_right(a, &f.r); // A R^{-1}
    let gram = ar.gram(); // (AR^{-1})^T (AR^{-1})
    let rhs = solve_upper_transpose(&f.r, y); // R^{-T} y

    let y_norm = y.frobenius_norm();
    let mut z = Matrix::zeros(d, 1);
    let mut residuals = Vec::with_capacity(cfg.iters + 1);
    let mut diverged = false;
    let residual = |z: &Matrix| -> f64 {
        if y_norm == 0.0 {
            return 0.0;
        }
        let w = a.transpose().matmul(&a.matmul(&ar_times(&f.r, z)));
        w.sub(y).frobenius_norm() / y_norm
    };
    residuals.push(residual(&z));
    for _ in 0..cfg.iters {
        let grad = gram.matmul(&z).sub(&rhs);
        z = z.sub(&grad.scale(cfg.lr));
        let e = residual(&z);
        let finite = e.is_finite() && z.entries().iter().all(|v| v.is_finite());
        residuals.push(if finite { e } else { f64::INFINITY });
        if !finite || e > 1e3 * residuals[0].max(1.0) {
            diverged = true;
            break;
        }
    }
    let x = ar_times(&f.r, &z);
    Ok(FastRegressionResult { x, residuals, diverged })
}

/// `R^{-1} z` for upper-triangular R.
fn ar_times(r: &Matrix, z: &Matrix) -> Matrix {
    solve_upper(r, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::gen_lasso_planted;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = rng_from_seed(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn permutation_sketch(n: usize) -> Sketch {
        Sketch::Count(CountSketch::new(n, (0..n).rev().collect(), vec![1.0; n]).unwrap())
    }

    fn lasso_problem(seed: u64) -> ConstrainedLsProblem {
        gen_lasso_planted(80, 5, 4, 10.0, 0.1, seed, 0).unwrap()
    }

    #[test]
    fn l1_projection_examples() {
        assert_eq!(project_l1(&[3.0, 0.0], 1.0).unwrap(), vec![1.0, 0.0]);
        let feasible = vec![0.2, -0.3];
        assert_eq!(project_l1(&feasible, 1.0).unwrap(), feasible);
        // KKT oracle: theta = (2 + 1 - 1) / 2 = 1.
        let p = project_l1(&[2.0, 1.0], 1.0).unwrap();
        assert!((p[0] - 1.0).abs() <= 1e-12 && p[1].abs() <= 1e-12);
    }

    #[test]
    fn nuclear_projection_examples() {
        let x = Matrix::from_diag(&[3.0, 0.0]);
        let p = project_nuclear(&x, 1.0).unwrap();
        assert!(p.sub(&Matrix::from_diag(&[1.0, 0.0])).frobenius_norm() <= 1e-10);

        let feasible = Matrix::from_diag(&[0.4, 0.3]);
        assert_eq!(project_nuclear(&feasible, 1.0).unwrap(), feasible);

        let x = Matrix::from_diag(&[2.0, 1.0]);
        let p = project_nuclear(&x, 1.0).unwrap();
        assert!(p.sub(&Matrix::from_diag(&[1.0, 0.0])).frobenius_norm() <= 1e-10);
    }

    #[test]
    fn ihs_subproblem_matches_normal_equations() {
        // Unconstrained: u = ((SA)^T SA)^{-1} A^T (b - A x_t).
        let problem = lasso_problem(3);
        let x_t = Matrix::zeros(5, 1);
        let s = permutation_sketch(80);
        let sa = s.apply_left(&problem.a).unwrap();
        let grad_term = problem.a.transpose().matmul(&problem.b);
        let u = ihs_subproblem(&sa, &grad_term, &x_t, &Constraint::Unconstrained, PgConfig { iters: 400 })
            .unwrap();
        let gram_inv = crate::linalg::pseudo_inverse(&sa.gram()).unwrap();
        let want = gram_inv.matmul(&grad_term);
        assert!(u.sub(&want).frobenius_norm() <= 1e-6 * want.frobenius_norm().max(1.0));
    }

    #[test]
    fn ihs_subproblem_loose_ball_matches_unconstrained() {
        let problem = lasso_problem(5);
        let x_t = Matrix::zeros(5, 1);
        let s = permutation_sketch(80);
        let sa = s.apply_left(&problem.a).unwrap();
        let grad_term = problem.a.transpose().matmul(&problem.b);
        let pg = PgConfig { iters: 400 };
        let free = ihs_subproblem(&sa, &grad_term, &x_t, &Constraint::Unconstrained, pg).unwrap();
        let loose = Constraint::L1Ball { lambda: 1e6 };
        let balled = ihs_subproblem(&sa, &grad_term, &x_t, &loose, pg).unwrap();
        assert!(free.sub(&balled).frobenius_norm() <= 1e-9 * free.frobenius_norm().max(1.0));
    }

    #[test]
    fn ihs_subproblem_shrinking_ball_drives_to_feasible_zero() {
        let problem = lasso_problem(7);
        let x_t = Matrix::from_fn(5, 1, |i, _| 0.1 * (i as f64 + 1.0));
        let s = permutation_sketch(80);
        let sa = s.apply_left(&problem.a).unwrap();
        let grad_term = problem
            .a
            .transpose()
            .matmul(&problem.b.sub(&problem.a.matmul(&x_t)));
        let tiny = Constraint::L1Ball { lambda: 1e-9 };
        let u = ihs_subproblem(&sa, &grad_term, &x_t, &tiny, PgConfig { iters: 300 }).unwrap();
        // x_t + u must live in the shrunken ball, so u ~ -x_t.
        assert!(u.add(&x_t).frobenius_norm() <= 1e-8);
    }

    #[test]
    fn ihs_identity_sketch_solves_in_one_iteration() {
        let problem = lasso_problem(11);
        let source = |_t: usize| Ok(Sketch::identity(80));
        let trace = ihs_solve(&problem, &source, 3, PgConfig { iters: 500 }).unwrap();
        assert!(trace.errors[1] <= 1e-6, "one-step error {}", trace.errors[1]);
        assert!(trace.rate <= 0.6, "rate {}", trace.rate);
        // Errors are measured against a converged reference.
        assert!(trace.errors.iter().all(|&e| e >= -1e-9), "errors {:?}", trace.errors);
    }

    #[test]
    fn ihs_contracts_with_small_distortion_sketches() {
        // Sketches filtered to measured eps <= 0.1 contract the error by at
        // least 2x per iteration.
        let problem = lasso_problem(13);
        let source = |t: usize| -> Result<Sketch> {
            for attempt in 0..200u64 {
                let cs = CountSketch::random(600, 80, 9000 + t as u64 * 200 + attempt)?;
                let s = Sketch::Count(cs);
                let dist = subspace_distortion(&s, &problem.a)?;
                if dist.eps <= 0.1 {
                    return Ok(s);
                }
            }
            Err(Error::Numerical("no low-distortion sketch found".into()))
        };
        let trace = ihs_solve(&problem, &source, 7, PgConfig { iters: 400 }).unwrap();
        for t in 1..trace.errors.len() - 1 {
            let (e, next) = (trace.errors[t], trace.errors[t + 1]);
            if e <= 1e-12 {
                break;
            }
            assert!(next <= 0.5 * e, "iteration {t}: {next} vs {e}");
        }
    }

    #[test]
    fn ihs_permutation_sketch_rate() {
        let problem = lasso_problem(17);
        let source = |_t: usize| Ok(permutation_sketch(80));
        let trace = ihs_solve(&problem, &source, 5, PgConfig { iters: 400 }).unwrap();
        assert!(trace.rate <= 0.5, "rate {}", trace.rate);
    }

    #[test]
    fn ihs_heavy_plan_beats_classical_directionally() {
        let mut wins = 0;
        let trials = 5;
        for seed in 0..trials {
            let problem = gen_lasso_planted(128, 8, 8, 20.0, 0.2, 100 + seed, 0).unwrap();
            let m = 6 * 8;
            let tr = crate::position::TrainingSet::all_train(vec![problem.a.clone()]).unwrap();
            let heavy = crate::position::learn_heavy_row_indices(&tr, 5.0, 8).unwrap();
            let heavy_source = |t: usize| -> Result<Sketch> {
                let plan =
                    crate::position::heavy_row_plan(&heavy, m, 128, 5000 + seed * 50 + t as u64)?;
                Ok(Sketch::Count(plan.to_countsketch()))
            };
            let classical_source = |t: usize| -> Result<Sketch> {
                Ok(Sketch::Count(CountSketch::random(m, 128, 6000 + seed * 50 + t as u64)?))
            };
            let pg = PgConfig { iters: 300 };
            let learned = ihs_solve(&problem, &heavy_source, 7, pg).unwrap();
            let classical = ihs_solve(&problem, &classical_source, 7, pg).unwrap();
            if learned.rate < classical.rate {
                wins += 1;
            }
        }
        assert!(wins >= 3, "heavy plan won only {wins}/{trials}");
    }

    #[test]
    fn ihs_trace_csv_shape() {
        let problem = lasso_problem(19);
        let source = |_t: usize| Ok(Sketch::identity(80));
        let trace = ihs_solve(&problem, &source, 2, PgConfig { iters: 200 }).unwrap();
        let csv = trace.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,error,log10_error");
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn distortion_identity_and_zero() {
        let a = random_matrix(30, 4, 23);
        let d = subspace_distortion(&permutation_sketch(30), &a).unwrap();
        assert!((d.z1 - 1.0).abs() <= 1e-9);
        assert!(d.z2 <= 1e-9);
        assert!(d.eps <= 1e-9);

        let dead = CountSketch::new(5, vec![0; 30], vec![0.0; 30]).unwrap();
        let d = subspace_distortion(&Sketch::Count(dead), &a).unwrap();
        assert!((d.z1 - 0.0).abs() <= 1e-12);
        assert!((d.z2 - 1.0).abs() <= 1e-12);
        assert!((d.eps - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn distortion_matches_monte_carlo() {
        let a = random_matrix(200, 5, 29);
        let s = Sketch::Count(CountSketch::random(40, 200, 31).unwrap());
        let d = subspace_distortion(&s, &a).unwrap();
        // Monte-Carlo lower bound on the worst-case ratio deviation.
        let mut rng = rng_from_seed(33);
        let mut worst = 0.0f64;
        for _ in 0..10_000 {
            let x = Matrix::from_fn(5, 1, |_, _| rng.sample(StandardNormal));
            let ax = a.matmul(&x);
            let norm = ax.frobenius_norm();
            if norm == 0.0 {
                continue;
            }
            let sax = s.apply_left(&a).unwrap().matmul(&x).frobenius_norm();
            worst = worst.max((sax * sax / (norm * norm) - 1.0).abs());
        }
        assert!(worst <= d.eps + 1e-9, "sampled {worst} exceeds exact eps {}", d.eps);
        assert!(d.eps - worst <= 0.02 + 0.1 * d.eps, "sampling gap too large: {} vs {worst}", d.eps);
    }

    #[test]
    fn power_method_known_spectrum() {
        let h = Matrix::from_diag(&[0.5, 0.1]);
        let est = operator_norm_sym(&h, 200, 7);
        assert!((est - 0.5).abs() <= 0.1, "estimate {est}");
        // Negative extreme eigenvalue dominates.
        let h = Matrix::from_diag(&[-0.5, 0.1]);
        let est = operator_norm_sym(&h, 200, 7);
        assert!((est - 0.5).abs() <= 0.1, "estimate {est}");
    }

    #[test]
    fn estimate_z_exact_mode() {
        // m_T >= n puts the estimator in exact mode: T = I.
        let a = crate::linalg::qr(&random_matrix(40, 3, 41)).unwrap().q;
        let (z1, z2) = estimate_z(&Sketch::identity(40), &a, 0.1, 1).unwrap();
        assert!((z1 - 1.0).abs() <= 1e-9, "z1 {z1}");
        assert!(z2 <= 0.1, "z2 {z2}");
    }

    #[test]
    fn estimate_z_sandwich_against_oracle() {
        let eta = 0.1;
        let mut hits = 0;
        for seed in 0..10 {
            let a = random_matrix(300, 4, 50 + seed);
            let s = Sketch::Count(CountSketch::random(150, 300, 60 + seed).unwrap());
            let exact = subspace_distortion(&s, &a).unwrap();
            let (z1_hat, _) = estimate_z(&s, &a, eta, 70 + seed).unwrap();
            if (z1_hat - exact.z1.sqrt()).abs() <= 2.0 * eta {
                hits += 1;
            }
        }
        assert!(hits >= 9, "sandwich held in only {hits}/10 seeds");
    }

    #[test]
    fn choose_sketch_identical_inputs() {
        let a = random_matrix(60, 4, 81);
        let s = permutation_sketch(60);
        let out = choose_sketch(&s, &s, &a, 0.1, 5).unwrap();
        assert_eq!(out.chosen, ChosenSketch::Learned);
        assert!((out.ratio_learned - out.ratio_random).abs() <= 0.4);
    }

    #[test]
    fn choose_sketch_rejects_degenerate_learned() {
        let a = random_matrix(60, 4, 83);
        let dead = Sketch::Count(CountSketch::new(24, vec![0; 60], vec![0.0; 60]).unwrap());
        let random = Sketch::Count(CountSketch::random(24, 60, 85).unwrap());
        let out = choose_sketch(&dead, &random, &a, 0.1, 7).unwrap();
        assert_eq!(out.chosen, ChosenSketch::Random);
        assert!(out.ratio_learned.is_infinite());
    }

    #[test]
    fn choose_sketch_prefers_near_exact_embedding() {
        let mut wins = 0;
        for seed in 0..10 {
            let a = random_matrix(60, 4, 90 + seed);
            let near_exact = permutation_sketch(60);
            let small = Sketch::Count(CountSketch::random(8, 60, 95 + seed).unwrap());
            let out = choose_sketch(&near_exact, &small, &a, 0.1, seed).unwrap();
            if out.chosen == ChosenSketch::Learned {
                wins += 1;
            }
        }
        assert!(wins >= 9, "near-exact embedding chosen in only {wins}/10 seeds");
    }

    #[test]
    fn fast_regression_perfect_embedding_converges() {
        let a = random_matrix(70, 5, 101);
        let y = random_matrix(5, 1, 103);
        let out = fast_regression_solve(&a, &y, &permutation_sketch(70), GdConfig { lr: 1.0, iters: 10 })
            .unwrap();
        assert!(!out.diverged);
        assert!(
            *out.residuals.last().unwrap() <= 1e-6,
            "residuals {:?}",
            out.residuals
        );
        // Solution solves A^T A x = y.
        let resid = a.gram().matmul(&out.x).sub(&y).frobenius_norm();
        assert!(resid <= 1e-6 * y.frobenius_norm());
    }

    #[test]
    fn fast_regression_zero_rhs() {
        let a = random_matrix(40, 4, 105);
        let y = Matrix::zeros(4, 1);
        let out = fast_regression_solve(&a, &y, &permutation_sketch(40), GdConfig { lr: 1.0, iters: 5 })
            .unwrap();
        assert!(out.x.frobenius_norm() <= 1e-12);
        assert!(out.residuals.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn fast_regression_poor_sketch_diverges() {
        // m = d CountSketch is far from an embedding; lr = 1 explodes.
        let mut diverged = 0;
        for seed in 0..10 {
            let a = random_matrix(200, 9, 200 + seed);
            let y = random_matrix(9, 1, 300 + seed);
            let s = Sketch::Count(CountSketch::random(9, 200, 400 + seed).unwrap());
            match fast_regression_solve(&a, &y, &s, GdConfig { lr: 1.0, iters: 60 }) {
                Ok(out) => {
                    if out.diverged {
                        diverged += 1;
                    }
                }
                // Rank-deficient SA also counts as an unusable sketch.
                Err(Error::RankDeficient { .. }) => diverged += 1,
                Err(e) => panic!("unexpected error {e}"),
            }
        }
        assert!(diverged >= 7, "divergence detected in only {diverged}/10 seeds");
    }

    proptest! {
        #[test]
        fn l1_projection_feasible_and_idempotent(
            seed in 0u64..500,
            lambda in 0.5f64..3.0,
        ) {
            let mut rng = rng_from_seed(seed);
            let x: Vec<f64> = (0..8).map(|_| {
                let g: f64 = rng.sample(StandardNormal);
                2.0 * g
            }).collect();
            let p = project_l1(&x, lambda).unwrap();
            let norm: f64 = p.iter().map(|v| v.abs()).sum();
            prop_assert!(norm <= lambda + 1e-9);
            let pp = project_l1(&p, lambda).unwrap();
            for (a, b) in p.iter().zip(&pp) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn nuclear_projection_feasible_and_idempotent(
            seed in 0u64..200,
            rho in 0.5f64..3.0,
        ) {
            let x = random_matrix(4, 3, seed).scale(1.5);
            let p = project_nuclear(&x, rho).unwrap();
            let nuclear: f64 = svd_values(&p).unwrap().iter().sum();
            prop_assert!(nuclear <= rho + 1e-9);
            let pp = project_nuclear(&p, rho).unwrap();
            prop_assert!(p.sub(&pp).frobenius_norm() <= 1e-9);
        }
    }
}
