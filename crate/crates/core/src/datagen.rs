//! Synthetic distributions: spiked covariance, Zipfian row norms, and
//! planted-heavy regression surrogates. Generators are deterministic given
//! (spec, seed); heavy structure is shared across draws of one
//! distribution while directions are fresh per draw.

use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::qr;
use crate::matrix::Matrix;
use crate::position::TrainingSet;
use crate::rng::{rng_for_stream, Rng};
use crate::second_order::{Constraint, ConstrainedLsProblem};

const STREAM_HEAVY: u64 = 0xA0;
const STREAM_SHARED: u64 = 0xB0;
const STREAM_DRAW_BASE: u64 = 0x1000;

fn draw_rng(dist_seed: u64, draw: u64) -> Rng {
    rng_for_stream(dist_seed, STREAM_DRAW_BASE.wrapping_add(draw))
}

fn unit_vector(rng: &mut Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn gaussian_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `s` distinct heavy indices, fixed by the distribution seed.
pub fn spiked_heavy_indices(n: usize, s: usize, dist_seed: u64) -> Vec<usize> {
    let mut rng = rng_for_stream(dist_seed, STREAM_HEAVY);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..s.min(n) {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    let mut heavy: Vec<usize> = pool[..s.min(n)].to_vec();
    heavy.sort_unstable();
    heavy
}

/// Spiked covariance draw: every row is a uniformly random unit vector,
/// scaled by `ell` on the shared heavy index set.
pub fn gen_spiked(n: usize, d: usize, s: usize, ell: f64, dist_seed: u64, draw: u64) -> Result<Matrix> {
    if s > n {
        return Err(Error::invalid(format!("gen_spiked: s={s} exceeds n={n}")));
    }
    if !(ell > 1.0) {
        return Err(Error::invalid("gen_spiked: ell must exceed 1"));
    }
    let heavy = spiked_heavy_indices(n, s, dist_seed);
    let mut rng = draw_rng(dist_seed, draw);
    let mut a = Matrix::zeros(n, d);
    for i in 0..n {
        let v = unit_vector(&mut rng, d);
        let scale = if heavy.binary_search(&i).is_ok() { ell } else { 1.0 };
        for (j, x) in v.iter().enumerate() {
            a.set(i, j, scale * x);
        }
    }
    Ok(a)
}

/// Squared norms of the Zipfian profile: level i contributes `2^(i+1)` rows
/// of squared norm `n^2 / 2^(2i)`, the last level truncated to hit
/// `n_target` rows.
pub fn zipfian_norm_profile(n_target: usize) -> Vec<f64> {
    let n_sq = (n_target * n_target) as f64;
    let mut norms = Vec::with_capacity(n_target);
    let mut level = 1u32;
    while norms.len() < n_target {
        let count = 1usize << (level + 1);
        let sq = n_sq / f64::powi(2.0, 2 * level as i32);
        for _ in 0..count.min(n_target - norms.len()) {
            norms.push(sq);
        }
        level += 1;
    }
    norms
}

/// Zipfian draw: mutually orthogonal random directions (QR of a Gaussian
/// matrix) carrying the shared norm profile.
pub fn gen_zipfian(n_target: usize, d: usize, dist_seed: u64, draw: u64) -> Result<Matrix> {
    if d < n_target {
        return Err(Error::invalid(format!(
            "gen_zipfian: need d >= n, got n={n_target}, d={d}"
        )));
    }
    if n_target == 0 {
        return Err(Error::invalid("gen_zipfian: n must be >= 1"));
    }
    let norms = zipfian_norm_profile(n_target);
    let mut rng = draw_rng(dist_seed, draw);
    let g = gaussian_matrix(&mut rng, d, n_target);
    let q = qr(&g)?.q; // d x n, orthonormal columns
    Ok(Matrix::from_fn(n_target, d, |i, j| q.get(j, i) * norms[i].sqrt()))
}

/// Clustered low-rank-plus-noise draw: rows sit near `rank` shared
/// directions with a deterministic spread of scales; per-draw Gaussian
/// noise on top. The surrogate for image-like ensembles whose row
/// structure persists across the distribution.
pub fn gen_low_rank_noise(
    n: usize,
    d: usize,
    rank: usize,
    noise: f64,
    dist_seed: u64,
    draw: u64,
) -> Result<Matrix> {
    if rank == 0 || rank > d.min(n) {
        return Err(Error::invalid(format!("gen_low_rank_noise: bad rank {rank}")));
    }
    let mut shared = rng_for_stream(dist_seed, STREAM_SHARED);
    let dirs: Vec<Vec<f64>> = (0..rank).map(|_| unit_vector(&mut shared, d)).collect();
    let mut rng = draw_rng(dist_seed, draw);
    let noise_scale = noise / (d as f64).sqrt();
    let mut a = Matrix::zeros(n, d);
    for i in 0..n {
        let dir = &dirs[i % rank];
        let scale = 1.0 + 3.0 * ((i / rank) % 4) as f64 / 3.0;
        for j in 0..d {
            let g: f64 = rng.sample(StandardNormal);
            a.set(i, j, scale * dir[j] + noise_scale * g);
        }
    }
    Ok(a)
}

/// Planted-heavy LASSO draw. Row identities persist across the
/// distribution, mirroring fixed-sensor data: each draw perturbs a shared
/// base matrix by `noise`, heavy rows are scaled by `heavy_scale`, and
/// `b = A x_true + noise`-level observation noise. The l1 radius is
/// `||x_true||_1`, so the shared ground truth stays feasible.
pub fn gen_lasso_planted(
    n: usize,
    d: usize,
    heavy_count: usize,
    heavy_scale: f64,
    noise: f64,
    dist_seed: u64,
    draw: u64,
) -> Result<ConstrainedLsProblem> {
    if heavy_count > n {
        return Err(Error::invalid(format!(
            "gen_lasso_planted: heavy_count={heavy_count} exceeds n={n}"
        )));
    }
    let heavy = spiked_heavy_indices(n, heavy_count, dist_seed);
    let mut shared = rng_for_stream(dist_seed, STREAM_SHARED);
    let x_true: Vec<f64> = (0..d).map(|_| shared.sample::<f64, _>(StandardNormal)).collect();
    let lambda: f64 = x_true.iter().map(|v| v.abs()).sum();
    let row_scale = 1.0 / (d as f64).sqrt();
    let base = gaussian_matrix(&mut shared, n, d);

    let mut rng = draw_rng(dist_seed, draw);
    let mut a = Matrix::zeros(n, d);
    for i in 0..n {
        let scale = if heavy.binary_search(&i).is_ok() {
            heavy_scale * row_scale
        } else {
            row_scale
        };
        for j in 0..d {
            let g: f64 = rng.sample(StandardNormal);
            a.set(i, j, scale * (base.get(i, j) + noise * g));
        }
    }
    let x_mat = Matrix::column(&x_true);
    let mut b = a.matmul(&x_mat);
    if noise > 0.0 {
        for i in 0..n {
            let g: f64 = rng.sample(StandardNormal);
            b.set(i, 0, b.get(i, 0) + noise * g);
        }
    }
    ConstrainedLsProblem::new(a, b, Constraint::L1Ball { lambda })
}

/// Planted matrix-estimation draw with a nuclear-norm ball: low-rank shared
/// ground truth `X_true` (d x d2), Gaussian design, `B = A X_true + noise`;
/// the radius is the nuclear norm of `X_true`.
pub fn gen_nuclear_planted(
    n: usize,
    d: usize,
    d2: usize,
    rank: usize,
    noise: f64,
    dist_seed: u64,
    draw: u64,
) -> Result<ConstrainedLsProblem> {
    if rank == 0 || rank > d.min(d2) {
        return Err(Error::invalid(format!("gen_nuclear_planted: bad rank {rank}")));
    }
    let mut shared = rng_for_stream(dist_seed, STREAM_SHARED);
    let x_true = gaussian_matrix(&mut shared, d, rank)
        .matmul(&gaussian_matrix(&mut shared, rank, d2))
        .scale(1.0 / rank as f64);
    let rho: f64 = crate::linalg::svd_values(&x_true)?.iter().sum();
    if rho <= 0.0 {
        return Err(Error::Numerical("gen_nuclear_planted: degenerate ground truth".into()));
    }
    let base = gaussian_matrix(&mut shared, n, d);

    let mut rng = draw_rng(dist_seed, draw);
    let perturb = gaussian_matrix(&mut rng, n, d);
    let a = base.add(&perturb.scale(noise)).scale(1.0 / (d as f64).sqrt());
    let mut b = a.matmul(&x_true);
    if noise > 0.0 {
        for i in 0..n {
            for j in 0..d2 {
                let g: f64 = rng.sample(StandardNormal);
                b.set(i, j, b.get(i, j) + noise * g);
            }
        }
    }
    ConstrainedLsProblem::new(a, b, Constraint::NuclearBall { rho, d1: d, d2 })
}

/// What a distribution draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistKind {
    Spiked { s: usize, ell: f64 },
    Zipfian,
    LowRankNoise { rank: usize, noise: f64 },
    LassoPlanted { heavy_count: usize, heavy_scale: f64, noise: f64 },
    NuclearPlanted { d2: usize, rank: usize, noise: f64 },
}

/// A fully specified ensemble: distribution, shape, split sizes, seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    #[serde(flatten)]
    pub kind: DistKind,
    pub n: usize,
    pub d: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

/// Generated data: plain matrices for LRA-style tasks, constrained
/// problems for second-order tasks.
#[derive(Debug, Clone)]
pub enum Ensemble {
    Matrices(TrainingSet),
    Problems(ProblemSet),
}

/// Constrained problems with a train/test split.
#[derive(Debug, Clone)]
pub struct ProblemSet {
    pub problems: Vec<ConstrainedLsProblem>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl ProblemSet {
    pub fn train_problems(&self) -> impl Iterator<Item = &ConstrainedLsProblem> {
        self.train.iter().map(|&i| &self.problems[i])
    }

    pub fn test_problems(&self) -> impl Iterator<Item = &ConstrainedLsProblem> {
        self.test.iter().map(|&i| &self.problems[i])
    }

    /// Design matrices of the train split as a TrainingSet, the shape the
    /// position/value learners consume.
    pub fn design_training_set(&self) -> Result<TrainingSet> {
        let matrices: Vec<Matrix> = self.problems.iter().map(|p| p.a.clone()).collect();
        TrainingSet::new(matrices, self.train.clone(), self.test.clone())
    }
}

impl DistributionSpec {
    /// Train draws use indices `0..n_train`, test draws follow; all derived
    /// from the distribution seed, so splits never share a stream.
    pub fn generate(&self) -> Result<Ensemble> {
        let total = self.n_train + self.n_test;
        if total == 0 {
            return Err(Error::invalid("DistributionSpec: empty ensemble"));
        }
        let train: Vec<usize> = (0..self.n_train).collect();
        let test: Vec<usize> = (self.n_train..total).collect();
        match &self.kind {
            DistKind::Spiked { s, ell } => {
                let mats = (0..total)
                    .map(|t| gen_spiked(self.n, self.d, *s, *ell, self.seed, t as u64))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Ensemble::Matrices(TrainingSet::new(mats, train, test)?))
            }
            DistKind::Zipfian => {
                let mats = (0..total)
                    .map(|t| gen_zipfian(self.n, self.d, self.seed, t as u64))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Ensemble::Matrices(TrainingSet::new(mats, train, test)?))
            }
            DistKind::LowRankNoise { rank, noise } => {
                let mats = (0..total)
                    .map(|t| gen_low_rank_noise(self.n, self.d, *rank, *noise, self.seed, t as u64))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Ensemble::Matrices(TrainingSet::new(mats, train, test)?))
            }
            DistKind::LassoPlanted { heavy_count, heavy_scale, noise } => {
                let problems = (0..total)
                    .map(|t| {
                        gen_lasso_planted(
                            self.n,
                            self.d,
                            *heavy_count,
                            *heavy_scale,
                            *noise,
                            self.seed,
                            t as u64,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Ensemble::Problems(ProblemSet { problems, train, test }))
            }
            DistKind::NuclearPlanted { d2, rank, noise } => {
                let problems = (0..total)
                    .map(|t| {
                        gen_nuclear_planted(self.n, self.d, *d2, *rank, *noise, self.seed, t as u64)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Ensemble::Problems(ProblemSet { problems, train, test }))
            }
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    spec: DistributionSpec,
    flavor: String,
    train: Vec<usize>,
    test: Vec<usize>,
    count: usize,
}

/// Write an ensemble as a directory of binary matrix files plus a JSON
/// manifest.
pub fn save_ensemble(dir: impl AsRef<Path>, spec: &DistributionSpec, ensemble: &Ensemble) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let (flavor, train, test, count) = match ensemble {
        Ensemble::Matrices(ts) => {
            for (i, m) in ts.matrices().iter().enumerate() {
                m.write_binary_file(dir.join(format!("a_{i:04}.bin")))?;
            }
            ("matrices", ts.train_indices().to_vec(), ts.test_indices().to_vec(), ts.matrices().len())
        }
        Ensemble::Problems(ps) => {
            for (i, p) in ps.problems.iter().enumerate() {
                p.a.write_binary_file(dir.join(format!("a_{i:04}.bin")))?;
                p.b.write_binary_file(dir.join(format!("b_{i:04}.bin")))?;
                let cj = serde_json::to_string_pretty(&p.constraint)?;
                std::fs::write(dir.join(format!("constraint_{i:04}.json")), cj)?;
            }
            ("problems", ps.train.clone(), ps.test.clone(), ps.problems.len())
        }
    };
    let manifest = Manifest {
        spec: spec.clone(),
        flavor: flavor.to_string(),
        train,
        test,
        count,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Read back an ensemble directory written by [`save_ensemble`].
pub fn load_ensemble(dir: impl AsRef<Path>) -> Result<(DistributionSpec, Ensemble)> {
    let dir = dir.as_ref();
    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    let ensemble = match manifest.flavor.as_str() {
        "matrices" => {
            let mats = (0..manifest.count)
                .map(|i| Matrix::read_binary_file(dir.join(format!("a_{i:04}.bin"))))
                .collect::<Result<Vec<_>>>()?;
            Ensemble::Matrices(TrainingSet::new(mats, manifest.train.clone(), manifest.test.clone())?)
        }
        "problems" => {
            let problems = (0..manifest.count)
                .map(|i| {
                    let a = Matrix::read_binary_file(dir.join(format!("a_{i:04}.bin")))?;
                    let b = Matrix::read_binary_file(dir.join(format!("b_{i:04}.bin")))?;
                    let constraint: Constraint = serde_json::from_str(&std::fs::read_to_string(
                        dir.join(format!("constraint_{i:04}.json")),
                    )?)?;
                    ConstrainedLsProblem::new(a, b, constraint)
                })
                .collect::<Result<Vec<_>>>()?;
            Ensemble::Problems(ProblemSet {
                problems,
                train: manifest.train.clone(),
                test: manifest.test.clone(),
            })
        }
        other => return Err(Error::Format(format!("unknown ensemble flavor {other:?}"))),
    };
    Ok((manifest.spec, ensemble))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::position::learn_heavy_row_indices;
    use crate::second_order::reference_solution;

    #[test]
    fn spiked_no_heavy_rows_is_unit_norm() {
        let a = gen_spiked(10, 16, 0, 2.0, 3, 0).unwrap();
        for i in 0..10 {
            assert!((a.row_norm(i) - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn spiked_norms_and_near_orthogonality() {
        let n = 32;
        let d = 4096;
        let a = gen_spiked(n, d, 4, 10.0, 11, 0).unwrap();
        let heavy = spiked_heavy_indices(n, 4, 11);
        assert_eq!(heavy.len(), 4);
        for i in 0..n {
            let want = if heavy.binary_search(&i).is_ok() { 10.0 } else { 1.0 };
            assert!((a.row_norm(i) - want).abs() <= 1e-12, "row {i}");
        }
        // Pairwise normalized inner products at most 2 sqrt(log n / d).
        let bound = 2.0 * ((n as f64).ln() / d as f64).sqrt();
        for i in 0..n {
            for j in (i + 1)..n {
                let dot: f64 = a.row(i).iter().zip(a.row(j)).map(|(x, y)| x * y).sum();
                let cos = dot / (a.row_norm(i) * a.row_norm(j));
                assert!(cos.abs() <= bound, "pair ({i},{j}): {cos} > {bound}");
            }
        }
    }

    #[test]
    fn spiked_draws_share_heavy_set() {
        let h0 = spiked_heavy_indices(20, 3, 7);
        let h1 = spiked_heavy_indices(20, 3, 7);
        assert_eq!(h0, h1);
        let a0 = gen_spiked(20, 64, 3, 5.0, 7, 0).unwrap();
        let a1 = gen_spiked(20, 64, 3, 5.0, 7, 1).unwrap();
        assert_ne!(a0, a1);
        for &i in &h0 {
            assert!((a0.row_norm(i) - 5.0).abs() <= 1e-12);
            assert!((a1.row_norm(i) - 5.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn zipfian_smallest_level() {
        let a = gen_zipfian(4, 8, 5, 0).unwrap();
        for i in 0..4 {
            // Level 1: squared norm n^2 / 4 = 4.
            assert!((a.row_norm(i).powi(2) - 4.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn zipfian_full_profile_orthogonal() {
        let n = 28; // levels 1..3: 4 + 8 + 16 rows
        let a = gen_zipfian(n, 32, 9, 0).unwrap();
        let profile = zipfian_norm_profile(n);
        assert_eq!(profile.len(), n);
        for i in 0..n {
            assert!((a.row_norm(i).powi(2) - profile[i]).abs() <= 1e-9 * profile[i]);
        }
        let gram = a.matmul(&a.transpose());
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    assert!(gram.get(i, j).abs() <= 1e-10 * profile[0]);
                }
            }
        }
    }

    #[test]
    fn zipfian_draws_share_norms_not_directions() {
        let a0 = gen_zipfian(12, 16, 5, 0).unwrap();
        let a1 = gen_zipfian(12, 16, 5, 1).unwrap();
        assert_ne!(a0, a1);
        for i in 0..12 {
            assert!((a0.row_norm(i) - a1.row_norm(i)).abs() <= 1e-9);
        }
    }

    #[test]
    fn zipfian_rejects_small_d() {
        assert!(gen_zipfian(10, 9, 1, 0).is_err());
    }

    #[test]
    fn lasso_uniform_when_unscaled() {
        let p = gen_lasso_planted(60, 5, 6, 1.0, 0.1, 13, 0).unwrap();
        let tau = crate::linalg::leverage_scores(&p.a).unwrap();
        let uniform = 5.0 / 60.0;
        let max = tau.iter().cloned().fold(0.0f64, f64::max);
        assert!(max <= 6.0 * uniform, "max leverage {max} far from uniform {uniform}");
    }

    #[test]
    fn lasso_planted_heavy_recovered() {
        for seed in 0..10 {
            let spec = DistributionSpec {
                kind: DistKind::LassoPlanted { heavy_count: 3, heavy_scale: 50.0, noise: 0.05 },
                n: 40,
                d: 5,
                n_train: 8,
                n_test: 0,
                seed,
            };
            let Ensemble::Problems(ps) = spec.generate().unwrap() else {
                panic!("expected problems");
            };
            let tr = ps.design_training_set().unwrap();
            let found = learn_heavy_row_indices(&tr, 5.0, 3).unwrap();
            let planted = spiked_heavy_indices(40, 3, seed);
            assert_eq!(found, planted, "seed {seed}");
        }
    }

    #[test]
    fn lasso_noiseless_recovers_truth() {
        let p = gen_lasso_planted(50, 4, 0, 1.0, 0.0, 21, 0).unwrap();
        let x_star = reference_solution(&p).unwrap();
        // b = A x_true exactly and x_true is feasible, so the optimum
        // attains zero objective.
        assert!(p.objective(&x_star) <= 1e-10);
    }

    #[test]
    fn nuclear_planted_shapes() {
        let p = gen_nuclear_planted(30, 4, 3, 2, 0.05, 31, 0).unwrap();
        assert_eq!(p.a.cols(), 4);
        assert_eq!(p.b.cols(), 3);
        match p.constraint {
            Constraint::NuclearBall { rho, d1, d2 } => {
                assert!(rho > 0.0);
                assert_eq!((d1, d2), (4, 3));
            }
            _ => panic!("expected nuclear ball"),
        }
    }

    #[test]
    fn generators_deterministic() {
        let a = gen_low_rank_noise(16, 8, 3, 0.2, 5, 2).unwrap();
        let b = gen_low_rank_noise(16, 8, 3, 0.2, 5, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ensemble_save_load_round_trip() {
        let dir = std::env::temp_dir().join(format!("sketchlearn_dg_{}", std::process::id()));
        let spec = DistributionSpec {
            kind: DistKind::Spiked { s: 2, ell: 4.0 },
            n: 10,
            d: 12,
            n_train: 3,
            n_test: 2,
            seed: 77,
        };
        let ensemble = spec.generate().unwrap();
        save_ensemble(&dir, &spec, &ensemble).unwrap();
        let (spec2, loaded) = load_ensemble(&dir).unwrap();
        assert_eq!(spec, spec2);
        match (ensemble, loaded) {
            (Ensemble::Matrices(a), Ensemble::Matrices(b)) => {
                assert_eq!(a.matrices(), b.matrices());
                assert_eq!(a.train_indices(), b.train_indices());
                assert_eq!(a.test_indices(), b.test_indices());
            }
            _ => panic!("flavor mismatch"),
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn problem_ensemble_round_trip() {
        let dir = std::env::temp_dir().join(format!("sketchlearn_dgp_{}", std::process::id()));
        let spec = DistributionSpec {
            kind: DistKind::LassoPlanted { heavy_count: 2, heavy_scale: 10.0, noise: 0.1 },
            n: 12,
            d: 3,
            n_train: 2,
            n_test: 1,
            seed: 9,
        };
        let ensemble = spec.generate().unwrap();
        save_ensemble(&dir, &spec, &ensemble).unwrap();
        let (_, loaded) = load_ensemble(&dir).unwrap();
        match (ensemble, loaded) {
            (Ensemble::Problems(a), Ensemble::Problems(b)) => {
                assert_eq!(a.problems.len(), b.problems.len());
                for (x, y) in a.problems.iter().zip(&b.problems) {
                    assert_eq!(x.a, y.a);
                    assert_eq!(x.b, y.b);
                    assert_eq!(x.constraint, y.constraint);
                }
            }
            _ => panic!("flavor mismatch"),
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}
