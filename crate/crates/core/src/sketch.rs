//! CountSketch and baseline sketch types: construction, application,
//! composition.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::rng_from_seed;

/// Sparse sketch with exactly one nonzero per column: position vector
/// `p in [m]^n` and value vector `v in R^n`.
///
/// Classical sketches carry values in `{+1, -1}`; learned sketches reuse the
/// same type with arbitrary real values (the classical invariant is a
/// constructor-level property, not a type-level one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountSketch {
    pub m: usize,
    pub n: usize,
    pub p: Vec<usize>,
    pub v: Vec<f64>,
}

impl CountSketch {
    pub fn new(m: usize, p: Vec<usize>, v: Vec<f64>) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("CountSketch: m must be >= 1"));
        }
        if p.is_empty() || p.len() != v.len() {
            return Err(Error::dims(format!(
                "CountSketch: p has {} entries, v has {}",
                p.len(),
                v.len()
            )));
        }
        if let Some(&bad) = p.iter().find(|&&b| b >= m) {
            return Err(Error::invalid(format!("CountSketch: bucket {bad} out of range [0, {m})")));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("CountSketch: non-finite value".into()));
        }
        let n = p.len();
        Ok(CountSketch { m, n, p, v })
    }

    /// Classical random CountSketch: positions uniform over buckets, values
    /// uniform over `{+1, -1}`, deterministic given the seed.
    pub fn random(m: usize, n: usize, seed: u64) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::invalid(format!("CountSketch::random: m={m}, n={n}")));
        }
        let mut rng = rng_from_seed(seed);
        let p: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
        let v: Vec<f64> = (0..n)
            .map(|_| if rng.random_range(0..2u8) == 0 { 1.0 } else { -1.0 })
            .collect();
        CountSketch::new(m, p, v)
    }

    /// Same positions, new values.
    pub fn with_values(&self, v: Vec<f64>) -> Result<Self> {
        CountSketch::new(self.m, self.p.clone(), v)
    }

    /// `S * A` by bucket accumulation: output row b is
    /// `sum_{i: p_i = b} v_i * A_i`. Runs in one pass over the rows of A.
    pub fn apply_left(&self, a: &Matrix) -> Result<Matrix> {
        if a.rows() != self.n {
            return Err(Error::dims(format!(
                "apply_left: sketch has {} columns, matrix has {} rows",
                self.n,
                a.rows()
            )));
        }
        let mut out = Matrix::zeros(self.m, a.cols());
        for i in 0..self.n {
            let coeff = self.v[i];
            if coeff == 0.0 {
                continue;
            }
            let src = a.row(i);
            let dst = out.row_mut(self.p[i]);
            for (d, s) in dst.iter_mut().zip(src) {
                *d += coeff * s;
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Matrix {
        let mut d = Matrix::zeros(self.m, self.n);
        for i in 0..self.n {
            d.set(self.p[i], i, self.v[i]);
        }
        d
    }
}

/// Heavy-row structured sketch: identity rows for a sorted index set I, a
/// CountSketch over the remaining columns. Its dense form is a column
/// permutation of the block matrix `(I 0; 0 S')`; still one nonzero per
/// column.
///
/// Serializes as the flat `{m, n, p, v}` encoding plus the `heavy` list.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredSketch {
    /// Sorted heavy indices into `[0, n)`.
    pub heavy: Vec<usize>,
    /// Sketch over the `n - |heavy|` remaining columns, in increasing
    /// original-index order.
    pub tail: CountSketch,
    /// Total column count n.
    pub n: usize,
}

#[derive(Serialize, Deserialize)]
struct StructuredSketchWire {
    m: usize,
    n: usize,
    p: Vec<usize>,
    v: Vec<f64>,
    heavy: Vec<usize>,
}

impl Serialize for StructuredSketch {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let flat = self.to_countsketch();
        StructuredSketchWire {
            m: flat.m,
            n: flat.n,
            p: flat.p,
            v: flat.v,
            heavy: self.heavy.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for StructuredSketch {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as DeError;
        let wire = StructuredSketchWire::deserialize(deserializer)?;
        let k = wire.heavy.len();
        if wire.m <= k {
            return Err(D::Error::custom("structured sketch: no tail buckets"));
        }
        let mut tail_p = Vec::with_capacity(wire.n - k);
        let mut tail_v = Vec::with_capacity(wire.n - k);
        for i in 0..wire.n {
            match wire.heavy.binary_search(&i) {
                Ok(pos) => {
                    if wire.p.get(i) != Some(&pos) {
                        return Err(D::Error::custom("structured sketch: heavy row off-block"));
                    }
                }
                Err(_) => {
                    let bucket = *wire.p.get(i).ok_or_else(|| D::Error::custom("short p"))?;
                    if bucket < k {
                        return Err(D::Error::custom("structured sketch: tail row in heavy block"));
                    }
                    tail_p.push(bucket - k);
                    tail_v.push(wire.v[i]);
                }
            }
        }
        let tail = if tail_p.is_empty() {
            CountSketch { m: wire.m - k, n: 0, p: Vec::new(), v: Vec::new() }
        } else {
            CountSketch::new(wire.m - k, tail_p, tail_v).map_err(D::Error::custom)?
        };
        Ok(StructuredSketch { heavy: wire.heavy, tail, n: wire.n })
    }
}

impl StructuredSketch {
    pub fn rows(&self) -> usize {
        self.heavy.len() + self.tail.m
    }

    /// Column index map: `row_of_column(i)` gives the output row that column
    /// i feeds, exposing the row permutation explicitly.
    pub fn row_of_column(&self, i: usize) -> usize {
        match self.heavy.binary_search(&i) {
            Ok(pos) => pos,
            Err(gap) => self.heavy.len() + self.tail.p[i - gap],
        }
    }

    pub fn value_of_column(&self, i: usize) -> f64 {
        match self.heavy.binary_search(&i) {
            Ok(_) => 1.0,
            Err(gap) => self.tail.v[i - gap],
        }
    }

    /// Equivalent flat CountSketch over all n columns.
    pub fn to_countsketch(&self) -> CountSketch {
        let p = (0..self.n).map(|i| self.row_of_column(i)).collect();
        let v = (0..self.n).map(|i| self.value_of_column(i)).collect();
        CountSketch { m: self.rows(), n: self.n, p, v }
    }

    pub fn apply_left(&self, a: &Matrix) -> Result<Matrix> {
        self.to_countsketch().apply_left(a)
    }

    pub fn to_dense(&self) -> Matrix {
        self.to_countsketch().to_dense()
    }
}

/// Maintain all rows in I explicitly, hash the rest with a fresh random
/// CountSketch of `m_tail` rows.
pub fn heavy_row_sketch(heavy: &[usize], m_tail: usize, n: usize, seed: u64) -> Result<StructuredSketch> {
    if m_tail == 0 {
        return Err(Error::invalid("heavy_row_sketch: m_tail must be >= 1"));
    }
    let mut sorted = heavy.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != heavy.len() {
        return Err(Error::invalid("heavy_row_sketch: duplicate heavy indices"));
    }
    if let Some(&bad) = sorted.iter().find(|&&i| i >= n) {
        return Err(Error::invalid(format!("heavy_row_sketch: index {bad} out of range [0, {n})")));
    }
    let rest = n - sorted.len();
    let tail = if rest == 0 {
        // Degenerate: no tail columns. Keep a placeholder over one virtual
        // column count of zero by constructing directly.
        CountSketch { m: m_tail, n: 0, p: Vec::new(), v: Vec::new() }
    } else {
        CountSketch::random(m_tail, rest, seed)?
    };
    Ok(StructuredSketch { heavy: sorted, tail, n })
}

/// Dense baseline sketches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DenseKind {
    Gaussian,
    /// Vertical concatenation of `s` independent CountSketches.
    Sjlt { s: usize },
}

#[derive(Debug, Clone)]
pub struct DenseSketch {
    pub matrix: Matrix,
    pub kind: DenseKind,
}

/// `S = G / sqrt(m)` with i.i.d. standard normal G.
pub fn gaussian_sketch(m: usize, n: usize, seed: u64) -> Result<DenseSketch> {
    if m == 0 || n == 0 {
        return Err(Error::invalid(format!("gaussian_sketch: m={m}, n={n}")));
    }
    let mut rng = rng_from_seed(seed);
    let scale = 1.0 / (m as f64).sqrt();
    let matrix = Matrix::from_fn(m, n, |_, _| {
        let g: f64 = rng.sample(StandardNormal);
        g * scale
    });
    Ok(DenseSketch { matrix, kind: DenseKind::Gaussian })
}

/// Sparse Johnson-Lindenstrauss transform: `s` stacked CountSketches of
/// `m / s` rows each; requires `s | m`.
pub fn sjlt(m: usize, n: usize, s: usize, seed: u64) -> Result<DenseSketch> {
    if s == 0 || m == 0 || !m.is_multiple_of(s) {
        return Err(Error::invalid(format!("sjlt: s={s} must divide m={m}")));
    }
    let block_rows = m / s;
    let mut matrix = Matrix::zeros(m, n);
    let scale = 1.0 / (s as f64).sqrt();
    for b in 0..s {
        let cs = CountSketch::random(block_rows, n, seed.wrapping_add(b as u64))?;
        for i in 0..n {
            matrix.set(b * block_rows + cs.p[i], i, cs.v[i] * scale);
        }
    }
    Ok(DenseSketch { matrix, kind: DenseKind::Sjlt { s } })
}

/// Any left sketch the algorithms consume. `Identity` is the exact,
/// uncompressed case; `Stacked` is vertical concatenation.
#[derive(Debug, Clone)]
pub enum Sketch {
    Count(CountSketch),
    Structured(StructuredSketch),
    Dense(DenseSketch),
    Identity { n: usize },
    Stacked(Vec<Sketch>),
}

impl Sketch {
    pub fn identity(n: usize) -> Self {
        Sketch::Identity { n }
    }

    pub fn rows(&self) -> usize {
        match self {
            Sketch::Count(s) => s.m,
            Sketch::Structured(s) => s.rows(),
            Sketch::Dense(s) => s.matrix.rows(),
            Sketch::Identity { n } => *n,
            Sketch::Stacked(parts) => parts.iter().map(|p| p.rows()).sum(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Sketch::Count(s) => s.n,
            Sketch::Structured(s) => s.n,
            Sketch::Dense(s) => s.matrix.cols(),
            Sketch::Identity { n } => *n,
            Sketch::Stacked(parts) => parts[0].cols(),
        }
    }

    pub fn apply_left(&self, a: &Matrix) -> Result<Matrix> {
        if a.rows() != self.cols() {
            return Err(Error::dims(format!(
                "apply_left: sketch has {} columns, matrix has {} rows",
                self.cols(),
                a.rows()
            )));
        }
        match self {
            Sketch::Count(s) => s.apply_left(a),
            Sketch::Structured(s) => s.apply_left(a),
            Sketch::Dense(s) => Ok(s.matrix.matmul(a)),
            Sketch::Identity { .. } => Ok(a.clone()),
            Sketch::Stacked(parts) => {
                let mut out = parts[0].apply_left(a)?;
                for p in &parts[1..] {
                    out = out.vstack(&p.apply_left(a)?);
                }
                Ok(out)
            }
        }
    }

    pub fn to_dense(&self) -> Matrix {
        match self {
            Sketch::Count(s) => s.to_dense(),
            Sketch::Structured(s) => s.to_dense(),
            Sketch::Dense(s) => s.matrix.clone(),
            Sketch::Identity { n } => Matrix::identity(*n),
            Sketch::Stacked(parts) => {
                let mut out = parts[0].to_dense();
                for p in &parts[1..] {
                    out = out.vstack(&p.to_dense());
                }
                out
            }
        }
    }
}

/// Vertical concatenation: the dense form row-stacks the two dense forms.
pub fn concat_vertical(s1: Sketch, s2: Sketch) -> Result<Sketch> {
    if s1.cols() != s2.cols() {
        return Err(Error::dims(format!(
            "concat_vertical: column counts {} and {} differ",
            s1.cols(),
            s2.cols()
        )));
    }
    let mut parts = Vec::new();
    for s in [s1, s2] {
        match s {
            Sketch::Stacked(inner) => parts.extend(inner),
            other => parts.push(other),
        }
    }
    Ok(Sketch::Stacked(parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = rng_from_seed(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn random_is_deterministic() {
        let a = CountSketch::random(4, 10, 7).unwrap();
        let b = CountSketch::random(4, 10, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.v.iter().all(|&x| x == 1.0 || x == -1.0));
    }

    #[test]
    fn single_bucket_positions() {
        let s = CountSketch::random(1, 5, 3).unwrap();
        assert!(s.p.iter().all(|&b| b == 0));
    }

    #[test]
    fn bucket_counts_concentrate() {
        // m = 16, n = 10000: each bucket within 5 sigma of n/m under the
        // binomial(n, 1/m) model.
        let m = 16;
        let n = 10_000;
        let s = CountSketch::random(m, n, 99).unwrap();
        let mut counts = vec![0usize; m];
        for &b in &s.p {
            counts[b] += 1;
        }
        let mean = n as f64 / m as f64;
        let sd = (n as f64 * (1.0 / m as f64) * (1.0 - 1.0 / m as f64)).sqrt();
        for (b, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - mean).abs() <= 5.0 * sd,
                "bucket {b} count {c} outside 5 sigma of {mean}"
            );
        }
    }

    #[test]
    fn rejects_zero_dims() {
        assert!(CountSketch::random(0, 5, 1).is_err());
        assert!(CountSketch::random(5, 0, 1).is_err());
    }

    #[test]
    fn apply_identity_pattern() {
        let s = CountSketch::new(2, vec![0, 1], vec![1.0, 1.0]).unwrap();
        let out = s.apply_left(&Matrix::identity(2)).unwrap();
        assert_eq!(out, Matrix::identity(2));
    }

    #[test]
    fn apply_signed_collision() {
        let s = CountSketch::new(1, vec![0, 0], vec![1.0, -1.0]).unwrap();
        let a = Matrix::from_rows(&[vec![3.0, 1.0], vec![1.0, 4.0]]).unwrap();
        let out = s.apply_left(&a).unwrap();
        assert_eq!(out, Matrix::from_rows(&[vec![2.0, -3.0]]).unwrap());
    }

    #[test]
    fn apply_matches_dense_multiply() {
        let s = CountSketch::random(8, 32, 5).unwrap();
        let a = random_matrix(32, 5, 6);
        let fast = s.apply_left(&a).unwrap();
        let slow = s.to_dense().matmul(&a);
        assert!(fast.sub(&slow).frobenius_norm() <= 1e-12);
    }

    #[test]
    fn apply_dimension_mismatch() {
        let s = CountSketch::random(4, 8, 1).unwrap();
        let a = Matrix::zeros(7, 2);
        assert!(s.apply_left(&a).is_err());
    }

    #[test]
    fn to_dense_direct_placement() {
        let s = CountSketch::new(2, vec![0, 1, 0], vec![1.0, -1.0, 2.0]).unwrap();
        let want = Matrix::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.0, -1.0, 0.0]]).unwrap();
        assert_eq!(s.to_dense(), want);
    }

    #[test]
    fn concat_duplicates_row_blocks() {
        let s = CountSketch::random(3, 6, 11).unwrap();
        let dense = s.to_dense();
        let cat = concat_vertical(Sketch::Count(s.clone()), Sketch::Count(s)).unwrap();
        assert_eq!(cat.to_dense(), dense.vstack(&dense));
    }

    #[test]
    fn concat_apply_is_stacked_apply() {
        for seed in 0..5 {
            let s1 = CountSketch::random(3, 12, 20 + seed).unwrap();
            let s2 = CountSketch::random(4, 12, 40 + seed).unwrap();
            let a = random_matrix(12, 3, 60 + seed);
            let stacked = s1.apply_left(&a).unwrap().vstack(&s2.apply_left(&a).unwrap());
            let cat = concat_vertical(Sketch::Count(s1), Sketch::Count(s2)).unwrap();
            let got = cat.apply_left(&a).unwrap();
            assert!(got.sub(&stacked).frobenius_norm() <= 1e-12);
        }
    }

    #[test]
    fn concat_rejects_mismatched_n() {
        let s1 = CountSketch::random(3, 12, 1).unwrap();
        let s2 = CountSketch::random(3, 11, 2).unwrap();
        assert!(concat_vertical(Sketch::Count(s1), Sketch::Count(s2)).is_err());
    }

    #[test]
    fn heavy_all_indices_degenerate() {
        let all: Vec<usize> = (0..4).collect();
        let s = heavy_row_sketch(&all, 1, 4, 9).unwrap();
        assert_eq!(s.rows(), 5);
        let dense = s.to_dense();
        // First four rows are the identity; the tail row is empty.
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(dense.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
        assert!(dense.row(4).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn heavy_empty_is_plain_countsketch() {
        let s = heavy_row_sketch(&[], 3, 6, 15).unwrap();
        assert_eq!(s.rows(), 3);
        assert_eq!(s.to_dense(), s.tail.to_dense());
    }

    #[test]
    fn heavy_block_structure() {
        let s = heavy_row_sketch(&[0, 2], 2, 4, 31).unwrap();
        let dense = s.to_dense();
        assert_eq!(dense.rows(), 4);
        // Columns 0 and 2 are one-hot into the identity block.
        assert_eq!(dense.get(0, 0), 1.0);
        assert_eq!(dense.get(1, 2), 1.0);
        for i in 2..4 {
            assert_eq!(dense.get(i, 0), 0.0);
            assert_eq!(dense.get(i, 2), 0.0);
        }
        // Columns 1 and 3 hash into the tail block only.
        for col in [1usize, 3] {
            assert_eq!(dense.get(0, col), 0.0);
            assert_eq!(dense.get(1, col), 0.0);
            let nnz = (2..4).filter(|&i| dense.get(i, col) != 0.0).count();
            assert_eq!(nnz, 1);
        }
    }

    #[test]
    fn heavy_rejects_out_of_range() {
        assert!(heavy_row_sketch(&[5], 2, 4, 1).is_err());
    }

    #[test]
    fn gaussian_preserves_norms_on_average() {
        let m = 20;
        let n = 30;
        let mut rng = rng_from_seed(123);
        let x = Matrix::from_fn(n, 1, |_, _| rng.sample(StandardNormal));
        let x_sq = x.frobenius_norm_sq();
        let mut mean = 0.0;
        let trials = 200;
        for seed in 0..trials {
            let s = gaussian_sketch(m, n, seed).unwrap();
            mean += s.matrix.matmul(&x).frobenius_norm_sq();
        }
        mean /= trials as f64;
        assert!((mean - x_sq).abs() <= 0.10 * x_sq, "mean {mean} vs {x_sq}");
    }

    #[test]
    fn sjlt_column_structure() {
        let s = sjlt(4, 6, 2, 77).unwrap();
        for col in 0..6 {
            for block in 0..2 {
                let nnz = (0..2).filter(|&i| s.matrix.get(block * 2 + i, col) != 0.0).count();
                assert_eq!(nnz, 1, "column {col} block {block}");
            }
        }
        assert!(sjlt(5, 6, 2, 1).is_err());
    }

    #[test]
    fn sjlt_single_block_is_countsketch_shaped() {
        let s = sjlt(4, 9, 1, 3).unwrap();
        for col in 0..9 {
            let nnz = (0..4).filter(|&i| s.matrix.get(i, col) != 0.0).count();
            assert_eq!(nnz, 1);
        }
    }

    #[test]
    fn frobenius_concentration() {
        // m = 100 buckets, A 400 x 10: over 100 sketch seeds at least 90%
        // land within relative deviation 0.5 of ||A||_F^2.
        let a = random_matrix(400, 10, 2024);
        let target = a.frobenius_norm_sq();
        let mut good = 0;
        for seed in 0..100 {
            let s = CountSketch::random(100, 400, seed).unwrap();
            let sq = s.apply_left(&a).unwrap().frobenius_norm_sq();
            if (sq - target).abs() <= 0.5 * target {
                good += 1;
            }
        }
        assert!(good >= 90, "only {good}/100 within 0.5 relative deviation");
    }

    proptest! {
        #[test]
        fn one_nonzero_per_column(seed in 0u64..1000, m in 1usize..8, n in 1usize..20) {
            let s = CountSketch::random(m, n, seed).unwrap();
            let dense = s.to_dense();
            for col in 0..n {
                let nnz = (0..m).filter(|&i| dense.get(i, col) != 0.0).count();
                prop_assert_eq!(nnz, 1);
            }
        }

        #[test]
        fn structured_one_nonzero_per_column(seed in 0u64..500, n in 2usize..16) {
            let heavy: Vec<usize> = (0..n).step_by(3).collect();
            if heavy.len() < n {
                let s = heavy_row_sketch(&heavy, 2, n, seed).unwrap();
                let dense = s.to_dense();
                for col in 0..n {
                    let nnz = (0..dense.rows()).filter(|&i| dense.get(i, col) != 0.0).count();
                    prop_assert_eq!(nnz, 1);
                }
            }
        }
    }
}
