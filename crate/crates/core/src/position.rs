//! Learning the non-zero *positions* of a CountSketch: greedy search,
//! ridge-leverage inner-product bucketing, and heavy-row identification.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigh, leverage_scores, ridge_leverage_scores, svd, RANK_TOL_FACTOR};
use crate::matrix::{vec_dot, vec_norm, Matrix};
use crate::rng::{rng_for_stream, rng_from_seed};
use crate::sketch::{CountSketch, Sketch};

/// Ordered list of same-shape matrices with a train/test split.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    matrices: Vec<Matrix>,
    train: Vec<usize>,
    test: Vec<usize>,
}

impl TrainingSet {
    pub fn new(matrices: Vec<Matrix>, train: Vec<usize>, test: Vec<usize>) -> Result<Self> {
        if matrices.is_empty() {
            return Err(Error::invalid("TrainingSet: no matrices"));
        }
        let (n, d) = (matrices[0].rows(), matrices[0].cols());
        if matrices.iter().any(|m| m.rows() != n || m.cols() != d) {
            return Err(Error::dims("TrainingSet: matrices must share one shape"));
        }
        let count = matrices.len();
        for &i in train.iter().chain(&test) {
            if i >= count {
                return Err(Error::invalid(format!("TrainingSet: split index {i} out of range")));
            }
        }
        if train.iter().any(|i| test.contains(i)) {
            return Err(Error::invalid("TrainingSet: train/test splits overlap"));
        }
        if train.is_empty() {
            return Err(Error::invalid("TrainingSet: empty train split"));
        }
        Ok(TrainingSet { matrices, train, test })
    }

    /// Everything in the train split, no held-out matrices.
    pub fn all_train(matrices: Vec<Matrix>) -> Result<Self> {
        let train = (0..matrices.len()).collect();
        TrainingSet::new(matrices, train, Vec::new())
    }

    pub fn rows(&self) -> usize {
        self.matrices[0].rows()
    }

    pub fn cols(&self) -> usize {
        self.matrices[0].cols()
    }

    pub fn matrices(&self) -> &[Matrix] {
        &self.matrices
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train
    }

    pub fn test_indices(&self) -> &[usize] {
        &self.test
    }

    pub fn train_matrices(&self) -> impl Iterator<Item = &Matrix> {
        self.train.iter().map(|&i| &self.matrices[i])
    }

    pub fn test_matrices(&self) -> impl Iterator<Item = &Matrix> {
        self.test.iter().map(|&i| &self.matrices[i])
    }

    /// Entrywise average of the train split, the input the inner-product
    /// position learner consumes.
    pub fn train_average(&self) -> Matrix {
        let mut acc = Matrix::zeros(self.rows(), self.cols());
        for m in self.train_matrices() {
            acc = acc.add(m);
        }
        acc.scale(1.0 / self.train.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Greedy,
    InnerProduct,
    HeavyRows,
    Classical,
}

/// A learned sparsity pattern: bucket per row plus a sign, convertible into
/// a CountSketch whose values may be optimized afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionPlan {
    pub m: usize,
    pub p: Vec<usize>,
    pub signs: Vec<f64>,
    pub provenance: Provenance,
}

impl PositionPlan {
    pub fn new(m: usize, p: Vec<usize>, signs: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if p.len() != signs.len() {
            return Err(Error::dims("PositionPlan: p and signs lengths differ"));
        }
        if let Some(&bad) = p.iter().find(|&&b| b >= m) {
            return Err(Error::invalid(format!("PositionPlan: bucket {bad} out of range [0, {m})")));
        }
        if signs.iter().any(|&s| s != 1.0 && s != -1.0) {
            return Err(Error::invalid("PositionPlan: signs must be +1 or -1"));
        }
        Ok(PositionPlan { m, p, signs, provenance })
    }

    pub fn n(&self) -> usize {
        self.p.len()
    }

    pub fn to_countsketch(&self) -> CountSketch {
        CountSketch {
            m: self.m,
            n: self.p.len(),
            p: self.p.clone(),
            v: self.signs.clone(),
        }
    }

    /// Random classical pattern wrapped as a plan.
    pub fn classical(m: usize, n: usize, seed: u64) -> Result<Self> {
        let cs = CountSketch::random(m, n, seed)?;
        PositionPlan::new(m, cs.p, cs.v, Provenance::Classical)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnOrder {
    /// Process rows in their natural order.
    Given,
    /// Non-increasing row norm of the training-average matrix; the analysis
    /// of the greedy algorithm assumes this order.
    NonincreasingNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GreedyObjective {
    /// Closed-form best-rank-k error within row(SA); the default.
    Proxy,
    /// The same quantity evaluated through the full two-sided algorithm
    /// with identity companion sketches; slow, for validation.
    Exact,
}

#[derive(Debug, Clone)]
pub struct GreedyOutcome {
    pub plan: PositionPlan,
    /// Summed objective over the train split after each committed column,
    /// in processing order.
    pub objective_trace: Vec<f64>,
}

/// Incremental per-matrix state for the greedy proxy: with B = SA,
/// maintains `abt = A B^T` and `bbt = B B^T` so a candidate evaluation
/// never touches the d-sized dimension.
struct GreedyState {
    aat: Matrix,
    abt: Matrix,
    bbt: Matrix,
    total_sq: f64,
    inner_dim: usize,
}

impl GreedyState {
    fn new(a: &Matrix, m: usize) -> Self {
        GreedyState {
            aat: a.matmul(&a.transpose()),
            abt: Matrix::zeros(a.rows(), m),
            bbt: Matrix::zeros(m, m),
            total_sq: a.frobenius_norm_sq(),
            inner_dim: a.cols().max(m),
        }
    }

    /// Proxy objective if row `i` were hashed to bucket `j` with sign `s`.
    fn candidate_proxy(&self, i: usize, j: usize, s: f64, k: usize) -> f64 {
        let m = self.bbt.rows();
        let n = self.abt.rows();
        let mut bbt_c = self.bbt.clone();
        for l in 0..m {
            if l == j {
                continue;
            }
            let delta = s * self.abt.get(i, l);
            bbt_c.set(j, l, bbt_c.get(j, l) + delta);
            bbt_c.set(l, j, bbt_c.get(l, j) + delta);
        }
        let jj = self.bbt.get(j, j) + 2.0 * s * self.abt.get(i, j) + self.aat.get(i, i);
        bbt_c.set(j, j, jj);

        let (lambda, u) = eigh(&bbt_c).expect("eigh on PSD Gram");
        let sigma_max = lambda[0].max(0.0).sqrt();
        if sigma_max == 0.0 {
            return self.total_sq;
        }
        let tol = self.inner_dim as f64 * sigma_max * RANK_TOL_FACTOR;
        let sigma: Vec<f64> = lambda
            .iter()
            .map(|l| l.max(0.0).sqrt())
            .take_while(|&x| x > tol)
            .collect();
        let r = sigma.len();
        if r == 0 {
            return self.total_sq;
        }
        // M = A B_c^T U_r diag(1/sigma) = A V, with the column-j adjustment
        // folding in the candidate row.
        let mut mtx = Matrix::zeros(n, r);
        for x in 0..n {
            let abt_row = self.abt.row(x);
            let adj = s * self.aat.get(x, i);
            for (t, &sg) in sigma.iter().enumerate() {
                let mut acc = 0.0;
                for (l, &ab) in abt_row.iter().enumerate() {
                    acc += ab * u.get(l, t);
                }
                acc += adj * u.get(j, t);
                mtx.set(x, t, acc / sg);
            }
        }
        let gram = mtx.gram();
        let (mu, _) = eigh(&gram).expect("eigh on PSD Gram");
        let captured: f64 = mu.iter().take(k).map(|x| x.max(0.0)).sum();
        (self.total_sq - captured).max(0.0)
    }

    fn commit(&mut self, i: usize, j: usize, s: f64) {
        let m = self.bbt.rows();
        let n = self.abt.rows();
        for l in 0..m {
            if l == j {
                continue;
            }
            let delta = s * self.abt.get(i, l);
            self.bbt.set(j, l, self.bbt.get(j, l) + delta);
            self.bbt.set(l, j, self.bbt.get(l, j) + delta);
        }
        let jj = self.bbt.get(j, j) + 2.0 * s * self.abt.get(i, j) + self.aat.get(i, i);
        self.bbt.set(j, j, jj);
        for x in 0..n {
            let delta = s * self.aat.get(x, i);
            self.abt.set(x, j, self.abt.get(x, j) + delta);
        }
    }
}

/// Greedy position search: iterate rows in the chosen order; for each,
/// evaluate all `m` buckets and both signs against the summed objective
/// over the train split and commit the argmin. Ties break toward the
/// lowest bucket index, then the +1 sign.
pub fn greedy_positions(
    tr: &TrainingSet,
    m: usize,
    k: usize,
    order: ColumnOrder,
    objective: GreedyObjective,
) -> Result<GreedyOutcome> {
    if m == 0 {
        return Err(Error::invalid("greedy_positions: m must be >= 1"));
    }
    if k == 0 {
        return Err(Error::invalid("greedy_positions: k must be >= 1"));
    }
    let n = tr.rows();
    let d = tr.cols();

    let order_idx: Vec<usize> = match order {
        ColumnOrder::Given => (0..n).collect(),
        ColumnOrder::NonincreasingNorm => {
            let avg = tr.train_average();
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| {
                avg.row_norm(b)
                    .partial_cmp(&avg.row_norm(a))
                    .unwrap()
                    .then(a.cmp(&b))
            });
            idx
        }
    };

    let mut p = vec![0usize; n];
    let mut signs = vec![1.0f64; n];
    let mut trace = Vec::with_capacity(n);

    match objective {
        GreedyObjective::Proxy => {
            let mut states: Vec<GreedyState> =
                tr.train_matrices().map(|a| GreedyState::new(a, m)).collect();
            for &i in &order_idx {
                let mut best = f64::INFINITY;
                let mut best_choice = (0usize, 1.0f64);
                for j in 0..m {
                    for s in [1.0f64, -1.0] {
                        let score: f64 =
                            states.iter().map(|st| st.candidate_proxy(i, j, s, k)).sum();
                        if score < best {
                            best = score;
                            best_choice = (j, s);
                        }
                    }
                }
                let (j, s) = best_choice;
                p[i] = j;
                signs[i] = s;
                for st in states.iter_mut() {
                    st.commit(i, j, s);
                }
                trace.push(best);
            }
        }
        GreedyObjective::Exact => {
            // Partial sketch: unprocessed rows carry value zero.
            let mut values = vec![0.0f64; n];
            for &i in &order_idx {
                let mut best = f64::INFINITY;
                let mut best_choice = (0usize, 1.0f64);
                for j in 0..m {
                    for s in [1.0f64, -1.0] {
                        let mut p_c = p.clone();
                        let mut v_c = values.clone();
                        p_c[i] = j;
                        v_c[i] = s;
                        let cs = CountSketch::new(m, p_c, v_c)?;
                        let sk = Sketch::Count(cs);
                        let mut score = 0.0;
                        for a in tr.train_matrices() {
                            let set = crate::lra::SketchSet::exact_eval(
                                sk.clone(),
                                Sketch::identity(d),
                                n,
                                d,
                            );
                            score += match crate::lra::lra_two_sided(&set, a, k) {
                                Ok(res) => res.error,
                                Err(Error::RankDeficient { .. }) => a.frobenius_norm_sq(),
                                Err(e) => return Err(e),
                            };
                        }
                        if score < best {
                            best = score;
                            best_choice = (j, s);
                        }
                    }
                }
                let (j, s) = best_choice;
                p[i] = j;
                signs[i] = s;
                values[i] = s;
                trace.push(best);
            }
        }
    }

    Ok(GreedyOutcome {
        plan: PositionPlan::new(m, p, signs, Provenance::Greedy)?,
        objective_trace: trace,
    })
}

/// Output of the inner-product position learner: S1 buckets every row next
/// to its most similar sampled row and carries per-bucket
/// top-singular-vector values; S2 samples the reference rows for the
/// worst-case guarantee.
#[derive(Debug, Clone)]
pub struct InnerProductPlan {
    pub s1: CountSketch,
    pub s2: CountSketch,
    /// Row indices sampled by ridge leverage scores, in draw order.
    pub sampled: Vec<usize>,
    /// Bucket assignment per row, before values overwrite signs.
    pub bucket_of_row: Vec<usize>,
    /// Sign chosen in the argmax, per row.
    pub bucket_sign: Vec<f64>,
    /// Rows of zero norm, parked in bucket 0 with value 0.
    pub zero_rows: Vec<usize>,
}

impl InnerProductPlan {
    pub fn position_plan(&self) -> Result<PositionPlan> {
        PositionPlan::new(
            self.s1.m,
            self.bucket_of_row.clone(),
            self.bucket_sign.clone(),
            Provenance::InnerProduct,
        )
    }
}

/// Ridge-leverage sampling plus maximum-inner-product bucketing on the
/// training average; per-bucket values are the top left singular vector of
/// the bucket's rows.
pub fn inner_product_positions(
    a_bar: &Matrix,
    m: usize,
    k: usize,
    seed: u64,
) -> Result<InnerProductPlan> {
    let n = a_bar.rows();
    if m == 0 || m > n {
        return Err(Error::invalid(format!(
            "inner_product_positions: need 1 <= m <= {n}, got {m}"
        )));
    }
    if a_bar.is_zero() {
        return Err(Error::invalid("inner_product_positions: zero training average"));
    }
    let ridge = ridge_leverage_scores(a_bar, k)?;
    let total: f64 = ridge.scores.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("inner_product_positions: degenerate leverage scores"));
    }
    let cumulative: Vec<f64> = ridge
        .scores
        .iter()
        .scan(0.0, |acc, s| {
            *acc += s / total;
            Some(*acc)
        })
        .collect();

    let mut rng = rng_from_seed(seed);
    let mut sampled = Vec::with_capacity(m);
    for _ in 0..m {
        let u: f64 = rng.random();
        let idx = cumulative.partition_point(|&c| c <= u).min(n - 1);
        sampled.push(idx);
    }

    // Normalized reference rows; sampled rows have nonzero scores, hence
    // nonzero norms.
    let refs: Vec<Vec<f64>> = sampled
        .iter()
        .map(|&c| {
            let row = a_bar.row(c);
            let norm = vec_norm(row);
            row.iter().map(|x| x / norm).collect()
        })
        .collect();

    let mut bucket_of_row = vec![0usize; n];
    let mut bucket_sign = vec![1.0f64; n];
    let mut zero_rows = Vec::new();
    for i in 0..n {
        let row = a_bar.row(i);
        let norm = vec_norm(row);
        if norm == 0.0 {
            zero_rows.push(i);
            continue;
        }
        let mut best = f64::NEG_INFINITY;
        let mut best_bucket = 0usize;
        let mut best_sign = 1.0f64;
        for (bucket, r) in refs.iter().enumerate() {
            let cos = vec_dot(r, row) / norm;
            for sign in [1.0f64, -1.0] {
                let score = sign * cos;
                if score > best {
                    best = score;
                    best_bucket = bucket;
                    best_sign = sign;
                }
            }
        }
        bucket_of_row[i] = best_bucket;
        bucket_sign[i] = best_sign;
    }

    // Per-bucket values: top left singular vector of the bucket's rows,
    // sign-canonicalized so the largest-magnitude entry is positive.
    let mut values = vec![0.0f64; n];
    for bucket in 0..m {
        let members: Vec<usize> = (0..n)
            .filter(|&i| bucket_of_row[i] == bucket && !zero_rows.contains(&i))
            .collect();
        if members.is_empty() {
            continue;
        }
        let block = a_bar.select_rows(&members);
        if block.is_zero() {
            continue;
        }
        let f = svd(&block)?;
        let mut u0: Vec<f64> = (0..members.len()).map(|i| f.u.get(i, 0)).collect();
        let lead = u0
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap().then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap();
        if u0[lead] < 0.0 {
            for x in u0.iter_mut() {
                *x = -*x;
            }
        }
        for (slot, &row) in members.iter().enumerate() {
            values[row] = u0[slot];
        }
    }
    let s1 = CountSketch::new(m, bucket_of_row.clone(), values)?;

    // One-hot sampler of the reference rows; duplicate samples collapse.
    let mut p2 = vec![0usize; n];
    let mut v2 = vec![0.0f64; n];
    for (t, &c) in sampled.iter().enumerate() {
        if v2[c] == 0.0 {
            p2[c] = t;
            v2[c] = 1.0;
        }
    }
    let s2 = CountSketch::new(m, p2, v2)?;

    Ok(InnerProductPlan { s1, s2, sampled, bucket_of_row, bucket_sign, zero_rows })
}

/// Count how often each row's leverage score exceeds
/// `threshold_mult * d / n` across the train split and return the `budget`
/// most frequently heavy indices (ties toward lower index), sorted.
pub fn learn_heavy_row_indices(
    tr: &TrainingSet,
    threshold_mult: f64,
    budget: usize,
) -> Result<Vec<usize>> {
    let n = tr.rows();
    if budget > n {
        return Err(Error::invalid(format!(
            "learn_heavy_row_indices: budget {budget} exceeds {n} rows"
        )));
    }
    if budget == 0 {
        return Ok(Vec::new());
    }
    let threshold = threshold_mult * tr.cols() as f64 / n as f64;
    let mut counts = vec![0usize; n];
    for a in tr.train_matrices() {
        let tau = leverage_scores(a)?;
        for (c, t) in counts.iter_mut().zip(&tau) {
            if *t >= threshold {
                *c += 1;
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = idx.into_iter().take(budget).collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Heavy-row position plan: rows in `heavy` get dedicated buckets
/// `0..|heavy|`; the rest hash uniformly into the remaining buckets with
/// random signs.
pub fn heavy_row_plan(heavy: &[usize], m: usize, n: usize, seed: u64) -> Result<PositionPlan> {
    let mut sorted = heavy.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != heavy.len() {
        return Err(Error::invalid("heavy_row_plan: duplicate heavy indices"));
    }
    if let Some(&bad) = sorted.iter().find(|&&i| i >= n) {
        return Err(Error::invalid(format!("heavy_row_plan: index {bad} out of range")));
    }
    if sorted.len() >= m {
        return Err(Error::invalid(format!(
            "heavy_row_plan: {} heavy rows leave no tail buckets out of m={m}",
            sorted.len()
        )));
    }
    let tail_start = sorted.len();
    let mut rng = rng_from_seed(seed);
    let mut p = vec![0usize; n];
    let mut signs = vec![1.0f64; n];
    for i in 0..n {
        match sorted.binary_search(&i) {
            Ok(pos) => {
                p[i] = pos;
                signs[i] = 1.0;
            }
            Err(_) => {
                p[i] = rng.random_range(tail_start..m);
                signs[i] = if rng.random_range(0..2u8) == 0 { 1.0 } else { -1.0 };
            }
        }
    }
    PositionPlan::new(m, p, signs, Provenance::HeavyRows)
}

/// Locality-sensitive matching of reference heavy rows against the rows of
/// a (possibly permuted) test matrix: project both through `q` shared
/// Gaussian directions and take nearest neighbors in the projected space.
pub fn lsh_heavy_row_match(
    reference_rows: &Matrix,
    a_test: &Matrix,
    q: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if reference_rows.cols() != a_test.cols() {
        return Err(Error::dims(format!(
            "lsh_heavy_row_match: column counts {} and {} differ",
            reference_rows.cols(),
            a_test.cols()
        )));
    }
    if q == 0 {
        return Err(Error::invalid("lsh_heavy_row_match: q must be >= 1"));
    }
    let d = reference_rows.cols();
    let mut rng = rng_for_stream(seed, 0x15_48);
    let gs: Vec<Vec<f64>> = (0..q)
        .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let project = |row: &[f64]| -> Vec<f64> { gs.iter().map(|g| vec_dot(g, row)).collect() };

    let test_proj: Vec<Vec<f64>> = (0..a_test.rows()).map(|j| project(a_test.row(j))).collect();
    let mut matches = Vec::with_capacity(reference_rows.rows());
    for i in 0..reference_rows.rows() {
        let fr = project(reference_rows.row(i));
        let mut best = f64::INFINITY;
        let mut best_j = 0usize;
        for (j, ft) in test_proj.iter().enumerate() {
            let dist: f64 = fr.iter().zip(ft).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist < best {
                best = dist;
                best_j = j;
            }
        }
        matches.push(best_j);
    }
    Ok(matches)
}
