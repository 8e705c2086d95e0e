//! DTW and SoftDTW over scalar signals and descriptor sequences.
//!
//! The dynamic program always stores one scalar per `(i, j)` cell; the
//! descriptor dimension only enters through the local cost. Every DP buffer
//! is registered with a per-thread counter (see [`dp_scalars_allocated`]) so
//! tests can check that invariant directly.

mod knn;
mod sparse;

use std::cell::Cell;

pub use knn::{knn_classify, prepare_tokens, Distance, KnnConfig, KnnResult, TokenMode, Tokens};
pub use sparse::{align_keypoints, align_sparse, dense_map_from_pairs, SparseAlignment};

use crate::timepoint::DescriptorMatrix;
use crate::{Error, Result};

thread_local! {
    static DP_SCALARS: Cell<usize> = const { Cell::new(0) };
}

fn count_dp(n: usize) {
    DP_SCALARS.with(|c| c.set(c.get() + n));
}

/// DP scalars allocated on this thread since the last reset.
pub fn dp_scalars_allocated() -> usize {
    DP_SCALARS.with(Cell::get)
}

pub fn reset_dp_accounting() {
    DP_SCALARS.with(|c| c.set(0));
}

fn dp_buffer(n: usize, fill: f64) -> Vec<f64> {
    count_dp(n);
    vec![fill; n]
}

/// A sequence to align: scalar samples or descriptor rows.
#[derive(Debug, Clone, Copy)]
pub enum Seq<'a> {
    Scalar(&'a [f64]),
    Vectors(&'a DescriptorMatrix),
}

impl Seq<'_> {
    pub fn len(&self) -> usize {
        match self {
            Seq::Scalar(x) => x.len(),
            Seq::Vectors(d) => d.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Local cost between two sequence elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CostFn {
    /// `|a - b|` on scalars.
    EuclideanScalar,
    /// `1 - cos(u, v)` on vectors; a zero vector has cosine 0 with anything.
    #[default]
    Cosine,
    /// `||u - v||` on vectors.
    DescriptorEuclidean,
}

impl CostFn {
    pub fn name(self) -> &'static str {
        match self {
            CostFn::EuclideanScalar => "euclidean-scalar",
            CostFn::Cosine => "cosine",
            CostFn::DescriptorEuclidean => "euclidean",
        }
    }

    fn check(self, a: &Seq, b: &Seq) -> Result<()> {
        let ok = match (self, a, b) {
            (CostFn::EuclideanScalar, Seq::Scalar(_), Seq::Scalar(_)) => true,
            (CostFn::Cosine | CostFn::DescriptorEuclidean, Seq::Vectors(u), Seq::Vectors(v)) => {
                u.dim() == v.dim()
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "cost {} does not fit these sequences",
                self.name()
            )))
        }
    }

    /// Cost between element `i` of `a` and `j` of `b`.
    pub fn eval(self, a: &Seq, i: usize, b: &Seq, j: usize) -> f64 {
        match (a, b) {
            (Seq::Scalar(x), Seq::Scalar(y)) => (x[i] - y[j]).abs(),
            (Seq::Vectors(u), Seq::Vectors(v)) => vector_cost(self, u.row(i), v.row(j)),
            _ => unreachable!("checked by CostFn::check"),
        }
    }
}

fn vector_cost(cost: CostFn, u: &[f32], v: &[f32]) -> f64 {
    match cost {
        CostFn::DescriptorEuclidean => u
            .iter()
            .zip(v)
            .map(|(&p, &q)| (p as f64 - q as f64).powi(2))
            .sum::<f64>()
            .sqrt(),
        _ => {
            let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
            for (&p, &q) in u.iter().zip(v) {
                let (p, q) = (p as f64, q as f64);
                dot += p * q;
                nu += p * p;
                nv += q * q;
            }
            let denom = (nu * nv).sqrt();
            let cos = if denom > 0.0 { dot / denom } else { 0.0 };
            1.0 - cos
        }
    }
}

/// Monotone, contiguous index path from `(0, 0)` to `(n-1, m-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpingPath {
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl WarpingPath {
    /// Checks the boundary and step conditions.
    pub fn is_valid(&self, n: usize, m: usize) -> bool {
        let (Some(&first), Some(&last)) = (self.pairs.first(), self.pairs.last()) else {
            return false;
        };
        first == (0, 0)
            && last == (n - 1, m - 1)
            && self.pairs.windows(2).all(|w| {
                let (di, dj) = (w[1].0 as isize - w[0].0 as isize, w[1].1 as isize - w[0].1 as isize);
                matches!((di, dj), (1, 0) | (0, 1) | (1, 1))
            })
    }

    /// Sum of local costs along the path.
    pub fn recompute_cost(&self, a: &Seq, b: &Seq, cost: CostFn) -> f64 {
        self.pairs.iter().map(|&(i, j)| cost.eval(a, i, b, j)).sum()
    }
}

fn check_inputs(a: &Seq, b: &Seq, cost: CostFn) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("DTW input sequence"));
    }
    cost.check(a, b)
}

/// Full DTW with path backtracking. Ties prefer the diagonal, then `(i-1, j)`,
/// then `(i, j-1)`.
pub fn dtw(a: Seq, b: Seq, cost: CostFn) -> Result<WarpingPath> {
    check_inputs(&a, &b, cost)?;
    Ok(dtw_with(a.len(), b.len(), |i, j| cost.eval(&a, i, &b, j)))
}

/// Full DTW on a precomputed row-major `n x m` cost matrix.
pub fn dtw_matrix(costs: &[f64], n: usize, m: usize) -> Result<WarpingPath> {
    if n == 0 || m == 0 || costs.len() != n * m {
        return Err(Error::Shape(format!("cost matrix of {} for {n} x {m}", costs.len())));
    }
    Ok(dtw_with(n, m, |i, j| costs[i * m + j]))
}

fn dtw_with(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> WarpingPath {
    let mut d = dp_buffer(n * m, f64::INFINITY);
    for i in 0..n {
        for j in 0..m {
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { d[(i - 1) * m + j - 1] } else { f64::INFINITY };
                let up = if i > 0 { d[(i - 1) * m + j] } else { f64::INFINITY };
                let left = if j > 0 { d[i * m + j - 1] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            d[i * m + j] = cost(i, j) + best;
        }
    }
    let mut pairs = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while (i, j) != (0, 0) {
        (i, j) = if i == 0 {
            (0, j - 1)
        } else if j == 0 {
            (i - 1, 0)
        } else {
            let diag = d[(i - 1) * m + j - 1];
            let up = d[(i - 1) * m + j];
            let left = d[i * m + j - 1];
            if diag <= up && diag <= left {
                (i - 1, j - 1)
            } else if up <= left {
                (i - 1, j)
            } else {
                (i, j - 1)
            }
        };
        pairs.push((i, j));
    }
    pairs.reverse();
    WarpingPath {
        pairs,
        total_cost: d[n * m - 1],
    }
}

/// DTW cost only, keeping two DP rows.
pub fn dtw_cost(a: Seq, b: Seq, cost: CostFn) -> Result<f64> {
    check_inputs(&a, &b, cost)?;
    Ok(match (a, b, cost) {
        (Seq::Scalar(x), Seq::Scalar(y), _) => dtw_cost_scalar(x, y),
        _ => dtw_cost_with(a.len(), b.len(), |i, j| cost.eval(&a, i, &b, j)),
    })
}

/// Two-row DTW cost on a row-major `n x m` cost matrix.
pub fn dtw_cost_matrix(costs: &[f64], n: usize, m: usize) -> f64 {
    dtw_cost_with(n, m, |i, j| costs[i * m + j])
}

#[inline]
pub(crate) fn dtw_cost_with(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> f64 {
    let mut rows = dp_buffer(2 * m, 0.0);
    let (mut prev, mut curr) = rows.split_at_mut(m);
    prev[0] = cost(0, 0);
    for j in 1..m {
        prev[j] = prev[j - 1] + cost(0, j);
    }
    for i in 1..n {
        curr[0] = prev[0] + cost(i, 0);
        for j in 1..m {
            curr[j] = cost(i, j) + prev[j - 1].min(prev[j]).min(curr[j - 1]);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[m - 1]
}

/// Scalar fast path with the boundary cases peeled out of the inner loop.
fn dtw_cost_scalar(x: &[f64], y: &[f64]) -> f64 {
    let m = y.len();
    let mut rows = dp_buffer(2 * m, 0.0);
    let (mut prev, mut curr) = rows.split_at_mut(m);
    prev[0] = (x[0] - y[0]).abs();
    for j in 1..m {
        prev[j] = prev[j - 1] + (x[0] - y[j]).abs();
    }
    for &xi in &x[1..] {
        curr[0] = prev[0] + (xi - y[0]).abs();
        for j in 1..m {
            let best = prev[j - 1].min(prev[j]).min(curr[j - 1]);
            curr[j] = best + (xi - y[j]).abs();
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[m - 1]
}

/// Enumerates every monotone contiguous path; for `n * m <= 64` only.
pub fn dtw_brute_force(a: Seq, b: Seq, cost: CostFn) -> Result<WarpingPath> {
    check_inputs(&a, &b, cost)?;
    let (n, m) = (a.len(), b.len());
    if n * m > 64 {
        return Err(Error::InvalidArgument(format!(
            "brute force limited to 64 cells, got {n} x {m}"
        )));
    }
    struct Search<'s> {
        cost: &'s dyn Fn(usize, usize) -> f64,
        n: usize,
        m: usize,
        path: Vec<(usize, usize)>,
        best: Option<WarpingPath>,
    }
    fn walk(s: &mut Search, i: usize, j: usize, acc: f64) {
        let acc = acc + (s.cost)(i, j);
        s.path.push((i, j));
        if (i, j) == (s.n - 1, s.m - 1) {
            if s.best.as_ref().is_none_or(|b| acc < b.total_cost) {
                s.best = Some(WarpingPath {
                    pairs: s.path.clone(),
                    total_cost: acc,
                });
            }
        } else {
            if i + 1 < s.n && j + 1 < s.m {
                walk(s, i + 1, j + 1, acc);
            }
            if i + 1 < s.n {
                walk(s, i + 1, j, acc);
            }
            if j + 1 < s.m {
                walk(s, i, j + 1, acc);
            }
        }
        s.path.pop();
    }
    let local = |i: usize, j: usize| cost.eval(&a, i, &b, j);
    let mut search = Search {
        cost: &local,
        n,
        m,
        path: Vec::new(),
        best: None,
    };
    walk(&mut search, 0, 0, 0.0);
    Ok(search.best.expect("at least one path"))
}

/// `-gamma * ln(sum exp(-x / gamma))`, shifted by the minimum for stability.
/// Infinite entries contribute nothing.
pub fn softmin(values: &[f64], gamma: f64) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    if !lo.is_finite() {
        return lo;
    }
    let sum: f64 = values
        .iter()
        .filter(|v| v.is_finite())
        .map(|&v| (-(v - lo) / gamma).exp())
        .sum();
    lo - gamma * sum.ln()
}

/// SoftDTW value with smoothing `gamma`.
pub fn soft_dtw(a: Seq, b: Seq, cost: CostFn, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    check_inputs(&a, &b, cost)?;
    Ok(soft_dtw_with(a.len(), b.len(), gamma, |i, j| cost.eval(&a, i, &b, j)))
}

/// SoftDTW on a row-major `n x m` cost matrix.
pub fn soft_dtw_matrix(costs: &[f64], n: usize, m: usize, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    Ok(soft_dtw_with(n, m, gamma, |i, j| costs[i * m + j]))
}

fn soft_dtw_with(n: usize, m: usize, gamma: f64, cost: impl Fn(usize, usize) -> f64) -> f64 {
    let mut rows = dp_buffer(2 * m, f64::INFINITY);
    let (mut prev, mut curr) = rows.split_at_mut(m);
    for i in 0..n {
        for j in 0..m {
            let r = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { prev[j - 1] } else { f64::INFINITY };
                let up = if i > 0 { prev[j] } else { f64::INFINITY };
                let left = if j > 0 { curr[j - 1] } else { f64::INFINITY };
                softmin(&[diag, up, left], gamma)
            };
            curr[j] = cost(i, j) + r;
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[m - 1]
}

/// Row-major `n x m` matrix of local costs between two sequences. Vector
/// costs go through a single `f32` matrix product.
pub fn cost_matrix(a: Seq, b: Seq, cost: CostFn) -> Result<Vec<f64>> {
    check_inputs(&a, &b, cost)?;
    let (n, m) = (a.len(), b.len());
    match (a, b) {
        (Seq::Vectors(u), Seq::Vectors(v)) => {
            let dim = u.dim();
            let (un, unorm) = normalized_rows(u);
            let (vn, vnorm) = normalized_rows(v);
            let mut dots = vec![0f32; n * m];
            f32_gemm_abt(n, m, dim, &un, &vn, &mut dots);
            Ok(match cost {
                CostFn::Cosine => dots.iter().map(|&c| 1.0 - c as f64).collect(),
                _ => (0..n * m)
                    .map(|k| {
                        let (i, j) = (k / m, k % m);
                        let (p, q) = (unorm[i], vnorm[j]);
                        (p * p + q * q - 2.0 * p * q * dots[k] as f64).max(0.0).sqrt()
                    })
                    .collect(),
            })
        }
        _ => Ok((0..n * m).map(|k| cost.eval(&a, k / m, &b, k % m)).collect()),
    }
}

/// Unit rows (zero rows stay zero) and the original norms.
pub(crate) fn normalized_rows(d: &DescriptorMatrix) -> (Vec<f32>, Vec<f64>) {
    let mut out = d.data().to_vec();
    let mut norms = Vec::with_capacity(d.rows());
    for row in out.chunks_mut(d.dim()) {
        let n = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v = (*v as f64 / n) as f32);
        }
        norms.push(n);
    }
    (out, norms)
}

/// `c = a . b^T` for row-major `a: n x k`, `b: m x k`.
pub(crate) fn f32_gemm_abt(n: usize, m: usize, k: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    use crate::tensornet::Real;
    f32::gemm(n, k, m, a, (k as isize, 1), b, (1, k as isize), 0.0, c, (m as isize, 1));
}
