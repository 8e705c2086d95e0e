use std::collections::BTreeMap;

use super::{dtw_cost_scalar, dtw_cost_with, f32_gemm_abt, normalized_rows, soft_dtw_with, CostFn};
use crate::par::Exec;
use crate::timepoint::{extract, DescriptorMatrix, ExtractOptions, TimePointModel};
use crate::{Error, Result, Signal};

/// What a signal is reduced to before the distance computation.
#[derive(Debug, Clone, PartialEq)]
pub enum Tokens {
    Scalars(Vec<f64>),
    Vectors(DescriptorMatrix),
}

impl Tokens {
    pub fn len(&self) -> usize {
        match self {
            Tokens::Scalars(x) => x.len(),
            Tokens::Vectors(d) => d.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenMode {
    /// The raw signal.
    Raw,
    /// Descriptor rows at the selected keypoints.
    Descriptors,
    /// Raw values at the selected keypoints.
    RawAtKeypoints,
}

const DETECT_CHUNK: usize = 8;

/// Runs detection once per signal (batched over equal-length runs) and
/// reduces each signal to its tokens.
pub fn prepare_tokens(
    signals: &[Signal],
    mode: TokenMode,
    model: Option<&TimePointModel>,
    opts: ExtractOptions,
    exec: Exec,
) -> Result<Vec<Tokens>> {
    if mode == TokenMode::Raw {
        return Ok(signals.iter().map(|s| Tokens::Scalars(s.clone())).collect());
    }
    let model = model.ok_or_else(|| Error::InvalidArgument("keypoint tokens need a model".into()))?;
    let mut chunks: Vec<Vec<usize>> = Vec::new();
    for (i, s) in signals.iter().enumerate() {
        match chunks.last_mut() {
            Some(c) if c.len() < DETECT_CHUNK && signals[c[0]].len() == s.len() => c.push(i),
            _ => chunks.push(vec![i]),
        }
    }
    let results = exec.map(&chunks, |chunk| -> Result<Vec<Tokens>> {
        let refs: Vec<&[f64]> = chunk.iter().map(|&i| signals[i].as_slice()).collect();
        let dets = model.detect_batch(&refs)?;
        dets.iter()
            .zip(chunk)
            .map(|(det, &i)| {
                let kp = extract(det, opts)?;
                Ok(match mode {
                    TokenMode::Descriptors => Tokens::Vectors(kp.descriptors),
                    _ => Tokens::Scalars(kp.keypoints.indices.iter().map(|&t| signals[i][t]).collect()),
                })
            })
            .collect()
    });
    let mut out = Vec::with_capacity(signals.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distance {
    Dtw,
    SoftDtw { gamma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnnConfig {
    pub k: usize,
    pub distance: Distance,
    /// Local cost for vector tokens; scalar tokens always use `|a - b|`.
    pub cost: CostFn,
    pub exec: Exec,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            k: 1,
            distance: Distance::Dtw,
            cost: CostFn::Cosine,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnResult {
    pub predictions: Vec<i64>,
    /// Present when test labels were supplied.
    pub accuracy: Option<f64>,
    /// Sum of DP table sizes over all (test, train) pairs.
    pub dp_cells: u64,
}

/// Vector tokens with rows normalized once up front.
enum Prepared<'a> {
    Scalars(&'a [f64]),
    Vectors { rows: Vec<f32>, norms: Vec<f64>, dim: usize },
}

impl<'a> Prepared<'a> {
    fn new(t: &'a Tokens) -> Self {
        match t {
            Tokens::Scalars(x) => Prepared::Scalars(x),
            Tokens::Vectors(d) => {
                let (rows, norms) = normalized_rows(d);
                Prepared::Vectors { rows, norms, dim: d.dim() }
            }
        }
    }

    fn len(&self) -> usize {
        match self {
            Prepared::Scalars(x) => x.len(),
            Prepared::Vectors { norms, .. } => norms.len(),
        }
    }
}

/// Upper bound on rows per train chunk; one query GEMM covers a whole chunk.
const BANK_ROWS: usize = 4096;

/// Consecutive train series stacked into one row matrix.
struct Bank {
    dim: usize,
    offsets: Vec<usize>,
    rows: Vec<f32>,
    norms: Vec<f64>,
}

impl Bank {
    fn build(train: &[Prepared]) -> Result<Vec<Bank>> {
        let mut banks: Vec<Bank> = Vec::new();
        let mut dim = None;
        for t in train {
            let Prepared::Vectors { rows, norms, dim: d } = t else {
                return Err(Error::InvalidArgument("mismatched token kinds".into()));
            };
            if *dim.get_or_insert(*d) != *d {
                return Err(Error::InvalidArgument("mismatched token kinds".into()));
            }
            match banks.last_mut() {
                Some(b) if b.norms.len() + norms.len() <= BANK_ROWS => b.push(rows, norms),
                _ => {
                    let mut b = Bank {
                        dim: *d,
                        offsets: vec![0],
                        rows: Vec::new(),
                        norms: Vec::new(),
                    };
                    b.push(rows, norms);
                    banks.push(b);
                }
            }
        }
        Ok(banks)
    }

    fn push(&mut self, rows: &[f32], norms: &[f64]) {
        self.rows.extend_from_slice(rows);
        self.norms.extend_from_slice(norms);
        self.offsets.push(self.norms.len());
    }

    /// Distances from one query to every series in the bank.
    fn distances(&self, q: &[f32], qn: &[f64], config: &KnnConfig, out: &mut Vec<f64>) {
        let (n, total) = (qn.len(), self.norms.len());
        let mut dots = vec![0f32; n * total];
        f32_gemm_abt(n, total, self.dim, q, &self.rows, &mut dots);
        for w in self.offsets.windows(2) {
            let (off, m) = (w[0], w[1] - w[0]);
            let nb = &self.norms[off..];
            let cost = |i: usize, j: usize| {
                let c = dots[i * total + off + j] as f64;
                match config.cost {
                    CostFn::DescriptorEuclidean => {
                        let (p, r) = (qn[i], nb[j]);
                        (p * p + r * r - 2.0 * p * r * c).max(0.0).sqrt()
                    }
                    _ => 1.0 - c,
                }
            };
            out.push(match config.distance {
                Distance::Dtw => dtw_cost_with(n, m, cost),
                Distance::SoftDtw { gamma } => soft_dtw_with(n, m, gamma, cost),
            });
        }
    }
}

fn scalar_distance(x: &[f64], y: &[f64], config: &KnnConfig) -> f64 {
    match config.distance {
        Distance::Dtw => dtw_cost_scalar(x, y),
        Distance::SoftDtw { gamma } => soft_dtw_with(x.len(), y.len(), gamma, |i, j| (x[i] - y[j]).abs()),
    }
}

/// Distances from `q` to every train series, in train order.
fn query_distances(q: &Prepared, train: &[Prepared], banks: &[Bank], config: &KnnConfig) -> Result<Vec<f64>> {
    if q.len() == 0 {
        return Err(Error::Empty("token sequence"));
    }
    match q {
        Prepared::Scalars(x) => train
            .iter()
            .map(|t| match t {
                Prepared::Scalars(y) => Ok(scalar_distance(x, y, config)),
                _ => Err(Error::InvalidArgument("mismatched token kinds".into())),
            })
            .collect(),
        Prepared::Vectors { rows, norms, dim } => {
            if banks.first().is_none_or(|b| b.dim != *dim) {
                return Err(Error::InvalidArgument("mismatched token kinds".into()));
            }
            let mut out = Vec::with_capacity(train.len());
            for b in banks {
                b.distances(rows, norms, config, &mut out);
            }
            Ok(out)
        }
    }
}

/// Majority label among `neighbors` (`(distance, label)` sorted by distance);
/// ties go to the smaller mean distance, then the lower label.
fn vote(neighbors: &[(f64, i64)]) -> i64 {
    let mut tally: BTreeMap<i64, (usize, f64)> = BTreeMap::new();
    for &(d, l) in neighbors {
        let e = tally.entry(l).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += d;
    }
    let mut best: Option<(i64, usize, f64)> = None;
    for (&label, &(count, sum)) in &tally {
        let mean = sum / count as f64;
        let better = match best {
            None => true,
            Some((_, bc, bm)) => count > bc || (count == bc && mean < bm),
        };
        if better {
            best = Some((label, count, mean));
        }
    }
    best.map(|b| b.0).expect("at least one neighbor")
}

/// k-nearest-neighbor classification under DTW or SoftDTW.
pub fn knn_classify(
    train: &[Tokens],
    train_labels: &[i64],
    test: &[Tokens],
    test_labels: Option<&[i64]>,
    config: &KnnConfig,
) -> Result<KnnResult> {
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if train.len() != train_labels.len() || test_labels.is_some_and(|l| l.len() != test.len()) {
        return Err(Error::Shape("labels do not match token sets".into()));
    }
    if config.k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    if let Distance::SoftDtw { gamma } = config.distance {
        if !(gamma > 0.0) {
            return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
        }
    }
    let train_p: Vec<Prepared> = train.iter().map(Prepared::new).collect();
    let test_p: Vec<Prepared> = test.iter().map(Prepared::new).collect();
    let k = config.k.min(train.len());
    if train_p.iter().any(|t| t.len() == 0) {
        return Err(Error::Empty("token sequence"));
    }
    let banks = match train_p.first() {
        Some(Prepared::Vectors { .. }) => Bank::build(&train_p)?,
        _ => Vec::new(),
    };
    let rows = config.exec.map(&test_p, |q| -> Result<i64> {
        let mut dists: Vec<(f64, usize)> = query_distances(q, &train_p, &banks, config)?
            .into_iter()
            .enumerate()
            .map(|(i, d)| (d, i))
            .collect();
        dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let nearest: Vec<(f64, i64)> = dists[..k].iter().map(|&(d, i)| (d, train_labels[i])).collect();
        Ok(vote(&nearest))
    });
    let predictions = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let accuracy = test_labels.map(|labels| {
        let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
        hits as f64 / labels.len().max(1) as f64
    });
    let train_cells: u64 = train.iter().map(|t| t.len() as u64).sum();
    let dp_cells = test.iter().map(|t| t.len() as u64 * train_cells).sum();
    Ok(KnnResult {
        predictions,
        accuracy,
        dp_cells,
    })
}
