use super::{cost_matrix, dtw_matrix, CostFn, Seq, WarpingPath};
use crate::timepoint::{extract, ExtractOptions, SparseKeypoints, TimePointModel};
use crate::{Error, Result};

/// Keypoint-level DTW alignment of two signals and the dense map it implies.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAlignment {
    pub kp_path: WarpingPath,
    pub kp_indices_a: Vec<usize>,
    pub kp_indices_b: Vec<usize>,
    /// `dense_map[t]`: position in `b` matched to time `t` of `a`.
    pub dense_map: Vec<f64>,
}

impl SparseAlignment {
    pub fn dp_cells(&self) -> usize {
        self.kp_indices_a.len() * self.kp_indices_b.len()
    }
}

/// Piecewise-linear map from matched `(t_a, t_b)` pairs. Pairs sharing a
/// `t_a` are averaged; the endpoints are pinned to `(0, 0)` and
/// `(len_a - 1, len_b - 1)`.
pub fn dense_map_from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>, len_a: usize, len_b: usize) -> Vec<f64> {
    if len_a == 0 {
        return Vec::new();
    }
    let last_b = len_b.saturating_sub(1) as f64;
    let mut sums = vec![(0.0, 0usize); len_a];
    for (ta, tb) in pairs {
        if ta < len_a {
            sums[ta].0 += tb as f64;
            sums[ta].1 += 1;
        }
    }
    let mut anchors: Vec<(usize, f64)> = sums
        .iter()
        .enumerate()
        .filter(|(_, s)| s.1 > 0)
        .map(|(t, s)| (t, s.0 / s.1 as f64))
        .filter(|&(t, _)| t != 0 && t != len_a - 1)
        .collect();
    anchors.insert(0, (0, 0.0));
    if len_a > 1 {
        anchors.push((len_a - 1, last_b));
    }
    let mut running = 0.0f64;
    for a in &mut anchors {
        running = running.max(a.1).min(last_b);
        a.1 = running;
    }
    let mut map = vec![0.0; len_a];
    for w in anchors.windows(2) {
        let ((t0, v0), (t1, v1)) = (w[0], w[1]);
        for (t, slot) in map.iter_mut().enumerate().take(t1 + 1).skip(t0) {
            let f = (t - t0) as f64 / (t1 - t0) as f64;
            *slot = v0 + (v1 - v0) * f;
        }
    }
    map
}

/// Sequences fed to DTW for a keypoint set: descriptors for vector costs,
/// raw samples at the keypoints for the scalar cost.
fn kp_cost_matrix(
    a: &SparseKeypoints,
    b: &SparseKeypoints,
    x_a: &[f64],
    x_b: &[f64],
    cost: CostFn,
) -> Result<Vec<f64>> {
    match cost {
        CostFn::EuclideanScalar => {
            let va: Vec<f64> = a.keypoints.indices.iter().map(|&t| x_a[t]).collect();
            let vb: Vec<f64> = b.keypoints.indices.iter().map(|&t| x_b[t]).collect();
            cost_matrix(Seq::Scalar(&va), Seq::Scalar(&vb), cost)
        }
        _ => cost_matrix(Seq::Vectors(&a.descriptors), Seq::Vectors(&b.descriptors), cost),
    }
}

/// Detects keypoints in both signals, aligns them with DTW and interpolates a
/// dense map between matched keypoints.
pub fn align_sparse(
    x_a: &[f64],
    x_b: &[f64],
    model: &TimePointModel,
    opts: ExtractOptions,
    cost: CostFn,
) -> Result<SparseAlignment> {
    let ka = extract(&model.detect(x_a)?, opts)?;
    let kb = extract(&model.detect(x_b)?, opts)?;
    align_keypoints(&ka, &kb, x_a, x_b, cost)
}

/// [`align_sparse`] on already extracted keypoints.
pub fn align_keypoints(
    ka: &SparseKeypoints,
    kb: &SparseKeypoints,
    x_a: &[f64],
    x_b: &[f64],
    cost: CostFn,
) -> Result<SparseAlignment> {
    for k in [ka, kb] {
        if k.len() < 2 {
            return Err(Error::TooFewKeypoints(k.len()));
        }
    }
    let (n, m) = (ka.len(), kb.len());
    let costs = kp_cost_matrix(ka, kb, x_a, x_b, cost)?;
    let kp_path = dtw_matrix(&costs, n, m)?;
    let matched = kp_path
        .pairs
        .iter()
        .map(|&(i, j)| (ka.keypoints.indices[i], kb.keypoints.indices[j]));
    let dense_map = dense_map_from_pairs(matched, x_a.len(), x_b.len());
    Ok(SparseAlignment {
        kp_indices_a: ka.keypoints.indices.clone(),
        kp_indices_b: kb.keypoints.indices.clone(),
        dense_map,
        kp_path,
    })
}
