//! Non-maximum suppression, top-ratio selection and sparse extraction.

use super::model::{DescriptorMatrix, Detection};
use crate::{Error, Result};

pub const NMS_WINDOW: usize = 5;

/// Time indices (strictly increasing) with their scores.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KeypointSet {
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
}

impl KeypointSet {
    /// Every index of `scores`.
    pub fn all(scores: &[f64]) -> Self {
        Self {
            indices: (0..scores.len()).collect(),
            scores: scores.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// `a` beats `b` if it scores higher, or equal with the lower index.
fn beats(scores: &[f64], a: usize, b: usize) -> bool {
    scores[a] > scores[b] || (scores[a] == scores[b] && a < b)
}

/// Keeps index `t` iff `s_t > 0` and it beats every neighbor within
/// `window / 2`. Equal scores go to the lower index.
pub fn nms(scores: &[f64], window: usize) -> Result<KeypointSet> {
    if window.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("nms window {window} must be odd")));
    }
    let r = window / 2;
    let n = scores.len();
    let mut out = KeypointSet::default();
    for t in 0..n {
        if scores[t] <= 0.0 {
            continue;
        }
        let lo = t.saturating_sub(r);
        let hi = (t + r).min(n.saturating_sub(1));
        if (lo..=hi).all(|u| u == t || beats(scores, t, u)) {
            out.indices.push(t);
            out.scores.push(scores[t]);
        }
    }
    Ok(out)
}

/// Keypoint budget for a ratio of the sequence length.
pub fn budget(ratio: f64, len: usize) -> usize {
    (ratio * len as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Keeps the `ceil(ratio * len)` highest-scoring keypoints (ties to the lower
/// index), returned in time order.
pub fn select_keypoints(kp: &KeypointSet, ratio: f64, len: usize) -> Result<KeypointSet> {
    if kp.is_empty() {
        return Err(Error::Empty("keypoint set"));
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!("ratio {ratio} outside (0, 1]")));
    }
    let keep = budget(ratio, len).min(kp.len());
    let mut order: Vec<usize> = (0..kp.len()).collect();
    order.sort_by(|&a, &b| {
        kp.scores[b]
            .total_cmp(&kp.scores[a])
            .then(kp.indices[a].cmp(&kp.indices[b]))
    });
    order.truncate(keep);
    order.sort_unstable_by_key(|&k| kp.indices[k]);
    Ok(KeypointSet {
        indices: order.iter().map(|&k| kp.indices[k]).collect(),
        scores: order.iter().map(|&k| kp.scores[k]).collect(),
    })
}

/// How keypoints are picked from a [`Detection`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractOptions {
    pub ratio: f64,
    pub nms: bool,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self { ratio: 0.2, nms: true }
    }
}

/// Selected keypoints and their descriptor rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseKeypoints {
    pub keypoints: KeypointSet,
    pub descriptors: DescriptorMatrix,
}

impl SparseKeypoints {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }
}

pub fn extract(detection: &Detection, opts: ExtractOptions) -> Result<SparseKeypoints> {
    let candidates = if opts.nms {
        nms(&detection.scores, NMS_WINDOW)?
    } else {
        KeypointSet::all(&detection.scores)
    };
    let keypoints = select_keypoints(&candidates, opts.ratio, detection.scores.len())?;
    let descriptors = detection.descriptors.gather(&keypoints.indices);
    Ok(SparseKeypoints {
        keypoints,
        descriptors,
    })
}
