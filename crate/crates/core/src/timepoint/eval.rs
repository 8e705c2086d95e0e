//! Detection quality against labeled keypoints.

use super::keypoints::{nms, NMS_WINDOW};
use super::model::TimePointModel;
use crate::cpab::{CpaPrior, CpabTransform};
use crate::par::Exec;
use crate::synthalign::{AnnotatedSignal, TrainingPair};
use crate::{Error, Result};

/// Score a surviving NMS peak needs to count as a detection.
pub const DETECTION_THRESHOLD: f64 = 0.05;

/// Match tolerance in samples.
pub const MATCH_TOLERANCE: usize = 2;

/// NMS survivors scoring at least `threshold`, in time order.
pub fn detect_keypoints(scores: &[f64], threshold: f64) -> Result<Vec<usize>> {
    let kp = nms(scores, NMS_WINDOW)?;
    Ok(kp
        .indices
        .iter()
        .zip(&kp.scores)
        .filter(|(_, &s)| s >= threshold)
        .map(|(&t, _)| t)
        .collect())
}

/// Size of a maximum one-to-one matching between sorted `pred` and `truth`
/// where a pair matches if the indices differ by at most `tol`.
///
/// Each prediction takes the earliest unmatched truth inside its window;
/// for windows of equal width on a line this greedy sweep is optimal.
pub fn match_count(pred: &[usize], truth: &[usize], tol: usize) -> usize {
    let mut j = 0;
    let mut hits = 0;
    for &p in pred {
        while j < truth.len() && truth[j] + tol < p {
            j += 1;
        }
        if j < truth.len() && truth[j] <= p + tol {
            hits += 1;
            j += 1;
        }
    }
    hits
}

/// Micro-averaged detection counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct F1Score {
    pub matched: usize,
    pub predicted: usize,
    pub actual: usize,
}

impl F1Score {
    pub fn precision(&self) -> f64 {
        self.matched as f64 / self.predicted.max(1) as f64
    }

    pub fn recall(&self) -> f64 {
        self.matched as f64 / self.actual.max(1) as f64
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn add(mut self, other: F1Score) -> Self {
        self.matched += other.matched;
        self.predicted += other.predicted;
        self.actual += other.actual;
        self
    }
}

/// Detection F1 of `model` over labeled signals.
pub fn keypoint_f1(
    model: &TimePointModel,
    signals: &[AnnotatedSignal],
    threshold: f64,
    tol: usize,
    exec: Exec,
) -> Result<F1Score> {
    if signals.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let per_signal = exec.map(signals, |s| -> Result<F1Score> {
        let det = model.detect(&s.signal)?;
        let pred = detect_keypoints(&det.scores, threshold)?;
        let truth = s.keypoints();
        Ok(F1Score {
            matched: match_count(&pred, &truth, tol),
            predicted: pred.len(),
            actual: truth.len(),
        })
    });
    per_signal
        .into_iter()
        .try_fold(F1Score::default(), |acc, s| Ok(acc.add(s?)))
}

/// Fraction of detections in the warped views that lie within `tol` of a
/// detection in the original view carried through the known warp.
pub fn warp_equivariance(
    model: &TimePointModel,
    pairs: &[TrainingPair],
    prior: &CpaPrior,
    threshold: f64,
    tol: usize,
) -> Result<f64> {
    let (mut hits, mut total) = (0usize, 0usize);
    for pair in pairs {
        if pair.source_theta.is_some() {
            return Err(Error::InvalidArgument("pairs must have the unwarped source as original".into()));
        }
        let t = CpabTransform::new(prior.tessellation(), pair.theta.clone())?;
        let len = pair.original.len();
        let scale = (len.max(2) - 1) as f64;
        let a = detect_keypoints(&model.detect(&pair.original.signal)?.scores, threshold)?;
        let b = detect_keypoints(&model.detect(&pair.warped.signal)?.scores, threshold)?;
        let mut carried = a
            .iter()
            .map(|&p| Ok((t.inverse_point(p as f64 / scale)? * scale).round() as usize))
            .collect::<Result<Vec<_>>>()?;
        carried.sort_unstable();
        carried.dedup();
        hits += b
            .iter()
            .filter(|&&q| carried.iter().any(|&c| c.abs_diff(q) <= tol))
            .count();
        total += b.len();
    }
    Ok(hits as f64 / total.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Maximum matching by exhaustive augmenting paths.
    fn brute_matching(pred: &[usize], truth: &[usize], tol: usize) -> usize {
        fn augment(p: usize, pred: &[usize], truth: &[usize], tol: usize, seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
            for j in 0..truth.len() {
                if pred[p].abs_diff(truth[j]) <= tol && !seen[j] {
                    seen[j] = true;
                    if owner[j].is_none() || augment(owner[j].unwrap(), pred, truth, tol, seen, owner) {
                        owner[j] = Some(p);
                        return true;
                    }
                }
            }
            false
        }
        let mut owner = vec![None; truth.len()];
        (0..pred.len())
            .filter(|&p| augment(p, pred, truth, tol, &mut vec![false; truth.len()], &mut owner))
            .count()
    }

    proptest! {
        #[test]
        fn greedy_matching_is_maximum(
            pred in proptest::collection::btree_set(0usize..40, 0..12),
            truth in proptest::collection::btree_set(0usize..40, 0..12),
            tol in 0usize..4,
        ) {
            let pred: Vec<usize> = pred.into_iter().collect();
            let truth: Vec<usize> = truth.into_iter().collect();
            prop_assert_eq!(match_count(&pred, &truth, tol), brute_matching(&pred, &truth, tol));
        }
    }

    #[test]
    fn f1_arithmetic() {
        let s = F1Score { matched: 3, predicted: 4, actual: 6 };
        assert!((s.precision() - 0.75).abs() < 1e-12);
        assert!((s.recall() - 0.5).abs() < 1e-12);
        assert!((s.f1() - 0.6).abs() < 1e-12);
        assert_eq!(F1Score::default().f1(), 0.0);
    }

    #[test]
    fn detection_respects_threshold_and_nms() {
        let scores = [0.0, 0.2, 0.9, 0.1, 0.0, 0.0, 0.0, 0.04, 0.0];
        assert_eq!(detect_keypoints(&scores, 0.05).unwrap(), vec![2]);
        assert_eq!(detect_keypoints(&scores, 0.01).unwrap(), vec![2, 7]);
    }

    #[test]
    fn tolerance_window() {
        assert_eq!(match_count(&[10], &[12], 2), 1);
        assert_eq!(match_count(&[10], &[13], 2), 0);
        assert_eq!(match_count(&[10, 11], &[11], 2), 1);
    }
}
