//! Keypoint BCE and the margin-based descriptor loss.

use crate::tensornet::Real;

/// Scores are clamped to `[SCORE_CLAMP, 1 - SCORE_CLAMP]` inside the BCE.
pub const SCORE_CLAMP: f64 = 1e-7;
pub const POSITIVE_MARGIN: f64 = 1.0;
pub const NEGATIVE_MARGIN: f64 = 0.1;

fn clamp_score(s: f64) -> f64 {
    s.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP)
}

/// Mean binary cross-entropy between scores and a keypoint mask.
pub fn kp_loss<T: Real>(scores: &[T], labels: &[bool]) -> f64 {
    assert_eq!(scores.len(), labels.len(), "kp_loss: length mismatch");
    if scores.is_empty() {
        return 0.0;
    }
    let sum: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let s = clamp_score(s.as_f64());
            if y {
                -s.ln()
            } else {
                -(1.0 - s).ln()
            }
        })
        .sum();
    sum / scores.len() as f64
}

/// Gradient of [`kp_loss`] with respect to the pre-sigmoid logits: `(s - y)/L`
/// inside the clamp range, zero where the clamp is active.
pub fn kp_loss_grad_logits<T: Real>(scores: &[T], labels: &[bool]) -> Vec<T> {
    let n = scores.len() as f64;
    scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let sv = s.as_f64();
            if !(SCORE_CLAMP..=1.0 - SCORE_CLAMP).contains(&sv) {
                T::zero()
            } else {
                T::from_f64((sv - if y { 1.0 } else { 0.0 }) / n)
            }
        })
        .collect()
}

/// Value and gradients of the descriptor loss.
#[derive(Debug, Clone)]
pub struct DescLoss<T> {
    pub value: f64,
    pub grad_a: Vec<T>,
    pub grad_b: Vec<T>,
}

/// Contrastive hinge loss between keypoint descriptors `a` (`n x dim`) and
/// `b` (`m x dim`), rows unit norm. `matches` holds `(row in a, row in b)`
/// pairs. Matched pairs pay `max(0, m_p - cos)^2`, all others
/// `max(0, cos - m_n)^2`; the sum is divided by `n * m`.
pub fn desc_loss<T: Real>(
    a: &[T],
    b: &[T],
    dim: usize,
    matches: &[(usize, usize)],
    margins: (f64, f64),
) -> DescLoss<T> {
    let n = a.len().checked_div(dim).unwrap_or(0);
    let m = b.len().checked_div(dim).unwrap_or(0);
    if n == 0 || m == 0 {
        log::warn!("descriptor loss on an empty keypoint set ({n} x {m}); returning 0");
        return DescLoss {
            value: 0.0,
            grad_a: vec![T::zero(); a.len()],
            grad_b: vec![T::zero(); b.len()],
        };
    }
    let (mp, mn) = margins;
    let mut cos = vec![T::zero(); n * m];
    // a . b^T
    T::gemm(n, dim, m, a, (dim as isize, 1), b, (1, dim as isize), T::zero(), &mut cos, (m as isize, 1));
    let mut matched = vec![false; n * m];
    for &(i, j) in matches {
        matched[i * m + j] = true;
    }
    let norm = 1.0 / (n * m) as f64;
    let mut value = 0.0;
    let mut g = vec![T::zero(); n * m];
    for k in 0..n * m {
        let c = cos[k].as_f64();
        let (h, dh) = if matched[k] {
            let h = (mp - c).max(0.0);
            (h, -2.0 * h)
        } else {
            let h = (c - mn).max(0.0);
            (h, 2.0 * h)
        };
        value += h * h;
        g[k] = T::from_f64(dh * norm);
    }
    let mut grad_a = vec![T::zero(); n * dim];
    let mut grad_b = vec![T::zero(); m * dim];
    // dA = G . B, dB = G^T . A
    T::gemm(n, m, dim, &g, (m as isize, 1), b, (dim as isize, 1), T::zero(), &mut grad_a, (dim as isize, 1));
    T::gemm(m, n, dim, &g, (1, m as isize), a, (dim as isize, 1), T::zero(), &mut grad_b, (dim as isize, 1));
    DescLoss {
        value: value * norm,
        grad_a,
        grad_b,
    }
}
