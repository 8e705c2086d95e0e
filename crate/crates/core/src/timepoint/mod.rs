//! Keypoint detector and descriptor network.
//!
//! [`TimePointModel`] stacks four WTConv blocks (overall stride 8) under two
//! heads. The keypoint head predicts 8 logits per encoder step, which are
//! interleaved back onto the input grid and squashed by a sigmoid. The
//! descriptor head is a pointwise convolution, linearly upsampled to the
//! input length and normalized per time step.

mod eval;
mod keypoints;
mod loss;
mod model;
mod train;

pub use eval::{
    detect_keypoints, keypoint_f1, match_count, warp_equivariance, F1Score, DETECTION_THRESHOLD,
    MATCH_TOLERANCE,
};
pub use keypoints::{
    budget, extract, nms, select_keypoints, ExtractOptions, KeypointSet, SparseKeypoints, NMS_WINDOW,
};
pub use loss::{
    desc_loss, kp_loss, kp_loss_grad_logits, DescLoss, NEGATIVE_MARGIN, POSITIVE_MARGIN, SCORE_CLAMP,
};
pub use model::{
    DescriptorMatrix, Detection, ModelCache, ModelConfig, ModelOutput, TimePointModel, CELL,
};
pub use train::{
    evaluate, finetune, loss_and_grad, objective, stack_pairs, synthetic_batch, train, train_step,
    train_with_progress, FinetuneConfig, LossParts, LossRecord, LossTrace, TrainConfig,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthalign::SynthConfig;
    use crate::tensornet::grad_check;

    /// Full objective against finite differences over all parameters.
    #[test]
    fn total_loss_gradient_matches_finite_differences() {
        let cfg = TrainConfig {
            batch: 2,
            seed: 5,
            synth: SynthConfig {
                length: 64,
                ..SynthConfig::default()
            },
            ..TrainConfig::default()
        };
        let pairs = synthetic_batch(&cfg, 0);
        let mut model = TimePointModel::<f64>::new(ModelConfig::tiny(), 3).unwrap();
        // biases feeding straight into batch norm have an exactly zero gradient
        let cancelled = |name: &str| name.starts_with("encoder") && name.ends_with("bias");
        let mut flat = Vec::new();
        model.for_each_param(&mut |name, p| {
            if !cancelled(&name) {
                flat.extend_from_slice(p.value.data())
            }
        });
        loss_and_grad(&mut model, &pairs).unwrap();
        model.for_each_param(&mut |name, p| {
            if cancelled(&name) {
                assert!(p.grad.data().iter().all(|g| g.abs() < 1e-10), "{name}");
            }
        });
        let report = grad_check(
            |v: &[f64]| {
                let mut off = 0;
                model.for_each_param_mut(&mut |name, p| {
                    if !cancelled(&name) {
                        let n = p.numel();
                        p.value.data_mut().copy_from_slice(&v[off..off + n]);
                        off += n;
                    }
                });
                let (parts, _) = loss_and_grad(&mut model, &pairs).unwrap();
                let mut g = Vec::new();
                model.for_each_param(&mut |name, p| {
                    if !cancelled(&name) {
                        g.extend_from_slice(p.grad.data())
                    }
                });
                (parts.total(), g)
            },
            &flat,
            200,
            1,
        );
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        assert!(report.checked > 100);
    }
}
