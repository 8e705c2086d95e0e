//! AdamW with decoupled weight decay, and a cosine learning-rate schedule.

use super::{Param, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamW {
    pub fn step<T: Real>(&self, param: &mut Param<T>, lr: f64) {
        param.step += 1;
        let t = param.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let decay = T::from_f64(1.0 - lr * self.weight_decay);
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let step_size = T::from_f64(lr / bc1);
        let bc2_sqrt = T::from_f64(bc2.sqrt());
        let eps = T::from_f64(self.eps);
        let one = T::one();
        let values = param.value.data_mut();
        let grads = param.grad.data();
        let m = param.moment1.data_mut();
        let v = param.moment2.data_mut();
        for i in 0..values.len() {
            let g = grads[i];
            m[i] = b1 * m[i] + (one - b1) * g;
            v[i] = b2 * v[i] + (one - b2) * g * g;
            values[i] *= decay;
            values[i] -= step_size * m[i] / (v[i].sqrt() / bc2_sqrt + eps);
        }
    }
}

/// Applies one AdamW update to every parameter.
pub fn adamw_step<'a, T: Real>(params: impl IntoIterator<Item = &'a mut Param<T>>, lr: f64, opt: &AdamW) {
    for p in params {
        opt.step(p, lr);
    }
}

/// `0.5 * base_lr * (1 + cos(pi * step / total_steps))`.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    let frac = step.min(total_steps) as f64 / total_steps as f64;
    0.5 * base_lr * (1.0 + (std::f64::consts::PI * frac).cos())
}
