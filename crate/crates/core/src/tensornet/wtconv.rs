//! Wavelet-transform convolution block.
//!
//! The input goes through a depthwise k=3 convolution (the direct path) and,
//! in parallel, a Haar cascade: at each level the current low band is split
//! into (low, high), both bands get their own depthwise k=3 convolution, and
//! the convolved bands are reconstructed bottom-up and added to the direct
//! path. A strided channel-mixing convolution, batch norm and ReLU follow.

use rand::Rng;

use super::ops::{
    batchnorm1d, batchnorm1d_backward, conv1d, conv1d_backward, haar_dwt, haar_dwt_backward,
    haar_iwt_backward, haar_iwt_cropped, relu, relu_backward, BnCache, BnMode, ConvSpec,
    RunningStats,
};
use super::{Param, Real, Tensor};
use crate::{Error, Result};

const KERNEL: usize = 3;

#[derive(Debug, Clone)]
pub struct WtConvBlock<T> {
    in_channels: usize,
    out_channels: usize,
    stride: usize,
    levels: usize,
    pub base_weight: Param<T>,
    pub base_bias: Param<T>,
    /// One `(2C, 1, 3)` kernel per level, acting on interleaved (low, high).
    pub band_weights: Vec<Param<T>>,
    /// `(C_out, C, stride)`: mixes channels over non-overlapping windows.
    pub mix_weight: Param<T>,
    pub mix_bias: Param<T>,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub stats: RunningStats<T>,
}

/// Intermediate values kept for [`WtConvBlock::backward`].
pub struct WtConvCache<T> {
    input: Tensor<T>,
    level_lens: Vec<usize>,
    bands: Vec<Tensor<T>>,
    mixed_input: Tensor<T>,
    bn: Option<BnCache<T>>,
    output: Tensor<T>,
}

impl<T> WtConvCache<T> {
    pub fn output(&self) -> &Tensor<T> {
        &self.output
    }
}

impl<T: Real> WtConvBlock<T> {
    /// Folds the batch statistics of a train-mode forward into the running
    /// statistics.
    pub fn commit_stats(&mut self, cache: &WtConvCache<T>) {
        if let Some(bn) = &cache.bn {
            self.stats.update(bn);
        }
    }
}

fn stack_bands<T: Real>(low: &Tensor<T>, high: &Tensor<T>) -> Tensor<T> {
    let (b, c, n) = low.dims3();
    let mut out = Tensor::zeros(&[b, 2 * c, n]);
    for bi in 0..b {
        for ci in 0..c {
            out.row_mut(bi, 2 * ci).copy_from_slice(low.row(bi, ci));
            out.row_mut(bi, 2 * ci + 1).copy_from_slice(high.row(bi, ci));
        }
    }
    out
}

fn split_bands<T: Real>(bands: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let (b, c2, n) = bands.dims3();
    let c = c2 / 2;
    let mut low = Tensor::zeros(&[b, c, n]);
    let mut high = Tensor::zeros(&[b, c, n]);
    for bi in 0..b {
        for ci in 0..c {
            low.row_mut(bi, ci).copy_from_slice(bands.row(bi, 2 * ci));
            high.row_mut(bi, ci).copy_from_slice(bands.row(bi, 2 * ci + 1));
        }
    }
    (low, high)
}

impl<T: Real> WtConvBlock<T> {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        levels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if levels == 0 || stride == 0 || in_channels == 0 || out_channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "wtconv: channels {in_channels}->{out_channels}, stride {stride}, levels {levels}"
            )));
        }
        let c = in_channels;
        let band_weights = (0..levels)
            .map(|_| Param::init_uniform(&[2 * c, 1, KERNEL], KERNEL, rng))
            .collect();
        Ok(Self {
            in_channels,
            out_channels,
            stride,
            levels,
            base_weight: Param::init_uniform(&[c, 1, KERNEL], KERNEL, rng),
            base_bias: Param::init_uniform(&[c], KERNEL, rng),
            band_weights,
            mix_weight: Param::init_uniform(&[out_channels, c, stride], c * stride, rng),
            mix_bias: Param::init_uniform(&[out_channels], c * stride, rng),
            gamma: Param::new(Tensor::full(&[out_channels], T::one())),
            beta: Param::new(Tensor::zeros(&[out_channels])),
            stats: RunningStats::new(out_channels),
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn output_len(&self, len: usize) -> usize {
        len / self.stride
    }

    pub fn for_each_param(&self, prefix: &str, f: &mut dyn FnMut(String, &Param<T>)) {
        f(format!("{prefix}.base.weight"), &self.base_weight);
        f(format!("{prefix}.base.bias"), &self.base_bias);
        for (l, p) in self.band_weights.iter().enumerate() {
            f(format!("{prefix}.band{l}.weight"), p);
        }
        f(format!("{prefix}.mix.weight"), &self.mix_weight);
        f(format!("{prefix}.mix.bias"), &self.mix_bias);
        f(format!("{prefix}.bn.gamma"), &self.gamma);
        f(format!("{prefix}.bn.beta"), &self.beta);
    }

    pub fn for_each_param_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        f(format!("{prefix}.base.weight"), &mut self.base_weight);
        f(format!("{prefix}.base.bias"), &mut self.base_bias);
        for (l, p) in self.band_weights.iter_mut().enumerate() {
            f(format!("{prefix}.band{l}.weight"), p);
        }
        f(format!("{prefix}.mix.weight"), &mut self.mix_weight);
        f(format!("{prefix}.mix.bias"), &mut self.mix_bias);
        f(format!("{prefix}.bn.gamma"), &mut self.gamma);
        f(format!("{prefix}.bn.beta"), &mut self.beta);
    }

    pub fn for_each_buffer(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(format!("{prefix}.bn.running_mean"), &self.stats.mean);
        f(format!("{prefix}.bn.running_var"), &self.stats.var);
    }

    pub fn for_each_buffer_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(format!("{prefix}.bn.running_mean"), &mut self.stats.mean);
        f(format!("{prefix}.bn.running_var"), &mut self.stats.var);
    }

    pub fn forward(&self, input: &Tensor<T>, mode: BnMode) -> Result<(Tensor<T>, WtConvCache<T>)> {
        let (_, c, len) = input.dims3();
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "wtconv expects {} channels, got {c}",
                self.in_channels
            )));
        }
        if len < (1 << self.levels) || len < self.stride {
            return Err(Error::Shape(format!(
                "wtconv: length {len} too short for {} wavelet levels",
                self.levels
            )));
        }
        let mut summed = conv1d(
            input,
            &self.base_weight.value,
            Some(&self.base_bias.value),
            ConvSpec::depthwise(c, 1),
        )?;

        let mut level_lens = Vec::with_capacity(self.levels);
        let mut bands = Vec::with_capacity(self.levels);
        let mut convolved = Vec::with_capacity(self.levels);
        let mut current = input.clone();
        for weight in &self.band_weights {
            level_lens.push(current.dims3().2);
            let (low, high) = haar_dwt(&current);
            let stacked = stack_bands(&low, &high);
            convolved.push(conv1d(&stacked, &weight.value, None, ConvSpec::depthwise(2 * c, 1))?);
            bands.push(stacked);
            current = low;
        }
        let mut recon: Option<Tensor<T>> = None;
        for (l, z) in convolved.iter().enumerate().rev() {
            let (mut low, high) = split_bands(z);
            if let Some(r) = &recon {
                low.add_assign(r);
            }
            recon = Some(haar_iwt_cropped(&low, &high, level_lens[l])?);
        }
        summed.add_assign(recon.as_ref().expect("at least one level"));

        let mixed = conv1d(
            &summed,
            &self.mix_weight.value,
            Some(&self.mix_bias.value),
            ConvSpec::new(self.stride, 0),
        )?;
        let (normed, bn) = batchnorm1d(&mixed, &self.gamma.value, &self.beta.value, &self.stats, mode)?;
        let output = relu(&normed);
        let cache = WtConvCache {
            input: input.clone(),
            level_lens,
            bands,
            mixed_input: summed,
            bn,
            output: output.clone(),
        };
        Ok((output, cache))
    }

    /// Accumulates parameter gradients and returns the input gradient. The
    /// forward pass must have run in train mode.
    pub fn backward(&mut self, cache: &WtConvCache<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let bn = cache
            .bn
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("backward needs a train-mode forward".into()))?;
        let c = self.in_channels;
        let g_normed = relu_backward(grad_out, &cache.output);
        let (g_mixed, g_gamma, g_beta) = batchnorm1d_backward(&g_normed, &self.gamma.value, bn);
        self.gamma.grad.add_assign(&g_gamma);
        self.beta.grad.add_assign(&g_beta);

        let mix = conv1d_backward(
            &cache.mixed_input,
            &self.mix_weight.value,
            &g_mixed,
            ConvSpec::new(self.stride, 0),
        )?;
        self.mix_weight.grad.add_assign(&mix.weight);
        self.mix_bias.grad.add_assign(&mix.bias);
        let g_sum = mix.input;

        let base = conv1d_backward(&cache.input, &self.base_weight.value, &g_sum, ConvSpec::depthwise(c, 1))?;
        self.base_weight.grad.add_assign(&base.weight);
        self.base_bias.grad.add_assign(&base.bias);
        let mut g_input = base.input;

        // reconstruction chain, top level first
        let mut g_convolved = Vec::with_capacity(self.levels);
        let mut g_recon = g_sum;
        for band in &cache.bands {
            let half = band.dims3().2;
            let (g_low, g_high) = haar_iwt_backward(&g_recon, half);
            g_convolved.push(stack_bands(&g_low, &g_high));
            g_recon = g_low;
        }
        // analysis chain, deepest level first
        let mut g_current: Option<Tensor<T>> = None;
        for l in (0..self.levels).rev() {
            let grads = conv1d_backward(
                &cache.bands[l],
                &self.band_weights[l].value,
                &g_convolved[l],
                ConvSpec::depthwise(2 * c, 1),
            )?;
            self.band_weights[l].grad.add_assign(&grads.weight);
            let (mut g_low, g_high) = split_bands(&grads.input);
            if let Some(gc) = &g_current {
                g_low.add_assign(gc);
            }
            g_current = Some(haar_dwt_backward(&g_low, &g_high, cache.level_lens[l]));
        }
        g_input.add_assign(g_current.as_ref().expect("at least one level"));
        Ok(g_input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensornet::ops::RunningStats;
    use crate::tensornet::{grad_check, GradCheckReport};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_block(c: usize) -> WtConvBlock<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut block = WtConvBlock::new(c, c, 1, 3, &mut rng).unwrap();
        block.base_weight.value.fill(0.0);
        block.base_bias.value.fill(0.0);
        for w in &mut block.band_weights {
            w.value.fill(0.0);
        }
        block.mix_weight.value.fill(0.0);
        block.mix_bias.value.fill(0.0);
        for ch in 0..c {
            block.base_weight.value.data_mut()[ch * 3 + 1] = 1.0;
            block.mix_weight.value.data_mut()[ch * c + ch] = 1.0;
        }
        block
    }

    #[test]
    fn identity_direct_path_reduces_to_bn_relu() {
        let block = zero_block(3);
        let x = Tensor::<f64>::uniform(&[4, 3, 32], 2.0, &mut ChaCha8Rng::seed_from_u64(5));
        let (y, _) = block.forward(&x, BnMode::Train).unwrap();
        let stats = RunningStats::new(3);
        let (bn, _) = batchnorm1d(&x, &Tensor::full(&[3], 1.0), &Tensor::zeros(&[3]), &stats, BnMode::Train).unwrap();
        let expected = relu(&bn);
        for (a, b) in y.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn output_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let block = WtConvBlock::<f32>::new(4, 6, 1, 3, &mut rng).unwrap();
        let x = Tensor::uniform(&[2, 4, 40], 1.0, &mut rng);
        assert_eq!(block.forward(&x, BnMode::Train).unwrap().0.shape(), &[2, 6, 40]);
        let strided = WtConvBlock::<f32>::new(4, 6, 2, 3, &mut rng).unwrap();
        assert_eq!(strided.forward(&x, BnMode::Train).unwrap().0.shape(), &[2, 6, 20]);
        // odd intermediate lengths go through edge padding
        let odd = Tensor::uniform(&[2, 4, 25], 1.0, &mut rng);
        assert_eq!(block.forward(&odd, BnMode::Train).unwrap().0.shape(), &[2, 6, 25]);
        let short = Tensor::uniform(&[2, 4, 7], 1.0, &mut rng);
        assert!(block.forward(&short, BnMode::Train).is_err());
        let wrong = Tensor::uniform(&[2, 3, 40], 1.0, &mut rng);
        assert!(block.forward(&wrong, BnMode::Train).is_err());
    }

    #[test]
    fn kernel_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let block = WtConvBlock::<f64>::new(2, 3, 2, 3, &mut rng).unwrap();
        let x = Tensor::<f64>::uniform(&[3, 2, 22], 1.0, &mut rng);
        let (y, _) = block.forward(&x, BnMode::Train).unwrap();
        let probe = Tensor::<f64>::uniform(y.shape(), 1.0, &mut rng);

        let mut names = Vec::new();
        block.for_each_param("b", &mut |n, _| names.push(n));
        for target in 0..names.len() {
            if names[target].ends_with("bias") {
                // constant per channel ahead of batch norm: the gradient vanishes
                let mut work = block.clone();
                let (_, cache) = work.forward(&x, BnMode::Train).unwrap();
                work.backward(&cache, &probe).unwrap();
                let g = if names[target].contains("base") {
                    &work.base_bias.grad
                } else {
                    &work.mix_bias.grad
                };
                assert!(g.data().iter().all(|v| v.abs() < 1e-9), "{}", names[target]);
                continue;
            }
            let flat = {
                let mut k = 0;
                let mut out = Vec::new();
                block.for_each_param("b", &mut |_, p| {
                    if k == target {
                        out = p.value.data().to_vec();
                    }
                    k += 1;
                });
                out
            };
            let mut work = block.clone();
            let report: GradCheckReport = grad_check(
                |v: &[f64]| {
                    let mut k = 0;
                    work.for_each_param_mut("b", &mut |_, p| {
                        if k == target {
                            p.value.data_mut().copy_from_slice(v);
                        }
                        p.zero_grad();
                        k += 1;
                    });
                    let (y, cache) = work.forward(&x, BnMode::Train).unwrap();
                    let loss = y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
                    work.backward(&cache, &probe).unwrap();
                    let mut grad = Vec::new();
                    let mut k = 0;
                    work.for_each_param("b", &mut |_, p| {
                        if k == target {
                            grad = p.grad.data().to_vec();
                        }
                        k += 1;
                    });
                    (loss, grad)
                },
                &flat,
                200,
                target as u64,
            );
            assert!(
                report.max_rel_error < 1e-5,
                "{}: {report:?}",
                names[target]
            );
        }
        // input gradient
        let mut work = block.clone();
        let report = grad_check(
            |v: &[f64]| {
                let xi = Tensor::from_vec(x.shape(), v.to_vec()).unwrap();
                let (y, cache) = work.forward(&xi, BnMode::Train).unwrap();
                let loss = y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
                let g = work.backward(&cache, &probe).unwrap();
                (loss, g.into_data())
            },
            x.data(),
            200,
            99,
        );
        assert!(report.max_rel_error < 1e-5, "input: {report:?}");
    }
}
