use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::container::NamedTensor;
use crate::interp::sample_linear;
use crate::tensornet::ops::{
    conv1d, conv1d_backward, l2_normalize, l2_normalize_backward, sigmoid, upsample_linear,
    upsample_linear_backward, BnMode, ConvSpec,
};
use crate::tensornet::{Param, Real, Tensor, WtConvBlock, WtConvCache};
use crate::{Error, Result};

/// Temporal cells per encoder step decoded by the keypoint head.
pub const CELL: usize = 8;

const META_NAME: &str = "meta.config";

/// Layer widths and strides of a [`TimePointModel`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    pub desc_dim: usize,
    pub levels: usize,
}

impl ModelConfig {
    /// Reduced widths for CPU training.
    pub fn desk() -> Self {
        Self {
            channels: vec![32, 32, 64, 64],
            strides: vec![1, 2, 2, 2],
            desc_dim: 64,
            levels: 3,
        }
    }

    pub fn full() -> Self {
        Self {
            channels: vec![128, 128, 256, 256],
            strides: vec![1, 2, 2, 2],
            desc_dim: 256,
            levels: 3,
        }
    }

    /// Few channels; meant for gradient checks and tests.
    pub fn tiny() -> Self {
        Self {
            channels: vec![4, 4, 6, 6],
            strides: vec![1, 2, 2, 2],
            desc_dim: 5,
            levels: 2,
        }
    }

    pub fn from_preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::InvalidArgument(format!("unknown preset {other:?}"))),
        }
    }

    pub fn downsampling(&self) -> usize {
        self.strides.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty()
            || self.channels.len() != self.strides.len()
            || self.channels.contains(&0)
            || self.desc_dim == 0
            || self.levels == 0
        {
            return Err(Error::InvalidArgument(format!("bad model config {self:?}")));
        }
        if self.downsampling() != CELL {
            return Err(Error::InvalidArgument(format!(
                "strides {:?} must downsample by exactly {CELL}",
                self.strides
            )));
        }
        Ok(())
    }
}

/// Shared WTConv encoder with a keypoint head and a descriptor head.
#[derive(Debug, Clone)]
pub struct TimePointModel<T = f32> {
    config: ModelConfig,
    pub encoder: Vec<WtConvBlock<T>>,
    /// `(8, D_enc, 3)`
    pub kp_weight: Param<T>,
    pub kp_bias: Param<T>,
    /// `(D_desc, D_enc, 1)`
    pub desc_weight: Param<T>,
    pub desc_bias: Param<T>,
}

/// Batched model output.
#[derive(Debug, Clone)]
pub struct ModelOutput<T> {
    /// `(B, 1, L)` pre-sigmoid keypoint logits.
    pub logits: Tensor<T>,
    /// `(B, 1, L)` keypoint probabilities.
    pub scores: Tensor<T>,
    /// `(B, D_desc, L)` unit-norm descriptors.
    pub descriptors: Tensor<T>,
}

pub struct ModelCache<T> {
    blocks: Vec<WtConvCache<T>>,
    block_inputs: Vec<Tensor<T>>,
    features: Tensor<T>,
    coarse_len: usize,
    descriptors: Tensor<T>,
    norms: Vec<T>,
}

/// Scores and descriptors of one signal on its own time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub scores: Vec<f64>,
    pub descriptors: DescriptorMatrix,
}

/// Row-major `(rows, dim)` descriptors, one row per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorMatrix {
    dim: usize,
    data: Vec<f32>,
}

impl DescriptorMatrix {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn gather(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self { dim: self.dim, data }
    }
}

fn block_prefix(i: usize) -> String {
    format!("encoder.{i}")
}

impl<T: Real> TimePointModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut encoder = Vec::with_capacity(config.channels.len());
        let mut in_ch = 1;
        for (&out_ch, &stride) in config.channels.iter().zip(&config.strides) {
            encoder.push(WtConvBlock::new(in_ch, out_ch, stride, config.levels, &mut rng)?);
            in_ch = out_ch;
        }
        let d_enc = in_ch;
        Ok(Self {
            kp_weight: Param::init_uniform(&[CELL, d_enc, 3], d_enc * 3, &mut rng),
            kp_bias: Param::init_uniform(&[CELL], d_enc * 3, &mut rng),
            desc_weight: Param::init_uniform(&[config.desc_dim, d_enc, 1], d_enc, &mut rng),
            desc_bias: Param::init_uniform(&[config.desc_dim], d_enc, &mut rng),
            encoder,
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn desc_dim(&self) -> usize {
        self.config.desc_dim
    }

    pub fn for_each_param(&self, f: &mut dyn FnMut(String, &Param<T>)) {
        for (i, block) in self.encoder.iter().enumerate() {
            block.for_each_param(&block_prefix(i), f);
        }
        f("kp_head.weight".into(), &self.kp_weight);
        f("kp_head.bias".into(), &self.kp_bias);
        f("desc_head.weight".into(), &self.desc_weight);
        f("desc_head.bias".into(), &self.desc_bias);
    }

    pub fn for_each_param_mut(&mut self, f: &mut dyn FnMut(String, &mut Param<T>)) {
        for (i, block) in self.encoder.iter_mut().enumerate() {
            block.for_each_param_mut(&block_prefix(i), f);
        }
        f("kp_head.weight".into(), &mut self.kp_weight);
        f("kp_head.bias".into(), &mut self.kp_bias);
        f("desc_head.weight".into(), &mut self.desc_weight);
        f("desc_head.bias".into(), &mut self.desc_bias);
    }

    pub fn for_each_buffer_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        for (i, block) in self.encoder.iter_mut().enumerate() {
            block.for_each_buffer_mut(&block_prefix(i), f);
        }
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.for_each_param(&mut |_, p| n += p.numel());
        n
    }

    pub fn zero_grad(&mut self) {
        self.for_each_param_mut(&mut |_, p| p.zero_grad());
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.for_each_param(&mut |_, p| ok &= p.value.all_finite());
        ok
    }

    pub fn cast<U: Real>(&self) -> TimePointModel<U> {
        let mut out = TimePointModel::<U>::new(self.config.clone(), 0).expect("validated config");
        let tensors = self.to_tensors();
        out.load_tensors(&tensors).expect("same architecture");
        out
    }

    /// `input` is `(B, 1, L)` with `L` divisible by 8.
    pub fn forward(&self, input: &Tensor<T>, mode: BnMode) -> Result<(ModelOutput<T>, ModelCache<T>)> {
        let (b, c, len) = input.dims3();
        if c != 1 {
            return Err(Error::Shape(format!("expected 1 input channel, got {c}")));
        }
        if len == 0 || len % CELL != 0 {
            return Err(Error::LengthNotDivisible(len));
        }
        let mut blocks = Vec::with_capacity(self.encoder.len());
        let mut block_inputs = Vec::with_capacity(self.encoder.len());
        let mut x = input.clone().reshape(&[b, 1, len])?;
        for block in &self.encoder {
            let (y, cache) = block.forward(&x, mode)?;
            block_inputs.push(x);
            blocks.push(cache);
            x = y;
        }
        let features = x;
        let coarse_len = features.dims3().2;

        let cells = conv1d(&features, &self.kp_weight.value, Some(&self.kp_bias.value), ConvSpec::new(1, 1))?;
        let mut logits = Tensor::zeros(&[b, 1, len]);
        for bi in 0..b {
            let out = logits.row_mut(bi, 0);
            for cell in 0..CELL {
                for (tc, &v) in cells.row(bi, cell).iter().enumerate() {
                    out[tc * CELL + cell] = v;
                }
            }
        }
        let scores = logits.map(sigmoid);

        let coarse = conv1d(&features, &self.desc_weight.value, Some(&self.desc_bias.value), ConvSpec::new(1, 0))?;
        let dense = upsample_linear(&coarse, len)?;
        let (descriptors, norms) = l2_normalize(&dense);

        let cache = ModelCache {
            blocks,
            block_inputs,
            features,
            coarse_len,
            descriptors: descriptors.clone(),
            norms,
        };
        Ok((
            ModelOutput {
                logits,
                scores,
                descriptors,
            },
            cache,
        ))
    }

    /// Folds batch statistics of a train-mode forward into the running
    /// statistics of every batch norm.
    pub fn commit_stats(&mut self, cache: &ModelCache<T>) {
        for (block, c) in self.encoder.iter_mut().zip(&cache.blocks) {
            block.commit_stats(c);
        }
    }

    /// Accumulates parameter gradients given `dL/dlogits` `(B, 1, L)` and
    /// `dL/ddescriptors` `(B, D_desc, L)`.
    pub fn backward(&mut self, cache: &ModelCache<T>, grad_logits: &Tensor<T>, grad_desc: &Tensor<T>) -> Result<()> {
        let (b, _, len) = grad_logits.dims3();
        let coarse_len = cache.coarse_len;
        let mut g_cells = Tensor::zeros(&[b, CELL, coarse_len]);
        for bi in 0..b {
            let g = grad_logits.row(bi, 0);
            for cell in 0..CELL {
                for (tc, out) in g_cells.row_mut(bi, cell).iter_mut().enumerate() {
                    *out = g[tc * CELL + cell];
                }
            }
        }
        let kp = conv1d_backward(&cache.features, &self.kp_weight.value, &g_cells, ConvSpec::new(1, 1))?;
        self.kp_weight.grad.add_assign(&kp.weight);
        self.kp_bias.grad.add_assign(&kp.bias);

        let g_dense = l2_normalize_backward(grad_desc, &cache.descriptors, &cache.norms);
        debug_assert_eq!(g_dense.dims3().2, len);
        let g_coarse = upsample_linear_backward(&g_dense, coarse_len);
        let desc = conv1d_backward(&cache.features, &self.desc_weight.value, &g_coarse, ConvSpec::new(1, 0))?;
        self.desc_weight.grad.add_assign(&desc.weight);
        self.desc_bias.grad.add_assign(&desc.bias);

        let mut g = kp.input;
        g.add_assign(&desc.input);
        for (i, block) in self.encoder.iter_mut().enumerate().rev() {
            debug_assert_eq!(cache.block_inputs[i].dims3().1, block.in_channels());
            g = block.backward(&cache.blocks[i], &g)?;
        }
        Ok(())
    }

    /// Eval-mode inference on a signal of any length >= 16. Lengths that are
    /// not a multiple of 8 are resampled for the network and the outputs are
    /// interpolated back onto the original grid.
    pub fn detect(&self, signal: &[f64]) -> Result<Detection> {
        Ok(self.detect_batch(&[signal])?.remove(0))
    }

    /// Like [`detect`](Self::detect) for several signals of equal length,
    /// in one batched forward pass.
    pub fn detect_batch(&self, signals: &[&[f64]]) -> Result<Vec<Detection>> {
        let Some(first) = signals.first() else {
            return Ok(Vec::new());
        };
        let len = first.len();
        if signals.iter().any(|s| s.len() != len) {
            return Err(Error::Shape("detect_batch needs equal-length signals".into()));
        }
        if len < 16 {
            return Err(Error::InvalidArgument(format!(
                "signal of length {len} is too short (minimum 16)"
            )));
        }
        let net_len = len.div_ceil(CELL) * CELL;
        let mut data = Vec::with_capacity(signals.len() * net_len);
        for s in signals {
            if net_len == len {
                data.extend(s.iter().map(|&v| T::from_f64(v)));
            } else {
                data.extend(crate::data::resample(s, net_len).into_iter().map(T::from_f64));
            }
        }
        let input = Tensor::from_vec(&[signals.len(), 1, net_len], data)?;
        let (out, _) = self.forward(&input, BnMode::Eval)?;
        let dim = self.config.desc_dim;
        let mut detections = Vec::with_capacity(signals.len());
        for bi in 0..signals.len() {
            let scores: Vec<f64> = out.scores.row(bi, 0).iter().map(|v| v.as_f64()).collect();
            let mut desc = vec![0f32; net_len * dim];
            for d in 0..dim {
                for (t, v) in out.descriptors.row(bi, d).iter().enumerate() {
                    desc[t * dim + d] = v.as_f64() as f32;
                }
            }
            let det = if net_len == len {
                Detection {
                    scores,
                    descriptors: DescriptorMatrix { dim, data: desc },
                }
            } else {
                regrid(&scores, &desc, dim, len)
            };
            detections.push(det);
        }
        Ok(detections)
    }

    /// Flat named tensors, including a `meta.config` entry describing the
    /// architecture.
    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        let mut meta = vec![self.config.channels.len() as f32];
        meta.extend(self.config.channels.iter().map(|&c| c as f32));
        meta.extend(self.config.strides.iter().map(|&s| s as f32));
        meta.push(self.config.desc_dim as f32);
        meta.push(self.config.levels as f32);
        let mut out = vec![NamedTensor {
            name: META_NAME.into(),
            dims: vec![meta.len()],
            data: meta,
        }];
        self.for_each_param(&mut |name, p| out.push(named(name, &p.value)));
        for (i, block) in self.encoder.iter().enumerate() {
            block.for_each_buffer(&block_prefix(i), &mut |name, t| out.push(named(name, t)));
        }
        out
    }

    /// Copies weights and running statistics in from `tensors`, checking every
    /// shape against this model.
    pub fn load_tensors(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        let lookup = |name: &str, shape: &[usize]| -> Result<Vec<T>> {
            let t = tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.dims != shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: expected shape {shape:?}, found {:?}",
                    t.dims
                )));
            }
            Ok(t.data.iter().map(|&v| T::from_f64(v as f64)).collect())
        };
        let mut result = Ok(());
        self.for_each_param_mut(&mut |name, p| {
            if result.is_ok() {
                match lookup(&name, p.value.shape()) {
                    Ok(v) => p.value.data_mut().copy_from_slice(&v),
                    Err(e) => result = Err(e),
                }
            }
        });
        self.for_each_buffer_mut(&mut |name, t| {
            if result.is_ok() {
                match lookup(&name, t.shape()) {
                    Ok(v) => t.data_mut().copy_from_slice(&v),
                    Err(e) => result = Err(e),
                }
            }
        });
        result
    }

    /// Rebuilds a model from tensors written by [`to_tensors`](Self::to_tensors).
    pub fn from_tensors(tensors: &[NamedTensor]) -> Result<Self> {
        let meta = tensors
            .iter()
            .find(|t| t.name == META_NAME)
            .ok_or_else(|| Error::Checkpoint(format!("missing {META_NAME}")))?;
        let v: Vec<usize> = meta.data.iter().map(|&x| x as usize).collect();
        let n = *v.first().ok_or_else(|| Error::Checkpoint("empty meta".into()))?;
        if v.len() != 2 * n + 3 {
            return Err(Error::Checkpoint(format!("meta has {} entries for {n} blocks", v.len())));
        }
        let config = ModelConfig {
            channels: v[1..=n].to_vec(),
            strides: v[n + 1..=2 * n].to_vec(),
            desc_dim: v[2 * n + 1],
            levels: v[2 * n + 2],
        };
        let mut model = Self::new(config, 0).map_err(|e| Error::Checkpoint(e.to_string()))?;
        model.load_tensors(tensors)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::container::save(path, &self.to_tensors())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_tensors(&crate::container::load(path)?)
    }
}

fn named<T: Real>(name: String, t: &Tensor<T>) -> NamedTensor {
    NamedTensor {
        name,
        dims: t.shape().to_vec(),
        data: t.data().iter().map(|v| v.as_f64() as f32).collect(),
    }
}

/// Interpolates network-grid outputs onto a grid of `len` points and
/// renormalizes the descriptor rows.
fn regrid(scores: &[f64], desc: &[f32], dim: usize, len: usize) -> Detection {
    let src = scores.len();
    let scale = (src - 1) as f64 / (len - 1) as f64;
    let out_scores = (0..len).map(|t| sample_linear(scores, t as f64 * scale)).collect();
    let mut out = vec![0f32; len * dim];
    for t in 0..len {
        let pos = t as f64 * scale;
        let i = (pos.floor() as usize).min(src - 1);
        let j = (i + 1).min(src - 1);
        let f = (pos - i as f64) as f32;
        let row = &mut out[t * dim..(t + 1) * dim];
        for d in 0..dim {
            row[d] = desc[i * dim + d] * (1.0 - f) + desc[j * dim + d] * f;
        }
        let norm = row.iter().map(|v| v * v).sum::<f32>().sqrt();
        if norm > 1e-8 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    Detection {
        scores: out_scores,
        descriptors: DescriptorMatrix { dim, data: out },
    }
}
