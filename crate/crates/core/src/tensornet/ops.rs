//! Forward and backward rules for the primitive ops.

use super::{debug_check_finite, Real, Tensor};
use crate::par::Exec;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub const fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride,
            padding,
            groups: 1,
        }
    }

    pub const fn depthwise(channels: usize, padding: usize) -> Self {
        Self {
            stride: 1,
            padding,
            groups: channels,
        }
    }

    pub fn output_len(&self, len: usize, kernel: usize) -> Option<usize> {
        let padded = len + 2 * self.padding;
        (padded >= kernel && self.stride > 0).then(|| (padded - kernel) / self.stride + 1)
    }
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

struct ConvGeom {
    batch: usize,
    c_in: usize,
    len: usize,
    c_out: usize,
    cin_per_group: usize,
    kernel: usize,
    out_len: usize,
}

fn conv_geometry<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, spec: ConvSpec) -> Result<ConvGeom> {
    let (batch, c_in, len) = input.dims3();
    let (c_out, cin_per_group, kernel) = match weight.shape() {
        &[o, i, k] => (o, i, k),
        s => return Err(Error::Shape(format!("conv weight must be rank 3, got {s:?}"))),
    };
    let groups = spec.groups.max(1);
    if c_in % groups != 0 || c_out % groups != 0 || c_in / groups != cin_per_group {
        return Err(Error::Shape(format!(
            "conv: input channels {c_in}, weight {:?}, groups {groups}",
            weight.shape()
        )));
    }
    let out_len = spec.output_len(len, kernel).ok_or_else(|| {
        Error::Shape(format!("conv: length {len} too short for kernel {kernel}"))
    })?;
    Ok(ConvGeom {
        batch,
        c_in,
        len,
        c_out,
        cin_per_group,
        kernel,
        out_len,
    })
}

/// Unfolds one batch element into a `(c_in * kernel, out_len)` matrix.
fn im2col<T: Real>(x: &[T], g: &ConvGeom, spec: ConvSpec, col: &mut [T]) {
    let (k_size, out_len) = (g.kernel, g.out_len);
    for ci in 0..g.c_in {
        let row_in = &x[ci * g.len..(ci + 1) * g.len];
        for k in 0..k_size {
            let row = &mut col[(ci * k_size + k) * out_len..(ci * k_size + k + 1) * out_len];
            let (lo, hi) = valid_outputs(g.len, out_len, k, spec);
            row[..lo].fill(T::zero());
            row[hi..].fill(T::zero());
            for (o, v) in row.iter_mut().enumerate().take(hi).skip(lo) {
                *v = row_in[o * spec.stride + k - spec.padding];
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], g: &ConvGeom, spec: ConvSpec, x: &mut [T]) {
    let (k_size, out_len) = (g.kernel, g.out_len);
    for ci in 0..g.c_in {
        let row_out = &mut x[ci * g.len..(ci + 1) * g.len];
        for k in 0..k_size {
            let row = &col[(ci * k_size + k) * out_len..(ci * k_size + k + 1) * out_len];
            for (o, &v) in row.iter().enumerate() {
                let idx = (o * spec.stride + k) as isize - spec.padding as isize;
                if idx >= 0 && (idx as usize) < g.len {
                    row_out[idx as usize] += v;
                }
            }
        }
    }
}

fn is_pointwise(g: &ConvGeom, spec: ConvSpec) -> bool {
    g.kernel == 1 && spec.stride == 1 && spec.padding == 0
}

/// Cross-correlation over the last axis. Weight shape is
/// `(c_out, c_in / groups, kernel)`.
pub fn conv1d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    let g = conv_geometry(input, weight, spec)?;
    if let Some(b) = bias {
        if b.len() != g.c_out {
            return Err(Error::Shape(format!(
                "conv bias has {} values for {} output channels",
                b.len(),
                g.c_out
            )));
        }
    }
    let mut out = Tensor::zeros(&[g.batch, g.c_out, g.out_len]);
    let in_stride = g.c_in * g.len;
    let out_stride = g.c_out * g.out_len;
    let x = input.data();
    let w = weight.data();
    if spec.groups <= 1 {
        let ck = g.c_in * g.kernel;
        Exec::Parallel.for_each_chunk_mut(out.data_mut(), out_stride, |b, y| {
            let xb = &x[b * in_stride..(b + 1) * in_stride];
            let mut scratch;
            let col: &[T] = if is_pointwise(&g, spec) {
                xb
            } else {
                scratch = vec![T::zero(); ck * g.out_len];
                im2col(xb, &g, spec, &mut scratch);
                &scratch
            };
            T::gemm(
                g.c_out,
                ck,
                g.out_len,
                w,
                (ck as isize, 1),
                col,
                (g.out_len as isize, 1),
                T::zero(),
                y,
                (g.out_len as isize, 1),
            );
        });
    } else {
        let cout_per_group = g.c_out / spec.groups;
        Exec::Parallel.for_each_chunk_mut(out.data_mut(), out_stride, |b, y| {
            let xb = &x[b * in_stride..(b + 1) * in_stride];
            for co in 0..g.c_out {
                let group = co / cout_per_group;
                let yrow = &mut y[co * g.out_len..(co + 1) * g.out_len];
                for cl in 0..g.cin_per_group {
                    let ci = group * g.cin_per_group + cl;
                    let xrow = &xb[ci * g.len..(ci + 1) * g.len];
                    let wrow = &w[(co * g.cin_per_group + cl) * g.kernel..][..g.kernel];
                    grouped_accumulate(xrow, wrow, spec, yrow);
                }
            }
        });
    }
    if let Some(b) = bias {
        let bd = b.data();
        for (i, row) in out.data_mut().chunks_mut(g.out_len).enumerate() {
            let bv = bd[i % g.c_out];
            row.iter_mut().for_each(|v| *v += bv);
        }
    }
    debug_check_finite(&out, "conv1d");
    Ok(out)
}

/// `y[o] += sum_k w[k] * x[o*stride + k - pad]` over the valid range.
fn grouped_accumulate<T: Real>(x: &[T], w: &[T], spec: ConvSpec, y: &mut [T]) {
    for (k, &wk) in w.iter().enumerate() {
        let (lo, hi) = valid_outputs(x.len(), y.len(), k, spec);
        if spec.stride == 1 {
            let start = lo + k - spec.padding;
            for (yv, &xv) in y[lo..hi].iter_mut().zip(&x[start..]) {
                *yv += wk * xv;
            }
        } else {
            for (o, yv) in y.iter_mut().enumerate().take(hi).skip(lo) {
                *yv += wk * x[o * spec.stride + k - spec.padding];
            }
        }
    }
}

/// Output positions `o` whose input index `o * stride + k - padding` lies
/// inside `0..len`, as a half-open range.
fn valid_outputs(len: usize, out_len: usize, k: usize, spec: ConvSpec) -> (usize, usize) {
    let lo = spec.padding.saturating_sub(k).div_ceil(spec.stride);
    let hi = (len + spec.padding).saturating_sub(k).div_ceil(spec.stride);
    (lo.min(out_len), hi.min(out_len).max(lo.min(out_len)))
}

pub fn conv1d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    spec: ConvSpec,
) -> Result<ConvGrads<T>> {
    let g = conv_geometry(input, weight, spec)?;
    if grad_out.shape() != [g.batch, g.c_out, g.out_len] {
        return Err(Error::Shape(format!(
            "conv backward: gradient shape {:?}",
            grad_out.shape()
        )));
    }
    let in_stride = g.c_in * g.len;
    let out_stride = g.c_out * g.out_len;
    let x = input.data();
    let w = weight.data();
    let gy = grad_out.data();
    let mut grad_in = Tensor::zeros(input.shape());
    let mut grad_w = Tensor::zeros(weight.shape());

    if spec.groups <= 1 {
        let ck = g.c_in * g.kernel;
        let per_batch: Vec<(Vec<T>, Vec<T>)> = Exec::Parallel.map_range(g.batch, |b| {
            let xb = &x[b * in_stride..(b + 1) * in_stride];
            let gyb = &gy[b * out_stride..(b + 1) * out_stride];
            let mut scratch;
            let pointwise = is_pointwise(&g, spec);
            let col: &[T] = if pointwise {
                xb
            } else {
                scratch = vec![T::zero(); ck * g.out_len];
                im2col(xb, &g, spec, &mut scratch);
                &scratch
            };
            let mut gw = vec![T::zero(); g.c_out * ck];
            T::gemm(
                g.c_out,
                g.out_len,
                ck,
                gyb,
                (g.out_len as isize, 1),
                col,
                (1, g.out_len as isize),
                T::zero(),
                &mut gw,
                (ck as isize, 1),
            );
            let mut gcol = vec![T::zero(); ck * g.out_len];
            T::gemm(
                ck,
                g.c_out,
                g.out_len,
                w,
                (1, ck as isize),
                gyb,
                (g.out_len as isize, 1),
                T::zero(),
                &mut gcol,
                (g.out_len as isize, 1),
            );
            let gx = if pointwise {
                gcol
            } else {
                let mut gx = vec![T::zero(); in_stride];
                col2im(&gcol, &g, spec, &mut gx);
                gx
            };
            (gw, gx)
        });
        for (b, (gw, gx)) in per_batch.into_iter().enumerate() {
            grad_w
                .data_mut()
                .iter_mut()
                .zip(&gw)
                .for_each(|(a, &v)| *a += v);
            grad_in.data_mut()[b * in_stride..(b + 1) * in_stride].copy_from_slice(&gx);
        }
    } else {
        let cout_per_group = g.c_out / spec.groups;
        let wlen = weight.len();
        let per_batch: Vec<(Vec<T>, Vec<T>)> = Exec::Parallel.map_range(g.batch, |b| {
            let xb = &x[b * in_stride..(b + 1) * in_stride];
            let gyb = &gy[b * out_stride..(b + 1) * out_stride];
            let mut gw = vec![T::zero(); wlen];
            let mut gx = vec![T::zero(); in_stride];
            let len = g.len as isize;
            for co in 0..g.c_out {
                let group = co / cout_per_group;
                let gyrow = &gyb[co * g.out_len..(co + 1) * g.out_len];
                for cl in 0..g.cin_per_group {
                    let ci = group * g.cin_per_group + cl;
                    let xrow = &xb[ci * g.len..(ci + 1) * g.len];
                    let gxrow = &mut gx[ci * g.len..(ci + 1) * g.len];
                    let wbase = (co * g.cin_per_group + cl) * g.kernel;
                    for k in 0..g.kernel {
                        let shift = k as isize - spec.padding as isize;
                        let wk = w[wbase + k];
                        let mut acc = T::zero();
                        for (o, &gv) in gyrow.iter().enumerate() {
                            let idx = (o * spec.stride) as isize + shift;
                            if idx >= 0 && idx < len {
                                acc += gv * xrow[idx as usize];
                                gxrow[idx as usize] += gv * wk;
                            }
                        }
                        gw[wbase + k] += acc;
                    }
                }
            }
            (gw, gx)
        });
        for (b, (gw, gx)) in per_batch.into_iter().enumerate() {
            grad_w
                .data_mut()
                .iter_mut()
                .zip(&gw)
                .for_each(|(a, &v)| *a += v);
            grad_in.data_mut()[b * in_stride..(b + 1) * in_stride].copy_from_slice(&gx);
        }
    }

    let mut grad_b = Tensor::zeros(&[g.c_out]);
    for (i, row) in gy.chunks(g.out_len).enumerate() {
        grad_b.data_mut()[i % g.c_out] += row.iter().copied().sum::<T>();
    }
    Ok(ConvGrads {
        input: grad_in,
        weight: grad_w,
        bias: grad_b,
    })
}

fn sqrt_half<T: Real>() -> T {
    T::from_f64(std::f64::consts::FRAC_1_SQRT_2)
}

/// Orthonormal single-level Haar analysis along the last axis. Odd lengths are
/// padded by repeating the final sample.
pub fn haar_dwt<T: Real>(input: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let (b, c, len) = input.dims3();
    let half = len.div_ceil(2);
    let mut low = Tensor::zeros(&[b, c, half]);
    let mut high = Tensor::zeros(&[b, c, half]);
    let s = sqrt_half::<T>();
    for ((x, lo), hi) in input
        .data()
        .chunks(len)
        .zip(low.data_mut().chunks_mut(half))
        .zip(high.data_mut().chunks_mut(half))
    {
        for t in 0..half {
            let a = x[2 * t];
            let z = if 2 * t + 1 < len { x[2 * t + 1] } else { a };
            lo[t] = (a + z) * s;
            hi[t] = (a - z) * s;
        }
    }
    (low, high)
}

/// Adjoint of [`haar_dwt`] for an input of length `input_len`.
pub fn haar_dwt_backward<T: Real>(grad_low: &Tensor<T>, grad_high: &Tensor<T>, input_len: usize) -> Tensor<T> {
    let (b, c, half) = grad_low.dims3();
    let mut gx = Tensor::zeros(&[b, c, input_len]);
    let s = sqrt_half::<T>();
    for ((g, gl), gh) in gx
        .data_mut()
        .chunks_mut(input_len)
        .zip(grad_low.data().chunks(half))
        .zip(grad_high.data().chunks(half))
    {
        for t in 0..half {
            let even = (gl[t] + gh[t]) * s;
            let odd = (gl[t] - gh[t]) * s;
            g[2 * t] += even;
            if 2 * t + 1 < input_len {
                g[2 * t + 1] += odd;
            } else {
                g[2 * t] += odd;
            }
        }
    }
    gx
}

/// Inverse Haar step producing `2 * half` samples.
pub fn haar_iwt<T: Real>(low: &Tensor<T>, high: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, _, half) = low.dims3();
    haar_iwt_cropped(low, high, 2 * half)
}

/// Inverse Haar step cropped to `out_len` (`2 * half` or `2 * half - 1`).
pub fn haar_iwt_cropped<T: Real>(low: &Tensor<T>, high: &Tensor<T>, out_len: usize) -> Result<Tensor<T>> {
    if low.shape() != high.shape() {
        return Err(Error::Shape(format!(
            "haar_iwt: bands {:?} and {:?}",
            low.shape(),
            high.shape()
        )));
    }
    let (b, c, half) = low.dims3();
    if out_len.div_ceil(2) != half {
        return Err(Error::Shape(format!(
            "haar_iwt: cannot produce {out_len} samples from {half} coefficients"
        )));
    }
    let mut out = Tensor::zeros(&[b, c, out_len]);
    let s = sqrt_half::<T>();
    for ((y, lo), hi) in out
        .data_mut()
        .chunks_mut(out_len)
        .zip(low.data().chunks(half))
        .zip(high.data().chunks(half))
    {
        for t in 0..half {
            y[2 * t] = (lo[t] + hi[t]) * s;
            if 2 * t + 1 < out_len {
                y[2 * t + 1] = (lo[t] - hi[t]) * s;
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`haar_iwt_cropped`].
pub fn haar_iwt_backward<T: Real>(grad_out: &Tensor<T>, half: usize) -> (Tensor<T>, Tensor<T>) {
    let (b, c, len) = grad_out.dims3();
    let mut gl = Tensor::zeros(&[b, c, half]);
    let mut gh = Tensor::zeros(&[b, c, half]);
    let s = sqrt_half::<T>();
    for ((g, lo), hi) in grad_out
        .data()
        .chunks(len)
        .zip(gl.data_mut().chunks_mut(half))
        .zip(gh.data_mut().chunks_mut(half))
    {
        for t in 0..half {
            let even = g[2 * t];
            let odd = if 2 * t + 1 < len { g[2 * t + 1] } else { T::zero() };
            lo[t] = (even + odd) * s;
            hi[t] = (even - odd) * s;
        }
    }
    (gl, gh)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Running statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::full(&[channels], T::one()),
        }
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

pub struct BnCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    batch_mean: Vec<f64>,
    batch_var_unbiased: Vec<f64>,
}

impl<T: Real> RunningStats<T> {
    /// Folds the batch statistics of a train-mode forward into the running
    /// estimates with momentum [`BN_MOMENTUM`].
    pub fn update(&mut self, cache: &BnCache<T>) {
        let momentum = BN_MOMENTUM;
        for (ci, (&m, &v)) in cache
            .batch_mean
            .iter()
            .zip(&cache.batch_var_unbiased)
            .enumerate()
        {
            let rm = &mut self.mean.data_mut()[ci];
            *rm = T::from_f64(rm.as_f64() * (1.0 - momentum) + m * momentum);
            let rv = &mut self.var.data_mut()[ci];
            *rv = T::from_f64(rv.as_f64() * (1.0 - momentum) + v * momentum);
        }
    }
}

/// Per-channel normalization over `(batch, length)`. Train mode normalizes
/// with batch statistics and returns a cache (feed it to
/// [`RunningStats::update`] to track running statistics); eval mode uses
/// `stats`.
pub fn batchnorm1d<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &RunningStats<T>,
    mode: BnMode,
) -> Result<(Tensor<T>, Option<BnCache<T>>)> {
    let (b, c, len) = input.dims3();
    if gamma.len() != c || beta.len() != c {
        return Err(Error::Shape(format!(
            "batchnorm: {c} channels, gamma {:?}, beta {:?}",
            gamma.shape(),
            beta.shape()
        )));
    }
    let eps = T::from_f64(BN_EPS);
    let x = input.data();
    let mut out = Tensor::zeros(input.shape());
    match mode {
        BnMode::Eval => {
            for bi in 0..b {
                for ci in 0..c {
                    let scale = gamma.data()[ci] / (stats.var.data()[ci] + eps).sqrt();
                    let shift = beta.data()[ci] - stats.mean.data()[ci] * scale;
                    let off = (bi * c + ci) * len;
                    for t in 0..len {
                        out.data_mut()[off + t] = x[off + t] * scale + shift;
                    }
                }
            }
            debug_check_finite(&out, "batchnorm1d");
            Ok((out, None))
        }
        BnMode::Train => {
            if b < 2 {
                return Err(Error::InvalidArgument(
                    "batchnorm in train mode needs a batch of at least 2".into(),
                ));
            }
            let n = (b * len) as f64;
            let mut xhat = Tensor::zeros(input.shape());
            let mut inv_std = vec![T::zero(); c];
            let mut batch_mean = vec![0.0; c];
            let mut batch_var_unbiased = vec![0.0; c];
            for ci in 0..c {
                // f64 accumulation keeps f32 statistics stable
                let mut sum = 0.0;
                for bi in 0..b {
                    sum += input.row(bi, ci).iter().map(|v| v.as_f64()).sum::<f64>();
                }
                let mean = sum / n;
                let mut sq = 0.0;
                for bi in 0..b {
                    sq += input
                        .row(bi, ci)
                        .iter()
                        .map(|v| (v.as_f64() - mean).powi(2))
                        .sum::<f64>();
                }
                let var = sq / n;
                let istd = 1.0 / (var + BN_EPS).sqrt();
                inv_std[ci] = T::from_f64(istd);
                let (gm, bt) = (gamma.data()[ci], beta.data()[ci]);
                let (mean_t, istd_t) = (T::from_f64(mean), T::from_f64(istd));
                for bi in 0..b {
                    let off = (bi * c + ci) * len;
                    for t in 0..len {
                        let h = (x[off + t] - mean_t) * istd_t;
                        xhat.data_mut()[off + t] = h;
                        out.data_mut()[off + t] = h * gm + bt;
                    }
                }
                batch_mean[ci] = mean;
                batch_var_unbiased[ci] = if n > 1.0 { var * n / (n - 1.0) } else { var };
            }
            debug_check_finite(&out, "batchnorm1d");
            Ok((
                out,
                Some(BnCache {
                    xhat,
                    inv_std,
                    batch_mean,
                    batch_var_unbiased,
                }),
            ))
        }
    }
}

/// Returns `(grad_input, grad_gamma, grad_beta)` for a train-mode forward.
pub fn batchnorm1d_backward<T: Real>(
    grad_out: &Tensor<T>,
    gamma: &Tensor<T>,
    cache: &BnCache<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (b, c, len) = grad_out.dims3();
    let n = T::from_f64((b * len) as f64);
    let mut gx = Tensor::zeros(grad_out.shape());
    let mut ggamma = Tensor::zeros(&[c]);
    let mut gbeta = Tensor::zeros(&[c]);
    for ci in 0..c {
        let mut sum_g = T::zero();
        let mut sum_gh = T::zero();
        for bi in 0..b {
            for (g, h) in grad_out.row(bi, ci).iter().zip(cache.xhat.row(bi, ci)) {
                sum_g += *g;
                sum_gh += *g * *h;
            }
        }
        gbeta.data_mut()[ci] = sum_g;
        ggamma.data_mut()[ci] = sum_gh;
        let k = gamma.data()[ci] * cache.inv_std[ci] / n;
        for bi in 0..b {
            let off = (bi * c + ci) * len;
            for t in 0..len {
                let g = grad_out.data()[off + t];
                let h = cache.xhat.data()[off + t];
                gx.data_mut()[off + t] = k * (n * g - sum_g - h * sum_gh);
            }
        }
    }
    (gx, ggamma, gbeta)
}

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.max(T::zero()))
}

/// Gradient through ReLU given its forward output.
pub fn relu_backward<T: Real>(grad_out: &Tensor<T>, output: &Tensor<T>) -> Tensor<T> {
    let mut g = grad_out.clone();
    g.data_mut()
        .iter_mut()
        .zip(output.data())
        .for_each(|(gv, &y)| {
            if y <= T::zero() {
                *gv = T::zero()
            }
        });
    g
}

pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn upsample_weights(src: usize, dst: usize, t: usize) -> (usize, usize, f64) {
    if src == 1 || dst == 1 {
        return (0, 0, 0.0);
    }
    let pos = t as f64 * (src - 1) as f64 / (dst - 1) as f64;
    let i = (pos.floor() as usize).min(src - 2);
    (i, i + 1, pos - i as f64)
}

/// Linear interpolation along the last axis with both endpoints aligned.
pub fn upsample_linear<T: Real>(input: &Tensor<T>, target_len: usize) -> Result<Tensor<T>> {
    let (b, c, len) = input.dims3();
    if target_len < len || len == 0 {
        return Err(Error::Shape(format!(
            "upsample: target {target_len} shorter than source {len}"
        )));
    }
    let weights: Vec<_> = (0..target_len)
        .map(|t| upsample_weights(len, target_len, t))
        .collect();
    let mut out = Tensor::zeros(&[b, c, target_len]);
    for (y, x) in out
        .data_mut()
        .chunks_mut(target_len)
        .zip(input.data().chunks(len))
    {
        for (yv, &(i, j, f)) in y.iter_mut().zip(&weights) {
            let f = T::from_f64(f);
            *yv = x[i] * (T::one() - f) + x[j] * f;
        }
    }
    Ok(out)
}

pub fn upsample_linear_backward<T: Real>(grad_out: &Tensor<T>, source_len: usize) -> Tensor<T> {
    let (b, c, len) = grad_out.dims3();
    let mut gx = Tensor::zeros(&[b, c, source_len]);
    for (gxr, g) in gx
        .data_mut()
        .chunks_mut(source_len)
        .zip(grad_out.data().chunks(len))
    {
        for (t, &gv) in g.iter().enumerate() {
            let (i, j, f) = upsample_weights(source_len, len, t);
            let f = T::from_f64(f);
            gxr[i] += gv * (T::one() - f);
            gxr[j] += gv * f;
        }
    }
    gx
}

pub const L2_EPS: f64 = 1e-8;

/// Normalizes every `(batch, :, t)` vector to unit length. Returns the output
/// and the clamped norms needed by the backward pass.
pub fn l2_normalize<T: Real>(input: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
    let (b, c, len) = input.dims3();
    let eps = T::from_f64(L2_EPS);
    let mut norms = vec![T::zero(); b * len];
    let x = input.data();
    for bi in 0..b {
        for ci in 0..c {
            let row = &x[(bi * c + ci) * len..][..len];
            for (n, &v) in norms[bi * len..(bi + 1) * len].iter_mut().zip(row) {
                *n += v * v;
            }
        }
    }
    norms.iter_mut().for_each(|n| *n = n.sqrt().max(eps));
    let mut out = Tensor::zeros(input.shape());
    for bi in 0..b {
        let nb = &norms[bi * len..(bi + 1) * len];
        for ci in 0..c {
            let off = (bi * c + ci) * len;
            for t in 0..len {
                out.data_mut()[off + t] = x[off + t] / nb[t];
            }
        }
    }
    (out, norms)
}

/// `dx = (dy - y (y . dy)) / n` where the norm was not clamped, `dy / eps`
/// otherwise.
pub fn l2_normalize_backward<T: Real>(grad_out: &Tensor<T>, output: &Tensor<T>, norms: &[T]) -> Tensor<T> {
    let (b, c, len) = grad_out.dims3();
    let eps = T::from_f64(L2_EPS);
    let g = grad_out.data();
    let y = output.data();
    let mut dots = vec![T::zero(); b * len];
    for bi in 0..b {
        for ci in 0..c {
            let off = (bi * c + ci) * len;
            for t in 0..len {
                dots[bi * len + t] += g[off + t] * y[off + t];
            }
        }
    }
    let mut gx = Tensor::zeros(grad_out.shape());
    for bi in 0..b {
        for ci in 0..c {
            let off = (bi * c + ci) * len;
            for t in 0..len {
                let n = norms[bi * len + t];
                gx.data_mut()[off + t] = if n > eps {
                    (g[off + t] - y[off + t] * dots[bi * len + t]) / n
                } else {
                    g[off + t] / eps
                };
            }
        }
    }
    gx
}
