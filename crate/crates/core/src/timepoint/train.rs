//! Synthetic pre-training and fine-tuning loops.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{desc_loss, kp_loss, kp_loss_grad_logits, NEGATIVE_MARGIN, POSITIVE_MARGIN};
use super::model::{ModelCache, ModelOutput, TimePointModel};
use crate::cpab::CpaPrior;
use crate::par::Exec;
use crate::synthalign::{make_finetune_pair, make_training_pair_with, SynthConfig, TrainingPair};
use crate::tensornet::ops::BnMode;
use crate::tensornet::{cosine_lr, AdamW, Real, Tensor};
use crate::{Error, Result, Signal};

/// Batch-mean loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub kp_x: f64,
    pub kp_xw: f64,
    pub desc: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.kp_x + self.kp_xw + self.desc
    }

    fn is_finite(&self) -> bool {
        self.kp_x.is_finite() && self.kp_xw.is_finite() && self.desc.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub lr: f64,
    pub parts: LossParts,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossTrace {
    pub records: Vec<LossRecord>,
}

impl LossTrace {
    pub const CSV_HEADER: &'static str = "iteration,lr,kp_loss_x,kp_loss_xw,desc_loss,total";

    pub fn totals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.parts.total()).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let p = r.parts;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.iteration,
                r.lr,
                p.kp_x,
                p.kp_xw,
                p.desc,
                p.total()
            );
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub iters: usize,
    /// Pairs per step; the network sees `2 * batch` signals.
    pub batch: usize,
    pub base_lr: f64,
    pub seed: u64,
    pub synth: SynthConfig,
    pub prior: CpaPrior,
    pub optimizer: AdamW,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iters: 2000,
            batch: 16,
            base_lr: 1e-4,
            seed: 0,
            synth: SynthConfig::default(),
            prior: CpaPrior::default(),
            optimizer: AdamW::default(),
            exec: Exec::default(),
        }
    }
}

/// Stacks `[originals; warped]` into a `(2B, 1, L)` batch.
pub fn stack_pairs<T: Real>(pairs: &[TrainingPair]) -> Result<Tensor<T>> {
    let len = pairs[0].original.len();
    let mut data = Vec::with_capacity(2 * pairs.len() * len);
    for view in [0, 1] {
        for p in pairs {
            let s = if view == 0 { &p.original } else { &p.warped };
            if s.len() != len {
                return Err(Error::Shape("training pairs must share one length".into()));
            }
            data.extend(s.signal.iter().map(|&v| T::from_f64(v)));
        }
    }
    Tensor::from_vec(&[2 * pairs.len(), 1, len], data)
}

fn gather_rows<T: Real>(desc: &Tensor<T>, b: usize, indices: &[usize]) -> Vec<T> {
    let dim = desc.dims3().1;
    let mut out = Vec::with_capacity(indices.len() * dim);
    for &t in indices {
        out.extend((0..dim).map(|d| desc.row(b, d)[t]));
    }
    out
}

fn scatter_rows<T: Real>(grad: &mut Tensor<T>, b: usize, indices: &[usize], rows: &[T]) {
    let dim = grad.dims3().1;
    for (k, &t) in indices.iter().enumerate() {
        for d in 0..dim {
            grad.row_mut(b, d)[t] += rows[k * dim + d];
        }
    }
}

/// Batch-mean objective and its gradients with respect to the logits and the
/// descriptors.
pub fn objective<T: Real>(out: &ModelOutput<T>, pairs: &[TrainingPair]) -> (LossParts, Tensor<T>, Tensor<T>) {
    let nb = pairs.len();
    let scale = 1.0 / nb as f64;
    let mut parts = LossParts::default();
    let mut g_logits = Tensor::zeros(out.logits.shape());
    let mut g_desc = Tensor::zeros(out.descriptors.shape());
    let dim = out.descriptors.dims3().1;
    for (b, pair) in pairs.iter().enumerate() {
        for (row, labels, acc) in [
            (b, &pair.original.kp_mask, &mut parts.kp_x),
            (nb + b, &pair.warped.kp_mask, &mut parts.kp_xw),
        ] {
            let s = out.scores.row(row, 0);
            *acc += kp_loss(s, labels) * scale;
            let g = kp_loss_grad_logits(s, labels);
            for (dst, gv) in g_logits.row_mut(row, 0).iter_mut().zip(g) {
                *dst = gv * T::from_f64(scale);
            }
        }
        let kp_a = pair.original.keypoints();
        let kp_b = pair.warped.keypoints();
        let da = gather_rows(&out.descriptors, b, &kp_a);
        let db = gather_rows(&out.descriptors, nb + b, &kp_b);
        let l = desc_loss(&da, &db, dim, &pair.correspondences, (POSITIVE_MARGIN, NEGATIVE_MARGIN));
        parts.desc += l.value * scale;
        let s = T::from_f64(scale);
        let ga: Vec<T> = l.grad_a.into_iter().map(|v| v * s).collect();
        let gb: Vec<T> = l.grad_b.into_iter().map(|v| v * s).collect();
        scatter_rows(&mut g_desc, b, &kp_a, &ga);
        scatter_rows(&mut g_desc, nb + b, &kp_b, &gb);
    }
    (parts, g_logits, g_desc)
}

/// Train-mode forward and backward on a batch of pairs. Gradients are reset
/// first; running statistics are left untouched.
pub fn loss_and_grad<T: Real>(
    model: &mut TimePointModel<T>,
    pairs: &[TrainingPair],
) -> Result<(LossParts, ModelCache<T>)> {
    if pairs.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let input = stack_pairs(pairs)?;
    let (out, cache) = model.forward(&input, BnMode::Train)?;
    let (parts, g_logits, g_desc) = objective(&out, pairs);
    model.zero_grad();
    model.backward(&cache, &g_logits, &g_desc)?;
    Ok((parts, cache))
}

/// Eval-mode loss on a batch, without touching gradients or statistics.
pub fn evaluate<T: Real>(model: &TimePointModel<T>, pairs: &[TrainingPair]) -> Result<LossParts> {
    if pairs.is_empty() {
        return Err(Error::Empty("evaluation batch"));
    }
    let input = stack_pairs(pairs)?;
    let (out, _) = model.forward(&input, BnMode::Eval)?;
    Ok(objective(&out, pairs).0)
}

/// One optimization step.
pub fn train_step<T: Real>(
    model: &mut TimePointModel<T>,
    pairs: &[TrainingPair],
    lr: f64,
    optimizer: &AdamW,
    iteration: usize,
) -> Result<LossRecord> {
    let (parts, cache) = loss_and_grad(model, pairs)?;
    if !parts.is_finite() {
        return Err(Error::NonFiniteLoss {
            iteration,
            detail: format!("{parts:?}"),
        });
    }
    model.commit_stats(&cache);
    model.for_each_param_mut(&mut |_, p| optimizer.step(p, lr));
    if !model.all_finite() {
        return Err(Error::NonFiniteLoss {
            iteration,
            detail: "parameters became non-finite".into(),
        });
    }
    Ok(LossRecord { iteration, lr, parts })
}

/// Independent generator per (seed, iteration, slot).
fn pair_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws the training batch for `iteration`.
pub fn synthetic_batch(config: &TrainConfig, iteration: usize) -> Vec<TrainingPair> {
    let base = (iteration * config.batch) as u64;
    config.exec.map_range(config.batch, |b| {
        let mut rng = pair_rng(config.seed, base + b as u64);
        make_training_pair_with(&config.synth, &config.prior, &mut rng)
    })
}

/// On-the-fly training: every iteration draws fresh pairs.
pub fn train<T: Real>(model: &mut TimePointModel<T>, config: &TrainConfig) -> Result<LossTrace> {
    train_with_progress(model, config, |_| {})
}

pub fn train_with_progress<T: Real>(
    model: &mut TimePointModel<T>,
    config: &TrainConfig,
    mut progress: impl FnMut(&LossRecord),
) -> Result<LossTrace> {
    config.synth.validate()?;
    if config.batch == 0 {
        return Err(Error::InvalidArgument("batch must be positive".into()));
    }
    let mut trace = LossTrace::default();
    for it in 0..config.iters {
        let pairs = synthetic_batch(config, it);
        let lr = cosine_lr(it, config.iters, config.base_lr);
        let record = train_step(model, &pairs, lr, &config.optimizer, it + 1)?;
        progress(&record);
        trace.records.push(record);
    }
    Ok(trace)
}

#[derive(Debug, Clone)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch: usize,
    pub base_lr: f64,
    pub seed: u64,
    /// Signals are resampled to this length first.
    pub length: usize,
    pub prior: CpaPrior,
    pub optimizer: AdamW,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch: 16,
            base_lr: 1e-4,
            seed: 0,
            length: 512,
            prior: CpaPrior::default(),
            optimizer: AdamW::default(),
        }
    }
}

/// Fine-tunes on unlabeled signals: each step warps every signal twice and
/// uses extremum keypoints as labels.
pub fn finetune<T: Real>(
    model: &mut TimePointModel<T>,
    signals: &[Signal],
    config: &FinetuneConfig,
) -> Result<LossTrace> {
    let mut trace = LossTrace::default();
    if config.epochs == 0 {
        return Ok(trace);
    }
    if signals.is_empty() {
        return Err(Error::Empty("fine-tuning dataset"));
    }
    if config.batch == 0 {
        return Err(Error::InvalidArgument("batch must be positive".into()));
    }
    let data: Vec<Signal> = signals
        .iter()
        .map(|s| crate::data::resample(s, config.length))
        .collect();
    let steps_per_epoch = data.len().div_ceil(config.batch);
    let total = config.epochs * steps_per_epoch;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch) {
            let pairs = chunk
                .iter()
                .map(|&i| make_finetune_pair(&data[i], &config.prior, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let lr = cosine_lr(step, total, config.base_lr);
            step += 1;
            trace.records.push(train_step(model, &pairs, lr, &config.optimizer, step)?);
        }
    }
    Ok(trace)
}
