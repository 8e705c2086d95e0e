//! Procedural signals with keypoint labels, and warped training pairs with
//! ground-truth correspondences.
//!
//! A sample is the sum of one or more waveform generators (sines, blocks,
//! sawtooth/triangle, Gaussian blobs), optionally flipped on a sub-interval
//! and tilted by a linear trend, plus Gaussian noise. Keypoints come from the
//! clean generators, never from the noise.

use std::f64::consts::PI;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::cpab::{CpaPrior, CpabTheta, CpabTransform};
use crate::{Error, Result, Signal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Waveform {
    Sine,
    Block,
    Sawtooth,
    Rbf,
}

impl Waveform {
    pub const ALL: [Waveform; 4] = [Waveform::Sine, Waveform::Block, Waveform::Sawtooth, Waveform::Rbf];
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub length: usize,
    /// Draw probabilities for sine, block, sawtooth and RBF generators.
    pub waveform_probs: [f64; 4],
    pub noise_sigma: f64,
    pub trend_enabled: bool,
    pub flip_enabled: bool,
    /// Upper bound on the number of summed generators.
    pub max_generators: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            length: 512,
            waveform_probs: [0.6, 0.15, 0.05, 0.2],
            noise_sigma: 0.1,
            trend_enabled: true,
            flip_enabled: true,
            max_generators: 2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.length < 32 {
            return Err(Error::InvalidArgument(format!(
                "signal length must be at least 32, got {}",
                self.length
            )));
        }
        if self.waveform_probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidArgument("negative waveform probability".into()));
        }
        let total: f64 = self.waveform_probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "waveform probabilities sum to {total}, expected 1"
            )));
        }
        if self.max_generators == 0 {
            return Err(Error::InvalidArgument("max_generators must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidArgument("noise sigma must be non-negative".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedSignal {
    pub signal: Signal,
    pub kp_mask: Vec<bool>,
}

impl AnnotatedSignal {
    pub fn len(&self) -> usize {
        self.signal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signal.is_empty()
    }

    pub fn keypoints(&self) -> Vec<usize> {
        mask_indices(&self.kp_mask)
    }
}

/// Two annotated views of the same underlying signal.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub original: AnnotatedSignal,
    pub warped: AnnotatedSignal,
    /// Warp producing `warped`.
    pub theta: CpabTheta,
    /// Warp producing `original` for fine-tuning pairs; `None` when
    /// `original` is the unwarped source.
    pub source_theta: Option<CpabTheta>,
    /// `(i, j)`: the i-th keypoint of `original` matches the j-th of `warped`.
    pub correspondences: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SineTerm {
    /// Cycles over the rendered support.
    pub freq: f64,
    pub amplitude: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    /// Center in `[0, 1]`.
    pub center: f64,
    /// Standard deviation as a fraction of the domain.
    pub width: f64,
    pub amplitude: f64,
}

/// One waveform generator with explicit parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Component {
    /// Superposed sines, optionally confined to `[start, end)`.
    Sines {
        terms: Vec<SineTerm>,
        support: Option<(usize, usize)>,
    },
    /// Piecewise-constant levels; `levels.len() == edges.len() + 1`.
    Blocks { edges: Vec<usize>, levels: Vec<f64> },
    /// Rising sawtooth, or a symmetric triangle wave when `triangle` is set.
    Sawtooth {
        freq: f64,
        amplitude: f64,
        phase: f64,
        triangle: bool,
    },
    Rbf { blobs: Vec<Blob> },
}

impl Component {
    /// Clean samples and salient indices for a signal of length `len`.
    pub fn render(&self, len: usize) -> (Vec<f64>, Vec<usize>) {
        let scale = (len - 1) as f64;
        match self {
            Component::Sines { terms, support } => {
                let (start, end) = support.unwrap_or((0, len));
                let span = (end - start).max(2);
                let mut x = vec![0.0; len];
                for (t, xt) in x.iter_mut().enumerate().take(end).skip(start) {
                    let g = (t - start) as f64 / (span - 1) as f64;
                    *xt = terms
                        .iter()
                        .map(|s| s.amplitude * (2.0 * PI * s.freq * g + s.phase).sin())
                        .sum();
                }
                let mut kps: Vec<usize> = strict_extrema(&x[start..end])
                    .into_iter()
                    .map(|i| i + start)
                    .collect();
                if start > 0 {
                    kps.push(start);
                }
                if end < len {
                    kps.push(end - 1);
                }
                (x, kps)
            }
            Component::Blocks { edges, levels } => {
                let mut x = vec![0.0; len];
                let mut block = 0;
                for (t, xt) in x.iter_mut().enumerate() {
                    while block < edges.len() && t >= edges[block] {
                        block += 1;
                    }
                    *xt = levels[block];
                }
                (x, edges.clone())
            }
            Component::Sawtooth {
                freq,
                amplitude,
                phase,
                triangle,
            } => {
                let x: Vec<f64> = (0..len)
                    .map(|t| {
                        let u = (freq * t as f64 / scale + phase).rem_euclid(1.0);
                        if *triangle {
                            amplitude * (1.0 - 4.0 * (u - 0.5).abs())
                        } else {
                            amplitude * (2.0 * u - 1.0)
                        }
                    })
                    .collect();
                let kps = if *triangle {
                    strict_extrema(&x)
                } else {
                    // last sample before each reset
                    (0..len - 1).filter(|&t| x[t + 1] < x[t]).collect()
                };
                (x, kps)
            }
            Component::Rbf { blobs } => {
                let x = (0..len)
                    .map(|t| {
                        let g = t as f64 / scale;
                        blobs
                            .iter()
                            .map(|b| {
                                let z = (g - b.center) / b.width;
                                b.amplitude * (-0.5 * z * z).exp()
                            })
                            .sum()
                    })
                    .collect();
                let kps = blobs
                    .iter()
                    .map(|b| ((b.center * scale).round() as usize).min(len - 1))
                    .collect();
                (x, kps)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trend {
    pub slope: f64,
    pub intercept: f64,
}

/// Sign inversion of `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Flip {
    pub start: usize,
    pub end: usize,
}

/// Everything needed to render a clean sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Recipe {
    pub components: Vec<Component>,
    pub flip: Option<Flip>,
    pub trend: Option<Trend>,
}

impl Recipe {
    pub fn render(&self, len: usize) -> AnnotatedSignal {
        let mut signal = vec![0.0; len];
        let mut kp_mask = vec![false; len];
        for c in &self.components {
            let (x, kps) = c.render(len);
            signal.iter_mut().zip(&x).for_each(|(s, v)| *s += v);
            for k in kps {
                kp_mask[k] = true;
            }
        }
        if let Some(f) = self.flip {
            signal[f.start..f.end].iter_mut().for_each(|v| *v = -*v);
            kp_mask[f.start] = true;
            if f.end < len {
                kp_mask[f.end] = true;
            }
        }
        if let Some(tr) = self.trend {
            let scale = (len - 1) as f64;
            for (t, v) in signal.iter_mut().enumerate() {
                *v += tr.intercept + tr.slope * t as f64 / scale;
            }
        }
        AnnotatedSignal { signal, kp_mask }
    }
}

fn draw_component<R: Rng + ?Sized>(kind: Waveform, len: usize, rng: &mut R) -> Component {
    match kind {
        Waveform::Sine => {
            let n_terms = rng.random_range(1..=3);
            let terms = (0..n_terms)
                .map(|_| SineTerm {
                    freq: rng.random_range(1.0..=8.0),
                    amplitude: rng.random_range(0.3..=1.0),
                    phase: rng.random_range(0.0..2.0 * PI),
                })
                .collect();
            let support = if rng.random_bool(0.25) {
                let span = rng.random_range(len / 4..=3 * len / 4);
                let start = rng.random_range(1..len - span);
                Some((start, start + span))
            } else {
                None
            };
            Component::Sines { terms, support }
        }
        Waveform::Block => {
            let n_blocks = rng.random_range(2..=8);
            let margin = len / 16;
            let mut edges: Vec<usize> = Vec::new();
            let min_gap = (len / 32).max(4);
            let mut attempts = 0;
            while edges.len() < n_blocks - 1 && attempts < 1000 {
                attempts += 1;
                let e = rng.random_range(margin..len - margin);
                if edges.iter().all(|&o| o.abs_diff(e) >= min_gap) {
                    edges.push(e);
                }
            }
            edges.sort_unstable();
            let mut levels = vec![rng.random_range(-1.0..=1.0)];
            while levels.len() < edges.len() + 1 {
                let prev = *levels.last().unwrap();
                let next: f64 = rng.random_range(-1.0..=1.0);
                if (next - prev).abs() >= 0.3 {
                    levels.push(next);
                }
            }
            Component::Blocks { edges, levels }
        }
        Waveform::Sawtooth => Component::Sawtooth {
            freq: rng.random_range(1.0..=6.0),
            amplitude: rng.random_range(0.3..=1.0),
            phase: rng.random_range(0.0..1.0),
            triangle: rng.random_bool(0.5),
        },
        Waveform::Rbf => {
            let n_blobs = rng.random_range(1..=5);
            let blobs = (0..n_blobs)
                .map(|_| {
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    Blob {
                        center: rng.random_range(0.05..=0.95),
                        width: rng.random_range(0.02..=0.15),
                        amplitude: sign * rng.random_range(0.5..=1.5),
                    }
                })
                .collect();
            Component::Rbf { blobs }
        }
    }
}

/// Draws generator types and parameters for one sample.
pub fn draw_recipe<R: Rng + ?Sized>(config: &SynthConfig, rng: &mut R) -> Recipe {
    let len = config.length;
    let picker = WeightedIndex::new(config.waveform_probs).expect("validated probabilities");
    let mut n_gen = 1;
    while n_gen < config.max_generators && rng.random_bool(0.3) {
        n_gen += 1;
    }
    let components = (0..n_gen)
        .map(|_| draw_component(Waveform::ALL[picker.sample(rng)], len, rng))
        .collect();
    let flip = (config.flip_enabled && rng.random_bool(0.3)).then(|| {
        let span = rng.random_range(len / 8..=len / 2);
        let start = rng.random_range(1..len - span);
        Flip {
            start,
            end: start + span,
        }
    });
    let trend = (config.trend_enabled && rng.random_bool(0.5)).then(|| Trend {
        slope: rng.random_range(-0.5..=0.5),
        intercept: rng.random_range(-0.3..=0.3),
    });
    Recipe {
        components,
        flip,
        trend,
    }
}

/// Draws recipes until the keypoint count lies in `[2, L/4]`.
pub fn generate_clean_with<R: Rng + ?Sized>(config: &SynthConfig, rng: &mut R) -> AnnotatedSignal {
    loop {
        let sample = draw_recipe(config, rng).render(config.length);
        let n = sample.kp_mask.iter().filter(|&&m| m).count();
        if (2..=config.length / 4).contains(&n) {
            return sample;
        }
    }
}

pub fn add_noise<R: Rng + ?Sized>(x: &mut [f64], sigma: f64, rng: &mut R) {
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        x.iter_mut().for_each(|v| *v += normal.sample(rng));
    }
}

pub fn generate_sample_with<R: Rng + ?Sized>(config: &SynthConfig, rng: &mut R) -> AnnotatedSignal {
    let mut sample = generate_clean_with(config, rng);
    add_noise(&mut sample.signal, config.noise_sigma, rng);
    sample
}

/// One annotated sample, deterministic in `config.seed`.
pub fn generate_sample(config: &SynthConfig) -> Result<AnnotatedSignal> {
    config.validate()?;
    Ok(generate_sample_with(config, &mut ChaCha8Rng::seed_from_u64(config.seed)))
}

/// Strict local extrema plus uniquely attained global extrema.
pub fn annotate_keypoints(x: &[f64]) -> Result<Vec<bool>> {
    if x.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 samples to annotate, got {}",
            x.len()
        )));
    }
    let mut mask = vec![false; x.len()];
    for t in strict_extrema(x) {
        mask[t] = true;
    }
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    for target in [max, min] {
        let mut hits = x.iter().enumerate().filter(|(_, &v)| v == target);
        if let (Some((i, _)), None) = (hits.next(), hits.next()) {
            mask[i] = true;
        }
    }
    Ok(mask)
}

/// Indices where the discrete derivative changes sign. Flat runs count as a
/// single extremum at their midpoint.
pub fn strict_extrema(x: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev_sign = 0i8;
    let mut run_start = 0;
    for t in 0..x.len().saturating_sub(1) {
        let d = x[t + 1] - x[t];
        let sign = if d > 0.0 {
            1
        } else if d < 0.0 {
            -1
        } else {
            0
        };
        if sign == 0 {
            continue;
        }
        if prev_sign != 0 && sign != prev_sign {
            out.push((run_start + t) / 2);
        }
        prev_sign = sign;
        run_start = t + 1;
    }
    out
}

pub fn mask_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect()
}

/// Builds a pair from a clean sample and a warp. Noise is drawn separately for
/// each view after warping.
pub fn pair_from_clean<R: Rng + ?Sized>(
    clean: &AnnotatedSignal,
    transform: &CpabTransform,
    noise_sigma: f64,
    rng: &mut R,
) -> TrainingPair {
    let warp = transform.warp_keypoints(&clean.kp_mask);
    let mut warped_signal = transform.warp_signal(&clean.signal);
    let mut original = clean.clone();
    add_noise(&mut original.signal, noise_sigma, rng);
    add_noise(&mut warped_signal, noise_sigma, rng);
    let correspondences = rank_pairs(&clean.kp_mask, &warp.mask, &warp.correspondences);
    TrainingPair {
        original,
        warped: AnnotatedSignal {
            signal: warped_signal,
            kp_mask: warp.mask,
        },
        theta: transform.theta().clone(),
        source_theta: None,
        correspondences,
    }
}

/// Turns `(index in a, index in b)` pairs into `(rank in a, rank in b)`.
fn rank_pairs(mask_a: &[bool], mask_b: &[bool], pairs: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let rank = |mask: &[bool]| {
        let mut r = vec![usize::MAX; mask.len()];
        let mut k = 0;
        for (i, &m) in mask.iter().enumerate() {
            if m {
                r[i] = k;
                k += 1;
            }
        }
        r
    };
    let (ra, rb) = (rank(mask_a), rank(mask_b));
    pairs.iter().map(|&(p, q)| (ra[p], rb[q])).collect()
}

pub fn make_training_pair_with<R: Rng + ?Sized>(
    config: &SynthConfig,
    prior: &CpaPrior,
    rng: &mut R,
) -> TrainingPair {
    let clean = generate_clean_with(config, rng);
    let transform = prior.sample_transform_with(rng);
    pair_from_clean(&clean, &transform, config.noise_sigma, rng)
}

/// A synthetic sample and its warped copy, deterministic in `config.seed`.
pub fn make_training_pair(config: &SynthConfig, prior: &CpaPrior) -> Result<TrainingPair> {
    config.validate()?;
    Ok(make_training_pair_with(
        config,
        prior,
        &mut ChaCha8Rng::seed_from_u64(config.seed),
    ))
}

/// Two independently warped views of `x` with heuristic keypoints.
pub fn finetune_pair_from_transforms(
    x: &[f64],
    first: &CpabTransform,
    second: &CpabTransform,
) -> Result<TrainingPair> {
    let mask = annotate_keypoints(x)?;
    let w1 = first.warp_keypoints(&mask);
    let w2 = second.warp_keypoints(&mask);
    let mut to_second = vec![None; x.len()];
    for &(p, q) in &w2.correspondences {
        to_second[p] = Some(q);
    }
    let linked: Vec<(usize, usize)> = w1
        .correspondences
        .iter()
        .filter_map(|&(p, q1)| to_second[p].map(|q2| (q1, q2)))
        .collect();
    let correspondences = rank_pairs(&w1.mask, &w2.mask, &linked);
    Ok(TrainingPair {
        original: AnnotatedSignal {
            signal: first.warp_signal(x),
            kp_mask: w1.mask,
        },
        warped: AnnotatedSignal {
            signal: second.warp_signal(x),
            kp_mask: w2.mask,
        },
        theta: second.theta().clone(),
        source_theta: Some(first.theta().clone()),
        correspondences,
    })
}

pub fn make_finetune_pair<R: Rng + ?Sized>(
    x: &[f64],
    prior: &CpaPrior,
    rng: &mut R,
) -> Result<TrainingPair> {
    let first = prior.sample_transform_with(rng);
    let second = prior.sample_transform_with(rng);
    finetune_pair_from_transforms(x, &first, &second)
}
