//! Labeled datasets: UCR TSV files, the binary dataset container,
//! resampling and perturbations.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::container::{self, NamedTensor};
use crate::interp::sample_linear;
use crate::{Error, Result, Signal};

/// Shortest signal accepted by the experiment drivers.
pub const MIN_SIGNAL_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    pub signals: Vec<Signal>,
    pub labels: Vec<i64>,
    /// Length of the series before any resampling.
    pub source_length: usize,
    /// Optional keypoint masks, one per signal.
    pub masks: Option<Vec<Vec<bool>>>,
}

impl LabeledDataset {
    pub fn new(name: impl Into<String>, signals: Vec<Signal>, labels: Vec<i64>) -> Result<Self> {
        if signals.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if signals.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} signals but {} labels",
                signals.len(),
                labels.len()
            )));
        }
        let source_length = signals[0].len();
        Ok(Self {
            name: name.into(),
            signals,
            labels,
            source_length,
            masks: None,
        })
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    /// Resamples every signal to `target` points.
    pub fn resampled(&self, target: usize) -> Self {
        Self {
            signals: self.signals.iter().map(|s| resample(s, target)).collect(),
            masks: None,
            ..self.clone()
        }
    }

    /// Errors when any signal is shorter than [`MIN_SIGNAL_LEN`].
    pub fn check_min_length(&self) -> Result<()> {
        match self.signals.iter().map(Vec::len).min() {
            Some(l) if l < MIN_SIGNAL_LEN => Err(Error::InvalidArgument(format!(
                "dataset {}: signals of length {l} are shorter than {MIN_SIGNAL_LEN}",
                self.name
            ))),
            _ => Ok(()),
        }
    }
}

/// Parses UCR-style TSV: one series per line, label first.
pub fn parse_ucr_tsv(text: &str, name: &str) -> Result<LabeledDataset> {
    let mut signals = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t').map(str::trim);
        let label_tok = fields.next().unwrap_or_default();
        let label: f64 = label_tok.parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("bad label {label_tok:?}"),
        })?;
        if !label.is_finite() {
            return Err(Error::Parse {
                line: lineno,
                msg: "label is not finite".into(),
            });
        }
        let values = fields
            .map(|tok| match tok.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse {
                    line: lineno,
                    msg: format!("bad or missing value {tok:?}"),
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        if values.is_empty() {
            return Err(Error::Parse {
                line: lineno,
                msg: "row has no values".into(),
            });
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("row has {} values, expected {w}", values.len()),
                })
            }
            _ => {}
        }
        labels.push(label.round() as i64);
        signals.push(values);
    }
    if signals.is_empty() {
        return Err(Error::Empty("UCR file"));
    }
    LabeledDataset::new(name, signals, labels)
}

pub fn load_ucr_tsv(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_ucr_tsv(&text, &name)
}

pub fn format_ucr_tsv(ds: &LabeledDataset) -> String {
    let mut out = String::new();
    for (s, l) in ds.signals.iter().zip(&ds.labels) {
        let _ = write!(out, "{l}");
        for v in s {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    out
}

pub fn save_ucr_tsv(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, format_ucr_tsv(ds))?;
    Ok(())
}

/// Stores a dataset as `signals (n, L)`, `labels (n)` and, when present,
/// `masks (n, L)` with 0/1 entries.
pub fn dataset_tensors(ds: &LabeledDataset) -> Result<Vec<NamedTensor>> {
    let len = ds.signals[0].len();
    if ds.signals.iter().any(|s| s.len() != len) {
        return Err(Error::Shape("container datasets need equal-length signals".into()));
    }
    let n = ds.len();
    let mut out = vec![
        NamedTensor::new(
            "signals",
            vec![n, len],
            ds.signals.iter().flatten().map(|&v| v as f32).collect(),
        )?,
        NamedTensor::new("labels", vec![n], ds.labels.iter().map(|&l| l as f32).collect())?,
        NamedTensor::new("source_length", vec![1], vec![ds.source_length as f32])?,
    ];
    if let Some(masks) = &ds.masks {
        out.push(NamedTensor::new(
            "masks",
            vec![n, len],
            masks.iter().flatten().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
        )?);
    }
    Ok(out)
}

pub fn dataset_from_tensors(name: &str, tensors: &[NamedTensor]) -> Result<LabeledDataset> {
    let get = |key: &str| tensors.iter().find(|t| t.name == key);
    let sig = get("signals").ok_or_else(|| Error::Checkpoint("missing signals tensor".into()))?;
    let lab = get("labels").ok_or_else(|| Error::Checkpoint("missing labels tensor".into()))?;
    let [n, len] = sig.dims[..] else {
        return Err(Error::Checkpoint(format!("signals tensor has dims {:?}", sig.dims)));
    };
    if lab.dims != [n] {
        return Err(Error::Checkpoint(format!("labels tensor has dims {:?}", lab.dims)));
    }
    let signals = sig
        .data
        .chunks(len.max(1))
        .map(|c| c.iter().map(|&v| v as f64).collect())
        .collect();
    let labels = lab.data.iter().map(|&v| v.round() as i64).collect();
    let mut ds = LabeledDataset::new(name, signals, labels)?;
    if let Some(src) = get("source_length").and_then(|t| t.data.first()) {
        ds.source_length = *src as usize;
    }
    if let Some(m) = get("masks") {
        if m.dims != [n, len] {
            return Err(Error::Checkpoint(format!("masks tensor has dims {:?}", m.dims)));
        }
        ds.masks = Some(
            m.data
                .chunks(len.max(1))
                .map(|c| c.iter().map(|&v| v > 0.5).collect())
                .collect(),
        );
    }
    Ok(ds)
}

pub fn save_dataset(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    container::save(path, &dataset_tensors(ds)?)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    dataset_from_tensors(&name, &container::load(path)?)
}

/// Loads `.tsv` files as UCR text and anything else as a dataset container.
pub fn load_any(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("tsv") | Some("txt") => load_ucr_tsv(path),
        _ => load_dataset(path),
    }
}

/// Linear interpolation onto `target` uniformly spaced points; both
/// endpoints are kept.
pub fn resample(x: &[f64], target: usize) -> Signal {
    if x.len() == target {
        return x.to_vec();
    }
    match (x.len(), target) {
        (_, 0) => Vec::new(),
        (0, _) => vec![0.0; target],
        (1, _) => vec![x[0]; target],
        (_, 1) => vec![x[0]],
        (n, m) => {
            let scale = (n - 1) as f64 / (m - 1) as f64;
            (0..m).map(|t| sample_linear(x, t as f64 * scale)).collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PerturbKind {
    Jitter,
    Blur,
}

impl PerturbKind {
    /// Noise sigma for jitter, kernel sigma in samples for blur.
    pub fn sigma(self, level: u8) -> Result<f64> {
        match (self, level) {
            (PerturbKind::Jitter, 1) => Ok(0.1),
            (PerturbKind::Jitter, 2) => Ok(0.3),
            (PerturbKind::Blur, 1) => Ok(1.0),
            (PerturbKind::Blur, 2) => Ok(3.0),
            _ => Err(Error::InvalidArgument(format!("perturbation level {level} (expected 1 or 2)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PerturbKind::Jitter => "jitter",
            PerturbKind::Blur => "blur",
        }
    }
}

impl std::str::FromStr for PerturbKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jitter" => Ok(Self::Jitter),
            "blur" => Ok(Self::Blur),
            other => Err(Error::InvalidArgument(format!("unknown perturbation {other:?}"))),
        }
    }
}

pub fn perturb<R: Rng + ?Sized>(x: &[f64], kind: PerturbKind, level: u8, rng: &mut R) -> Result<Signal> {
    Ok(perturb_with_sigma(x, kind, kind.sigma(level)?, rng))
}

pub fn perturb_with_sigma<R: Rng + ?Sized>(x: &[f64], kind: PerturbKind, sigma: f64, rng: &mut R) -> Signal {
    match kind {
        PerturbKind::Jitter => {
            if sigma <= 0.0 {
                return x.to_vec();
            }
            let noise = Normal::new(0.0, sigma).expect("positive sigma");
            x.iter().map(|&v| v + noise.sample(rng)).collect()
        }
        PerturbKind::Blur => gaussian_blur(x, sigma),
    }
}

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Gaussian smoothing with a kernel truncated at `3 sigma`, reflected
/// boundaries.
pub fn gaussian_blur(x: &[f64], sigma: f64) -> Signal {
    if sigma <= 0.0 || x.is_empty() {
        return x.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let n = x.len();
    (0..n as isize)
        .map(|t| {
            kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * x[reflect(t + k as isize - radius, n)])
                .sum()
        })
        .collect()
}
