//! Experiment drivers: runtime scaling, kNN classification, robustness to
//! perturbations, and alignment quality against known warps.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::align::{
    align_sparse, dense_map_from_pairs, dtw, knn_classify, prepare_tokens, CostFn, Distance,
    KnnConfig, Seq, TokenMode,
};
use crate::cpab::CpaPrior;
use crate::data::{perturb, resample, LabeledDataset, PerturbKind};
use crate::par::Exec;
use crate::synthalign::{add_noise, generate_clean_with, generate_sample_with, SynthConfig, Waveform};
use crate::timepoint::{ExtractOptions, TimePointModel};
use crate::{Error, Result, Signal};

/// Environment variable consulted when no seed is given explicitly.
pub const SEED_ENV: &str = "TIMEPOINT_SEED";

/// Explicit seed, else `TIMEPOINT_SEED`, else `default`.
pub fn resolve_seed(explicit: Option<u64>, default: u64) -> u64 {
    explicit
        .or_else(|| std::env::var(SEED_ENV).ok().and_then(|v| v.trim().parse().ok()))
        .unwrap_or(default)
}

/// Independent generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub experiment: String,
    pub dataset: String,
    pub method: String,
    pub ratio: f64,
    pub gamma: Option<f64>,
    pub accuracy: Option<f64>,
    pub wall_ms: Option<f64>,
    pub dp_cells: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub const CSV_HEADER: &'static str = "experiment,dataset,method,ratio,gamma,accuracy,wall_ms,dp_cells";

    /// Stable order independent of how rows were produced.
    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            (&a.experiment, &a.dataset, &a.method)
                .cmp(&(&b.experiment, &b.dataset, &b.method))
                .then(a.ratio.total_cmp(&b.ratio))
                .then(a.gamma.unwrap_or(0.0).total_cmp(&b.gamma.unwrap_or(0.0)))
        });
    }

    pub fn find(&self, dataset: &str, method: &str, ratio: f64) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.dataset == dataset && r.method == method && r.ratio == ratio)
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>, prec: usize| v.map(|x| format!("{x:.prec$}")).unwrap_or_default();
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.experiment,
                r.dataset,
                r.method,
                r.ratio,
                r.gamma.map(|g| g.to_string()).unwrap_or_default(),
                opt(r.accuracy, 6),
                opt(r.wall_ms, 3),
                r.dp_cells
            );
        }
        out
    }
}

/// A kNN method from the comparison grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    RawDtw,
    RawSoftDtw { gamma: f64 },
    TpDtw { ratio: f64 },
    TpSoftDtw { ratio: f64, gamma: f64 },
    /// DTW on raw values restricted to the detected keypoints.
    TpRawSubsample { ratio: f64 },
}

impl Method {
    /// Parses a method name; `ratio` and `gamma` fill in the parameters.
    pub fn parse(name: &str, ratio: f64, gamma: f64) -> Result<Self> {
        Ok(match name {
            "raw-dtw" => Method::RawDtw,
            "raw-softdtw" => Method::RawSoftDtw { gamma },
            "tp-dtw" => Method::TpDtw { ratio },
            "tp-softdtw" => Method::TpSoftDtw { ratio, gamma },
            "tp-raw-subsample" => Method::TpRawSubsample { ratio },
            other => return Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::RawDtw => "raw-dtw",
            Method::RawSoftDtw { .. } => "raw-softdtw",
            Method::TpDtw { .. } => "tp-dtw",
            Method::TpSoftDtw { .. } => "tp-softdtw",
            Method::TpRawSubsample { .. } => "tp-raw-subsample",
        }
    }

    pub fn needs_model(&self) -> bool {
        !matches!(self, Method::RawDtw | Method::RawSoftDtw { .. })
    }

    pub fn ratio(&self) -> f64 {
        match *self {
            Method::TpDtw { ratio } | Method::TpSoftDtw { ratio, .. } | Method::TpRawSubsample { ratio } => ratio,
            _ => 1.0,
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match *self {
            Method::RawSoftDtw { gamma } | Method::TpSoftDtw { gamma, .. } => Some(gamma),
            _ => None,
        }
    }

    fn distance(&self) -> Distance {
        match self.gamma() {
            Some(gamma) => Distance::SoftDtw { gamma },
            None => Distance::Dtw,
        }
    }

    fn token_mode(&self) -> TokenMode {
        match self {
            Method::RawDtw | Method::RawSoftDtw { .. } => TokenMode::Raw,
            Method::TpRawSubsample { .. } => TokenMode::RawAtKeypoints,
            _ => TokenMode::Descriptors,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClassificationConfig {
    pub experiment: String,
    pub methods: Vec<Method>,
    /// Descriptor cost for `tp-*` methods.
    pub metrics: Vec<CostFn>,
    /// NMS settings to run for `tp-*` methods.
    pub nms: Vec<bool>,
    pub k: usize,
    /// Signals are resampled to this length before detection.
    pub tp_length: Option<usize>,
    /// Fill `wall_ms`; off by default so reports are byte-stable.
    pub timing: bool,
    pub exec: Exec,
}

impl Default for ClassificationConfig {
    fn default() -> Self {
        Self {
            experiment: "classification".into(),
            methods: vec![Method::RawDtw, Method::TpDtw { ratio: 0.2 }],
            metrics: vec![CostFn::Cosine],
            nms: vec![true],
            k: 1,
            tp_length: Some(512),
            timing: false,
            exec: Exec::default(),
        }
    }
}

/// A named train/test split.
#[derive(Debug, Clone)]
pub struct Split {
    pub name: String,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

/// Finds `<Name>_TRAIN.tsv` / `<Name>_TEST.tsv` pairs in `dir` and its
/// immediate subdirectories (the UCR archive layout), sorted by name.
pub fn load_ucr_dir(dir: impl AsRef<std::path::Path>) -> Result<Vec<Split>> {
    let dir = dir.as_ref();
    let mut candidates = Vec::new();
    let mut visit = |d: &std::path::Path| -> Result<()> {
        for entry in std::fs::read_dir(d)? {
            let path = entry?.path();
            if path.is_file() {
                candidates.push(path);
            }
        }
        Ok(())
    };
    visit(dir)?;
    let mut subdirs: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for sub in &subdirs {
        visit(sub)?;
    }
    candidates.sort();
    let mut splits = Vec::new();
    for train_path in &candidates {
        let Some(name) = train_path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_suffix("_TRAIN.tsv"))
        else {
            continue;
        };
        let test_path = train_path.with_file_name(format!("{name}_TEST.tsv"));
        if !test_path.is_file() {
            log::warn!("skipping {name}: no matching _TEST.tsv");
            continue;
        }
        splits.push(Split {
            name: name.to_string(),
            train: crate::data::load_ucr_tsv(train_path)?,
            test: crate::data::load_ucr_tsv(&test_path)?,
        });
    }
    if splits.is_empty() {
        return Err(Error::Empty("UCR directory (no *_TRAIN.tsv/*_TEST.tsv pairs)"));
    }
    splits.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(splits)
}

fn method_label(method: &Method, metric: CostFn, nms: bool, config: &ClassificationConfig) -> String {
    let mut label = method.name().to_string();
    if method.needs_model() {
        if config.metrics.len() > 1 && matches!(method.token_mode(), TokenMode::Descriptors) {
            label.push('+');
            label.push_str(metric.name());
        }
        if config.nms.len() > 1 || !nms {
            label.push_str(if nms { "+nms-on" } else { "+nms-off" });
        }
    }
    label
}

/// Accuracy of one method on one split.
pub fn evaluate_method(
    split: &Split,
    method: &Method,
    metric: CostFn,
    nms: bool,
    model: Option<&TimePointModel>,
    config: &ClassificationConfig,
) -> Result<BenchRow> {
    split.train.check_min_length()?;
    split.test.check_min_length()?;
    if method.needs_model() && model.is_none() {
        return Err(Error::InvalidArgument(format!("method {} needs a checkpoint", method.name())));
    }
    let start = Instant::now();
    let prep = |signals: &[Signal]| -> Result<Vec<crate::align::Tokens>> {
        let resized: Vec<Signal>;
        let input = match (method.needs_model(), config.tp_length) {
            (true, Some(len)) => {
                resized = signals.iter().map(|s| resample(s, len)).collect();
                &resized
            }
            _ => signals,
        };
        let opts = ExtractOptions {
            ratio: method.ratio(),
            nms,
        };
        prepare_tokens(input, method.token_mode(), model, opts, config.exec)
    };
    let train = prep(&split.train.signals)?;
    let test = prep(&split.test.signals)?;
    let knn = KnnConfig {
        k: config.k,
        distance: method.distance(),
        cost: metric,
        exec: config.exec,
    };
    let result = knn_classify(&train, &split.train.labels, &test, Some(&split.test.labels), &knn)?;
    let wall = start.elapsed().as_secs_f64() * 1e3;
    Ok(BenchRow {
        experiment: config.experiment.clone(),
        dataset: split.name.clone(),
        method: method_label(method, metric, nms, config),
        ratio: method.ratio(),
        gamma: method.gamma(),
        accuracy: result.accuracy,
        wall_ms: config.timing.then_some(wall),
        dp_cells: result.dp_cells,
    })
}

/// Runs every (split, method, metric, nms) cell and returns sorted rows.
pub fn run_classification(splits: &[Split], model: Option<&TimePointModel>, config: &ClassificationConfig) -> Result<BenchReport> {
    if let Some(m) = config.methods.iter().find(|m| m.needs_model()) {
        if model.is_none() {
            return Err(Error::InvalidArgument(format!("method {} needs a checkpoint", m.name())));
        }
    }
    let mut report = BenchReport::default();
    for split in splits {
        for method in &config.methods {
            let (metrics, nms): (&[CostFn], &[bool]) = match method.token_mode() {
                TokenMode::Raw => (&[CostFn::EuclideanScalar], &[true]),
                TokenMode::RawAtKeypoints => (&[CostFn::EuclideanScalar], &config.nms),
                TokenMode::Descriptors => (&config.metrics, &config.nms),
            };
            for &metric in metrics {
                for &n in nms {
                    report.rows.push(evaluate_method(split, method, metric, n, model, config)?);
                }
            }
        }
    }
    report.sort();
    Ok(report)
}

/// Accuracy on clean and perturbed test sets for each method.
pub fn run_robustness(
    splits: &[Split],
    model: Option<&TimePointModel>,
    kind: PerturbKind,
    level: u8,
    seed: u64,
    config: &ClassificationConfig,
) -> Result<BenchReport> {
    let mut perturbed = Vec::with_capacity(2 * splits.len());
    for (si, split) in splits.iter().enumerate() {
        let mut noisy = split.test.clone();
        for (i, s) in noisy.signals.iter_mut().enumerate() {
            let mut rng = stream_rng(seed, ((si as u64) << 32) | i as u64);
            *s = perturb(s, kind, level, &mut rng)?;
        }
        perturbed.push(Split {
            name: format!("{}/clean", split.name),
            ..split.clone()
        });
        perturbed.push(Split {
            name: format!("{}/{}-{level}", split.name, kind.name()),
            test: noisy,
            ..split.clone()
        });
    }
    let config = ClassificationConfig {
        experiment: "robustness".into(),
        ..config.clone()
    };
    run_classification(&perturbed, model, &config)
}

/// Configuration of the synthetic warped-prototype classification task.
#[derive(Debug, Clone)]
pub struct PrototypeBenchConfig {
    pub length: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub prior: CpaPrior,
}

impl Default for PrototypeBenchConfig {
    fn default() -> Self {
        Self {
            length: 512,
            train_per_class: 50,
            test_per_class: 50,
            noise_sigma: 0.1,
            seed: 0,
            prior: CpaPrior::default(),
        }
    }
}

/// Three classes, one clean prototype each (sine, block and RBF families);
/// every sample is its prototype under a random warp plus noise.
pub fn prototype_benchmark(config: &PrototypeBenchConfig) -> Result<Split> {
    let families = [Waveform::Sine, Waveform::Block, Waveform::Rbf];
    let mut prototypes = Vec::new();
    for (c, family) in families.iter().enumerate() {
        let mut probs = [0.0; 4];
        probs[Waveform::ALL.iter().position(|w| w == family).expect("known family")] = 1.0;
        let synth = SynthConfig {
            length: config.length,
            waveform_probs: probs,
            noise_sigma: 0.0,
            trend_enabled: false,
            flip_enabled: false,
            max_generators: 1,
            seed: 0,
        };
        synth.validate()?;
        let mut rng = stream_rng(config.seed, 1000 + c as u64);
        prototypes.push(generate_clean_with(&synth, &mut rng).signal);
    }
    let make = |per_class: usize, offset: u64, name: &str| -> Result<LabeledDataset> {
        let mut signals = Vec::new();
        let mut labels = Vec::new();
        for i in 0..per_class {
            for (c, proto) in prototypes.iter().enumerate() {
                let mut rng = stream_rng(config.seed, offset + (i * prototypes.len() + c) as u64);
                let t = config.prior.sample_transform_with(&mut rng);
                let mut s = t.warp_signal(proto);
                add_noise(&mut s, config.noise_sigma, &mut rng);
                signals.push(s);
                labels.push(c as i64);
            }
        }
        LabeledDataset::new(name, signals, labels)
    };
    Ok(Split {
        name: "warped-prototypes".into(),
        train: make(config.train_per_class, 1 << 20, "warped-prototypes-train")?,
        test: make(config.test_per_class, 2 << 20, "warped-prototypes-test")?,
    })
}

/// Runtime benchmark settings. `nms` is off by default so each signal keeps
/// exactly `ceil(ratio * L)` keypoints.
#[derive(Debug, Clone)]
pub struct RuntimeConfig {
    pub lengths: Vec<usize>,
    pub ratios: Vec<f64>,
    pub n: usize,
    pub seed: u64,
    pub nms: bool,
    pub exec: Exec,
}

impl RuntimeConfig {
    /// `n = 50` per side, `L` in {50, 100, 200, 400, 800}.
    pub fn desk() -> Self {
        Self {
            lengths: vec![50, 100, 200, 400, 800],
            ratios: vec![0.1, 0.2, 0.5, 1.0],
            n: 50,
            seed: 0,
            nms: false,
            exec: Exec::default(),
        }
    }
}

fn synthetic_signals(len: usize, n: usize, seed: u64, offset: u64) -> Result<Vec<Signal>> {
    let synth = SynthConfig {
        length: len.max(32),
        ..SynthConfig::default()
    };
    synth.validate()?;
    Ok((0..n)
        .map(|i| {
            let mut rng = stream_rng(seed, offset + i as u64);
            let s = generate_sample_with(&synth, &mut rng).signal;
            if s.len() == len {
                s
            } else {
                resample(&s, len)
            }
        })
        .collect())
}

/// Times all-pairs distance computation between two sets of `n` synthetic
/// signals per length: raw DTW, and the keypoint pipeline (forward pass,
/// keypoint selection, descriptor DTW) for each ratio. Always fills
/// `wall_ms`.
pub fn benchmark_runtime(model: Option<&TimePointModel>, config: &RuntimeConfig) -> Result<BenchReport> {
    let mut report = BenchReport::default();
    for &len in &config.lengths {
        if len < crate::data::MIN_SIGNAL_LEN {
            return Err(Error::InvalidArgument(format!("length {len} is below the minimum of 16")));
        }
        let a = synthetic_signals(len, config.n, config.seed, 0)?;
        let b = synthetic_signals(len, config.n, config.seed, 1 << 24)?;
        let dataset = format!("synthetic-L{len}");
        let labels = vec![0i64; config.n];

        let start = Instant::now();
        let ta = prepare_tokens(&a, TokenMode::Raw, None, ExtractOptions::default(), config.exec)?;
        let tb = prepare_tokens(&b, TokenMode::Raw, None, ExtractOptions::default(), config.exec)?;
        let knn = KnnConfig {
            exec: config.exec,
            ..KnnConfig::default()
        };
        let raw = knn_classify(&tb, &labels, &ta, None, &knn)?;
        report.rows.push(BenchRow {
            experiment: "runtime".into(),
            dataset: dataset.clone(),
            method: "raw-dtw".into(),
            ratio: 1.0,
            gamma: None,
            accuracy: None,
            wall_ms: Some(start.elapsed().as_secs_f64() * 1e3),
            dp_cells: raw.dp_cells,
        });

        let Some(model) = model else { continue };
        for &ratio in &config.ratios {
            let opts = ExtractOptions { ratio, nms: config.nms };
            let start = Instant::now();
            let ta = prepare_tokens(&a, TokenMode::Descriptors, Some(model), opts, config.exec)?;
            let tb = prepare_tokens(&b, TokenMode::Descriptors, Some(model), opts, config.exec)?;
            let res = knn_classify(&tb, &labels, &ta, None, &knn)?;
            report.rows.push(BenchRow {
                experiment: "runtime".into(),
                dataset: dataset.clone(),
                method: "tp-dtw".into(),
                ratio,
                gamma: None,
                accuracy: None,
                wall_ms: Some(start.elapsed().as_secs_f64() * 1e3),
                dp_cells: res.dp_cells,
            });
        }
    }
    report.sort();
    Ok(report)
}

/// Mean absolute dense-map error (in samples) against known warps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentQuality {
    pub pairs: usize,
    pub tp_error: f64,
    pub dense_error: f64,
    pub uniform_error: f64,
}

/// Aligns `x` with `x o T` for `pairs` synthetic samples and compares the
/// sparse keypoint map, the dense raw-DTW map and the identity map with the
/// true correspondence `t -> T^{-1}(t)`.
pub fn alignment_quality(
    model: &TimePointModel,
    pairs: usize,
    opts: ExtractOptions,
    synth: &SynthConfig,
    prior: &CpaPrior,
    seed: u64,
    exec: Exec,
) -> Result<AlignmentQuality> {
    synth.validate()?;
    let clean_cfg = SynthConfig {
        noise_sigma: 0.0,
        ..synth.clone()
    };
    let errors = exec.map_range(pairs, |p| -> Result<(f64, f64, f64)> {
        let mut rng = stream_rng(seed, p as u64);
        let clean = generate_clean_with(&clean_cfg, &mut rng).signal;
        let t = prior.sample_transform_with(&mut rng);
        let mut xa = clean.clone();
        let mut xb = t.warp_signal(&clean);
        add_noise(&mut xa, synth.noise_sigma, &mut rng);
        add_noise(&mut xb, synth.noise_sigma, &mut rng);
        let len = xa.len();
        let scale = (len - 1) as f64;
        let truth: Vec<f64> = (0..len)
            .map(|i| t.inverse_point(i as f64 / scale).map(|y| y * scale))
            .collect::<Result<_>>()?;
        let mean_err = |map: &[f64]| map.iter().zip(&truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / len as f64;

        let sparse = align_sparse(&xa, &xb, model, opts, CostFn::Cosine)?;
        let path = dtw(Seq::Scalar(&xa), Seq::Scalar(&xb), CostFn::EuclideanScalar)?;
        let dense = dense_map_from_pairs(path.pairs.iter().copied(), len, len);
        let uniform: Vec<f64> = (0..len).map(|i| i as f64).collect();
        Ok((mean_err(&sparse.dense_map), mean_err(&dense), mean_err(&uniform)))
    });
    let mut sums = (0.0, 0.0, 0.0);
    for e in errors {
        let (a, b, c) = e?;
        sums.0 += a;
        sums.1 += b;
        sums.2 += c;
    }
    let n = pairs.max(1) as f64;
    Ok(AlignmentQuality {
        pairs,
        tp_error: sums.0 / n,
        dense_error: sums.1 / n,
        uniform_error: sums.2 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timepoint::ModelConfig;

    fn constant_split() -> Split {
        let mk = |vals: &[f64]| {
            let signals: Vec<Signal> = vals.iter().map(|&v| vec![v; 32]).collect();
            let labels = vals.iter().map(|&v| v as i64).collect();
            LabeledDataset::new("const", signals, labels).unwrap()
        };
        Split {
            name: "const".into(),
            train: mk(&[0.0, 1.0, 0.0, 1.0]),
            test: mk(&[1.0, 0.0]),
        }
    }

    #[test]
    fn raw_dtw_on_constant_classes() {
        let cfg = ClassificationConfig {
            methods: vec![Method::RawDtw],
            ..ClassificationConfig::default()
        };
        let report = run_classification(&[constant_split()], None, &cfg).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].accuracy, Some(1.0));
        assert_eq!(report.rows[0].dp_cells, 2 * 4 * 32 * 32);
        assert!(report.to_csv().starts_with(BenchReport::CSV_HEADER));
    }

    #[test]
    fn tp_methods_need_a_model() {
        let err = run_classification(&[constant_split()], None, &ClassificationConfig::default());
        assert!(err.is_err());
    }

    #[test]
    fn nms_ablation_rows_and_determinism() {
        let model = TimePointModel::<f32>::new(ModelConfig::tiny(), 0).unwrap();
        let split = prototype_benchmark(&PrototypeBenchConfig {
            length: 64,
            train_per_class: 2,
            test_per_class: 1,
            ..PrototypeBenchConfig::default()
        })
        .unwrap();
        let cfg = ClassificationConfig {
            methods: vec![Method::TpDtw { ratio: 1.0 }],
            nms: vec![true, false],
            ..ClassificationConfig::default()
        };
        let a = run_classification(std::slice::from_ref(&split), Some(&model), &cfg).unwrap();
        let b = run_classification(&[split], Some(&model), &cfg).unwrap();
        let methods: Vec<&str> = a.rows.iter().map(|r| r.method.as_str()).collect();
        assert_eq!(methods, vec!["tp-dtw+nms-off", "tp-dtw+nms-on"]);
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn runtime_cells_follow_the_budget() {
        let model = TimePointModel::<f32>::new(ModelConfig::tiny(), 0).unwrap();
        let cfg = RuntimeConfig {
            lengths: vec![80],
            ratios: vec![0.2, 1.0],
            n: 3,
            ..RuntimeConfig::desk()
        };
        let r = benchmark_runtime(Some(&model), &cfg).unwrap();
        let raw = r.find("synthetic-L80", "raw-dtw", 1.0).unwrap().dp_cells;
        assert_eq!(raw, 9 * 80 * 80);
        assert_eq!(r.find("synthetic-L80", "tp-dtw", 1.0).unwrap().dp_cells, raw);
        assert_eq!(r.find("synthetic-L80", "tp-dtw", 0.2).unwrap().dp_cells, 9 * 16 * 16);
        assert!(benchmark_runtime(None, &RuntimeConfig { lengths: vec![8], ..cfg }).is_err());
    }

    #[test]
    fn seed_resolution_prefers_explicit() {
        assert_eq!(resolve_seed(Some(3), 9), 3);
    }

    #[test]
    fn method_parsing() {
        assert_eq!(Method::parse("tp-softdtw", 0.5, 1.0).unwrap(), Method::TpSoftDtw { ratio: 0.5, gamma: 1.0 });
        assert!(Method::parse("shape-dtw", 0.5, 1.0).is_err());
        assert!(Method::RawDtw.gamma().is_none());
    }
}
