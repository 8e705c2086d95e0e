//! `timepoint`: data generation, training, keypoint extraction, alignment and
//! benchmark drivers.
//!
//! Exit codes: 0 on success, 2 on usage errors, 1 on runtime errors.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use timepoint::align::{align_sparse, CostFn};
use timepoint::bench::{
    benchmark_runtime, load_ucr_dir, prototype_benchmark, resolve_seed, run_classification,
    run_robustness, ClassificationConfig, Method, PrototypeBenchConfig, RuntimeConfig, Split,
};
use timepoint::data::{format_ucr_tsv, load_any, save_dataset, LabeledDataset, PerturbKind};
use timepoint::par::{configure_threads, Exec};
use timepoint::synthalign::{generate_sample_with, SynthConfig};
use timepoint::timepoint::{
    extract, finetune, train_with_progress, ExtractOptions, FinetuneConfig, ModelConfig, TimePointModel,
    TrainConfig,
};

#[derive(Parser)]
#[command(name = "timepoint", version, about = "Keypoint-based time-series alignment")]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic signals with keypoint labels.
    Generate(GenerateArgs),
    /// Train a model on synthetic pairs.
    Train(TrainArgs),
    /// Fine-tune a checkpoint on a directory of UCR TSV files.
    Finetune(FinetuneArgs),
    /// Detect keypoints in every series of a file.
    Extract(ExtractArgs),
    /// Align two series through their keypoints.
    Align(AlignArgs),
    /// k-NN classification with raw or keypoint DTW.
    Knn(KnnArgs),
    /// Time dense against sparse DTW over signal lengths.
    BenchRuntime(BenchRuntimeArgs),
    /// Accuracy under jitter or blur perturbations of the test set.
    Robustness(RobustnessArgs),
}

#[derive(Args)]
struct OutArg {
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 512)]
    length: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// `.tsv` writes UCR text (label 0); any other extension writes a dataset
    /// container that also keeps keypoint masks. Stdout gets TSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Full,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Loss trace CSV; stdout when omitted.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// UCR TSV or dataset container.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    ratio: f64,
    #[arg(long)]
    no_nms: bool,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct AlignArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// File holding series `a` (first row unless --row-a).
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value_t = 0)]
    row_a: usize,
    #[arg(long, default_value_t = 0)]
    row_b: usize,
    #[arg(long, default_value_t = 0.2)]
    ratio: f64,
    #[arg(long, value_enum, default_value_t = Metric::Cosine)]
    metric: Metric,
    #[arg(long)]
    no_nms: bool,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Metric {
    Cosine,
    Euclidean,
}

impl Metric {
    fn cost(self) -> CostFn {
        match self {
            Metric::Cosine => CostFn::Cosine,
            Metric::Euclidean => CostFn::DescriptorEuclidean,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum NmsMode {
    On,
    Off,
    Both,
}

impl NmsMode {
    fn settings(self) -> Vec<bool> {
        match self {
            NmsMode::On => vec![true],
            NmsMode::Off => vec![false],
            NmsMode::Both => vec![true, false],
        }
    }
}

#[derive(Args)]
struct ClassifyArgs {
    /// Required by the tp-* methods.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Comma-separated: raw-dtw, raw-softdtw, tp-dtw, tp-softdtw, tp-raw-subsample.
    #[arg(long, value_delimiter = ',', default_value = "raw-dtw,tp-dtw")]
    method: Vec<String>,
    /// Keypoint ratios for tp-* methods.
    #[arg(long, value_delimiter = ',', default_value = "0.2")]
    ratio: Vec<f64>,
    /// SoftDTW smoothing values.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    gamma: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Descriptor costs for tp-* methods.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "cosine")]
    metric: Vec<Metric>,
    #[arg(long, value_enum, default_value_t = NmsMode::On)]
    nms: NmsMode,
    /// Resample length fed to the detector; 0 keeps native lengths.
    #[arg(long, default_value_t = 512)]
    tp_length: usize,
    /// Fill the wall_ms column (makes output nondeterministic).
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct KnnArgs {
    #[arg(long, requires = "test", conflicts_with_all = ["data_dir", "synthetic"])]
    train: Option<PathBuf>,
    #[arg(long, requires = "train")]
    test: Option<PathBuf>,
    /// Directory of UCR `<Name>_TRAIN.tsv` / `<Name>_TEST.tsv` files.
    #[arg(long, conflicts_with = "synthetic")]
    data_dir: Option<PathBuf>,
    /// The generated 3-class warped-prototype benchmark.
    #[arg(long)]
    synthetic: bool,
    #[command(flatten)]
    common: ClassifyArgs,
}

#[derive(Args)]
struct BenchRuntimeArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "50,100,200,400,800")]
    lengths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.5,1")]
    ratios: Vec<f64>,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Apply NMS before the budget (keypoint counts then vary per signal).
    #[arg(long)]
    nms: bool,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct RobustnessArgs {
    #[arg(long, value_parser = parse_kind)]
    kind: PerturbKind,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    level: u8,
    /// Directory of UCR splits; the synthetic benchmark when omitted.
    #[arg(long)]
    datasets: Option<PathBuf>,
    #[command(flatten)]
    common: ClassifyArgs,
}

fn parse_kind(s: &str) -> Result<PerturbKind, String> {
    s.parse().map_err(|e: timepoint::Error| e.to_string())
}

/// Failure category; decides the exit code.
enum Failure {
    Usage(String),
    Runtime(timepoint::Error),
}

impl From<timepoint::Error> for Failure {
    fn from(e: timepoint::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn load_model(path: &Path) -> CliResult<TimePointModel> {
    Ok(TimePointModel::load(path)?)
}

fn check_ratio(ratio: f64) -> CliResult {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(usage(format!("--ratio must be in (0, 1], got {ratio}")));
    }
    Ok(())
}

fn generate(args: GenerateArgs) -> CliResult {
    let config = SynthConfig {
        length: args.length,
        seed: resolve_seed(args.seed, 0),
        ..SynthConfig::default()
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let mut rng = timepoint::bench::stream_rng(config.seed, 0);
    let samples: Vec<_> = (0..args.n).map(|_| generate_sample_with(&config, &mut rng)).collect();
    let mut ds = LabeledDataset::new(
        "synthalign",
        samples.iter().map(|s| s.signal.clone()).collect(),
        vec![0; samples.len()],
    )?;
    match &args.out {
        Some(path) if path.extension().is_some_and(|e| e != "tsv") => {
            ds.masks = Some(samples.into_iter().map(|s| s.kp_mask).collect());
            save_dataset(&ds, path)?;
        }
        out => emit(out.as_deref(), &format_ucr_tsv(&ds))?,
    }
    Ok(())
}

fn preset_config(preset: Preset) -> ModelConfig {
    match preset {
        Preset::Desk => ModelConfig::desk(),
        Preset::Full => ModelConfig::full(),
    }
}

fn train_cmd(args: TrainArgs, exec: Exec) -> CliResult {
    if args.batch == 0 {
        return Err(usage("--batch must be positive"));
    }
    let seed = resolve_seed(args.seed, 0);
    let mut model = TimePointModel::<f32>::new(preset_config(args.preset), seed)?;
    let config = TrainConfig {
        iters: args.iters,
        batch: args.batch,
        base_lr: args.lr,
        seed,
        exec,
        ..TrainConfig::default()
    };
    let trace = train_with_progress(&mut model, &config, |r| {
        if r.iteration % 100 == 0 {
            log::info!("iter {} total {:.5}", r.iteration, r.parts.total());
        }
    })?;
    model.save(&args.out)?;
    emit(args.trace.as_deref(), &trace.to_csv())
}

fn finetune_cmd(args: FinetuneArgs) -> CliResult {
    let mut model = load_model(&args.checkpoint)?;
    let splits = load_ucr_dir(&args.data_dir)?;
    let signals: Vec<_> = splits.into_iter().flat_map(|s| s.train.signals).collect();
    let config = FinetuneConfig {
        epochs: args.epochs,
        batch: args.batch,
        base_lr: args.lr,
        seed: resolve_seed(args.seed, 0),
        ..FinetuneConfig::default()
    };
    let trace = finetune(&mut model, &signals, &config)?;
    model.save(&args.out)?;
    emit(args.trace.as_deref(), &trace.to_csv())
}

fn extract_cmd(args: ExtractArgs) -> CliResult {
    check_ratio(args.ratio)?;
    let model = load_model(&args.checkpoint)?;
    let ds = load_any(&args.input)?;
    ds.check_min_length()?;
    let opts = ExtractOptions {
        ratio: args.ratio,
        nms: !args.no_nms,
    };
    let mut csv = String::from("series,index,score\n");
    for (i, s) in ds.signals.iter().enumerate() {
        let kp = extract(&model.detect(s)?, opts)?;
        for (t, score) in kp.keypoints.indices.iter().zip(&kp.keypoints.scores) {
            let _ = writeln!(csv, "{i},{t},{score:.6}");
        }
    }
    emit(args.out.out.as_deref(), &csv)
}

fn pick_row(path: &Path, row: usize) -> CliResult<Vec<f64>> {
    let ds = load_any(path)?;
    ds.signals
        .get(row)
        .cloned()
        .ok_or_else(|| usage(format!("{} has {} series, no row {row}", path.display(), ds.len())))
}

fn align_cmd(args: AlignArgs) -> CliResult {
    check_ratio(args.ratio)?;
    let model = load_model(&args.checkpoint)?;
    let a = pick_row(&args.a, args.row_a)?;
    let b = pick_row(&args.b, args.row_b)?;
    let opts = ExtractOptions {
        ratio: args.ratio,
        nms: !args.no_nms,
    };
    let al = align_sparse(&a, &b, &model, opts, args.metric.cost())?;
    log::info!("keypoints {}x{}, dp cells {}", al.kp_indices_a.len(), al.kp_indices_b.len(), al.dp_cells());
    let mut csv = String::from("t_a,t_b\n");
    for (t, v) in al.dense_map.iter().enumerate() {
        let _ = writeln!(csv, "{t},{v:.4}");
    }
    emit(args.out.out.as_deref(), &csv)
}

fn methods(args: &ClassifyArgs) -> CliResult<Vec<Method>> {
    let mut out = Vec::new();
    for name in &args.method {
        let probe = Method::parse(name, 1.0, 1.0).map_err(|e| usage(e.to_string()))?;
        let ratios: &[f64] = if probe.needs_model() { &args.ratio } else { &[1.0] };
        let gammas: &[f64] = if probe.gamma().is_some() { &args.gamma } else { &[1.0] };
        for &r in ratios {
            check_ratio(r)?;
            for &g in gammas {
                if !(g > 0.0) {
                    return Err(usage(format!("--gamma must be positive, got {g}")));
                }
                out.push(Method::parse(name, r, g).map_err(|e| usage(e.to_string()))?);
            }
        }
    }
    if out.iter().any(Method::needs_model) && args.checkpoint.is_none() {
        return Err(usage("tp-* methods need --checkpoint"));
    }
    Ok(out)
}

fn classify_setup(args: &ClassifyArgs, experiment: &str, exec: Exec) -> CliResult<(ClassificationConfig, Option<TimePointModel>)> {
    if args.k == 0 {
        return Err(usage("--k must be positive"));
    }
    let mut metrics: Vec<CostFn> = args.metric.iter().map(|m| m.cost()).collect();
    metrics.dedup();
    let config = ClassificationConfig {
        experiment: experiment.into(),
        methods: methods(args)?,
        metrics,
        nms: args.nms.settings(),
        k: args.k,
        tp_length: (args.tp_length > 0).then_some(args.tp_length),
        timing: args.timing,
        exec,
    };
    let model = args.checkpoint.as_deref().map(load_model).transpose()?;
    Ok((config, model))
}

fn synthetic_split(seed: Option<u64>) -> CliResult<Split> {
    Ok(prototype_benchmark(&PrototypeBenchConfig {
        seed: resolve_seed(seed, 0),
        ..PrototypeBenchConfig::default()
    })?)
}

fn knn_cmd(args: KnnArgs, exec: Exec) -> CliResult {
    let (config, model) = classify_setup(&args.common, "classification", exec)?;
    let splits = match (&args.train, &args.test, &args.data_dir) {
        (Some(train), Some(test), _) => {
            let train = load_any(train)?;
            let name = train.name.trim_end_matches("_TRAIN").to_string();
            vec![Split {
                name,
                test: load_any(test)?,
                train,
            }]
        }
        (_, _, Some(dir)) => load_ucr_dir(dir)?,
        _ if args.synthetic => vec![synthetic_split(args.common.seed)?],
        _ => return Err(usage("give --train and --test, --data-dir, or --synthetic")),
    };
    let report = run_classification(&splits, model.as_ref(), &config)?;
    emit(args.common.out.out.as_deref(), &report.to_csv())
}

fn bench_runtime_cmd(args: BenchRuntimeArgs, exec: Exec) -> CliResult {
    if args.n == 0 || args.lengths.is_empty() {
        return Err(usage("--n and --lengths must be non-empty"));
    }
    for &r in &args.ratios {
        check_ratio(r)?;
    }
    if let Some(&l) = args.lengths.iter().find(|&&l| l < timepoint::data::MIN_SIGNAL_LEN) {
        return Err(usage(format!("length {l} is below the minimum of {}", timepoint::data::MIN_SIGNAL_LEN)));
    }
    let model = args.checkpoint.as_deref().map(load_model).transpose()?;
    if model.is_none() {
        log::warn!("no --checkpoint: only raw-dtw rows are produced");
    }
    let config = RuntimeConfig {
        lengths: args.lengths,
        ratios: args.ratios,
        n: args.n,
        seed: resolve_seed(args.seed, 0),
        nms: args.nms,
        exec,
    };
    let report = benchmark_runtime(model.as_ref(), &config)?;
    emit(args.out.out.as_deref(), &report.to_csv())
}

fn robustness_cmd(args: RobustnessArgs, exec: Exec) -> CliResult {
    let (config, model) = classify_setup(&args.common, "robustness", exec)?;
    let splits = match &args.datasets {
        Some(dir) => load_ucr_dir(dir)?,
        None => vec![synthetic_split(args.common.seed)?],
    };
    let seed = resolve_seed(args.common.seed, 0);
    let report = run_robustness(&splits, model.as_ref(), args.kind, args.level, seed, &config)?;
    emit(args.common.out.out.as_deref(), &report.to_csv())
}

fn run(cli: Cli) -> CliResult {
    configure_threads(cli.jobs)?;
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train_cmd(a, exec),
        Command::Finetune(a) => finetune_cmd(a),
        Command::Extract(a) => extract_cmd(a),
        Command::Align(a) => align_cmd(a),
        Command::Knn(a) => knn_cmd(a, exec),
        Command::BenchRuntime(a) => bench_runtime_cmd(a, exec),
        Command::Robustness(a) => robustness_cmd(a, exec),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
