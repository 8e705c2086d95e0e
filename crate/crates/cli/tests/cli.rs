use std::path::Path;
use std::process::{Command, Output};

fn timepoint(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_timepoint"))
        .args(args)
        .env_remove("TIMEPOINT_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small two-class TSV split with lengths divisible by nothing in particular.
fn write_split(dir: &Path, name: &str) {
    let row = |label: i32, phase: f64| {
        let values: Vec<String> = (0..40).map(|t| format!("{:.4}", (t as f64 * 0.3 + phase).sin() * label as f64)).collect();
        format!("{label}\t{}", values.join("\t"))
    };
    let train = [row(1, 0.0), row(-1, 0.1), row(1, 0.2), row(-1, 0.3)].join("\n");
    let test = [row(1, 0.05), row(-1, 0.15)].join("\n");
    std::fs::write(dir.join(format!("{name}_TRAIN.tsv")), train).unwrap();
    std::fs::write(dir.join(format!("{name}_TEST.tsv")), test).unwrap();
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&timepoint(&[])), 2);
    assert_eq!(code(&timepoint(&["frobnicate"])), 2);
    assert_eq!(code(&timepoint(&["generate", "--length", "8"])), 2);
    assert_eq!(code(&timepoint(&["knn", "--synthetic", "--method", "tp-dtw"])), 2);
    assert_eq!(code(&timepoint(&["knn", "--synthetic", "--method", "dtw-ish"])), 2);
    assert_eq!(code(&timepoint(&["robustness", "--kind", "jitter", "--level", "3"])), 2);
    assert_eq!(code(&timepoint(&["robustness", "--kind", "shift", "--level", "1"])), 2);
    assert_eq!(code(&timepoint(&["bench-runtime", "--lengths", "8", "--n", "2"])), 2);
    assert_eq!(code(&timepoint(&["--help"])), 0);
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.tsv");
    let out = timepoint(&["knn", "--train", p(&missing), "--test", p(&missing), "--method", "raw-dtw"]);
    assert_eq!(code(&out), 1);
    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "1\t0.5\tnan\n").unwrap();
    assert_eq!(code(&timepoint(&["knn", "--train", p(&bad), "--test", p(&bad), "--method", "raw-dtw"])), 1);
}

#[test]
fn generate_is_deterministic() {
    let a = timepoint(&["generate", "--n", "3", "--length", "64", "--seed", "11"]);
    let b = timepoint(&["generate", "--n", "3", "--length", "64", "--seed", "11"]);
    let c = timepoint(&["generate", "--n", "3", "--length", "64", "--seed", "12"]);
    assert_eq!(code(&a), 0);
    assert_eq!(stdout(&a), stdout(&b));
    assert_ne!(stdout(&a), stdout(&c));
    assert_eq!(stdout(&a).lines().count(), 3);
    assert_eq!(stdout(&a).lines().next().unwrap().split('\t').count(), 65);
}

#[test]
fn raw_knn_on_a_split() {
    let dir = tempfile::tempdir().unwrap();
    write_split(dir.path(), "Toy");
    let train = dir.path().join("Toy_TRAIN.tsv");
    let test = dir.path().join("Toy_TEST.tsv");
    let out = timepoint(&["knn", "--train", p(&train), "--test", p(&test), "--method", "raw-dtw"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("experiment,dataset,method,ratio,gamma,accuracy,wall_ms,dp_cells"));
    assert_eq!(lines.next(), Some("classification,Toy,raw-dtw,1,,1.000000,,12800"));

    let dirout = timepoint(&["knn", "--data-dir", p(dir.path()), "--method", "raw-dtw,raw-softdtw", "--gamma", "0.1"]);
    assert_eq!(code(&dirout), 0);
    assert_eq!(stdout(&dirout).lines().count(), 3);

    let rob = timepoint(&["robustness", "--kind", "blur", "--level", "1", "--datasets", p(dir.path()), "--method", "raw-dtw"]);
    assert_eq!(code(&rob), 0);
    let rob = stdout(&rob);
    assert!(rob.contains("robustness,Toy/clean,raw-dtw"));
    assert!(rob.contains("robustness,Toy/blur-1,raw-dtw"));
}

#[test]
fn train_extract_align_knn_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("model.tpnt");
    let trace = dir.path().join("trace.csv");
    let out = timepoint(&[
        "train", "--iters", "2", "--batch", "2", "--seed", "1", "--out", p(&ckpt), "--trace", p(&trace),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let trace = std::fs::read_to_string(&trace).unwrap();
    assert!(trace.starts_with("iteration,lr,kp_loss_x,kp_loss_xw,desc_loss,total"));
    assert_eq!(trace.lines().count(), 3);

    let signals = dir.path().join("signals.tsv");
    assert_eq!(code(&timepoint(&["generate", "--n", "2", "--length", "100", "--out", p(&signals)])), 0);

    let out = timepoint(&["extract", "--checkpoint", p(&ckpt), "--input", p(&signals), "--ratio", "0.1"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.starts_with("series,index,score\n"));
    // at most ceil(0.1 * 100) = 10 keypoints per series
    assert!(text.lines().filter(|l| l.starts_with("0,")).count() <= 10);

    let out = timepoint(&[
        "align", "--checkpoint", p(&ckpt), "--a", p(&signals), "--b", p(&signals), "--row-b", "1",
    ]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 101);
    assert!(text.lines().last().unwrap().starts_with("99,99.0000"));

    write_split(dir.path(), "Toy");
    let train = dir.path().join("Toy_TRAIN.tsv");
    let test = dir.path().join("Toy_TEST.tsv");
    let out = timepoint(&[
        "knn", "--checkpoint", p(&ckpt), "--train", p(&train), "--test", p(&test), "--method", "tp-dtw,tp-raw-subsample",
        "--nms", "both", "--ratio", "0.2,1",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout(&out).lines().count(), 9);

    let out = timepoint(&["bench-runtime", "--checkpoint", p(&ckpt), "--lengths", "32,64", "--ratios", "0.5", "--n", "2"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("runtime,synthetic-L64,tp-dtw,0.5,,,"));
    assert!(text.lines().any(|l| l.starts_with("runtime,synthetic-L32,raw-dtw,1,,,") && l.ends_with(",4096")));
}

#[test]
fn finetune_from_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("model.tpnt");
    assert_eq!(code(&timepoint(&["train", "--iters", "1", "--batch", "2", "--out", p(&ckpt), "--trace", p(&dir.path().join("t.csv"))])), 0);
    let data = dir.path().join("ucr");
    std::fs::create_dir(&data).unwrap();
    write_split(&data, "Toy");
    let tuned = dir.path().join("tuned.tpnt");
    let out = timepoint(&[
        "finetune", "--checkpoint", p(&ckpt), "--data-dir", p(&data), "--epochs", "1", "--batch", "2", "--out", p(&tuned),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tuned.exists());
    assert_eq!(stdout(&out).lines().count(), 3);
}
