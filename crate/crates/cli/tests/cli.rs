use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use arn_cli::commands::{BENCH_FILE, CHECKPOINT_FILE, EVAL_REPORT_FILE, HISTORY_FILE, REPORT_FILE, SYNTH_FILE};
use arn_cli::{cmd_bench, cmd_eval, cmd_synth, cmd_train, RunConfig};
use arn_core::ingest::{load_csv, synth_generate, CsvSchema};
use arn_core::metrics::MetricsReport;
use arn_core::models::History;
use tempfile::TempDir;

fn synthetic(classes: usize, channels: usize, n_per_class: usize) -> String {
    format!(
        "[dataset]\nsource = \"synthetic\"\nclasses = {classes}\nchannels = {channels}\nn_per_class = {n_per_class}\nnoise_sigma = 0.3\n"
    )
}

/// Small, fast settings: ARN at 1/16 width on a few hundred samples.
fn quick(dir: &Path, extra: &str) -> String {
    format!(
        "seed = 3\nout = \"{}\"\n{}\n[model]\nwidth_divisor = 16\n{extra}",
        dir.join("out").display(),
        synthetic(3, 3, 2)
    )
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn arn(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arn"))
        .args(args)
        .arg("--config")
        .arg(config)
        .env("ARN_LOG", "quiet")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn synth_is_reproducible_and_reloads() {
    let dir = TempDir::new().unwrap();
    let text = |out: &str| format!("seed = 7\nout = \"{}\"\n{}", dir.path().join(out).display(), synthetic(5, 3, 2));
    let a = arn(&["synth"], &write_config(dir.path(), "a.toml", &text("a")));
    let b = arn(&["synth"], &write_config(dir.path(), "b.toml", &text("b")));
    assert!(a.status.success(), "{}", stderr(&a));
    let table = stdout(&a);
    assert!(table.starts_with("class"));
    assert_eq!(table.lines().count(), 7);
    assert_eq!(table, stdout(&b));
    let fa = fs::read(dir.path().join("a").join(SYNTH_FILE)).unwrap();
    assert_eq!(fa, fs::read(dir.path().join("b").join(SYNTH_FILE)).unwrap());

    let cfg = RunConfig::parse(&text("a")).unwrap();
    let seq = synth_generate(&cfg.synth_config().unwrap()).unwrap();
    let back = load_csv(dir.path().join("a").join(SYNTH_FILE), &CsvSchema::default()).unwrap();
    assert_eq!(back.labels(), seq.labels());
    assert_eq!(back.channels(), seq.channels());
    for (x, y) in back.samples().iter().zip(seq.samples()) {
        assert!((x - y).abs() <= 1e-6);
    }
}

#[test]
fn synth_without_segments_fails_without_output() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let mut cfg = RunConfig::parse(&synthetic(5, 3, 0)).unwrap();
    cfg.out = out.clone();
    assert!(cmd_synth(&cfg).is_err());
    assert!(!out.join(SYNTH_FILE).exists());

    let o = arn(&["synth"], &write_config(dir.path(), "c.toml", &quick(dir.path(), "").replace("n_per_class = 2", "n_per_class = 0")));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("n_per_class"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn train_then_eval_replays_test_score() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "run.toml", &quick(dir.path(), ""));
    let o = arn(&["train"], &config);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    let history = History::parse(&fs::read_to_string(out.join(HISTORY_FILE)).unwrap()).unwrap();
    assert_eq!(history.records.len(), 50);
    let report_text = fs::read_to_string(out.join(REPORT_FILE)).unwrap();
    assert!(report_text.contains("weighted_f1"));
    assert_eq!(stdout(&o), report_text);
    let report = MetricsReport::parse(&report_text).unwrap();
    // history.txt keeps six decimals.
    assert!((history.last().unwrap().test_f1.unwrap() - report.weighted_f1).abs() <= 5e-7);

    let e = arn(&["eval"], &config);
    assert!(e.status.success(), "{}", stderr(&e));
    assert_eq!(fs::read_to_string(out.join(EVAL_REPORT_FILE)).unwrap(), report_text);
}

#[test]
fn resnet_trains_single_path() {
    let dir = TempDir::new().unwrap();
    let mut cfg = RunConfig::parse(&quick(dir.path(), "kind = \"resnet\"\n[train]\nepochs = 2\n")).unwrap();
    cfg.out = dir.path().join("resnet");
    let outcome = cmd_train(&cfg).unwrap();
    assert_eq!(outcome.history.records.len(), 2);
    let ckpt = fs::read(&outcome.checkpoint).unwrap();
    let manifest = String::from_utf8_lossy(&ckpt);
    assert!(manifest.contains("kind = \"resnet\""));
    assert!(manifest.contains("window = 64"));
    assert!(manifest.contains("name = \"path.conv1.w\""));
    assert!(!manifest.contains("narrow."));
}

#[test]
fn training_is_deterministic_across_runs_and_threads() {
    let dir = TempDir::new().unwrap();
    let text = quick(dir.path(), "[train]\nepochs = 3\nbatch_size = 16\n");
    let config = write_config(dir.path(), "run.toml", &text);
    let mut outputs = Vec::new();
    for (name, threads) in [("one", "1"), ("two", "1"), ("wide", "3")] {
        let out = dir.path().join(name);
        let o = arn(&["train", "--threads", threads, "--out", out.to_str().unwrap()], &config);
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push((
            fs::read(out.join(CHECKPOINT_FILE)).unwrap(),
            fs::read(out.join(REPORT_FILE)).unwrap(),
            fs::read(out.join(HISTORY_FILE)).unwrap(),
        ));
    }
    assert!(outputs[0] == outputs[1]);
    assert!(outputs[0] == outputs[2]);

    let other = dir.path().join("seed9");
    let o = arn(&["train", "--seed", "9", "--out", other.to_str().unwrap()], &config);
    assert!(o.status.success());
    assert_ne!(fs::read(other.join(CHECKPOINT_FILE)).unwrap(), outputs[0].0);
}

#[test]
fn eval_rejects_mismatched_or_empty_data() {
    let dir = TempDir::new().unwrap();
    let mut cfg = RunConfig::parse(&quick(dir.path(), "[train]\nepochs = 1\n")).unwrap();
    cfg.out = dir.path().join("m");
    let ckpt = cmd_train(&cfg).unwrap().checkpoint;

    let mut wide = RunConfig::parse(&quick(dir.path(), "").replace("channels = 3", "channels = 4")).unwrap();
    wide.out = dir.path().join("wide");
    let err = cmd_eval(&wide, &ckpt).unwrap_err().to_string();
    assert!(err.contains("D = 3") && err.contains("D = 4"), "{err}");
    assert!(!wide.out.join(EVAL_REPORT_FILE).exists());

    // 60 samples cannot hold a 96-sample wide window.
    let csv = dir.path().join("short.csv");
    let mut text = String::from("ch_0,ch_1,ch_2,label\n");
    for i in 0..60 {
        text.push_str(&format!("{i},0,1,{}\n", i % 3));
    }
    fs::write(&csv, text).unwrap();
    let mut short = RunConfig::parse(&format!(
        "[dataset]\nsource = \"csv\"\npath = \"{}\"\n",
        csv.display()
    ))
    .unwrap();
    short.out = dir.path().join("short");
    assert!(cmd_eval(&short, &ckpt).is_err());
    assert!(!short.out.join(EVAL_REPORT_FILE).exists());
}

#[test]
fn bad_configs_exit_nonzero_with_diagnostic() {
    let dir = TempDir::new().unwrap();
    let o = arn(&["train"], &dir.path().join("missing.toml"));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("missing.toml"));

    let bad = write_config(dir.path(), "bad.toml", &quick(dir.path(), "").replace("[model]", "[window]\nt_narrow = 96\nt_wide = 32\nstride = 8\n[model]"));
    let o = arn(&["train"], &bad);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("narrow window 96"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());

    let csv = write_config(dir.path(), "csv.toml", "[dataset]\nsource = \"csv\"\npath = \"nowhere.csv\"\n");
    let o = arn(&["train"], &csv);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("nowhere.csv"));
}

#[test]
fn quiet_logging_is_silent() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "run.toml", &quick(dir.path(), "[train]\nepochs = 1\n"));
    let o = arn(&["train"], &config);
    assert!(o.status.success());
    assert!(stderr(&o).is_empty(), "{}", stderr(&o));
    let verbose = Command::new(env!("CARGO_BIN_EXE_arn"))
        .args(["train", "--config"])
        .arg(&config)
        .env("ARN_LOG", "info")
        .output()
        .unwrap();
    assert!(stderr(&verbose).contains("epoch 1"), "{}", stderr(&verbose));
}

#[test]
fn bench_tables_share_split_and_report_failures() {
    let dir = TempDir::new().unwrap();
    let mut cfg = RunConfig::parse(&quick(
        dir.path(),
        "window = 32\n[train]\nepochs = 2\n[bench]\nmodels = [\"arn\", \"resnet\", \"cnn\"]\n",
    ))
    .unwrap();
    cfg.out = dir.path().join("bench");
    let report = cmd_bench(&cfg).unwrap();
    let rows: Vec<_> = report.methods.iter().map(|r| (r.method.as_str(), r.window.as_str())).collect();
    assert_eq!(rows, vec![("ARN", "32-96"), ("ResNet", "32"), ("CNN", "32")]);
    assert!(report.methods[2].result.is_err());
    let labels: Vec<_> = report.sweep.iter().map(|r| r.window.as_str()).collect();
    assert_eq!(labels, vec!["32-64", "32-96", "64-96"]);
    for r in report.methods.iter().take(2).chain(&report.sweep) {
        let f = *r.result.as_ref().unwrap();
        assert!((0.0..=1.0).contains(&f));
    }
    // The 32-96 sweep row repeats the main ARN run exactly.
    assert_eq!(report.sweep[1].result, report.methods[0].result);

    let text = fs::read_to_string(cfg.out.join(BENCH_FILE)).unwrap();
    assert_eq!(text, report.to_string());
    assert!(text.contains("method") && text.contains("failed") && text.contains("CNN 32"));
    assert_eq!(report.survivors(), 5);
}

#[test]
fn bench_binary_without_sweep() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        "bench.toml",
        &quick(dir.path(), "[train]\nepochs = 1\n[bench]\nmodels = [\"arn\", \"resnet\"]\nsweep = false\n"),
    );
    let o = arn(&["bench", "--threads", "2"], &config);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let rows: Vec<_> = out.lines().skip(2).filter(|l| !l.is_empty()).collect();
    assert_eq!(rows.len(), 2, "{out}");
    assert!(rows[0].starts_with("ARN") && rows[1].starts_with("ResNet"));
}
