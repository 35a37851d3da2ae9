use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use arn_core::ingest::{
    class_proportions, load_csv, paired_windows, stratified_split, synth_generate, write_csv,
    zscore_normalize, ChannelStats, DatasetSplit, SensorSequence, WindowConfig,
};
use arn_core::metrics::MetricsReport;
use arn_core::models::{
    checkpoint_load, checkpoint_save, evaluate, train, CheckpointMeta, History, Model, ModelKind,
    TrainConfig,
};
use arn_core::{parallel, Error, Result};

use crate::config::RunConfig;

pub const SYNTH_FILE: &str = "synthetic.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.txt";
pub const REPORT_FILE: &str = "report.txt";
pub const EVAL_REPORT_FILE: &str = "eval_report.txt";
pub const BENCH_FILE: &str = "bench.txt";
pub const RUN_CONFIG_FILE: &str = "run.toml";

/// Per-class sample counts, laid out like a dataset description table.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTable {
    pub counts: Vec<usize>,
    pub proportions: Vec<f64>,
}

impl ClassTable {
    pub fn from_labels(labels: &[usize], classes: usize) -> Self {
        let mut counts = vec![0; classes];
        for &l in labels {
            counts[l] += 1;
        }
        Self {
            counts,
            proportions: class_proportions(labels.iter().copied(), classes),
        }
    }
}

impl fmt::Display for ClassTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8}{:>10}{:>12}", "class", "samples", "proportion")?;
        for (g, (n, p)) in self.counts.iter().zip(&self.proportions).enumerate() {
            writeln!(f, "{g:<8}{n:>10}{:>11.2}%", 100.0 * p)?;
        }
        writeln!(f, "{:<8}{:>10}", "total", self.counts.iter().sum::<usize>())
    }
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<(PathBuf, ClassTable)> {
    let synth = cfg
        .synth_config()
        .ok_or_else(|| Error::Config("synth needs `source = \"synthetic\"` in [dataset]".into()))?;
    let seq = synth_generate(&synth)?;
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let path = cfg.out.join(SYNTH_FILE);
    write_csv(&seq, &path)?;
    Ok((path, ClassTable::from_labels(seq.labels(), seq.num_classes())))
}

pub fn load_sequence(cfg: &RunConfig) -> Result<SensorSequence> {
    if let Some(synth) = cfg.synth_config() {
        return synth_generate(&synth);
    }
    let (path, schema) = cfg.csv_schema().expect("dataset is either synthetic or csv");
    load_csv(path, &schema)
}

/// Windows, splits and (optionally) normalizes the sequence.
pub fn prepare_split(
    cfg: &RunConfig,
    seq: &SensorSequence,
    window: WindowConfig,
) -> Result<(DatasetSplit, ChannelStats)> {
    let pairs = paired_windows(seq, &window)?;
    if pairs.items.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} samples cannot hold a wide window of {}",
            seq.len(),
            window.t_wide
        )));
    }
    let split = stratified_split(
        pairs.items,
        cfg.split.test_fraction,
        cfg.seed,
        Some(seq.num_classes()),
    )?;
    Ok(zscore_normalize(split, cfg.split.normalize))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn train_config(cfg: &RunConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..cfg.train.clone()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: History,
    pub report: MetricsReport,
    pub checkpoint: PathBuf,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let seq = load_sequence(cfg)?;
    let kind = cfg.model_kind(&cfg.model.kind, cfg.window)?;
    let spec = cfg.model_spec(kind, seq.channels(), seq.num_classes());
    let (model, mut store) = Model::build(&spec, cfg.seed)?;
    let (split, stats) = prepare_split(cfg, &seq, cfg.window)?;
    log::info!(
        "{}: {} train / {} test pairs, {} parameters",
        spec.kind.name(),
        split.train.len(),
        split.test.len(),
        store.trainable_count()
    );
    let history = train(&model, &mut store, &split, &train_config(cfg, cfg.seed))?;
    let report = evaluate(&model, &store, &split.test)?;

    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let meta = CheckpointMeta {
        window: Some(cfg.window),
        normalization: cfg.split.normalize.then_some(stats),
    };
    let checkpoint = cfg.out.join(CHECKPOINT_FILE);
    checkpoint_save(&checkpoint, &model, &store, &meta)?;
    write_file(&cfg.out.join(HISTORY_FILE), &history.to_string())?;
    write_file(&cfg.out.join(REPORT_FILE), &report.to_string())?;
    write_file(&cfg.out.join(RUN_CONFIG_FILE), &cfg.to_toml())?;
    Ok(TrainOutcome {
        history,
        report,
        checkpoint,
    })
}

/// Evaluates a checkpoint on the test side of the configured split, using
/// the window and normalization stored with the checkpoint.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<MetricsReport> {
    let (model, store, meta) = checkpoint_load(checkpoint)?;
    let seq = load_sequence(cfg)?;
    let spec = model.spec();
    if seq.channels() != spec.channels {
        return Err(Error::Config(format!(
            "checkpoint {} expects D = {} channels but the dataset has D = {}",
            checkpoint.display(),
            spec.channels,
            seq.channels()
        )));
    }
    if seq.num_classes() > spec.classes {
        return Err(Error::Config(format!(
            "checkpoint {} knows {} classes but the dataset has {}",
            checkpoint.display(),
            spec.classes,
            seq.num_classes()
        )));
    }
    let window = meta.window.unwrap_or(cfg.window);
    let pairs = paired_windows(&seq, &window)?.items;
    if pairs.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} samples cannot hold a wide window of {}",
            seq.len(),
            window.t_wide
        )));
    }
    let split = stratified_split(pairs, cfg.split.test_fraction, cfg.seed, Some(spec.classes))?;
    let mut test = split.test;
    if test.is_empty() {
        return Err(Error::EmptyDataset("test split is empty".into()));
    }
    if let Some(stats) = &meta.normalization {
        for p in &mut test {
            stats.apply(p.wide_mut());
        }
    }
    let report = evaluate(&model, &store, &test)?;
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    write_file(&cfg.out.join(EVAL_REPORT_FILE), &report.to_string())?;
    Ok(report)
}

/// Table name of a model kind.
pub fn method_name(kind: &ModelKind) -> &'static str {
    match kind.name() {
        "arn" => "ARN",
        "resnet" => "ResNet",
        "mlp" => "MLP",
        "cnn" => "CNN",
        "lstm" => "LSTM",
        "hybrid" => "Hybrid",
        "ae" => "AE",
        "hc" => "HC",
        "cbh" => "CBH",
        "cbs" => "CBS",
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: String,
    pub window: String,
    /// Mean weighted F1 over the repeats, or the first failure.
    pub result: std::result::Result<f64, String>,
    /// Weighted F1 of each repeat, in seed order.
    pub runs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub methods: Vec<BenchRow>,
    pub sweep: Vec<BenchRow>,
}

impl BenchReport {
    pub fn failures(&self) -> impl Iterator<Item = &BenchRow> {
        self.methods.iter().chain(&self.sweep).filter(|r| r.result.is_err())
    }

    pub fn survivors(&self) -> usize {
        self.methods.iter().chain(&self.sweep).filter(|r| r.result.is_ok()).count()
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "weighted F1 by method")?;
        writeln!(f, "{:<10}{:<8}{:>8}", "method", "T", "F_w")?;
        for r in &self.methods {
            if let Ok(v) = r.result {
                writeln!(f, "{:<10}{:<8}{v:>8.4}", r.method, r.window)?;
            }
        }
        if !self.sweep.is_empty() {
            writeln!(f)?;
            writeln!(f, "ARN window combinations")?;
            writeln!(f, "{:<8}{:>8}", "T", "F_w")?;
            for r in &self.sweep {
                if let Ok(v) = r.result {
                    writeln!(f, "{:<8}{v:>8.4}", r.window)?;
                }
            }
        }
        let failed: Vec<_> = self.failures().collect();
        if !failed.is_empty() {
            writeln!(f)?;
            writeln!(f, "failed")?;
            for r in failed {
                writeln!(f, "{} {}: {}", r.method, r.window, r.result.as_ref().unwrap_err())?;
            }
        }
        Ok(())
    }
}

struct Job {
    sweep: bool,
    row: usize,
    kind: ModelKind,
    data: usize,
    seed: u64,
}

/// Trains every listed method on one shared split, then the ARN over each
/// window combination. Repeat `r` of every row uses seed `seed + r`.
pub fn cmd_bench(cfg: &RunConfig) -> Result<BenchReport> {
    cfg.validate()?;
    if cfg.bench.models.is_empty() && !cfg.bench.sweep {
        return Err(Error::Config("bench needs at least one model or the sweep".into()));
    }
    let seq = load_sequence(cfg)?;
    let (d, k) = (seq.channels(), seq.num_classes());

    let mut windows = vec![cfg.window];
    let mut report = BenchReport::default();
    let mut pending: Vec<(bool, usize, std::result::Result<(ModelKind, usize), String>)> = Vec::new();
    for name in &cfg.bench.models {
        let row = report.methods.len();
        let kind = cfg.model_kind(name, cfg.window);
        report.methods.push(BenchRow {
            method: kind.as_ref().map(method_name).unwrap_or(name).to_string(),
            window: kind.as_ref().map(|k| k.window_label()).unwrap_or_default(),
            result: Ok(0.0),
            runs: Vec::new(),
        });
        pending.push((false, row, kind.map(|k| (k, 0)).map_err(|e| e.to_string())));
    }
    if cfg.bench.sweep {
        for &[n, w] in &cfg.bench.sweep_windows {
            let window = WindowConfig::new(n, w)?.with_stride(cfg.window.stride)?;
            let data = match windows.iter().position(|x| *x == window) {
                Some(i) => i,
                None => {
                    windows.push(window);
                    windows.len() - 1
                }
            };
            let row = report.sweep.len();
            let kind = cfg.model_kind("arn", window);
            report.sweep.push(BenchRow {
                method: "ARN".into(),
                window: format!("{n}-{w}"),
                result: Ok(0.0),
                runs: Vec::new(),
            });
            pending.push((true, row, kind.map(|k| (k, data)).map_err(|e| e.to_string())));
        }
    }

    let splits: Vec<std::result::Result<DatasetSplit, String>> = windows
        .iter()
        .map(|w| prepare_split(cfg, &seq, *w).map(|(s, _)| s).map_err(|e| e.to_string()))
        .collect();

    let mut jobs = Vec::new();
    for (sweep, row, kind) in pending {
        let slot = if sweep { &mut report.sweep[row] } else { &mut report.methods[row] };
        match kind {
            Err(e) => slot.result = Err(e),
            Ok((kind, data)) => match &splits[data] {
                Err(e) => slot.result = Err(e.clone()),
                Ok(_) => {
                    for r in 0..cfg.bench.repeats {
                        jobs.push(Job {
                            sweep,
                            row,
                            kind: kind.clone(),
                            data,
                            seed: cfg.seed + r as u64,
                        });
                    }
                }
            },
        }
    }

    // The sweep's default window repeats the main ARN row; train such runs once.
    let mut unique: Vec<usize> = Vec::new();
    let job_run: Vec<usize> = jobs
        .iter()
        .enumerate()
        .map(|(i, job)| {
            let same = |u: &usize| {
                let o = &jobs[*u];
                o.kind == job.kind && o.data == job.data && o.seed == job.seed
            };
            unique.iter().position(same).unwrap_or_else(|| {
                unique.push(i);
                unique.len() - 1
            })
        })
        .collect();

    let results = parallel::map(&unique, |&i| {
        let job = &jobs[i];
        let split = splits[job.data].as_ref().expect("jobs only reference prepared splits");
        let spec = cfg.model_spec(job.kind.clone(), d, k);
        let run = || -> Result<f64> {
            let (model, mut store) = Model::build(&spec, job.seed)?;
            let tc = TrainConfig {
                eval_test: false,
                ..train_config(cfg, job.seed)
            };
            train(&model, &mut store, split, &tc)?;
            Ok(evaluate(&model, &store, &split.test)?.weighted_f1)
        };
        let out = run().map_err(|e| e.to_string());
        log::info!(
            "bench {} {} seed {}: {}",
            job.kind.name(),
            job.kind.window_label(),
            job.seed,
            match &out {
                Ok(v) => format!("{v:.4}"),
                Err(e) => e.clone(),
            }
        );
        out
    });

    for (job, &run) in jobs.iter().zip(&job_run) {
        let slot = if job.sweep {
            &mut report.sweep[job.row]
        } else {
            &mut report.methods[job.row]
        };
        match &results[run] {
            Ok(v) => slot.runs.push(*v),
            Err(e) => {
                if slot.result.is_ok() {
                    slot.result = Err(e.clone());
                }
            }
        }
    }
    for r in report.methods.iter_mut().chain(report.sweep.iter_mut()) {
        if r.result.is_ok() {
            r.result = Ok(r.runs.iter().sum::<f64>() / r.runs.len() as f64);
        }
    }

    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    write_file(&cfg.out.join(BENCH_FILE), &report.to_string())?;
    Ok(report)
}
