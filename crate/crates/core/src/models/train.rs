use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{stratified_split, DatasetSplit, WindowPair};
use crate::metrics::{confusion_matrix, weighted_f1, MetricsReport};
use crate::parallel;
use crate::tensor::{Adadelta, ParamId, ParamStore, Tape, Tensor};

use super::Model;

/// Rows per inference chunk.
const INFER_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// ADADELTA step multiplier; 0 freezes the trainable parameters.
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Score the test side after every epoch.
    pub eval_test: bool,
    /// Share of the training pairs held out, per class, to pick the epoch
    /// whose parameters are kept. 0 keeps the last epoch.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 128,
            learning_rate: 1.0,
            rho: 0.95,
            epsilon: 1e-6,
            seed: 0,
            shuffle: true,
            eval_test: true,
            validation_fraction: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!(
                "epochs ({}) and batch size ({}) must be at least 1",
                self.epochs, self.batch_size
            )));
        }
        if !(self.learning_rate >= 0.0 && (0.0..1.0).contains(&self.rho) && self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "invalid optimizer settings lr={} rho={} eps={}",
                self.learning_rate, self.rho, self.epsilon
            )));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation fraction {} must lie in [0, 1)",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// Counted from 1.
    pub epoch: usize,
    /// Mean training loss over the epoch's samples.
    pub loss: f64,
    /// Weighted F1 of the training-mode predictions made during the epoch.
    pub train_f1: f64,
    pub val_f1: Option<f64>,
    pub test_f1: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// The epoch whose parameters training kept: the first with the best
    /// validation F1, or the last when there was no validation.
    pub fn selected(&self) -> Option<&EpochRecord> {
        let mut best: Option<&EpochRecord> = None;
        for r in &self.records {
            if let Some(v) = r.val_f1 {
                if best.and_then(|b| b.val_f1).is_none_or(|b| v > b) {
                    best = Some(r);
                }
            }
        }
        best.or_else(|| self.last())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: &str| Error::Config(format!("malformed history line `{line}`"));
        let mut records = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if line.starts_with("epoch") {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 {
                return Err(bad(line));
            }
            let optional = |v: &str| -> Result<Option<f64>> {
                if v == "-" {
                    Ok(None)
                } else {
                    v.parse().map(Some).map_err(|_| bad(line))
                }
            };
            records.push(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad(line))?,
                loss: f[1].parse().map_err(|_| bad(line))?,
                train_f1: f[2].parse().map_err(|_| bad(line))?,
                val_f1: optional(f[3])?,
                test_f1: optional(f[4])?,
            });
        }
        Ok(Self { records })
    }
}

impl fmt::Display for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
        writeln!(f, "epoch loss train_f1 val_f1 test_f1")?;
        for r in &self.records {
            writeln!(
                f,
                "{} {:.6} {:.6} {} {}",
                r.epoch,
                r.loss,
                r.train_f1,
                opt(r.val_f1),
                opt(r.test_f1)
            )?;
        }
        Ok(())
    }
}

fn argmax_rows(logits: &[f32], k: usize) -> Vec<usize> {
    logits
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

fn one_hot(labels: &[usize], k: usize) -> Tensor<f32> {
    let mut q = vec![0.0f32; labels.len() * k];
    for (i, &l) in labels.iter().enumerate() {
        q[i * k + l] = 1.0;
    }
    Tensor::new(&[labels.len(), k], q).expect("one-hot shape")
}

fn mix(seed: u64, epoch: usize, batch: usize) -> u64 {
    let mut z = seed ^ ((epoch as u64) << 32) ^ batch as u64;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Inference-mode logits for already encoded inputs, `[N, K]`, computed in
/// independent chunks.
fn logits_encoded(model: &Model, store: &ParamStore<f32>, inputs: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let n = inputs[0].shape()[0];
    let k = model.spec().classes;
    let chunks: Vec<(usize, usize)> = (0..n)
        .step_by(INFER_CHUNK)
        .map(|s| (s, (s + INFER_CHUNK).min(n)))
        .collect();
    let parts = parallel::map(&chunks, |&(s, e)| -> Result<Vec<f32>> {
        let idx: Vec<usize> = (s..e).collect();
        let mut tape = Tape::new(false);
        let vars = inputs
            .iter()
            .map(|t| tape.constant(t.gather_rows(&idx)?))
            .collect::<Result<Vec<_>>>()?;
        let out = model.forward(store, &mut tape, &vars, 0)?;
        Ok(tape.value(out.logits).data().to_vec())
    });
    let mut data = Vec::with_capacity(n * k);
    for p in parts {
        data.extend(p?);
    }
    Tensor::new(&[n, k], data)
}

/// Inference-mode logits, `[N, K]`.
pub fn infer_logits(model: &Model, store: &ParamStore<f32>, pairs: &[WindowPair]) -> Result<Tensor<f32>> {
    let inputs = model.encode(store, pairs)?;
    logits_encoded(model, store, &inputs)
}

/// Arg-max class per pair, in inference mode.
pub fn predict(model: &Model, store: &ParamStore<f32>, pairs: &[WindowPair]) -> Result<Vec<usize>> {
    let logits = infer_logits(model, store, pairs)?;
    Ok(argmax_rows(logits.data(), model.spec().classes))
}

pub fn evaluate(model: &Model, store: &ParamStore<f32>, pairs: &[WindowPair]) -> Result<MetricsReport> {
    let predicted = predict(model, store, pairs)?;
    let truth: Vec<usize> = pairs.iter().map(|p| p.label).collect();
    MetricsReport::from_labels(&truth, &predicted, model.spec().classes)
}

/// Replaces every batch norm's running moments with the batch moments of
/// the current weights averaged over `inputs`, taken in chunks of `batch`
/// rows and weighted by chunk size.
fn recalibrate_batch_norm(
    model: &Model,
    store: &mut ParamStore<f32>,
    inputs: &[Tensor<f32>],
    batch: usize,
) -> Result<()> {
    let n = inputs[0].shape()[0];
    let mut sums: Vec<(ParamId, Vec<f64>)> = Vec::new();
    for start in (0..n).step_by(batch) {
        let idx: Vec<usize> = (start..(start + batch).min(n)).collect();
        let mut tape = Tape::new(true);
        tape.raw_batch_moments(true);
        let vars = inputs
            .iter()
            .map(|t| tape.constant(t.gather_rows(&idx)?))
            .collect::<Result<Vec<_>>>()?;
        model.forward(store, &mut tape, &vars, 0)?;
        let updates = tape.take_buffer_updates();
        if updates.is_empty() {
            return Ok(());
        }
        let w = idx.len() as f64 / n as f64;
        for (i, (id, data)) in updates.into_iter().enumerate() {
            if sums.len() <= i {
                sums.push((id, vec![0.0; data.len()]));
            }
            for (s, v) in sums[i].1.iter_mut().zip(data) {
                *s += w * v as f64;
            }
        }
    }
    for (id, data) in sums {
        store.set_data(id, data.into_iter().map(|v| v as f32).collect())?;
    }
    Ok(())
}

/// Mini-batch ADADELTA on the softmax cross-entropy (plus any auxiliary
/// loss), shuffling with a seeded generator every epoch.
pub fn train(
    model: &Model,
    store: &mut ParamStore<f32>,
    split: &DatasetSplit,
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::EmptyDataset("training split is empty".into()));
    }
    let k = model.spec().classes;
    let held_out;
    let (fit, val): (&[WindowPair], &[WindowPair]) = if cfg.validation_fraction > 0.0 {
        held_out = stratified_split(split.train.clone(), cfg.validation_fraction, cfg.seed, Some(k))?;
        (&held_out.train, &held_out.test)
    } else {
        (&split.train, &[])
    };
    model.prepare(store, fit)?;
    let inputs = model.encode(store, fit)?;
    let labels: Vec<usize> = fit.iter().map(|p| p.label).collect();
    let encode_scored = |pairs: &[WindowPair]| -> Result<(Vec<Tensor<f32>>, Vec<usize>)> {
        Ok((model.encode(store, pairs)?, pairs.iter().map(|p| p.label).collect()))
    };
    let val = if val.is_empty() { None } else { Some(encode_scored(val)?) };
    let test = if cfg.eval_test && !split.test.is_empty() {
        Some(encode_scored(&split.test)?)
    } else {
        None
    };
    let score = |store: &ParamStore<f32>, (inputs, truth): &(Vec<Tensor<f32>>, Vec<usize>)| -> Result<f64> {
        let logits = logits_encoded(model, store, inputs)?;
        weighted_f1(&confusion_matrix(truth, &argmax_rows(logits.data(), k), k)?)
    };
    let mut best: Option<(f64, ParamStore<f32>)> = None;

    let mut opt = Adadelta::<f32>::new(cfg.learning_rate, cfg.rho, cfg.epsilon);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut history = History::default();
    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0f64;
        let mut seen = Vec::with_capacity(order.len());
        let mut predicted = Vec::with_capacity(order.len());
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new(true);
            let vars = inputs
                .iter()
                .map(|t| tape.constant(t.gather_rows(idx)?))
                .collect::<Result<Vec<_>>>()?;
            let out = model.forward(store, &mut tape, &vars, mix(cfg.seed, epoch, batch))?;
            let mut loss = tape.softmax_cross_entropy(out.logits, &one_hot(&batch_labels, k))?;
            if let Some(aux) = out.aux_loss {
                loss = tape.add(loss, aux)?;
            }
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            predicted.extend(argmax_rows(tape.value(out.logits).data(), k));
            seen.extend_from_slice(&batch_labels);
            loss_sum += value as f64 * idx.len() as f64;
            log::debug!("epoch {epoch} batch {batch}: {} samples, loss {value:.4}", idx.len());
            tape.backward(loss)?;
            let grads = tape.param_grads();
            let updates = tape.take_buffer_updates();
            drop(tape);
            opt.step(store, &grads).map_err(|e| match e {
                Error::Numeric(_) => Error::NonFiniteLoss { epoch, batch },
                other => other,
            })?;
            for (id, data) in updates {
                store.set_data(id, data)?;
            }
        }
        let train_f1 = weighted_f1(&confusion_matrix(&seen, &predicted, k)?)?;
        if val.is_some() || test.is_some() || epoch == cfg.epochs {
            recalibrate_batch_norm(model, store, &inputs, cfg.batch_size)?;
        }
        let val_f1 = val.as_ref().map(|v| score(store, v)).transpose()?;
        let test_f1 = test.as_ref().map(|t| score(store, t)).transpose()?;
        if let Some(v) = val_f1 {
            if best.as_ref().is_none_or(|(b, _)| v > *b) {
                best = Some((v, store.clone()));
            }
        }
        let record = EpochRecord {
            epoch,
            loss: loss_sum / labels.len() as f64,
            train_f1,
            val_f1,
            test_f1,
        };
        let opt = |v: Option<f64>| v.map_or("-".into(), |v| format!("{v:.4}"));
        log::info!(
            "{} epoch {epoch}: loss {:.4} train F1 {:.4} val F1 {} test F1 {}",
            model.spec().kind.name(),
            record.loss,
            train_f1,
            opt(val_f1),
            opt(test_f1)
        );
        history.records.push(record);
    }
    if let Some((_, kept)) = best {
        *store = kept;
        if let Some(r) = history.selected() {
            log::info!("kept epoch {} (val F1 {:.4})", r.epoch, r.val_f1.unwrap_or(f64::NAN));
        }
    }
    Ok(history)
}
