use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::ingest::{paired_windows, stratified_split, synth_generate, SynthConfig, WindowConfig};
use crate::tensor::{grad_check, GradCheckOptions, ParamStore, Tape, Tensor};

fn spec(kind: ModelKind, d: usize, k: usize) -> ModelSpec {
    ModelSpec::new(kind, d, k)
}

fn tiny_path() -> PathConfig {
    PathConfig::table().with_width_divisor(32)
}

fn random_tensor(seed: u64, shape: &[usize]) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn logits(model: &Model, store: &ParamStore<f32>, inputs: &[Tensor<f32>], training: bool) -> Tensor<f32> {
    let mut tape = Tape::new(training);
    let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone()).unwrap()).collect();
    let out = model.forward(store, &mut tape, &vars, 0).unwrap();
    tape.value(out.logits).clone()
}

fn pairs(classes: usize, n_per_class: usize, cfg: WindowConfig, seed: u64) -> Vec<crate::ingest::WindowPair> {
    let seq = synth_generate(&SynthConfig {
        classes,
        channels: 3,
        n_per_class,
        noise_sigma: 0.3,
        seed,
    })
    .unwrap();
    paired_windows(&seq, &cfg).unwrap().items
}

#[test]
fn full_arn_builds_with_layer_table_widths() {
    let s = spec(ModelKind::Arn(ArnConfig::default()), 3, 5);
    let (model, store) = Model::build(&s, 1).unwrap();
    let arn = model.arn().unwrap();
    assert_eq!(store.get(arn.narrow.fc.w).shape(), &[512, 512]);
    assert_eq!(store.get(arn.head.w).shape(), &[5, 1024]);
    assert_eq!(arn.narrow.blocks.len(), 16);
    assert_eq!(store.get(arn.narrow.conv1.w).shape(), &[64, 5, 3]);
    // res2's first block widens 256 → 2048 through a projection.
    let res2 = &arn.narrow.blocks[3];
    assert_eq!(store.get(res2.expand.w).shape(), &[2048, 1, 512]);
    assert!(res2.projection.is_some() && arn.narrow.blocks[4].projection.is_none());

    let count = |prefix: &str| -> usize {
        store
            .entries()
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .map(|e| e.tensor.numel())
            .sum()
    };
    assert_eq!(count("narrow."), count("wide."));
    for (a, b) in store
        .entries()
        .iter()
        .filter(|e| e.name.starts_with("narrow."))
        .zip(store.entries().iter().filter(|e| e.name.starts_with("wide.")))
    {
        assert_eq!(a.name["narrow.".len()..], b.name["wide.".len()..]);
        assert_eq!(a.tensor.shape(), b.tensor.shape());
    }

    // Zero input through zero-bias layers gives zero logits, hence a uniform soft-max.
    let inputs = vec![Tensor::zeros(&[2, 32, 3]), Tensor::zeros(&[2, 96, 3])];
    let z = logits(&model, &store, &inputs, false);
    assert!(z.data().iter().all(|v| v.is_finite()));
    let mut tape = Tape::<f32>::new(false);
    let zv = tape.constant(z).unwrap();
    let p = tape.softmax(zv).unwrap();
    assert!(tape.value(p).data().iter().all(|v| (v - 0.2).abs() < 1e-3));
}

#[test]
fn short_narrow_window_names_failing_stage() {
    let mut cfg = ArnConfig {
        t_narrow: 4,
        ..Default::default()
    };
    match Model::build(&spec(ModelKind::Arn(cfg.clone()), 3, 5), 0) {
        Err(Error::Build { stage, .. }) => assert_eq!(stage, "conv1"),
        other => panic!("{other:?}"),
    }
    cfg.t_narrow = 5;
    match Model::build(&spec(ModelKind::Arn(cfg.clone()), 3, 5), 0) {
        Err(Error::Build { stage, .. }) => assert_eq!(stage, "maxpool"),
        other => panic!("{other:?}"),
    }
    cfg.t_narrow = 6;
    cfg.path = tiny_path();
    assert!(Model::build(&spec(ModelKind::Arn(cfg), 3, 5), 0).is_ok());
}

#[test]
fn presets_and_kind_names() {
    let p = PathConfig::parse_preset("resnet50-order").unwrap();
    let widths: Vec<usize> = p.stages.iter().map(|s| s.c_out).collect();
    assert_eq!(widths, vec![256, 512, 1024, 2048]);
    assert!(PathConfig::parse_preset("vgg").is_err());
    assert!(matches!(ModelKind::from_name("svm"), Err(Error::Config(_))));
    for name in ["arn", "resnet", "mlp", "cnn", "lstm", "hybrid", "ae", "hc", "cbh", "cbs"] {
        assert_eq!(ModelKind::from_name(name).unwrap().name(), name);
    }
    let reps: Vec<usize> = PathConfig::table().with_width_divisor(16).stages.iter().map(|s| s.repeats).collect();
    assert_eq!(reps, vec![3, 4, 6, 3]);
}

#[test]
fn baseline_shapes() {
    let (m, store) = Model::build(&spec(ModelKind::from_name("mlp").unwrap(), 3, 4), 0).unwrap();
    assert_eq!(store.get(m.mlp().unwrap().layers[0].w).shape(), &[2000, 192]);

    let (m, store) = Model::build(&spec(ModelKind::from_name("cnn").unwrap(), 3, 4), 0).unwrap();
    let cnn = m.cnn().unwrap();
    assert_eq!(cnn.stages[0].conv.out_len(64), Some(54));
    assert_eq!(cnn.stages[0].pool, 2);
    assert_eq!(cnn.out_len, 1);
    assert_eq!(store.get(cnn.dense.w).shape(), &[1000, 30]);

    let (m, _) = Model::build(&spec(ModelKind::from_name("hybrid").unwrap(), 3, 4), 0).unwrap();
    assert_eq!(m.hybrid().unwrap().steps, 27);

    // The CNN's third stage needs six steps, which windows under 64 cannot supply.
    let mut cnn32 = ModelKind::from_name("cnn").unwrap();
    cnn32.set_window(32, 32);
    assert!(matches!(Model::build(&spec(cnn32, 3, 4), 0), Err(Error::Build { .. })));
}

#[test]
fn resnet_matches_one_arn_path() {
    let (_, rs) = Model::build(&spec(ModelKind::from_name("resnet").unwrap(), 3, 5), 0).unwrap();
    let (_, arn) = Model::build(&spec(ModelKind::Arn(ArnConfig::default()), 3, 5), 0).unwrap();
    let path: Vec<_> = rs.entries().iter().filter_map(|e| e.name.strip_prefix("path.").map(|n| (n.to_string(), e.tensor.shape().to_vec()))).collect();
    let narrow: Vec<_> = arn.entries().iter().filter_map(|e| e.name.strip_prefix("narrow.").map(|n| (n.to_string(), e.tensor.shape().to_vec()))).collect();
    assert!(!path.is_empty());
    assert_eq!(path, narrow);
}

/// Reduced-width versions of every kind, for gradient checks and quick runs.
fn reduced_kinds() -> Vec<ModelKind> {
    let mut kinds = vec![
        ModelKind::Arn(ArnConfig {
            t_narrow: 12,
            t_wide: 20,
            path: tiny_path(),
        }),
        ModelKind::Resnet(ResnetConfig {
            window: 12,
            path: tiny_path(),
        }),
    ];
    for (name, div) in [("mlp", 400), ("cnn", 10), ("lstm", 200), ("hybrid", 25), ("ae", 1000)] {
        kinds.push(ModelKind::from_name(name).unwrap().with_width_divisor(div));
    }
    kinds
}

fn windowed_kind(kind: &ModelKind) -> ModelKind {
    let mut k = kind.clone();
    match &mut k {
        ModelKind::Cnn(_) | ModelKind::Hybrid(_) => {}
        ModelKind::Mlp(_) | ModelKind::Lstm(_) | ModelKind::Ae(_) => k.set_window(6, 6),
        _ => {}
    }
    k
}

fn input_shapes(kind: &ModelKind, n: usize, d: usize) -> Vec<Vec<usize>> {
    match kind {
        ModelKind::Arn(c) => vec![vec![n, c.t_narrow, d], vec![n, c.t_wide, d]],
        other => vec![vec![n, other.window(), d]],
    }
}

/// Widths are divided so each model has a few thousand parameters at most: the
/// ARN and ResNet paths use 1/32 of the layer table (conv1 2 kernels, stage
/// outputs 8/64/32/16, fc 16), the dense baselines 1/200 to 1/1000. Batches of
/// six keep training-mode batch statistics well conditioned.
#[test]
fn every_reduced_model_passes_grad_check() {
    let (n, d, k) = (6, 2, 3);
    for kind in reduced_kinds().iter().map(windowed_kind) {
        for seed in 0..3 {
            let s = spec(kind.clone(), d, k);
            let (model, store) = Model::build(&s, seed).unwrap();
            let store = store.cast::<f64>();
            let inputs: Vec<Tensor<f64>> = input_shapes(&kind, n, d)
                .iter()
                .enumerate()
                .map(|(i, sh)| random_tensor(seed * 10 + i as u64, sh).cast())
                .collect();
            let mut q = vec![0.0f64; n * k];
            for r in 0..n {
                q[r * k + (r + seed as usize) % k] = 1.0;
            }
            let q = Tensor::new(&[n, k], q).unwrap();
            for training in [false, true] {
                let opts = GradCheckOptions { seed, training, ..Default::default() };
                let report = grad_check(&store, opts, |s, tape| {
                    let vars = inputs.iter().map(|t| tape.leaf(t.clone())).collect::<Result<Vec<_>>>()?;
                    let out = model.forward(s, tape, &vars, seed)?;
                    let loss = tape.softmax_cross_entropy(out.logits, &q)?;
                    match out.aux_loss {
                        Some(a) => tape.add(loss, a),
                        None => Ok(loss),
                    }
                })
                .unwrap();
                assert!(
                    report.max_rel_error < 1e-3,
                    "{} seed {seed} training {training}: {report:?}",
                    kind.name()
                );
                assert!(report.checked > 0);
            }
        }
    }
}

#[test]
fn batch_order_does_not_change_logits() {
    for kind in reduced_kinds() {
        let (model, store) = Model::build(&spec(kind.clone(), 3, 4), 5).unwrap();
        let inputs: Vec<Tensor<f32>> = input_shapes(&kind, 6, 3)
            .iter()
            .enumerate()
            .map(|(i, sh)| random_tensor(40 + i as u64, sh))
            .collect();
        let perm = [3, 0, 5, 1, 4, 2];
        let swapped: Vec<Tensor<f32>> = inputs.iter().map(|t| t.gather_rows(&perm).unwrap()).collect();
        let a = logits(&model, &store, &inputs, false);
        let b = logits(&model, &store, &swapped, false);
        assert_eq!(a.gather_rows(&perm).unwrap(), b, "{}", kind.name());
    }
}

#[test]
fn tied_paths_differ_only_by_initialisation() {
    let cfg = ArnConfig {
        t_narrow: 16,
        t_wide: 16,
        path: tiny_path(),
    };
    let (model, mut store) = Model::build(&spec(ModelKind::Arn(cfg), 3, 4), 2).unwrap();
    let x = random_tensor(3, &[2, 16, 3]);
    let feats = |store: &ParamStore<f32>| {
        let mut tape = Tape::new(false);
        let xv = tape.constant(x.clone()).unwrap();
        let f = model.arn().unwrap().features(store, &mut tape, xv, xv).unwrap();
        let v = tape.value(f).data().to_vec();
        let half = v.len() / 4;
        (0..2)
            .map(|r| (v[r * 2 * half..r * 2 * half + half].to_vec(), v[r * 2 * half + half..(r + 1) * 2 * half].to_vec()))
            .collect::<Vec<_>>()
    };
    assert!(feats(&store).iter().any(|(a, b)| a != b));
    let names: Vec<String> = store.entries().iter().map(|e| e.name.clone()).collect();
    for name in names.iter().filter(|n| n.starts_with("narrow.")) {
        let src = store.find(name).unwrap();
        let dst = store.find(&name.replacen("narrow.", "wide.", 1)).unwrap();
        let data = store.get(src).data().to_vec();
        store.set_data(dst, data).unwrap();
    }
    for (a, b) in feats(&store) {
        assert_eq!(a, b);
    }
}

fn tiny_split(seed: u64) -> crate::ingest::DatasetSplit {
    let cfg = WindowConfig::new(16, 32).unwrap().with_stride(16).unwrap();
    let all = pairs(2, 6, cfg, seed);
    stratified_split(all, 0.25, seed, Some(2)).unwrap()
}

fn tiny_arn() -> ModelSpec {
    spec(
        ModelKind::Arn(ArnConfig {
            t_narrow: 16,
            t_wide: 32,
            path: PathConfig::table().with_width_divisor(16),
        }),
        3,
        2,
    )
}

#[test]
fn frozen_training_keeps_parameters() {
    let split = tiny_split(1);
    let (model, mut store) = Model::build(&tiny_arn(), 0).unwrap();
    let before = store.clone();
    let cfg = TrainConfig { epochs: 1, learning_rate: 0.0, ..Default::default() };
    let h = train(&model, &mut store, &split, &cfg).unwrap();
    assert_eq!(h.records.len(), 1);
    assert!(h.records[0].test_f1.is_some());
    for (a, b) in before.entries().iter().zip(store.entries()) {
        if a.trainable {
            assert_eq!(a.tensor, b.tensor, "{}", a.name);
        }
    }
    // Running statistics still track the batches.
    assert!(before.entries().iter().zip(store.entries()).any(|(a, b)| !a.trainable && a.tensor != b.tensor));
}

#[test]
fn tiny_arn_overfits_twenty_samples() {
    let cfg = WindowConfig::new(16, 32).unwrap().with_stride(8).unwrap();
    let mut all = pairs(2, 4, cfg, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    use rand::seq::SliceRandom;
    all.shuffle(&mut rng);
    let mut chosen: Vec<_> = all.iter().filter(|p| p.label == 0).take(10).cloned().collect();
    chosen.extend(all.iter().filter(|p| p.label == 1).take(10).cloned());
    assert_eq!(chosen.len(), 20);
    let split = crate::ingest::DatasetSplit {
        train: chosen,
        test: Vec::new(),
        class_count: 2,
        class_proportions: vec![0.5, 0.5],
    };
    let (model, mut store) = Model::build(&tiny_arn(), 1).unwrap();
    let tc = TrainConfig { epochs: 30, batch_size: 20, ..Default::default() };
    let h = train(&model, &mut store, &split, &tc).unwrap();
    let (first, last) = (h.records[0], *h.last().unwrap());
    assert!(last.loss <= 0.5 * first.loss, "{h}");
    assert_eq!(last.train_f1, 1.0, "{h}");
    assert_eq!(last.test_f1, None);
}

#[test]
fn validation_keeps_best_epoch() {
    let split = tiny_split(5);
    let (model, mut store) = Model::build(&tiny_arn(), 2).unwrap();
    let cfg = TrainConfig { epochs: 6, batch_size: 4, validation_fraction: 0.3, ..Default::default() };
    let h = train(&model, &mut store, &split, &cfg).unwrap();
    let vals: Vec<f64> = h.records.iter().map(|r| r.val_f1.unwrap()).collect();
    let kept = h.selected().unwrap();
    let best = vals.iter().cloned().fold(f64::MIN, f64::max);
    assert_eq!(kept.val_f1, Some(best));
    assert_eq!(kept.epoch, 1 + vals.iter().position(|&v| v == best).unwrap());
    // The kept parameters reproduce that epoch's test score.
    let report = evaluate(&model, &store, &split.test).unwrap();
    assert_eq!(kept.test_f1, Some(report.weighted_f1));
    assert_eq!(History::parse(&h.to_string()).unwrap().selected().map(|r| r.epoch), Some(kept.epoch));

    let bad = TrainConfig { validation_fraction: 1.0, ..Default::default() };
    assert!(matches!(train(&model, &mut store, &split, &bad), Err(Error::Config(_))));
}

#[test]
fn training_is_deterministic() {
    let split = tiny_split(4);
    let run = || {
        let (model, mut store) = Model::build(&tiny_arn(), 7).unwrap();
        let cfg = TrainConfig { epochs: 2, batch_size: 3, seed: 11, ..Default::default() };
        let h = train(&model, &mut store, &split, &cfg).unwrap();
        (store, h)
    };
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(ha, hb);
    for (x, y) in a.entries().iter().zip(b.entries()) {
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&x.tensor), bits(&y.tensor), "{}", x.name);
    }
}

#[test]
fn non_finite_loss_reports_coordinates() {
    let split = tiny_split(5);
    let (model, mut store) = Model::build(&tiny_arn(), 0).unwrap();
    let head = model.arn().unwrap().head;
    let n = store.get(head.b).numel();
    store.set_data(head.b, vec![f32::INFINITY; n]).unwrap();
    let cfg = TrainConfig { epochs: 2, ..Default::default() };
    match train(&model, &mut store, &split, &cfg) {
        Err(Error::NonFiniteLoss { epoch, batch }) => assert_eq!((epoch, batch), (1, 0)),
        other => panic!("{other:?}"),
    }
}

fn scalar_pairs(values: &[(f32, usize)], d: usize) -> Vec<crate::ingest::WindowPair> {
    values
        .iter()
        .enumerate()
        .map(|(i, &(v, label))| crate::ingest::WindowPair {
            channels: d,
            t_narrow: 1,
            t_wide: 1,
            wide: vec![v; d],
            label,
            end_index: i + 1,
        })
        .collect()
}

fn linear_mlp(d: usize, k: usize) -> (Model, ParamStore<f32>) {
    let kind = ModelKind::Mlp(MlpConfig { window: 1, units: vec![d] });
    Model::build(&spec(kind, d, k), 0).unwrap()
}

#[test]
fn evaluate_hand_cases() {
    // Constant class-0 predictor on a balanced set.
    let (m, mut store) = linear_mlp(1, 2);
    let head = m.head;
    store.set_data(head.w, vec![0.0, 0.0]).unwrap();
    store.set_data(head.b, vec![1.0, 0.0]).unwrap();
    let data = scalar_pairs(&[(0.0, 0), (1.0, 1), (0.0, 0), (1.0, 1)], 1);
    let r = evaluate(&m, &store, &data).unwrap();
    assert!((r.weighted_f1 - 1.0 / 3.0).abs() < 1e-15);

    // Threshold on the input: perfect.
    let l0 = m.mlp().unwrap().layers[0];
    store.set_data(l0.w, vec![1.0]).unwrap();
    store.set_data(l0.b, vec![0.0]).unwrap();
    store.set_data(head.w, vec![-1.0, 1.0]).unwrap();
    store.set_data(head.b, vec![0.5, 0.0]).unwrap();
    assert_eq!(evaluate(&m, &store, &data).unwrap().weighted_f1, 1.0);

    assert!(matches!(
        evaluate(&m, &store, &scalar_pairs(&[(0.0, 2)], 1)),
        Err(Error::LabelOutOfRange { .. })
    ));
    assert!(evaluate(&m, &store, &[]).is_err());
}

#[test]
fn random_predictions_score_about_one_over_k() {
    let k = 4;
    let (m, mut store) = linear_mlp(k, k);
    let l0 = m.mlp().unwrap().layers[0];
    let eye: Vec<f32> = (0..k * k).map(|i| if i % (k + 1) == 0 { 1.0 } else { 0.0 }).collect();
    store.set_data(l0.w, eye.clone()).unwrap();
    store.set_data(m.head.w, eye).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data: Vec<_> = (0..4000)
        .map(|i| crate::ingest::WindowPair {
            channels: k,
            t_narrow: 1,
            t_wide: 1,
            wide: (0..k).map(|_| rng.gen_range(0.0..1.0)).collect(),
            label: rng.gen_range(0..k),
            end_index: i,
        })
        .collect();
    let f = evaluate(&m, &store, &data).unwrap().weighted_f1;
    assert!((f - 1.0 / k as f64).abs() < 0.05, "{f}");
}

#[test]
fn checkpoint_round_trips() {
    let split = tiny_split(6);
    let (model, mut store) = Model::build(&tiny_arn(), 3).unwrap();
    train(&model, &mut store, &split, &TrainConfig { epochs: 1, ..Default::default() }).unwrap();
    let meta = CheckpointMeta {
        window: Some(WindowConfig::new(16, 32).unwrap()),
        normalization: Some(crate::ingest::ChannelStats { mean: vec![0.1, -0.3, 1.0 / 3.0], std: vec![1.5, 2.0, 0.7] }),
    };
    let bytes = checkpoint_bytes(&model, &store, &meta).unwrap();
    let (m2, s2, meta2) = checkpoint_from_bytes(&bytes).unwrap();
    assert_eq!(m2, model);
    assert_eq!(meta2, meta);
    assert_eq!(checkpoint_bytes(&m2, &s2, &meta2).unwrap(), bytes);
    assert_eq!(infer_logits(&model, &store, &split.test).unwrap(), infer_logits(&m2, &s2, &split.test).unwrap());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint_save(&path, &model, &store, &meta).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(checkpoint_load(&path).unwrap().1, store);

    let truncated = &bytes[..bytes.len() - 7];
    assert!(matches!(checkpoint_from_bytes(truncated), Err(Error::Integrity(_))));
    let mut wrong_version = bytes.clone();
    wrong_version[8] = b'9';
    assert!(matches!(checkpoint_from_bytes(&wrong_version), Err(Error::Integrity(_))));
    let text = String::from_utf8_lossy(&bytes).to_string();
    assert!(text.starts_with("arnckpt-1 manifest_bytes="));
    let reshaped = text.replacen("shape = [4, 5, 3]", "shape = [4, 5, 2]", 1);
    assert_ne!(reshaped, text);
    assert!(matches!(checkpoint_from_bytes(reshaped.as_bytes()), Err(Error::Integrity(_)) | Err(Error::Shape(_))));
}

#[test]
fn every_kind_trains_briefly_and_round_trips() {
    let cfg = WindowConfig::new(32, 64).unwrap().with_stride(16).unwrap();
    let split = stratified_split(pairs(3, 4, cfg, 8), 0.3, 1, Some(3)).unwrap();
    let mut kinds = reduced_kinds();
    kinds[0] = ModelKind::Arn(ArnConfig { t_narrow: 32, t_wide: 64, path: tiny_path() });
    for f in ["hc", "cbh", "cbs"] {
        let mut kind = ModelKind::from_name(f).unwrap();
        if let ModelKind::FeatureHead(c) = &mut kind {
            c.codebook.n = 8;
        }
        kinds.push(kind);
    }
    for kind in kinds {
        let s = spec(kind.clone(), 3, 3);
        let (model, mut store) = Model::build(&s, 2).unwrap();
        let h = train(&model, &mut store, &split, &TrainConfig { epochs: 2, batch_size: 16, ..Default::default() }).unwrap();
        assert_eq!(h.records.len(), 2);
        let r = evaluate(&model, &store, &split.test).unwrap();
        assert!((0.0..=1.0).contains(&r.weighted_f1));
        assert_eq!(Some(r.weighted_f1), h.last().unwrap().test_f1, "{}", kind.name());
        let bytes = checkpoint_bytes(&model, &store, &CheckpointMeta::default()).unwrap();
        let (m2, s2, _) = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(predict(&m2, &s2, &split.test).unwrap(), predict(&model, &store, &split.test).unwrap());
    }
}

#[test]
fn spec_serialises_as_flat_table() {
    let mut s = tiny_arn();
    s.dropout = 0.25;
    let text = toml::to_string(&s).unwrap();
    assert!(text.contains("kind = \"arn\""));
    let back: ModelSpec = toml::from_str(&text).unwrap();
    assert_eq!(back, s);
    let minimal: ModelSpec = toml::from_str("channels = 3\nclasses = 5\nkind = \"lstm\"\n").unwrap();
    assert_eq!(minimal.kind, ModelKind::Lstm(LstmConfig::default()));
}
