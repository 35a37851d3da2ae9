use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{hc_features, Codebook, CodebookConfig, HC_PER_CHANNEL};
use crate::ingest::WindowPair;
use crate::tensor::{ParamId, ParamStore, Scalar, Tape, Tensor, Var};

use super::arn::{Path, PathConfig};
use super::layers::{pool_len, Builder, Conv, ConvShape, Dense};
use super::lstm::LstmStack;

fn build_err(stage: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Build {
        stage: stage.into(),
        reason: reason.into(),
    }
}

fn div(c: usize, d: usize) -> usize {
    c.div_ceil(d.max(1))
}

/// Single residual path followed by the classifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResnetConfig {
    pub window: usize,
    pub path: PathConfig,
}

impl Default for ResnetConfig {
    fn default() -> Self {
        Self {
            window: 64,
            path: PathConfig::table(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub window: usize,
    pub units: Vec<usize>,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            window: 64,
            units: vec![2000; 3],
        }
    }
}

/// Convolution with bias and relu, then max-pool with stride equal to its width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnStage {
    pub kernel: usize,
    pub stride: usize,
    pub kernels: usize,
    pub pool: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnConfig {
    pub window: usize,
    pub stages: Vec<CnnStage>,
    pub dense: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        let s = |kernel, kernels, pool| CnnStage {
            kernel,
            stride: 1,
            kernels,
            pool,
        };
        Self {
            window: 64,
            stages: vec![s(11, 50, 2), s(10, 40, 3), s(6, 30, 1)],
            dense: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LstmConfig {
    pub window: usize,
    pub hidden: usize,
    pub layers: usize,
    pub dense: usize,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self {
            window: 64,
            hidden: 600,
            layers: 2,
            dense: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridConfig {
    pub window: usize,
    pub conv: CnnStage,
    pub hidden: usize,
    pub layers: usize,
    pub dense: usize,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            window: 64,
            conv: CnnStage {
                kernel: 11,
                stride: 1,
                kernels: 50,
                pool: 2,
            },
            hidden: 600,
            layers: 2,
            dense: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AeConfig {
    pub window: usize,
    pub hidden: usize,
    pub bottleneck: usize,
    /// Weight of the reconstruction error added to the classification loss.
    pub reconstruction_weight: f64,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            window: 64,
            hidden: 5000,
            bottleneck: 512,
            reconstruction_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    /// Hand-crafted statistics and spectral peaks.
    Hc,
    /// Codebook, hard assignment.
    Cbh,
    /// Codebook, soft assignment.
    Cbs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureHeadConfig {
    pub window: usize,
    pub features: FeatureKind,
    pub codebook: CodebookConfig,
}

impl Default for FeatureHeadConfig {
    fn default() -> Self {
        Self {
            window: 64,
            features: FeatureKind::Hc,
            codebook: CodebookConfig::default(),
        }
    }
}

impl ResnetConfig {
    pub(crate) fn scaled(mut self, d: usize) -> Self {
        self.path = self.path.with_width_divisor(d);
        self
    }
}

impl MlpConfig {
    pub(crate) fn scaled(mut self, d: usize) -> Self {
        self.units.iter_mut().for_each(|u| *u = div(*u, d));
        self
    }
}

impl CnnConfig {
    pub(crate) fn scaled(mut self, d: usize) -> Self {
        self.stages.iter_mut().for_each(|s| s.kernels = div(s.kernels, d));
        self.dense = div(self.dense, d);
        self
    }
}

impl LstmConfig {
    pub(crate) fn scaled(mut self, d: usize) -> Self {
        self.hidden = div(self.hidden, d);
        self.dense = div(self.dense, d);
        self
    }
}

impl HybridConfig {
    pub(crate) fn scaled(mut self, d: usize) -> Self {
        self.conv.kernels = div(self.conv.kernels, d);
        self.hidden = div(self.hidden, d);
        self.dense = div(self.dense, d);
        self
    }
}

impl AeConfig {
    pub(crate) fn scaled(mut self, d: usize) -> Self {
        self.hidden = div(self.hidden, d);
        self.bottleneck = div(self.bottleneck, d);
        self
    }
}

fn flatten<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let n = shape[0];
    let rest = shape[1..].iter().product();
    tape.reshape(x, &[n, rest])
}

fn dense_relu<T: Scalar>(d: &Dense, store: &ParamStore<T>, tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let z = d.forward(store, tape, x)?;
    tape.relu(z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resnet {
    pub path: Path,
}

impl Resnet {
    pub(crate) fn build(b: &mut Builder, cfg: &ResnetConfig, channels: usize) -> Result<Self> {
        Ok(Self {
            path: Path::build(&mut b.scope("path"), &cfg.path, channels, cfg.window)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub(crate) fn build(b: &mut Builder, cfg: &MlpConfig, channels: usize) -> Result<(Self, usize)> {
        if cfg.window == 0 || cfg.units.contains(&0) {
            return Err(build_err("mlp", "window and layer widths must be positive"));
        }
        let mut input = cfg.window * channels;
        let mut layers = Vec::new();
        for (i, &u) in cfg.units.iter().enumerate() {
            layers.push(b.dense(&format!("dense{i}"), input, u));
            input = u;
        }
        Ok((Self { layers }, input))
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let mut h = flatten(tape, x)?;
        for d in &self.layers {
            h = dense_relu(d, store, tape, h)?;
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvPool {
    pub conv: Conv,
    pub pool: usize,
}

impl ConvPool {
    fn build(b: &mut Builder, name: &str, s: &CnnStage, channels: usize, t: usize) -> Result<(Self, usize)> {
        if s.kernel == 0 || s.stride == 0 || s.kernels == 0 || s.pool == 0 {
            return Err(build_err(name, format!("invalid stage {s:?}")));
        }
        let conv = b.conv(
            name,
            ConvShape {
                kernels: s.kernels,
                size: s.kernel,
                channels,
                stride: s.stride,
                pad: 0,
            },
            true,
        );
        let after_conv = conv
            .out_len(t)
            .ok_or_else(|| build_err(name, format!("{t} steps are shorter than the {}-step kernel", s.kernel)))?;
        let after_pool = pool_len(after_conv, s.pool, s.pool)
            .ok_or_else(|| build_err(name, format!("{after_conv} steps cannot be pooled by {}", s.pool)))?;
        Ok((Self { conv, pool: s.pool }, after_pool))
    }

    fn forward<T: Scalar>(&self, store: &ParamStore<T>, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let h = self.conv.forward(store, tape, x)?;
        let h = tape.relu(h)?;
        if self.pool == 1 {
            Ok(h)
        } else {
            tape.maxpool1d(h, self.pool, self.pool)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cnn {
    pub stages: Vec<ConvPool>,
    pub dense: Dense,
    /// Time steps left after the last stage.
    pub out_len: usize,
}

impl Cnn {
    pub(crate) fn build(b: &mut Builder, cfg: &CnnConfig, channels: usize) -> Result<(Self, usize)> {
        let (mut t, mut c) = (cfg.window, channels);
        let mut stages = Vec::new();
        for (i, s) in cfg.stages.iter().enumerate() {
            let (stage, next) = ConvPool::build(b, &format!("conv{}", i + 1), s, c, t)?;
            stages.push(stage);
            t = next;
            c = s.kernels;
        }
        let dense = b.dense("dense", t * c, cfg.dense);
        Ok((
            Self {
                stages,
                dense,
                out_len: t,
            },
            cfg.dense,
        ))
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for s in &self.stages {
            h = s.forward(store, tape, h)?;
        }
        let h = flatten(tape, h)?;
        dense_relu(&self.dense, store, tape, h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub stack: LstmStack,
    pub dense: Dense,
}

impl Lstm {
    pub(crate) fn build(b: &mut Builder, cfg: &LstmConfig, channels: usize) -> Result<(Self, usize)> {
        if cfg.window == 0 || cfg.hidden == 0 || cfg.layers == 0 || cfg.dense == 0 {
            return Err(build_err("lstm", "window, hidden size, layers and dense width must be positive"));
        }
        let stack = LstmStack::build(b, channels, cfg.hidden, cfg.layers);
        let dense = b.dense("dense", cfg.hidden, cfg.dense);
        Ok((Self { stack, dense }, cfg.dense))
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let h = self.stack.forward(store, tape, x)?;
        dense_relu(&self.dense, store, tape, h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hybrid {
    pub conv: ConvPool,
    pub stack: LstmStack,
    pub dense: Dense,
    /// Steps seen by the recurrent layers.
    pub steps: usize,
}

impl Hybrid {
    pub(crate) fn build(b: &mut Builder, cfg: &HybridConfig, channels: usize) -> Result<(Self, usize)> {
        if cfg.hidden == 0 || cfg.layers == 0 || cfg.dense == 0 {
            return Err(build_err("lstm", "hidden size, layers and dense width must be positive"));
        }
        let (conv, steps) = ConvPool::build(b, "conv1", &cfg.conv, channels, cfg.window)?;
        let stack = LstmStack::build(b, cfg.conv.kernels, cfg.hidden, cfg.layers);
        let dense = b.dense("dense", cfg.hidden, cfg.dense);
        Ok((
            Self {
                conv,
                stack,
                dense,
                steps,
            },
            cfg.dense,
        ))
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let h = self.conv.forward(store, tape, x)?;
        let h = self.stack.forward(store, tape, h)?;
        dense_relu(&self.dense, store, tape, h)
    }
}

/// Encoder `hidden → bottleneck`, decoder `bottleneck → hidden → input`.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub encoder: Dense,
    pub bottleneck: Dense,
    pub decoder: Dense,
    pub reconstruction: Dense,
    pub reconstruction_weight: f64,
}

impl Autoencoder {
    pub(crate) fn build(b: &mut Builder, cfg: &AeConfig, channels: usize) -> Result<(Self, usize)> {
        if cfg.window == 0 || cfg.hidden == 0 || cfg.bottleneck == 0 {
            return Err(build_err("ae", "window, hidden and bottleneck sizes must be positive"));
        }
        if !(cfg.reconstruction_weight >= 0.0) {
            return Err(build_err("ae", "reconstruction weight must be non-negative"));
        }
        let input = cfg.window * channels;
        Ok((
            Self {
                encoder: b.dense("encoder", input, cfg.hidden),
                bottleneck: b.dense("bottleneck", cfg.hidden, cfg.bottleneck),
                decoder: b.dense("decoder", cfg.bottleneck, cfg.hidden),
                reconstruction: b.dense("reconstruction", cfg.hidden, input),
                reconstruction_weight: cfg.reconstruction_weight,
            },
            cfg.bottleneck,
        ))
    }

    /// Returns the code and, on a training tape, the weighted reconstruction loss.
    pub fn forward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        tape: &mut Tape<T>,
        x: Var,
    ) -> Result<(Var, Option<Var>)> {
        let flat = flatten(tape, x)?;
        let h = dense_relu(&self.encoder, store, tape, flat)?;
        let code = dense_relu(&self.bottleneck, store, tape, h)?;
        if !tape.training() || self.reconstruction_weight == 0.0 {
            return Ok((code, None));
        }
        let h = dense_relu(&self.decoder, store, tape, code)?;
        let recon = self.reconstruction.forward(store, tape, h)?;
        let target = tape.value(flat).clone();
        let mse = tape.mse(recon, &target)?;
        let w = tape.constant(Tensor::scalar(T::of(self.reconstruction_weight)))?;
        Ok((code, Some(tape.mul(mse, w)?)))
    }
}

/// Classic feature vectors, standardised with training statistics, fed to
/// the classifier directly.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureHead {
    pub kind: FeatureKind,
    pub window: usize,
    pub channels: usize,
    pub codebook: Option<CodebookParams>,
    pub mean: ParamId,
    pub std: ParamId,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodebookParams {
    pub w: usize,
    pub h: usize,
    pub n: usize,
    pub codewords: Vec<ParamId>,
    pub sigma: ParamId,
    pub config: CodebookConfig,
}

const FEATURE_STD_FLOOR: f64 = 1e-8;

impl FeatureHead {
    pub(crate) fn build(b: &mut Builder, cfg: &FeatureHeadConfig, channels: usize) -> Result<(Self, usize)> {
        let codebook = match cfg.features {
            FeatureKind::Hc => {
                if cfg.window < 4 {
                    return Err(build_err("features", "hand-crafted features need a window of at least 4"));
                }
                None
            }
            FeatureKind::Cbh | FeatureKind::Cbs => {
                let c = &cfg.codebook;
                if c.n < 2 || c.w == 0 || c.h == 0 || c.w > cfg.window {
                    return Err(build_err(
                        "codebook",
                        format!("need n ≥ 2 and 1 ≤ w ≤ {} with h ≥ 1, got {c:?}", cfg.window),
                    ));
                }
                let mut s = b.scope("codebook");
                Some(CodebookParams {
                    w: c.w,
                    h: c.h,
                    n: c.n,
                    codewords: (0..channels)
                        .map(|ch| s.buffer(&format!("ch{ch}"), Tensor::zeros(&[c.n, c.w])))
                        .collect(),
                    sigma: s.buffer("sigma", Tensor::full(&[1], 1.0)),
                    config: *c,
                })
            }
        };
        let len = match &codebook {
            None => channels * HC_PER_CHANNEL,
            Some(cb) => channels * cb.n,
        };
        let mut s = b.scope("features");
        let mean = s.buffer("mean", Tensor::zeros(&[len]));
        let std = s.buffer("std", Tensor::full(&[len], 1.0));
        Ok((
            Self {
                kind: cfg.features,
                window: cfg.window,
                channels,
                codebook,
                mean,
                std,
                len,
            },
            len,
        ))
    }

    fn codebook(&self, store: &ParamStore<f32>) -> Result<Option<Codebook>> {
        let Some(p) = &self.codebook else {
            return Ok(None);
        };
        let words = p
            .codewords
            .iter()
            .map(|&id| store.get(id).data().iter().map(|&v| v as f64).collect())
            .collect();
        let sigma = store.get(p.sigma).data()[0] as f64;
        Codebook::new(p.w, p.h, words, sigma).map(Some)
    }

    fn raw(&self, store: &ParamStore<f32>, pairs: &[WindowPair]) -> Result<Vec<Vec<f64>>> {
        let cb = self.codebook(store)?;
        let t = self.window;
        let windows: Vec<&[f32]> = pairs.iter().map(|p| p.trailing(t)).collect();
        match (&cb, self.kind) {
            (None, _) => crate::parallel::map(&windows, |w| hc_features(w, t, self.channels))
                .into_iter()
                .collect(),
            (Some(cb), kind) => cb.assign_batch(&windows, t, kind == FeatureKind::Cbs),
        }
    }

    /// Fits the codebook (when used) and the standardisation statistics on
    /// the training pairs.
    pub(crate) fn prepare(&self, store: &mut ParamStore<f32>, pairs: &[WindowPair]) -> Result<()> {
        if pairs.is_empty() {
            return Err(Error::EmptyDataset("no training pairs for feature statistics".into()));
        }
        if let Some(p) = &self.codebook {
            let windows: Vec<&[f32]> = pairs.iter().map(|pr| pr.trailing(self.window)).collect();
            let cb = Codebook::fit(&windows, self.window, self.channels, &p.config)?;
            for (id, words) in p.codewords.iter().zip(&cb.codewords) {
                store.set_data(*id, words.iter().map(|&v| v as f32).collect())?;
            }
            store.set_data(p.sigma, vec![cb.sigma as f32])?;
        }
        let raw = self.raw(store, pairs)?;
        let n = raw.len() as f64;
        let mut mean = vec![0.0f64; self.len];
        for r in &raw {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0f64; self.len];
        for r in &raw {
            for (k, v) in r.iter().enumerate() {
                var[k] += (v - mean[k]).powi(2) / n;
            }
        }
        store.set_data(self.mean, mean.iter().map(|&v| v as f32).collect())?;
        store.set_data(
            self.std,
            var.iter().map(|v| v.sqrt().max(FEATURE_STD_FLOOR) as f32).collect(),
        )
    }

    /// Standardised features, `[N, len]`.
    pub(crate) fn encode(&self, store: &ParamStore<f32>, pairs: &[WindowPair]) -> Result<Tensor<f32>> {
        let raw = self.raw(store, pairs)?;
        let (mean, std) = (store.get(self.mean).data(), store.get(self.std).data());
        let mut data = Vec::with_capacity(raw.len() * self.len);
        for r in &raw {
            for k in 0..self.len {
                data.push(((r[k] - mean[k] as f64) / std[k] as f64) as f32);
            }
        }
        Tensor::new(&[raw.len(), self.len], data)
    }
}
