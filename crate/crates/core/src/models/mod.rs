//! The asymmetric residual network, the baseline models, and their
//! training, evaluation and checkpointing.

mod arn;
mod baselines;
mod checkpoint;
mod layers;
mod lstm;
mod residual;
mod train;

pub use arn::{Arn, ArnConfig, Path, PathConfig};
pub use baselines::{
    AeConfig, Autoencoder, Cnn, CnnConfig, CnnStage, FeatureHead, FeatureHeadConfig, FeatureKind,
    Hybrid, HybridConfig, Lstm, LstmConfig, Mlp, MlpConfig, Resnet, ResnetConfig,
};
pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, checkpoint_load, checkpoint_save, CheckpointMeta,
    CHECKPOINT_VERSION,
};
pub use layers::{BatchNorm, Conv, Dense};
pub use lstm::{LstmCell, LstmStack, LstmStep, GATES};
pub use residual::{ResidualBlock, StageSpec};
pub use train::{evaluate, infer_logits, predict, train, EpochRecord, History, TrainConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::WindowPair;
use crate::tensor::{ParamStore, Scalar, Tape, Tensor, Var};

use layers::Builder;

/// Architecture-specific settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Arn(ArnConfig),
    Resnet(ResnetConfig),
    Mlp(MlpConfig),
    Cnn(CnnConfig),
    Lstm(LstmConfig),
    Hybrid(HybridConfig),
    Ae(AeConfig),
    FeatureHead(FeatureHeadConfig),
}

impl ModelKind {
    /// Default settings for a kind name such as `"arn"` or `"feature_head"`.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "arn" => Self::Arn(ArnConfig::default()),
            "resnet" => Self::Resnet(ResnetConfig::default()),
            "mlp" => Self::Mlp(MlpConfig::default()),
            "cnn" => Self::Cnn(CnnConfig::default()),
            "lstm" => Self::Lstm(LstmConfig::default()),
            "hybrid" => Self::Hybrid(HybridConfig::default()),
            "ae" => Self::Ae(AeConfig::default()),
            "feature_head" | "hc" => Self::FeatureHead(FeatureHeadConfig::default()),
            "cbh" | "cbs" => Self::FeatureHead(FeatureHeadConfig {
                features: if name == "cbh" { FeatureKind::Cbh } else { FeatureKind::Cbs },
                ..Default::default()
            }),
            other => return Err(Error::Config(format!("unknown model kind `{other}`"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Arn(_) => "arn",
            Self::Resnet(_) => "resnet",
            Self::Mlp(_) => "mlp",
            Self::Cnn(_) => "cnn",
            Self::Lstm(_) => "lstm",
            Self::Hybrid(_) => "hybrid",
            Self::Ae(_) => "ae",
            Self::FeatureHead(c) => match c.features {
                FeatureKind::Hc => "hc",
                FeatureKind::Cbh => "cbh",
                FeatureKind::Cbs => "cbs",
            },
        }
    }

    /// Longest window the model reads; every pair must be at least this long.
    pub fn window(&self) -> usize {
        match self {
            Self::Arn(c) => c.t_wide,
            Self::Resnet(c) => c.window,
            Self::Mlp(c) => c.window,
            Self::Cnn(c) => c.window,
            Self::Lstm(c) => c.window,
            Self::Hybrid(c) => c.window,
            Self::Ae(c) => c.window,
            Self::FeatureHead(c) => c.window,
        }
    }

    /// Window label as printed in result tables, e.g. `32-96` or `64`.
    pub fn window_label(&self) -> String {
        match self {
            Self::Arn(c) => format!("{}-{}", c.t_narrow, c.t_wide),
            other => other.window().to_string(),
        }
    }

    /// Sets the single window length, or the `(narrow, wide)` pair for the ARN.
    pub fn set_window(&mut self, narrow: usize, wide: usize) {
        match self {
            Self::Arn(c) => {
                c.t_narrow = narrow;
                c.t_wide = wide;
            }
            Self::Resnet(c) => c.window = wide,
            Self::Mlp(c) => c.window = wide,
            Self::Cnn(c) => c.window = wide,
            Self::Lstm(c) => c.window = wide,
            Self::Hybrid(c) => c.window = wide,
            Self::Ae(c) => c.window = wide,
            Self::FeatureHead(c) => c.window = wide,
        }
    }

    /// Divides every layer width by `divisor`, keeping depth and kernel sizes.
    pub fn with_width_divisor(self, divisor: usize) -> Self {
        match self {
            Self::Arn(mut c) => {
                c.path = c.path.with_width_divisor(divisor);
                Self::Arn(c)
            }
            Self::Resnet(c) => Self::Resnet(c.scaled(divisor)),
            Self::Mlp(c) => Self::Mlp(c.scaled(divisor)),
            Self::Cnn(c) => Self::Cnn(c.scaled(divisor)),
            Self::Lstm(c) => Self::Lstm(c.scaled(divisor)),
            Self::Hybrid(c) => Self::Hybrid(c.scaled(divisor)),
            Self::Ae(c) => Self::Ae(c.scaled(divisor)),
            other @ Self::FeatureHead(_) => other,
        }
    }
}

/// Everything needed to rebuild a model's parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub channels: usize,
    pub classes: usize,
    /// Dropout before the classifier; off by default.
    #[serde(default)]
    pub dropout: f64,
    #[serde(flatten)]
    pub kind: ModelKind,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, channels: usize, classes: usize) -> Self {
        Self {
            channels,
            classes,
            dropout: 0.0,
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Net {
    Arn(Arn),
    Resnet(Resnet),
    Mlp(Mlp),
    Cnn(Cnn),
    Lstm(Lstm),
    Hybrid(Hybrid),
    Ae(Autoencoder),
    Features(FeatureHead),
}

/// Result of a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    /// `[N, K]` unnormalised class scores.
    pub logits: Var,
    /// Extra loss term (the autoencoder's reconstruction error in training).
    pub aux_loss: Option<Var>,
}

/// A built network: the layer layout plus the spec it came from. Parameter
/// values live in a separate [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    net: Net,
    head: layers::Dense,
}

impl Model {
    /// Builds the layout and a freshly initialised parameter store: Glorot
    /// weights, zero biases, unit batch-norm scales.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<(Self, ParamStore<f32>)> {
        if spec.channels == 0 || spec.classes < 2 {
            return Err(Error::Config(format!(
                "a model needs at least one channel and two classes, got {} and {}",
                spec.channels, spec.classes
            )));
        }
        if !(0.0..1.0).contains(&spec.dropout) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", spec.dropout)));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::new(&mut store, &mut rng);
        let (d, k) = (spec.channels, spec.classes);
        let (net, width) = match &spec.kind {
            ModelKind::Arn(c) => {
                let arn = Arn::build(&mut b, c, d, k)?;
                let head = arn.head;
                return Ok((
                    Self {
                        spec: spec.clone(),
                        net: Net::Arn(arn),
                        head,
                    },
                    store,
                ));
            }
            ModelKind::Resnet(c) => (Net::Resnet(Resnet::build(&mut b, c, d)?), c.path.fc),
            ModelKind::Mlp(c) => {
                let (m, w) = Mlp::build(&mut b.scope("mlp"), c, d)?;
                (Net::Mlp(m), w)
            }
            ModelKind::Cnn(c) => {
                let (m, w) = Cnn::build(&mut b.scope("cnn"), c, d)?;
                (Net::Cnn(m), w)
            }
            ModelKind::Lstm(c) => {
                let (m, w) = Lstm::build(&mut b.scope("lstm"), c, d)?;
                (Net::Lstm(m), w)
            }
            ModelKind::Hybrid(c) => {
                let (m, w) = Hybrid::build(&mut b.scope("hybrid"), c, d)?;
                (Net::Hybrid(m), w)
            }
            ModelKind::Ae(c) => {
                let (m, w) = Autoencoder::build(&mut b.scope("ae"), c, d)?;
                (Net::Ae(m), w)
            }
            ModelKind::FeatureHead(c) => {
                let (m, w) = FeatureHead::build(&mut b, c, d)?;
                (Net::Features(m), w)
            }
        };
        let head = b.dense("head", width, k);
        Ok((
            Self {
                spec: spec.clone(),
                net,
                head,
            },
            store,
        ))
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn arn(&self) -> Option<&Arn> {
        match &self.net {
            Net::Arn(a) => Some(a),
            _ => None,
        }
    }

    pub fn resnet(&self) -> Option<&Resnet> {
        match &self.net {
            Net::Resnet(r) => Some(r),
            _ => None,
        }
    }

    pub fn cnn(&self) -> Option<&Cnn> {
        match &self.net {
            Net::Cnn(c) => Some(c),
            _ => None,
        }
    }

    pub fn mlp(&self) -> Option<&Mlp> {
        match &self.net {
            Net::Mlp(m) => Some(m),
            _ => None,
        }
    }

    pub fn hybrid(&self) -> Option<&Hybrid> {
        match &self.net {
            Net::Hybrid(h) => Some(h),
            _ => None,
        }
    }

    /// Number of input tensors [`Model::forward`] expects.
    pub fn input_count(&self) -> usize {
        if matches!(self.net, Net::Arn(_)) {
            2
        } else {
            1
        }
    }

    /// Fits data-dependent buffers (codebooks and feature statistics) on the
    /// training pairs. A no-op for the networks that read raw windows.
    pub fn prepare(&self, store: &mut ParamStore<f32>, train: &[WindowPair]) -> Result<()> {
        match &self.net {
            Net::Features(f) => f.prepare(store, train),
            _ => Ok(()),
        }
    }

    /// Turns window pairs into the model's input tensors: `[N, T, D]`
    /// windows (narrow then wide for the ARN), or `[N, F]` feature vectors.
    pub fn encode(&self, store: &ParamStore<f32>, pairs: &[WindowPair]) -> Result<Vec<Tensor<f32>>> {
        if pairs.is_empty() {
            return Err(Error::EmptyDataset("no window pairs to encode".into()));
        }
        let need = self.spec.kind.window();
        for p in pairs {
            if p.channels != self.spec.channels {
                return Err(Error::Shape(format!(
                    "model expects {} channels, data has {}",
                    self.spec.channels, p.channels
                )));
            }
            if p.t_wide < need {
                return Err(Error::Shape(format!(
                    "model reads {need}-step windows, data windows have {} steps",
                    p.t_wide
                )));
            }
            if p.label >= self.spec.classes {
                return Err(Error::LabelOutOfRange {
                    label: p.label,
                    classes: self.spec.classes,
                });
            }
        }
        let windows = |t: usize| -> Result<Tensor<f32>> {
            let mut data = Vec::with_capacity(pairs.len() * t * self.spec.channels);
            for p in pairs {
                data.extend_from_slice(p.trailing(t));
            }
            Tensor::new(&[pairs.len(), t, self.spec.channels], data)
        };
        match (&self.net, &self.spec.kind) {
            (Net::Arn(_), ModelKind::Arn(c)) => Ok(vec![windows(c.t_narrow)?, windows(c.t_wide)?]),
            (Net::Features(f), _) => Ok(vec![f.encode(store, pairs)?]),
            _ => Ok(vec![windows(need)?]),
        }
    }

    /// Penultimate representation, `[N, width]`, and any auxiliary loss.
    pub fn features<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        tape: &mut Tape<T>,
        inputs: &[Var],
    ) -> Result<(Var, Option<Var>)> {
        if inputs.len() != self.input_count() {
            return Err(Error::Shape(format!(
                "model takes {} inputs, got {}",
                self.input_count(),
                inputs.len()
            )));
        }
        let x = inputs[0];
        Ok(match &self.net {
            Net::Arn(a) => (a.features(store, tape, inputs[0], inputs[1])?, None),
            Net::Resnet(r) => (r.path.forward(store, tape, x)?, None),
            Net::Mlp(m) => (m.forward(store, tape, x)?, None),
            Net::Cnn(c) => (c.forward(store, tape, x)?, None),
            Net::Lstm(l) => (l.forward(store, tape, x)?, None),
            Net::Hybrid(h) => (h.forward(store, tape, x)?, None),
            Net::Ae(a) => a.forward(store, tape, x)?,
            Net::Features(_) => (x, None),
        })
    }

    /// Logits for a batch. `dropout_seed` drives the dropout mask on a
    /// training tape.
    pub fn forward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        tape: &mut Tape<T>,
        inputs: &[Var],
        dropout_seed: u64,
    ) -> Result<Forward> {
        let (h, aux_loss) = self.features(store, tape, inputs)?;
        let h = tape.dropout(h, self.spec.dropout, dropout_seed)?;
        let logits = self.head.forward(store, tape, h)?;
        Ok(Forward { logits, aux_loss })
    }
}

#[cfg(test)]
mod tests;
