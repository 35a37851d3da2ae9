use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::{ParamStore, Scalar, Tape, Var};

use super::layers::{BatchNorm, Builder, Conv, ConvShape};

/// One stage of bottleneck blocks: `1×1 c_mid → 3×1 c_mid → 1×1 c_out`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub c_mid: usize,
    pub c_out: usize,
    pub repeats: usize,
}

/// `relu(h(x) + F(x))` where `F` is the batch-normalised bottleneck and `h`
/// is the identity, or a 1×1 projection when the channel count changes.
/// The 3×1 convolution is zero-padded so the time length is preserved.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub reduce: Conv,
    pub reduce_bn: BatchNorm,
    pub mid: Conv,
    pub mid_bn: BatchNorm,
    pub expand: Conv,
    pub expand_bn: BatchNorm,
    pub projection: Option<Conv>,
}

impl ResidualBlock {
    /// A standalone block with parameters under `name`, Glorot-initialised from `seed`.
    pub fn new(store: &mut ParamStore<f32>, name: &str, c_in: usize, c_mid: usize, c_out: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::new(store, &mut rng);
        Self::build(&mut b.scope(name), c_in, c_mid, c_out)
    }

    pub(crate) fn build(b: &mut Builder, c_in: usize, c_mid: usize, c_out: usize) -> Self {
        let pointwise = |kernels, channels| ConvShape {
            kernels,
            size: 1,
            channels,
            stride: 1,
            pad: 0,
        };
        Self {
            reduce: b.conv("reduce", pointwise(c_mid, c_in), false),
            reduce_bn: b.batchnorm("reduce_bn", c_mid),
            mid: b.conv(
                "mid",
                ConvShape {
                    kernels: c_mid,
                    size: 3,
                    channels: c_mid,
                    stride: 1,
                    pad: 1,
                },
                false,
            ),
            mid_bn: b.batchnorm("mid_bn", c_mid),
            expand: b.conv("expand", pointwise(c_out, c_mid), false),
            expand_bn: b.batchnorm("expand_bn", c_out),
            projection: (c_in != c_out).then(|| b.conv("projection", pointwise(c_out, c_in), true)),
        }
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let mut f = self.reduce.forward(store, tape, x)?;
        f = self.reduce_bn.forward(store, tape, f)?;
        f = tape.relu(f)?;
        f = self.mid.forward(store, tape, f)?;
        f = self.mid_bn.forward(store, tape, f)?;
        f = tape.relu(f)?;
        f = self.expand.forward(store, tape, f)?;
        f = self.expand_bn.forward(store, tape, f)?;
        let shortcut = match &self.projection {
            Some(p) => p.forward(store, tape, x)?,
            None => x,
        };
        let y = tape.add(shortcut, f)?;
        tape.relu(y)
    }
}
