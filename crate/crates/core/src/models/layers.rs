use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{glorot_uniform, BatchNormRefs, ParamId, ParamStore, Scalar, Tape, Tensor, Var};

const BN_MOMENTUM: f64 = 0.9;
const BN_EPSILON: f64 = 1e-5;

/// Allocates named parameters under a dotted prefix.
pub(crate) struct Builder<'a> {
    store: &'a mut ParamStore<f32>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub(crate) fn new(store: &'a mut ParamStore<f32>, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub(crate) fn scope(&mut self, name: &str) -> Builder<'_> {
        Builder {
            prefix: self.name(name),
            store: self.store,
            rng: self.rng,
        }
    }

    fn name(&self, leaf: &str) -> String {
        if self.prefix.is_empty() {
            leaf.to_string()
        } else {
            format!("{}.{leaf}", self.prefix)
        }
    }

    pub(crate) fn param(&mut self, name: &str, t: Tensor<f32>) -> ParamId {
        let name = self.name(name);
        self.store.add(name, t, true)
    }

    pub(crate) fn buffer(&mut self, name: &str, t: Tensor<f32>) -> ParamId {
        let name = self.name(name);
        self.store.add(name, t, false)
    }

    pub(crate) fn glorot(&mut self, name: &str, shape: &[usize], fan_in: usize, fan_out: usize) -> ParamId {
        let t = glorot_uniform(shape, fan_in, fan_out, self.rng);
        self.param(name, t)
    }

    pub(crate) fn dense(&mut self, name: &str, input: usize, output: usize) -> Dense {
        let mut s = self.scope(name);
        Dense {
            w: s.glorot("w", &[output, input], input, output),
            b: s.param("b", Tensor::zeros(&[output])),
        }
    }

    pub(crate) fn conv(&mut self, name: &str, spec: ConvShape, bias: bool) -> Conv {
        let ConvShape { kernels, size, channels, stride, pad } = spec;
        let mut s = self.scope(name);
        Conv {
            w: s.glorot("w", &[kernels, size, channels], size * channels, size * kernels),
            b: bias.then(|| s.param("b", Tensor::zeros(&[kernels]))),
            size,
            stride,
            pad,
        }
    }

    pub(crate) fn batchnorm(&mut self, name: &str, channels: usize) -> BatchNorm {
        let mut s = self.scope(name);
        BatchNorm(BatchNormRefs {
            gamma: s.param("gamma", Tensor::full(&[channels], 1.0)),
            beta: s.param("beta", Tensor::zeros(&[channels])),
            running_mean: s.buffer("running_mean", Tensor::zeros(&[channels])),
            running_var: s.buffer("running_var", Tensor::full(&[channels], 1.0)),
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvShape {
    pub kernels: usize,
    pub size: usize,
    pub channels: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.linear(x, w, Some(b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub size: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = self.b.map(|b| tape.param(store, b));
        tape.conv1d(x, w, b, self.stride, self.pad)
    }

    /// Output length for an input of `t` steps, `None` when the kernel does not fit.
    pub fn out_len(&self, t: usize) -> Option<usize> {
        (t + 2 * self.pad).checked_sub(self.size).map(|r| r / self.stride + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNorm(pub BatchNormRefs);

impl BatchNorm {
    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        tape.batchnorm(store, x, &self.0)
    }
}

/// Output length of a max-pool, `None` when the window does not fit.
pub(crate) fn pool_len(t: usize, width: usize, stride: usize) -> Option<usize> {
    t.checked_sub(width).map(|r| r / stride + 1)
}
