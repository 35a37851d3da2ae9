use crate::error::{Error, Result};

use super::{ParamId, ParamStore, Scalar};

/// ADADELTA with decaying averages of squared gradients and squared updates.
///
/// Per parameter element, with gradient `g`:
///
/// ```text
/// E[g²]  ← ρ·E[g²] + (1−ρ)·g²
/// Δx     = −sqrt(E[Δx²] + ε) / sqrt(E[g²] + ε) · g
/// E[Δx²] ← ρ·E[Δx²] + (1−ρ)·Δx²
/// x      ← x + lr·Δx
/// ```
#[derive(Debug, Clone)]
pub struct Adadelta<T: Scalar = f32> {
    pub rho: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    sq_grad: Vec<Option<Vec<T>>>,
    sq_delta: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Adadelta<T> {
    fn default() -> Self {
        Self::new(1.0, 0.95, 1e-6)
    }
}

impl<T: Scalar> Adadelta<T> {
    pub fn new(learning_rate: f64, rho: f64, epsilon: f64) -> Self {
        Self {
            rho,
            epsilon,
            learning_rate,
            sq_grad: Vec::new(),
            sq_delta: Vec::new(),
        }
    }

    /// `E[g²]` for `id`, if the parameter has been stepped.
    pub fn accumulated_sq_grad(&self, id: ParamId) -> Option<&[T]> {
        self.sq_grad.get(id.index()).and_then(|v| v.as_deref())
    }

    /// `E[Δx²]` for `id`, if the parameter has been stepped.
    pub fn accumulated_sq_update(&self, id: ParamId) -> Option<&[T]> {
        self.sq_delta.get(id.index()).and_then(|v| v.as_deref())
    }

    /// Applies one update. Non-finite gradients abort the step before any
    /// parameter or accumulator changes.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[(ParamId, Vec<T>)]) -> Result<()> {
        for (id, g) in grads {
            let entry = params.entry(*id);
            if g.len() != entry.tensor.numel() {
                return Err(Error::Shape(format!(
                    "gradient for {} has {} values, parameter has {}",
                    entry.name,
                    g.len(),
                    entry.tensor.numel()
                )));
            }
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for {} at index {i}",
                    entry.name
                )));
            }
        }
        if self.sq_grad.len() < params.len() {
            self.sq_grad.resize(params.len(), None);
            self.sq_delta.resize(params.len(), None);
        }
        let rho = T::of(self.rho);
        let one_minus = T::of(1.0 - self.rho);
        let eps = T::of(self.epsilon);
        let lr = T::of(self.learning_rate);
        for (id, g) in grads {
            if !params.entry(*id).trainable {
                continue;
            }
            let n = g.len();
            let eg = self.sq_grad[id.index()].get_or_insert_with(|| vec![T::zero(); n]);
            let ed = self.sq_delta[id.index()].get_or_insert_with(|| vec![T::zero(); n]);
            let x = params.get_mut(*id).data_mut();
            for j in 0..n {
                let gj = g[j];
                eg[j] = rho * eg[j] + one_minus * gj * gj;
                let delta = -((ed[j] + eps).sqrt() / (eg[j] + eps).sqrt()) * gj;
                ed[j] = rho * ed[j] + one_minus * delta * delta;
                x[j] = x[j] + lr * delta;
            }
        }
        Ok(())
    }
}
