use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{Scalar, Tensor};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T: Scalar = f32> {
    pub name: String,
    pub tensor: Tensor<T>,
    /// Buffers such as batch-norm running statistics are stored here but are
    /// never touched by the optimizer.
    pub trainable: bool,
}

/// Named, ordered collection of model parameters and buffers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T: Scalar = f32> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>, trainable: bool) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        self.entries.push(ParamEntry {
            name,
            tensor,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.trainable)
            .map(|(i, _)| ParamId(i))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.numel())
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    tensor: e.tensor.cast(),
                    trainable: e.trainable,
                })
                .collect(),
        }
    }

    /// Replaces the value of `id`, keeping its shape.
    pub fn set_data(&mut self, id: ParamId, data: Vec<T>) -> Result<()> {
        let e = &mut self.entries[id.0];
        if data.len() != e.tensor.numel() {
            return Err(Error::shape(format!(
                "parameter {} expects {} values, got {}",
                e.name,
                e.tensor.numel(),
                data.len()
            )));
        }
        e.tensor.data_mut().copy_from_slice(&data);
        Ok(())
    }
}

/// Glorot-uniform initialisation: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Scalar>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha8Rng,
) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| T::of(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::new(shape, data).expect("shape product matches")
}
