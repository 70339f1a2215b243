//! Neural building blocks on top of the autodiff tape.
//!
//! Layers own no tensors. They hold [`ParamId`]s into a [`ParamStore`], and
//! every forward pass binds the store onto a fresh tape. Rebuilding a model
//! with the same constructor sequence reproduces the same ids, which is what
//! checkpoint loading relies on.

mod adam;
mod attention;
mod layers;
mod se;

pub use adam::{AdamConfig, AdamState};
pub use attention::{MultiHeadSelfAttention, TransformerEncoderBlock};
pub use layers::{LayerNorm, Linear, Mlp};
pub use se::SeBlock;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use thiserror::Error;

use crate::tensor::{Element, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("parameter {0} has no gradient")]
    MissingGrad(String),
    #[error("invalid layer configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered, named collection of parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T: Element = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|t| tape.leaf(t.clone(), trainable))
                .collect(),
        }
    }
}

/// Tape handles for one bound [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Moves gradients off the tape, aligned with the store's order.
    pub fn take_grads<T: Element>(&self, tape: &mut Tape<T>) -> Vec<Option<Tensor<T>>> {
        self.vars.iter().map(|&v| tape.take_grad(v)).collect()
    }
}

/// Seeded parameter initializer.
#[derive(Debug, Clone)]
pub struct Init {
    rng: Xoshiro256PlusPlus,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    /// Uniform(-a, a) with `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot(&mut self, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor<f32> {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-a..a) as f32).collect();
        Tensor::new(shape.to_vec(), data).expect("length matches shape")
    }
}

/// Central-difference check of every parameter gradient of a scalar loss
/// built from `store`. Returns the max relative error over all scalars.
pub fn param_gradient_check<F>(store: &ParamStore<f64>, f: F, eps: f64) -> Result<f64, NnError>
where
    F: Fn(&mut Tape<f64>, &Bound) -> Result<Var, NnError>,
{
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, true);
    let loss = f(&mut tape, &bound)?;
    tape.backward(loss)?;
    let grads = bound.take_grads(&mut tape);

    let eval = |s: &ParamStore<f64>| -> Result<f64, NnError> {
        let mut tape = Tape::new();
        let bound = s.bind(&mut tape, false);
        let loss = f(&mut tape, &bound)?;
        Ok(tape.value(loss).item())
    };
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut probe = store.clone();
    for (i, g) in grads.iter().enumerate() {
        let n = store.tensors[i].len();
        for j in 0..n {
            analytic.push(g.as_ref().map_or(0.0, |g| g.data()[j]));
            let orig = store.tensors[i].data()[j];
            probe.tensors[i].data_mut()[j] = orig + eps;
            let up = eval(&probe)?;
            probe.tensors[i].data_mut()[j] = orig - eps;
            let down = eval(&probe)?;
            probe.tensors[i].data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * eps));
        }
    }
    Ok(crate::tensor::max_relative_error(&analytic, &numeric))
}

#[cfg(test)]
mod tests;
