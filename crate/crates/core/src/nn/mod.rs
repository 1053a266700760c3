//! Trainable layers with hand-derived backward passes.
//!
//! Every layer follows the same contract: `forward` in [`Mode::Train`]
//! retains what `backward` needs, `forward` in [`Mode::Infer`] drops it, and
//! `backward` adds parameter gradients into each [`Param::grad`] and returns
//! the gradient with respect to the layer input.

mod activation;
mod conv;
mod dense;
mod dropout;
mod gru;
mod reshape;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::Result;
use crate::tensor::{cast, Scalar, Tensor};

pub use activation::LeakyRelu;
pub use conv::{Conv2d, MaxPool2d};
pub use dense::Dense;
pub use dropout::Dropout;
pub use gru::{GruLayer, GruStack, GruStepCache};
pub use reshape::{Flatten, Reshape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// A named parameter tensor and its same-shaped gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<T: Scalar> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

pub trait Layer<T: Scalar>: Send + Sync {
    /// Unique name within a model, used for parameter names and diagnostics.
    fn name(&self) -> &str;

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>>;

    /// Inference-mode forward that leaves the layer untouched.
    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>>;

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>>;

    fn params(&self) -> Vec<&Param<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }

    /// Whether forward activations from a train-mode call are held.
    fn has_cache(&self) -> bool;

    /// Re-keys any internal randomness (dropout masks).
    fn reseed(&mut self, _seed: u64) {}
}

pub(crate) fn missing_cache(layer: &str) -> crate::Error {
    crate::Error::input(format!("layer `{layer}`: backward called without a train-mode forward"))
}

/// Normal(0, √(2/fan_in)) truncated at two standard deviations (resampled).
pub fn he_truncated_normal<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape, |_| loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= 2.0 * std {
            break cast(v);
        }
    })
}

/// Uniform(±√(6/(fan_in + fan_out))).
pub fn glorot_uniform<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let uniform = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
    Tensor::from_fn(shape, |_| cast(uniform.sample(rng)))
}

/// Adds a length-`c` bias to every row of a 2-D `[r × c]` tensor.
pub(crate) fn add_row_bias<T: Scalar>(x: &mut Tensor<T>, bias: &Tensor<T>) {
    let c = bias.len();
    for row in x.data_mut().chunks_exact_mut(c) {
        for (v, &b) in row.iter_mut().zip(bias.data()) {
            *v = *v + b;
        }
    }
}
