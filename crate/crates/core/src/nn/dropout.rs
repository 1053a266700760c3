use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{missing_cache, Layer, Mode};
use crate::error::{Error, Result};
use crate::rng::{indexed_substream, Stream};
use crate::tensor::{cast, Scalar, Tensor};

/// Inverted dropout: survivors are scaled by `1 / keep_prob` at train time,
/// so inference is the identity.
#[derive(Debug, Clone)]
pub struct Dropout<T: Scalar> {
    name: String,
    keep_prob: f64,
    rng: ChaCha8Rng,
    mask: Option<Tensor<T>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(name: &str, keep_prob: f64, seed: u64) -> Result<Self> {
        if !(keep_prob > 0.0 && keep_prob <= 1.0) {
            return Err(Error::config(format!(
                "dropout `{name}`: keep probability {keep_prob} outside (0, 1]"
            )));
        }
        Ok(Self {
            name: name.to_string(),
            keep_prob,
            rng: indexed_substream(seed, Stream::Dropout, 0),
            mask: None,
        })
    }

    pub fn keep_prob(&self) -> f64 {
        self.keep_prob
    }
}

impl<T: Scalar> Layer<T> for Dropout<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if mode == Mode::Infer {
            self.mask = None;
            return Ok(x.clone());
        }
        let scale: T = cast(1.0 / self.keep_prob);
        let keep = self.keep_prob;
        let rng = &mut self.rng;
        let mask = Tensor::from_fn(x.shape(), |_| {
            if keep >= 1.0 || rng.random::<f64>() < keep {
                scale
            } else {
                T::zero()
            }
        });
        let y = x.zip_map(&mask, |a, m| a * m)?;
        self.mask = Some(mask);
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.clone())
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = self.mask.as_ref().ok_or_else(|| missing_cache(&self.name))?;
        upstream.zip_map(mask, |u, m| u * m)
    }

    fn has_cache(&self) -> bool {
        self.mask.is_some()
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = indexed_substream(seed, Stream::Dropout, 0);
    }
}
