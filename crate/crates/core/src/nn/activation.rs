use super::{missing_cache, Layer, Mode};
use crate::error::Result;
use crate::tensor::{leaky_relu, leaky_relu_grad, Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct LeakyRelu<T: Scalar> {
    name: String,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> LeakyRelu<T> {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            cache: None,
        }
    }
}

impl<T: Scalar> Layer<T> for LeakyRelu<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.cache = (mode == Mode::Train).then(|| x.clone());
        Ok(leaky_relu(x))
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(leaky_relu(x))
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.as_ref().ok_or_else(|| missing_cache(&self.name))?;
        upstream.zip_map(&leaky_relu_grad(x), |u, g| u * g)
    }

    fn has_cache(&self) -> bool {
        self.cache.is_some()
    }
}
