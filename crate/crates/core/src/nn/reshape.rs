use super::{missing_cache, Layer, Mode};
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// Row-major reshape of each sample to a fixed trailing shape. Backward is
/// the inverse reshape.
#[derive(Debug, Clone)]
pub struct Reshape {
    name: String,
    sample_shape: Vec<usize>,
    input_shape: Option<Vec<usize>>,
}

impl Reshape {
    pub fn new(name: &str, sample_shape: &[usize]) -> Self {
        Self {
            name: name.to_string(),
            sample_shape: sample_shape.to_vec(),
            input_shape: None,
        }
    }

    fn target(&self, batch: usize) -> Vec<usize> {
        std::iter::once(batch)
            .chain(self.sample_shape.iter().copied())
            .collect()
    }
}

impl<T: Scalar> Layer<T> for Reshape {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = Layer::<T>::infer(self, x)?;
        self.input_shape = (mode == Mode::Train).then(|| x.shape().to_vec());
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.clone().reshape(&self.target(x.rows()))
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.input_shape.as_ref().ok_or_else(|| missing_cache(&self.name))?;
        upstream.clone().reshape(shape)
    }

    fn has_cache(&self) -> bool {
        self.input_shape.is_some()
    }
}

/// `[batch × ...] → [batch × prod(...)]`.
#[derive(Debug, Clone)]
pub struct Flatten {
    name: String,
    input_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            input_shape: None,
        }
    }
}

impl<T: Scalar> Layer<T> for Flatten {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = Layer::<T>::infer(self, x)?;
        self.input_shape = (mode == Mode::Train).then(|| x.shape().to_vec());
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.clone().reshape(&[x.rows(), x.row_len()])
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.input_shape.as_ref().ok_or_else(|| missing_cache(&self.name))?;
        upstream.clone().reshape(shape)
    }

    fn has_cache(&self) -> bool {
        self.input_shape.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_image_to_row() {
        let mut f = Flatten::new("flat");
        let x = Tensor::<f32>::from_fn(&[1, 32, 32, 1], |i| i as f32);
        let y = f.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.shape(), &[1, 1024]);
        assert_eq!(y.data(), x.data());
        let back = f.backward(&y).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn flatten_cnn_feature_map() {
        let y = Layer::<f32>::infer(&Flatten::new("flat"), &Tensor::zeros(&[2, 8, 8, 72])).unwrap();
        assert_eq!(y.shape(), &[2, 4608]);
    }

    #[test]
    fn reshape_then_flatten_is_identity() {
        let x = Tensor::<f32>::from_fn(&[3, 1024], |i| (i % 97) as f32);
        let img = Layer::<f32>::infer(&Reshape::new("r", &[32, 32, 1]), &x).unwrap();
        assert_eq!(img.shape(), &[3, 32, 32, 1]);
        let flat = Layer::<f32>::infer(&Flatten::new("f"), &img).unwrap();
        assert_eq!(flat, x);
    }
}
