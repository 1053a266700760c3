use rand::Rng;

use super::{add_row_bias, he_truncated_normal, missing_cache, Layer, Mode, Param};
use crate::error::{Error, Result};
use crate::tensor::{matmul, matmul_nt, matmul_tn, Scalar, Tensor};

/// Fully connected layer `y = x·W + b` with `W[d_in × d_out]`.
#[derive(Debug, Clone)]
pub struct Dense<T: Scalar> {
    name: String,
    weight: Param<T>,
    bias: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Self::from_params(
            name,
            he_truncated_normal(&[d_in, d_out], d_in, rng),
            Tensor::zeros(&[d_out]),
        )
        .expect("consistent shapes")
    }

    pub fn from_params(name: &str, weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let (_, d_out) = weight.dims2()?;
        if bias.shape() != [d_out] {
            return Err(Error::dim(format!(
                "dense `{name}`: bias {:?} does not match weight {:?}",
                bias.shape(),
                weight.shape()
            )));
        }
        Ok(Self {
            name: name.to_string(),
            weight: Param::new(format!("{name}.weight"), weight),
            bias: Param::new(format!("{name}.bias"), bias),
            cache: None,
        })
    }

    pub fn d_in(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn weight(&self) -> &Param<T> {
        &self.weight
    }

    pub fn bias(&self) -> &Param<T> {
        &self.bias
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, w) = x.dims2()?;
        if w != self.d_in() {
            return Err(Error::dim(format!(
                "dense `{}` expects width {}, got input {:?}",
                self.name,
                self.d_in(),
                x.shape()
            )));
        }
        Ok(())
    }
}

impl<T: Scalar> Layer<T> for Dense<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.cache = (mode == Mode::Train).then(|| x.clone());
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut y = matmul(x, &self.weight.value)?;
        add_row_bias(&mut y, &self.bias.value);
        Ok(y)
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.as_ref().ok_or_else(|| missing_cache(&self.name))?;
        if upstream.shape() != [x.rows(), self.d_out()] {
            return Err(Error::dim(format!(
                "dense `{}`: upstream {:?} does not match output [{}, {}]",
                self.name,
                upstream.shape(),
                x.rows(),
                self.d_out()
            )));
        }
        self.weight.grad.add_assign(&matmul_tn(x, upstream)?)?;
        self.bias.grad.add_assign(&upstream.sum_rows()?)?;
        matmul_nt(upstream, &self.weight.value)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn has_cache(&self) -> bool {
        self.cache.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weights_pass_input_through() {
        let mut d = Dense::from_params("d", Tensor::<f32>::identity(3), Tensor::zeros(&[3])).unwrap();
        let x = Tensor::new(vec![2, 3], vec![1., -2., 3., 4., 5., -6.]).unwrap();
        assert_eq!(d.forward(&x, Mode::Infer).unwrap().data(), x.data());
    }

    #[test]
    fn zero_input_yields_bias_rows() {
        let b = Tensor::<f32>::new(vec![2], vec![0.5, -1.5]).unwrap();
        let d = Dense::from_params("d", Tensor::full(&[4, 2], 3.0), b).unwrap();
        let y = d.infer(&Tensor::zeros(&[3, 4])).unwrap();
        assert_eq!(y.data(), &[0.5, -1.5, 0.5, -1.5, 0.5, -1.5]);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let d = Dense::<f32>::from_params("d", Tensor::zeros(&[4, 2]), Tensor::zeros(&[2])).unwrap();
        assert!(matches!(d.infer(&Tensor::zeros(&[1, 3])), Err(Error::Dimension(_))));
    }

    #[test]
    fn cache_follows_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut d = Dense::<f32>::new("d", 3, 2, &mut rng);
        let x = Tensor::zeros(&[1, 3]);
        d.forward(&x, Mode::Train).unwrap();
        assert!(d.has_cache());
        d.forward(&x, Mode::Infer).unwrap();
        assert!(!d.has_cache());
        assert!(d.backward(&Tensor::zeros(&[1, 2])).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut layer = Dense::<f64>::new("d", 4, 6, &mut rng);
        layer.bias.value = projection(&[6], 12);
        let x = projection(&[3, 4], 13);
        let proj = projection(&[3, 6], 14);

        let y = layer.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.shape(), &[3, 6]);
        let dx = layer.backward(&proj).unwrap();

        let loss_x = |xp: &Tensor<f64>| dot(&layer.infer(xp).unwrap(), &proj);
        assert_close("dx", dx.data(), &numeric_grad(&x, loss_x));

        let w = layer.weight.value.clone();
        let b = layer.bias.value.clone();
        let num_w = numeric_grad(&w, |wp| {
            let l = Dense::from_params("d", wp.clone(), b.clone()).unwrap();
            dot(&l.infer(&x).unwrap(), &proj)
        });
        assert_close("dW", layer.weight.grad.data(), &num_w);
        let num_b = numeric_grad(&b, |bp| {
            let l = Dense::from_params("d", w.clone(), bp.clone()).unwrap();
            dot(&l.infer(&x).unwrap(), &proj)
        });
        assert_close("db", layer.bias.grad.data(), &num_b);
    }
}
