use rand::Rng;

use super::{he_truncated_normal, missing_cache, Layer, Mode, Param};
use crate::error::{Error, Result};
use crate::tensor::{conv2d, conv2d_backward, maxpool2d, maxpool2d_backward, ConvCache, Padding, Scalar, Tensor};

/// Convolution layer over NHWC input.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar> {
    name: String,
    kernels: Param<T>,
    bias: Param<T>,
    stride: usize,
    padding: Padding,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        padding: Padding,
        rng: &mut R,
    ) -> Self {
        let shape = [kernel, kernel, in_channels, out_channels];
        Self::from_params(
            name,
            he_truncated_normal(&shape, kernel * kernel * in_channels, rng),
            Tensor::zeros(&[out_channels]),
            stride,
            padding,
        )
        .expect("consistent shapes")
    }

    pub fn from_params(
        name: &str,
        kernels: Tensor<T>,
        bias: Tensor<T>,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let (_, _, _, cout) = kernels.dims4()?;
        if bias.shape() != [cout] || stride == 0 {
            return Err(Error::dim(format!(
                "conv `{name}`: bias {:?} / stride {stride} inconsistent with kernels {:?}",
                bias.shape(),
                kernels.shape()
            )));
        }
        Ok(Self {
            name: name.to_string(),
            kernels: Param::new(format!("{name}.kernels"), kernels),
            bias: Param::new(format!("{name}.bias"), bias),
            stride,
            padding,
            cache: None,
        })
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.cache = (mode == Mode::Train).then(|| x.clone());
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(
            x,
            &self.kernels.value,
            Some(&self.bias.value),
            self.stride,
            self.padding,
        )
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self.cache.take().ok_or_else(|| missing_cache(&self.name))?;
        let cache = ConvCache {
            input,
            kernels: self.kernels.value.clone(),
            stride: self.stride,
            padding: self.padding,
        };
        let grads = conv2d_backward(&cache, upstream);
        self.cache = Some(cache.input);
        let grads = grads?;
        self.kernels.grad.add_assign(&grads.kernels)?;
        self.bias.grad.add_assign(&grads.bias)?;
        Ok(grads.input)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.kernels, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.kernels, &mut self.bias]
    }

    fn has_cache(&self) -> bool {
        self.cache.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct MaxPool2d {
    name: String,
    window: usize,
    stride: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(name: &str, window: usize, stride: usize) -> Self {
        Self {
            name: name.to_string(),
            window,
            stride,
            cache: None,
        }
    }
}

impl<T: Scalar> Layer<T> for MaxPool2d {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let pooled = maxpool2d(x, self.window, self.stride)?;
        self.cache = (mode == Mode::Train).then(|| (x.shape().to_vec(), pooled.argmax));
        Ok(pooled.output)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(maxpool2d(x, self.window, self.stride)?.output)
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, argmax) = self.cache.as_ref().ok_or_else(|| missing_cache(&self.name))?;
        maxpool2d_backward(shape, argmax, upstream)
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

    /// Direct loop over output pixel, channel, and kernel tap.
    fn conv_oracle(
        x: &Tensor<f64>,
        k: &Tensor<f64>,
        b: &Tensor<f64>,
        stride: usize,
        pad: usize,
        out_hw: (usize, usize),
    ) -> Vec<f64> {
        let (n, h, w, cin) = x.dims4().unwrap();
        let (kk, _, _, cout) = k.dims4().unwrap();
        let (oh, ow) = out_hw;
        let mut out = Vec::new();
        for s in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for co in 0..cout {
                        let mut acc = b.data()[co];
                        for ky in 0..kk {
                            for kx in 0..kk {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                for ci in 0..cin {
                                    let xv = x.data()[((s * h + iy as usize) * w + ix as usize) * cin + ci];
                                    let kv = k.data()[((ky * kk + kx) * cin + ci) * cout + co];
                                    acc += xv * kv;
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for seed in 0..20 {
            let x = projection(&[2, 5, 5, 2], seed);
            let k = projection(&[3, 3, 2, 4], seed + 100);
            let b = projection(&[4], seed + 200);
            let stride = rng.random_range(1..=2);
            let valid = conv2d(&x, &k, Some(&b), stride, Padding::Valid).unwrap();
            let (oh, ow) = (valid.shape()[1], valid.shape()[2]);
            let exp = conv_oracle(&x, &k, &b, stride, 0, (oh, ow));
            for (g, e) in valid.data().iter().zip(&exp) {
                assert!((g - e).abs() <= 1e-5 * e.abs().max(1e-9));
            }
            if stride == 1 {
                let same = conv2d(&x, &k, Some(&b), 1, Padding::Same).unwrap();
                assert_eq!(same.shape(), &[2, 5, 5, 4]);
                let exp = conv_oracle(&x, &k, &b, 1, 1, (5, 5));
                for (g, e) in same.data().iter().zip(&exp) {
                    assert!((g - e).abs() <= 1e-5 * e.abs().max(1e-9));
                }
            }
        }
    }

    fn check_conv_grads(stride: usize, padding: Padding, seed: u64) {
        let x = projection(&[2, 5, 6, 2], seed);
        let k = projection(&[3, 3, 2, 3], seed + 1);
        let b = projection(&[3], seed + 2);
        let mut layer = Conv2d::from_params("c", k.clone(), b.clone(), stride, padding).unwrap();
        let y = layer.forward(&x, Mode::Train).unwrap();
        let proj = projection(y.shape(), seed + 3);
        let dx = layer.backward(&proj).unwrap();

        let num_x = numeric_grad(&x, |xp| dot(&layer.infer(xp).unwrap(), &proj));
        assert_close("dx", dx.data(), &num_x);
        let num_k = numeric_grad(&k, |kp| dot(&conv2d(&x, kp, Some(&b), stride, padding).unwrap(), &proj));
        assert_close("dK", layer.kernels.grad.data(), &num_k);
        let num_b = numeric_grad(&b, |bp| dot(&conv2d(&x, &k, Some(bp), stride, padding).unwrap(), &proj));
        assert_close("db", layer.bias.grad.data(), &num_b);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        check_conv_grads(1, Padding::Same, 30);
        check_conv_grads(1, Padding::Valid, 40);
        check_conv_grads(2, Padding::Same, 50);
        check_conv_grads(2, Padding::Valid, 60);
    }

    #[test]
    fn same_padding_preserves_extent_at_stride_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for side in 1..=16 {
            for k in [1, 3, 5] {
                let layer = Conv2d::<f32>::new("c", k, 1, 2, 1, Padding::Same, &mut rng);
                let y = layer.infer(&Tensor::zeros(&[1, side, side + 1, 1])).unwrap();
                assert_eq!(y.shape(), &[1, side, side + 1, 2]);
            }
        }
    }

    #[test]
    fn pool_gradients_match_finite_differences() {
        // distinct values so no window has a near-tie
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let mut values: Vec<f64> = (0..2 * 6 * 6 * 3).map(|i| i as f64 * 0.1).collect();
        for i in (1..values.len()).rev() {
            values.swap(i, rng.random_range(0..=i));
        }
        let x = Tensor::new(vec![2, 6, 6, 3], values).unwrap();
        for stride in [1, 2] {
            let mut pool = MaxPool2d::new("p", 2, stride);
            let y = Layer::<f64>::forward(&mut pool, &x, Mode::Train).unwrap();
            let proj = projection(y.shape(), stride as u64);
            let dx = pool.backward(&proj).unwrap();
            let num = numeric_grad(&x, |xp| dot(&pool.infer(xp).unwrap(), &proj));
            assert_close("pool dx", dx.data(), &num);
        }
    }
}
