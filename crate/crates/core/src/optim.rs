//! Adam with bias-corrected moment estimates.

use crate::error::{Error, Result};
use crate::nn::Param;
use crate::tensor::{cast, Scalar, Tensor};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self::with_hyper(lr, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS)
    }

    pub fn with_hyper(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Rebuilds a mid-run optimizer from serialized moments.
    pub fn from_state(
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        t: u64,
        m: Vec<Tensor<T>>,
        v: Vec<Tensor<T>>,
    ) -> Result<Self> {
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::dim("adam first and second moments disagree in shape"));
        }
        Ok(Self {
            lr,
            beta1,
            beta2,
            eps,
            t,
            m,
            v,
        })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.v
    }

    /// Updates every parameter from its accumulated gradient.
    pub fn step(&mut self, params: &mut [&mut Param<T>]) -> Result<()> {
        self.ensure_moments(params.iter().map(|p| p.value.shape()))?;
        for (p, _) in params.iter().zip(&self.m) {
            p.value.expect_same_shape(&p.grad)?;
        }
        self.t += 1;
        let (c1, c2) = self.corrections();
        for (i, p) in params.iter_mut().enumerate() {
            let Param { value, grad, .. } = &mut **p;
            self.update(i, value, grad, c1, c2);
        }
        Ok(())
    }

    /// Same as [`Adam::step`] for bare tensors.
    pub fn step_tensors(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        self.ensure_moments(params.iter().map(|p| p.shape()))?;
        for (p, g) in params.iter().zip(grads) {
            p.expect_same_shape(g)?;
        }
        self.t += 1;
        let (c1, c2) = self.corrections();
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            self.update(i, p, g, c1, c2);
        }
        Ok(())
    }

    fn corrections(&self) -> (f64, f64) {
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t))
    }

    fn ensure_moments<'a>(&mut self, shapes: impl ExactSizeIterator<Item = &'a [usize]>) -> Result<()> {
        if self.m.is_empty() {
            for s in shapes {
                self.m.push(Tensor::zeros(s));
                self.v.push(Tensor::zeros(s));
            }
            return Ok(());
        }
        if shapes.len() != self.m.len() {
            return Err(Error::dim(format!(
                "optimizer tracks {} parameters, got {}",
                self.m.len(),
                shapes.len()
            )));
        }
        for (s, m) in shapes.zip(&self.m) {
            if s != m.shape() {
                return Err(Error::dim(format!(
                    "parameter shape {s:?} does not match moment shape {:?}",
                    m.shape()
                )));
            }
        }
        Ok(())
    }

    fn update(&mut self, i: usize, value: &mut Tensor<T>, grad: &Tensor<T>, c1: f64, c2: f64) {
        let b1: T = cast(self.beta1);
        let b2: T = cast(self.beta2);
        let one_minus_b1: T = cast(1.0 - self.beta1);
        let one_minus_b2: T = cast(1.0 - self.beta2);
        let inv_c1: T = cast(1.0 / c1);
        let inv_c2: T = cast(1.0 / c2);
        let lr: T = cast(self.lr);
        let eps: T = cast(self.eps);
        let m = self.m[i].data_mut();
        let v = self.v[i].data_mut();
        for (((theta, &g), m), v) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = b1 * *m + one_minus_b1 * g;
            *v = b2 * *v + one_minus_b2 * g * g;
            let m_hat = *m * inv_c1;
            let v_hat = *v * inv_c2;
            *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
