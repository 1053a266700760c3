//! One-vs-all linear L2-SVM output layer.
//!
//! For a batch of `p` feature rows `x_i`, one weight row `w_k` and bias
//! `b_k` per class, and targets `t_ik ∈ {−1, +1}` (+1 only at the true
//! class), the objective is
//!
//! ```text
//! L = (1/p)·‖W‖²_F + C · R_i,k( max(0, 1 − t_ik·(w_k·x_i + b_k))² )
//! ```
//!
//! where `R` is a plain sum over the batch (default) or a mean. The bias is
//! never regularized. Prediction is the argmax over raw class scores with
//! ties going to the lowest class index.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{he_truncated_normal, missing_cache, Param};
use crate::tensor::{cast, matmul, matmul_nt, matmul_tn, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reduction::Sum => "sum",
            Reduction::Mean => "mean",
        })
    }
}

impl FromStr for Reduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Reduction::Sum),
            "mean" => Ok(Reduction::Mean),
            other => Err(Error::config(format!(
                "unknown reduction `{other}` (expected sum or mean)"
            ))),
        }
    }
}

/// ±1 one-vs-all target matrix, exactly one +1 per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OvaTargets {
    rows: usize,
    classes: usize,
    signs: Vec<i8>,
}

impl OvaTargets {
    pub fn encode(labels: &[usize], classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::input(format!("need at least 2 classes, got {classes}")));
        }
        let mut signs = vec![-1i8; labels.len() * classes];
        for (i, &label) in labels.iter().enumerate() {
            if label >= classes {
                return Err(Error::input(format!(
                    "label {label} at row {i} is out of range for {classes} classes"
                )));
            }
            signs[i * classes + label] = 1;
        }
        Ok(Self {
            rows: labels.len(),
            classes,
            signs,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, row: usize, class: usize) -> i8 {
        self.signs[row * self.classes + class]
    }

    pub fn row(&self, row: usize) -> &[i8] {
        &self.signs[row * self.classes..(row + 1) * self.classes]
    }
}

/// Loss value and the pieces the backward pass needs.
#[derive(Debug, Clone)]
pub struct SvmLoss<T: Scalar> {
    pub loss: f64,
    /// ∂L/∂scores.
    pub score_grad: Tensor<T>,
    /// ∂/∂W of the regularizer alone, `(2/p)·W`.
    pub reg_grad_w: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct SvmHead<T: Scalar> {
    weight: Param<T>,
    bias: Param<T>,
    c: f64,
    reduction: Reduction,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> SvmHead<T> {
    pub fn new<R: Rng + ?Sized>(classes: usize, dim: usize, c: f64, reduction: Reduction, rng: &mut R) -> Result<Self> {
        Self::check_dims(classes, dim, c)?;
        Self::from_params(
            he_truncated_normal(&[classes, dim], dim, rng),
            Tensor::zeros(&[classes]),
            c,
            reduction,
        )
    }

    pub fn from_params(weight: Tensor<T>, bias: Tensor<T>, c: f64, reduction: Reduction) -> Result<Self> {
        let (k, d) = weight.dims2()?;
        Self::check_dims(k, d, c)?;
        if bias.shape() != [k] {
            return Err(Error::dim(format!(
                "svm bias {:?} does not match {k} classes",
                bias.shape()
            )));
        }
        Ok(Self {
            weight: Param::new("svm.weight", weight),
            bias: Param::new("svm.bias", bias),
            c,
            reduction,
            cache: None,
        })
    }

    fn check_dims(classes: usize, dim: usize, c: f64) -> Result<()> {
        if classes < 2 || dim < 1 {
            return Err(Error::config(format!(
                "svm head needs K ≥ 2 and d ≥ 1, got K={classes} d={dim}"
            )));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::config(format!("svm penalty C must be positive, got {c}")));
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn reduction(&self) -> Reduction {
        self.reduction
    }

    pub fn weight(&self) -> &Param<T> {
        &self.weight
    }

    pub fn bias(&self) -> &Param<T> {
        &self.bias
    }

    /// `x·Wᵀ + b`, one score per class.
    pub fn scores(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, d) = x.dims2()?;
        if d != self.dim() {
            return Err(Error::dim(format!(
                "svm head expects {} features, got input {:?}",
                self.dim(),
                x.shape()
            )));
        }
        let mut s = matmul_nt(x, &self.weight.value)?;
        crate::nn::add_row_bias(&mut s, &self.bias.value);
        Ok(s)
    }

    /// Train-mode scoring: also keeps `x` for [`SvmHead::backward`].
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = self.scores(x)?;
        self.cache = Some(x.clone());
        Ok(s)
    }

    /// Squared-hinge objective for precomputed `scores`.
    pub fn loss(&self, scores: &Tensor<T>, targets: &OvaTargets) -> Result<SvmLoss<T>> {
        let (p, k) = scores.dims2()?;
        if p == 0 || targets.rows() == 0 {
            return Err(Error::input("empty batch"));
        }
        if targets.rows() != p || targets.classes() != k || k != self.classes() {
            return Err(Error::dim(format!(
                "scores {:?} do not match targets {}x{} / head with {} classes",
                scores.shape(),
                targets.rows(),
                targets.classes(),
                self.classes()
            )));
        }
        let scale = match self.reduction {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / p as f64,
        };
        let mut hinge_total = 0.0;
        let mut grad = Vec::with_capacity(p * k);
        for i in 0..p {
            for (j, &s) in scores.row(i).iter().enumerate() {
                let t = f64::from(targets.get(i, j));
                let slack = (1.0 - t * s.to_f64().unwrap_or(f64::NAN)).max(0.0);
                hinge_total += slack * slack;
                grad.push(cast(-2.0 * self.c * scale * t * slack));
            }
        }
        let reg = self.weight.value.sum_squares() / p as f64;
        let two_over_p: T = cast(2.0 / p as f64);
        Ok(SvmLoss {
            loss: reg + self.c * scale * hinge_total,
            score_grad: Tensor::new(vec![p, k], grad)?,
            reg_grad_w: self.weight.value.map(|w| w * two_over_p),
        })
    }

    /// Accumulates ∂L/∂W and ∂L/∂b, returning ∂L/∂x.
    pub fn backward(&mut self, loss: &SvmLoss<T>) -> Result<Tensor<T>> {
        let x = self.cache.as_ref().ok_or_else(|| missing_cache("svm"))?;
        let dw = matmul_tn(&loss.score_grad, x)?;
        self.weight.grad.add_assign(&dw)?;
        self.weight.grad.add_assign(&loss.reg_grad_w)?;
        self.bias.grad.add_assign(&loss.score_grad.sum_rows()?)?;
        matmul(&loss.score_grad, &self.weight.value)
    }

    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.scores(x)?))
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Index of the largest value in each row; the lowest index wins ties.
pub fn argmax_rows<T: Scalar>(scores: &Tensor<T>) -> Vec<usize> {
    (0..scores.rows())
        .map(|i| {
            let row = scores.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
