//! Gated recurrent units with backpropagation through time.
//!
//! One step, with `[a, b]` denoting column concatenation:
//!
//! ```text
//! z  = σ([h_prev, x]·W_z + b_z)
//! r  = σ([h_prev, x]·W_r + b_r)
//! h̃  = tanh([r ⊙ h_prev, x]·W_h + b_h)
//! h  = (1 − z) ⊙ h_prev + z ⊙ h̃
//! ```
//!
//! All three weight matrices are `(hidden + input) × hidden`; the first
//! `hidden` rows multiply the recurrent state.

use rand::Rng;

use super::{add_row_bias, glorot_uniform, missing_cache, Layer, Mode, Param};
use crate::error::{Error, Result};
use crate::tensor::{
    matmul, matmul_nt, matmul_tn, sigmoid, sigmoid_grad_from_output, tanh, tanh_grad_from_output, Scalar, Tensor,
};

/// Activations of one step kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GruStepCache<T: Scalar> {
    pub h_prev: Tensor<T>,
    pub hx: Tensor<T>,
    pub z: Tensor<T>,
    pub r: Tensor<T>,
    pub rhx: Tensor<T>,
    pub candidate: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct GruLayer<T: Scalar> {
    name: String,
    input_dim: usize,
    hidden_dim: usize,
    w_z: Param<T>,
    w_r: Param<T>,
    w_h: Param<T>,
    b_z: Param<T>,
    b_r: Param<T>,
    b_h: Param<T>,
    cache: Option<Vec<GruStepCache<T>>>,
}

fn concat_cols<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, ca) = a.dims2()?;
    let (nb, cb) = b.dims2()?;
    if n != nb {
        return Err(Error::dim(format!(
            "cannot concatenate {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut data = Vec::with_capacity(n * (ca + cb));
    for i in 0..n {
        data.extend_from_slice(a.row(i));
        data.extend_from_slice(b.row(i));
    }
    Tensor::new(vec![n, ca + cb], data)
}

fn split_cols<T: Scalar>(t: &Tensor<T>, left: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, c) = t.dims2()?;
    let right = c - left;
    let mut a = Vec::with_capacity(n * left);
    let mut b = Vec::with_capacity(n * right);
    for i in 0..n {
        let row = t.row(i);
        a.extend_from_slice(&row[..left]);
        b.extend_from_slice(&row[left..]);
    }
    Ok((Tensor::new(vec![n, left], a)?, Tensor::new(vec![n, right], b)?))
}

impl<T: Scalar> GruLayer<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let fan_in = input_dim + hidden_dim;
        let shape = [fan_in, hidden_dim];
        let w_z = glorot_uniform(&shape, fan_in, hidden_dim, rng);
        let w_r = glorot_uniform(&shape, fan_in, hidden_dim, rng);
        let w_h = glorot_uniform(&shape, fan_in, hidden_dim, rng);
        let zeros = Tensor::zeros(&[hidden_dim]);
        Self::from_params(name, input_dim, [w_z, w_r, w_h], [zeros.clone(), zeros.clone(), zeros])
            .expect("consistent shapes")
    }

    /// Weights in (W_z, W_r, W_h) order, biases in (b_z, b_r, b_h) order.
    pub fn from_params(name: &str, input_dim: usize, weights: [Tensor<T>; 3], biases: [Tensor<T>; 3]) -> Result<Self> {
        let (rows, hidden_dim) = weights[0].dims2()?;
        if rows != input_dim + hidden_dim
            || weights.iter().any(|w| w.shape() != weights[0].shape())
            || biases.iter().any(|b| b.shape() != [hidden_dim])
        {
            return Err(Error::dim(format!(
                "gru `{name}`: inconsistent parameter shapes for input {input_dim}"
            )));
        }
        let [w_z, w_r, w_h] = weights;
        let [b_z, b_r, b_h] = biases;
        Ok(Self {
            name: name.to_string(),
            input_dim,
            hidden_dim,
            w_z: Param::new(format!("{name}.w_z"), w_z),
            w_r: Param::new(format!("{name}.w_r"), w_r),
            w_h: Param::new(format!("{name}.w_h"), w_h),
            b_z: Param::new(format!("{name}.b_z"), b_z),
            b_r: Param::new(format!("{name}.b_r"), b_r),
            b_h: Param::new(format!("{name}.b_h"), b_h),
            cache: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// One recurrence step from `h_prev[batch × hidden]` and
    /// `x_t[batch × input]`.
    pub fn step(&self, h_prev: &Tensor<T>, x_t: &Tensor<T>) -> Result<(Tensor<T>, GruStepCache<T>)> {
        let (n, hd) = h_prev.dims2()?;
        let (nx, xd) = x_t.dims2()?;
        if hd != self.hidden_dim || xd != self.input_dim || n != nx {
            return Err(Error::dim(format!(
                "gru `{}`: h_prev {:?} / x_t {:?} do not fit hidden {} input {}",
                self.name,
                h_prev.shape(),
                x_t.shape(),
                self.hidden_dim,
                self.input_dim
            )));
        }
        let hx = concat_cols(h_prev, x_t)?;
        let mut z_pre = matmul(&hx, &self.w_z.value)?;
        add_row_bias(&mut z_pre, &self.b_z.value);
        let z = sigmoid(&z_pre);
        let mut r_pre = matmul(&hx, &self.w_r.value)?;
        add_row_bias(&mut r_pre, &self.b_r.value);
        let r = sigmoid(&r_pre);
        let rh = r.zip_map(h_prev, |a, b| a * b)?;
        let rhx = concat_cols(&rh, x_t)?;
        let mut c_pre = matmul(&rhx, &self.w_h.value)?;
        add_row_bias(&mut c_pre, &self.b_h.value);
        let candidate = tanh(&c_pre);

        let mut h = h_prev.clone();
        for ((hv, &zv), &cv) in h.data_mut().iter_mut().zip(z.data()).zip(candidate.data()) {
            *hv = (T::one() - zv) * *hv + zv * cv;
        }
        Ok((
            h,
            GruStepCache {
                h_prev: h_prev.clone(),
                hx,
                z,
                r,
                rhx,
                candidate,
            },
        ))
    }

    /// Runs the full sequence from `h_0 = 0`, returning every hidden state.
    pub fn forward_sequence(&mut self, xs: &[Tensor<T>], mode: Mode) -> Result<Vec<Tensor<T>>> {
        if xs.is_empty() {
            return Err(Error::input(format!("gru `{}`: empty sequence", self.name)));
        }
        let mut h = Tensor::zeros(&[xs[0].rows(), self.hidden_dim]);
        let mut hs = Vec::with_capacity(xs.len());
        let mut caches = Vec::with_capacity(xs.len());
        for x_t in xs {
            let (h_next, cache) = self.step(&h, x_t)?;
            if mode == Mode::Train {
                caches.push(cache);
            }
            hs.push(h_next.clone());
            h = h_next;
        }
        self.cache = (mode == Mode::Train).then_some(caches);
        Ok(hs)
    }

    pub fn infer_sequence(&self, xs: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        if xs.is_empty() {
            return Err(Error::input(format!("gru `{}`: empty sequence", self.name)));
        }
        let mut h = Tensor::zeros(&[xs[0].rows(), self.hidden_dim]);
        let mut hs = Vec::with_capacity(xs.len());
        for x_t in xs {
            h = self.step(&h, x_t)?.0;
            hs.push(h.clone());
        }
        Ok(hs)
    }

    /// BPTT given `d_hs[t] = ∂L/∂h_t` from outside the recurrence. Returns
    /// `∂L/∂x_t` for every step and accumulates parameter gradients.
    pub fn backward_sequence(&mut self, d_hs: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        let caches = self.cache.as_ref().ok_or_else(|| missing_cache(&self.name))?;
        if d_hs.len() != caches.len() {
            return Err(Error::dim(format!(
                "gru `{}`: {} upstream steps for a {}-step forward",
                self.name,
                d_hs.len(),
                caches.len()
            )));
        }
        let hd = self.hidden_dim;
        let mut dw_z = Tensor::zeros(self.w_z.value.shape());
        let mut dw_r = Tensor::zeros(self.w_r.value.shape());
        let mut dw_h = Tensor::zeros(self.w_h.value.shape());
        let mut db_z = Tensor::zeros(&[hd]);
        let mut db_r = Tensor::zeros(&[hd]);
        let mut db_h = Tensor::zeros(&[hd]);
        let mut dxs = vec![None; caches.len()];
        let mut dh_next: Option<Tensor<T>> = None;

        for (t, c) in caches.iter().enumerate().rev() {
            let mut dh = d_hs[t].clone();
            c.h_prev.expect_same_shape(&dh)?;
            if let Some(carry) = &dh_next {
                dh.add_assign(carry)?;
            }
            // h = (1 − z)·h_prev + z·h̃
            let d_cand = dh.zip_map(&c.z, |g, z| g * z)?;
            let mut dz = Tensor::zeros(dh.shape());
            for (((o, &g), &cand), &hp) in dz
                .data_mut()
                .iter_mut()
                .zip(dh.data())
                .zip(c.candidate.data())
                .zip(c.h_prev.data())
            {
                *o = g * (cand - hp);
            }
            let mut dh_prev = dh.zip_map(&c.z, |g, z| g * (T::one() - z))?;

            let d_cand_pre = d_cand.zip_map(&tanh_grad_from_output(&c.candidate), |a, b| a * b)?;
            dw_h.add_assign(&matmul_tn(&c.rhx, &d_cand_pre)?)?;
            db_h.add_assign(&d_cand_pre.sum_rows()?)?;
            let d_rhx = matmul_nt(&d_cand_pre, &self.w_h.value)?;
            let (d_rh, mut dx) = split_cols(&d_rhx, hd)?;
            let dr = d_rh.zip_map(&c.h_prev, |a, b| a * b)?;
            dh_prev.add_assign(&d_rh.zip_map(&c.r, |a, b| a * b)?)?;

            let dz_pre = dz.zip_map(&sigmoid_grad_from_output(&c.z), |a, b| a * b)?;
            let dr_pre = dr.zip_map(&sigmoid_grad_from_output(&c.r), |a, b| a * b)?;
            dw_z.add_assign(&matmul_tn(&c.hx, &dz_pre)?)?;
            dw_r.add_assign(&matmul_tn(&c.hx, &dr_pre)?)?;
            db_z.add_assign(&dz_pre.sum_rows()?)?;
            db_r.add_assign(&dr_pre.sum_rows()?)?;
            let mut d_hx = matmul_nt(&dz_pre, &self.w_z.value)?;
            d_hx.add_assign(&matmul_nt(&dr_pre, &self.w_r.value)?)?;
            let (dh_gates, dx_gates) = split_cols(&d_hx, hd)?;
            dh_prev.add_assign(&dh_gates)?;
            dx.add_assign(&dx_gates)?;

            dxs[t] = Some(dx);
            dh_next = Some(dh_prev);
        }

        self.w_z.grad.add_assign(&dw_z)?;
        self.w_r.grad.add_assign(&dw_r)?;
        self.w_h.grad.add_assign(&dw_h)?;
        self.b_z.grad.add_assign(&db_z)?;
        self.b_r.grad.add_assign(&db_r)?;
        self.b_h.grad.add_assign(&db_h)?;
        Ok(dxs.into_iter().map(|d| d.expect("every step visited")).collect())
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.w_z, &self.w_r, &self.w_h, &self.b_z, &self.b_r, &self.b_h]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }
}

/// Stacked GRU over `[batch × T × input]`, returning the top layer's final
/// hidden state `[batch × hidden]`. Layer ℓ reads the full hidden sequence
/// of layer ℓ−1.
#[derive(Debug, Clone)]
pub struct GruStack<T: Scalar> {
    name: String,
    layers: Vec<GruLayer<T>>,
    cache: Option<Vec<usize>>,
}

impl<T: Scalar> GruStack<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, input_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::config("gru stack needs at least one layer"));
        }
        let mut layers = Vec::with_capacity(hidden.len());
        let mut d_in = input_dim;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(GruLayer::new(&format!("{name}.{i}"), d_in, h, rng));
            d_in = h;
        }
        Ok(Self::from_layers(name, layers))
    }

    pub fn from_layers(name: &str, layers: Vec<GruLayer<T>>) -> Self {
        Self {
            name: name.to_string(),
            layers,
            cache: None,
        }
    }

    pub fn layers(&self) -> &[GruLayer<T>] {
        &self.layers
    }

    fn split_steps(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let (n, steps, d) = match x.shape() {
            &[n, t, d] => (n, t, d),
            s => {
                return Err(Error::dim(format!(
                    "gru stack `{}` expects [batch, T, features], got {s:?}",
                    self.name
                )))
            }
        };
        if d != self.layers[0].input_dim {
            return Err(Error::dim(format!(
                "gru stack `{}` expects {} features per step, got {d}",
                self.name, self.layers[0].input_dim
            )));
        }
        Ok((0..steps)
            .map(|t| {
                let mut data = Vec::with_capacity(n * d);
                for s in 0..n {
                    let start = (s * steps + t) * d;
                    data.extend_from_slice(&x.data()[start..start + d]);
                }
                Tensor::new(vec![n, d], data).expect("non-empty step")
            })
            .collect())
    }
}

impl<T: Scalar> Layer<T> for GruStack<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut seq = self.split_steps(x)?;
        for layer in &mut self.layers {
            seq = layer.forward_sequence(&seq, mode)?;
        }
        self.cache = (mode == Mode::Train).then(|| x.shape().to_vec());
        Ok(seq.pop().expect("non-empty sequence"))
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut seq = self.split_steps(x)?;
        for layer in &self.layers {
            seq = layer.infer_sequence(&seq)?;
        }
        Ok(seq.pop().expect("non-empty sequence"))
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.cache.clone().ok_or_else(|| missing_cache(&self.name))?;
        let (n, steps, d) = (shape[0], shape[1], shape[2]);
        let top = self.layers.last().expect("non-empty stack").hidden_dim;
        if upstream.shape() != [n, top] {
            return Err(Error::dim(format!(
                "gru stack `{}`: upstream {:?} does not match [{n}, {top}]",
                self.name,
                upstream.shape()
            )));
        }
        let mut d_seq: Vec<Tensor<T>> = (0..steps)
            .map(|t| {
                if t + 1 == steps {
                    upstream.clone()
                } else {
                    Tensor::zeros(&[n, top])
                }
            })
            .collect();
        for layer in self.layers.iter_mut().rev() {
            d_seq = layer.backward_sequence(&d_seq)?;
        }
        let mut dx = vec![T::zero(); n * steps * d];
        for (t, dxt) in d_seq.iter().enumerate() {
            for s in 0..n {
                let start = (s * steps + t) * d;
                dx[start..start + d].copy_from_slice(dxt.row(s));
            }
        }
        Tensor::new(shape, dx)
    }

    fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
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

    fn zero_layer(input: usize, hidden: usize, b_z: f64) -> GruLayer<f64> {
        let w = Tensor::zeros(&[input + hidden, hidden]);
        let zeros = Tensor::zeros(&[hidden]);
        GruLayer::from_params(
            "g",
            input,
            [w.clone(), w.clone(), w],
            [Tensor::full(&[hidden], b_z), zeros.clone(), zeros],
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_closed_form() {
        let layer = zero_layer(2, 3, 0.0);
        let h_prev = Tensor::full(&[1, 3], 0.8);
        let (h, c) = layer.step(&h_prev, &Tensor::full(&[1, 2], 5.0)).unwrap();
        assert!(c.z.data().iter().all(|&v| v == 0.5));
        assert!(c.r.data().iter().all(|&v| v == 0.5));
        assert!(c.candidate.data().iter().all(|&v| v == 0.0));
        for &v in h.data() {
            assert!((v - 0.4).abs() < 1e-15);
        }
    }

    #[test]
    fn closed_update_gate_keeps_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layer = GruLayer::<f64>::new("g", 2, 3, &mut rng);
        layer.b_z.value = Tensor::full(&[3], -50.0);
        let h_prev = projection(&[2, 3], 5);
        let (h, _) = layer.step(&h_prev, &projection(&[2, 2], 6)).unwrap();
        for (a, b) in h.data().iter().zip(h_prev.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn open_update_gate_takes_candidate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut layer = GruLayer::<f64>::new("g", 2, 3, &mut rng);
        layer.b_z.value = Tensor::full(&[3], 50.0);
        let (h, c) = layer.step(&projection(&[2, 3], 7), &projection(&[2, 2], 8)).unwrap();
        for (a, b) in h.data().iter().zip(c.candidate.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn single_step_stack_equals_one_step_from_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let stack = GruStack::<f64>::new("gru", 4, &[5], &mut rng).unwrap();
        let x = projection(&[3, 1, 4], 9);
        let out = stack.infer(&x).unwrap();
        let (h, _) = stack.layers[0]
            .step(&Tensor::zeros(&[3, 5]), &x.clone().reshape(&[3, 4]).unwrap())
            .unwrap();
        assert_eq!(out.data(), h.data());
    }

    #[test]
    fn identical_rows_give_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let stack = GruStack::<f32>::new("gru", 3, &[4, 4], &mut rng).unwrap();
        let row: Vec<f32> = (0..15).map(|i| (i as f32 * 0.37).sin()).collect();
        let x = Tensor::new(vec![2, 5, 3], [row.clone(), row].concat()).unwrap();
        let out = stack.infer(&x).unwrap();
        assert_eq!(out.row(0), out.row(1));
    }

    #[test]
    fn empty_sequence_is_input_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut layer = GruLayer::<f32>::new("g", 2, 2, &mut rng);
        assert!(matches!(layer.forward_sequence(&[], Mode::Train), Err(Error::Input(_))));
    }

    #[test]
    fn bptt_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut stack = GruStack::<f64>::new("gru", 2, &[3, 3], &mut rng).unwrap();
        for p in stack.params_mut() {
            if p.name.contains(".b_") {
                p.value = projection(p.value.shape(), 77).map(|v| 0.5 * v);
            }
        }
        let x = projection(&[2, 4, 2], 10);
        let y = stack.forward(&x, Mode::Train).unwrap();
        let proj = projection(y.shape(), 11);
        let dx = stack.backward(&proj).unwrap();

        let num_x = numeric_grad(&x, |xp| dot(&stack.infer(xp).unwrap(), &proj));
        assert_close("dx", dx.data(), &num_x);

        let n_params = stack.params().len();
        for i in 0..n_params {
            let value = stack.params()[i].value.clone();
            let analytic = stack.params()[i].grad.data().to_vec();
            let name = stack.params()[i].name.clone();
            let mut probe = stack.clone();
            let num = numeric_grad(&value, |vp| {
                probe.params_mut()[i].value = vp.clone();
                dot(&probe.infer(&x).unwrap(), &proj)
            });
            assert_close(&name, &analytic, &num);
        }
    }

    #[test]
    fn hidden_state_stays_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let stack = GruStack::<f32>::new("gru", 8, &[6, 6], &mut rng).unwrap();
        let x = Tensor::from_fn(&[4, 20, 8], |i| ((i * 7919) % 101) as f32 - 50.0);
        let mut seq = stack.split_steps(&x).unwrap();
        for layer in &stack.layers {
            seq = layer.infer_sequence(&seq).unwrap();
            for h in &seq {
                assert!(h.data().iter().all(|v| v.abs() <= 1.0));
            }
        }
    }
}
