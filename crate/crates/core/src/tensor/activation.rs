use super::{cast, Scalar, Tensor};

/// Negative-side slope of LeakyReLU.
pub const LEAKY_SLOPE: f64 = 0.01;

/// `max(0.01·x, x)` elementwise.
pub fn leaky_relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let slope: T = cast(LEAKY_SLOPE);
    x.map(|v| if v >= T::zero() { v } else { slope * v })
}

/// Derivative of [`leaky_relu`] at `x`. At exactly zero the positive branch
/// is taken, so the subgradient there is 1.
pub fn leaky_relu_grad<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let slope: T = cast(LEAKY_SLOPE);
    x.map(|v| if v >= T::zero() { T::one() } else { slope })
}

fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    // Branching on sign keeps exp() from overflowing for large |v|.
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// σ'(x) expressed through the forward output `s = σ(x)`.
pub fn sigmoid_grad_from_output<T: Scalar>(s: &Tensor<T>) -> Tensor<T> {
    s.map(|v| v * (T::one() - v))
}

pub fn tanh<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

/// tanh'(x) expressed through the forward output `y = tanh(x)`.
pub fn tanh_grad_from_output<T: Scalar>(y: &Tensor<T>) -> Tensor<T> {
    y.map(|v| T::one() - v * v)
}
