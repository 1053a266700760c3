//! 2-D cross-correlation over NHWC batches, lowered to im2col + matmul.

use super::matmul::matmul_into;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero-pad so the output extent is `ceil(input / stride)`.
    Same,
    /// No padding; output extent is `floor((input - k) / stride) + 1`.
    Valid,
}

/// Output extent and leading pad along one spatial axis.
pub fn conv_output_extent(input: usize, k: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    if stride == 0 {
        return Err(Error::dim("convolution stride must be positive"));
    }
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(input);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if k > input {
                return Err(Error::dim(format!("kernel extent {k} exceeds input extent {input}")));
            }
            Ok(((input - k) / stride + 1, 0))
        }
    }
}

/// What the backward pass needs from the forward call.
#[derive(Debug, Clone)]
pub struct ConvCache<T: Scalar> {
    pub input: Tensor<T>,
    pub kernels: Tensor<T>,
    pub stride: usize,
    pub padding: Padding,
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

struct Geometry {
    h: usize,
    w: usize,
    cin: usize,
    k: usize,
    cout: usize,
    oh: usize,
    ow: usize,
    pad_top: usize,
    pad_left: usize,
    stride: usize,
}

impl Geometry {
    fn new<T: Scalar>(
        input: &Tensor<T>,
        kernels: &Tensor<T>,
        stride: usize,
        padding: Padding,
    ) -> Result<(usize, Self)> {
        let (n, h, w, cin) = input.dims4()?;
        let (kh, kw, kcin, cout) = kernels.dims4()?;
        if kh != kw {
            return Err(Error::dim(format!(
                "only square kernels are supported, got {:?}",
                kernels.shape()
            )));
        }
        if kcin != cin {
            return Err(Error::dim(format!(
                "kernel input channels {kcin} do not match input {:?}",
                input.shape()
            )));
        }
        let (oh, pad_top) = conv_output_extent(h, kh, stride, padding)?;
        let (ow, pad_left) = conv_output_extent(w, kw, stride, padding)?;
        Ok((
            n,
            Self {
                h,
                w,
                cin,
                k: kh,
                cout,
                oh,
                ow,
                pad_top,
                pad_left,
                stride,
            },
        ))
    }

    fn patch_len(&self) -> usize {
        self.k * self.k * self.cin
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Calls `f(cols_index, input_index)` for every patch tap that
    /// lands inside the unpadded input.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let patch = self.patch_len();
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let row = oy * self.ow + ox;
                for ky in 0..self.k {
                    let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
                    if iy < 0 || iy >= self.h as isize {
                        continue;
                    }
                    for kx in 0..self.k {
                        let ix = (ox * self.stride + kx) as isize - self.pad_left as isize;
                        if ix < 0 || ix >= self.w as isize {
                            continue;
                        }
                        let src = (iy as usize * self.w + ix as usize) * self.cin;
                        let col = (ky * self.k + kx) * self.cin;
                        for c in 0..self.cin {
                            f(row * patch + col + c, src + c);
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Scalar>(&self, sample: &[T], cols: &mut [T]) {
        cols.fill(T::zero());
        self.for_each_tap(|dst, src| cols[dst] = sample[src]);
    }

    fn col2im_add<T: Scalar>(&self, cols: &[T], sample_grad: &mut [T]) {
        self.for_each_tap(|dst, src| sample_grad[src] = sample_grad[src] + cols[dst]);
    }
}

/// Cross-correlation (no kernel flip) of `input[n×h×w×cin]` with
/// `kernels[k×k×cin×cout]`, plus an optional per-output-channel bias.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let (n, g) = Geometry::new(input, kernels, stride, padding)?;
    if let Some(b) = bias {
        if b.shape() != [g.cout] {
            return Err(Error::dim(format!(
                "bias shape {:?} does not match {} output channels",
                b.shape(),
                g.cout
            )));
        }
    }
    let in_len = g.h * g.w * g.cin;
    let out_len = g.positions() * g.cout;
    let mut out = vec![T::zero(); n * out_len];
    let mut cols = vec![T::zero(); g.positions() * g.patch_len()];
    for s in 0..n {
        g.im2col(&input.data()[s * in_len..(s + 1) * in_len], &mut cols);
        let out_s = &mut out[s * out_len..(s + 1) * out_len];
        if let Some(b) = bias {
            for row in out_s.chunks_exact_mut(g.cout) {
                row.copy_from_slice(b.data());
            }
        }
        matmul_into(&cols, kernels.data(), out_s, g.positions(), g.patch_len(), g.cout);
    }
    Tensor::new(vec![n, g.oh, g.ow, g.cout], out)
}

/// Exact gradients of [`conv2d`] with respect to input, kernels and bias.
pub fn conv2d_backward<T: Scalar>(cache: &ConvCache<T>, upstream: &Tensor<T>) -> Result<ConvGrads<T>> {
    let (n, g) = Geometry::new(&cache.input, &cache.kernels, cache.stride, cache.padding)?;
    if upstream.shape() != [n, g.oh, g.ow, g.cout] {
        return Err(Error::dim(format!(
            "upstream gradient {:?} does not match conv output [{n}, {}, {}, {}]",
            upstream.shape(),
            g.oh,
            g.ow,
            g.cout
        )));
    }
    let patch = g.patch_len();
    let positions = g.positions();
    let in_len = g.h * g.w * g.cin;
    let out_len = positions * g.cout;
    let kernels_t = Tensor::new(vec![patch, g.cout], cache.kernels.data().to_vec())?.transpose()?;

    let mut d_input = vec![T::zero(); n * in_len];
    let mut d_kernels = vec![T::zero(); patch * g.cout];
    let mut d_bias = vec![T::zero(); g.cout];
    let mut cols = vec![T::zero(); positions * patch];
    let mut d_cols = vec![T::zero(); positions * patch];

    for s in 0..n {
        let dy = &upstream.data()[s * out_len..(s + 1) * out_len];
        for row in dy.chunks_exact(g.cout) {
            for (b, &v) in d_bias.iter_mut().zip(row) {
                *b = *b + v;
            }
        }
        g.im2col(&cache.input.data()[s * in_len..(s + 1) * in_len], &mut cols);
        // d_kernels += colsᵀ · dy
        for r in 0..positions {
            let dy_row = &dy[r * g.cout..(r + 1) * g.cout];
            for (c, &x) in cols[r * patch..(r + 1) * patch].iter().enumerate() {
                if x == T::zero() {
                    continue;
                }
                let dk_row = &mut d_kernels[c * g.cout..(c + 1) * g.cout];
                for (dk, &d) in dk_row.iter_mut().zip(dy_row) {
                    *dk = *dk + x * d;
                }
            }
        }
        d_cols.fill(T::zero());
        matmul_into(dy, kernels_t.data(), &mut d_cols, positions, g.cout, patch);
        g.col2im_add(&d_cols, &mut d_input[s * in_len..(s + 1) * in_len]);
    }

    Ok(ConvGrads {
        input: Tensor::new(cache.input.shape().to_vec(), d_input)?,
        kernels: Tensor::new(cache.kernels.shape().to_vec(), d_kernels)?,
        bias: Tensor::new(vec![g.cout], d_bias)?,
    })
}
