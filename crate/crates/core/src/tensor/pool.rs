use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Max-pool result plus, for each output cell, the flat input index that
/// produced it.
#[derive(Debug, Clone)]
pub struct PoolOutput<T: Scalar> {
    pub output: Tensor<T>,
    pub argmax: Vec<usize>,
}

/// Per-channel max over `window × window` patches of `input[n×h×w×c]`
/// (no padding). Ties go to the first candidate in row-major window order.
pub fn maxpool2d<T: Scalar>(input: &Tensor<T>, window: usize, stride: usize) -> Result<PoolOutput<T>> {
    let (n, h, w, c) = input.dims4()?;
    if window == 0 || stride == 0 {
        return Err(Error::dim("pool window and stride must be positive"));
    }
    if window > h || window > w {
        return Err(Error::dim(format!("pool window {window} exceeds input extent {h}x{w}")));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let x = input.data();
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut argmax = Vec::with_capacity(n * oh * ow * c);
    for s in 0..n {
        let base = s * h * w * c;
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best_idx = base + ((oy * stride) * w + ox * stride) * c + ch;
                    let mut best = x[best_idx];
                    for dy in 0..window {
                        for dx in 0..window {
                            let idx = base + ((oy * stride + dy) * w + ox * stride + dx) * c + ch;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
    }
    Ok(PoolOutput {
        output: Tensor::new(vec![n, oh, ow, c], out)?,
        argmax,
    })
}

/// Routes each upstream value to the input position recorded in `argmax`.
pub fn maxpool2d_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    upstream: &Tensor<T>,
) -> Result<Tensor<T>> {
    if upstream.len() != argmax.len() {
        return Err(Error::dim(format!(
            "upstream gradient {:?} does not match {} pooled cells",
            upstream.shape(),
            argmax.len()
        )));
    }
    let mut grad = Tensor::zeros(input_shape);
    let g = grad.data_mut();
    for (&idx, &u) in argmax.iter().zip(upstream.data()) {
        g[idx] = g[idx] + u;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_single_channel() {
        let x = Tensor::<f32>::new(vec![1, 2, 2, 1], vec![1., 2., 3., 4.]).unwrap();
        let p = maxpool2d(&x, 2, 2).unwrap();
        assert_eq!(p.output.data(), &[4.0]);
        assert_eq!(p.argmax, vec![3]);
    }

    #[test]
    fn ties_pick_first_in_window() {
        let x = Tensor::<f32>::full(&[1, 4, 4, 2], 7.0);
        let p = maxpool2d(&x, 2, 2).unwrap();
        assert!(p.output.data().iter().all(|&v| v == 7.0));
        // top-left corner of each window, per channel
        assert_eq!(p.argmax, vec![0, 1, 4, 5, 16, 17, 20, 21]);
        let again = maxpool2d(&x, 2, 2).unwrap();
        assert_eq!(p.argmax, again.argmax);
    }

    #[test]
    fn stride_one_overlaps() {
        let x = Tensor::<f32>::from_fn(&[1, 3, 3, 1], |i| i as f32);
        let p = maxpool2d(&x, 2, 1).unwrap();
        assert_eq!(p.output.shape(), &[1, 2, 2, 1]);
        assert_eq!(p.output.data(), &[4., 5., 7., 8.]);
    }

    #[test]
    fn window_larger_than_input_fails() {
        let x = Tensor::<f32>::zeros(&[1, 1, 3, 1]);
        assert!(maxpool2d(&x, 2, 2).is_err());
    }

    #[test]
    fn backward_routes_to_winners_only() {
        let x = Tensor::<f32>::new(vec![1, 2, 2, 1], vec![1., 9., 3., 4.]).unwrap();
        let p = maxpool2d(&x, 2, 2).unwrap();
        let up = Tensor::new(vec![1, 1, 1, 1], vec![2.5]).unwrap();
        let g = maxpool2d_backward(x.shape(), &p.argmax, &up).unwrap();
        assert_eq!(g.data(), &[0., 2.5, 0., 0.]);
    }
}
