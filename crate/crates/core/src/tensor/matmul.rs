use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// `a[p×m] · b[m×n]`.
///
/// Loop order is i-k-j: each output row accumulates `a[i,k] * b[k,:]` for
/// k ascending, which keeps the summation order fixed and lets the inner
/// loop vectorize.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (p, m) = a.dims2()?;
    let (m2, n) = b.dims2()?;
    if m != m2 {
        return Err(Error::dim(format!(
            "matmul inner dimensions disagree: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![T::zero(); p * n];
    matmul_into(a.data(), b.data(), &mut out, p, m, n);
    Tensor::new(vec![p, n], out)
}

/// `aᵀ · b` for `a[m×p]`, `b[m×n]`.
pub fn matmul_tn<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, _) = a.dims2()?;
    let (m2, _) = b.dims2()?;
    if m != m2 {
        return Err(Error::dim(format!(
            "matmul_tn leading dimensions disagree: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    matmul(&a.transpose()?, b)
}

/// `a · bᵀ` for `a[p×m]`, `b[n×m]`.
pub fn matmul_nt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, m) = a.dims2()?;
    let (_, m2) = b.dims2()?;
    if m != m2 {
        return Err(Error::dim(format!(
            "matmul_nt trailing dimensions disagree: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    matmul(a, &b.transpose()?)
}

/// Accumulates `a[p×m] · b[m×n]` into `out[p×n]`.
pub(crate) fn matmul_into<T: Scalar>(a: &[T], b: &[T], out: &mut [T], p: usize, m: usize, n: usize) {
    debug_assert_eq!(a.len(), p * m);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), p * n);
    for i in 0..p {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * m..(i + 1) * m];
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == T::zero() {
                continue;
            }
            let b_row = &b[k * n..(k + 1) * n];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o = *o + aik * bkj;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
        let (p, m) = a.dims2().unwrap();
        let (_, n) = b.dims2().unwrap();
        let mut out = vec![0.0; p * n];
        for i in 0..p {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..m {
                    s += a.data()[i * m + k] * b.data()[k * n + j];
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_left_multiplication() {
        let x = Tensor::<f32>::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap();
        let y = matmul(&Tensor::identity(2), &x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn row_times_column() {
        let a = Tensor::<f32>::new(vec![1, 2], vec![1., 2.]).unwrap();
        let b = Tensor::<f32>::new(vec![2, 1], vec![3., 4.]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn random_7x5_by_5x3_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, &[7, 5]);
        let b = random(&mut rng, &[5, 3]);
        let got = matmul(&a, &b).unwrap();
        for (g, e) in got.data().iter().zip(naive(&a, &b)) {
            assert!((g - e).abs() <= 1e-6 * e.abs().max(1e-12), "{g} vs {e}");
        }
    }

    #[test]
    fn transposed_variants_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random(&mut rng, &[4, 6]);
        let b = random(&mut rng, &[4, 3]);
        let c = random(&mut rng, &[5, 6]);
        let tn = matmul_tn(&a, &b).unwrap();
        assert_eq!(tn.data(), matmul(&a.transpose().unwrap(), &b).unwrap().data());
        let nt = matmul_nt(&a, &c).unwrap();
        assert_eq!(nt.shape(), &[4, 5]);
        assert_eq!(nt.data(), naive(&a, &c.transpose().unwrap()).as_slice());
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 3]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3] x [2, 3]"), "{msg}");
    }
}
