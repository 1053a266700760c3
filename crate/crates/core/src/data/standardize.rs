//! Per-feature z-scoring.

use crate::error::{Error, Result};

/// Features whose spread falls below this are left unscaled.
pub const SIGMA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mu: Vec<f32>,
    pub sigma: Vec<f32>,
}

impl Standardizer {
    /// Fits mean and population standard deviation over the listed rows of a
    /// row-major `rows × dim` matrix. Accumulates in f64.
    pub fn fit(features: &[f32], dim: usize, rows: &[usize]) -> Result<Self> {
        if dim == 0 || !features.len().is_multiple_of(dim) {
            return Err(Error::dim(format!(
                "{} values are not rows of width {dim}",
                features.len()
            )));
        }
        if rows.is_empty() {
            return Err(Error::input("cannot fit standardization on zero rows"));
        }
        let total_rows = features.len() / dim;
        if let Some(&bad) = rows.iter().find(|&&r| r >= total_rows) {
            return Err(Error::input(format!("row {bad} out of range for {total_rows} rows")));
        }
        let n = rows.len() as f64;
        let mut sum = vec![0f64; dim];
        for &r in rows {
            for (s, &x) in sum.iter_mut().zip(&features[r * dim..(r + 1) * dim]) {
                *s += f64::from(x);
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let mut sq = vec![0f64; dim];
        for &r in rows {
            for ((s, &x), m) in sq.iter_mut().zip(&features[r * dim..(r + 1) * dim]).zip(&mean) {
                let d = f64::from(x) - m;
                *s += d * d;
            }
        }
        let sigma = sq
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd < SIGMA_FLOOR {
                    1.0
                } else {
                    sd as f32
                }
            })
            .collect();
        Ok(Self {
            mu: mean.iter().map(|&m| m as f32).collect(),
            sigma,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn apply_row(&self, row: &mut [f32]) {
        for ((x, &m), &s) in row.iter_mut().zip(&self.mu).zip(&self.sigma) {
            *x = ((f64::from(*x) - f64::from(m)) / f64::from(s)) as f32;
        }
    }

    pub fn apply(&self, features: &mut [f32]) -> Result<()> {
        let dim = self.dim();
        if !features.len().is_multiple_of(dim) {
            return Err(Error::dim(format!(
                "{} values are not rows of width {dim}",
                features.len()
            )));
        }
        for row in features.chunks_exact_mut(dim) {
            self.apply_row(row);
        }
        Ok(())
    }
}
