//! Tensorized Gauss-Hermite quadrature for Gaussian expectations.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

/// Largest dimension the tensor rule is used for.
pub const MAX_DIM: usize = 3;

/// Gauss rule for the standard normal weight (probabilists' Hermite).
#[derive(Clone, Debug, PartialEq)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub-Welsch: eigenvalues of the Jacobi matrix with off-diagonal `sqrt(k)`.
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(invalid("quadrature order must be positive"));
        }
        let mut jacobi = DMatrix::zeros(order, order);
        for k in 1..order {
            let b = (k as f64).sqrt();
            jacobi[(k - 1, k)] = b;
            jacobi[(k, k - 1)] = b;
        }
        let eig = jacobi.symmetric_eigen();
        let mut pairs: Vec<(f64, f64)> = (0..order)
            .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        Ok(Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / total).collect(),
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E g(X)` for `X ~ N(mean, cov)`, `g` matrix-valued.
    pub fn expect(
        &self,
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
        g: impl Fn(&DVector<f64>) -> DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        let d = mean.len();
        if d > MAX_DIM {
            return Err(Error::DimensionTooLarge(d));
        }
        let l = cov.clone().cholesky().ok_or(Error::LostPositiveDefiniteness)?.l();
        let m = self.nodes.len();
        let mut idx = vec![0usize; d];
        let mut acc: Option<DMatrix<f64>> = None;
        loop {
            let z = DVector::from_fn(d, |k, _| self.nodes[idx[k]]);
            let w: f64 = idx.iter().map(|&i| self.weights[i]).product();
            let val = g(&(mean + &l * z)) * w;
            acc = Some(match acc {
                Some(a) => a + val,
                None => val,
            });
            let mut k = 0;
            while k < d {
                idx[k] += 1;
                if idx[k] < m {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == d {
                break;
            }
        }
        Ok(acc.expect("at least one node"))
    }

    pub fn expect_scalar(
        &self,
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
        g: impl Fn(&DVector<f64>) -> f64,
    ) -> Result<f64> {
        Ok(self.expect(mean, cov, |x| DMatrix::from_element(1, 1, g(x)))?[(0, 0)])
    }
}
