//! Tridiagonal systems.

use crate::error::{Error, Result};
use crate::Real;

/// Tridiagonal matrix with `lower[0]` and `upper[n-1]` unused.
#[derive(Clone, Debug, PartialEq)]
pub struct Tridiagonal<F> {
    pub lower: Vec<F>,
    pub diag: Vec<F>,
    pub upper: Vec<F>,
}

impl<F: Real> Tridiagonal<F> {
    pub fn zeros(n: usize) -> Self {
        Self { lower: vec![F::zero(); n], diag: vec![F::zero(); n], upper: vec![F::zero(); n] }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `I + c * self`.
    pub fn shifted_identity(&self, c: F) -> Self {
        Self {
            lower: self.lower.iter().map(|v| c * *v).collect(),
            diag: self.diag.iter().map(|v| F::one() + c * *v).collect(),
            upper: self.upper.iter().map(|v| c * *v).collect(),
        }
    }

    pub fn apply(&self, x: &[F]) -> Vec<F> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * x[i];
                if i > 0 {
                    s += self.lower[i] * x[i - 1];
                }
                if i + 1 < n {
                    s += self.upper[i] * x[i + 1];
                }
                s
            })
            .collect()
    }

    /// Thomas algorithm.
    pub fn solve(&self, rhs: &[F]) -> Result<Vec<F>> {
        let n = self.len();
        assert_eq!(rhs.len(), n);
        let mut c = vec![F::zero(); n];
        let mut d = vec![F::zero(); n];
        let tiny = F::epsilon() * F::of(1e-8);
        let mut pivot = self.diag[0];
        if pivot.abs() <= tiny || !pivot.is_finite() {
            return Err(Error::SolverBreakdown { row: 0 });
        }
        c[0] = self.upper[0] / pivot;
        d[0] = rhs[0] / pivot;
        for i in 1..n {
            pivot = self.diag[i] - self.lower[i] * c[i - 1];
            if pivot.abs() <= tiny || !pivot.is_finite() {
                return Err(Error::SolverBreakdown { row: i });
            }
            c[i] = self.upper[i] / pivot;
            d[i] = (rhs[i] - self.lower[i] * d[i - 1]) / pivot;
        }
        for i in (0..n - 1).rev() {
            let next = d[i + 1];
            d[i] -= c[i] * next;
        }
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_pivot_breaks_down() {
        let m = Tridiagonal { lower: vec![0.0, 1.0], diag: vec![1.0, 1.0], upper: vec![1.0, 0.0] };
        assert!(matches!(m.solve(&[1.0, 1.0]), Err(Error::SolverBreakdown { row: 1 })));
    }

    proptest! {
        #[test]
        fn solve_inverts_apply(
            n in 1usize..40,
            seed in proptest::collection::vec(-1.0f64..1.0, 160),
        ) {
            let mut m = Tridiagonal::<f64>::zeros(n);
            for i in 0..n {
                m.lower[i] = seed[i];
                m.upper[i] = seed[i + 40];
                m.diag[i] = 3.0 + seed[i + 80];
            }
            let x: Vec<f64> = seed[120..120 + n.min(40)].to_vec();
            let b = m.apply(&x);
            let y = m.solve(&b).unwrap();
            for (a, b) in x.iter().zip(&y) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
