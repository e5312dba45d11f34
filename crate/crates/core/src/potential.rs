//! Parametric potentials `Psi_theta(x)` and the objects derived from them.
//!
//! Implementations supply analytic derivatives. Built-in families:
//!
//! * [`Quadratic`]: `1/2 |x - theta|^2`
//! * [`QuadraticMatrix`]: `1/2 (x - theta)' A (x - theta)`
//! * [`Quartic`]: `1/4 sum (x_i - theta_i)^4 + 1/2 |x - theta|^2`, a non-Gaussian test case

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{renormalize, DensityGrid, DriftField, Grid1D};
use crate::Real;

pub trait ParametricPotential: Send + Sync + Debug {
    fn id(&self) -> &str;
    fn dim_x(&self) -> usize;
    fn dim_theta(&self) -> usize;

    fn psi(&self, theta: &[f64], x: &[f64]) -> f64;

    /// `nabla_x Psi_theta(x)`, length `d`.
    fn grad_x(&self, theta: &[f64], x: &[f64]) -> DVector<f64>;

    /// `nabla_theta Psi_theta(x)`, length `q`.
    fn grad_theta_psi(&self, theta: &[f64], x: &[f64]) -> DVector<f64>;

    /// `nabla'_theta nabla_x Psi_theta(x)` as a `d x q` matrix.
    fn grad_theta_grad_x(&self, theta: &[f64], x: &[f64]) -> DMatrix<f64>;

    /// `Some(A)` when `Psi_theta(x) = 1/2 (x - theta)' A (x - theta)`.
    fn quadratic_matrix(&self) -> Option<DMatrix<f64>> {
        None
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Quadratic {
    dim: usize,
}

impl Quadratic {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1);
        Self { dim }
    }
}

impl ParametricPotential for Quadratic {
    fn id(&self) -> &str {
        "quadratic"
    }
    fn dim_x(&self) -> usize {
        self.dim
    }
    fn dim_theta(&self) -> usize {
        self.dim
    }
    fn psi(&self, theta: &[f64], x: &[f64]) -> f64 {
        0.5 * x.iter().zip(theta).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    }
    fn grad_x(&self, theta: &[f64], x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.dim, x.iter().zip(theta).map(|(a, b)| a - b))
    }
    fn grad_theta_psi(&self, theta: &[f64], x: &[f64]) -> DVector<f64> {
        -self.grad_x(theta, x)
    }
    fn grad_theta_grad_x(&self, _theta: &[f64], _x: &[f64]) -> DMatrix<f64> {
        -DMatrix::identity(self.dim, self.dim)
    }
    fn quadratic_matrix(&self) -> Option<DMatrix<f64>> {
        Some(DMatrix::identity(self.dim, self.dim))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticMatrix {
    a: DMatrix<f64>,
}

impl QuadraticMatrix {
    /// `a` must be symmetric positive definite.
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(invalid("quadratic_matrix needs a nonempty square matrix"));
        }
        if (&a - a.transpose()).amax() > 1e-12 * a.amax().max(1.0) {
            return Err(invalid("quadratic_matrix needs a symmetric matrix"));
        }
        if a.clone().cholesky().is_none() {
            return Err(invalid("quadratic_matrix needs a positive definite matrix"));
        }
        Ok(Self { a })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }
}

impl ParametricPotential for QuadraticMatrix {
    fn id(&self) -> &str {
        "quadratic_matrix"
    }
    fn dim_x(&self) -> usize {
        self.a.nrows()
    }
    fn dim_theta(&self) -> usize {
        self.a.nrows()
    }
    fn psi(&self, theta: &[f64], x: &[f64]) -> f64 {
        let r = DVector::from_iterator(x.len(), x.iter().zip(theta).map(|(a, b)| a - b));
        0.5 * r.dot(&(&self.a * &r))
    }
    fn grad_x(&self, theta: &[f64], x: &[f64]) -> DVector<f64> {
        let r = DVector::from_iterator(x.len(), x.iter().zip(theta).map(|(a, b)| a - b));
        &self.a * r
    }
    fn grad_theta_psi(&self, theta: &[f64], x: &[f64]) -> DVector<f64> {
        -self.grad_x(theta, x)
    }
    fn grad_theta_grad_x(&self, _theta: &[f64], _x: &[f64]) -> DMatrix<f64> {
        -self.a.clone()
    }
    fn quadratic_matrix(&self) -> Option<DMatrix<f64>> {
        Some(self.a.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Quartic {
    dim: usize,
}

impl Quartic {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1);
        Self { dim }
    }
}

impl ParametricPotential for Quartic {
    fn id(&self) -> &str {
        "quartic"
    }
    fn dim_x(&self) -> usize {
        self.dim
    }
    fn dim_theta(&self) -> usize {
        self.dim
    }
    fn psi(&self, theta: &[f64], x: &[f64]) -> f64 {
        x.iter()
            .zip(theta)
            .map(|(a, b)| {
                let r = a - b;
                0.25 * r.powi(4) + 0.5 * r * r
            })
            .sum()
    }
    fn grad_x(&self, theta: &[f64], x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.dim,
            x.iter().zip(theta).map(|(a, b)| {
                let r = a - b;
                r * r * r + r
            }),
        )
    }
    fn grad_theta_psi(&self, theta: &[f64], x: &[f64]) -> DVector<f64> {
        -self.grad_x(theta, x)
    }
    fn grad_theta_grad_x(&self, theta: &[f64], x: &[f64]) -> DMatrix<f64> {
        let diag = DVector::from_iterator(
            self.dim,
            x.iter().zip(theta).map(|(a, b)| -(3.0 * (a - b) * (a - b) + 1.0)),
        );
        DMatrix::from_diagonal(&diag)
    }
}

/// Config-level description of a potential, selected by string id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    Quadratic {
        #[serde(default = "one")]
        dim: usize,
    },
    QuadraticMatrix {
        a: Vec<Vec<f64>>,
    },
    Quartic {
        #[serde(default = "one")]
        dim: usize,
    },
}

fn one() -> usize {
    1
}

impl Default for PotentialSpec {
    fn default() -> Self {
        PotentialSpec::Quadratic { dim: 1 }
    }
}

impl PotentialSpec {
    pub fn build(&self) -> Result<Arc<dyn ParametricPotential>> {
        Ok(match self {
            PotentialSpec::Quadratic { dim } if *dim >= 1 => Arc::new(Quadratic::new(*dim)),
            PotentialSpec::Quartic { dim } if *dim >= 1 => Arc::new(Quartic::new(*dim)),
            PotentialSpec::QuadraticMatrix { a } => {
                let n = a.len();
                if n == 0 || a.iter().any(|r| r.len() != n) {
                    return Err(Error::Config("quadratic_matrix.a must be a square matrix".into()));
                }
                let m = DMatrix::from_fn(n, n, |i, j| a[i][j]);
                Arc::new(QuadraticMatrix::new(m).map_err(|e| Error::Config(e.to_string()))?)
            }
            _ => return Err(Error::Config("potential dim must be at least 1".into())),
        })
    }
}

/// A potential with its parameter fixed, seen as a drift `x -> (Psi, grad Psi)`.
pub trait Drift: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> DVector<f64>;

    /// `Some((A, theta))` when the drift is `1/2 (x - theta)' A (x - theta)` up to a constant.
    fn quadratic(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        None
    }
}

#[derive(Clone, Debug)]
pub struct BoundPotential {
    pub potential: Arc<dyn ParametricPotential>,
    pub theta: Vec<f64>,
}

impl BoundPotential {
    pub fn new(potential: Arc<dyn ParametricPotential>, theta: Vec<f64>) -> Self {
        Self { potential, theta }
    }
}

impl Drift for BoundPotential {
    fn value(&self, x: &[f64]) -> f64 {
        self.potential.psi(&self.theta, x)
    }
    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        self.potential.grad_x(&self.theta, x)
    }
    fn quadratic(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        let a = self.potential.quadratic_matrix()?;
        Some((a, DVector::from_column_slice(&self.theta)))
    }
}

/// Sample a one-dimensional drift at the grid nodes.
pub fn drift_field<F: Real>(drift: &dyn Drift, grid: &Grid1D<F>) -> DriftField<F> {
    DriftField::from_fns(grid, |x| drift.value(&[x]), |x| drift.gradient(&[x])[0])
}

/// Grid-sampled Gibbs density `exp(-beta Psi_theta) / Z`.
pub fn gibbs_density<F: Real>(
    potential: &dyn ParametricPotential,
    theta: &[f64],
    beta: f64,
    grid: &Grid1D<F>,
) -> Result<DensityGrid<F>> {
    if !(beta > 0.0) {
        return Err(invalid("beta must be positive"));
    }
    if potential.dim_x() != 1 {
        return Err(invalid("grid densities are one-dimensional"));
    }
    let energies: Vec<f64> = grid.nodes().iter().map(|x| beta * potential.psi(theta, &[x.to64()])).collect();
    let floor = energies.iter().copied().fold(f64::INFINITY, f64::min);
    if !floor.is_finite() {
        return Err(Error::AllMassLost);
    }
    let values = energies.iter().map(|e| F::of((floor - e).exp())).collect();
    renormalize(grid, values)
}

/// Free energy of a grid density under `Psi_theta`.
pub fn free_energy<F: Real>(
    rho: &DensityGrid<F>,
    potential: &dyn ParametricPotential,
    theta: &[f64],
    beta: f64,
) -> F {
    let psi: Vec<F> = rho.grid().nodes().iter().map(|x| F::of(potential.psi(theta, &[x.to64()]))).collect();
    rho.free_energy(&psi, F::of(beta))
}

/// Symmetric positive semidefinite square root; negative eigenvalues are clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    v * DMatrix::from_diagonal(&roots) * v.transpose()
}

/// The CLT direction field `tau(x) = nabla'_theta Psi_theta(x) gamma_theta`.
#[derive(Clone, Debug)]
pub struct TauField {
    potential: Arc<dyn ParametricPotential>,
    theta: Vec<f64>,
    gamma: DMatrix<f64>,
}

impl TauField {
    pub fn new(potential: Arc<dyn ParametricPotential>, theta: Vec<f64>, gamma: DMatrix<f64>) -> Result<Self> {
        let q = potential.dim_theta();
        if theta.len() != q || gamma.nrows() != q || gamma.ncols() != q {
            return Err(invalid(format!("tau field needs theta of length {q} and a {q}x{q} gamma")));
        }
        if (&gamma - gamma.transpose()).amax() > 1e-10 * gamma.amax().max(1.0) {
            return Err(invalid("gamma must be symmetric"));
        }
        Ok(Self { potential, theta, gamma })
    }

    /// Build from the asymptotic covariance `Gamma_theta` via its symmetric root.
    pub fn from_covariance(
        potential: Arc<dyn ParametricPotential>,
        theta: Vec<f64>,
        covariance: &DMatrix<f64>,
    ) -> Result<Self> {
        Self::new(potential, theta, psd_sqrt(covariance))
    }

    /// `gamma = I`: the coupled-forcing convention where the scale lives in the noise.
    pub fn unit(potential: Arc<dyn ParametricPotential>, theta: Vec<f64>) -> Result<Self> {
        let q = potential.dim_theta();
        Self::new(potential, theta, DMatrix::identity(q, q))
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn potential(&self) -> &Arc<dyn ParametricPotential> {
        &self.potential
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// `tau(x)` as a length-`q` vector.
    pub fn tau(&self, x: &[f64]) -> DVector<f64> {
        self.gamma.transpose() * self.potential.grad_theta_psi(&self.theta, x)
    }

    /// `nabla tau(x)`, a `d x q` matrix whose columns are the x-gradients of the components.
    pub fn grad_tau(&self, x: &[f64]) -> DMatrix<f64> {
        self.potential.grad_theta_grad_x(&self.theta, x) * &self.gamma
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn fd_check(p: &dyn ParametricPotential, rng: &mut impl Rng) {
        let d = p.dim_x();
        let q = p.dim_theta();
        for _ in 0..100 {
            let theta: Vec<f64> = (0..q).map(|_| rng.random_range(-2.0..2.0)).collect();
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let g = p.grad_x(&theta, &x);
            let gt = p.grad_theta_psi(&theta, &x);
            let gtx = p.grad_theta_grad_x(&theta, &x);
            let h = 1e-5;
            for i in 0..d {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[i] += h;
                xm[i] -= h;
                let fd = (p.psi(&theta, &xp) - p.psi(&theta, &xm)) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0), "grad_x {fd} vs {}", g[i]);
            }
            for j in 0..q {
                let (mut tp, mut tm) = (theta.clone(), theta.clone());
                tp[j] += h;
                tm[j] -= h;
                let fd = (p.psi(&tp, &x) - p.psi(&tm, &x)) / (2.0 * h);
                assert!((fd - gt[j]).abs() <= 1e-6 * gt[j].abs().max(1.0));
                let dg = (p.grad_x(&tp, &x) - p.grad_x(&tm, &x)) / (2.0 * h);
                for i in 0..d {
                    assert!((dg[i] - gtx[(i, j)]).abs() <= 1e-6 * gtx[(i, j)].abs().max(1.0));
                }
            }
            assert!(p.psi(&theta, &x) >= 0.0);
        }
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        fd_check(&Quadratic::new(1), &mut rng);
        fd_check(&Quadratic::new(3), &mut rng);
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 3.0]);
        fd_check(&QuadraticMatrix::new(a).unwrap(), &mut rng);
        fd_check(&Quartic::new(2), &mut rng);
    }

    #[test]
    fn quadratic_matrix_validation() {
        assert!(QuadraticMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0])).is_err());
        assert!(QuadraticMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])).is_err());
    }

    #[test]
    fn gibbs_density_examples() {
        let g = Grid1D::new(5.0, 200).unwrap();
        let p = Quadratic::new(1);
        let pi: DensityGrid<f64> = gibbs_density(&p, &[0.0], 1.0, &g).unwrap();
        assert_abs_diff_eq!(pi.values()[100], 0.398_942_28, epsilon = 1e-3);
        let h = g.spacing();
        let n01 = DensityGrid::gaussian(g, 0.0, 1.0).unwrap();
        assert!(pi.linf_distance(&n01).unwrap() <= 10.0 * h * h);

        let shifted: DensityGrid<f64> = gibbs_density(&p, &[2.0], 1.0, &g).unwrap();
        let n21 = DensityGrid::gaussian(g, 2.0, 1.0).unwrap();
        assert!(shifted.linf_distance(&n21).unwrap() <= 10.0 * h * h);

        let cold: DensityGrid<f64> = gibbs_density(&p, &[0.0], 2.0, &g).unwrap();
        let half = DensityGrid::gaussian(g, 0.0, 0.5).unwrap();
        assert!(cold.linf_distance(&half).unwrap() <= 10.0 * h * h);
    }

    #[derive(Debug)]
    struct Infinite;
    impl ParametricPotential for Infinite {
        fn id(&self) -> &str {
            "inf"
        }
        fn dim_x(&self) -> usize {
            1
        }
        fn dim_theta(&self) -> usize {
            1
        }
        fn psi(&self, _: &[f64], _: &[f64]) -> f64 {
            f64::INFINITY
        }
        fn grad_x(&self, _: &[f64], _: &[f64]) -> DVector<f64> {
            DVector::zeros(1)
        }
        fn grad_theta_psi(&self, _: &[f64], _: &[f64]) -> DVector<f64> {
            DVector::zeros(1)
        }
        fn grad_theta_grad_x(&self, _: &[f64], _: &[f64]) -> DMatrix<f64> {
            DMatrix::zeros(1, 1)
        }
    }

    #[test]
    fn exploding_potential_loses_all_mass() {
        let g = Grid1D::new(5.0, 20).unwrap();
        let r: Result<DensityGrid<f64>> = gibbs_density(&Infinite, &[0.0], 1.0, &g);
        assert!(matches!(r, Err(Error::AllMassLost)));
    }

    #[test]
    fn tau_for_quadratic() {
        let p: Arc<dyn ParametricPotential> = Arc::new(Quadratic::new(1));
        let eta: f64 = 1.0;
        let gamma2 = (1.0 + (-eta).exp()) / (1.0 - (-eta).exp());
        let tf = TauField::from_covariance(p.clone(), vec![0.0], &DMatrix::from_element(1, 1, gamma2)).unwrap();
        assert_abs_diff_eq!((tf.gamma() * tf.gamma())[(0, 0)], gamma2, epsilon = 1e-10);
        for x in [-2.0, 0.0, 0.7, 3.0] {
            assert_abs_diff_eq!(tf.grad_tau(&[x])[(0, 0)], -1.471_04, epsilon = 1e-4);
            assert_abs_diff_eq!(tf.tau(&[x])[0], -gamma2.sqrt() * x, epsilon = 1e-12);
        }
        let zero = TauField::new(p, vec![0.0], DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(zero.tau(&[1.3])[0], 0.0);
        assert_eq!(zero.grad_tau(&[1.3])[(0, 0)], 0.0);
    }

    #[test]
    fn psd_sqrt_squares_back_and_clamps() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let r = psd_sqrt(&m);
        assert!((&r * &r - &m).amax() < 1e-10);
        let neg = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let r = psd_sqrt(&neg);
        assert_abs_diff_eq!(r[(1, 1)], 0.0);
    }

    #[test]
    fn spec_round_trip() {
        let spec: PotentialSpec = toml::from_str("id = \"quadratic_matrix\"\na = [[2.0, 0.0], [0.0, 3.0]]").unwrap();
        let p = spec.build().unwrap();
        assert_eq!(p.id(), "quadratic_matrix");
        assert_eq!(p.dim_x(), 2);
        assert!(toml::from_str::<PotentialSpec>("id = \"quadratic\"\nbogus = 1").is_err());
        assert!(toml::from_str::<PotentialSpec>("id = \"nope\"").is_err());
    }
}
