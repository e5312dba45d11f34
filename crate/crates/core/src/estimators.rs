//! Estimating-equation solvers `sum_i grad_x Psi_theta(X_i) = 0` in their
//! offline and online forms, and the long-run covariance `Gamma_theta`.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{DriftField, Grid1D};
use crate::potential::{drift_field, psd_sqrt, BoundPotential, Drift, ParametricPotential};
use crate::sampler::{BatchSet, SamplePath};
use crate::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Offline,
    OnlineCumulative,
    PerBatch,
    AveragedPsi,
    Sequential,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonOptions {
    /// Stop once `||residual|| <= n * eq_tol`.
    pub eq_tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { eq_tol: 1e-10, max_iter: 100, max_halvings: 30 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThetaEstimate {
    pub theta_hat: Vec<f64>,
    pub n_used: usize,
    pub gamma_hat: Option<DMatrix<f64>>,
    pub scheme: Scheme,
}

impl ThetaEstimate {
    pub fn with_gamma(mut self, gamma: DMatrix<f64>) -> Result<Self> {
        let q = self.theta_hat.len();
        if gamma.nrows() != q || gamma.ncols() != q {
            return Err(invalid("gamma has the wrong shape"));
        }
        if (&gamma - gamma.transpose()).amax() > 1e-10 * gamma.amax().max(1.0) {
            return Err(invalid("gamma must be symmetric"));
        }
        if gamma.clone().symmetric_eigen().eigenvalues.min() < -1e-10 * gamma.amax().max(1.0) {
            return Err(invalid("gamma must be positive semidefinite"));
        }
        self.gamma_hat = Some(gamma);
        Ok(self)
    }
}

/// Sequence `theta^1, theta^2, ...`, one estimate per algorithm step.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorTrajectory {
    estimates: Vec<Vec<f64>>,
    scheme: Scheme,
}

impl EstimatorTrajectory {
    pub fn new(estimates: Vec<Vec<f64>>, scheme: Scheme) -> Result<Self> {
        let q = estimates.first().map(Vec::len).unwrap_or(0);
        if estimates.iter().any(|e| e.len() != q) {
            return Err(invalid("estimates must share one dimension"));
        }
        Ok(Self { estimates, scheme })
    }

    /// Trajectory that never moves from `theta`.
    pub fn constant(theta: &[f64], steps: usize, scheme: Scheme) -> Self {
        Self { estimates: vec![theta.to_vec(); steps], scheme }
    }

    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// `theta^k` for `k >= 1`.
    pub fn theta(&self, k: usize) -> &[f64] {
        &self.estimates[k - 1]
    }

    pub fn estimates(&self) -> &[Vec<f64>] {
        &self.estimates
    }

    /// CSV with header `k,theta_1..theta_q`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let q = self.estimates.first().map(Vec::len).unwrap_or(0);
        let names: Vec<String> = (1..=q).map(|j| format!("theta_{j}")).collect();
        writeln!(out, "k,{}", names.join(","))?;
        for (k, e) in self.estimates.iter().enumerate() {
            let vals: Vec<String> = e.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{},{}", k + 1, vals.join(","))?;
        }
        Ok(())
    }
}

fn residual_and_jacobian<'a>(
    potential: &dyn ParametricPotential,
    theta: &[f64],
    rows: impl Iterator<Item = &'a [f64]>,
    with_jacobian: bool,
) -> (DVector<f64>, DMatrix<f64>) {
    let (d, q) = (potential.dim_x(), potential.dim_theta());
    let mut r = DVector::zeros(d);
    let mut j = DMatrix::zeros(if with_jacobian { d } else { 0 }, if with_jacobian { q } else { 0 });
    for x in rows {
        r += potential.grad_x(theta, x);
        if with_jacobian {
            j += potential.grad_theta_grad_x(theta, x);
        }
    }
    (r, j)
}

/// Starting point: the sample mean for quadratic families (where it is the
/// exact root), the zero vector otherwise.
pub fn default_theta_init(potential: &dyn ParametricPotential, paths: &[&SamplePath]) -> Vec<f64> {
    let q = potential.dim_theta();
    if potential.quadratic_matrix().is_none() || potential.dim_x() != q {
        return vec![0.0; q];
    }
    let mut m = vec![0.0; q];
    let mut n = 0usize;
    for p in paths {
        for row in p.rows() {
            for (a, b) in m.iter_mut().zip(row) {
                *a += b;
            }
            n += 1;
        }
    }
    m.iter().map(|v| v / n.max(1) as f64).collect()
}

/// Damped Newton on the pooled estimating equation over `paths`.
pub fn solve_pooled(
    potential: &dyn ParametricPotential,
    paths: &[&SamplePath],
    theta_init: Option<&[f64]>,
    opts: &NewtonOptions,
) -> Result<ThetaEstimate> {
    let q = potential.dim_theta();
    let n: usize = paths.iter().map(|p| p.len()).sum();
    if n == 0 {
        return Err(invalid("estimating equation needs at least one observation"));
    }
    if paths.iter().any(|p| p.dim() != potential.dim_x()) {
        return Err(invalid("observation dimension does not match the potential"));
    }
    let mut theta = match theta_init {
        Some(t) if t.len() == q => t.to_vec(),
        Some(_) => return Err(invalid("theta_init has the wrong dimension")),
        None => default_theta_init(potential, paths),
    };
    let rows = || paths.iter().flat_map(|p| p.rows());
    let tol = n as f64 * opts.eq_tol;
    let (mut r, mut jac) = residual_and_jacobian(potential, &theta, rows(), true);
    let mut norm = r.norm();
    for _ in 0..opts.max_iter {
        if norm <= tol {
            return Ok(ThetaEstimate { theta_hat: theta, n_used: n, gamma_hat: None, scheme: Scheme::Offline });
        }
        let step = newton_direction(&jac, &r)?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + lambda * s).collect();
            let (rt, jt) = residual_and_jacobian(potential, &trial, rows(), true);
            let nt = rt.norm();
            if nt < norm || nt <= tol {
                theta = trial;
                r = rt;
                jac = jt;
                norm = nt;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if norm <= tol {
        return Ok(ThetaEstimate { theta_hat: theta, n_used: n, gamma_hat: None, scheme: Scheme::Offline });
    }
    Err(Error::NoConvergence { residual: norm, iterations: opts.max_iter })
}

fn newton_direction(jac: &DMatrix<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
    let scale = jac.amax();
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::SingularJacobian);
    }
    if jac.is_square() {
        let lu = jac.clone().lu();
        let det = lu.determinant();
        if det.abs() <= 1e-14 * scale.powi(jac.nrows() as i32) {
            return Err(Error::SingularJacobian);
        }
        lu.solve(&(-r)).ok_or(Error::SingularJacobian)
    } else {
        let svd = jac.clone().svd(true, true);
        if svd.singular_values.min() <= 1e-14 * scale {
            return Err(Error::SingularJacobian);
        }
        svd.solve(&(-r), 1e-14 * scale).map_err(|_| Error::SingularJacobian)
    }
}

/// Offline estimator from one path.
pub fn solve_offline(
    potential: &dyn ParametricPotential,
    path: &SamplePath,
    theta_init: Option<&[f64]>,
) -> Result<ThetaEstimate> {
    solve_pooled(potential, &[path], theta_init, &NewtonOptions::default())
}

/// Default Bartlett cutoff `floor(n^(1/3))`.
pub fn default_lag_cutoff(n: usize) -> usize {
    (n as f64).cbrt().floor() as usize
}

/// Plug-in `Gamma = A^-1 Sigma_f A'^-1` with a Bartlett-tapered long-run
/// variance `Sigma_f`.
pub fn estimate_covariance(
    potential: &dyn ParametricPotential,
    theta_hat: &[f64],
    path: &SamplePath,
    lag_cutoff: Option<usize>,
) -> Result<DMatrix<f64>> {
    let (d, q) = (potential.dim_x(), potential.dim_theta());
    if d != q {
        return Err(invalid("asymptotic covariance needs dim_x == dim_theta"));
    }
    let n = path.len();
    if n < 2 {
        return Err(invalid("asymptotic covariance needs at least two observations"));
    }
    let lag = lag_cutoff.unwrap_or_else(|| default_lag_cutoff(n)).min(n - 1);
    let f: Vec<DVector<f64>> = path.rows().map(|x| potential.grad_x(theta_hat, x)).collect();
    let mut a = DMatrix::zeros(d, q);
    for x in path.rows() {
        a += potential.grad_theta_grad_x(theta_hat, x);
    }
    a /= n as f64;
    let fbar = f.iter().fold(DVector::zeros(d), |acc, v| acc + v) / n as f64;
    let c: Vec<DVector<f64>> = f.iter().map(|v| v - &fbar).collect();
    let autocov = |l: usize| {
        let mut g = DMatrix::zeros(d, d);
        for i in 0..n - l {
            g += &c[i] * c[i + l].transpose();
        }
        g / n as f64
    };
    let mut sigma = autocov(0);
    for l in 1..=lag {
        let w = 1.0 - l as f64 / (lag as f64 + 1.0);
        let g = autocov(l);
        sigma += (&g + g.transpose()) * w;
    }
    let a_inv = a.try_inverse().ok_or(Error::SingularJacobian)?;
    let gamma = &a_inv * sigma * a_inv.transpose();
    Ok((&gamma + gamma.transpose()) * 0.5)
}

/// `gamma_hat`: the symmetric PSD root of [`estimate_covariance`].
pub fn estimate_gamma(
    potential: &dyn ParametricPotential,
    theta_hat: &[f64],
    path: &SamplePath,
    lag_cutoff: Option<usize>,
) -> Result<DMatrix<f64>> {
    Ok(psd_sqrt(&estimate_covariance(potential, theta_hat, path, lag_cutoff)?))
}

/// Closed-form `gamma_theta^2` for `Psi = 1/2 (x - theta)^2` sampled every `eta`
/// at inverse temperature `beta`.
pub fn ou_gamma_squared(eta: f64, beta: f64) -> f64 {
    let e = (-eta).exp();
    (1.0 + e) / (1.0 - e) / beta
}

/// `theta^k` from the first `k` batches pooled, warm-started at `theta^(k-1)`.
pub fn online_cumulative(potential: &dyn ParametricPotential, batches: &BatchSet) -> Result<EstimatorTrajectory> {
    let opts = NewtonOptions::default();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(batches.len());
    for k in 1..=batches.len() {
        let pooled: Vec<&SamplePath> = batches.batches[..k].iter().collect();
        let init = match (out.last(), potential.quadratic_matrix()) {
            (Some(prev), None) => Some(prev.as_slice()),
            _ => None,
        };
        out.push(solve_pooled(potential, &pooled, init, &opts)?.theta_hat);
    }
    EstimatorTrajectory::new(out, Scheme::OnlineCumulative)
}

/// `theta_m^(k)` from batch `k` alone.
pub fn per_batch(potential: &dyn ParametricPotential, batches: &BatchSet) -> Result<EstimatorTrajectory> {
    let est = batches
        .batches
        .iter()
        .map(|b| solve_offline(potential, b, None).map(|e| e.theta_hat))
        .collect::<Result<Vec<_>>>()?;
    EstimatorTrajectory::new(est, Scheme::PerBatch)
}

/// `theta_k` from the first `k` single observations.
pub fn sequential(potential: &dyn ParametricPotential, path: &SamplePath) -> Result<EstimatorTrajectory> {
    let opts = NewtonOptions::default();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(path.len());
    for k in 1..=path.len() {
        let prefix = path.prefix(k);
        let init = match (out.last(), potential.quadratic_matrix()) {
            (Some(prev), None) => Some(prev.as_slice()),
            _ => None,
        };
        out.push(solve_pooled(potential, &[&prefix], init, &opts)?.theta_hat);
    }
    EstimatorTrajectory::new(out, Scheme::Sequential)
}

/// `Psi_hat^(k)(x) = (1/k) sum_{j<=k} Psi_{theta^(j)}(x)`.
#[derive(Clone, Debug)]
pub struct AveragedPotential {
    potential: Arc<dyn ParametricPotential>,
    thetas: Vec<Vec<f64>>,
}

impl Drift for AveragedPotential {
    fn value(&self, x: &[f64]) -> f64 {
        self.thetas.iter().map(|t| self.potential.psi(t, x)).sum::<f64>() / self.thetas.len() as f64
    }
    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let sum = self
            .thetas
            .iter()
            .fold(DVector::zeros(self.potential.dim_x()), |acc, t| acc + self.potential.grad_x(t, x));
        sum / self.thetas.len() as f64
    }
}

/// Averaged potential over the first `k` per-batch estimates.
pub fn averaged_psi(
    potential: Arc<dyn ParametricPotential>,
    per_batch: &EstimatorTrajectory,
    k: usize,
) -> Result<AveragedPotential> {
    if k == 0 || k > per_batch.len() {
        return Err(Error::TrajectoryTooShort { needed: k.max(1), available: per_batch.len() });
    }
    Ok(AveragedPotential { potential, thetas: per_batch.estimates[..k].to_vec() })
}

/// Which drift an outer step `k` (1-based) sees.
#[derive(Clone, Debug)]
pub struct DriftSchedule {
    potential: Arc<dyn ParametricPotential>,
    kind: ScheduleKind,
}

#[derive(Clone, Debug)]
enum ScheduleKind {
    Fixed(Vec<f64>),
    PerStep(EstimatorTrajectory),
    Averaged(EstimatorTrajectory),
}

impl DriftSchedule {
    /// The same `theta` at every step (plain and offline schemes).
    pub fn fixed(potential: Arc<dyn ParametricPotential>, theta: Vec<f64>) -> Self {
        Self { potential, kind: ScheduleKind::Fixed(theta) }
    }

    /// Step `k` uses `Psi_{theta^k}`, or the running average of the per-batch
    /// potentials when the trajectory is tagged [`Scheme::AveragedPsi`].
    pub fn from_trajectory(potential: Arc<dyn ParametricPotential>, traj: EstimatorTrajectory) -> Self {
        let kind = match traj.scheme {
            Scheme::AveragedPsi => ScheduleKind::Averaged(traj),
            _ => ScheduleKind::PerStep(traj),
        };
        Self { potential, kind }
    }

    pub fn potential(&self) -> &Arc<dyn ParametricPotential> {
        &self.potential
    }

    /// Number of steps available; `None` when unlimited.
    pub fn available(&self) -> Option<usize> {
        match &self.kind {
            ScheduleKind::Fixed(_) => None,
            ScheduleKind::PerStep(t) | ScheduleKind::Averaged(t) => Some(t.len()),
        }
    }

    pub fn require(&self, steps: usize) -> Result<()> {
        match self.available() {
            Some(a) if a < steps => Err(Error::TrajectoryTooShort { needed: steps, available: a }),
            _ => Ok(()),
        }
    }

    /// Drift at step `k >= 1`.
    pub fn drift(&self, k: usize) -> Result<Box<dyn Drift>> {
        self.require(k.max(1))?;
        let k = k.max(1);
        Ok(match &self.kind {
            ScheduleKind::Fixed(theta) => Box::new(BoundPotential::new(self.potential.clone(), theta.clone())),
            ScheduleKind::PerStep(t) => Box::new(BoundPotential::new(self.potential.clone(), t.theta(k).to_vec())),
            ScheduleKind::Averaged(t) => Box::new(averaged_psi(self.potential.clone(), t, k)?),
        })
    }

    /// Drift at step `k` sampled on a grid.
    pub fn field<F: Real>(&self, k: usize, grid: &Grid1D<F>) -> Result<DriftField<F>> {
        Ok(drift_field(self.drift(k)?.as_ref(), grid))
    }
}
