//! Gaussian-restricted gradient flow: the mean/covariance ODE, the discrete
//! minimizing-movement step on Gaussians, and the linearized fluctuation
//! systems driven by a fixed `Z` or by `t^-1 W(t)`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimators::DriftSchedule;
use crate::grid::{fmt17, Interpolation};
use crate::limit_fields::NoisePath;
use crate::potential::{BoundPotential, Drift, TauField};
use crate::quadrature::GaussHermite;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianState {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl GaussianState {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let s = Self { mu, sigma };
        s.validate()?;
        Ok(s)
    }

    pub fn scalar(mu: f64, var: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, mu), DMatrix::from_element(1, 1, var))
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || self.sigma.shape() != (d, d) {
            return Err(invalid("covariance shape does not match the mean"));
        }
        let scale = self.sigma.amax().max(1.0);
        if (&self.sigma - self.sigma.transpose()).amax() > 1e-12 * scale {
            return Err(invalid("covariance is not symmetric"));
        }
        if !self.sigma.iter().all(|v| v.is_finite()) || self.sigma.clone().cholesky().is_none() {
            return Err(Error::LostPositiveDefiniteness);
        }
        Ok(())
    }

    fn inverse(&self) -> Result<DMatrix<f64>> {
        self.sigma.clone().cholesky().map(|c| c.inverse()).ok_or(Error::LostPositiveDefiniteness)
    }
}

/// Linearized fluctuation `(V_mu, V_Sigma)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BwLimitState {
    pub v_mu: DVector<f64>,
    pub v_sigma: DMatrix<f64>,
}

impl BwLimitState {
    pub fn zeros(d: usize) -> Self {
        Self { v_mu: DVector::zeros(d), v_sigma: DMatrix::zeros(d, d) }
    }
}

/// `E grad Psi(X)` and `E[grad Psi(X) (X - mu)']` under a Gaussian; the
/// third expectation is the transpose of the second.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMoments {
    pub grad_mean: DVector<f64>,
    pub grad_cross: DMatrix<f64>,
}

impl GaussianMoments {
    pub fn cross_transposed(&self) -> DMatrix<f64> {
        self.grad_cross.transpose()
    }
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitSystem {
    Ode,
    Sde,
}

/// Forcing of the fluctuation system.
#[derive(Clone, Debug)]
pub enum LimitNoise<'a> {
    /// Constant `Z`, integrated by RK4.
    Fixed(Vec<f64>),
    /// `t^-1 W(t)` at the end of each step, explicit Euler; the path's grid
    /// sets the step.
    Brownian(&'a NoisePath),
}

impl LimitNoise<'_> {
    pub fn system(&self) -> LimitSystem {
        match self {
            LimitNoise::Fixed(_) => LimitSystem::Ode,
            LimitNoise::Brownian(_) => LimitSystem::Sde,
        }
    }
}

/// States on a uniform time grid starting at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct BwTrajectory {
    pub dt: f64,
    pub states: Vec<GaussianState>,
}

impl BwTrajectory {
    pub fn times(&self) -> Vec<f64> {
        (0..self.states.len()).map(|i| i as f64 * self.dt).collect()
    }

    pub fn last(&self) -> &GaussianState {
        self.states.last().expect("trajectory holds the initial state")
    }

    /// `max_i |mu_i - mu(t_i)|` and the Frobenius analogue for `Sigma`.
    pub fn max_error(&self, reference: impl Fn(f64) -> GaussianState) -> (f64, f64) {
        self.states.iter().enumerate().fold((0.0f64, 0.0f64), |(em, es), (i, s)| {
            let r = reference(i as f64 * self.dt);
            (em.max((&s.mu - &r.mu).norm()), es.max((&s.sigma - &r.sigma).norm()))
        })
    }

    /// `t, mu_1.., sigma_11, sigma_12, ..` in row-major order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.states.first().map_or(0, GaussianState::dim);
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|k| format!("mu_{k}")));
        for a in 1..=d {
            header.extend((1..=d).map(|b| format!("sigma_{a}{b}")));
        }
        writeln!(out, "{}", header.join(","))?;
        for (i, s) in self.states.iter().enumerate() {
            let mut row = vec![fmt17(i as f64 * self.dt)];
            row.extend(s.mu.iter().map(|v| fmt17(*v)));
            for a in 0..d {
                row.extend((0..d).map(|b| fmt17(s.sigma[(a, b)])));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Fluctuation trajectory together with the Gaussian path it linearizes around.
#[derive(Clone, Debug, PartialEq)]
pub struct BwLimitTrajectory {
    pub dt: f64,
    pub states: Vec<GaussianState>,
    pub limits: Vec<BwLimitState>,
}

impl BwLimitTrajectory {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.limits.first().map_or(0, |l| l.v_mu.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|k| format!("v_mu_{k}")));
        for a in 1..=d {
            header.extend((1..=d).map(|b| format!("v_sigma_{a}{b}")));
        }
        writeln!(out, "{}", header.join(","))?;
        for (i, l) in self.limits.iter().enumerate() {
            let mut row = vec![fmt17(i as f64 * self.dt)];
            row.extend(l.v_mu.iter().map(|v| fmt17(*v)));
            for a in 0..d {
                row.extend((0..d).map(|b| fmt17(l.v_sigma[(a, b)])));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Stopping rule of the implicit step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 500 }
    }
}

/// Shared settings: inverse temperature, ODE step and quadrature rule.
#[derive(Clone, Debug)]
pub struct BwSolver {
    pub beta: f64,
    pub dt: f64,
    pub fixed_point: FixedPointOptions,
    gh: GaussHermite,
}

impl BwSolver {
    pub fn new(beta: f64, dt: f64) -> Result<Self> {
        Self::with_order(beta, dt, 20)
    }

    pub fn with_order(beta: f64, dt: f64, order: usize) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(invalid("beta must be positive and finite"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid("dt must be positive"));
        }
        Ok(Self { beta, dt, fixed_point: FixedPointOptions::default(), gh: GaussHermite::new(order)? })
    }

    /// Closed form for quadratic drifts (`A (mu - theta)`, `A Sigma`), tensor
    /// Gauss-Hermite otherwise.
    pub fn expectations(&self, drift: &dyn Drift, state: &GaussianState) -> Result<GaussianMoments> {
        if let Some((a, theta)) = drift.quadratic() {
            return Ok(GaussianMoments { grad_mean: &a * (&state.mu - theta), grad_cross: a * &state.sigma });
        }
        let d = state.dim();
        let mu = state.mu.clone();
        let packed = self.gh.expect(&state.mu, &state.sigma, |x| {
            let g = drift.gradient(x.as_slice());
            let mut m = DMatrix::zeros(d, d + 1);
            m.column_mut(0).copy_from(&g);
            m.columns_mut(1, d).copy_from(&(&g * (x - &mu).transpose()));
            m
        })?;
        Ok(GaussianMoments { grad_mean: packed.column(0).into_owned(), grad_cross: packed.columns(1, d).into_owned() })
    }

    /// `(mu_dot, Sigma_dot)` of the Gaussian flow.
    pub fn velocity(&self, drift: &dyn Drift, state: &GaussianState) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let e = self.expectations(drift, state)?;
        let d = state.dim();
        let sigma_dot = DMatrix::identity(d, d) * (2.0 / self.beta) - (&e.grad_cross + e.cross_transposed());
        Ok((-e.grad_mean, sym(&sigma_dot)))
    }

    fn rk4(&self, drift: &dyn Drift, s: &GaussianState, h: f64) -> Result<GaussianState> {
        let shift = |dm: &DVector<f64>, ds: &DMatrix<f64>, c: f64| -> Result<GaussianState> {
            let next = GaussianState { mu: &s.mu + dm * c, sigma: sym(&(&s.sigma + ds * c)) };
            next.sigma.clone().cholesky().ok_or(Error::LostPositiveDefiniteness)?;
            Ok(next)
        };
        let (m1, s1) = self.velocity(drift, s)?;
        let (m2, s2) = self.velocity(drift, &shift(&m1, &s1, 0.5 * h)?)?;
        let (m3, s3) = self.velocity(drift, &shift(&m2, &s2, 0.5 * h)?)?;
        let (m4, s4) = self.velocity(drift, &shift(&m3, &s3, h)?)?;
        let dm = (m1 + m2 * 2.0 + m3 * 2.0 + m4) / 6.0;
        let ds = (s1 + s2 * 2.0 + s3 * 2.0 + s4) / 6.0;
        let next = shift(&dm, &ds, h)?;
        next.validate()?;
        Ok(next)
    }

    fn steps(&self, horizon: f64) -> Result<usize> {
        if !(horizon >= 0.0) {
            return Err(invalid("horizon must be nonnegative"));
        }
        Ok((horizon / self.dt - 1e-9).ceil().max(0.0) as usize)
    }

    /// Classical RK4 on `(mu, Sigma)` with a fixed drift.
    pub fn ode(&self, drift: &dyn Drift, state0: &GaussianState, horizon: f64) -> Result<BwTrajectory> {
        state0.validate()?;
        let mut states = vec![state0.clone()];
        for _ in 0..self.steps(horizon)? {
            let next = self.rk4(drift, states.last().expect("nonempty"), self.dt)?;
            states.push(next);
        }
        Ok(BwTrajectory { dt: self.dt, states })
    }

    /// RK4 where the step over `[t, t + dt]` uses the drift of outer step
    /// `ceil((t + dt/2) / delta)`; exact piecewise when `dt` divides `delta`.
    pub fn ode_schedule(
        &self,
        schedule: &DriftSchedule,
        delta: f64,
        state0: &GaussianState,
        horizon: f64,
    ) -> Result<BwTrajectory> {
        state0.validate()?;
        let n = self.steps(horizon)?;
        schedule.require(Interpolation::Ceil.index(n as f64 * self.dt, delta))?;
        let mut states = vec![state0.clone()];
        let mut cached: Option<(usize, Box<dyn Drift>)> = None;
        for i in 0..n {
            let k = Interpolation::Ceil.index((i as f64 + 0.5) * self.dt, delta).max(1);
            if cached.as_ref().is_none_or(|(c, _)| *c != k) {
                cached = Some((k, schedule.drift(k)?));
            }
            let drift = cached.as_ref().expect("set above").1.as_ref();
            let next = self.rk4(drift, states.last().expect("nonempty"), self.dt)?;
            states.push(next);
        }
        Ok(BwTrajectory { dt: self.dt, states })
    }

    /// One minimizing-movement step restricted to Gaussians. The first-order
    /// conditions read `mu = mu0 - delta E_p grad Psi` and `T Sigma T = Sigma0`
    /// with `T = I + delta (E_p Hess Psi - Sigma^-1 / beta)`, solved by fixed-point
    /// iteration with `E_p Hess Psi = sym(E[grad Psi (X - mu)'] Sigma^-1)`.
    pub fn jko_step(&self, drift: &dyn Drift, state0: &GaussianState, delta: f64) -> Result<GaussianState> {
        state0.validate()?;
        if !(delta > 0.0) {
            return Err(invalid("delta must be positive"));
        }
        let d = state0.dim();
        let mut cur = state0.clone();
        let mut last_change = f64::INFINITY;
        let mut growth = 0;
        for _ in 0..self.fixed_point.max_iter {
            let e = self.expectations(drift, &cur)?;
            let inv = cur.inverse()?;
            let hess = sym(&(&e.grad_cross * &inv));
            let t = DMatrix::identity(d, d) + (hess - &inv / self.beta) * delta;
            let t_inv = t.cholesky().ok_or(Error::LostPositiveDefiniteness)?.inverse();
            let next = GaussianState {
                mu: &state0.mu - e.grad_mean * delta,
                sigma: sym(&(&t_inv * &state0.sigma * &t_inv)),
            };
            next.validate()?;
            let change = (&next.mu - &cur.mu).norm() + (&next.sigma - &cur.sigma).norm();
            cur = next;
            if change < self.fixed_point.tol {
                return Ok(cur);
            }
            growth = if change > last_change { growth + 1 } else { 0 };
            if growth >= 5 || !change.is_finite() {
                return Err(Error::FixedPointDiverged);
            }
            last_change = change;
        }
        Err(Error::FixedPointDiverged)
    }

    /// Outer iterates `p^(0..=N)` with `N = ceil(horizon / delta)`; step `k`
    /// sees the schedule's drift `k`.
    pub fn jko_run(
        &self,
        schedule: &DriftSchedule,
        state0: &GaussianState,
        delta: f64,
        horizon: f64,
    ) -> Result<BwTrajectory> {
        let n = Interpolation::Ceil.index(horizon, delta);
        schedule.require(n)?;
        let mut states = vec![state0.clone()];
        for k in 1..=n {
            let drift = schedule.drift(k)?;
            let next = self.jko_step(drift.as_ref(), states.last().expect("nonempty"), delta)?;
            states.push(next);
        }
        Ok(BwTrajectory { dt: delta, states })
    }

    /// Right side of the fluctuation system at `state` for forcing `s`
    /// (`Z` or `t^-1 W(t)`). Density derivatives enter in score form:
    /// `int f [grad_mu p . V_mu + grad_Sigma p . V_Sigma] = E[f(X) l(X)]` with
    /// `l = (x - mu)' S V_mu + 1/2 ((x - mu)' S V_Sigma S (x - mu) - tr(S V_Sigma))`, `S = Sigma^-1`.
    pub fn limit_velocity(
        &self,
        tau: &TauField,
        state: &GaussianState,
        lim: &BwLimitState,
        s: &[f64],
    ) -> Result<BwLimitState> {
        let d = state.dim();
        let q = tau.gamma().ncols();
        if s.len() != q || tau.potential().dim_x() != d {
            return Err(invalid("forcing dimension does not match the tau field"));
        }
        let drift = BoundPotential::new(tau.potential().clone(), tau.theta().to_vec());
        let inv = state.inverse()?;
        let s_vec = DVector::from_column_slice(s);
        let a = &inv * &lim.v_mu;
        let b = &inv * &lim.v_sigma * &inv;
        let tr = (&inv * &lim.v_sigma).trace();
        let mu = state.mu.clone();
        // columns: [grad tau s | grad tau s (x-mu)' | grad Psi | grad Psi l | grad Psi (x-mu)' l]
        let packed = self.gh.expect(&state.mu, &state.sigma, |x| {
            let y = x - &mu;
            let l = y.dot(&a) + 0.5 * ((y.transpose() * &b * &y)[(0, 0)] - tr);
            let f = tau.grad_tau(x.as_slice()) * &s_vec;
            let g = drift.gradient(x.as_slice());
            let mut m = DMatrix::zeros(d, 3 + 2 * d);
            m.column_mut(0).copy_from(&f);
            m.columns_mut(1, d).copy_from(&(&f * y.transpose()));
            m.column_mut(1 + d).copy_from(&g);
            m.column_mut(2 + d).copy_from(&(&g * l));
            m.columns_mut(3 + d, d).copy_from(&(&g * y.transpose() * l));
            m
        })?;
        let force = packed.column(0).into_owned();
        let force_cross = packed.columns(1, d).into_owned();
        let grad_mean = packed.column(1 + d).into_owned();
        let d1 = packed.column(2 + d).into_owned();
        let d2 = packed.columns(3 + d, d).into_owned();
        let half = -(force_cross - &grad_mean * lim.v_mu.transpose()) - d2;
        Ok(BwLimitState { v_mu: -force - d1, v_sigma: &half + half.transpose() })
    }

    /// Fluctuations around the flow from `state0` under the true drift of
    /// `tau`. The Gaussian path is integrated alongside with the same RK4
    /// step, so it equals [`BwSolver::ode`] on the same grid.
    pub fn limit(
        &self,
        tau: &TauField,
        state0: &GaussianState,
        noise: &LimitNoise<'_>,
        horizon: f64,
    ) -> Result<BwLimitTrajectory> {
        state0.validate()?;
        let drift = BoundPotential::new(tau.potential().clone(), tau.theta().to_vec());
        let d = state0.dim();
        let (dt, n) = match noise {
            LimitNoise::Fixed(_) => (self.dt, self.steps(horizon)?),
            LimitNoise::Brownian(path) => {
                let tg = path.time_grid();
                if path.dim() != tau.gamma().ncols() {
                    return Err(invalid("noise dimension does not match the tau field"));
                }
                if horizon > tg.horizon() + 1e-12 {
                    return Err(invalid("noise path is shorter than the horizon"));
                }
                (tg.step(), (horizon / tg.step() - 1e-9).ceil().max(0.0) as usize)
            }
        };
        let stepper = Self { dt, ..self.clone() };
        let mut states = vec![state0.clone()];
        let mut limits = vec![BwLimitState::zeros(d)];
        for i in 0..n {
            let s = states.last().expect("nonempty").clone();
            let v = limits.last().expect("nonempty").clone();
            let next_v = match noise {
                LimitNoise::Fixed(z) => {
                    let mid = stepper.rk4(&drift, &s, 0.5 * dt)?;
                    let end = stepper.rk4(&drift, &s, dt)?;
                    let add = |k: &BwLimitState, c: f64| BwLimitState {
                        v_mu: &v.v_mu + &k.v_mu * c,
                        v_sigma: &v.v_sigma + &k.v_sigma * c,
                    };
                    let k1 = self.limit_velocity(tau, &s, &v, z)?;
                    let k2 = self.limit_velocity(tau, &mid, &add(&k1, 0.5 * dt), z)?;
                    let k3 = self.limit_velocity(tau, &mid, &add(&k2, 0.5 * dt), z)?;
                    let k4 = self.limit_velocity(tau, &end, &add(&k3, dt), z)?;
                    BwLimitState {
                        v_mu: &v.v_mu + (k1.v_mu + k2.v_mu * 2.0 + k3.v_mu * 2.0 + k4.v_mu) * (dt / 6.0),
                        v_sigma: sym(&(&v.v_sigma + (k1.v_sigma + k2.v_sigma * 2.0 + k3.v_sigma * 2.0 + k4.v_sigma) * (dt / 6.0))),
                    }
                }
                LimitNoise::Brownian(path) => {
                    let t = path.time_grid().t(i + 1);
                    let w: Vec<f64> = path.value(i + 1).iter().map(|w| w / t).collect();
                    let k = self.limit_velocity(tau, &s, &v, &w)?;
                    BwLimitState { v_mu: &v.v_mu + k.v_mu * dt, v_sigma: sym(&(&v.v_sigma + k.v_sigma * dt)) }
                }
            };
            states.push(stepper.rk4(&drift, &s, dt)?);
            limits.push(next_v);
        }
        Ok(BwLimitTrajectory { dt, states, limits })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{ParametricPotential, Quadratic, QuadraticMatrix, Quartic};
    use crate::grid::TimeGrid;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    use std::sync::Arc;

    fn quad() -> Arc<dyn ParametricPotential> {
        Arc::new(Quadratic::new(1))
    }

    fn ou(mu0: f64, var0: f64) -> impl Fn(f64) -> GaussianState {
        move |t| GaussianState::scalar(mu0 * (-t as f64).exp(), 1.0 - (1.0 - var0) * (-2.0 * t as f64).exp()).unwrap()
    }

    /// Quadratic seen only through its gradient, forcing the quadrature path.
    struct Opaque(BoundPotential);
    impl Drift for Opaque {
        fn value(&self, x: &[f64]) -> f64 {
            self.0.value(x)
        }
        fn gradient(&self, x: &[f64]) -> DVector<f64> {
            self.0.gradient(x)
        }
    }

    #[test]
    fn state_validation() {
        assert!(GaussianState::scalar(0.0, -1.0).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(GaussianState::new(DVector::zeros(2), asym).is_err());
    }

    #[test]
    fn quadratic_expectations() {
        let solver = BwSolver::new(1.0, 1e-3).unwrap();
        let drift = BoundPotential::new(quad(), vec![0.4]);
        let e = solver.expectations(&drift, &GaussianState::scalar(0.4, 2.0).unwrap()).unwrap();
        assert_eq!(e.grad_mean[0], 0.0);
        assert_eq!(e.grad_cross[(0, 0)], 2.0);
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let p: Arc<dyn ParametricPotential> = Arc::new(QuadraticMatrix::new(a.clone()).unwrap());
        let bound = BoundPotential::new(p, vec![0.1, -0.2]);
        let state = GaussianState::new(
            DVector::from_vec(vec![1.0, 0.5]),
            DMatrix::from_row_slice(2, 2, &[1.2, 0.4, 0.4, 0.9]),
        )
        .unwrap();
        let closed = solver.expectations(&bound, &state).unwrap();
        let quadr = solver.expectations(&Opaque(bound), &state).unwrap();
        assert!((closed.grad_mean - quadr.grad_mean).amax() < 1e-12);
        assert!((closed.grad_cross - quadr.grad_cross).amax() < 1e-12);
    }

    #[test]
    fn quadrature_matches_monte_carlo_for_quartic() {
        let solver = BwSolver::new(1.0, 1e-3).unwrap();
        let p: Arc<dyn ParametricPotential> = Arc::new(Quartic::new(1));
        let drift = BoundPotential::new(p, vec![0.5]);
        let state = GaussianState::scalar(0.3, 0.8).unwrap();
        let e = solver.expectations(&drift, &state).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 1_000_000usize;
        let (mut s1, mut s2, mut c1, mut c2) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            let x = 0.3 + 0.8f64.sqrt() * z;
            let g = drift.gradient(&[x])[0];
            s1 += g;
            s2 += g * g;
            let c = g * (x - 0.3);
            c1 += c;
            c2 += c * c;
        }
        let nf = n as f64;
        for (est, sum, sq) in [(e.grad_mean[0], s1, s2), (e.grad_cross[(0, 0)], c1, c2)] {
            let mean = sum / nf;
            let se = ((sq / nf - mean * mean) / nf).sqrt();
            assert!((est - mean).abs() < 4.0 * se, "{est} vs {mean} +- {se}");
        }
    }

    #[test]
    fn quadrature_rejects_high_dimension() {
        let solver = BwSolver::new(1.0, 1e-3).unwrap();
        let p: Arc<dyn ParametricPotential> = Arc::new(Quartic::new(4));
        let drift = BoundPotential::new(p, vec![0.0; 4]);
        let state = GaussianState::new(DVector::zeros(4), DMatrix::identity(4, 4)).unwrap();
        assert!(matches!(solver.expectations(&drift, &state), Err(Error::DimensionTooLarge(4))));
    }

    #[test]
    fn ode_fixed_point_and_ou_moments() {
        let solver = BwSolver::new(1.0, 1e-3).unwrap();
        let drift = BoundPotential::new(quad(), vec![0.0]);
        let fixed = solver.ode(&drift, &GaussianState::scalar(0.0, 1.0).unwrap(), 0.5).unwrap();
        assert!(fixed.states.iter().all(|s| s.mu[0] == 0.0 && (s.sigma[(0, 0)] - 1.0).abs() < 1e-15));

        let traj = solver.ode(&Opaque(drift), &GaussianState::scalar(0.0, 1.44).unwrap(), 0.5).unwrap();
        let (em, es) = traj.max_error(ou(0.0, 1.44));
        assert!(em < 1e-6 && es < 1e-6, "{em} {es}");
    }

    #[test]
    fn rk4_converges_at_fourth_order() {
        let p: Arc<dyn ParametricPotential> = Arc::new(Quartic::new(1));
        let drift = BoundPotential::new(p, vec![0.0]);
        let s0 = GaussianState::scalar(1.0, 1.44).unwrap();
        let at = |dt: f64| BwSolver::new(1.0, dt).unwrap().ode(&drift, &s0, 0.8).unwrap().last().clone();
        let reference = at(0.002);
        let err = |dt: f64| {
            let s = at(dt);
            (s.mu[0] - reference.mu[0]).abs() + (s.sigma[(0, 0)] - reference.sigma[(0, 0)]).abs()
        };
        let (e1, e2) = (err(0.04), err(0.02));
        assert!(e1 / e2 >= 12.0, "{e1} {e2}");
    }

    #[test]
    fn jko_step_properties() {
        let solver = BwSolver::new(1.0, 1e-3).unwrap();
        let drift = BoundPotential::new(quad(), vec![0.0]);
        let stat = GaussianState::scalar(0.0, 1.0).unwrap();
        let out = solver.jko_step(&drift, &stat, 0.01).unwrap();
        assert!((out.mu[0]).abs() < 1e-10 && (out.sigma[(0, 0)] - 1.0).abs() < 1e-10);

        let s0 = GaussianState::scalar(0.0, 1.44).unwrap();
        let one = solver.jko_step(&drift, &s0, 0.01).unwrap();
        let ode = BwSolver::new(1.0, 1e-3).unwrap().ode(&drift, &s0, 0.01).unwrap();
        assert!((one.sigma[(0, 0)] - ode.last().sigma[(0, 0)]).abs() < 1e-3);

        // difference quotient tends to the flow's velocity
        let p: Arc<dyn ParametricPotential> = Arc::new(Quartic::new(1));
        let quartic = BoundPotential::new(p, vec![0.2]);
        let s0 = GaussianState::scalar(1.0, 1.44).unwrap();
        let delta = 1e-4;
        let next = solver.jko_step(&quartic, &s0, delta).unwrap();
        let (vm, vs) = solver.velocity(&quartic, &s0).unwrap();
        let qm = (next.mu[0] - s0.mu[0]) / delta;
        let qs = (next.sigma[(0, 0)] - s0.sigma[(0, 0)]) / delta;
        assert!((qm / vm[0] - 1.0).abs() < 1e-2 && (qs / vs[(0, 0)] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn jko_step_in_two_dimensions_stays_symmetric() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let p: Arc<dyn ParametricPotential> = Arc::new(QuadraticMatrix::new(a).unwrap());
        let schedule = DriftSchedule::fixed(p, vec![0.3, -0.1]);
        let s0 = GaussianState::new(DVector::from_vec(vec![1.0, 1.0]), DMatrix::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 0.7]))
            .unwrap();
        let solver = BwSolver::new(1.0, 1e-3).unwrap();
        let traj = solver.jko_run(&schedule, &s0, 0.02, 0.5).unwrap();
        for s in &traj.states {
            assert!((&s.sigma - s.sigma.transpose()).amax() < 1e-12);
            assert!(s.sigma.clone().cholesky().is_some());
        }
    }

    #[test]
    fn discrete_flow_error_is_first_order() {
        let schedule = DriftSchedule::fixed(quad(), vec![0.0]);
        let solver = BwSolver::new(1.0, 1e-3).unwrap();
        let s0 = GaussianState::scalar(1.0, 1.44).unwrap();
        let errs: Vec<(f64, f64)> = [0.04, 0.02, 0.01]
            .iter()
            .map(|&delta| solver.jko_run(&schedule, &s0, delta, 0.5).unwrap().max_error(ou(1.0, 1.44)))
            .collect();
        for w in errs.windows(2) {
            assert!((1.6..2.6).contains(&(w[0].0 / w[1].0)), "{errs:?}");
            assert!((1.6..2.6).contains(&(w[0].1 / w[1].1)), "{errs:?}");
        }
    }

    #[test]
    fn schedule_ode_uses_piecewise_drifts() {
        use crate::estimators::{EstimatorTrajectory, Scheme};
        let traj = EstimatorTrajectory::new(vec![vec![0.5], vec![-0.5]], Scheme::OnlineCumulative).unwrap();
        let schedule = DriftSchedule::from_trajectory(quad(), traj);
        let solver = BwSolver::new(1.0, 0.01).unwrap();
        let s0 = GaussianState::scalar(0.0, 1.0).unwrap();
        let out = solver.ode_schedule(&schedule, 0.1, &s0, 0.2).unwrap();
        let mid = 0.5 * (1.0 - (-0.1f64).exp());
        assert!((out.states[10].mu[0] - mid).abs() < 1e-9);
        let end = -0.5 + (mid + 0.5) * (-0.1f64).exp();
        assert!((out.last().mu[0] - end).abs() < 1e-9);
        assert!(solver.ode_schedule(&schedule, 0.1, &s0, 0.3).is_err());
    }

    fn ou_tau() -> TauField {
        let gamma = crate::estimators::ou_gamma_squared(1.0, 1.0).sqrt();
        TauField::new(quad(), vec![0.0], DMatrix::from_element(1, 1, gamma)).unwrap()
    }

    #[test]
    fn limit_system_zero_and_linear() {
        let solver = BwSolver::new(1.0, 1e-2).unwrap();
        let tau = ou_tau();
        let s0 = GaussianState::scalar(1.0, 1.44).unwrap();
        let zero = solver.limit(&tau, &s0, &LimitNoise::Fixed(vec![0.0]), 0.5).unwrap();
        assert!(zero.limits.iter().all(|l| l.v_mu[0] == 0.0 && l.v_sigma[(0, 0)] == 0.0));
        let one = solver.limit(&tau, &s0, &LimitNoise::Fixed(vec![1.0]), 0.5).unwrap();
        let three = solver.limit(&tau, &s0, &LimitNoise::Fixed(vec![3.0]), 0.5).unwrap();
        for (a, b) in one.limits.iter().zip(&three.limits) {
            assert!((3.0 * a.v_mu[0] - b.v_mu[0]).abs() < 1e-12);
            assert!((3.0 * a.v_sigma[(0, 0)] - b.v_sigma[(0, 0)]).abs() < 1e-12);
        }
        let w = NoisePath::fixed(TimeGrid::new(0.5, 50).unwrap(), vec![0.0]);
        let sde = solver.limit(&tau, &s0, &LimitNoise::Brownian(&w), 0.5).unwrap();
        assert!(sde.limits.iter().all(|l| l.v_mu[0] == 0.0));
    }

    #[test]
    fn limit_matches_finite_n_perturbation_for_quartic() {
        // sqrt(n) (flow with theta + gamma z / sqrt(n) - flow with theta) -> V
        let p: Arc<dyn ParametricPotential> = Arc::new(Quartic::new(1));
        let tau = TauField::new(p.clone(), vec![0.2], DMatrix::from_element(1, 1, 1.3)).unwrap();
        let solver = BwSolver::new(1.0, 1e-2).unwrap();
        let s0 = GaussianState::scalar(1.0, 1.44).unwrap();
        let lim = solver.limit(&tau, &s0, &LimitNoise::Fixed(vec![1.0]), 0.5).unwrap();
        let base = solver.ode(&BoundPotential::new(p.clone(), vec![0.2]), &s0, 0.5).unwrap();
        let gap = |n: f64| {
            let pert = solver.ode(&BoundPotential::new(p.clone(), vec![0.2 + 1.3 / n.sqrt()]), &s0, 0.5).unwrap();
            let vm = n.sqrt() * (pert.last().mu[0] - base.last().mu[0]);
            let vs = n.sqrt() * (pert.last().sigma[(0, 0)] - base.last().sigma[(0, 0)]);
            (vm - lim.limits.last().unwrap().v_mu[0]).abs() + (vs - lim.limits.last().unwrap().v_sigma[(0, 0)]).abs()
        };
        let (g4, g6) = (gap(1e4), gap(1e6));
        assert!(g6 < 1e-2 && g4 / g6 > 5.0, "{g4} {g6}");
    }

    #[test]
    fn sde_limit_for_ou_mean() {
        // quadratic OU: V_mu' = gamma W(t)/t - V_mu, explicit Euler with end-of-step W
        let tau = ou_tau();
        let gamma = tau.gamma()[(0, 0)];
        let w = NoisePath::brownian(TimeGrid::new(0.5, 500).unwrap(), 1, 8, 0);
        let solver = BwSolver::new(1.0, 1e-3).unwrap();
        let s0 = GaussianState::scalar(0.0, 1.0).unwrap();
        let out = solver.limit(&tau, &s0, &LimitNoise::Brownian(&w), 0.5).unwrap();
        let mut v = 0.0;
        for i in 0..500 {
            let t = w.time_grid().t(i + 1);
            v += 1e-3 * (gamma * w.value(i + 1)[0] / t - v);
        }
        assert!((out.limits.last().unwrap().v_mu[0] - v).abs() < 1e-10);
        assert!(out.limits.iter().all(|l| l.v_sigma[(0, 0)].abs() < 1e-12));
    }
}
