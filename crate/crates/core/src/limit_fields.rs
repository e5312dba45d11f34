//! Limiting fields of the scaled density errors: `V` (fixed Gaussian forcing),
//! `V1` (`t^-1 W(t)` forcing), `V2` (white-noise forcing), and the
//! estimator-coupled forcing that realizes `V1` from an estimate trajectory.
//!
//! All share `d_t V = div(V grad Psi) + beta^-1 Laplace V + div(rho grad tau s(t))`
//! with `V(0, .) = 0`, stepped by Crank-Nicolson with the forcing evaluated at
//! the end of each step.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimators::EstimatorTrajectory;
use crate::fokker_planck::{cn_step, operator};
use crate::grid::{DensityGrid, DriftField, FieldGrid, Grid1D, TimeGrid};
use crate::potential::TauField;
use crate::rng::{standard_normal, substream};
use crate::sampler::ou_moments;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// `V1`: forcing `W(t) / t`.
    Brownian,
    /// `V2`: forcing `dW / dt`.
    WhiteIncrements,
    /// `V`: constant forcing `Z`.
    FixedGaussian,
    /// Stored values are already the per-step forcing `(m delta)^(1/2) (theta^i - theta)`.
    EstimatorCoupled,
}

/// A `q`-dimensional path on the nodes of a time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePath {
    time_grid: TimeGrid<f64>,
    values: Vec<Vec<f64>>,
    kind: NoiseKind,
    seed: Option<u64>,
}

impl NoisePath {
    pub fn from_values(time_grid: TimeGrid<f64>, values: Vec<Vec<f64>>, kind: NoiseKind) -> Result<Self> {
        if values.len() != time_grid.steps() + 1 {
            return Err(invalid("noise path needs one value per time node"));
        }
        let q = values[0].len();
        if q == 0 || values.iter().any(|v| v.len() != q) {
            return Err(invalid("noise values must share one positive dimension"));
        }
        Ok(Self { time_grid, values, kind, seed: None })
    }

    fn gaussian_walk(time_grid: TimeGrid<f64>, q: usize, seed: u64, stream: u64, kind: NoiseKind) -> Self {
        let mut rng = substream(seed, stream);
        let sd = time_grid.step().sqrt();
        let mut values = Vec::with_capacity(time_grid.steps() + 1);
        let mut w = vec![0.0; q];
        values.push(w.clone());
        for _ in 0..time_grid.steps() {
            for c in w.iter_mut() {
                *c += sd * standard_normal(&mut rng);
            }
            values.push(w.clone());
        }
        Self { time_grid, values, kind, seed: Some(seed) }
    }

    /// Standard Brownian motion sampled at the nodes.
    pub fn brownian(time_grid: TimeGrid<f64>, q: usize, seed: u64, stream: u64) -> Self {
        Self::gaussian_walk(time_grid, q, seed, stream, NoiseKind::Brownian)
    }

    /// Brownian path whose increments drive the white-noise field.
    pub fn white(time_grid: TimeGrid<f64>, q: usize, seed: u64, stream: u64) -> Self {
        Self::gaussian_walk(time_grid, q, seed, stream, NoiseKind::WhiteIncrements)
    }

    pub fn fixed(time_grid: TimeGrid<f64>, z: Vec<f64>) -> Self {
        let values = vec![z; time_grid.steps() + 1];
        Self { time_grid, values, kind: NoiseKind::FixedGaussian, seed: None }
    }

    /// Constant `Z ~ N(0, I)`.
    pub fn fixed_gaussian(time_grid: TimeGrid<f64>, q: usize, seed: u64, stream: u64) -> Self {
        let mut rng = substream(seed, stream);
        let z = (0..q).map(|_| standard_normal(&mut rng)).collect();
        let mut p = Self::fixed(time_grid, z);
        p.seed = Some(seed);
        p
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn time_grid(&self) -> &TimeGrid<f64> {
        &self.time_grid
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    /// The same path sampled every `factor` nodes.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let steps = self.time_grid.steps();
        if factor == 0 || steps % factor != 0 {
            return Err(invalid("coarsening factor must divide the step count"));
        }
        let time_grid = TimeGrid::new(self.time_grid.horizon(), steps / factor)?;
        let values = self.values.iter().step_by(factor).cloned().collect();
        Ok(Self { time_grid, values, kind: self.kind, seed: self.seed })
    }

    /// Same path with every value multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut p = self.clone();
        for v in p.values.iter_mut().flatten() {
            *v *= c;
        }
        p
    }

    /// Coefficient of `div(rho grad tau .)` added over `[t_i, t_{i+1}]`,
    /// i.e. `nu s(t_{i+1})`.
    pub fn increment(&self, i: usize) -> Vec<f64> {
        let nu = self.time_grid.step();
        let next = &self.values[i + 1];
        match self.kind {
            NoiseKind::FixedGaussian => next.iter().map(|z| nu * z).collect(),
            NoiseKind::Brownian => {
                let t = self.time_grid.t(i + 1);
                next.iter().map(|w| nu * w / t).collect()
            }
            NoiseKind::WhiteIncrements => next.iter().zip(&self.values[i]).map(|(a, b)| a - b).collect(),
            NoiseKind::EstimatorCoupled => next.clone(),
        }
    }
}

/// Forcing `(m delta)^(1/2) (theta^i - theta)` at node `i` for the
/// estimator-coupled field; requires `nu = delta` and `I` estimates.
pub fn coupled_forcing_from_estimates(
    traj: &EstimatorTrajectory,
    theta: &[f64],
    m: usize,
    delta: f64,
    time_grid: TimeGrid<f64>,
) -> Result<NoisePath> {
    let steps = time_grid.steps();
    if (time_grid.step() - delta).abs() > 1e-12 * delta {
        return Err(invalid("estimator-coupled forcing needs nu == delta"));
    }
    if traj.len() < steps {
        return Err(Error::TrajectoryTooShort { needed: steps, available: traj.len() });
    }
    let scale = (m as f64 * delta).sqrt();
    let mut values = Vec::with_capacity(steps + 1);
    values.push(vec![0.0; theta.len()]);
    for i in 1..=steps {
        values.push(traj.theta(i).iter().zip(theta).map(|(a, b)| scale * (a - b)).collect());
    }
    NoisePath::from_values(time_grid, values, NoiseKind::EstimatorCoupled)
}

/// Source of `rho(t_i, .)` for the forcing term.
#[derive(Clone, Copy, Debug)]
pub enum DensityProvider<'a> {
    /// OU marginal `N(theta + (mu0 - theta) e^-t, 1/beta + (var0 - 1/beta) e^-2t)`.
    AnalyticOu { theta: f64, mu0: f64, var0: f64, beta: f64 },
    /// Rows of a solved density field on the same grids.
    Field(&'a FieldGrid<f64>),
}

impl DensityProvider<'_> {
    fn at(&self, grid: &Grid1D<f64>, time_grid: &TimeGrid<f64>, i: usize) -> Result<Vec<f64>> {
        match self {
            DensityProvider::AnalyticOu { theta, mu0, var0, beta } => {
                let (m, v) = ou_moments(*theta, *mu0, *var0, *beta, time_grid.t(i));
                Ok(DensityGrid::gaussian(*grid, m, v)?.into_values())
            }
            DensityProvider::Field(f) => {
                f.grid().check_same(grid)?;
                if f.time_grid() != time_grid {
                    return Err(Error::GridMismatch("density field is on a different time grid".into()));
                }
                Ok(f.row(i).to_vec())
            }
        }
    }
}

/// `div(rho grad tau . c)` at the nodes by central differences, zero at the ends.
fn forcing_term(grid: &Grid1D<f64>, rho: &[f64], tau: &TauField, coeff: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let h = grid.spacing();
    let flux: Vec<f64> = (0..n)
        .map(|j| {
            let g = tau.grad_tau(&[grid.x(j)]);
            rho[j] * (0..coeff.len()).map(|k| g[(0, k)] * coeff[k]).sum::<f64>()
        })
        .collect();
    let mut out = vec![0.0; n];
    for j in 1..n - 1 {
        out[j] = (flux[j + 1] - flux[j - 1]) / (2.0 * h);
    }
    out
}

/// Crank-Nicolson solution of the forced linear equation. `drift` is the
/// true potential's field.
pub fn simulate_field(
    rho: DensityProvider<'_>,
    tau: &TauField,
    noise: &NoisePath,
    drift: &DriftField<f64>,
    beta: f64,
    grid: Grid1D<f64>,
) -> Result<FieldGrid<f64>> {
    let time_grid = *noise.time_grid();
    if tau.potential().dim_x() != 1 || noise.dim() != tau.gamma().ncols() {
        return Err(invalid("field simulation is one-dimensional and needs noise of dimension q"));
    }
    if drift.grad.len() != grid.len() {
        return Err(Error::GridMismatch("drift field does not match the grid".into()));
    }
    let op = operator(&grid, &drift.grad, beta);
    let nu = time_grid.step();
    let mut field = FieldGrid::zeros(grid, time_grid);
    let mut v = vec![0.0; grid.len()];
    for i in 0..time_grid.steps() {
        let coeff = noise.increment(i);
        let g = if coeff.iter().all(|c| *c == 0.0) {
            vec![0.0; grid.len()]
        } else {
            forcing_term(&grid, &rho.at(&grid, &time_grid, i + 1)?, tau, &coeff)
        };
        v = cn_step(&op, nu, &v, Some(&g))?;
        field.row_mut(i + 1).copy_from_slice(&v);
    }
    Ok(field)
}

fn midpoint_integral(noise: &NoisePath, t: f64, kernel: impl Fn(f64) -> f64) -> f64 {
    let tg = noise.time_grid();
    let nu = tg.step();
    let mut total = 0.0;
    for i in 0..tg.steps() {
        let (s0, s1) = (tg.t(i), tg.t(i + 1));
        if s0 >= t - 1e-12 * nu {
            break;
        }
        let s1 = s1.min(t);
        let s = 0.5 * (s0 + s1);
        let w = 0.5 * (noise.value(i)[0] + noise.value(i + 1)[0]);
        total += (s1 - s0) * kernel(t - s) * w / s;
    }
    total
}

/// Quadrature of the reference closed form for the stationary unit OU example:
/// `x gamma (2 pi)^-1/2 int [2 - e^-2(t-s)]^-3/2 exp(-x^2 / (2 (2 - e^-2(t-s)))) W(s)/s ds`.
///
/// This kernel convolves with `N(0, 1 - e^-2u)` without the `e^-u`
/// contraction of the OU transition, so it does not solve the forced
/// equation; see [`v1_exact_ou`].
pub fn v1_closed_form_ou(gamma: f64, noise: &NoisePath, t: f64, x: f64) -> f64 {
    let c = x * gamma / (2.0 * std::f64::consts::PI).sqrt();
    c * midpoint_integral(noise, t, |u| {
        let v = 2.0 - (-2.0 * u).exp();
        v.powf(-1.5) * (-x * x / (2.0 * v)).exp()
    })
}

/// Solution of the forced equation in the same setting: `x phi(x)` is an
/// eigenfunction of the OU operator with eigenvalue `-1`, so
/// `V1(t, x) = gamma x phi(x) int e^-(t-s) W(s)/s ds`.
pub fn v1_exact_ou(gamma: f64, noise: &NoisePath, t: f64, x: f64) -> f64 {
    let phi = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    gamma * x * phi * midpoint_integral(noise, t, |u| (-u).exp())
}

/// Amplitude `a_i` of the `gamma x phi(x)` mode under the same Crank-Nicolson
/// rule and end-of-step forcing, so `V1(t_i, x) ~ a_i x phi(x)` up to the
/// spatial error only.
pub fn v1_discrete_mode_ou(gamma: f64, noise: &NoisePath) -> Vec<f64> {
    let tg = noise.time_grid();
    let nu = tg.step();
    let mut a = vec![0.0; tg.steps() + 1];
    for i in 0..tg.steps() {
        let s = noise.value(i + 1)[0] / tg.t(i + 1);
        a[i + 1] = ((1.0 - 0.5 * nu) * a[i] + nu * gamma * s) / (1.0 + 0.5 * nu);
    }
    a
}

/// Evaluate an oracle on the nodes of `grid x time_grid`.
pub fn oracle_field(grid: Grid1D<f64>, tg: TimeGrid<f64>, oracle: impl Fn(f64, f64) -> f64) -> FieldGrid<f64> {
    let rows = (0..=tg.steps())
        .map(|i| {
            let t = tg.t(i);
            let mut row: Vec<f64> = grid.nodes().iter().map(|x| if t > 0.0 { oracle(t, *x) } else { 0.0 }).collect();
            let last = row.len() - 1;
            row[0] = 0.0;
            row[last] = 0.0;
            row
        })
        .collect();
    FieldGrid::from_rows(grid, tg, rows).expect("rows match the grid")
}

/// Values of a field on the nodes with `t in [t_lo, t_hi]` and `|x| <= x_max`.
pub fn window(field: &FieldGrid<f64>, t_lo: f64, t_hi: f64, x_max: f64) -> Vec<f64> {
    let tg = field.time_grid();
    let grid = field.grid();
    let mut out = Vec::new();
    for i in 0..=tg.steps() {
        let t = tg.t(i);
        if t < t_lo - 1e-12 || t > t_hi + 1e-12 {
            continue;
        }
        for j in 0..grid.len() {
            if grid.x(j).abs() <= x_max + 1e-12 {
                out.push(field.at(i, j));
            }
        }
    }
    out
}

/// Draw `Z ~ N(0, I_q)` from an explicit generator.
pub fn gaussian_vector<R: Rng>(rng: &mut R, q: usize) -> Vec<f64> {
    (0..q).map(|_| standard_normal(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::Scheme;
    use crate::potential::{drift_field, BoundPotential, ParametricPotential, Quadratic};
    use crate::stats::relative_l2;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn quad() -> Arc<dyn ParametricPotential> {
        Arc::new(Quadratic::new(1))
    }

    fn stationary(j: usize, steps: usize) -> (Grid1D<f64>, TimeGrid<f64>, TauField, DriftField<f64>) {
        let grid = Grid1D::new(5.0, j).unwrap();
        let tg = TimeGrid::new(0.5, steps).unwrap();
        let gamma = crate::estimators::ou_gamma_squared(1.0, 1.0).sqrt();
        let tau = TauField::new(quad(), vec![0.0], DMatrix::from_element(1, 1, gamma)).unwrap();
        let drift = drift_field(&BoundPotential::new(quad(), vec![0.0]), &grid);
        (grid, tg, tau, drift)
    }

    const PI_OU: DensityProvider<'static> = DensityProvider::AnalyticOu { theta: 0.0, mu0: 0.0, var0: 1.0, beta: 1.0 };

    #[test]
    fn zero_noise_gives_zero_field() {
        let (grid, tg, tau, drift) = stationary(100, 50);
        let noise = NoisePath::fixed(tg, vec![0.0]);
        let f = simulate_field(PI_OU, &tau, &noise, &drift, 1.0, grid).unwrap();
        assert_eq!(f.max_abs(), 0.0);
    }

    #[test]
    fn linear_in_the_noise() {
        let (grid, tg, tau, drift) = stationary(100, 50);
        let w = NoisePath::brownian(tg, 1, 3, 0);
        let a = simulate_field(PI_OU, &tau, &w, &drift, 1.0, grid).unwrap();
        let b = simulate_field(PI_OU, &tau, &w.scaled(2.5), &drift, 1.0, grid).unwrap();
        let scale = b.max_abs();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((2.5 * x - y).abs() <= 1e-13 * scale);
        }
    }

    #[test]
    fn offline_field_factorizes_and_is_odd() {
        let (grid, tg, tau, drift) = stationary(100, 50);
        let rho = DensityProvider::AnalyticOu { theta: 0.0, mu0: 0.0, var0: 1.44, beta: 1.0 };
        let f1 = simulate_field(rho, &tau, &NoisePath::fixed(tg, vec![0.7]), &drift, 1.0, grid).unwrap();
        let f2 = simulate_field(rho, &tau, &NoisePath::fixed(tg, vec![-1.9]), &drift, 1.0, grid).unwrap();
        for (a, b) in f1.values().iter().zip(f2.values()) {
            if a.abs() > 1e-10 {
                assert!(((a / 0.7) / (b / -1.9) - 1.0).abs() < 1e-8);
            }
        }
        for i in 0..=50 {
            for j in 0..=100 {
                assert!((f1.at(i, j) + f1.at(i, 100 - j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn oracle_examples() {
        let tg = TimeGrid::new(0.5, 100).unwrap();
        let w = NoisePath::brownian(tg, 1, 1, 0);
        assert_eq!(v1_closed_form_ou(1.5, &w, 0.4, 0.0), 0.0);
        assert_eq!(v1_closed_form_ou(1.5, &NoisePath::fixed(tg, vec![0.0]), 0.4, 1.0), 0.0);
        for x in [0.3, 1.0, 2.2] {
            assert_eq!(v1_closed_form_ou(1.5, &w, 0.4, -x), -v1_closed_form_ou(1.5, &w, 0.4, x));
            assert_eq!(v1_exact_ou(1.5, &w, 0.4, -x), -v1_exact_ou(1.5, &w, 0.4, x));
        }
    }

    fn mode_error(j: usize, steps: usize, path: &NoisePath) -> f64 {
        let (grid, tg, tau, drift) = stationary(j, steps);
        let w = path.coarsen(path.time_grid().steps() / steps).unwrap();
        let sim = simulate_field(PI_OU, &tau, &w, &drift, 1.0, grid).unwrap();
        let a = v1_discrete_mode_ou(tau.gamma()[(0, 0)], &w);
        let oracle = oracle_field(grid, tg, |t, x| {
            let phi = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
            a[(t / tg.step()).round() as usize] * x * phi
        });
        relative_l2(&window(&sim, 0.1, 0.5, 3.0), &window(&oracle, 0.1, 0.5, 3.0))
    }

    #[test]
    fn simulation_tracks_the_odd_eigenmode() {
        let path = NoisePath::brownian(TimeGrid::new(0.5, 400).unwrap(), 1, 17, 0);
        let coarse = mode_error(200, 100, &path);
        let fine = mode_error(400, 200, &path);
        assert!(fine < 5e-4, "{fine}");
        assert!((3.2..4.8).contains(&(coarse / fine)), "{coarse} {fine}");
    }

    #[test]
    fn eigenmode_oracles_agree_for_smooth_noise() {
        // W(s) = s makes the forcing constant, so the quadrature is exact up to O(nu^2)
        let tg = TimeGrid::new(0.5, 400).unwrap();
        let vals = (0..=400).map(|i| vec![tg.t(i)]).collect();
        let w = NoisePath::from_values(tg, vals, NoiseKind::Brownian).unwrap();
        let a = v1_discrete_mode_ou(1.3, &w);
        let x: f64 = 0.8;
        let phi = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let t = 0.5;
        let closed = 1.3 * x * phi * (1.0 - (-t as f64).exp());
        assert!((v1_exact_ou(1.3, &w, t, x) - closed).abs() < 1e-6);
        assert!((a[400] * x * phi - closed).abs() < 1e-5);
    }

    #[test]
    fn white_noise_variance_is_stable_under_refinement() {
        let x0 = 1.0;
        let var_at = |steps: usize| {
            let (grid, tg, tau, drift) = stationary(100, steps);
            let j0 = grid.nodes().iter().position(|x| (x - x0).abs() < 1e-9).unwrap();
            let vals: Vec<f64> = (0..500)
                .map(|r| {
                    let w = NoisePath::white(tg, 1, 99, r);
                    simulate_field(PI_OU, &tau, &w, &drift, 1.0, grid).unwrap().at(steps, j0)
                })
                .collect();
            crate::stats::variance(&vals)
        };
        let (coarse, fine) = (var_at(25), var_at(100));
        // mode amplitude variance gamma^2 (1 - e^-2T) / 2 times (x0 phi(x0))^2
        let gamma2 = crate::estimators::ou_gamma_squared(1.0, 1.0);
        let phi = (-0.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let expect = gamma2 * (1.0 - (-1.0f64).exp()) / 2.0 * phi * phi;
        for v in [coarse, fine] {
            assert!((v / expect - 1.0).abs() < 0.2, "{v} vs {expect}");
        }
        assert!((fine / coarse - 1.0).abs() < 0.25);
    }

    #[test]
    fn coupled_forcing() {
        let tg = TimeGrid::new(0.5, 50).unwrap();
        let exact = EstimatorTrajectory::constant(&[0.0], 50, Scheme::OnlineCumulative);
        let p = coupled_forcing_from_estimates(&exact, &[0.0], 10, 0.01, tg).unwrap();
        assert!((0..50).all(|i| p.increment(i)[0] == 0.0));

        // theta^k = theta + c / (k delta) (m delta)^-1/2 gives forcing c / (k delta) times nu
        let (m, delta, c) = (10usize, 0.01, 0.3);
        let est = (1..=50).map(|k| vec![c / (k as f64 * delta) / (m as f64 * delta).sqrt()]).collect();
        let traj = EstimatorTrajectory::new(est, Scheme::OnlineCumulative).unwrap();
        let p = coupled_forcing_from_estimates(&traj, &[0.0], m, delta, tg).unwrap();
        for i in 0..50 {
            let k = (i + 1) as f64;
            assert!((p.increment(i)[0] - c / (k * delta)).abs() < 1e-12);
        }
        let short = EstimatorTrajectory::constant(&[0.0], 10, Scheme::OnlineCumulative);
        assert!(coupled_forcing_from_estimates(&short, &[0.0], m, delta, tg).is_err());
        assert!(coupled_forcing_from_estimates(&exact, &[0.0], m, 0.02, tg).is_err());
    }

    #[test]
    fn increments_by_kind() {
        let tg = TimeGrid::new(1.0, 4).unwrap();
        let vals = vec![vec![0.0], vec![1.0], vec![3.0], vec![2.0], vec![2.0]];
        let b = NoisePath::from_values(tg, vals.clone(), NoiseKind::Brownian).unwrap();
        assert!((b.increment(1)[0] - 0.25 * 3.0 / 0.5).abs() < 1e-15);
        let w = NoisePath::from_values(tg, vals, NoiseKind::WhiteIncrements).unwrap();
        assert_eq!(w.increment(1)[0], 2.0);
        let z = NoisePath::fixed(tg, vec![2.0]);
        assert_eq!(z.increment(3)[0], 0.5);
    }
}
