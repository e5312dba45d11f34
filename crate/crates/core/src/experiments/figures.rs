//! The named experiments behind `wgf experiment`.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::bures_wasserstein::{BwSolver, BwTrajectory, GaussianState, LimitNoise};
use crate::error::{Error, Result};
use crate::estimators::{ou_gamma_squared, solve_offline, DriftSchedule};
use crate::grid::{FieldGrid, Grid1D, TimeGrid};
use crate::limit_fields::{
    coupled_forcing_from_estimates, oracle_field, simulate_field, v1_closed_form_ou, v1_discrete_mode_ou,
    v1_exact_ou, window, DensityProvider, NoisePath,
};
use crate::potential::{drift_field, BoundPotential, TauField};
use crate::rng::{derive_seed, Purpose};
use crate::sampler::{ou_moments, Langevin};
use crate::stats::{correlation, ks_standard_normal, relative_l2};

use super::artifacts::ArtifactWriter;
use super::config::{ExperimentId, RunConfig};
use super::prop53::{run_prop53, run_prop53_sweep, Prop53Row};
use super::runs::{gamma, jko_trajectory, limit_field, reference_field, scaled_difference};
use super::svg;

/// Contour node set shared by the field comparisons: `t in [0.1, T]`, `|x| <= 3`.
pub const WINDOW_T_LO: f64 = 0.1;
pub const WINDOW_X_MAX: f64 = 3.0;

fn window_of(field: &FieldGrid<f64>) -> Vec<f64> {
    window(field, WINDOW_T_LO, field.time_grid().horizon(), WINDOW_X_MAX)
}

fn write_rows<T: Serialize>(out: &mut ArtifactWriter, name: &str, header: &str, rows: &[T], line: impl Fn(&T) -> String) -> Result<()> {
    out.write(name, |w| {
        writeln!(w, "{header}")?;
        for r in rows {
            writeln!(w, "{}", line(r))?;
        }
        Ok(())
    })
}

/// Scaled density error and estimator-driven limit field of one replication.
#[derive(Clone, Debug)]
pub struct CoupledFields {
    pub v_hat: FieldGrid<f64>,
    pub v1: FieldGrid<f64>,
    /// L1 distance of the JKO density to the reference at the horizon.
    pub l1_at_horizon: f64,
}

impl CoupledFields {
    pub fn correlation(&self) -> f64 {
        correlation(&window_of(&self.v_hat), &window_of(&self.v1))
    }
}

/// One JKO run with online estimates; the same estimate sequence forces the
/// limit field. Requires `nu == delta`.
pub fn coupled_fields(cfg: &RunConfig, seed: u64, rep: u64) -> Result<CoupledFields> {
    let tg = cfg.time_grid()?;
    let (traj, est) = jko_trajectory(cfg, seed, rep)?;
    let estimates = est
        .trajectory
        .ok_or_else(|| Error::Config("coupled fields need an online estimation scheme".into()))?;
    let rho_ref = reference_field(cfg)?;
    let rho_hat = traj.sample(tg);
    let delta = cfg.jko.delta;
    let m = cfg.estimation.m;
    let v_hat = scaled_difference(&rho_hat, &rho_ref, (m as f64 / delta).sqrt())?;
    let noise = coupled_forcing_from_estimates(&estimates, &cfg.model.theta, m, delta, tg)?;
    let q = cfg.model.theta.len();
    let v1 = limit_field(cfg, &noise, DMatrix::identity(q, q))?;
    let last = tg.steps();
    let l1_at_horizon = rho_hat.density(last)?.l1_distance(&rho_ref.density(last)?)?;
    Ok(CoupledFields { v_hat, v1, l1_at_horizon })
}

fn fig1(cfg: &RunConfig, seed: u64, out: &mut ArtifactWriter) -> Result<()> {
    let tg = cfg.time_grid()?;
    let (traj, _) = jko_trajectory(cfg, seed, 0)?;
    let rho_hat = traj.sample(tg);
    let rho = reference_field(cfg)?;
    out.write("density_jko.csv", |w| rho_hat.write_csv(w))?;
    out.write("density_reference.csv", |w| rho.write_csv(w))?;
    let last = tg.steps();
    out.metric("l1_at_horizon", rho_hat.density(last)?.l1_distance(&rho.density(last)?)?);
    out.metric("w2_sum", traj.w2_sum());
    out.metric("max_free_energy_increase", traj.max_free_energy_increase());
    if cfg.experiment.svg {
        let grid = cfg.grid()?;
        let pts = |f: &FieldGrid<f64>| grid.nodes().into_iter().zip(f.row(last).iter().copied()).collect::<Vec<_>>();
        let plot = svg::line_plot("density at the horizon", &[("JKO", pts(&rho_hat)), ("reference", pts(&rho))]);
        out.write("fig1.svg", |w| w.write_all(plot.as_bytes()))?;
    }
    Ok(())
}

fn coupled_metrics(cfg: &RunConfig, seed: u64, out: &mut ArtifactWriter) -> Result<CoupledFields> {
    let reps = cfg.experiment.replications.unwrap_or(1).max(1);
    let first = coupled_fields(cfg, seed, 0)?;
    let mut corr = vec![first.correlation()];
    let rest: Vec<f64> = (1..reps as u64)
        .into_par_iter()
        .map(|r| coupled_fields(cfg, seed, r).map(|f| f.correlation()))
        .collect::<Result<_>>()?;
    corr.extend(rest);
    out.metric("replications", reps as f64);
    let last = first.v_hat.time_grid().steps();
    out.metric("correlation_rep0", corr[0]);
    out.metric("fraction_correlation_ge_0.8", corr.iter().filter(|c| **c >= 0.8).count() as f64 / corr.len() as f64);
    out.metric("max_abs_v_hat_at_horizon", first.v_hat.row(last).iter().fold(0.0, |a: f64, v| a.max(v.abs())));
    out.metric("l1_at_horizon", first.l1_at_horizon);
    write_rows(out, "correlations.csv", "replication,correlation", &corr.iter().enumerate().collect::<Vec<_>>(), |(r, c)| {
        format!("{r},{c:.17e}")
    })?;
    Ok(first)
}

fn fig2(cfg: &RunConfig, seed: u64, out: &mut ArtifactWriter) -> Result<()> {
    let f = coupled_metrics(cfg, seed, out)?;
    let tg = *f.v_hat.time_grid();
    let grid = *f.v_hat.grid();
    let stride = (tg.steps() / 5).max(1);
    out.write("slices.csv", |w| {
        writeln!(w, "t,x,v_hat,v1")?;
        for i in (stride..=tg.steps()).step_by(stride) {
            for j in 0..grid.len() {
                writeln!(w, "{:.17e},{:.17e},{:.17e},{:.17e}", tg.t(i), grid.x(j), f.v_hat.at(i, j), f.v1.at(i, j))?;
            }
        }
        Ok(())
    })?;
    if cfg.experiment.svg {
        let last = tg.steps();
        let pts = |g: &FieldGrid<f64>| grid.nodes().into_iter().zip(g.row(last).iter().copied()).collect::<Vec<_>>();
        let plot = svg::line_plot("scaled error at the horizon", &[("V hat", pts(&f.v_hat)), ("V1", pts(&f.v1))]);
        out.write("fig2.svg", |w| w.write_all(plot.as_bytes()))?;
    }
    Ok(())
}

fn fig3(cfg: &RunConfig, seed: u64, out: &mut ArtifactWriter) -> Result<()> {
    let f = coupled_metrics(cfg, seed, out)?;
    out.write("v_hat.csv", |w| f.v_hat.write_csv(w))?;
    out.write("v1.csv", |w| f.v1.write_csv(w))?;
    if cfg.experiment.svg {
        let a = svg::heatmap("V hat", &f.v_hat);
        let b = svg::heatmap("V1", &f.v1);
        out.write("fig3_v_hat.svg", |w| w.write_all(a.as_bytes()))?;
        out.write("fig3_v1.svg", |w| w.write_all(b.as_bytes()))?;
    }
    Ok(())
}

const PROP53_HEADER: &str = "delta,n,variance,exact,limit";

fn prop53_line(r: &Prop53Row) -> String {
    format!("{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}", r.delta, r.n, r.variance, r.exact, r.limit)
}

fn prop53_variance(cfg: &RunConfig, seed: u64, out: &mut ArtifactWriter) -> Result<()> {
    let p = &cfg.experiment.prop53;
    let r = cfg.experiment.replications.unwrap_or(10_000);
    out.metric("replications", r as f64);
    let rows = run_prop53(p.t, &p.n_list, r, p.refinement, seed);
    write_rows(out, "prop53_variance.csv", PROP53_HEADER, &rows, prop53_line)?;
    for r in &rows {
        out.metric(&format!("variance_n{}", r.n), r.variance);
        out.metric(&format!("relative_error_n{}", r.n), r.variance / r.limit - 1.0);
    }
    Ok(())
}

fn prop53_sweep(cfg: &RunConfig, seed: u64, out: &mut ArtifactWriter) -> Result<()> {
    let p = &cfg.experiment.prop53;
    let r = cfg.experiment.replications.unwrap_or(400);
    out.metric("replications", r as f64);
    let rows = run_prop53_sweep(p.t, p.sweep_unit, p.sweep_max, r, p.refinement, seed);
    write_rows(out, "prop53_sweep.csv", PROP53_HEADER, &rows, prop53_line)?;
    let spread = rows.iter().map(|r| (r.exact / r.limit - 1.0).abs()).fold(0.0, f64::max);
    out.metric("max_relative_deviation_exact", spread);
    if cfg.experiment.svg {
        let mc: Vec<_> = rows.iter().map(|r| (r.delta, r.variance)).collect();
        let ex: Vec<_> = rows.iter().map(|r| (r.delta, r.exact)).collect();
        let lim: Vec<_> = rows.iter().map(|r| (r.delta, r.limit)).collect();
        let plot = svg::line_plot("variance against delta", &[("Monte Carlo", mc), ("exact", ex), ("limit", lim)]);
        out.write("prop53_sweep.svg", |w| w.write_all(plot.as_bytes()))?;
    }
    Ok(())
}

/// Standardized offline errors `sqrt(n) (theta_hat - theta) / gamma` for
/// replications `0..r` of the one-parameter OU model.
pub fn clt_offline_sample(cfg: &RunConfig, seed: u64, r: usize) -> Result<Vec<f64>> {
    let potential = cfg.potential()?;
    if potential.dim_theta() != 1 {
        return Err(Error::Config("clt_offline needs a one-parameter model".into()));
    }
    let scale = match &cfg.limit.gamma {
        Some(g) => g[0][0],
        None => gamma(cfg)?[(0, 0)],
    };
    let n = cfg.estimation.n;
    let lang = Langevin::new(potential.clone(), cfg.model.theta.clone(), cfg.model.beta, cfg.estimation.eta)
        .with_initial(cfg.estimation.observations.clone());
    let obs_seed = derive_seed(seed, Purpose::Observations);
    (0..r as u64)
        .into_par_iter()
        .map(|rep| {
            let path = lang.path(n, obs_seed, rep << 32)?;
            let fit = solve_offline(potential.as_ref(), &path, None)?;
            Ok((n as f64).sqrt() * (fit.theta_hat[0] - cfg.model.theta[0]) / scale)
        })
        .collect()
}

fn clt_offline(cfg: &RunConfig, seed: u64, out: &mut ArtifactWriter) -> Result<()> {
    let r = cfg.experiment.replications.unwrap_or(2000);
    out.metric("replications", r as f64);
    let z = clt_offline_sample(cfg, seed, r)?;
    let ks = ks_standard_normal(&z);
    write_rows(out, "clt_offline.csv", "replication,z", &z.iter().enumerate().collect::<Vec<_>>(), |(r, v)| {
        format!("{r},{v:.17e}")
    })?;
    out.metric("ks_statistic", ks.statistic);
    out.metric("ks_p_value", ks.p_value);
    out.metric("gamma_squared_closed_form", ou_gamma_squared(cfg.estimation.eta, cfg.model.beta));
    Ok(())
}

/// Relative L2 errors of the simulated limit field against three oracles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OracleRow {
    pub intervals: usize,
    pub steps: usize,
    pub closed_form: f64,
    pub exact: f64,
    pub discrete_mode: f64,
}

/// Stationary OU limit field at each `(J, I)` level, all levels driven by
/// one Brownian path drawn on the finest time grid. The closed-form and
/// discrete-mode oracles use the level's own path; the eigenfunction
/// solution integrates the finest path.
pub fn oracle_v1_table(cfg: &RunConfig, levels: &[[usize; 2]], seed: u64) -> Result<Vec<OracleRow>> {
    let potential = cfg.potential()?;
    let theta = cfg.model.theta.clone();
    let g = gamma(cfg)?[(0, 0)];
    let tau = TauField::new(potential.clone(), theta.clone(), DMatrix::from_element(1, 1, g))?;
    let beta = cfg.model.beta;
    if (theta[0]).abs() > 0.0 || (beta - 1.0).abs() > 0.0 {
        return Err(Error::Config("oracle_v1 needs theta = 0 and beta = 1".into()));
    }
    let rho = DensityProvider::AnalyticOu { theta: 0.0, mu0: 0.0, var0: 1.0, beta: 1.0 };
    let finest = levels.iter().map(|l| l[1]).max().ok_or_else(|| Error::Config("no oracle levels".into()))?;
    let horizon = cfg.time.horizon;
    let path = NoisePath::brownian(TimeGrid::new(horizon, finest)?, 1, derive_seed(seed, Purpose::Noise), 0);
    levels
        .iter()
        .map(|&[j, i]| {
            if finest % i != 0 {
                return Err(Error::Config(format!("oracle level I = {i} does not divide {finest}")));
            }
            let grid = Grid1D::new(cfg.grid.half_width, j)?;
            let w = path.coarsen(finest / i)?;
            let tg = *w.time_grid();
            let drift = drift_field(&BoundPotential::new(potential.clone(), theta.clone()), &grid);
            let sim = simulate_field(rho, &tau, &w, &drift, beta, grid)?;
            let a = v1_discrete_mode_ou(g, &w);
            let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let err = |oracle: FieldGrid<f64>| relative_l2(&window_of(&sim), &window_of(&oracle));
            Ok(OracleRow {
                intervals: j,
                steps: i,
                closed_form: err(oracle_field(grid, tg, |t, x| v1_closed_form_ou(g, &w, t, x))),
                exact: err(oracle_field(grid, tg, |t, x| v1_exact_ou(g, &path, t, x))),
                discrete_mode: err(oracle_field(grid, tg, |t, x| a[(t / tg.step()).round() as usize] * x * phi(x))),
            })
        })
        .collect()
}

fn oracle_v1(cfg: &RunConfig, seed: u64, out: &mut ArtifactWriter) -> Result<()> {
    let rows = oracle_v1_table(cfg, &cfg.experiment.oracle_levels, seed)?;
    write_rows(out, "oracle_v1.csv", "intervals,steps,closed_form,exact,discrete_mode", &rows, |r| {
        format!("{},{},{:.17e},{:.17e},{:.17e}", r.intervals, r.steps, r.closed_form, r.exact, r.discrete_mode)
    })?;
    for r in &rows {
        let tag = format!("J{}_I{}", r.intervals, r.steps);
        out.metric(&format!("rel_l2_closed_form_{tag}"), r.closed_form);
        out.metric(&format!("rel_l2_exact_{tag}"), r.exact);
        out.metric(&format!("rel_l2_discrete_mode_{tag}"), r.discrete_mode);
    }
    Ok(())
}

/// Errors of the discrete BW-JKO flow against the fine ODE, per outer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BwRow {
    pub delta: f64,
    pub mu_error: f64,
    pub sigma_error: f64,
}

fn state_at(traj: &BwTrajectory, t: f64) -> GaussianState {
    let i = ((t / traj.dt).round() as usize).min(traj.states.len() - 1);
    traj.states[i].clone()
}

/// `max_t |mu_delta - mu|`, `max_t ||Sigma_delta - Sigma||_F` over the horizon.
pub fn bw_discretization(cfg: &RunConfig, deltas: &[f64]) -> Result<Vec<BwRow>> {
    let solver = BwSolver::with_order(cfg.model.beta, cfg.bw.dt, cfg.bw.quadrature_order)?;
    let potential = cfg.potential()?;
    let s0 = cfg.bw_state0()?;
    let drift = BoundPotential::new(potential.clone(), cfg.model.theta.clone());
    let reference = solver.ode(&drift, &s0, cfg.time.horizon)?;
    let schedule = DriftSchedule::fixed(potential, cfg.model.theta.clone());
    deltas
        .iter()
        .map(|&delta| {
            let traj = solver.jko_run(&schedule, &s0, delta, cfg.time.horizon)?;
            let (mu_error, sigma_error) = traj.max_error(|t| state_at(&reference, t));
            Ok(BwRow { delta, mu_error, sigma_error })
        })
        .collect()
}

/// `|sqrt(n)(p^n_T - p_T) - V_T|` summed over mean and covariance entries,
/// with the perturbed flow driven by `theta + gamma 1 / sqrt(n)`.
pub fn bw_perturbation_gap(cfg: &RunConfig, n: f64) -> Result<f64> {
    let solver = BwSolver::with_order(cfg.model.beta, cfg.bw.dt, cfg.bw.quadrature_order)?;
    let potential = cfg.potential()?;
    let g = gamma(cfg)?;
    let q = g.ncols();
    let tau = TauField::new(potential.clone(), cfg.model.theta.clone(), g.clone())?;
    let s0 = cfg.bw_state0()?;
    let horizon = cfg.time.horizon;
    let lim = solver.limit(&tau, &s0, &LimitNoise::Fixed(vec![1.0; q]), horizon)?;
    let base = solver.ode(&BoundPotential::new(potential.clone(), cfg.model.theta.clone()), &s0, horizon)?;
    let shift = &g * nalgebra::DVector::from_element(q, 1.0 / n.sqrt());
    let theta_n: Vec<f64> = cfg.model.theta.iter().zip(shift.iter()).map(|(a, b)| a + b).collect();
    let pert = solver.ode(&BoundPotential::new(potential, theta_n), &s0, horizon)?;
    let v = lim.limits.last().expect("limit trajectory holds V_0");
    let (a, b) = (pert.last(), base.last());
    let dmu = (&a.mu - &b.mu) * n.sqrt() - &v.v_mu;
    let dsig = (&a.sigma - &b.sigma) * n.sqrt() - &v.v_sigma;
    Ok(dmu.abs().sum() + dsig.abs().sum())
}

/// Largest deviation of the quadratic BW flow from the exact OU moments.
pub fn bw_ou_moment_error(cfg: &RunConfig) -> Result<f64> {
    let solver = BwSolver::with_order(cfg.model.beta, cfg.bw.dt, cfg.bw.quadrature_order)?;
    let s0 = cfg.bw_state0()?;
    if s0.dim() != 1 || cfg.potential()?.quadratic_matrix().is_none() {
        return Err(Error::Config("OU moment check needs the one-dimensional quadratic model".into()));
    }
    let theta = cfg.model.theta[0];
    let traj = solver.ode(&BoundPotential::new(cfg.potential()?, cfg.model.theta.clone()), &s0, cfg.time.horizon)?;
    let (m0, v0) = (s0.mu[0], s0.sigma[(0, 0)]);
    let (em, es) = traj.max_error(|t| {
        let (m, v) = ou_moments(theta, m0, v0, cfg.model.beta, t);
        GaussianState::scalar(m, v).expect("OU variance is positive")
    });
    Ok(em.max(es))
}

fn bw_convergence(cfg: &RunConfig, _seed: u64, out: &mut ArtifactWriter) -> Result<()> {
    let rows = bw_discretization(cfg, &cfg.experiment.bw_deltas)?;
    write_rows(out, "bw_convergence.csv", "delta,mu_error,sigma_error", &rows, |r| {
        format!("{:.17e},{:.17e},{:.17e}", r.delta, r.mu_error, r.sigma_error)
    })?;
    // a component that starts at equilibrium has zero error and no ratio
    for w in rows.windows(2) {
        if w[1].mu_error > 0.0 {
            out.metric(&format!("mu_ratio_{}_{}", w[0].delta, w[1].delta), w[0].mu_error / w[1].mu_error);
        }
        if w[1].sigma_error > 0.0 {
            out.metric(&format!("sigma_ratio_{}_{}", w[0].delta, w[1].delta), w[0].sigma_error / w[1].sigma_error);
        }
    }
    if let Ok(e) = bw_ou_moment_error(cfg) {
        out.metric("ode_vs_ou_moments", e);
    }
    for n in [1e4, 1e6] {
        out.metric(&format!("perturbation_gap_n{n:e}"), bw_perturbation_gap(cfg, n)?);
    }
    Ok(())
}

/// Dispatch on the experiment id; nothing is written when no id is set.
pub fn run_experiment(cfg: &RunConfig, seed: u64, out: &mut ArtifactWriter) -> Result<()> {
    let Some(id) = cfg.experiment.id else { return Ok(()) };
    match id {
        ExperimentId::Fig1Density => fig1(cfg, seed, out),
        ExperimentId::Fig2Slice => fig2(cfg, seed, out),
        ExperimentId::Fig3Contour => fig3(cfg, seed, out),
        ExperimentId::Prop53Variance => prop53_variance(cfg, seed, out),
        ExperimentId::Prop53Sweep => prop53_sweep(cfg, seed, out),
        ExperimentId::CltOffline => clt_offline(cfg, seed, out),
        ExperimentId::OracleV1 => oracle_v1(cfg, seed, out),
        ExperimentId::BwConvergence => bw_convergence(cfg, seed, out),
    }
}
