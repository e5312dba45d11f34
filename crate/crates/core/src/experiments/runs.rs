//! Building blocks shared by the subcommands and the figure experiments.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::bures_wasserstein::{BwSolver, LimitNoise, LimitSystem};
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_gamma, online_cumulative, ou_gamma_squared, per_batch, sequential, solve_offline, DriftSchedule,
    EstimatorTrajectory, Scheme, ThetaEstimate,
};
use crate::fokker_planck::{cn_solve_schedule, CnOptions};
use crate::grid::{DensityGrid, FieldGrid, Grid1D, TimeGrid};
use crate::jko::{self, outer_steps, JkoTrajectory};
use crate::limit_fields::{simulate_field, DensityProvider, NoiseKind, NoisePath};
use crate::potential::{drift_field, BoundPotential, ParametricPotential, TauField};
use crate::rng::{derive_seed, Purpose};
use crate::sampler::{ou_moments, Langevin};

use super::artifacts::ArtifactWriter;
use super::config::{DensitySource, EstimationScheme, RunConfig};

/// Drift source of a run plus whatever was estimated on the way.
#[derive(Clone, Debug)]
pub struct Estimated {
    pub schedule: DriftSchedule,
    pub trajectory: Option<EstimatorTrajectory>,
    pub offline: Option<ThetaEstimate>,
}

fn sampler(cfg: &RunConfig, potential: Arc<dyn ParametricPotential>) -> Langevin {
    Langevin::new(potential, cfg.model.theta.clone(), cfg.model.beta, cfg.estimation.eta)
        .with_initial(cfg.estimation.observations.clone())
}

/// Observations and estimates for `steps` outer steps of replication `rep`.
pub fn estimate(cfg: &RunConfig, steps: usize, seed: u64, rep: u64) -> Result<Estimated> {
    let potential = cfg.potential()?;
    let obs_seed = derive_seed(seed, Purpose::Observations);
    let lang = sampler(cfg, potential.clone());
    let est = &cfg.estimation;
    let from_traj = |traj: EstimatorTrajectory| Estimated {
        schedule: DriftSchedule::from_trajectory(potential.clone(), traj.clone()),
        trajectory: Some(traj),
        offline: None,
    };
    Ok(match est.scheme {
        EstimationScheme::TrueParameter => Estimated {
            schedule: DriftSchedule::fixed(potential.clone(), cfg.model.theta.clone()),
            trajectory: None,
            offline: None,
        },
        EstimationScheme::Offline => {
            let path = lang.path(est.n, obs_seed, rep << 32)?;
            let fit = solve_offline(potential.as_ref(), &path, None)?;
            let fit = match estimate_gamma(potential.as_ref(), &fit.theta_hat, &path, est.lag_cutoff) {
                Ok(g) => fit.with_gamma(g)?,
                Err(e) if e.is_numerical() => fit,
                Err(e) => return Err(e),
            };
            Estimated {
                schedule: DriftSchedule::fixed(potential.clone(), fit.theta_hat.clone()),
                trajectory: None,
                offline: Some(fit),
            }
        }
        EstimationScheme::OnlineCumulative => {
            from_traj(online_cumulative(potential.as_ref(), &lang.batches(steps, est.m, obs_seed, rep)?)?)
        }
        EstimationScheme::PerBatch => from_traj(per_batch(potential.as_ref(), &lang.batches(steps, est.m, obs_seed, rep)?)?),
        EstimationScheme::AveragedPsi => {
            let traj = per_batch(potential.as_ref(), &lang.batches(steps, est.m, obs_seed, rep)?)?;
            from_traj(EstimatorTrajectory::new(traj.estimates().to_vec(), Scheme::AveragedPsi)?)
        }
        EstimationScheme::Sequential => {
            from_traj(sequential(potential.as_ref(), &lang.path(steps.max(1), obs_seed, rep << 32)?)?)
        }
    })
}

/// JKO trajectory to `time.horizon` under the configured drift source.
pub fn jko_trajectory(cfg: &RunConfig, seed: u64, rep: u64) -> Result<(JkoTrajectory<f64>, Estimated)> {
    let jc = cfg.jko_config()?;
    let steps = outer_steps(cfg.time.horizon, jc.delta);
    let est = estimate(cfg, steps, seed, rep)?;
    let traj = jko::run(&cfg.rho0()?, &est.schedule, &jc, cfg.time.horizon)?;
    Ok((traj, est))
}

/// OU marginals `rho(t_i, .)` on the grids; quadratic one-dimensional models only.
pub fn analytic_ou_field(cfg: &RunConfig, grid: Grid1D<f64>, tg: TimeGrid<f64>) -> Result<FieldGrid<f64>> {
    let theta = ou_theta(cfg)?;
    let rows = (0..=tg.steps())
        .map(|i| {
            let (m, v) = ou_moments(theta, cfg.initial.mean, cfg.initial.var, cfg.model.beta, tg.t(i));
            DensityGrid::gaussian(grid, m, v).map(DensityGrid::into_values)
        })
        .collect::<Result<Vec<_>>>()?;
    FieldGrid::from_rows(grid, tg, rows)
}

fn ou_theta(cfg: &RunConfig) -> Result<f64> {
    let pot = cfg.potential()?;
    match pot.quadratic_matrix() {
        Some(a) if a.nrows() == 1 && (a[(0, 0)] - 1.0).abs() < 1e-15 => Ok(cfg.model.theta[0]),
        _ => Err(Error::Config("analytic OU densities need the one-dimensional unit quadratic potential".into())),
    }
}

/// Crank-Nicolson densities with the true parameter.
pub fn true_fp_field(cfg: &RunConfig) -> Result<FieldGrid<f64>> {
    let schedule = DriftSchedule::fixed(cfg.potential()?, cfg.model.theta.clone());
    cn_solve_schedule(
        &cfg.rho0()?,
        &schedule,
        cfg.model.beta,
        cfg.time_grid()?,
        cfg.jko.delta,
        cfg.jko.interpolation,
        CnOptions { renormalize: cfg.fp.renormalize },
    )
}

/// Reference densities per `limit.density`.
pub fn reference_field(cfg: &RunConfig) -> Result<FieldGrid<f64>> {
    match cfg.limit.density {
        DensitySource::Analytic => analytic_ou_field(cfg, cfg.grid()?, cfg.time_grid()?),
        DensitySource::Fp => true_fp_field(cfg),
    }
}

/// `scale (rho_hat - rho_ref)` nodewise.
pub fn scaled_difference(rho_hat: &FieldGrid<f64>, rho_ref: &FieldGrid<f64>, scale: f64) -> Result<FieldGrid<f64>> {
    rho_hat.grid().check_same(rho_ref.grid())?;
    if rho_hat.time_grid() != rho_ref.time_grid() {
        return Err(Error::GridMismatch("fields are on different time grids".into()));
    }
    let rows = rho_hat
        .rows()
        .zip(rho_ref.rows())
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| scale * (x - y)).collect())
        .collect();
    FieldGrid::from_rows(*rho_hat.grid(), *rho_hat.time_grid(), rows)
}

/// `gamma_theta`: configured, else the OU closed form at the model's `eta`, `beta`.
pub fn gamma(cfg: &RunConfig) -> Result<DMatrix<f64>> {
    if let Some(g) = &cfg.limit.gamma {
        let q = g.len();
        return Ok(DMatrix::from_fn(q, q, |i, j| g[i][j]));
    }
    ou_theta(cfg)?;
    Ok(DMatrix::from_element(1, 1, ou_gamma_squared(cfg.estimation.eta, cfg.model.beta).sqrt()))
}

/// Noise path for `limit.noise` on the configured time grid.
pub fn noise_path(cfg: &RunConfig, seed: u64, rep: u64) -> Result<NoisePath> {
    let tg = cfg.time_grid()?;
    let q = cfg.potential()?.dim_theta();
    let noise_seed = derive_seed(seed, Purpose::Noise);
    Ok(match cfg.limit.noise {
        NoiseKind::Brownian => NoisePath::brownian(tg, q, noise_seed, rep),
        NoiseKind::WhiteIncrements => NoisePath::white(tg, q, noise_seed, rep),
        NoiseKind::FixedGaussian => match &cfg.limit.z {
            Some(z) if z.len() == q => NoisePath::fixed(tg, z.clone()),
            Some(_) => return Err(Error::Config("limit.z must have length q".into())),
            None => NoisePath::fixed_gaussian(tg, q, noise_seed, rep),
        },
        NoiseKind::EstimatorCoupled => {
            return Err(Error::Config("estimator_coupled noise is only available inside fig2/fig3 experiments".into()))
        }
    })
}

/// Limit field driven by `noise` with `tau` built from `gamma`.
pub fn limit_field(cfg: &RunConfig, noise: &NoisePath, gamma: DMatrix<f64>) -> Result<FieldGrid<f64>> {
    let potential = cfg.potential()?;
    let grid = cfg.grid()?;
    let tau = TauField::new(potential.clone(), cfg.model.theta.clone(), gamma)?;
    let drift = drift_field(&BoundPotential::new(potential, cfg.model.theta.clone()), &grid);
    let fp;
    let rho = match cfg.limit.density {
        DensitySource::Analytic => {
            let theta = ou_theta(cfg)?;
            DensityProvider::AnalyticOu { theta, mu0: cfg.initial.mean, var0: cfg.initial.var, beta: cfg.model.beta }
        }
        DensitySource::Fp => {
            fp = true_fp_field(cfg)?;
            DensityProvider::Field(&fp)
        }
    };
    simulate_field(rho, &tau, noise, &drift, cfg.model.beta, grid)
}

pub fn run_jko(cfg: &RunConfig, seed: u64, out: &mut ArtifactWriter) -> Result<()> {
    let (traj, est) = jko_trajectory(cfg, seed, 0)?;
    out.write("jko_trajectory.csv", |w| traj.write_csv(w))?;
    out.write_json("jko_diagnostics.json", &traj.diagnostics_json())?;
    write_estimates(&est, out)?;
    out.metric("steps", traj.steps() as f64);
    out.metric("w2_sum", traj.w2_sum());
    out.metric("max_free_energy_increase", traj.max_free_energy_increase());
    Ok(())
}

fn write_estimates(est: &Estimated, out: &mut ArtifactWriter) -> Result<()> {
    if let Some(t) = &est.trajectory {
        out.write("theta_trajectory.csv", |w| t.write_csv(w))?;
    }
    if let Some(e) = &est.offline {
        out.write_json("theta_estimate.json", &estimate_json(e))?;
    }
    Ok(())
}

fn estimate_json(e: &ThetaEstimate) -> serde_json::Value {
    let gamma = e.gamma_hat.as_ref().map(|g| {
        (0..g.nrows()).map(|i| (0..g.ncols()).map(|j| g[(i, j)]).collect::<Vec<_>>()).collect::<Vec<_>>()
    });
    serde_json::json!({
        "theta_hat": e.theta_hat,
        "n_used": e.n_used,
        "gamma_hat": gamma,
        "scheme": e.scheme,
    })
}

pub fn run_fp(cfg: &RunConfig, seed: u64, out: &mut ArtifactWriter) -> Result<()> {
    let tg = cfg.time_grid()?;
    let steps = crate::fokker_planck::step_index(cfg.jko.interpolation, cfg.time.horizon - 0.5 * tg.step(), cfg.jko.delta);
    let est = estimate(cfg, steps, seed, 0)?;
    let field = cn_solve_schedule(
        &cfg.rho0()?,
        &est.schedule,
        cfg.model.beta,
        tg,
        cfg.jko.delta,
        cfg.jko.interpolation,
        CnOptions { renormalize: cfg.fp.renormalize },
    )?;
    out.write("fp_field.csv", |w| field.write_csv(w))?;
    write_estimates(&est, out)?;
    if let Ok(reference) = analytic_ou_field(cfg, cfg.grid()?, tg) {
        let last = tg.steps();
        let err = field.row(last).iter().zip(reference.row(last)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        out.metric("linf_error_vs_ou_at_horizon", err);
    }
    Ok(())
}

pub fn run_spde(cfg: &RunConfig, seed: u64, out: &mut ArtifactWriter) -> Result<()> {
    let noise = noise_path(cfg, seed, 0)?;
    let field = limit_field(cfg, &noise, gamma(cfg)?)?;
    out.write("limit_field.csv", |w| field.write_csv(w))?;
    out.write("limit_field_long.csv", |w| field.write_long_csv(w))?;
    out.metric("max_abs", field.max_abs());
    Ok(())
}

pub fn run_bw(cfg: &RunConfig, seed: u64, out: &mut ArtifactWriter) -> Result<()> {
    let solver = BwSolver::with_order(cfg.model.beta, cfg.bw.dt, cfg.bw.quadrature_order)?;
    let potential = cfg.potential()?;
    let s0 = cfg.bw_state0()?;
    let drift = BoundPotential::new(potential.clone(), cfg.model.theta.clone());
    let ode = solver.ode(&drift, &s0, cfg.time.horizon)?;
    out.write("bw_ode.csv", |w| ode.write_csv(w))?;
    let jko = solver.jko_run(&DriftSchedule::fixed(potential.clone(), cfg.model.theta.clone()), &s0, cfg.bw.delta, cfg.time.horizon)?;
    out.write("bw_jko.csv", |w| jko.write_csv(w))?;
    let tau = TauField::new(potential, cfg.model.theta.clone(), gamma(cfg)?)?;
    let q = tau.gamma().ncols();
    let limit = match cfg.bw.system {
        LimitSystem::Ode => {
            let z = match &cfg.limit.z {
                Some(z) => z.clone(),
                None => NoisePath::fixed_gaussian(TimeGrid::new(1.0, 1)?, q, derive_seed(seed, Purpose::Noise), 0)
                    .value(0)
                    .to_vec(),
            };
            solver.limit(&tau, &s0, &LimitNoise::Fixed(z), cfg.time.horizon)?
        }
        LimitSystem::Sde => {
            let steps = (cfg.time.horizon / cfg.bw.dt).round().max(1.0) as usize;
            let w = NoisePath::brownian(TimeGrid::new(cfg.time.horizon, steps)?, q, derive_seed(seed, Purpose::Noise), 0);
            solver.limit(&tau, &s0, &LimitNoise::Brownian(&w), cfg.time.horizon)?
        }
    };
    out.write("bw_limit.csv", |w| limit.write_csv(w))?;
    let last = |t: &crate::bures_wasserstein::BwTrajectory| t.last().clone();
    out.metric("jko_vs_ode_mu_gap", (&last(&jko).mu - &last(&ode).mu).norm());
    Ok(())
}

pub fn run_estimate(cfg: &RunConfig, seed: u64, out: &mut ArtifactWriter) -> Result<()> {
    let steps = outer_steps(cfg.time.horizon, cfg.jko.delta);
    let est = estimate(cfg, steps, seed, 0)?;
    write_estimates(&est, out)?;
    if let Some(e) = &est.offline {
        for (k, v) in e.theta_hat.iter().enumerate() {
            out.metric(&format!("theta_hat_{}", k + 1), *v);
        }
    }
    if let Some(t) = &est.trajectory {
        for (k, v) in t.theta(t.len()).iter().enumerate() {
            out.metric(&format!("theta_final_{}", k + 1), *v);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_difference_examples() {
        let cfg = RunConfig::default();
        let f = analytic_ou_field(&cfg, cfg.grid().unwrap(), cfg.time_grid().unwrap()).unwrap();
        assert_eq!(scaled_difference(&f, &f, 31.6).unwrap().max_abs(), 0.0);
        let g = f.map(|v| v * 1.1);
        assert_eq!(scaled_difference(&g, &f, 0.0).unwrap().max_abs(), 0.0);
        let other = FieldGrid::zeros(Grid1D::new(4.0, 200).unwrap(), cfg.time_grid().unwrap());
        assert!(matches!(scaled_difference(&f, &other, 1.0), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn estimation_schemes_produce_schedules() {
        let mut cfg = RunConfig::default();
        for scheme in [
            EstimationScheme::TrueParameter,
            EstimationScheme::Offline,
            EstimationScheme::OnlineCumulative,
            EstimationScheme::PerBatch,
            EstimationScheme::AveragedPsi,
            EstimationScheme::Sequential,
        ] {
            cfg.estimation.scheme = scheme;
            let est = estimate(&cfg, 5, 3, 0).unwrap();
            assert!(est.schedule.require(5).is_ok(), "{scheme:?}");
        }
    }

    #[test]
    fn closed_form_gamma_for_ou() {
        let cfg = RunConfig::default();
        assert!((gamma(&cfg).unwrap()[(0, 0)] - 1.471_04).abs() < 1e-4);
    }
}
