//! The run configuration document: one TOML or JSON file with a section per
//! module. Unknown keys are rejected.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bures_wasserstein::{GaussianState, LimitSystem};
use crate::error::{Error, Result};
use crate::grid::{DensityGrid, Grid1D, Interpolation, TimeGrid};
use crate::jko::{CouplingMethod, InnerConfig, JkoConfig, PushInterpolation, StepSchedule};
use crate::limit_fields::NoiseKind;
use crate::potential::{ParametricPotential, PotentialSpec};
use crate::sampler::InitialLaw;
use crate::transport::BandPolicy;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub time: TimeConfig,
    pub initial: InitialDensity,
    pub jko: JkoSection,
    pub fp: FpSection,
    pub estimation: EstimationConfig,
    pub limit: LimitConfig,
    pub bw: BwConfig,
    pub experiment: ExperimentSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub potential: PotentialSpec,
    pub theta: Vec<f64>,
    pub beta: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { potential: PotentialSpec::default(), theta: vec![0.0], beta: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub half_width: f64,
    pub intervals: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { half_width: 5.0, intervals: 200 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    pub horizon: f64,
    pub steps: usize,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self { horizon: 0.5, steps: 50 }
    }
}

/// One-dimensional Gaussian `rho^0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialDensity {
    pub mean: f64,
    pub var: f64,
}

impl Default for InitialDensity {
    fn default() -> Self {
        Self { mean: 0.0, var: 1.44 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JkoSection {
    pub delta: f64,
    pub tau: f64,
    pub schedule: StepSchedule,
    pub kappa: f64,
    pub l_max: usize,
    pub nesterov: bool,
    pub push: PushInterpolation,
    pub band: BandPolicy,
    pub coupling: CouplingMethod,
    pub interpolation: Interpolation,
}

impl Default for JkoSection {
    fn default() -> Self {
        let inner = InnerConfig::<f64>::default();
        Self {
            delta: 0.01,
            tau: inner.tau,
            schedule: inner.schedule,
            kappa: inner.kappa,
            l_max: inner.l_max,
            nesterov: inner.nesterov,
            push: inner.interpolation,
            band: BandPolicy::default(),
            coupling: CouplingMethod::default(),
            interpolation: Interpolation::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FpSection {
    pub renormalize: bool,
}

impl Default for FpSection {
    fn default() -> Self {
        Self { renormalize: true }
    }
}

/// Where the drift parameter of a run comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimationScheme {
    /// Known `theta`, no estimation.
    TrueParameter,
    Offline,
    #[default]
    OnlineCumulative,
    PerBatch,
    AveragedPsi,
    Sequential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    pub scheme: EstimationScheme,
    /// Observation spacing.
    pub eta: f64,
    /// Batch size of the online schemes.
    pub m: usize,
    /// Sample size of the offline scheme.
    pub n: usize,
    pub observations: InitialLaw,
    pub lag_cutoff: Option<usize>,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            scheme: EstimationScheme::default(),
            eta: 1.0,
            m: 10,
            n: 2000,
            observations: InitialLaw::Stationary,
            lag_cutoff: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensitySource {
    /// OU marginals; quadratic potential in one dimension only.
    #[default]
    Analytic,
    /// Crank-Nicolson solution with the true parameter.
    Fp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitConfig {
    pub noise: NoiseKind,
    /// `gamma_theta` as a `q x q` matrix; defaults to the OU closed form.
    pub gamma: Option<Vec<Vec<f64>>>,
    /// Fixed `Z`; drawn from the seed when absent.
    pub z: Option<Vec<f64>>,
    pub density: DensitySource,
}

impl Default for LimitConfig {
    fn default() -> Self {
        Self { noise: NoiseKind::Brownian, gamma: None, z: None, density: DensitySource::Analytic }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BwConfig {
    pub dt: f64,
    pub mu0: Vec<f64>,
    pub sigma0: Vec<Vec<f64>>,
    pub delta: f64,
    pub system: LimitSystem,
    pub quadrature_order: usize,
}

impl Default for BwConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            mu0: vec![0.0],
            sigma0: vec![vec![1.44]],
            delta: 0.01,
            system: LimitSystem::Ode,
            quadrature_order: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    Fig1Density,
    Fig2Slice,
    Fig3Contour,
    Prop53Variance,
    Prop53Sweep,
    CltOffline,
    OracleV1,
    BwConvergence,
}

impl ExperimentId {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::Fig1Density => "fig1_density",
            ExperimentId::Fig2Slice => "fig2_slice",
            ExperimentId::Fig3Contour => "fig3_contour",
            ExperimentId::Prop53Variance => "prop53_variance",
            ExperimentId::Prop53Sweep => "prop53_sweep",
            ExperimentId::CltOffline => "clt_offline",
            ExperimentId::OracleV1 => "oracle_v1",
            ExperimentId::BwConvergence => "bw_convergence",
        }
    }

    fn needs_matched_steps(self) -> bool {
        matches!(self, ExperimentId::Fig1Density | ExperimentId::Fig2Slice | ExperimentId::Fig3Contour)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Prop53Config {
    pub t: f64,
    pub n_list: Vec<usize>,
    pub refinement: usize,
    /// Sweep `delta_m = sweep_unit * m` for `m = 1..=sweep_max`.
    pub sweep_unit: f64,
    pub sweep_max: usize,
}

impl Default for Prop53Config {
    fn default() -> Self {
        Self { t: 1.0, n_list: vec![1000], refinement: 100, sweep_unit: 1e-4, sweep_max: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Absent: nothing runs and the manifest lists no files.
    pub id: Option<ExperimentId>,
    /// Replication count `R`; each experiment has its own default.
    pub replications: Option<usize>,
    /// Overrides the command-line seed when set.
    pub seed: Option<u64>,
    pub svg: bool,
    pub prop53: Prop53Config,
    /// `(J, I)` levels of the V1 oracle comparison.
    pub oracle_levels: Vec<[usize; 2]>,
    /// Outer step sizes of the BW discretization check.
    pub bw_deltas: Vec<f64>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            id: None,
            replications: None,
            seed: None,
            svg: false,
            prop53: Prop53Config::default(),
            oracle_levels: vec![[200, 100], [400, 200], [800, 400]],
            bw_deltas: vec![0.04, 0.02, 0.01],
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    /// Parse by extension: `.json` as JSON, anything else as TOML.
    pub fn parse(text: &str, json: bool) -> Result<Self> {
        let cfg: Self = if json {
            serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| config_err(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read and parse a file; also returns the raw bytes for hashing.
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let text = std::str::from_utf8(&bytes).map_err(|e| config_err(e.to_string()))?;
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        Ok((Self::parse(text, json)?, bytes))
    }

    pub fn validate(&self) -> Result<()> {
        let pot = self.potential()?;
        if self.model.theta.len() != pot.dim_theta() {
            return Err(config_err("model.theta has the wrong length for the potential"));
        }
        if !(self.model.beta > 0.0 && self.model.beta.is_finite()) {
            return Err(config_err("model.beta must be positive and finite"));
        }
        if !(self.grid.half_width > 0.0) || self.grid.intervals < 2 {
            return Err(config_err("grid needs half_width > 0 and at least 2 intervals"));
        }
        if !(self.time.horizon > 0.0) || self.time.steps == 0 {
            return Err(config_err("time needs horizon > 0 and steps >= 1"));
        }
        if !(self.initial.var > 0.0) {
            return Err(config_err("initial.var must be positive"));
        }
        if !(self.jko.delta > 0.0) {
            return Err(config_err("jko.delta must be positive"));
        }
        if !(self.estimation.eta > 0.0) || self.estimation.m == 0 || self.estimation.n < 2 {
            return Err(config_err("estimation needs eta > 0, m >= 1, n >= 2"));
        }
        if !(self.bw.dt > 0.0) || !(self.bw.delta > 0.0) {
            return Err(config_err("bw needs dt > 0 and delta > 0"));
        }
        if let Some(id) = self.experiment.id {
            if id.needs_matched_steps() {
                let nu = self.time.horizon / self.time.steps as f64;
                if (nu - self.jko.delta).abs() > 1e-12 * self.jko.delta {
                    return Err(config_err(format!(
                        "{} needs time.horizon / time.steps == jko.delta (got {nu} vs {})",
                        id.name(),
                        self.jko.delta
                    )));
                }
            }
        }
        if let Some(g) = &self.limit.gamma {
            let q = pot.dim_theta();
            if g.len() != q || g.iter().any(|r| r.len() != q) {
                return Err(config_err("limit.gamma must be q x q"));
            }
        }
        if self.experiment.prop53.refinement == 0 || !(self.experiment.prop53.t > 0.0) {
            return Err(config_err("prop53 needs t > 0 and refinement >= 1"));
        }
        Ok(())
    }

    pub fn potential(&self) -> Result<Arc<dyn ParametricPotential>> {
        self.model.potential.build()
    }

    pub fn grid(&self) -> Result<Grid1D<f64>> {
        Grid1D::new(self.grid.half_width, self.grid.intervals)
    }

    pub fn time_grid(&self) -> Result<TimeGrid<f64>> {
        TimeGrid::new(self.time.horizon, self.time.steps)
    }

    pub fn rho0(&self) -> Result<DensityGrid<f64>> {
        DensityGrid::gaussian(self.grid()?, self.initial.mean, self.initial.var)
    }

    pub fn jko_config(&self) -> Result<JkoConfig<f64>> {
        let j = &self.jko;
        let mut cfg = JkoConfig::new(self.grid()?, j.delta, self.model.beta);
        cfg.inner = InnerConfig {
            tau: j.tau,
            schedule: j.schedule,
            kappa: j.kappa,
            l_max: j.l_max,
            nesterov: j.nesterov,
            interpolation: j.push,
        };
        cfg.band = j.band;
        cfg.coupling = j.coupling;
        cfg.interpolation = j.interpolation;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn bw_state0(&self) -> Result<GaussianState> {
        let d = self.bw.mu0.len();
        if self.bw.sigma0.len() != d || self.bw.sigma0.iter().any(|r| r.len() != d) {
            return Err(config_err("bw.sigma0 must be d x d with d = len(bw.mu0)"));
        }
        let sigma = DMatrix::from_fn(d, d, |i, j| self.bw.sigma0[i][j]);
        GaussianState::new(DVector::from_column_slice(&self.bw.mu0), sigma)
            .map_err(|e| config_err(format!("bw initial state: {e}")))
    }

    /// The experiment's own seed if set, else `cli_seed`.
    pub fn seed(&self, cli_seed: u64) -> u64 {
        self.experiment.seed.unwrap_or(cli_seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml_and_json() {
        let cfg = RunConfig::default();
        let t = toml::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::parse(&t, false).unwrap(), cfg);
        let j = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::parse(&j, true).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::parse("[grid]\nhalf_widht = 4.0\n", false), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("[nonsense]\n", false), Err(Error::Config(_))));
        assert!(RunConfig::parse("[grid]\nhalf_width = 4.0\n", false).is_ok());
    }

    #[test]
    fn figure_runs_need_matched_steps() {
        let text = "[experiment]\nid = \"fig1_density\"\n[time]\nsteps = 25\n";
        assert!(matches!(RunConfig::parse(text, false), Err(Error::Config(_))));
        let text = "[experiment]\nid = \"fig1_density\"\n";
        assert!(RunConfig::parse(text, false).is_ok());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in ["[model]\nbeta = -1.0\n", "[model]\ntheta = [0.0, 1.0]\n", "[grid]\nintervals = 1\n"] {
            assert!(matches!(RunConfig::parse(text, false), Err(Error::Config(_))), "{text}");
        }
    }
}
