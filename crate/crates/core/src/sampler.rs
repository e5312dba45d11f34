//! Discrete observations `X(i eta)` of the Langevin diffusion
//! `dX = -grad Psi(X) dt + sqrt(2/beta) dB`.
//!
//! Quadratic potentials are sampled with exact Gaussian transitions; anything
//! else goes through Euler-Maruyama with a fixed number of substeps.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::potential::ParametricPotential;
use crate::rng::{pair_stream, standard_normal, substream};

/// Overflow guard for Euler-Maruyama paths.
const DIVERGENCE_BOUND: f64 = 1e12;

/// Law of `X(0)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialLaw {
    /// The Gibbs law; only available for quadratic potentials.
    #[default]
    Stationary,
    Point { x: Vec<f64> },
    /// Independent coordinates with the given means and variances.
    Gaussian { mean: Vec<f64>, var: Vec<f64> },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Exact for quadratic potentials, Euler-Maruyama otherwise.
    #[default]
    Auto,
    Exact,
    EulerMaruyama,
}

/// `n` observations at `t_i = i eta`, `i = 1..n`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePath {
    observations: Vec<f64>,
    dim: usize,
    eta: f64,
    seed: u64,
    stream: u64,
    initial: InitialLaw,
}

impl SamplePath {
    pub fn from_rows(rows: &[Vec<f64>], eta: f64) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.is_empty() || dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(invalid("sample path needs at least one observation of consistent dimension"));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("observations must be finite"));
        }
        Ok(Self {
            observations: rows.concat(),
            dim,
            eta,
            seed: 0,
            stream: 0,
            initial: InitialLaw::Point { x: vec![0.0; dim] },
        })
    }

    /// One-dimensional convenience constructor.
    pub fn from_scalars(xs: &[f64], eta: f64) -> Result<Self> {
        Self::from_rows(&xs.iter().map(|x| vec![*x]).collect::<Vec<_>>(), eta)
    }

    pub fn len(&self) -> usize {
        self.observations.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.observations[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.observations.chunks(self.dim)
    }

    /// Path made of the first `n` observations.
    pub fn prefix(&self, n: usize) -> Self {
        let mut p = self.clone();
        p.observations.truncate(n.min(self.len()) * self.dim);
        p
    }

    /// Concatenate paths of equal dimension (used to pool batches).
    pub fn concat<'a>(paths: impl IntoIterator<Item = &'a SamplePath>) -> Result<Self> {
        let mut it = paths.into_iter();
        let first = it.next().ok_or_else(|| invalid("nothing to concatenate"))?;
        let mut out = first.clone();
        for p in it {
            if p.dim != out.dim {
                return Err(invalid("cannot concatenate paths of different dimension"));
            }
            out.observations.extend_from_slice(&p.observations);
        }
        Ok(out)
    }

    /// CSV with header `i,t,x_1..x_d`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let names: Vec<String> = (1..=self.dim).map(|k| format!("x_{k}")).collect();
        writeln!(out, "i,t,{}", names.join(","))?;
        for (i, row) in self.rows().enumerate() {
            let t = (i + 1) as f64 * self.eta;
            let vals: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{},{:.16e},{}", i + 1, t, vals.join(","))?;
        }
        Ok(())
    }

    /// JSON sidecar describing how the path was generated.
    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "n": self.len(),
            "dim": self.dim,
            "eta": self.eta,
            "seed": self.seed,
            "stream": self.stream,
            "initial": self.initial,
        })
    }
}

/// `k` independent paths of `m` observations each.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchSet {
    pub batches: Vec<SamplePath>,
}

impl BatchSet {
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn batch_size(&self) -> usize {
        self.batches.first().map(SamplePath::len).unwrap_or(0)
    }
}

/// Marginal moments of the unit-temperature OU process `dX = -(X - theta) dt + sqrt(2) dB`.
pub fn ou_exact_moments(theta: f64, mu0: f64, var0: f64, t: f64) -> (f64, f64) {
    ou_moments(theta, mu0, var0, 1.0, t)
}

/// Same as [`ou_exact_moments`] at inverse temperature `beta`.
pub fn ou_moments(theta: f64, mu0: f64, var0: f64, beta: f64, t: f64) -> (f64, f64) {
    let e = (-t).exp();
    let stat = 1.0 / beta;
    (theta + (mu0 - theta) * e, stat + (var0 - stat) * e * e)
}

/// Langevin sampler for a fixed potential and parameter.
#[derive(Clone, Debug)]
pub struct Langevin {
    pub potential: Arc<dyn ParametricPotential>,
    pub theta: Vec<f64>,
    /// Inverse temperature; `f64::INFINITY` gives the noiseless flow.
    pub beta: f64,
    pub eta: f64,
    pub initial: InitialLaw,
    pub method: Method,
    pub substeps: usize,
}

impl Langevin {
    pub fn new(potential: Arc<dyn ParametricPotential>, theta: Vec<f64>, beta: f64, eta: f64) -> Self {
        Self { potential, theta, beta, eta, initial: InitialLaw::Stationary, method: Method::Auto, substeps: 100 }
    }

    pub fn with_initial(mut self, initial: InitialLaw) -> Self {
        self.initial = initial;
        self
    }

    pub fn with_method(mut self, method: Method, substeps: usize) -> Self {
        self.method = method;
        self.substeps = substeps;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) {
            return Err(invalid("observation spacing eta must be positive"));
        }
        if !(self.beta > 0.0) {
            return Err(invalid("beta must be positive"));
        }
        if self.theta.len() != self.potential.dim_theta() {
            return Err(invalid("theta has the wrong dimension"));
        }
        if self.substeps == 0 {
            return Err(invalid("substeps must be at least 1"));
        }
        Ok(())
    }

    fn draw_initial<R: Rng>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let d = self.potential.dim_x();
        match &self.initial {
            InitialLaw::Point { x } if x.len() == d => Ok(DVector::from_column_slice(x)),
            InitialLaw::Gaussian { mean, var } if mean.len() == d && var.len() == d => {
                Ok(DVector::from_fn(d, |i, _| mean[i] + var[i].max(0.0).sqrt() * standard_normal(rng)))
            }
            InitialLaw::Stationary => {
                let a = self
                    .potential
                    .quadratic_matrix()
                    .ok_or_else(|| invalid("stationary start needs a quadratic potential"))?;
                let eig = a.symmetric_eigen();
                let z = DVector::from_fn(d, |i, _| {
                    let sd = if self.beta.is_finite() { (1.0 / (self.beta * eig.eigenvalues[i])).sqrt() } else { 0.0 };
                    sd * standard_normal(rng)
                });
                Ok(DVector::from_column_slice(&self.theta) + &eig.eigenvectors * z)
            }
            _ => Err(invalid("initial law has the wrong dimension")),
        }
    }

    /// Draw one path of `n` observations from stream `stream` of `seed`.
    pub fn path(&self, n: usize, seed: u64, stream: u64) -> Result<SamplePath> {
        self.validate()?;
        if n == 0 {
            return Err(invalid("path needs n >= 1 observations"));
        }
        let mut rng = substream(seed, stream);
        let x0 = self.draw_initial(&mut rng)?;
        let quadratic = self.potential.quadratic_matrix();
        let observations = match (self.method, quadratic) {
            (Method::Auto | Method::Exact, Some(a)) => exact_ou(&a, &self.theta, self.beta, self.eta, n, x0, &mut rng),
            (Method::Exact, None) => return Err(invalid("exact sampling needs a quadratic potential")),
            _ => euler_maruyama(self, n, x0, &mut rng)?,
        };
        Ok(SamplePath {
            observations,
            dim: self.potential.dim_x(),
            eta: self.eta,
            seed,
            stream,
            initial: self.initial.clone(),
        })
    }

    /// `k` batches of size `m` for replication `replication`; batch `j` uses
    /// stream `(replication, j)`.
    pub fn batches(&self, k: usize, m: usize, seed: u64, replication: u64) -> Result<BatchSet> {
        let batches = (0..k)
            .into_par_iter()
            .map(|j| self.path(m, seed, pair_stream(replication, j as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(BatchSet { batches })
    }
}

/// Exact OU path for `Psi = 1/2 (x - theta)' A (x - theta)`.
///
/// Works in the eigenbasis of `A`, where the coordinates are independent
/// scalar OU processes.
pub fn sample_ou_path(
    a: &DMatrix<f64>,
    theta: &[f64],
    beta: f64,
    eta: f64,
    n: usize,
    x0: &[f64],
    seed: u64,
) -> Result<SamplePath> {
    if !(eta > 0.0) || !(beta > 0.0) || n == 0 {
        return Err(invalid("exact OU sampling needs eta > 0, beta > 0 and n >= 1"));
    }
    let mut rng = substream(seed, 0);
    let obs = exact_ou(a, theta, beta, eta, n, DVector::from_column_slice(x0), &mut rng);
    Ok(SamplePath {
        observations: obs,
        dim: theta.len(),
        eta,
        seed,
        stream: 0,
        initial: InitialLaw::Point { x: x0.to_vec() },
    })
}

/// Euler-Maruyama path recording every `substeps`-th state.
pub fn sample_em_path(
    potential: Arc<dyn ParametricPotential>,
    theta: &[f64],
    beta: f64,
    eta: f64,
    n: usize,
    substeps: usize,
    x0: &[f64],
    seed: u64,
) -> Result<SamplePath> {
    Langevin::new(potential, theta.to_vec(), beta, eta)
        .with_initial(InitialLaw::Point { x: x0.to_vec() })
        .with_method(Method::EulerMaruyama, substeps)
        .path(n, seed, 0)
}

fn exact_ou<R: Rng>(
    a: &DMatrix<f64>,
    theta: &[f64],
    beta: f64,
    eta: f64,
    n: usize,
    x0: DVector<f64>,
    rng: &mut R,
) -> Vec<f64> {
    let d = theta.len();
    let eig = a.clone().symmetric_eigen();
    let q = &eig.eigenvectors;
    let theta = DVector::from_column_slice(theta);
    let decay: Vec<f64> = eig.eigenvalues.iter().map(|l| (-l * eta).exp()).collect();
    let sd: Vec<f64> = eig
        .eigenvalues
        .iter()
        .zip(&decay)
        .map(|(l, e)| if beta.is_finite() { ((1.0 - e * e) / (beta * l)).sqrt() } else { 0.0 })
        .collect();
    let mut y = q.transpose() * (x0 - &theta);
    let mut out = Vec::with_capacity(n * d);
    for _ in 0..n {
        for k in 0..d {
            y[k] = decay[k] * y[k] + sd[k] * standard_normal(rng);
        }
        out.extend((q * &y + &theta).iter());
    }
    out
}

fn euler_maruyama<R: Rng>(s: &Langevin, n: usize, x0: DVector<f64>, rng: &mut R) -> Result<Vec<f64>> {
    let d = s.potential.dim_x();
    let dt = s.eta / s.substeps as f64;
    let noise = if s.beta.is_finite() { (2.0 * dt / s.beta).sqrt() } else { 0.0 };
    let mut x = x0;
    let mut out = Vec::with_capacity(n * d);
    let mut step = 0;
    for _ in 0..n {
        for _ in 0..s.substeps {
            step += 1;
            let g = s.potential.grad_x(&s.theta, x.as_slice());
            for k in 0..d {
                let z = if noise > 0.0 { standard_normal(rng) } else { 0.0 };
                x[k] += -g[k] * dt + noise * z;
            }
            if x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND) {
                return Err(Error::Diverged { step });
            }
        }
        out.extend(x.iter());
    }
    Ok(out)
}
