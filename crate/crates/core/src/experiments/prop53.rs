//! Discretization gap between the sampled mean and the time average of a
//! stationary-start OU path: `(t/delta)(theta_delta(t) - theta(t))` with
//! `theta_delta(t)` the mean of `X(i delta)`, `i = 1..ceil(t/delta)`, and
//! `theta(t) = t^-1 int_0^t X`.

use rayon::prelude::*;
use serde::Serialize;

use crate::rng::{pair_stream, standard_normal, substream};
use crate::stats::variance;

/// Asymptotic variance `t/6 + (1 - e^-2t)/4` along `delta = t/n`.
pub fn prop53_limit(t: f64) -> f64 {
    t / 6.0 + (1.0 - (-2.0 * t).exp()) / 4.0
}

fn sample_count(t: f64, delta: f64) -> usize {
    (t / delta - 1e-9).ceil().max(1.0) as usize
}

/// One replication on a grid refined `refinement` times per `delta`, with
/// `X(0) = theta = 0`, `beta = 1`, exact OU transitions and the trapezoid
/// rule for the time integral (linear interpolation into the last cell when
/// `t` is not a fine node).
pub fn prop53_replicate(t: f64, delta: f64, refinement: usize, seed: u64, stream: u64) -> f64 {
    let n = sample_count(t, delta);
    let h = delta / refinement as f64;
    let decay = (-h).exp();
    let sd = (1.0 - decay * decay).sqrt();
    let mut rng = substream(seed, stream);
    let mut x = 0.0;
    let mut sampled = 0.0;
    let mut integral = 0.0;
    let mut s = 0.0;
    for i in 1..=n * refinement {
        let next = decay * x + sd * standard_normal(&mut rng);
        let s_next = i as f64 * h;
        if s_next <= t + 1e-12 * h {
            integral += 0.5 * h * (x + next);
        } else if s < t {
            let r = t - s;
            let xt = x + (next - x) * r / h;
            integral += 0.5 * r * (x + xt);
        }
        if i % refinement == 0 {
            sampled += next;
        }
        x = next;
        s = s_next;
    }
    (t / delta) * (sampled / n as f64 - integral / t)
}

/// Sample variance over `r` replications, replication `j` on stream `(tag, j)`.
pub fn prop53_variance(t: f64, delta: f64, refinement: usize, r: usize, seed: u64, tag: u64) -> f64 {
    let vals: Vec<f64> = (0..r as u64)
        .into_par_iter()
        .map(|j| prop53_replicate(t, delta, refinement, seed, pair_stream(tag, j)))
        .collect();
    variance(&vals)
}

/// Exact `Var[(t/delta)(theta_delta(t) - theta(t))]` from the covariance
/// `e^-|s-u| - e^-(s+u)` of the OU path started at its mean.
pub fn prop53_exact_variance(t: f64, delta: f64) -> f64 {
    let n = sample_count(t, delta);
    let nf = n as f64;
    let q = (-delta).exp();
    // sum_ij e^-|s_i - s_j| and (sum_i e^-s_i)^2
    let mut pair = nf;
    let mut qk = 1.0;
    for k in 1..n {
        qk *= q;
        pair += 2.0 * (nf - k as f64) * qk;
    }
    let mut single = 0.0;
    let mut cross = 0.0;
    for i in 1..=n {
        let s = i as f64 * delta;
        let es = (-s).exp();
        single += es;
        let stationary = if s <= t { 2.0 - es - (-(t - s)).exp() } else { (-(s - t)).exp() - es };
        cross += stationary - es * (1.0 - (-t).exp());
    }
    let var_a = (pair - single * single) / (nf * nf);
    let et = (-t).exp();
    let var_b = (2.0 * (t - 1.0 + et) - (1.0 - et) * (1.0 - et)) / (t * t);
    let cov = cross / (nf * t);
    (t / delta).powi(2) * (var_a + var_b - 2.0 * cov)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prop53Row {
    pub delta: f64,
    pub n: f64,
    pub variance: f64,
    pub exact: f64,
    pub limit: f64,
}

/// Variance table for `delta = t/n`, `n` in `n_list`.
pub fn run_prop53(t: f64, n_list: &[usize], r: usize, refinement: usize, seed: u64) -> Vec<Prop53Row> {
    n_list
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let delta = t / n as f64;
            Prop53Row {
                delta,
                n: n as f64,
                variance: prop53_variance(t, delta, refinement, r, seed, k as u64),
                exact: prop53_exact_variance(t, delta),
                limit: prop53_limit(t),
            }
        })
        .collect()
}

/// Sweep `delta_m = unit * m`, `m = 1..=m_max`.
pub fn run_prop53_sweep(t: f64, unit: f64, m_max: usize, r: usize, refinement: usize, seed: u64) -> Vec<Prop53Row> {
    (1..=m_max)
        .map(|m| {
            let delta = unit * m as f64;
            Prop53Row {
                delta,
                n: t / delta,
                variance: prop53_variance(t, delta, refinement, r, seed, m as u64),
                exact: prop53_exact_variance(t, delta),
                limit: prop53_limit(t),
            }
        })
        .collect()
}
