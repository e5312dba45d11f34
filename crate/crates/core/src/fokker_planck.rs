//! Crank-Nicolson solver for `d_t rho = div(rho grad Psi) + beta^-1 Laplace rho`
//! with zero Dirichlet data at `x = -D, D`.
//!
//! The drift term is written in conservative form with arithmetic-mean face
//! values, so the scheme telescopes and only the boundary fluxes change the mass.

use crate::error::{invalid, Result};
use crate::estimators::DriftSchedule;
use crate::grid::{renormalize, DensityGrid, DriftField, FieldGrid, Grid1D, Interpolation, TimeGrid};
use crate::tridiag::Tridiagonal;
use crate::Real;

/// Spatial operator `L` on the interior nodes `1..J-1` for node gradients `grad`.
pub fn operator<F: Real>(grid: &Grid1D<F>, grad: &[F], beta: F) -> Tridiagonal<F> {
    let n = grid.len();
    let h = grid.spacing();
    let half = F::of(0.5);
    let two_h = F::of(2.0) * h;
    let diff = F::one() / (beta * h * h);
    let m = n - 2;
    let mut op = Tridiagonal::zeros(m);
    for k in 0..m {
        let j = k + 1;
        let g_minus = half * (grad[j - 1] + grad[j]);
        let g_plus = half * (grad[j] + grad[j + 1]);
        op.lower[k] = -g_minus / two_h + diff;
        op.diag[k] = (g_plus - g_minus) / two_h - F::of(2.0) * diff;
        op.upper[k] = g_plus / two_h + diff;
    }
    op
}

/// One Crank-Nicolson step `(I - nu L/2) u' = (I + nu L/2) u + forcing` on
/// full node vectors (boundary entries stay zero).
pub fn cn_step<F: Real>(op: &Tridiagonal<F>, nu: F, u: &[F], forcing: Option<&[F]>) -> Result<Vec<F>> {
    let n = u.len();
    let half = F::of(0.5) * nu;
    let explicit = op.shifted_identity(half);
    let implicit = op.shifted_identity(-half);
    let mut rhs = explicit.apply(&u[1..n - 1]);
    if let Some(g) = forcing {
        for (r, gv) in rhs.iter_mut().zip(&g[1..n - 1]) {
            *r += *gv;
        }
    }
    let inner = implicit.solve(&rhs)?;
    let mut out = vec![F::zero(); n];
    out[1..n - 1].copy_from_slice(&inner);
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CnOptions {
    /// Rescale to unit mass after every step.
    pub renormalize: bool,
}

impl Default for CnOptions {
    fn default() -> Self {
        Self { renormalize: true }
    }
}

/// Time-stepped densities; row `i` is `rho(t_i, .)`.
///
/// `drift(i)` supplies the field used on `[t_i, t_{i+1}]`.
pub fn cn_solve<F: Real>(
    rho0: &DensityGrid<F>,
    mut drift: impl FnMut(usize) -> Result<DriftField<F>>,
    beta: F,
    time_grid: TimeGrid<F>,
    opts: CnOptions,
) -> Result<FieldGrid<F>> {
    if !(beta > F::zero()) || !beta.is_finite() {
        return Err(invalid("Fokker-Planck solver needs a finite positive beta"));
    }
    let grid = *rho0.grid();
    let nu = time_grid.step();
    let mut field = FieldGrid::zeros(grid, time_grid);
    field.row_mut(0).copy_from_slice(rho0.values());
    let mut u = rho0.values().to_vec();
    let mut cached: Option<(Vec<F>, Tridiagonal<F>)> = None;
    for i in 0..time_grid.steps() {
        let d = drift(i)?;
        if d.grad.len() != grid.len() {
            return Err(crate::Error::GridMismatch("drift field does not match the grid".into()));
        }
        let op = match &cached {
            Some((g, op)) if *g == d.grad => op.clone(),
            _ => {
                let op = operator(&grid, &d.grad, beta);
                cached = Some((d.grad.clone(), op.clone()));
                op
            }
        };
        u = cn_step(&op, nu, &u, None)?;
        if opts.renormalize {
            u = renormalize(&grid, u)?.into_values();
        }
        field.row_mut(i + 1).copy_from_slice(&u);
    }
    Ok(field)
}

/// Estimate index used on `[t_i, t_{i+1}]`: the rounding rule applied at the
/// step midpoint, never below 1.
pub fn step_index(interp: Interpolation, t_mid: f64, delta: f64) -> usize {
    interp.index(t_mid, delta).max(1)
}

/// [`cn_solve`] driven by a drift schedule indexed in JKO steps of length `delta`.
pub fn cn_solve_schedule<F: Real>(
    rho0: &DensityGrid<F>,
    schedule: &DriftSchedule,
    beta: F,
    time_grid: TimeGrid<F>,
    delta: f64,
    interp: Interpolation,
    opts: CnOptions,
) -> Result<FieldGrid<F>> {
    let grid = *rho0.grid();
    let nu = time_grid.step().to64();
    let last = step_index(interp, time_grid.horizon().to64() - 0.5 * nu, delta);
    schedule.require(last)?;
    cn_solve(
        rho0,
        |i| {
            let t_mid = time_grid.t(i).to64() + 0.5 * nu;
            schedule.field(step_index(interp, t_mid, delta), &grid)
        },
        beta,
        time_grid,
        opts,
    )
}
