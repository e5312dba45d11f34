//! Uniform space/time grids and the grid-sampled objects that live on them.
//!
//! Densities follow the boundary convention `rho(-D) = rho(D) = 0`, so the
//! trapezoid rule reduces to `h * sum(values)` for the mass.

use std::io::Write;

use crate::error::{invalid, Error, Result};
use crate::Real;

/// Values below this are treated as exact zeros inside `log`.
const LOG_FLOOR: f64 = 1e-300;

/// Default tolerance on the trapezoidal mass of a [`DensityGrid`].
pub const MASS_TOL: f64 = 1e-8;

/// Uniform partition of `[-D, D]` into `J` intervals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid1D<F> {
    half_width: F,
    intervals: usize,
}

impl<F: Real> Grid1D<F> {
    pub fn new(half_width: F, intervals: usize) -> Result<Self> {
        if intervals < 4 {
            return Err(invalid(format!("grid needs J >= 4 intervals, got {intervals}")));
        }
        if !(half_width > F::zero()) || !half_width.is_finite() {
            return Err(invalid("grid half width must be positive and finite"));
        }
        Ok(Self { half_width, intervals })
    }

    pub fn half_width(&self) -> F {
        self.half_width
    }

    /// Number of intervals `J`; there are `J + 1` nodes.
    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn len(&self) -> usize {
        self.intervals + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> F {
        F::of(2.0) * self.half_width / F::from_usize(self.intervals).unwrap()
    }

    /// Coordinate of node `i`: `x_i = i h - D`.
    #[inline]
    pub fn x(&self, i: usize) -> F {
        F::from_usize(i).unwrap() * self.spacing() - self.half_width
    }

    pub fn nodes(&self) -> Vec<F> {
        (0..self.len()).map(|i| self.x(i)).collect()
    }

    pub fn check_same(&self, other: &Self) -> Result<()> {
        if self.intervals != other.intervals
            || (self.half_width - other.half_width).abs() > F::epsilon() * self.half_width
        {
            return Err(Error::GridMismatch(format!(
                "D={} J={} vs D={} J={}",
                self.half_width, self.intervals, other.half_width, other.intervals
            )));
        }
        Ok(())
    }

    /// Same domain with `factor` times as many intervals.
    pub fn refined(&self, factor: usize) -> Self {
        Self { half_width: self.half_width, intervals: self.intervals * factor }
    }
}

/// Uniform partition of `[0, T]` into `I` steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid<F> {
    horizon: F,
    steps: usize,
}

impl<F: Real> TimeGrid<F> {
    pub fn new(horizon: F, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(invalid("time grid needs at least one step"));
        }
        if !(horizon > F::zero()) || !horizon.is_finite() {
            return Err(invalid("time horizon must be positive and finite"));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> F {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step(&self) -> F {
        self.horizon / F::from_usize(self.steps).unwrap()
    }

    #[inline]
    pub fn t(&self, i: usize) -> F {
        F::from_usize(i).unwrap() * self.step()
    }

    pub fn nodes(&self) -> Vec<F> {
        (0..=self.steps).map(|i| self.t(i)).collect()
    }
}

/// How a step sequence is read off as a function of continuous time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// `k = ceil(t / delta)`
    #[default]
    Ceil,
    /// `k = floor(t / delta)`
    Floor,
}

impl Interpolation {
    /// Step index for time `t`; ratios within 1e-9 of an integer snap to it.
    pub fn index(self, t: f64, delta: f64) -> usize {
        let r = t / delta;
        let nearest = r.round();
        let r = if (r - nearest).abs() < 1e-9 * nearest.max(1.0) { nearest } else { r };
        let k = match self {
            Interpolation::Ceil => r.ceil(),
            Interpolation::Floor => r.floor(),
        };
        k.max(0.0) as usize
    }
}

/// Probability density sampled at the `J + 1` nodes of a [`Grid1D`].
#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid<F> {
    grid: Grid1D<F>,
    values: Vec<F>,
}

impl<F: Real> DensityGrid<F> {
    /// Checked constructor: values must already satisfy every invariant.
    pub fn new(grid: Grid1D<F>, values: Vec<F>) -> Result<Self> {
        Self::with_tolerance(grid, values, MASS_TOL)
    }

    pub fn with_tolerance(grid: Grid1D<F>, values: Vec<F>, mass_tol: f64) -> Result<Self> {
        check_shape(&grid, &values)?;
        let last = values.len() - 1;
        if values[0] != F::zero() || values[last] != F::zero() {
            return Err(invalid("density must vanish at both boundary nodes"));
        }
        if values.iter().any(|v| !(*v >= F::zero()) || !v.is_finite()) {
            return Err(invalid("density values must be finite and nonnegative"));
        }
        let mass = trapezoid(&grid, &values).to64();
        if (mass - 1.0).abs() > mass_tol {
            return Err(invalid(format!("density mass {mass} is not within {mass_tol} of 1")));
        }
        Ok(Self { grid, values })
    }

    /// Zero the boundary nodes, clamp negatives, and scale to unit mass.
    pub fn from_unnormalized(grid: Grid1D<F>, values: Vec<F>) -> Result<Self> {
        renormalize(&grid, values)
    }

    pub fn from_fn(grid: Grid1D<F>, f: impl Fn(F) -> F) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(grid.x(i))).collect();
        renormalize(&grid, values)
    }

    /// Grid-sampled normal density with the given mean and variance.
    pub fn gaussian(grid: Grid1D<F>, mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0) {
            return Err(invalid("gaussian variance must be positive"));
        }
        Self::from_fn(grid, |x| {
            let z = x.to64() - mean;
            F::of((-0.5 * z * z / variance).exp() / (2.0 * std::f64::consts::PI * variance).sqrt())
        })
    }

    pub fn grid(&self) -> &Grid1D<F> {
        &self.grid
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn into_values(self) -> Vec<F> {
        self.values
    }

    pub fn mass(&self) -> F {
        trapezoid(&self.grid, &self.values)
    }

    pub fn mean(&self) -> F {
        self.integrate(|x| x)
    }

    /// `int x^2 rho(x) dx`.
    pub fn second_moment(&self) -> F {
        self.integrate(|x| x * x)
    }

    pub fn variance(&self) -> F {
        let m = self.mean();
        self.second_moment() - m * m
    }

    /// Trapezoid approximation of `int g(x) rho(x) dx`.
    pub fn integrate(&self, g: impl Fn(F) -> F) -> F {
        let w: Vec<F> = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| *v * g(self.grid.x(i)))
            .collect();
        trapezoid(&self.grid, &w)
    }

    /// Potential energy `int psi rho`, with `psi` given at the nodes.
    pub fn energy(&self, psi: &[F]) -> F {
        assert_eq!(psi.len(), self.values.len());
        let w: Vec<F> = self.values.iter().zip(psi).map(|(r, p)| *r * *p).collect();
        trapezoid(&self.grid, &w)
    }

    /// Entropy `-int rho log rho` with `0 log 0 = 0`.
    pub fn entropy(&self) -> F {
        let floor = F::of(LOG_FLOOR);
        let w: Vec<F> = self
            .values
            .iter()
            .map(|r| if *r < floor { F::zero() } else { -*r * r.ln() })
            .collect();
        trapezoid(&self.grid, &w)
    }

    /// Free energy `E(rho) - S(rho) / beta` for node values of the potential.
    pub fn free_energy(&self, psi: &[F], beta: F) -> F {
        self.energy(psi) - self.entropy() / beta
    }

    pub fn l1_distance(&self, other: &Self) -> Result<F> {
        self.grid.check_same(&other.grid)?;
        let d: Vec<F> = self.values.iter().zip(&other.values).map(|(a, b)| (*a - *b).abs()).collect();
        Ok(trapezoid(&self.grid, &d))
    }

    pub fn linf_distance(&self, other: &Self) -> Result<F> {
        self.grid.check_same(&other.grid)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(F::zero(), |m, (a, b)| m.max((*a - *b).abs())))
    }

    /// CSV with header `x,value`, one row per node.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,value")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{},{}", fmt17(self.grid.x(i)), fmt17(*v))?;
        }
        Ok(())
    }
}

/// Scale `values` to unit trapezoidal mass on `grid`.
///
/// Boundary nodes are set to zero and negative entries clamped first.
pub fn renormalize<F: Real>(grid: &Grid1D<F>, mut values: Vec<F>) -> Result<DensityGrid<F>> {
    check_shape(grid, &values)?;
    let last = values.len() - 1;
    values[0] = F::zero();
    values[last] = F::zero();
    for v in values.iter_mut() {
        if !(*v > F::zero()) {
            *v = F::zero();
        }
    }
    let mass = trapezoid(grid, &values);
    if !(mass > F::zero()) || !mass.is_finite() {
        return Err(Error::AllMassLost);
    }
    let inv = F::one() / mass;
    for v in values.iter_mut() {
        *v *= inv;
    }
    Ok(DensityGrid { grid: *grid, values })
}

/// Trapezoid rule for node values on `grid`.
pub fn trapezoid<F: Real>(grid: &Grid1D<F>, values: &[F]) -> F {
    let n = values.len();
    let inner: F = values[1..n - 1].iter().copied().sum();
    grid.spacing() * (inner + F::of(0.5) * (values[0] + values[n - 1]))
}

fn check_shape<F: Real>(grid: &Grid1D<F>, values: &[F]) -> Result<()> {
    if values.len() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "expected {} node values, got {}",
            grid.len(),
            values.len()
        )));
    }
    Ok(())
}

/// Potential value and gradient sampled at the nodes of a 1D grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftField<F> {
    pub psi: Vec<F>,
    pub grad: Vec<F>,
}

impl<F: Real> DriftField<F> {
    pub fn from_fns(grid: &Grid1D<F>, psi: impl Fn(f64) -> f64, grad: impl Fn(f64) -> f64) -> Self {
        let xs = grid.nodes();
        Self {
            psi: xs.iter().map(|x| F::of(psi(x.to64()))).collect(),
            grad: xs.iter().map(|x| F::of(grad(x.to64()))).collect(),
        }
    }

    pub fn zero(grid: &Grid1D<F>) -> Self {
        Self { psi: vec![F::zero(); grid.len()], grad: vec![F::zero(); grid.len()] }
    }
}

/// Signed space-time field on an `(I+1) x (J+1)` node array, row-major in time.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrid<F> {
    grid: Grid1D<F>,
    time_grid: TimeGrid<F>,
    values: Vec<F>,
}

impl<F: Real> FieldGrid<F> {
    pub fn zeros(grid: Grid1D<F>, time_grid: TimeGrid<F>) -> Self {
        let n = (time_grid.steps() + 1) * grid.len();
        Self { grid, time_grid, values: vec![F::zero(); n] }
    }

    pub fn from_rows(grid: Grid1D<F>, time_grid: TimeGrid<F>, rows: Vec<Vec<F>>) -> Result<Self> {
        if rows.len() != time_grid.steps() + 1 {
            return Err(Error::GridMismatch(format!(
                "expected {} time rows, got {}",
                time_grid.steps() + 1,
                rows.len()
            )));
        }
        let mut values = Vec::with_capacity(rows.len() * grid.len());
        for row in rows {
            check_shape(&grid, &row)?;
            values.extend(row);
        }
        Ok(Self { grid, time_grid, values })
    }

    pub fn grid(&self) -> &Grid1D<F> {
        &self.grid
    }

    pub fn time_grid(&self) -> &TimeGrid<F> {
        &self.time_grid
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> F {
        self.values[i * self.grid.len() + j]
    }

    pub fn row(&self, i: usize) -> &[F] {
        let n = self.grid.len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        let n = self.grid.len();
        &mut self.values[i * n..(i + 1) * n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[F]> {
        self.values.chunks(self.grid.len())
    }

    /// Row `i` as a density; only meaningful when the field holds densities.
    pub fn density(&self, i: usize) -> Result<DensityGrid<F>> {
        renormalize(&self.grid, self.row(i).to_vec())
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self { grid: self.grid, time_grid: self.time_grid, values: self.values.iter().map(|v| f(*v)).collect() }
    }

    pub fn max_abs(&self) -> F {
        self.values.iter().fold(F::zero(), |m, v| m.max(v.abs()))
    }

    /// Wide CSV: header `t,<x_0>,...,<x_J>`, then one row per time node.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "t")?;
        for j in 0..self.grid.len() {
            write!(out, ",{}", fmt17(self.grid.x(j)))?;
        }
        writeln!(out)?;
        for (i, row) in self.rows().enumerate() {
            write!(out, "{}", fmt17(self.time_grid.t(i)))?;
            for v in row {
                write!(out, ",{}", fmt17(*v))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Long CSV `t,x,value`, suitable for contour plots.
    pub fn write_long_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,x,value")?;
        for (i, row) in self.rows().enumerate() {
            let t = fmt17(self.time_grid.t(i));
            for (j, v) in row.iter().enumerate() {
                writeln!(out, "{},{},{}", t, fmt17(self.grid.x(j)), fmt17(*v))?;
            }
        }
        Ok(())
    }
}

/// Float printed with 17 significant digits.
pub fn fmt17<F: Real>(v: F) -> String {
    format!("{:.16e}", v.to64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid() -> Grid1D<f64> {
        Grid1D::new(5.0, 200).unwrap()
    }

    #[test]
    fn node_coordinates() {
        let g = grid();
        assert_eq!(g.len(), 201);
        assert_abs_diff_eq!(g.spacing(), 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(g.x(0), -5.0);
        assert_abs_diff_eq!(g.x(100), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g.x(200), 5.0, epsilon = 1e-14);
        assert!(Grid1D::new(5.0, 3).is_err());
        assert!(Grid1D::new(0.0, 10).is_err());
        let tg = TimeGrid::new(0.5, 50).unwrap();
        assert_abs_diff_eq!(tg.step(), 0.01, epsilon = 1e-15);
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn interpolation_conventions() {
        assert_eq!(Interpolation::Ceil.index(0.0, 0.01), 0);
        assert_eq!(Interpolation::Ceil.index(0.5, 0.01), 50);
        assert_eq!(Interpolation::Ceil.index(0.505, 0.01), 51);
        assert_eq!(Interpolation::Floor.index(0.505, 0.01), 50);
        // 0.3 / 0.1 is 2.9999999999999996 in binary
        assert_eq!(Interpolation::Ceil.index(0.3, 0.1), 3);
        assert_eq!(Interpolation::Floor.index(0.3, 0.1), 3);
    }

    #[test]
    fn second_moment_of_hat_is_zero() {
        let g = grid();
        let mut v = vec![0.0; g.len()];
        v[100] = 1.0 / g.spacing();
        let rho = DensityGrid::new(g, v).unwrap();
        assert_abs_diff_eq!(rho.second_moment(), 0.0, epsilon = 1e-20);
    }

    #[test]
    fn second_moment_of_gaussians() {
        let rho = DensityGrid::gaussian(grid(), 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(rho.second_moment(), 1.0, epsilon = 0.01);
        let rho = DensityGrid::gaussian(grid(), 0.0, 1.44).unwrap();
        assert_abs_diff_eq!(rho.second_moment(), 1.44, epsilon = 0.02);
    }

    #[test]
    fn trapezoid_functionals_converge_at_second_order() {
        // non-Gaussian smooth density so the trapezoid error is not spectrally small
        let f = |x: f64| (-(x - 0.3).powi(4) / 2.0).exp() * (1.0 + 0.5 * (2.0 * x).sin());
        let g = |x: f64| x * x + (x).cos();
        let exact = {
            // fine-grid reference with Simpson's rule
            let n = 200_000;
            let h = 10.0 / n as f64;
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..=n {
                let x = -5.0 + i as f64 * h;
                let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                num += w * f(x) * g(x);
                den += w * f(x);
            }
            num / den
        };
        let err = |j: usize| {
            let rho = DensityGrid::from_fn(Grid1D::new(5.0, j).unwrap(), f).unwrap();
            (rho.integrate(g) - exact).abs()
        };
        let (e1, e2) = (err(20), err(40));
        assert!(e1 / e2 >= 3.5, "ratio {}", e1 / e2);
    }

    #[test]
    fn free_energy_of_gibbs_density() {
        let g = grid();
        let psi: Vec<f64> = g.nodes().iter().map(|x| 0.5 * x * x).collect();
        let pi = DensityGrid::from_fn(g, |x| (-0.5 * x * x).exp()).unwrap();
        let f_pi = pi.free_energy(&psi, 1.0);
        assert_abs_diff_eq!(f_pi, -0.5 * (2.0 * std::f64::consts::PI).ln(), epsilon = 0.01);

        let rho = DensityGrid::gaussian(g, 0.0, 1.44).unwrap();
        let f_rho = rho.free_energy(&psi, 1.0);
        let expect = 0.72 - 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * 1.44).ln();
        assert_abs_diff_eq!(f_rho, expect, epsilon = 0.01);
        assert!(f_rho >= f_pi);
    }

    #[test]
    fn renormalize_paths() {
        let g = grid();
        let rho = DensityGrid::gaussian(g, 0.5, 0.7).unwrap();
        let again = renormalize(&g, rho.values().to_vec()).unwrap();
        for (a, b) in rho.values().iter().zip(again.values()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-15);
        }
        let doubled: Vec<f64> = rho.values().iter().map(|v| 2.0 * v).collect();
        let back = renormalize(&g, doubled).unwrap();
        for (a, b) in rho.values().iter().zip(back.values()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-15);
        }
        assert!(matches!(renormalize(&g, vec![0.0; g.len()]), Err(Error::AllMassLost)));
    }

    #[test]
    fn checked_constructor_rejects_bad_input() {
        let g = grid();
        let mut v = DensityGrid::gaussian(g, 0.0, 1.0).unwrap().into_values();
        v[0] = 1e-3;
        assert!(DensityGrid::new(g, v.clone()).is_err());
        v[0] = 0.0;
        v[10] = -1e-3;
        assert!(DensityGrid::new(g, v).is_err());
        assert!(DensityGrid::new(g, vec![0.0; 5]).is_err());
    }

    #[test]
    fn generic_over_f32() {
        let g = Grid1D::<f32>::new(5.0, 200).unwrap();
        let rho = DensityGrid::<f32>::gaussian(g, 0.0, 1.0).unwrap();
        assert!((rho.mass() - 1.0).abs() < 1e-5);
        assert!((rho.second_moment() - 1.0).abs() < 0.01);
    }

    #[test]
    fn csv_layouts() {
        let g = Grid1D::new(1.0, 4).unwrap();
        let rho = DensityGrid::from_fn(g, |x: f64| 1.0 - x.abs()).unwrap();
        let mut buf = Vec::new();
        rho.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x,value"));
        assert_eq!(lines.next(), Some("-1.0000000000000000e0,0.0000000000000000e0"));
        assert_eq!(text.lines().count(), 6);

        let tg = TimeGrid::new(1.0, 2).unwrap();
        let f = FieldGrid::zeros(g, tg);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,-1.0000000000000000e0,"));
        assert_eq!(text.lines().count(), 4);
        let mut buf = Vec::new();
        f.write_long_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 3 * 5);
    }
}
