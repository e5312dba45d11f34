//! # wgf-core
//!
//! Numerical laboratory for Wasserstein-proximal (JKO) iterations whose
//! potential is estimated from Langevin observations.
//!
//! The crate is organised bottom-up:
//!
//! | Module | Purpose |
//! |--------|---------|
//! | [`grid`] | uniform grids, grid densities and fields, trapezoid functionals |
//! | [`potential`] | parametric potentials, Gibbs densities, the CLT direction field |
//! | [`sampler`] | exact OU and Euler-Maruyama Langevin paths, batch sets |
//! | [`estimators`] | offline and online estimating-equation solvers, long-run variance |
//! | [`transport`] | 1D Wasserstein-2 and banded optimal couplings |
//! | [`jko`] | flux-descent JKO steps and outer trajectories |
//! | [`fokker_planck`] | Crank-Nicolson Fokker-Planck solver |
//! | [`limit_fields`] | limiting fields V, V1, V2 and the closed-form OU oracle |
//! | [`bures_wasserstein`] | Gaussian-restricted flow and its limit ODE/SDE |
//! | [`experiments`] | config-driven runners, scaled differences, artifacts |
//!
//! Grid-based kernels are generic over [`Real`] (`f32` or `f64`); the
//! aliases at the crate root fix the scalar to `f64`, which is what the
//! statistical modules use throughout.

pub mod bures_wasserstein;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod fokker_planck;
pub mod grid;
pub mod jko;
pub mod limit_fields;
pub mod potential;
pub mod quadrature;
pub mod rng;
pub mod sampler;
pub mod stats;
pub mod transport;
pub mod tridiag;

pub use error::{Error, Result};

use std::fmt::{Debug, Display, LowerExp};

/// Floating-point scalar used by the grid kernels.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssign
    + std::iter::Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` constant.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable")
    }

    #[inline]
    fn to64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub type Grid = grid::Grid1D<f64>;
pub type TimeGrid = grid::TimeGrid<f64>;
pub type Density = grid::DensityGrid<f64>;
pub type Field = grid::FieldGrid<f64>;
pub type DriftField = grid::DriftField<f64>;
pub type Coupling = transport::Coupling<f64>;
pub type JkoConfig = jko::JkoConfig<f64>;
pub type JkoTrajectory = jko::JkoTrajectory<f64>;

pub type GridF32 = grid::Grid1D<f32>;
pub type DensityF32 = grid::DensityGrid<f32>;
pub type FieldF32 = grid::FieldGrid<f32>;
