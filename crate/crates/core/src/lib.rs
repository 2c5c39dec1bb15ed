//! Strictly convex linear-growth variational models for denoising and
//! inpainting vector-valued images.
//!
//! The numerical core is generic over [`Scalar`] (`f32`/`f64`); the aliases
//! below fix the common `f64` instantiation.

pub mod cli;
pub mod densities;
pub mod diagnostics;
pub mod energy;
pub mod error;
pub mod grid;
pub mod oracle;
pub mod scalar;
pub mod solver;

pub use densities::{DataTermProfile, Density, DensityKind};
pub use energy::{EnergyBreakdown, Problem};
pub use error::{Error, Result};
pub use grid::{GradientField, ImageField, Mask};
pub use scalar::Scalar;
pub use solver::{SolverConfig, SolverTrace};

pub type Density64 = Density<f64>;
pub type DataTerm64 = DataTermProfile<f64>;
pub type Image64 = ImageField<f64>;
pub type Gradient64 = GradientField<f64>;
pub type Problem64 = Problem<f64>;
pub type SolverConfig64 = SolverConfig<f64>;
pub type SolverTrace64 = SolverTrace<f64>;

pub type Density32 = Density<f32>;
pub type Image32 = ImageField<f32>;
pub type Problem32 = Problem<f32>;
pub type SolverConfig32 = SolverConfig<f32>;
