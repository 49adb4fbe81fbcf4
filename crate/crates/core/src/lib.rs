//! Spectral Galerkin laboratory for structurally damped plate and wave
//! equations driven by a random point force and a distributed noise channel.

pub mod admissibility;
pub mod analysis;
pub mod coefficients;
pub mod error;
pub mod gamma;
pub mod integrator;
pub mod linalg;
pub mod noise;
pub mod rational;
pub mod real;
pub mod rng;
pub mod runner;
pub mod scenario;
pub mod semigroup;
pub mod spectral;

pub use error::{Error, Result};
pub use real::Real;

/// Concrete `f64` aliases for the generic core types.
pub type BoxDomain64 = spectral::BoxDomain<f64>;
pub type Mode64 = spectral::Mode<f64>;
pub type Truncation64 = spectral::SpectralTruncation<f64>;
pub type Space64 = spectral::SpectralSpace<f64>;
pub type ModeMatrix64 = semigroup::ModeMatrix<f64>;
