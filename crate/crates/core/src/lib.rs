//! Pseudo-spectral simulation of the velocity form of the stochastic
//! primitive equations on `T^2 x (-1, 1)`, with Monte Carlo tooling for
//! moment functionals, stopping times and time-averaged measures.

pub mod checkpoint;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod functionals;
pub mod grid;
pub mod integrator;
pub mod noise;
pub mod report;
pub mod rng;
pub mod spectral_ops;
pub mod stats;
pub mod stopping;
pub mod transform;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{Grid, PhysicalField, SpectralField, SpectralScalar};
