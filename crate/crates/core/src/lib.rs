//! Simulation of ferrofluid suspensions whose particles carry a
//! flipping magnetic spin, together with the effective fast-flip limit
//! and the diagnostics used to compare the two.

pub mod effective;
pub mod error;
pub mod field;
pub mod geometry;
pub mod harness;
pub mod magnetics;
pub mod particles;
pub mod quadrature;
pub mod pdmp;
pub mod stokes;
pub mod transport;

pub use error::{Error, Result};
pub use field::FieldSpec;
pub use geometry::{Mat3, Spin, UnitVector, Vec3};
pub use magnetics::{ShapeCoupling, SpinRateParams};
pub use particles::{BoxDomain, Hypotheses, ParticleConfiguration};
pub use stokes::{DriftMode, MobilityConstants};
