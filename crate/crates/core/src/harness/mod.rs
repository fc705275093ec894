//! Experiment configuration, nondimensionalization, sweeps and output
//! formats.

pub mod config;
pub mod fit;
pub mod io;
pub mod nondim;
pub mod sweep;
pub mod validate;

pub use config::{ExperimentConfig, Observable, SweepAxis};
pub use fit::{fit_scaling, ScalingFit};
pub use nondim::{nondimensionalize, Nondimensional, PhysicalParams};
pub use sweep::{sweep, SweepRow};
