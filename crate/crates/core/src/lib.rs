//! Data-consistent stochastic inversion for a scalar quantity of interest.
//!
//! Given a prior on a box-shaped parameter domain, a map `Q` to one output
//! and an observed distribution of `Q`, the solution reweights the prior by
//! the ratio of observed to predicted output densities. The crate provides
//! the map and measure models, pushforward estimation, the cell solver,
//! continuity diagnostics and the experiment runner behind the `scp` binary.

pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod map_model;
pub mod measures;
pub mod pushforward;
pub mod rng;
pub mod solver;

pub use error::{ErrorCategory, Result, ScpError};
pub use map_model::{BoxDomain, MapRegistry, MapSpec, QoiMap};
pub use measures::{DensitySpec, Measure, SampleSet};
pub use pushforward::{BinnedDensity, OutputPartition};
pub use solver::{InputGrid, ScpSolution};
