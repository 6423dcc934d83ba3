//! Delaunay-based optimization of functions that can only be measured as
//! finite-time averages of a stochastic or chaotic process.
//!
//! The [`optimizer`] module drives the search; the remaining modules supply
//! its building blocks. Commonly used types are re-exported at the crate
//! root.

pub mod geometry;
pub mod grid;
pub mod optimizer;
pub mod problems;
pub mod regression;
pub mod sampling;
pub mod search;

pub use geometry::{Point, Triangulation};
pub use grid::{GridKey, GridLevel};
pub use optimizer::{
    records_table, run, run_delta_dogs, run_from, Algorithm, AlphaDogsParams, Branch,
    DeltaDogsParams, IterationRecord, OptimizerError, OptimizerState, Stopping, Tolerance,
};
pub use problems::{LorenzProblem, SyntheticKind, SyntheticProblem};
pub use regression::{RegressionModel, WeightedDataset};
pub use sampling::{EvaluatedPoint, StochasticObjective, UncertaintyModel, UqFit};
