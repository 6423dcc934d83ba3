//! Benchmark objectives: noisy synthetic functions on the unit box and the
//! Lorenz parameter-estimation problem.

mod lorenz;
mod synthetic;

pub use lorenz::{
    lorenz_cost_sample, rk4_step, LorenzParams, LorenzProblem, LorenzTrack, OdeState,
};
pub use synthetic::{SyntheticKind, SyntheticProblem};
