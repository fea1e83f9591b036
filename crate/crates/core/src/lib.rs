//! Deep Ritz method laboratory for Neumann elliptic problems on the unit
//! cube: ReLU² networks with exact derivatives, exact weight-level
//! constructions, manufactured problems, Monte Carlo losses and errors,
//! a trainer, numeric generalisation bounds and an experiment harness.

pub mod bounds;
pub mod constructions;
pub mod error;
pub mod harness;
pub mod network;
pub mod objective;
pub mod problems;
pub mod sampling;
pub mod trainer;

pub use error::{Error, Result};
pub use network::{ActivationKind, Architecture, LayerActivation, Network};
pub use problems::{make_cosine_problem, make_quadratic_problem, Problem};
pub use sampling::SampleSet;
pub use trainer::TrainConfig;
