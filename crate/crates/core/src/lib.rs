//! Bayesian reticula: soft binary trees of sigmoid gates with Beta-Bernoulli
//! leaves, grown by unexplained potential and trained by gradient ascent on a
//! lower bound of the marginal likelihood.

pub mod builder;
pub mod data;
pub mod error;
pub mod gradient;
pub mod likelihood;
pub mod model_file;
pub mod numerics;
pub mod optimizer;
mod parallel;
pub mod polar;
pub mod reticulum;
pub mod surface;

pub use builder::{fit, ConstructionTrace, TraceEvent, TrainConfig};
pub use data::Dataset;
pub use error::{Error, Result};
pub use model_file::ModelFile;
pub use reticulum::{BetaPrior, LeafStats, NodeId, NodeWeights, Reticulum};
pub use surface::SurfaceGrid;
