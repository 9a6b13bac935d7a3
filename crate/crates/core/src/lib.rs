//! Uncertainty estimation for graph neural networks with stochastic
//! centering (anchoring), plus baselines and safety metrics.

pub mod anchoring;
pub mod autodiff;
pub mod baselines;
pub mod config;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod motif;
pub mod optim;
pub mod report;
pub mod rng;
pub mod split;
pub mod tensor;
pub mod train;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use graph::{batch_graphs, Graph, GraphBatch};
pub use model::{AnchorVariant, Backbone, GnnConfig, GnnModel, ReadoutKind};
pub use rng::RngStream;
pub use tensor::Tensor;
