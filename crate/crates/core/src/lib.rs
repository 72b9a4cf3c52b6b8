//! Federated learning simulator with client unlearning: feature-level
//! contrastive unlearning, frequency-domain memory preservation, FedAvg
//! post-training, baselines and evaluation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod federation;
pub mod nn;
pub mod pipeline;
pub mod seed;
pub mod spectral;
pub mod tensor;
pub mod unlearn;

pub use checkpoint::{Checkpoint, TrainingProvenance};
pub use config::RunConfig;
pub use data::Dataset;
pub use error::{Error, Result};
pub use eval::MetricsReport;
pub use federation::{ClientState, FederationConfig, GlobalModel};
pub use nn::{Activation, Architecture, NetworkModel};
pub use pipeline::Experiment;
pub use tensor::{ParamEntry, ParamKind, ParameterSet, Tensor};
pub use unlearn::UnlearnConfig;
