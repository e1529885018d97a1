//! Multi-armed bandit active learning for multi-fingered grasp synthesis.

pub mod active;
pub mod arms;
pub mod bandit;
pub mod cli;
pub mod domain;
pub mod error;
pub mod experiment;
pub mod inference;
pub mod metrics;
pub mod net;
pub mod model;
pub mod optim;
pub mod persist;
pub mod world;

pub use error::{Error, Result};
