//! Federated generative mixture inference.
//!
//! Clients hold data drawn from unknown mixtures of a few shared inherent
//! distributions. A server maintains one VAE density estimator and one expert
//! classifier per inherent distribution; clients split their local data by
//! VAE affinity, train the matching models on each split, and the server
//! aggregates the updates with split-size weights.

pub mod classifier;
pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod federation;
pub mod mixture;
pub mod nn;
pub mod report;
pub mod rng;
pub mod vae;

pub use error::{Error, Result};
pub use rng::SeedTree;
