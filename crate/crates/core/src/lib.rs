//! Training and weight-forensics engine.
//!
//! Trains populations of small fully-connected, convolutional and
//! transformer-encoder classifiers under a fixed protocol, then characterizes
//! the converged weights: per-group mean/σ, density estimates, node strength,
//! accuracy grouping and t-SNE projection of weight vectors.

pub mod analysis;
pub mod data;
pub mod models;
pub mod nn;
pub mod trainer;
pub mod tsne;
