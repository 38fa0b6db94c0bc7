//! Inference for human coin-flip experiments: informed binomial Bayes
//! factors, hierarchical logistic models with model averaging over random
//! effects, power-law learning curves, normal-moment sensitivity analyses
//! and a generative simulator.

pub mod binomial;
pub mod bma;
pub mod cli;
pub mod data;
pub mod error;
pub mod hier;
pub mod learning;
pub mod mcmc;
pub mod numerics;
pub mod published;
pub mod sensitivity;
pub mod simulator;

pub use error::{Error, Result};
