//! Efficient frontiers for Mean-Variance and Mean-CVaR portfolio problems,
//! computed by training feedforward policies on simulated market paths.

pub mod analytic;
pub mod autodiff;
pub mod cli;
pub mod config;
pub mod error;
pub mod frontier;
pub mod linalg;
pub mod market;
pub mod network;
pub mod objectives;
pub mod portfolio;
pub mod strategy;

pub use error::{Error, Result};
