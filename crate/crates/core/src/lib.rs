//! Optimal execution of large orders with limit orders.
//!
//! The crate bundles everything needed to train and evaluate a hybrid
//! continuous/discrete limit-price agent:
//!
//! - [`lob`]: market-data types, tick/percentage conversions, CSV ingestion and
//!   a synthetic order-book generator.
//! - [`sim`]: a deterministic replay environment with latency, order caps,
//!   schedule catch-up and terminal settlement.
//! - [`dist`]: Gaussian, softmax, discretized-Gaussian and Gaussian-and-softmax
//!   policy distributions with analytic gradients.
//! - [`nets`]: a small reverse-mode autodiff tape, the sequence encoder and the
//!   actor/critic heads.
//! - [`agent`]: the two-stage action mechanism and the baseline policy kinds.
//! - [`trainer`]: day-grouped rollouts, advantage estimation and PPO updates.
//! - [`metrics`]: schedules, baseline strategies and the evaluation metrics.

pub mod agent;
pub mod cli;
pub mod config;
pub mod dist;
pub mod error;
pub mod lob;
pub mod metrics;
pub mod nets;
pub mod rng;
pub mod sim;
pub mod trainer;

pub use error::{Error, Result};
