//! Federated-learning simulator for silo-partitioned clinical data.
//!
//! The crate models a cohort spread across hospital silos whose raw
//! samples must stay local. It provides:
//!
//! - [`nn`]: a dense ReLU/sigmoid network with manual backprop and
//!   L2-regularized cross-entropy, fully deterministic in `f64`;
//! - [`training`]: seeded minibatch SGD with optional layer freezing;
//! - [`federated`]: sample-size-weighted federated averaging;
//! - [`fadl`]: the two-stage variant — federated first layer, locally
//!   specialized upper layers, routed per silo at prediction time;
//! - [`metrics`]: tie-aware AUCROC / AUCPR;
//! - [`data`]: synthetic heterogeneous cohorts, stratified splits, CSV;
//! - [`audit`]: counters proving no silo read another silo's data;
//! - [`seeding`]: the derived RNG streams that make all of the above
//!   reproducible bit for bit, independent of thread count.

pub mod audit;
pub mod data;
pub mod error;
pub mod fadl;
pub mod federated;
pub mod hashing;
pub mod metrics;
pub mod nn;
pub mod seeding;
pub mod training;

pub use error::{Error, Result};
