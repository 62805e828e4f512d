//! Monte Carlo laboratory for mean-field interacting particle systems.
//!
//! The crate simulates N-particle systems and their frozen-law McKean
//! counterparts, estimates Girsanov relative entropies between the two, turns
//! them into total-variation bounds, and checks the concentration inequalities
//! that control the `sqrt(k / N)` propagation-of-chaos rate.

pub mod concentration;
pub mod engine;
pub mod ensemble;
pub mod error;
pub mod experiments;
pub mod girsanov;
pub mod grid;
pub mod law;
pub mod metrics;
pub mod model;
pub mod models;
pub mod reference;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
