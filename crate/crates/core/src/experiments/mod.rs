//! Reproducible experiment orchestration.
//!
//! A run is one [`ExperimentConfig`]: a flat TOML file, optionally overridden
//! from the command line. All randomness derives from its master seed, and
//! outputs do not depend on the worker count.

pub mod config;
pub mod output;
pub mod studies;

use std::path::PathBuf;

pub use config::{ExperimentConfig, InitKind, ModelKind, Overrides, StudyKind};
pub use studies::{run_study, StudyOutcome};

use crate::error::{Error, Result};

/// Environment variable read for the worker count.
pub const WORKERS_ENV: &str = "CHAOSLAB_WORKERS";

/// Default output directory.
pub const DEFAULT_OUT: &str = "out";

/// Runs the study on a dedicated pool of `cfg.workers` threads (all cores
/// when unset).
pub fn run(cfg: &ExperimentConfig) -> Result<StudyOutcome> {
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.workers {
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| run_study(cfg, &out))
}
