//! Frozen empirical approximation of the mean-field limit law.
//!
//! Picard iteration on a large ensemble: pass 0 freezes the measure argument
//! to the driftless system, pass `j` to the paths of pass `j - 1`. Each pass
//! draws from a fresh random scope.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{simulate_independent, InitSampler};
use crate::ensemble::PathEnsemble;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::law::{FrozenLaw, Tabulation};
use crate::model::ModelSpec;
use crate::rng::RngPlan;

/// Paths simulated per independent block; fixed so results never depend on
/// the worker count.
const BLOCK: usize = 256;

pub const LAW_FILE: &str = "law.bin";
pub const META_FILE: &str = "law.json";

/// Picard iteration settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardConfig {
    pub n_picard: usize,
    /// Early stop once the drift change falls to this level.
    pub tolerance: f64,
    pub min_n_ref: usize,
    pub tabulation: Tabulation,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            n_picard: 3,
            tolerance: 2e-3,
            min_n_ref: 1000,
            tabulation: Tabulation::default(),
        }
    }
}

/// Sidecar written next to a persisted law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawMetadata {
    pub model_id: String,
    pub model_hash: String,
    pub master_seed: u64,
    pub scope: String,
    pub n_ref: usize,
    pub n_picard_requested: usize,
    pub n_picard_used: usize,
    pub diagnostics: Vec<f64>,
    pub converged: bool,
    pub tolerance: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub n_steps: usize,
}

/// An immutable frozen law with its construction record.
#[derive(Debug)]
pub struct ReferenceLaw {
    law: FrozenLaw,
    meta: LawMetadata,
}

/// Hex SHA-256 of the model descriptor.
pub fn model_hash(model: &ModelSpec) -> String {
    hex::encode(Sha256::digest(model.descriptor.as_bytes()))
}

impl ReferenceLaw {
    pub fn frozen(&self) -> &FrozenLaw {
        &self.law
    }

    pub fn ensemble(&self) -> &PathEnsemble {
        self.law.ensemble()
    }

    pub fn grid(&self) -> &TimeGrid {
        self.law.grid()
    }

    pub fn n_ref(&self) -> usize {
        self.meta.n_ref
    }

    pub fn n_picard(&self) -> usize {
        self.meta.n_picard_used
    }

    /// Sup over steps of the mean squared drift change, one entry per pass.
    pub fn diagnostics(&self) -> &[f64] {
        &self.meta.diagnostics
    }

    pub fn converged(&self) -> bool {
        self.meta.converged
    }

    pub fn metadata(&self) -> &LawMetadata {
        &self.meta
    }

    /// Writes `law.bin` and `law.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.ensemble()
            .write_binary(BufWriter::new(File::create(dir.join(LAW_FILE))?))?;
        let text = serde_json::to_string_pretty(&self.meta)?;
        std::fs::write(dir.join(META_FILE), text + "\n")?;
        Ok(())
    }

    /// Reloads a persisted law, refusing one built for a different model.
    pub fn load(dir: &Path, model: &ModelSpec, tabulation: Tabulation) -> Result<Self> {
        let meta: LawMetadata = serde_json::from_str(&std::fs::read_to_string(dir.join(META_FILE))?)?;
        let hash = model_hash(model);
        if meta.model_hash != hash {
            return Err(Error::Config(format!(
                "persisted law belongs to model {} ({}), not {} ({hash})",
                meta.model_id, meta.model_hash, model.id
            )));
        }
        let ensemble = PathEnsemble::read_binary(BufReader::new(File::open(dir.join(LAW_FILE))?))?;
        if ensemble.n_paths() != meta.n_ref || ensemble.grid().n_steps() != meta.n_steps {
            return Err(Error::Format("law file does not match its metadata".into()));
        }
        let law = FrozenLaw::new(model, Arc::new(ensemble), tabulation)?;
        Ok(Self { law, meta })
    }
}

/// `n` independent paths with measure frozen to `law`, in fixed blocks.
pub fn simulate_blocks(
    model: &ModelSpec,
    law: &FrozenLaw,
    n: usize,
    grid: &TimeGrid,
    init: &dyn InitSampler,
    plan: &RngPlan,
) -> Result<PathEnsemble> {
    let blocks: Vec<PathEnsemble> = (0..n.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let size = BLOCK.min(n - b * BLOCK);
            simulate_independent(model, size, law, grid, init, &plan.replication(b as u64))
        })
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(n * grid.n_points() * model.state_dim);
    for b in &blocks {
        values.extend_from_slice(b.values());
    }
    PathEnsemble::from_values(n, model.state_dim, *grid, values)
}

/// `sup_k mean_i |B(x_i; before) - B(x_i; after)|^2` over the paths of `at`.
fn drift_change(before: &FrozenLaw, after: &FrozenLaw, at: &PathEnsemble, m: usize) -> f64 {
    (0..at.grid().n_steps())
        .into_par_iter()
        .map(|k| {
            let mut a = vec![0.0; m];
            let mut b = vec![0.0; m];
            let mut sum = 0.0;
            for i in 0..at.n_paths() {
                let p = at.prefix(i, k);
                before.eval(k, p, &mut a);
                after.eval(k, p, &mut b);
                sum += a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
            }
            sum / at.n_paths() as f64
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .fold(0.0, f64::max)
}

pub fn build_reference_law(
    model: &ModelSpec,
    n_ref: usize,
    grid: &TimeGrid,
    init: &dyn InitSampler,
    plan: &RngPlan,
    config: &PicardConfig,
) -> Result<ReferenceLaw> {
    model.validate()?;
    if config.n_picard == 0 {
        return Err(Error::Config("n_picard must be at least 1".into()));
    }
    if n_ref < config.min_n_ref {
        return Err(Error::Config(format!(
            "reference law needs at least {} paths, got {n_ref}",
            config.min_n_ref
        )));
    }
    let driftless = model.without_interaction();
    let zero_law = FrozenLaw::new(&driftless, Arc::new(PathEnsemble::zeros(1, model.state_dim, *grid)?), Tabulation::Exact)?;
    let start = simulate_blocks(&driftless, &zero_law, n_ref, grid, init, &plan.scoped("driftless"))?;
    let mut current = FrozenLaw::new(model, Arc::new(start), config.tabulation)?;

    let mut diagnostics = Vec::new();
    let mut converged = false;
    for j in 0..config.n_picard {
        let paths = simulate_blocks(model, &current, n_ref, grid, init, &plan.scoped(&format!("picard-{j}")))?;
        let next = FrozenLaw::new(model, Arc::new(paths), config.tabulation)?;
        let change = drift_change(&current, &next, next.ensemble(), model.noise_dim);
        log::debug!("picard pass {j}: drift change {change:.3e}");
        diagnostics.push(change);
        current = next;
        if change <= config.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "reference law for {} did not reach tolerance {} after {} passes (last change {:.3e})",
            model.id,
            config.tolerance,
            config.n_picard,
            diagnostics.last().copied().unwrap_or(f64::NAN)
        );
    }
    let meta = LawMetadata {
        model_id: model.id.clone(),
        model_hash: model_hash(model),
        master_seed: plan.master_seed(),
        scope: plan.scope().to_string(),
        n_ref,
        n_picard_requested: config.n_picard,
        n_picard_used: diagnostics.len(),
        diagnostics,
        converged,
        tolerance: config.tolerance,
        t_start: grid.t_start(),
        t_end: grid.t_end(),
        n_steps: grid.n_steps(),
    };
    Ok(ReferenceLaw { law: current, meta })
}
