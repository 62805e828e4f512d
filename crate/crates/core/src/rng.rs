//! Counter-based random streams.
//!
//! Every random draw is addressed by `(master_seed, scope, replication,
//! particle, kind)`. The first three select a ChaCha key, the last two select a
//! ChaCha stream, so draws never depend on which worker runs which task.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const KIND_BROWNIAN: u64 = 0;
const KIND_INIT: u64 = 1;

/// Root of all randomness for one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngPlan {
    master_seed: u64,
    scope: String,
}

impl RngPlan {
    pub fn new(master_seed: u64) -> Self {
        Self {
            master_seed,
            scope: String::new(),
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn scope(&self) -> &str {
        &self.scope
    }

    /// An independent sub-plan, e.g. one per study, per N or per Picard pass.
    pub fn scoped(&self, label: &str) -> Self {
        Self {
            master_seed: self.master_seed,
            scope: format!("{}/{}", self.scope, label),
        }
    }

    pub fn replication(&self, replication: u64) -> ReplicationStreams {
        let mut hasher = Sha256::new();
        hasher.update(self.master_seed.to_le_bytes());
        hasher.update((self.scope.len() as u64).to_le_bytes());
        hasher.update(self.scope.as_bytes());
        hasher.update(replication.to_le_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        ReplicationStreams {
            key,
            permutation: None,
        }
    }
}

/// Streams for all particles of one replication.
#[derive(Debug, Clone)]
pub struct ReplicationStreams {
    key: [u8; 32],
    permutation: Option<Arc<Vec<usize>>>,
}

impl ReplicationStreams {
    /// Relabels streams: particle `i` draws from the stream of particle `perm[i]`.
    pub fn permuted(mut self, perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidArgument("stream relabelling is not a permutation".into()));
            }
        }
        self.permutation = Some(Arc::new(perm));
        Ok(self)
    }

    fn stream_id(&self, particle: usize) -> u64 {
        match &self.permutation {
            Some(p) => p[particle] as u64,
            None => particle as u64,
        }
    }

    fn rng(&self, particle: usize, kind: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream((self.stream_id(particle) << 1) | kind);
        rng
    }

    /// Brownian increments of one particle, drawn step after step.
    pub fn brownian(&self, particle: usize) -> BrownianStream {
        BrownianStream {
            rng: self.rng(particle, KIND_BROWNIAN),
        }
    }

    /// Generator for a particle's initial condition.
    pub fn init(&self, particle: usize) -> ChaCha8Rng {
        self.rng(particle, KIND_INIT)
    }

    /// Generic stream for auxiliary sampling (inequality checks and the like).
    pub fn aux(&self, index: usize) -> ChaCha8Rng {
        self.rng(index, KIND_BROWNIAN)
    }
}

/// Sequential source of `N(0, h I)` increments for one particle.
#[derive(Debug, Clone)]
pub struct BrownianStream {
    rng: ChaCha8Rng,
}

impl BrownianStream {
    /// Fills `out` with independent `N(0, h)` draws.
    pub fn fill(&mut self, sqrt_h: f64, out: &mut [f64]) {
        for o in out {
            let z: f64 = self.rng.sample(StandardNormal);
            *o = sqrt_h * z;
        }
    }
}

/// Standard normal draw from any generator.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}
