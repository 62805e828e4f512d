//! Measure drift frozen to a fixed path ensemble.
//!
//! For pair kernels that read a single coordinate, `x -> B(t_k, x; law)` is
//! tabulated once per step on a uniform node grid and interpolated with
//! 4-point Lagrange cubics. Points outside the table fall back to the exact
//! average over the ensemble.

use std::sync::Arc;

use rayon::prelude::*;

use crate::ensemble::{PathEnsemble, PathPrefix, StateCloud};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::model::{
    FunctionalStepDrift, Interaction, ModelSpec, PairKernel, PairwiseStepDrift, Precondition, Reads,
    StepDrift, ZeroStepDrift,
};

/// How frozen pair-kernel drifts are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tabulation {
    /// Average over all atoms at every call.
    Exact,
    /// Interpolate from a table with this many nodes when the kernel allows it.
    Tabulated { nodes: usize },
}

impl Default for Tabulation {
    fn default() -> Self {
        Tabulation::Tabulated { nodes: 512 }
    }
}

/// `B(t_k, ., law)` for every step of the law's grid.
pub struct FrozenLaw {
    ensemble: Arc<PathEnsemble>,
    steps: Vec<Box<dyn StepDrift>>,
    noise_dim: usize,
}

impl std::fmt::Debug for FrozenLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FrozenLaw")
            .field("n_paths", &self.ensemble.n_paths())
            .field("grid", self.ensemble.grid())
            .finish()
    }
}

impl FrozenLaw {
    pub fn new(model: &ModelSpec, ensemble: Arc<PathEnsemble>, tabulation: Tabulation) -> Result<Self> {
        model.validate()?;
        if ensemble.dim() != model.state_dim {
            return Err(Error::ShapeMismatch(format!(
                "law has dimension {}, model expects {}",
                ensemble.dim(),
                model.state_dim
            )));
        }
        let grid = *ensemble.grid();
        let steps: Vec<Box<dyn StepDrift>> = match &model.interaction {
            Interaction::None => (0..grid.n_points())
                .map(|_| Box::new(ZeroStepDrift) as Box<dyn StepDrift>)
                .collect(),
            Interaction::Pairwise { kernel, precondition } => (0..grid.n_points())
                .into_par_iter()
                .map(|k| {
                    let cloud = ensemble.snapshot(k);
                    pair_step(grid.time(k), kernel, precondition, &cloud, tabulation)
                })
                .collect(),
            Interaction::Functional(f) => (0..grid.n_points())
                .map(|k| {
                    Box::new(FunctionalStepDrift {
                        t: grid.time(k),
                        step: k,
                        functional: f.clone(),
                        ensemble: ensemble.clone(),
                    }) as Box<dyn StepDrift>
                })
                .collect(),
        };
        Ok(Self {
            ensemble,
            steps,
            noise_dim: model.noise_dim,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        self.ensemble.grid()
    }

    pub fn ensemble(&self) -> &Arc<PathEnsemble> {
        &self.ensemble
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    /// Evaluator at step `k` of the law's own grid.
    pub fn at_step(&self, k: usize) -> &dyn StepDrift {
        self.steps[k].as_ref()
    }

    /// Evaluates `B(t_k, path; law)` where `k` indexes the law's grid.
    pub fn eval(&self, k: usize, path: PathPrefix<'_>, out: &mut [f64]) {
        self.steps[k].eval(path, out)
    }
}

fn pair_step(
    t: f64,
    kernel: &Arc<dyn PairKernel>,
    precondition: &Precondition,
    cloud: &StateCloud,
    tabulation: Tabulation,
) -> Box<dyn StepDrift> {
    let exact = PairwiseStepDrift::new(t, kernel.clone(), precondition.clone(), cloud);
    match (tabulation, kernel.reads()) {
        (Tabulation::Tabulated { nodes }, Reads::Coordinate(c)) if nodes >= 8 => {
            Box::new(TabulatedStepDrift::build(exact, cloud, c, nodes))
        }
        _ => Box::new(exact),
    }
}

struct TabulatedStepDrift {
    coord: usize,
    lo: f64,
    inv_dx: f64,
    n_nodes: usize,
    kdim: usize,
    /// Node-major table of the averaged kernel.
    values: Vec<f64>,
    identity: bool,
    exact: PairwiseStepDrift,
}

impl TabulatedStepDrift {
    fn build(exact: PairwiseStepDrift, cloud: &StateCloud, coord: usize, n_nodes: usize) -> Self {
        let ys = cloud.coordinate(coord);
        let (min, max) = ys
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
        let pad = 0.25 * (max - min) + 1.0;
        let (lo, hi) = (min - pad, max + pad);
        let dx = (hi - lo) / (n_nodes - 1) as f64;
        let kdim = exact.kernel_dim();
        let mut values = vec![0.0; n_nodes * kdim];
        let mut x = vec![0.0; cloud.dim()];
        for (j, row) in values.chunks_exact_mut(kdim).enumerate() {
            x[coord] = lo + j as f64 * dx;
            exact.kernel_mean(&x, row);
        }
        let identity = matches!(exact.precondition(), Precondition::Identity);
        Self {
            coord,
            lo,
            inv_dx: 1.0 / dx,
            n_nodes,
            kdim,
            values,
            identity,
            exact,
        }
    }
}

impl StepDrift for TabulatedStepDrift {
    fn eval(&self, path: PathPrefix<'_>, out: &mut [f64]) {
        let x = path.current()[self.coord];
        let u = (x - self.lo) * self.inv_dx;
        let fi = u.floor();
        if !(fi >= 1.0 && fi + 2.0 <= (self.n_nodes - 1) as f64) {
            self.exact.eval(path, out);
            return;
        }
        let i = fi as usize;
        let s = u - fi;
        let w = [
            -s * (s - 1.0) * (s - 2.0) / 6.0,
            (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0,
            -(s + 1.0) * s * (s - 2.0) / 2.0,
            (s + 1.0) * s * (s - 1.0) / 6.0,
        ];
        let base = (i - 1) * self.kdim;
        let mut mean = [0.0f64; 8];
        let mut heap;
        let mean: &mut [f64] = if self.kdim <= 8 {
            &mut mean[..self.kdim]
        } else {
            heap = vec![0.0; self.kdim];
            &mut heap
        };
        for (c, m) in mean.iter_mut().enumerate() {
            let v = &self.values;
            *m = w[0] * v[base + c]
                + w[1] * v[base + self.kdim + c]
                + w[2] * v[base + 2 * self.kdim + c]
                + w[3] * v[base + 3 * self.kdim + c];
        }
        if self.identity {
            out.copy_from_slice(mean);
        } else {
            self.exact.finish(path, mean, out);
        }
    }
}
