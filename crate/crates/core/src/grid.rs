//! Uniform time grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when deciding whether a time falls on a grid point.
const ALIGN_TOL: f64 = 1e-9;

/// Uniform grid `t_k = t_start + k * h`, `k = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_start: f64,
    t_end: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t_start.is_finite() && t_end.is_finite()) {
            return Err(Error::InvalidArgument("grid bounds must be finite".into()));
        }
        if t_start < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "t_start must be >= 0, got {t_start}"
            )));
        }
        if t_end <= t_start {
            return Err(Error::InvalidArgument(format!(
                "t_end ({t_end}) must exceed t_start ({t_start})"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidArgument("n_steps must be positive".into()));
        }
        Ok(Self {
            t_start,
            t_end,
            n_steps,
        })
    }

    /// Grid on `[0, t_end]`.
    pub fn horizon(t_end: f64, n_steps: usize) -> Result<Self> {
        Self::new(0.0, t_end, n_steps)
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_points(&self) -> usize {
        self.n_steps + 1
    }

    /// Step size `h`.
    pub fn step(&self) -> f64 {
        (self.t_end - self.t_start) / self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.t_end
        } else {
            self.t_start + k as f64 * self.step()
        }
    }

    /// Index of the grid point equal to `t`, if `t` is aligned.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let h = self.step();
        let x = (t - self.t_start) / h;
        let k = x.round();
        if k < 0.0 || k > self.n_steps as f64 || (x - k).abs() > ALIGN_TOL * x.abs().max(1.0) {
            return None;
        }
        Some(k as usize)
    }

    /// The first `n_steps` steps of this grid, with the same step size.
    pub fn prefix(&self, n_steps: usize) -> Result<Self> {
        if n_steps == 0 || n_steps > self.n_steps {
            return Err(Error::InvalidArgument(format!(
                "prefix length {n_steps} outside 1..={}",
                self.n_steps
            )));
        }
        Ok(Self {
            t_start: self.t_start,
            t_end: self.time(n_steps),
            n_steps,
        })
    }

    /// Ratio `r` such that step `k` of `self` is step `k * r` of `finer`.
    ///
    /// `finer` must start at the same time, have a step dividing ours, and
    /// extend at least as far.
    pub fn refinement_ratio(&self, finer: &TimeGrid) -> Result<usize> {
        let tol = ALIGN_TOL * self.t_end.abs().max(1.0);
        if (self.t_start - finer.t_start).abs() > tol {
            return Err(Error::GridMismatch(format!(
                "start times differ: {} vs {}",
                self.t_start, finer.t_start
            )));
        }
        let ratio = self.step() / finer.step();
        let r = ratio.round();
        if r < 1.0 || (ratio - r).abs() > ALIGN_TOL * ratio {
            return Err(Error::GridMismatch(format!(
                "step {} is not a multiple of {}",
                self.step(),
                finer.step()
            )));
        }
        if self.t_end > finer.t_end + tol {
            return Err(Error::GridMismatch(format!(
                "grid ends at {} beyond reference horizon {}",
                self.t_end, finer.t_end
            )));
        }
        Ok(r as usize)
    }
}
