//! Drift deviations, Girsanov log-densities and relative-entropy estimators.
//!
//! `dB^i_k = B(t_k, X^i; mu^N_k) - B(t_k, X^i; law_k)` compares the drift under
//! the particles' own empirical measure with the drift under the frozen law.
//! Along McKean copies the stored record follows
//! `log Z = -sum dB . dW - 1/2 sum |dB|^2 h`.

use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{simulate_independent_observed, simulate_interacting_observed, InitSampler, StepContext, StepObserver};
use crate::ensemble::PathEnsemble;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::law::FrozenLaw;
use crate::model::ModelSpec;
use crate::rng::{ReplicationStreams, RngPlan};
use crate::stats::mean_se;

/// Largest log-likelihood ratio whose exponential is kept in `Z log Z` averages.
const MAX_LOG_Z: f64 = 700.0;

/// `dB` for every particle and step `k < n_steps`, stored `(particle, step, m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftDeviationSeries {
    n_particles: usize,
    m: usize,
    grid: TimeGrid,
    values: Vec<f64>,
}

impl DriftDeviationSeries {
    pub fn new(n_particles: usize, m: usize, grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_particles * grid.n_steps() * m {
            return Err(Error::ShapeMismatch(format!(
                "expected {} deviations, got {}",
                n_particles * grid.n_steps() * m,
                values.len()
            )));
        }
        if let Some(p) = values.iter().position(|v| !v.is_finite()) {
            let per = grid.n_steps() * m;
            return Err(Error::NonFinite {
                what: "drift deviation",
                path: p / per,
                step: (p % per) / m,
            });
        }
        Ok(Self {
            n_particles,
            m,
            grid,
            values,
        })
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn noise_dim(&self) -> usize {
        self.m
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, particle: usize, step: usize) -> &[f64] {
        let o = (particle * self.grid.n_steps() + step) * self.m;
        &self.values[o..o + self.m]
    }

    /// Largest Euclidean norm over all particles and steps.
    pub fn max_norm(&self) -> f64 {
        self.values
            .chunks_exact(self.m)
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Step range `[k0, k1)` of the window `[t0, (t0 + delta) ∧ T]`.
    pub fn window(&self, t0: f64, delta: f64) -> Result<(usize, usize)> {
        step_window(&self.grid, t0, delta)
    }

    /// `sum_{k0 <= k < k1} |dB^i_k|^2 h` for one particle.
    pub fn window_energy(&self, particle: usize, k0: usize, k1: usize) -> f64 {
        let h = self.grid.step();
        (k0..k1)
            .map(|k| self.get(particle, k).iter().map(|x| x * x).sum::<f64>() * h)
            .sum()
    }

    /// [`Self::window_energy`] for every particle.
    pub fn window_energies(&self, k0: usize, k1: usize) -> Vec<f64> {
        (0..self.n_particles).map(|i| self.window_energy(i, k0, k1)).collect()
    }
}

/// Step range `[k0, k1)` covering `[t0, min(t0 + delta, T)]`.
///
/// Both ends must fall on grid points (the right end after truncation at `T`).
pub fn step_window(grid: &TimeGrid, t0: f64, delta: f64) -> Result<(usize, usize)> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("window length must be positive, got {delta}")));
    }
    if t0 < grid.t_start() || t0 >= grid.t_end() {
        return Err(Error::InvalidArgument(format!(
            "window start {t0} outside [{}, {})",
            grid.t_start(),
            grid.t_end()
        )));
    }
    let k0 = grid
        .index_of(t0)
        .ok_or_else(|| Error::GridMismatch(format!("window start {t0} is not a grid point")))?;
    let end = (t0 + delta).min(grid.t_end());
    let k1 = grid
        .index_of(end)
        .ok_or_else(|| Error::GridMismatch(format!("window end {end} is not a grid point")))?;
    if k1 <= k0 {
        return Err(Error::InvalidArgument("window is shorter than one step".into()));
    }
    Ok((k0, k1))
}

/// Recomputes `dB` from stored paths.
///
/// The ensemble's own running empirical measure is compared with `law`; the
/// ensemble grid must be the law grid or a coarsening of it.
pub fn drift_deviation(ensemble: &PathEnsemble, model: &ModelSpec, law: &FrozenLaw) -> Result<DriftDeviationSeries> {
    let ratio = ensemble.grid().refinement_ratio(law.grid())?;
    let grid = *ensemble.grid();
    let (n, m) = (ensemble.n_paths(), model.noise_dim);
    let mut values = vec![0.0; n * grid.n_steps() * m];
    let mut own = vec![0.0; m];
    let mut frozen = vec![0.0; m];
    for k in 0..grid.n_steps() {
        let cloud = ensemble.snapshot(k);
        let running = model.running_drift(grid.time(k), k, ensemble, &cloud);
        for i in 0..n {
            let path = ensemble.prefix(i, k);
            running.eval(path, &mut own);
            law.eval(k * ratio, path, &mut frozen);
            let o = (i * grid.n_steps() + k) * m;
            for c in 0..m {
                values[o + c] = own[c] - frozen[c];
            }
        }
    }
    DriftDeviationSeries::new(n, m, grid, values)
}

/// Girsanov sums for one replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GirsanovRecord {
    /// `S = sum_i sum_k dB^i_k . dW^i_k`.
    pub stoch_integral: f64,
    /// `Q = 1/2 sum_i sum_k |dB^i_k|^2 h`.
    pub quad_term: f64,
    /// `-S - Q`.
    pub log_z: f64,
}

impl GirsanovRecord {
    fn from_parts(stoch_integral: f64, quad_term: f64) -> Self {
        Self {
            stoch_integral,
            quad_term,
            log_z: -stoch_integral - quad_term,
        }
    }

    pub fn z(&self) -> f64 {
        self.log_z.exp()
    }

    /// `S - Q`: log density of the interacting law against the product
    /// McKean law, evaluated along McKean copies driven by `dW`.
    pub fn log_likelihood_ratio(&self) -> f64 {
        self.stoch_integral - self.quad_term
    }
}

/// [`GirsanovRecord`] over all steps; `increments` are `(particle, step, m)`.
pub fn log_density(dev: &DriftDeviationSeries, increments: &[f64], h: f64) -> Result<GirsanovRecord> {
    log_density_window(dev, increments, h, 0, dev.grid.n_steps())
}

/// [`GirsanovRecord`] restricted to steps `k0 <= k < k1`.
pub fn log_density_window(
    dev: &DriftDeviationSeries,
    increments: &[f64],
    h: f64,
    k0: usize,
    k1: usize,
) -> Result<GirsanovRecord> {
    if increments.len() != dev.values.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} increments for {} deviations",
            increments.len(),
            dev.values.len()
        )));
    }
    if k0 > k1 || k1 > dev.grid.n_steps() {
        return Err(Error::InvalidArgument(format!("bad step range [{k0}, {k1})")));
    }
    let (steps, m) = (dev.grid.n_steps(), dev.m);
    let mut s = 0.0;
    let mut q = 0.0;
    for i in 0..dev.n_particles {
        let lo = (i * steps + k0) * m;
        let hi = (i * steps + k1) * m;
        for (b, w) in dev.values[lo..hi].iter().zip(&increments[lo..hi]) {
            s += b * w;
            q += b * b;
        }
    }
    Ok(GirsanovRecord::from_parts(s, 0.5 * q * h))
}

/// Collects `dB` and `dW` while McKean copies are simulated.
struct DeviationRecorder {
    n: usize,
    m: usize,
    steps: usize,
    deviations: Vec<f64>,
    increments: Vec<f64>,
    own: Vec<f64>,
}

impl StepObserver for DeviationRecorder {
    fn observe(&mut self, ctx: &StepContext<'_>) -> Result<()> {
        let running = ctx.model_running();
        let m = self.m;
        for i in 0..self.n {
            running.eval(ctx.ensemble.prefix(i, ctx.step), &mut self.own);
            let o = (i * self.steps + ctx.step) * m;
            for c in 0..m {
                let v = self.own[c] - ctx.drift[i * m + c];
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        what: "drift deviation",
                        path: i,
                        step: ctx.step,
                    });
                }
                self.deviations[o + c] = v;
                self.increments[o + c] = ctx.increments[i * m + c];
            }
        }
        Ok(())
    }
}

/// Output of [`mckean_deviation`].
#[derive(Debug, Clone)]
pub struct McKeanRun {
    pub ensemble: PathEnsemble,
    pub deviations: DriftDeviationSeries,
    /// Brownian increments, `(particle, step, m)`.
    pub increments: Vec<f64>,
}

/// Simulates `n` McKean copies against `law` and records `dB` along them.
pub fn mckean_deviation(
    model: &ModelSpec,
    law: &FrozenLaw,
    n: usize,
    grid: &TimeGrid,
    init: &dyn InitSampler,
    streams: &ReplicationStreams,
) -> Result<McKeanRun> {
    let m = model.noise_dim;
    let mut rec = DeviationRecorder {
        n,
        m,
        steps: grid.n_steps(),
        deviations: vec![0.0; n * grid.n_steps() * m],
        increments: vec![0.0; n * grid.n_steps() * m],
        own: vec![0.0; m],
    };
    let ensemble = simulate_independent_observed(model, n, law, grid, init, streams, &mut rec)?;
    let deviations = DriftDeviationSeries::new(n, m, *grid, rec.deviations)?;
    Ok(McKeanRun {
        ensemble,
        deviations,
        increments: rec.increments,
    })
}

/// Window statistics of `dB` along McKean copies.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRun {
    /// `int_window |dB^i|^2 dt` per particle.
    pub energies: Vec<f64>,
    /// Girsanov sums restricted to the window.
    pub record: GirsanovRecord,
}

/// Records `dB` only for steps in `[k0, k1)`.
struct WindowRecorder {
    k0: usize,
    k1: usize,
    h: f64,
    own: Vec<f64>,
    energies: Vec<f64>,
    s: f64,
    q: f64,
}

impl StepObserver for WindowRecorder {
    fn observe(&mut self, ctx: &StepContext<'_>) -> Result<()> {
        if ctx.step < self.k0 || ctx.step >= self.k1 {
            return Ok(());
        }
        let running = ctx.model_running();
        let m = self.own.len();
        for i in 0..self.energies.len() {
            running.eval(ctx.ensemble.prefix(i, ctx.step), &mut self.own);
            let mut e = 0.0;
            for c in 0..m {
                let v = self.own[c] - ctx.drift[i * m + c];
                self.s += v * ctx.increments[i * m + c];
                e += v * v;
            }
            if !e.is_finite() {
                return Err(Error::NonFinite {
                    what: "drift deviation",
                    path: i,
                    step: ctx.step,
                });
            }
            self.energies[i] += e * self.h;
            self.q += e;
        }
        Ok(())
    }
}

/// McKean copies on `[t_start, min(t0 + delta, T)]` with `dB` recorded on the
/// window `[t0, min(t0 + delta, T)]` only.
#[allow(clippy::too_many_arguments)]
pub fn mckean_window(
    model: &ModelSpec,
    law: &FrozenLaw,
    n: usize,
    grid: &TimeGrid,
    init: &dyn InitSampler,
    streams: &ReplicationStreams,
    t0: f64,
    delta: f64,
) -> Result<WindowRun> {
    let (k0, k1) = step_window(grid, t0, delta)?;
    let short = grid.prefix(k1)?;
    let mut rec = WindowRecorder {
        k0,
        k1,
        h: grid.step(),
        own: vec![0.0; model.noise_dim],
        energies: vec![0.0; n],
        s: 0.0,
        q: 0.0,
    };
    simulate_independent_observed(model, n, law, &short, init, streams, &mut rec)?;
    Ok(WindowRun {
        energies: rec.energies,
        record: GirsanovRecord::from_parts(rec.s, 0.5 * rec.q * grid.step()),
    })
}

/// Accumulates `sum_i sum_k |dB|^2 h` along the interacting system.
struct QuadraticAccumulator<'a> {
    law: &'a FrozenLaw,
    ratio: usize,
    m: usize,
    frozen: Vec<f64>,
    sum: f64,
}

impl StepObserver for QuadraticAccumulator<'_> {
    fn observe(&mut self, ctx: &StepContext<'_>) -> Result<()> {
        let m = self.m;
        let n = ctx.cloud.len();
        let mut step_sum = 0.0;
        for i in 0..n {
            self.law.eval(ctx.step * self.ratio, ctx.ensemble.prefix(i, ctx.step), &mut self.frozen);
            for c in 0..m {
                let d = ctx.drift[i * m + c] - self.frozen[c];
                step_sum += d * d;
            }
        }
        if !step_sum.is_finite() {
            return Err(Error::NonFinite {
                what: "drift deviation",
                path: 0,
                step: ctx.step,
            });
        }
        self.sum += step_sum * ctx.h;
        Ok(())
    }
}

/// Runs the interacting system once and returns it with
/// `1/2 sum_i int |dB|^2 dt` along its paths.
pub fn interacting_with_entropy(
    model: &ModelSpec,
    law: &FrozenLaw,
    n: usize,
    grid: &TimeGrid,
    init: &dyn InitSampler,
    streams: &ReplicationStreams,
) -> Result<(PathEnsemble, f64)> {
    let ratio = grid.refinement_ratio(law.grid())?;
    let mut acc = QuadraticAccumulator {
        law,
        ratio,
        m: model.noise_dim,
        frozen: vec![0.0; model.noise_dim],
        sum: 0.0,
    };
    let ensemble = simulate_interacting_observed(model, n, grid, init, streams, &mut acc)?;
    Ok((ensemble, 0.5 * acc.sum))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Quadratic,
    Zlogz,
}

impl EstimatorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::Quadratic => "quadratic",
            EstimatorKind::Zlogz => "zlogz",
        }
    }
}

/// Monte Carlo estimate of `H(P^{N,N} | P^{N,infinity})` in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntropyEstimate {
    pub h_hat: f64,
    pub std_err: f64,
    pub n_replications: usize,
    pub kind: EstimatorKind,
    /// Replications dropped because `Z` overflowed.
    pub exclusions: usize,
}

impl EntropyEstimate {
    /// Projection `(k / N) h` onto `k` particles by subadditivity.
    pub fn project(&self, k: usize, n: usize) -> Result<(f64, f64)> {
        if k == 0 || k > n {
            return Err(Error::InvalidArgument(format!("need 1 <= k <= N, got k = {k}, N = {n}")));
        }
        let r = k as f64 / n as f64;
        Ok((r * self.h_hat, r * self.std_err))
    }
}

fn warn_small_law(law: &FrozenLaw, n: usize) {
    if law.ensemble().n_paths() < 16 * n {
        log::warn!(
            "reference law has {} paths, fewer than 16 N = {}; entropy carries extra law bias",
            law.ensemble().n_paths(),
            16 * n
        );
    }
}

/// Per-replication values of `1/2 sum_i int |dB|^2 dt` along the interacting system.
pub fn entropy_quadratic_samples(
    model: &ModelSpec,
    law: &FrozenLaw,
    n: usize,
    grid: &TimeGrid,
    init: &dyn InitSampler,
    plan: &RngPlan,
    n_replications: usize,
) -> Result<Vec<f64>> {
    warn_small_law(law, n);
    (0..n_replications)
        .into_par_iter()
        .map(|r| interacting_with_entropy(model, law, n, grid, init, &plan.replication(r as u64)).map(|x| x.1))
        .collect()
}

/// Quadratic entropy estimator; nonnegative by construction.
pub fn entropy_quadratic(
    model: &ModelSpec,
    law: &FrozenLaw,
    n: usize,
    grid: &TimeGrid,
    init: &dyn InitSampler,
    plan: &RngPlan,
    n_replications: usize,
) -> Result<EntropyEstimate> {
    let samples = entropy_quadratic_samples(model, law, n, grid, init, plan, n_replications)?;
    Ok(summarize_quadratic(&samples))
}

pub fn summarize_quadratic(samples: &[f64]) -> EntropyEstimate {
    let s = mean_se(samples);
    EntropyEstimate {
        h_hat: s.mean,
        std_err: s.std_err,
        n_replications: samples.len(),
        kind: EstimatorKind::Quadratic,
        exclusions: 0,
    }
}

/// Girsanov records along McKean copies, one per replication.
pub fn mckean_records(
    model: &ModelSpec,
    law: &FrozenLaw,
    n: usize,
    grid: &TimeGrid,
    init: &dyn InitSampler,
    plan: &RngPlan,
    n_replications: usize,
) -> Result<Vec<GirsanovRecord>> {
    (0..n_replications)
        .into_par_iter()
        .map(|r| {
            let run = mckean_deviation(model, law, n, grid, init, &plan.replication(r as u64))?;
            log_density(&run.deviations, &run.increments, grid.step())
        })
        .collect()
}

/// `E[Z log Z]` cross-check along McKean copies with `log Z = S - Q`.
///
/// Heavy tailed; replications whose `Z` would overflow are excluded and counted.
pub fn entropy_zlogz(
    model: &ModelSpec,
    law: &FrozenLaw,
    n: usize,
    grid: &TimeGrid,
    init: &dyn InitSampler,
    plan: &RngPlan,
    n_replications: usize,
) -> Result<EntropyEstimate> {
    warn_small_law(law, n);
    let records = mckean_records(model, law, n, grid, init, plan, n_replications)?;
    Ok(summarize_zlogz(&records))
}

pub fn summarize_zlogz(records: &[GirsanovRecord]) -> EntropyEstimate {
    let mut kept = Vec::with_capacity(records.len());
    let mut exclusions = 0;
    for r in records {
        let l = r.log_likelihood_ratio();
        if l > MAX_LOG_Z || !l.is_finite() {
            exclusions += 1;
        } else {
            kept.push(l.exp() * l);
        }
    }
    if exclusions > 0 {
        log::warn!("Z log Z: excluded {exclusions} of {} replications on overflow", records.len());
    }
    let s = mean_se(&kept);
    EntropyEstimate {
        h_hat: s.mean,
        std_err: s.std_err,
        n_replications: kept.len(),
        kind: EstimatorKind::Zlogz,
        exclusions,
    }
}
