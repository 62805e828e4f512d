//! Left-point Euler–Maruyama integration of interacting and frozen-law systems.
//!
//! One step reads
//! `x_{k+1} = x_k + c(t_k, x) h + A(t_k, x) (B(t_k, x; mu_k) h + dW_k)`.
//! Increments come from per-particle counter-based streams, so results do
//! not depend on how work is split across threads.

use std::fmt;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ensemble::{PathEnsemble, StateCloud};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::law::FrozenLaw;
use crate::model::{ModelSpec, StepDrift};
use crate::rng::{standard_normal, BrownianStream, ReplicationStreams};

/// Particle counts at or above this are stepped in parallel within a step.
const PARTICLE_PAR_THRESHOLD: usize = 512;

/// Initial law.
pub trait InitSampler: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn sample(&self, rng: &mut ChaCha8Rng, out: &mut [f64]);
}

/// Deterministic start.
#[derive(Debug, Clone)]
pub struct PointMass(pub Vec<f64>);

impl InitSampler for PointMass {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn sample(&self, _rng: &mut ChaCha8Rng, out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
}

/// Independent `N(mean_i, std^2)` coordinates.
#[derive(Debug, Clone)]
pub struct GaussianInit {
    pub mean: Vec<f64>,
    pub std: f64,
}

impl GaussianInit {
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: 1.0,
        }
    }
}

impl InitSampler for GaussianInit {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        for (o, m) in out.iter_mut().zip(&self.mean) {
            *o = m + self.std * standard_normal(rng);
        }
    }
}

/// Independent uniform coordinates on `[lo, hi]`.
#[derive(Debug, Clone)]
pub struct UniformInit {
    pub dim: usize,
    pub lo: f64,
    pub hi: f64,
}

impl InitSampler for UniformInit {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        use rand::Rng;
        for o in out.iter_mut() {
            *o = self.lo + (self.hi - self.lo) * rng.random::<f64>();
        }
    }
}

/// Everything known about one completed Euler step.
pub struct StepContext<'a> {
    pub model: &'a ModelSpec,
    pub step: usize,
    pub t: f64,
    pub h: f64,
    /// Paths filled through `step` (step `step + 1` is not yet written).
    pub ensemble: &'a PathEnsemble,
    /// States at `step`.
    pub cloud: &'a StateCloud,
    /// `B` values used for each particle, `n x m`.
    pub drift: &'a [f64],
    /// Brownian increments of each particle, `n x m`.
    pub increments: &'a [f64],
}

impl<'a> StepContext<'a> {
    /// `B(t_k, .; mu)` under the running empirical measure of the ensemble.
    pub fn model_running(&self) -> Box<dyn StepDrift + 'a> {
        self.model.running_drift(self.t, self.step, self.ensemble, self.cloud)
    }
}

/// Hook called once per step, after the new states are computed.
pub trait StepObserver {
    fn observe(&mut self, ctx: &StepContext<'_>) -> Result<()>;
}

/// Observer that does nothing.
pub struct NoObserver;

impl StepObserver for NoObserver {
    fn observe(&mut self, _ctx: &StepContext<'_>) -> Result<()> {
        Ok(())
    }
}

/// Advances every path of `ensemble` from `step` to `step + 1`.
///
/// `measure` supplies `B(t_k, .; mu)`; `increments` is `n x m`. Returns the
/// new states. Non-finite coefficients abort with the offending particle.
pub fn euler_step(
    model: &ModelSpec,
    ensemble: &PathEnsemble,
    step: usize,
    measure: &dyn StepDrift,
    increments: &[f64],
) -> Result<StateCloud> {
    let n = ensemble.n_paths();
    if step >= ensemble.grid().n_steps() {
        return Err(Error::InvalidArgument(format!(
            "step {step} is past the last step {}",
            ensemble.grid().n_steps()
        )));
    }
    if increments.len() != n * model.noise_dim {
        return Err(Error::ShapeMismatch(format!(
            "expected {} increments, got {}",
            n * model.noise_dim,
            increments.len()
        )));
    }
    let mut next = StateCloud::zeros(n, model.state_dim);
    let mut b = vec![0.0; n * model.noise_dim];
    step_into(model, ensemble, step, measure, increments, &mut next, &mut b)?;
    Ok(next)
}

fn step_into(
    model: &ModelSpec,
    ensemble: &PathEnsemble,
    step: usize,
    measure: &dyn StepDrift,
    increments: &[f64],
    next: &mut StateCloud,
    b_out: &mut [f64],
) -> Result<()> {
    let (d, m) = (model.state_dim, model.noise_dim);
    let grid = ensemble.grid();
    let t = grid.time(step);
    let h = grid.step();
    let n = ensemble.n_paths();

    let advance = |i: usize, x_next: &mut [f64], b: &mut [f64]| -> Result<()> {
        let mut c = [0.0f64; 16];
        let mut a = [0.0f64; 64];
        let mut c_heap;
        let mut a_heap;
        let c: &mut [f64] = if d <= 16 {
            &mut c[..d]
        } else {
            c_heap = vec![0.0; d];
            &mut c_heap
        };
        let a: &mut [f64] = if d * m <= 64 {
            &mut a[..d * m]
        } else {
            a_heap = vec![0.0; d * m];
            &mut a_heap
        };
        let path = ensemble.prefix(i, step);
        measure.eval(path, b);
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "measure drift B",
                path: i,
                step,
            });
        }
        model.eval_drift(t, path, c);
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "drift c",
                path: i,
                step,
            });
        }
        model.eval_diffusion(t, path, a);
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "diffusion A",
                path: i,
                step,
            });
        }
        let x = path.current();
        let dw = &increments[i * m..(i + 1) * m];
        for r in 0..d {
            let mut acc = 0.0;
            for col in 0..m {
                acc += a[r * m + col] * (b[col] * h + dw[col]);
            }
            x_next[r] = x[r] + c[r] * h + acc;
        }
        if x_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "state",
                path: i,
                step: step + 1,
            });
        }
        Ok(())
    };

    if n >= PARTICLE_PAR_THRESHOLD && rayon::current_num_threads() > 1 {
        let results: Vec<Result<()>> = next
            .data_mut()
            .par_chunks_mut(d)
            .zip(b_out.par_chunks_mut(m))
            .enumerate()
            .map(|(i, (x, b))| advance(i, x, b))
            .collect();
        results.into_iter().collect::<Result<()>>()
    } else {
        for (i, (x, b)) in next
            .data_mut()
            .chunks_exact_mut(d)
            .zip(b_out.chunks_exact_mut(m))
            .enumerate()
        {
            advance(i, x, b)?;
        }
        Ok(())
    }
}

enum Source<'a> {
    Running,
    Frozen { law: &'a FrozenLaw, ratio: usize },
}

fn check_inputs(model: &ModelSpec, n: usize, init: &dyn InitSampler) -> Result<()> {
    model.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one particle".into()));
    }
    if init.dim() != model.state_dim {
        return Err(Error::ShapeMismatch(format!(
            "initial law has dimension {}, model has {}",
            init.dim(),
            model.state_dim
        )));
    }
    Ok(())
}

fn simulate(
    model: &ModelSpec,
    n: usize,
    grid: &TimeGrid,
    init: &dyn InitSampler,
    streams: &ReplicationStreams,
    source: Source<'_>,
    observer: &mut dyn StepObserver,
) -> Result<PathEnsemble> {
    check_inputs(model, n, init)?;
    let (d, m) = (model.state_dim, model.noise_dim);
    let mut ensemble = PathEnsemble::zeros(n, d, *grid)?;
    for i in 0..n {
        let mut rng = streams.init(i);
        let x0 = ensemble.state_mut(i, 0);
        init.sample(&mut rng, x0);
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "initial state",
                path: i,
                step: 0,
            });
        }
    }
    let mut brownian: Vec<BrownianStream> = (0..n).map(|i| streams.brownian(i)).collect();
    let sqrt_h = grid.step().sqrt();
    let mut cloud = ensemble.snapshot(0);
    let mut next = StateCloud::zeros(n, d);
    let mut incr = vec![0.0; n * m];
    let mut b = vec![0.0; n * m];

    for k in 0..grid.n_steps() {
        for (stream, dw) in brownian.iter_mut().zip(incr.chunks_exact_mut(m)) {
            stream.fill(sqrt_h, dw);
        }
        {
            let t = grid.time(k);
            match &source {
                Source::Running => {
                    let measure = model.running_drift(t, k, &ensemble, &cloud);
                    step_into(model, &ensemble, k, measure.as_ref(), &incr, &mut next, &mut b)?;
                }
                Source::Frozen { law, ratio } => {
                    step_into(model, &ensemble, k, law.at_step(k * ratio), &incr, &mut next, &mut b)?;
                }
            }
            observer.observe(&StepContext {
                model,
                step: k,
                t,
                h: grid.step(),
                ensemble: &ensemble,
                cloud: &cloud,
                drift: &b,
                increments: &incr,
            })?;
        }
        ensemble.set_step(k + 1, &next);
        std::mem::swap(&mut cloud, &mut next);
    }
    Ok(ensemble)
}

/// `n` particles driven by their own running empirical measure.
pub fn simulate_interacting(
    model: &ModelSpec,
    n: usize,
    grid: &TimeGrid,
    init: &dyn InitSampler,
    streams: &ReplicationStreams,
) -> Result<PathEnsemble> {
    simulate(model, n, grid, init, streams, Source::Running, &mut NoObserver)
}

/// As [`simulate_interacting`], calling `observer` after every step.
pub fn simulate_interacting_observed(
    model: &ModelSpec,
    n: usize,
    grid: &TimeGrid,
    init: &dyn InitSampler,
    streams: &ReplicationStreams,
    observer: &mut dyn StepObserver,
) -> Result<PathEnsemble> {
    simulate(model, n, grid, init, streams, Source::Running, observer)
}

/// `n` independent copies with the measure argument frozen to `law`.
pub fn simulate_independent(
    model: &ModelSpec,
    n: usize,
    law: &FrozenLaw,
    grid: &TimeGrid,
    init: &dyn InitSampler,
    streams: &ReplicationStreams,
) -> Result<PathEnsemble> {
    simulate_independent_observed(model, n, law, grid, init, streams, &mut NoObserver)
}

/// As [`simulate_independent`], calling `observer` after every step.
pub fn simulate_independent_observed(
    model: &ModelSpec,
    n: usize,
    law: &FrozenLaw,
    grid: &TimeGrid,
    init: &dyn InitSampler,
    streams: &ReplicationStreams,
    observer: &mut dyn StepObserver,
) -> Result<PathEnsemble> {
    let ratio = grid.refinement_ratio(law.grid())?;
    if law.ensemble().dim() != model.state_dim || law.noise_dim() != model.noise_dim {
        return Err(Error::Config("frozen law was built for a different model".into()));
    }
    simulate(model, n, grid, init, streams, Source::Frozen { law, ratio }, observer)
}

/// The increments a simulation with these streams used, `(particle, step, m)`.
pub fn regenerate_increments(streams: &ReplicationStreams, n: usize, grid: &TimeGrid, m: usize) -> Vec<f64> {
    let sqrt_h = grid.step().sqrt();
    let steps = grid.n_steps();
    let mut out = vec![0.0; n * steps * m];
    for (i, block) in out.chunks_exact_mut(steps * m).enumerate() {
        let mut s = streams.brownian(i);
        for dw in block.chunks_exact_mut(m) {
            s.fill(sqrt_h, dw);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Diffusion, Drift, Interaction};
    use crate::rng::RngPlan;
    use crate::ensemble::PathPrefix;

    fn base(d: usize) -> ModelSpec {
        ModelSpec {
            id: "test".into(),
            descriptor: "test".into(),
            state_dim: d,
            noise_dim: d,
            drift: Drift::Zero,
            diffusion: Diffusion::Identity,
            interaction: Interaction::None,
            kernel_bound: Some(0.0),
        }
    }

    struct Fixed(Vec<f64>);

    impl StepDrift for Fixed {
        fn eval(&self, _path: PathPrefix<'_>, out: &mut [f64]) {
            out.copy_from_slice(&self.0);
        }
    }

    #[test]
    fn pure_noise_step() {
        let m = base(2);
        let grid = TimeGrid::horizon(1.0, 10).unwrap();
        let e = PathEnsemble::zeros(1, 2, grid).unwrap();
        let next = euler_step(&m, &e, 0, &Fixed(vec![0.0, 0.0]), &[0.3, -0.1]).unwrap();
        assert_eq!(next.atom(0), &[0.3, -0.1]);
    }

    #[test]
    fn deterministic_drift_step() {
        let mut m = base(1);
        m.drift = Drift::Constant(vec![1.0]);
        m.diffusion = Diffusion::Constant(vec![0.0]);
        let grid = TimeGrid::horizon(1.0, 2).unwrap();
        let mut e = PathEnsemble::zeros(1, 1, grid).unwrap();
        e.state_mut(0, 0)[0] = 2.0;
        let next = euler_step(&m, &e, 0, &Fixed(vec![0.0]), &[0.7]).unwrap();
        assert_eq!(next.atom(0), &[2.5]);
    }

    #[test]
    fn non_finite_drift_aborts() {
        let m = base(1);
        let grid = TimeGrid::horizon(1.0, 2).unwrap();
        let e = PathEnsemble::zeros(1, 1, grid).unwrap();
        let err = euler_step(&m, &e, 0, &Fixed(vec![f64::NAN]), &[0.0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { path: 0, step: 0, .. }));
        assert!(euler_step(&m, &e, 2, &Fixed(vec![0.0]), &[0.0]).is_err());
        assert!(euler_step(&m, &e, 0, &Fixed(vec![0.0]), &[0.0, 1.0]).is_err());
    }

    #[test]
    fn single_particle_runs() {
        let m = base(1);
        let grid = TimeGrid::horizon(1.0, 20).unwrap();
        let s = RngPlan::new(1).replication(0);
        let e = simulate_interacting(&m, 1, &grid, &GaussianInit::standard(1), &s).unwrap();
        assert_eq!(e.n_paths(), 1);
        let incr = regenerate_increments(&s, 1, &grid, 1);
        for k in 0..20 {
            let dx = e.state(0, k + 1)[0] - e.state(0, k)[0];
            assert!((dx - incr[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn init_dimension_checked() {
        let m = base(2);
        let grid = TimeGrid::horizon(1.0, 2).unwrap();
        let s = RngPlan::new(1).replication(0);
        assert!(simulate_interacting(&m, 3, &grid, &GaussianInit::standard(1), &s).is_err());
        assert!(simulate_interacting(&m, 0, &grid, &GaussianInit::standard(2), &s).is_err());
    }
}
