//! Coefficient triples `(c, A, B)` of a mean-field SDE
//!
//! `dX = c(t, X) dt + A(t, X) (B(t, X; mu_t) dt + dW)`
//!
//! All functionals see the path only through a [`PathPrefix`] ending at the
//! current step, so they cannot look ahead.

use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use crate::ensemble::{PathEnsemble, PathPrefix, StateCloud};
use crate::error::{Error, Result};

/// A non-anticipative functional of `(t, path prefix)` with vector output.
pub trait PathField: Send + Sync + fmt::Debug {
    fn out_len(&self) -> usize;
    fn eval(&self, t: f64, path: PathPrefix<'_>, out: &mut [f64]);
}

/// Drift `c`.
#[derive(Debug, Clone)]
pub enum Drift {
    Zero,
    Constant(Vec<f64>),
    Field(Arc<dyn PathField>),
}

/// Diffusion `A`, a `d x m` matrix stored row-major.
#[derive(Debug, Clone)]
pub enum Diffusion {
    Identity,
    Constant(Vec<f64>),
    Field(Arc<dyn PathField>),
}

/// Which parts of the states a pair kernel depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reads {
    All,
    /// Only coordinate `c` of both arguments.
    Coordinate(usize),
}

/// Interaction kernel `b(t, x, y)` between current states.
pub trait PairKernel: Send + Sync + fmt::Debug {
    fn out_dim(&self) -> usize;
    fn eval(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]);

    fn reads(&self) -> Reads {
        Reads::All
    }

    /// Optional fast evaluator of `x -> mean_j b(t, x, y_j)` over a fixed cloud.
    fn prepare(&self, _t: f64, _cloud: &StateCloud) -> Option<Box<dyn CloudIntegral>> {
        None
    }
}

/// Precomputed average of a kernel over a cloud of atoms.
pub trait CloudIntegral: Send + Sync {
    fn integrate(&self, x: &[f64], out: &mut [f64]);
}

/// A general measure functional `B(t, path; mu)` over empirical path laws.
pub trait MeasureFunctional: Send + Sync + fmt::Debug {
    fn out_dim(&self) -> usize;
    fn eval(&self, t: f64, path: PathPrefix<'_>, measure: &EmpiricalMeasure<'_>, out: &mut [f64]);
}

/// Equal-weight empirical law of the paths of an ensemble, seen up to `step`.
#[derive(Debug, Clone, Copy)]
pub struct EmpiricalMeasure<'a> {
    ensemble: &'a PathEnsemble,
    step: usize,
}

impl<'a> EmpiricalMeasure<'a> {
    pub fn new(ensemble: &'a PathEnsemble, step: usize) -> Self {
        Self { ensemble, step }
    }

    pub fn len(&self) -> usize {
        self.ensemble.n_paths()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn atom(&self, j: usize) -> PathPrefix<'a> {
        self.ensemble.prefix(j, self.step)
    }
}

/// Left factor applied to the averaged kernel: `B = P(t, x) * mean_j b(t, x, y_j)`.
#[derive(Debug, Clone)]
pub enum Precondition {
    Identity,
    /// Constant `rows x cols` matrix, row-major.
    Constant { rows: usize, cols: usize, data: Vec<f64> },
    /// State dependent matrix of shape `rows x cols`.
    Field { rows: usize, cols: usize, field: Arc<dyn PathField> },
}

impl Precondition {
    fn apply(&self, t: f64, path: PathPrefix<'_>, v: &[f64], out: &mut [f64]) {
        match self {
            Precondition::Identity => out.copy_from_slice(v),
            Precondition::Constant { cols, data, .. } => matvec(data, *cols, v, out),
            Precondition::Field { rows, cols, field } => {
                let mut m = vec![0.0; rows * cols];
                field.eval(t, path, &mut m);
                matvec(&m, *cols, v, out);
            }
        }
    }

    fn shape(&self, kernel_dim: usize) -> (usize, usize) {
        match self {
            Precondition::Identity => (kernel_dim, kernel_dim),
            Precondition::Constant { rows, cols, .. } | Precondition::Field { rows, cols, .. } => {
                (*rows, *cols)
            }
        }
    }
}

fn matvec(m: &[f64], cols: usize, v: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(v) {
            acc += a * b;
        }
        *o = acc;
    }
}

/// Measure dependence `B`.
#[derive(Debug, Clone)]
pub enum Interaction {
    None,
    Pairwise {
        kernel: Arc<dyn PairKernel>,
        precondition: Precondition,
    },
    Functional(Arc<dyn MeasureFunctional>),
}

/// `B(t_k, ., mu)` for one fixed time and measure.
pub trait StepDrift: Send + Sync {
    fn eval(&self, path: PathPrefix<'_>, out: &mut [f64]);
}

/// The coefficient triple with declared dimensions.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub id: String,
    /// Canonical parameter string; hashed to identify persisted laws.
    pub descriptor: String,
    pub state_dim: usize,
    pub noise_dim: usize,
    pub drift: Drift,
    pub diffusion: Diffusion,
    pub interaction: Interaction,
    /// `sup |sigma^{-1} b|`, when known analytically.
    pub kernel_bound: Option<f64>,
}

impl ModelSpec {
    /// Checks that all declared shapes agree.
    pub fn validate(&self) -> Result<()> {
        let (d, m) = (self.state_dim, self.noise_dim);
        if d == 0 || m == 0 {
            return Err(Error::Model("dimensions must be positive".into()));
        }
        match &self.drift {
            Drift::Constant(c) if c.len() != d => {
                return Err(Error::Model(format!("drift has length {}, expected {d}", c.len())))
            }
            Drift::Field(f) if f.out_len() != d => {
                return Err(Error::Model(format!("drift field has length {}, expected {d}", f.out_len())))
            }
            _ => {}
        }
        match &self.diffusion {
            Diffusion::Identity if d != m => {
                return Err(Error::Model(format!("identity diffusion needs d == m, got {d} and {m}")))
            }
            Diffusion::Constant(a) if a.len() != d * m => {
                return Err(Error::Model(format!("diffusion has {} entries, expected {}", a.len(), d * m)))
            }
            Diffusion::Field(f) if f.out_len() != d * m => {
                return Err(Error::Model(format!("diffusion field has {} entries, expected {}", f.out_len(), d * m)))
            }
            _ => {}
        }
        match &self.interaction {
            Interaction::None => {}
            Interaction::Pairwise { kernel, precondition } => {
                let k = kernel.out_dim();
                let (rows, cols) = precondition.shape(k);
                if rows != m || cols != k {
                    return Err(Error::Model(format!(
                        "preconditioner is {rows}x{cols}, expected {m}x{k}"
                    )));
                }
                if let Precondition::Constant { data, .. } = precondition {
                    if data.len() != rows * cols {
                        return Err(Error::Model("preconditioner data has wrong length".into()));
                    }
                }
                if let Precondition::Field { field, .. } = precondition {
                    if field.out_len() != rows * cols {
                        return Err(Error::Model("preconditioner field has wrong length".into()));
                    }
                }
                if let Reads::Coordinate(c) = kernel.reads() {
                    if c >= d {
                        return Err(Error::Model(format!("kernel reads coordinate {c} of a {d}-dim state")));
                    }
                }
            }
            Interaction::Functional(f) => {
                if f.out_dim() != m {
                    return Err(Error::Model(format!(
                        "measure functional has dimension {}, expected {m}",
                        f.out_dim()
                    )));
                }
            }
        }
        if let Some(b) = self.kernel_bound {
            if !(b.is_finite() && b >= 0.0) {
                return Err(Error::Model(format!("kernel bound must be finite and >= 0, got {b}")));
            }
        }
        Ok(())
    }

    pub fn has_interaction(&self) -> bool {
        !matches!(self.interaction, Interaction::None)
    }

    /// Same `(c, A)` with `B` removed.
    pub fn without_interaction(&self) -> Self {
        let mut m = self.clone();
        m.id = format!("{}-driftless", self.id);
        m.descriptor = format!("{};driftless", self.descriptor);
        m.interaction = Interaction::None;
        m.kernel_bound = Some(0.0);
        m
    }

    pub fn eval_drift(&self, t: f64, path: PathPrefix<'_>, out: &mut [f64]) {
        match &self.drift {
            Drift::Zero => out.fill(0.0),
            Drift::Constant(c) => out.copy_from_slice(c),
            Drift::Field(f) => f.eval(t, path, out),
        }
    }

    /// Writes `A` (`d x m`, row-major) into `out`.
    pub fn eval_diffusion(&self, t: f64, path: PathPrefix<'_>, out: &mut [f64]) {
        match &self.diffusion {
            Diffusion::Identity => {
                out.fill(0.0);
                for i in 0..self.state_dim {
                    out[i * self.noise_dim + i] = 1.0;
                }
            }
            Diffusion::Constant(a) => out.copy_from_slice(a),
            Diffusion::Field(f) => f.eval(t, path, out),
        }
    }

    /// `B(t, ., mu)` where `mu` is the empirical law of `ensemble` up to `step`.
    ///
    /// `cloud` must hold the ensemble's states at `step`.
    pub fn running_drift<'a>(
        &'a self,
        t: f64,
        step: usize,
        ensemble: &'a PathEnsemble,
        cloud: &StateCloud,
    ) -> Box<dyn StepDrift + 'a> {
        match &self.interaction {
            Interaction::None => Box::new(ZeroStepDrift),
            Interaction::Pairwise { kernel, precondition } => {
                Box::new(PairwiseStepDrift::new(t, kernel.clone(), precondition.clone(), cloud))
            }
            Interaction::Functional(f) => Box::new(FunctionalStepDrift {
                t,
                step,
                functional: f.clone(),
                ensemble,
            }),
        }
    }
}

pub(crate) struct ZeroStepDrift;

impl StepDrift for ZeroStepDrift {
    fn eval(&self, _path: PathPrefix<'_>, out: &mut [f64]) {
        out.fill(0.0);
    }
}

enum Integral {
    Prepared(Box<dyn CloudIntegral>),
    Direct(StateCloud),
}

/// `P(t, x) * mean_j b(t, x, y_j)` over an owned cloud.
pub(crate) struct PairwiseStepDrift {
    t: f64,
    kernel: Arc<dyn PairKernel>,
    precondition: Precondition,
    integral: Integral,
}

impl PairwiseStepDrift {
    pub(crate) fn new(t: f64, kernel: Arc<dyn PairKernel>, precondition: Precondition, cloud: &StateCloud) -> Self {
        let integral = match kernel.prepare(t, cloud) {
            Some(p) => Integral::Prepared(p),
            None => Integral::Direct(cloud.clone()),
        };
        Self {
            t,
            kernel,
            precondition,
            integral,
        }
    }

    /// Averaged kernel before preconditioning.
    pub(crate) fn kernel_mean(&self, x: &[f64], out: &mut [f64]) {
        match &self.integral {
            Integral::Prepared(p) => p.integrate(x, out),
            Integral::Direct(cloud) => {
                out.fill(0.0);
                let mut tmp = vec![0.0; out.len()];
                for j in 0..cloud.len() {
                    self.kernel.eval(self.t, x, cloud.atom(j), &mut tmp);
                    for (o, v) in out.iter_mut().zip(&tmp) {
                        *o += v;
                    }
                }
                let n = cloud.len() as f64;
                for o in out.iter_mut() {
                    *o /= n;
                }
            }
        }
    }

    pub(crate) fn precondition(&self) -> &Precondition {
        &self.precondition
    }

    pub(crate) fn kernel_dim(&self) -> usize {
        self.kernel.out_dim()
    }

    pub(crate) fn finish(&self, path: PathPrefix<'_>, mean: &[f64], out: &mut [f64]) {
        self.precondition.apply(self.t, path, mean, out);
    }
}

impl StepDrift for PairwiseStepDrift {
    fn eval(&self, path: PathPrefix<'_>, out: &mut [f64]) {
        if matches!(self.precondition, Precondition::Identity) {
            self.kernel_mean(path.current(), out);
        } else {
            let mut v = vec![0.0; self.kernel.out_dim()];
            self.kernel_mean(path.current(), &mut v);
            self.finish(path, &v, out);
        }
    }
}

/// General functional against an empirical path law.
pub(crate) struct FunctionalStepDrift<E> {
    pub(crate) t: f64,
    pub(crate) step: usize,
    pub(crate) functional: Arc<dyn MeasureFunctional>,
    pub(crate) ensemble: E,
}

impl<E: Deref<Target = PathEnsemble> + Send + Sync> StepDrift for FunctionalStepDrift<E> {
    fn eval(&self, path: PathPrefix<'_>, out: &mut [f64]) {
        let mu = EmpiricalMeasure::new(&self.ensemble, self.step);
        self.functional.eval(self.t, path, &mu, out);
    }
}
