//! Shipped model families: bounded-kernel mean-field SDEs, kinetic Langevin
//! dynamics with noise on the velocity only, and zero-interaction controls.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ensemble::{PathEnsemble, PathPrefix, StateCloud};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::model::{
    CloudIntegral, Diffusion, Drift, Interaction, ModelSpec, PairKernel, PathField, Precondition, Reads,
};
use crate::rng::standard_normal;

/// Beyond this half-range the exponential form of `tanh` sums could overflow.
const EXP_HALF_RANGE: f64 = 300.0;

/// Clouds smaller than this are averaged with plain `tanh` calls.
const EXP_MIN_ATOMS: usize = 32;

/// Points checked when looking for a singular state-dependent `sigma`.
const INVERTIBILITY_SAMPLES: usize = 256;

/// `b_i(x, y) = kappa * tanh(y[c_i] - x[c_i])` for the listed coordinates.
#[derive(Debug, Clone)]
pub struct TanhKernel {
    pub kappa: f64,
    pub coords: Vec<usize>,
}

impl TanhKernel {
    pub fn new(kappa: f64, dim: usize) -> Self {
        Self {
            kappa,
            coords: (0..dim).collect(),
        }
    }
}

impl PairKernel for TanhKernel {
    fn out_dim(&self) -> usize {
        self.coords.len()
    }

    fn eval(&self, _t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        for (o, &c) in out.iter_mut().zip(&self.coords) {
            *o = self.kappa * (y[c] - x[c]).tanh();
        }
    }

    fn reads(&self) -> Reads {
        match self.coords.as_slice() {
            [c] => Reads::Coordinate(*c),
            _ => Reads::All,
        }
    }

    fn prepare(&self, _t: f64, cloud: &StateCloud) -> Option<Box<dyn CloudIntegral>> {
        Some(Box::new(TanhCloud::new(self, cloud)))
    }
}

/// Per coordinate: `mean_j tanh(y_j - x)` through
/// `tanh(y - x) = (e^{2(y-s)} - e^{2(x-s)}) / (e^{2(y-s)} + e^{2(x-s)})`.
struct TanhCloud {
    kappa: f64,
    coords: Vec<usize>,
    shift: Vec<f64>,
    /// `exp(2 (y_j - shift))` per coordinate, empty when the plain form is used.
    exps: Vec<Vec<f64>>,
    ys: Vec<Vec<f64>>,
}

impl TanhCloud {
    fn new(kernel: &TanhKernel, cloud: &StateCloud) -> Self {
        let mut shift = Vec::new();
        let mut exps = Vec::new();
        let mut ys = Vec::new();
        for &c in &kernel.coords {
            let y = cloud.coordinate(c);
            let (lo, hi) = y
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let s = 0.5 * (lo + hi);
            let use_exp = y.len() >= EXP_MIN_ATOMS && 0.5 * (hi - lo) <= EXP_HALF_RANGE;
            exps.push(if use_exp {
                y.iter().map(|v| (2.0 * (v - s)).exp()).collect()
            } else {
                Vec::new()
            });
            shift.push(s);
            ys.push(y);
        }
        Self {
            kappa: kernel.kappa,
            coords: kernel.coords.clone(),
            shift,
            exps,
            ys,
        }
    }
}

fn sum_ratio(exps: &[f64], e: f64) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = exps.chunks_exact(4);
    let rem = chunks.remainder();
    for c in chunks {
        for l in 0..4 {
            acc[l] += (c[l] - e) / (c[l] + e);
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for &y in rem {
        s += (y - e) / (y + e);
    }
    s
}

impl CloudIntegral for TanhCloud {
    fn integrate(&self, x: &[f64], out: &mut [f64]) {
        for (ci, &c) in self.coords.iter().enumerate() {
            let ys = &self.ys[ci];
            let n = ys.len() as f64;
            let u = x[c] - self.shift[ci];
            let sum = if !self.exps[ci].is_empty() && u.abs() <= EXP_HALF_RANGE {
                sum_ratio(&self.exps[ci], (2.0 * u).exp())
            } else {
                ys.iter().map(|y| (y - x[c]).tanh()).sum()
            };
            out[ci] = self.kappa * sum / n;
        }
    }
}

/// `b(x, y) = kappa * (y - x)` on the listed coordinates. Unbounded.
#[derive(Debug, Clone)]
pub struct LinearKernel {
    pub kappa: f64,
    pub coords: Vec<usize>,
}

impl LinearKernel {
    pub fn new(kappa: f64, dim: usize) -> Self {
        Self {
            kappa,
            coords: (0..dim).collect(),
        }
    }
}

struct MeanCloud {
    kappa: f64,
    coords: Vec<usize>,
    means: Vec<f64>,
}

impl CloudIntegral for MeanCloud {
    fn integrate(&self, x: &[f64], out: &mut [f64]) {
        for ((o, &c), m) in out.iter_mut().zip(&self.coords).zip(&self.means) {
            *o = self.kappa * (m - x[c]);
        }
    }
}

impl PairKernel for LinearKernel {
    fn out_dim(&self) -> usize {
        self.coords.len()
    }

    fn eval(&self, _t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        for (o, &c) in out.iter_mut().zip(&self.coords) {
            *o = self.kappa * (y[c] - x[c]);
        }
    }

    fn reads(&self) -> Reads {
        match self.coords.as_slice() {
            [c] => Reads::Coordinate(*c),
            _ => Reads::All,
        }
    }

    fn prepare(&self, _t: f64, cloud: &StateCloud) -> Option<Box<dyn CloudIntegral>> {
        let n = cloud.len() as f64;
        let means = self
            .coords
            .iter()
            .map(|&c| cloud.coordinate(c).iter().sum::<f64>() / n)
            .collect();
        Some(Box::new(MeanCloud {
            kappa: self.kappa,
            coords: self.coords.clone(),
            means,
        }))
    }
}

/// `b(x, y) = v`, independent of both arguments.
#[derive(Debug, Clone)]
pub struct ConstantKernel {
    pub value: Vec<f64>,
}

struct ConstantCloud(Vec<f64>);

impl CloudIntegral for ConstantCloud {
    fn integrate(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
}

impl PairKernel for ConstantKernel {
    fn out_dim(&self) -> usize {
        self.value.len()
    }

    fn eval(&self, _t: f64, _x: &[f64], _y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.value);
    }

    fn prepare(&self, _t: f64, _cloud: &StateCloud) -> Option<Box<dyn CloudIntegral>> {
        Some(Box::new(ConstantCloud(self.value.clone())))
    }
}

/// Diffusion coefficient `sigma(t, x)` of size `n x n`.
#[derive(Debug, Clone)]
pub enum Sigma {
    /// `s * I`.
    Scalar(f64),
    /// Constant matrix, row-major.
    Matrix(Vec<f64>),
    /// State dependent matrix; `out_len` must be `n * n`.
    Field(Arc<dyn PathField>),
}

impl Sigma {
    fn describe(&self) -> String {
        match self {
            Sigma::Scalar(s) => format!("scalar({s})"),
            Sigma::Matrix(m) => format!("matrix({m:?})"),
            Sigma::Field(f) => format!("field({f:?})"),
        }
    }

    fn check_len(&self, n: usize) -> Result<()> {
        let len = match self {
            Sigma::Scalar(_) => return Ok(()),
            Sigma::Matrix(m) => m.len(),
            Sigma::Field(f) => f.out_len(),
        };
        if len != n * n {
            return Err(Error::Model(format!("sigma has {len} entries, expected {}", n * n)));
        }
        Ok(())
    }
}

fn invert(n: usize, data: &[f64]) -> Option<Vec<f64>> {
    let m = DMatrix::from_row_slice(n, n, data);
    let inv = m.try_inverse()?;
    if inv.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(inv.transpose().as_slice().to_vec())
}

fn scaled_identity(n: usize, s: f64) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = s;
    }
    m
}

/// `sigma(t, x)^{-1}` computed on demand.
#[derive(Debug)]
struct InverseField {
    n: usize,
    sigma: Arc<dyn PathField>,
}

impl PathField for InverseField {
    fn out_len(&self) -> usize {
        self.n * self.n
    }

    fn eval(&self, t: f64, path: PathPrefix<'_>, out: &mut [f64]) {
        let mut s = vec![0.0; self.n * self.n];
        self.sigma.eval(t, path, &mut s);
        match invert(self.n, &s) {
            Some(inv) => out.copy_from_slice(&inv),
            None => out.fill(f64::NAN),
        }
    }
}

/// Random states `x` with `x ~ N(0, 4 I)` and times in `[0, 1]`, wrapped as
/// one-point ensembles.
fn random_states(dim: usize, count: usize, seed: u64) -> Vec<(f64, PathEnsemble)> {
    let grid = TimeGrid::horizon(1.0, 1).expect("static grid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let t = rng.random::<f64>();
            let mut e = PathEnsemble::zeros(1, dim, grid).expect("positive dims");
            for v in e.state_mut(0, 0) {
                *v = 2.0 * standard_normal(&mut rng);
            }
            (t, e)
        })
        .collect()
}

/// Builds the preconditioner `sigma^{-1}` and diffusion block for `sigma`.
fn sigma_parts(n: usize, sigma: &Sigma, state_dim: usize) -> Result<(Precondition, Vec<f64>)> {
    sigma.check_len(n)?;
    match sigma {
        Sigma::Scalar(s) => {
            if !(s.is_finite() && *s != 0.0) {
                return Err(Error::Model(format!("sigma = {s} is not invertible")));
            }
            let pre = if *s == 1.0 {
                Precondition::Identity
            } else {
                Precondition::Constant {
                    rows: n,
                    cols: n,
                    data: scaled_identity(n, 1.0 / s),
                }
            };
            Ok((pre, scaled_identity(n, *s)))
        }
        Sigma::Matrix(m) => {
            let inv = invert(n, m).ok_or_else(|| Error::Model("sigma matrix is singular".into()))?;
            Ok((
                Precondition::Constant {
                    rows: n,
                    cols: n,
                    data: inv,
                },
                m.clone(),
            ))
        }
        Sigma::Field(f) => {
            let mut s = vec![0.0; n * n];
            for (i, (t, e)) in random_states(state_dim, INVERTIBILITY_SAMPLES, 0x5157).iter().enumerate() {
                f.eval(*t, e.prefix(0, 0), &mut s);
                if invert(n, &s).is_none() {
                    return Err(Error::Model(format!(
                        "sigma is not invertible at sampled point {i} (t = {t})"
                    )));
                }
            }
            Ok((
                Precondition::Field {
                    rows: n,
                    cols: n,
                    field: Arc::new(InverseField { n, sigma: f.clone() }),
                },
                Vec::new(),
            ))
        }
    }
}

/// `dX = sigma(t, X) (mean_j b(t, X, Y_j) dt + dW)` rewritten with `sigma^{-1}`.
#[derive(Debug, Clone)]
pub struct BoundedKernelModel {
    pub id: String,
    pub dim: usize,
    pub kernel: Arc<dyn PairKernel>,
    pub kernel_name: String,
    pub sigma: Sigma,
    /// `sup |sigma^{-1} b|`, supplied analytically.
    pub kernel_bound: Option<f64>,
    /// Declared `(lambda, Lambda)` with `lambda |xi|^2 <= xi . sigma sigma^T xi <= Lambda |xi|^2`.
    pub ellipticity: Option<(f64, f64)>,
}

impl BoundedKernelModel {
    /// `b(x, y) = kappa tanh(y - x)` componentwise with `sigma = s I`.
    pub fn tanh(kappa: f64, sigma: f64, dim: usize) -> Self {
        Self {
            id: "tanh".into(),
            dim,
            kernel: Arc::new(TanhKernel::new(kappa, dim)),
            kernel_name: format!("tanh(kappa={kappa})"),
            sigma: Sigma::Scalar(sigma),
            kernel_bound: Some(kappa.abs() * (dim as f64).sqrt() / sigma.abs()),
            ellipticity: Some((sigma * sigma, sigma * sigma)),
        }
    }

    /// `b(x, y) = kappa (y - x)`; no finite bound.
    pub fn linear(kappa: f64, sigma: f64, dim: usize) -> Self {
        Self {
            id: "linear".into(),
            dim,
            kernel: Arc::new(LinearKernel::new(kappa, dim)),
            kernel_name: format!("linear(kappa={kappa})"),
            sigma: Sigma::Scalar(sigma),
            kernel_bound: None,
            ellipticity: Some((sigma * sigma, sigma * sigma)),
        }
    }

    /// `b = v` everywhere.
    pub fn constant(value: Vec<f64>, sigma: f64) -> Self {
        let norm = value.iter().map(|v| v * v).sum::<f64>().sqrt();
        Self {
            id: "constant".into(),
            dim: value.len(),
            kernel_name: format!("constant({value:?})"),
            kernel: Arc::new(ConstantKernel { value }),
            sigma: Sigma::Scalar(sigma),
            kernel_bound: Some(norm / sigma.abs()),
            ellipticity: Some((sigma * sigma, sigma * sigma)),
        }
    }
}

fn check_bound(bound: Option<f64>) -> Result<()> {
    match bound {
        Some(b) if !(b.is_finite() && b >= 0.0) => {
            Err(Error::Model(format!("kernel bound must be finite and >= 0, got {b}")))
        }
        _ => Ok(()),
    }
}

/// `c = 0`, `A = sigma`, `B(t, x; mu) = sigma^{-1}(t, x) * int b(t, x, y) mu(dy)`.
pub fn make_bounded_kernel_spec(model: &BoundedKernelModel) -> Result<ModelSpec> {
    check_bound(model.kernel_bound)?;
    let d = model.dim;
    if model.kernel.out_dim() != d {
        return Err(Error::Model(format!(
            "kernel has dimension {}, state has {d}",
            model.kernel.out_dim()
        )));
    }
    let (precondition, sigma_matrix) = sigma_parts(d, &model.sigma, d)?;
    let diffusion = match &model.sigma {
        Sigma::Scalar(s) if *s == 1.0 => Diffusion::Identity,
        Sigma::Field(f) => Diffusion::Field(f.clone()),
        _ => Diffusion::Constant(sigma_matrix),
    };
    let spec = ModelSpec {
        id: model.id.clone(),
        descriptor: format!(
            "bounded-kernel;d={d};kernel={};sigma={}",
            model.kernel_name,
            model.sigma.describe()
        ),
        state_dim: d,
        noise_dim: d,
        drift: Drift::Zero,
        diffusion,
        interaction: Interaction::Pairwise {
            kernel: model.kernel.clone(),
            precondition,
        },
        kernel_bound: model.kernel_bound,
    };
    spec.validate()?;
    Ok(spec)
}

/// Position-velocity dynamics in `R^{2m}`: `dY = V dt`,
/// `dV = sigma (mean_j b dt + dW)`.
#[derive(Debug, Clone)]
pub struct KineticModel {
    pub id: String,
    /// Velocity dimension `m`; the state is `(y, v)` in `R^{2m}`.
    pub m: usize,
    /// Kernel on full states with output in `R^m`.
    pub kernel: Arc<dyn PairKernel>,
    pub kernel_name: String,
    pub sigma: Sigma,
    pub kernel_bound: Option<f64>,
}

impl KineticModel {
    /// Velocity forcing `kappa tanh(y' - y)` from positions, `sigma = s I`.
    pub fn tanh(kappa: f64, sigma: f64, m: usize) -> Self {
        Self {
            id: "kinetic-tanh".into(),
            m,
            kernel: Arc::new(TanhKernel::new(kappa, m)),
            kernel_name: format!("tanh-positions(kappa={kappa})"),
            sigma: Sigma::Scalar(sigma),
            kernel_bound: Some(kappa.abs() * (m as f64).sqrt() / sigma.abs()),
        }
    }

    /// Free transport with velocity noise only.
    pub fn free(sigma: f64, m: usize) -> Self {
        Self {
            id: "kinetic-zero".into(),
            m,
            kernel: Arc::new(ConstantKernel { value: vec![0.0; m] }),
            kernel_name: "zero".into(),
            sigma: Sigma::Scalar(sigma),
            kernel_bound: Some(0.0),
        }
    }
}

/// `c((y, v)) = (v, 0)`.
#[derive(Debug)]
struct Transport {
    m: usize,
}

impl PathField for Transport {
    fn out_len(&self) -> usize {
        2 * self.m
    }

    fn eval(&self, _t: f64, path: PathPrefix<'_>, out: &mut [f64]) {
        let x = path.current();
        out[..self.m].copy_from_slice(&x[self.m..]);
        out[self.m..].fill(0.0);
    }
}

/// `A = (0; sigma(t, x))` for a state-dependent velocity `sigma`.
#[derive(Debug)]
struct VelocityDiffusion {
    m: usize,
    sigma: Arc<dyn PathField>,
}

impl PathField for VelocityDiffusion {
    fn out_len(&self) -> usize {
        2 * self.m * self.m
    }

    fn eval(&self, t: f64, path: PathPrefix<'_>, out: &mut [f64]) {
        let mm = self.m * self.m;
        out[..mm].fill(0.0);
        self.sigma.eval(t, path, &mut out[mm..]);
    }
}

pub fn make_kinetic_spec(model: &KineticModel) -> Result<ModelSpec> {
    check_bound(model.kernel_bound)?;
    let m = model.m;
    if m == 0 {
        return Err(Error::Model("velocity dimension must be positive".into()));
    }
    if model.kernel.out_dim() != m {
        return Err(Error::Model(format!(
            "kernel has dimension {}, velocity has {m}",
            model.kernel.out_dim()
        )));
    }
    let (precondition, sigma_matrix) = sigma_parts(m, &model.sigma, 2 * m)?;
    let diffusion = match &model.sigma {
        Sigma::Field(f) => Diffusion::Field(Arc::new(VelocityDiffusion { m, sigma: f.clone() })),
        _ => {
            let mut a = vec![0.0; m * m];
            a.extend_from_slice(&sigma_matrix);
            Diffusion::Constant(a)
        }
    };
    let spec = ModelSpec {
        id: model.id.clone(),
        descriptor: format!(
            "kinetic;m={m};kernel={};sigma={}",
            model.kernel_name,
            model.sigma.describe()
        ),
        state_dim: 2 * m,
        noise_dim: m,
        drift: Drift::Field(Arc::new(Transport { m })),
        diffusion,
        interaction: Interaction::Pairwise {
            kernel: model.kernel.clone(),
            precondition,
        },
        kernel_bound: model.kernel_bound,
    };
    spec.validate()?;
    Ok(spec)
}

/// Driftless control: `dX = s dW`, `B = 0`.
pub fn make_zero_interaction_spec(dim: usize, sigma: f64) -> Result<ModelSpec> {
    if !(sigma.is_finite() && sigma != 0.0) {
        return Err(Error::Model(format!("sigma = {sigma} is not invertible")));
    }
    let spec = ModelSpec {
        id: "zero".into(),
        descriptor: format!("zero-interaction;d={dim};sigma={sigma}"),
        state_dim: dim,
        noise_dim: dim,
        drift: Drift::Zero,
        diffusion: if sigma == 1.0 {
            Diffusion::Identity
        } else {
            Diffusion::Constant(scaled_identity(dim, sigma))
        },
        interaction: Interaction::None,
        kernel_bound: Some(0.0),
    };
    spec.validate()?;
    Ok(spec)
}

/// Concentration constant `beta = 2 * kernel_bound^2`.
pub fn beta_of(kernel_bound: f64) -> f64 {
    2.0 * kernel_bound * kernel_bound
}

/// `beta` of a spec, when its kernel bound is known.
pub fn model_beta(model: &ModelSpec) -> Option<f64> {
    model.kernel_bound.map(beta_of)
}

/// Outcome of a random spot check of declared model constants.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub samples: usize,
    pub max_drift_norm: f64,
    pub bound_violations: usize,
    pub ellipticity_violations: usize,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.bound_violations == 0 && self.ellipticity_violations == 0
    }
}

/// Samples random `(t, x, mu)` and compares `|B|` with the declared bound.
///
/// Each `mu` is an empirical law of 1 to 16 random atoms. Violations are
/// logged as warnings, never silently ignored.
pub fn audit_spec(model: &ModelSpec, samples: usize, seed: u64) -> Result<AuditReport> {
    model.validate()?;
    let d = model.state_dim;
    let grid = TimeGrid::horizon(1.0, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = vec![0.0; model.noise_dim];
    let mut max_norm: f64 = 0.0;
    let mut violations = 0;
    let bound = model.kernel_bound;
    for (t, x) in random_states(d, samples, seed ^ 0xA5A5) {
        let atoms = rng.random_range(1..=16usize);
        let mut mu = PathEnsemble::zeros(atoms, d, grid)?;
        for j in 0..atoms {
            for v in mu.state_mut(j, 0) {
                *v = 2.0 * standard_normal(&mut rng);
            }
        }
        let cloud = mu.snapshot(0);
        model.running_drift(t, 0, &mu, &cloud).eval(x.prefix(0, 0), &mut b);
        let norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite {
                what: "measure drift B during audit",
                path: 0,
                step: 0,
            });
        }
        max_norm = max_norm.max(norm);
        if let Some(k) = bound {
            if norm > k * (1.0 + 1e-12) + 1e-15 {
                violations += 1;
            }
        }
    }
    if violations > 0 {
        log::warn!(
            "model {}: |B| exceeded the declared bound {:?} at {violations} of {samples} samples (max {max_norm})",
            model.id,
            bound
        );
    }
    Ok(AuditReport {
        samples,
        max_drift_norm: max_norm,
        bound_violations: violations,
        ellipticity_violations: 0,
    })
}

/// [`audit_spec`] plus a check of the declared ellipticity bounds.
pub fn audit_bounded_kernel(model: &BoundedKernelModel, samples: usize, seed: u64) -> Result<AuditReport> {
    let spec = make_bounded_kernel_spec(model)?;
    let mut report = audit_spec(&spec, samples, seed)?;
    let Some((lambda, big_lambda)) = model.ellipticity else {
        return Ok(report);
    };
    let d = model.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3C3C);
    let mut s = vec![0.0; d * d];
    for (t, x) in random_states(d, samples, seed ^ 0x5A5A) {
        match &model.sigma {
            Sigma::Scalar(v) => s = scaled_identity(d, *v),
            Sigma::Matrix(m) => s.copy_from_slice(m),
            Sigma::Field(f) => f.eval(t, x.prefix(0, 0), &mut s),
        }
        let xi: Vec<f64> = (0..d).map(|_| standard_normal(&mut rng)).collect();
        // xi . sigma sigma^T xi = |sigma^T xi|^2
        let q: f64 = (0..d)
            .map(|c| (0..d).map(|r| s[r * d + c] * xi[r]).sum::<f64>().powi(2))
            .sum();
        let n2: f64 = xi.iter().map(|v| v * v).sum();
        let tol = 1e-12 * n2.max(1.0) * big_lambda.max(1.0);
        if q < lambda * n2 - tol || q > big_lambda * n2 + tol {
            report.ellipticity_violations += 1;
        }
    }
    if report.ellipticity_violations > 0 {
        log::warn!(
            "model {}: ellipticity bounds ({lambda}, {big_lambda}) violated at {} of {samples} samples",
            model.id,
            report.ellipticity_violations
        );
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_step(values: &[f64], dim: usize) -> PathEnsemble {
        let grid = TimeGrid::horizon(1.0, 1).unwrap();
        let n = values.len() / dim;
        let mut v = Vec::new();
        for a in values.chunks(dim) {
            v.extend_from_slice(a);
            v.extend_from_slice(a);
        }
        PathEnsemble::from_values(n, dim, grid, v).unwrap()
    }

    fn drift_at(spec: &ModelSpec, atoms: &[f64], x: &[f64]) -> Vec<f64> {
        let mu = one_step(atoms, spec.state_dim);
        let xe = one_step(x, spec.state_dim);
        let cloud = mu.snapshot(0);
        let mut out = vec![0.0; spec.noise_dim];
        spec.running_drift(0.0, 0, &mu, &cloud).eval(xe.prefix(0, 0), &mut out);
        out
    }

    #[test]
    fn zero_kernel_gives_zero_drift() {
        let spec = make_bounded_kernel_spec(&BoundedKernelModel::constant(vec![0.0, 0.0], 1.0)).unwrap();
        assert_eq!(drift_at(&spec, &[1.0, 2.0, -3.0, 0.5], &[0.3, 0.4]), vec![0.0, 0.0]);
        assert_eq!(spec.kernel_bound, Some(0.0));
    }

    #[test]
    fn odd_kernel_symmetric_measure() {
        let spec = make_bounded_kernel_spec(&BoundedKernelModel::tanh(1.0, 1.0, 1)).unwrap();
        assert_eq!(drift_at(&spec, &[0.5, -0.5], &[0.0]), vec![0.0]);
    }

    #[test]
    fn constant_kernel_scalar_inverse() {
        let spec = make_bounded_kernel_spec(&BoundedKernelModel::constant(vec![1.0, 0.0], 2.0)).unwrap();
        assert_eq!(drift_at(&spec, &[7.0, -1.0], &[3.0, 3.0]), vec![0.5, 0.0]);
    }

    #[test]
    fn exp_form_matches_plain_tanh() {
        let k = TanhKernel::new(1.5, 1);
        let ys: Vec<f64> = (0..101).map(|j| -4.0 + 0.08 * j as f64 + 0.003 * (j as f64).sin()).collect();
        let cloud = StateCloud::new(1, ys.clone()).unwrap();
        let p = k.prepare(0.0, &cloud).unwrap();
        for x in [-6.0, -1.3, 0.0, 0.77, 4.2, 12.0] {
            let mut out = [0.0];
            p.integrate(&[x], &mut out);
            let direct: f64 = ys.iter().map(|y| 1.5 * (y - x).tanh()).sum::<f64>() / ys.len() as f64;
            assert!((out[0] - direct).abs() < 1e-14, "x = {x}");
        }
    }

    #[test]
    fn singular_sigma_rejected() {
        let mut m = BoundedKernelModel::tanh(1.0, 1.0, 2);
        m.sigma = Sigma::Matrix(vec![1.0, 2.0, 2.0, 4.0]);
        assert!(make_bounded_kernel_spec(&m).is_err());
        m.sigma = Sigma::Scalar(0.0);
        assert!(make_bounded_kernel_spec(&m).is_err());
        m.kernel_bound = Some(f64::INFINITY);
        m.sigma = Sigma::Scalar(1.0);
        assert!(make_bounded_kernel_spec(&m).is_err());
    }

    #[test]
    fn kinetic_hand_value() {
        let spec = make_kinetic_spec(&KineticModel::tanh(1.0, 1.0, 1)).unwrap();
        let b = drift_at(&spec, &[0.0, 0.0], &[1.0, 0.0]);
        assert!((b[0] - (-1.0f64).tanh()).abs() < 1e-15);
        assert!((b[0] + 0.76159).abs() < 1e-5);
    }

    #[test]
    fn kinetic_blocks() {
        let spec = make_kinetic_spec(&KineticModel::tanh(1.0, 0.7, 2)).unwrap();
        let xe = one_step(&[1.0, 2.0, 3.0, 4.0], 4);
        let mut a = vec![1.0; 8];
        spec.eval_diffusion(0.0, xe.prefix(0, 0), &mut a);
        assert!(a[..4].iter().all(|&v| v == 0.0));
        assert_eq!(&a[4..], &[0.7, 0.0, 0.0, 0.7]);
        let mut c = vec![9.0; 4];
        spec.eval_drift(0.0, xe.prefix(0, 0), &mut c);
        assert_eq!(c, vec![3.0, 4.0, 0.0, 0.0]);
    }

    #[test]
    fn beta_arithmetic() {
        assert_eq!(beta_of(1.0), 2.0);
        assert_eq!(beta_of(0.0), 0.0);
        assert_eq!(beta_of(0.5), 0.5);
        let spec = make_bounded_kernel_spec(&BoundedKernelModel::tanh(1.0, 1.0, 1)).unwrap();
        assert_eq!(model_beta(&spec), Some(2.0));
    }

    #[test]
    fn audits_are_clean_for_shipped_models() {
        for m in [
            BoundedKernelModel::tanh(1.0, 1.0, 1),
            BoundedKernelModel::tanh(2.0, 0.5, 3),
            BoundedKernelModel::constant(vec![0.3, -0.4], 1.5),
        ] {
            let r = audit_bounded_kernel(&m, 2000, 3).unwrap();
            assert!(r.is_clean(), "{}: {r:?}", m.id);
        }
        let k = make_kinetic_spec(&KineticModel::tanh(1.0, 1.0, 1)).unwrap();
        assert!(audit_spec(&k, 2000, 4).unwrap().is_clean());
    }

    #[test]
    fn audit_flags_understated_bound() {
        let mut m = BoundedKernelModel::tanh(1.0, 1.0, 1);
        m.kernel_bound = Some(0.1);
        let r = audit_bounded_kernel(&m, 500, 1).unwrap();
        assert!(r.bound_violations > 0);
        m.kernel_bound = Some(1.0);
        m.ellipticity = Some((2.0, 3.0));
        assert!(audit_bounded_kernel(&m, 100, 1).unwrap().ellipticity_violations > 0);
    }
}
