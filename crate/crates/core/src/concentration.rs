//! Monte Carlo checks of moment and tail inequalities.
//!
//! Every check produces [`MomentRow`]s: an empirical value, its standard
//! error and the theoretical bound. A row passes when
//! `empirical <= bound + 3 * std_err`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::factorial::{factorial, ln_factorial};

use crate::engine::InitSampler;
use crate::error::{Error, Result};
use crate::girsanov::{mckean_window, step_window, DriftDeviationSeries};
use crate::grid::TimeGrid;
use crate::law::FrozenLaw;
use crate::model::ModelSpec;
use crate::rng::RngPlan;
use crate::stats::{covariance, mean, mean_se};

/// Slack, in standard errors, granted to every empirical comparison.
pub const SE_SLACK: f64 = 3.0;

/// Highest order accepted for windowed moment ladders.
pub const MAX_LADDER_ORDER: u32 = 4;

/// Note on the theorem constant, printed with constant reports.
pub const FLOOR_NOTE: &str = "the intermediate constant is stated with floor(p/(2(p-1))) while the final constant uses floor(p/(p-1)); the final form is implemented as stated";

/// One inequality check at one order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentRow {
    pub check: String,
    pub order: f64,
    pub empirical: f64,
    pub std_err: f64,
    pub bound: f64,
    pub pass: bool,
}

impl MomentRow {
    pub fn new(check: impl Into<String>, order: f64, empirical: f64, std_err: f64, bound: f64) -> Self {
        Self {
            check: check.into(),
            order,
            empirical,
            std_err,
            bound,
            pass: empirical <= bound + SE_SLACK * std_err,
        }
    }
}

/// Rows plus the parameters they were computed with.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MomentReport {
    pub rows: Vec<MomentRow>,
    pub meta: Vec<(String, String)>,
}

impl MomentReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn extend(&mut self, other: MomentReport) {
        self.rows.extend(other.rows);
        self.meta.extend(other.meta);
    }
}

fn check_orders(orders: &[u32], max: u32) -> Result<()> {
    if orders.is_empty() {
        return Err(Error::InvalidArgument("no orders requested".into()));
    }
    if let Some(p) = orders.iter().find(|&&p| p == 0 || p > max) {
        return Err(Error::InvalidArgument(format!("order {p} outside 1..={max}")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Windowed drift-deviation ladder

/// `p! beta^p delta^p / N^p`.
pub fn condition_c_bound(beta: f64, delta: f64, n: usize, p: u32) -> f64 {
    factorial(p as u64) * (beta * delta / n as f64).powi(p as i32)
}

/// Per-order mean over particles of `(int_window |dB|^2 dt)^p` for one replication.
pub fn window_moment_sample(dev: &DriftDeviationSeries, t0: f64, delta: f64, orders: &[u32]) -> Result<Vec<f64>> {
    let (k0, k1) = dev.window(t0, delta)?;
    let energies = dev.window_energies(k0, k1);
    Ok(orders
        .iter()
        .map(|&p| mean(&energies.iter().map(|e| e.powi(p as i32)).collect::<Vec<_>>()))
        .collect())
}

/// Ladder rows from per-replication samples (`samples[r][j]` is order `orders[j]`).
pub fn condition_c_report(samples: &[Vec<f64>], beta: f64, delta: f64, n: usize, orders: &[u32]) -> MomentReport {
    let rows = orders
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            let col: Vec<f64> = samples.iter().map(|s| s[j]).collect();
            let s = mean_se(&col);
            MomentRow::new("condition-c", p as f64, s.mean, s.std_err, condition_c_bound(beta, delta, n, p))
        })
        .collect();
    MomentReport {
        rows,
        meta: vec![
            ("N".into(), n.to_string()),
            ("beta".into(), beta.to_string()),
            ("delta".into(), delta.to_string()),
        ],
    }
}

/// Checks the ladder on stored deviation series, one per replication.
///
/// The window is `[t0, (t0 + delta) ∧ T]`; the bound always uses `delta`.
pub fn check_condition_c(
    devs: &[DriftDeviationSeries],
    beta: f64,
    t0: f64,
    delta: f64,
    orders: &[u32],
) -> Result<MomentReport> {
    check_orders(orders, MAX_LADDER_ORDER)?;
    let n = devs
        .first()
        .ok_or_else(|| Error::InvalidArgument("no replications".into()))?
        .n_particles();
    let samples = devs
        .iter()
        .map(|d| window_moment_sample(d, t0, delta, orders))
        .collect::<Result<Vec<_>>>()?;
    let mut r = condition_c_report(&samples, beta, delta, n, orders);
    r.meta.push(("T0".into(), t0.to_string()));
    Ok(r)
}

/// Simulates McKean copies replication by replication and checks the ladder
/// without keeping the deviation series.
#[allow(clippy::too_many_arguments)]
pub fn run_condition_c(
    model: &ModelSpec,
    law: &FrozenLaw,
    n: usize,
    grid: &TimeGrid,
    init: &dyn InitSampler,
    plan: &RngPlan,
    n_replications: usize,
    beta: f64,
    t0: f64,
    delta: f64,
    orders: &[u32],
) -> Result<MomentReport> {
    check_orders(orders, MAX_LADDER_ORDER)?;
    step_window(grid, t0, delta)?;
    let samples = (0..n_replications)
        .into_par_iter()
        .map(|r| {
            let run = mckean_window(model, law, n, grid, init, &plan.replication(r as u64), t0, delta)?;
            Ok(orders
                .iter()
                .map(|&p| mean(&run.energies.iter().map(|e| e.powi(p as i32)).collect::<Vec<_>>()))
                .collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let mut r = condition_c_report(&samples, beta, delta, n, orders);
    r.meta.push(("T0".into(), t0.to_string()));
    r.meta.push(("replications".into(), n_replications.to_string()));
    Ok(r)
}

// ---------------------------------------------------------------------------
// Sums of bounded i.i.d. variables

/// Centered laws supported in `[-m, m]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum BoundedLaw {
    Rademacher,
    Uniform { half_width: f64 },
}

impl BoundedLaw {
    pub fn name(&self) -> &'static str {
        match self {
            BoundedLaw::Rademacher => "rademacher",
            BoundedLaw::Uniform { .. } => "uniform",
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            BoundedLaw::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            BoundedLaw::Uniform { half_width } => half_width * (2.0 * rng.random::<f64>() - 1.0),
        }
    }

    pub fn mean(&self) -> f64 {
        0.0
    }

    /// Almost-sure bound on `|X|`.
    pub fn m_bar(&self) -> f64 {
        match self {
            BoundedLaw::Rademacher => 1.0,
            BoundedLaw::Uniform { half_width } => *half_width,
        }
    }

    /// Cumulants `(k2, k4, k6)`; odd cumulants vanish.
    fn cumulants(&self) -> (f64, f64, f64) {
        match self {
            BoundedLaw::Rademacher => (1.0, -2.0, 16.0),
            BoundedLaw::Uniform { half_width: a } => {
                let a2 = a * a;
                (a2 / 3.0, -2.0 * a2 * a2 / 15.0, 16.0 * a2 * a2 * a2 / 63.0)
            }
        }
    }
}

/// Exact `E[(X_1 + ... + X_n)^{2q}]` for `q` in `1..=3`.
pub fn exact_sum_moment(law: &BoundedLaw, n: usize, q: u32) -> Result<f64> {
    let (k2, k4, k6) = law.cumulants();
    let n = n as f64;
    let (c2, c4, c6) = (n * k2, n * k4, n * k6);
    match q {
        1 => Ok(c2),
        2 => Ok(c4 + 3.0 * c2 * c2),
        3 => Ok(c6 + 15.0 * c4 * c2 + 15.0 * c2 * c2 * c2),
        _ => Err(Error::InvalidArgument(format!("exact sum moments available for q <= 3, got {q}"))),
    }
}

/// `q! (2 n m^2)^q`.
pub fn subgaussian_bound(n: usize, m_bar: f64, q: u32) -> f64 {
    factorial(q as u64) * (2.0 * n as f64 * m_bar * m_bar).powi(q as i32)
}

pub fn check_subgaussian_moments(
    law: &BoundedLaw,
    n: usize,
    orders: &[u32],
    n_replications: usize,
    plan: &RngPlan,
) -> Result<MomentReport> {
    check_orders(orders, 3)?;
    let sums: Vec<f64> = (0..n_replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = plan.replication(r as u64).aux(0);
            (0..n).map(|_| law.sample(&mut rng) - law.mean()).sum::<f64>()
        })
        .collect();
    let name = format!("subgaussian-{}", law.name());
    let mut rows = Vec::new();
    for &q in orders {
        let bound = subgaussian_bound(n, law.m_bar(), q);
        let powers: Vec<f64> = sums.iter().map(|s| s.powi(2 * q as i32)).collect();
        let s = mean_se(&powers);
        rows.push(MomentRow::new(name.clone(), q as f64, s.mean, s.std_err, bound));
        rows.push(MomentRow::new(format!("{name}-exact"), q as f64, exact_sum_moment(law, n, q)?, 0.0, bound));
    }
    Ok(MomentReport {
        rows,
        meta: vec![("n".into(), n.to_string()), ("m_bar".into(), law.m_bar().to_string())],
    })
}

// ---------------------------------------------------------------------------
// Bounded differences

/// A function of `n` independent inputs with bounded coordinate differences.
pub trait BoundedDifference: Sync {
    fn n(&self) -> usize;
    /// `c_i`: largest change of `f` when input `i` alone changes.
    fn coefficients(&self) -> Vec<f64>;
    fn eval(&self, x: &[f64]) -> f64;
    fn expectation(&self, law: &BoundedLaw) -> f64;
}

/// Mean of `n` inputs in `[-a, a]`: `c_i = 2a / n`.
#[derive(Debug, Clone, Copy)]
pub struct EmpiricalMean {
    pub n: usize,
    pub half_width: f64,
}

impl BoundedDifference for EmpiricalMean {
    fn n(&self) -> usize {
        self.n
    }

    fn coefficients(&self) -> Vec<f64> {
        vec![2.0 * self.half_width / self.n as f64; self.n]
    }

    fn eval(&self, x: &[f64]) -> f64 {
        x.iter().sum::<f64>() / self.n as f64
    }

    fn expectation(&self, law: &BoundedLaw) -> f64 {
        law.mean()
    }
}

/// `nu = sum c_i^2 / 4`.
pub fn variance_proxy(c: &[f64]) -> f64 {
    c.iter().map(|v| v * v).sum::<f64>() / 4.0
}

/// Tail frequencies at each `t` against `exp(-t^2 / (2 nu))`, and central
/// moments of order `2k` against `k! (4 nu)^k`.
pub fn check_bounded_difference(
    f: &dyn BoundedDifference,
    law: &BoundedLaw,
    ts: &[f64],
    moment_orders: &[u32],
    n_replications: usize,
    plan: &RngPlan,
) -> Result<MomentReport> {
    if f.coefficients().len() != f.n() {
        return Err(Error::InvalidArgument("coefficient list does not match n".into()));
    }
    if ts.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::InvalidArgument("tail levels must be positive".into()));
    }
    let nu = variance_proxy(&f.coefficients());
    let ey = f.expectation(law);
    let devs: Vec<f64> = (0..n_replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = plan.replication(r as u64).aux(0);
            let x: Vec<f64> = (0..f.n()).map(|_| law.sample(&mut rng)).collect();
            f.eval(&x) - ey
        })
        .collect();
    let reps = n_replications as f64;
    let mut rows = Vec::new();
    for &t in ts {
        let bound = (-t * t / (2.0 * nu)).exp();
        for (name, count) in [
            ("bounded-difference-upper", devs.iter().filter(|&&d| d >= t).count()),
            ("bounded-difference-lower", devs.iter().filter(|&&d| d <= -t).count()),
        ] {
            let p = count as f64 / reps;
            rows.push(MomentRow::new(name, t, p, (p * (1.0 - p) / reps).sqrt(), bound));
        }
    }
    for &k in moment_orders {
        let powers: Vec<f64> = devs.iter().map(|d| d.powi(2 * k as i32)).collect();
        let s = mean_se(&powers);
        let bound = factorial(k as u64) * (4.0 * nu).powi(k as i32);
        rows.push(MomentRow::new("bounded-difference-moment", k as f64, s.mean, s.std_err, bound));
    }
    Ok(MomentReport {
        rows,
        meta: vec![("n".into(), f.n().to_string()), ("nu".into(), nu.to_string())],
    })
}

// ---------------------------------------------------------------------------
// Martingale moments

/// Integrand `h(t, W_t)` of `M_t = int h dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Integrand {
    Constant(f64),
    /// `scale * tanh(W_t)`.
    TanhOfW { scale: f64 },
}

impl Integrand {
    pub fn name(&self) -> String {
        match self {
            Integrand::Constant(c) if *c == 1.0 => "W".into(),
            Integrand::Constant(c) => format!("{c}*W"),
            Integrand::TanhOfW { scale } if *scale == 1.0 => "int-tanh(W)dW".into(),
            Integrand::TanhOfW { scale } => format!("int-{scale}*tanh(W)dW"),
        }
    }

    fn eval(&self, w: f64) -> f64 {
        match self {
            Integrand::Constant(c) => *c,
            Integrand::TanhOfW { scale } => scale * w.tanh(),
        }
    }
}

/// `||M_T||_p`, `||<M>_T^{1/2}||_p` and their ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MartingaleNorms {
    pub p: u32,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub ratio_std_err: f64,
}

/// Simulated `(M_T, <M>_T)` pairs with left-point sums.
fn martingale_pairs(h: &Integrand, grid: &TimeGrid, n_replications: usize, plan: &RngPlan) -> Vec<(f64, f64)> {
    let dt = grid.step();
    let sqrt_dt = dt.sqrt();
    (0..n_replications)
        .into_par_iter()
        .map(|r| {
            let mut stream = plan.replication(r as u64).brownian(0);
            let (mut w, mut m, mut qv) = (0.0, 0.0, 0.0);
            let mut dw = [0.0];
            for _ in 0..grid.n_steps() {
                stream.fill(sqrt_dt, &mut dw);
                let v = h.eval(w);
                m += v * dw[0];
                qv += v * v * dt;
                w += dw[0];
            }
            (m, qv)
        })
        .collect()
}

pub fn martingale_norms(
    h: &Integrand,
    grid: &TimeGrid,
    orders: &[u32],
    n_replications: usize,
    plan: &RngPlan,
) -> Result<Vec<MartingaleNorms>> {
    if orders.iter().any(|&p| p < 1) {
        return Err(Error::InvalidArgument("orders must be >= 1".into()));
    }
    let pairs = martingale_pairs(h, grid, n_replications, plan);
    Ok(orders
        .iter()
        .map(|&p| {
            let pf = p as f64;
            let a: Vec<f64> = pairs.iter().map(|(m, _)| m.abs().powf(pf)).collect();
            let b: Vec<f64> = pairs.iter().map(|(_, q)| q.powf(pf / 2.0)).collect();
            let (ma, mb) = (mean(&a), mean(&b));
            let (lhs, rhs) = (ma.powf(1.0 / pf), mb.powf(1.0 / pf));
            if mb == 0.0 {
                return MartingaleNorms {
                    p,
                    lhs,
                    rhs,
                    ratio: 0.0,
                    ratio_std_err: 0.0,
                };
            }
            let ratio = lhs / rhs;
            // delta method for (A / B)^{1/p}
            let reps = a.len() as f64;
            let ga = ratio / (pf * ma);
            let gb = -ratio / (pf * mb);
            let var = (ga * ga * covariance(&a, &a) + gb * gb * covariance(&b, &b) + 2.0 * ga * gb * covariance(&a, &b)) / reps;
            MartingaleNorms {
                p,
                lhs,
                rhs,
                ratio,
                ratio_std_err: var.max(0.0).sqrt(),
            }
        })
        .collect())
}

/// Norm ratio against `2 sqrt(p)`.
pub fn check_carlen_kree(
    h: &Integrand,
    grid: &TimeGrid,
    orders: &[u32],
    n_replications: usize,
    plan: &RngPlan,
) -> Result<MomentReport> {
    let norms = martingale_norms(h, grid, orders, n_replications, plan)?;
    let name = format!("carlen-kree-{}", h.name());
    Ok(MomentReport {
        rows: norms
            .iter()
            .map(|n| MomentRow::new(name.clone(), n.p as f64, n.ratio, n.ratio_std_err, 2.0 * (n.p as f64).sqrt()))
            .collect(),
        meta: vec![("T".into(), grid.t_end().to_string())],
    })
}

/// `1 + exp(kappa^2) + 2 / (1 - 8 kappa delta beta)`, defined for `delta < 1 / (8 kappa beta)`.
pub fn exp_martingale_bound(kappa: f64, delta: f64, beta: f64) -> Result<f64> {
    if !(kappa > 0.0 && delta > 0.0 && beta >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need kappa > 0, delta > 0, beta >= 0; got {kappa}, {delta}, {beta}"
        )));
    }
    let x = 8.0 * kappa * delta * beta;
    if x >= 1.0 {
        return Err(Error::Config(format!(
            "delta = {delta} violates delta < 1/(8 kappa beta) = {}",
            1.0 / (8.0 * kappa * beta)
        )));
    }
    Ok(1.0 + (kappa * kappa).exp() + 2.0 / (1.0 - x))
}

/// Monte Carlo `E[(Z_{t0+delta} / Z_{t0})^kappa]` along McKean copies, with
/// `log(Z_{t0+delta} / Z_{t0}) = sum int dB . dW - 1/2 sum int |dB|^2 dt` over the window.
#[allow(clippy::too_many_arguments)]
pub fn check_exp_martingale_moment(
    model: &ModelSpec,
    law: &FrozenLaw,
    n: usize,
    grid: &TimeGrid,
    init: &dyn InitSampler,
    plan: &RngPlan,
    n_replications: usize,
    t0: f64,
    delta: f64,
    kappa: f64,
    beta: f64,
) -> Result<MomentReport> {
    let bound = exp_martingale_bound(kappa, delta, beta)?;
    step_window(grid, t0, delta)?;
    let values = (0..n_replications)
        .into_par_iter()
        .map(|r| {
            let run = mckean_window(model, law, n, grid, init, &plan.replication(r as u64), t0, delta)?;
            Ok((kappa * run.record.log_likelihood_ratio()).exp())
        })
        .collect::<Result<Vec<f64>>>()?;
    let s = mean_se(&values);
    Ok(MomentReport {
        rows: vec![MomentRow::new("exp-martingale-moment", kappa, s.mean, s.std_err, bound)],
        meta: vec![
            ("N".into(), n.to_string()),
            ("T0".into(), t0.to_string()),
            ("delta".into(), delta.to_string()),
            ("beta".into(), beta.to_string()),
        ],
    })
}

// ---------------------------------------------------------------------------
// Theorem constant

fn ln_theorem_constant(p: f64, r: f64) -> f64 {
    let q = p / (p - 1.0);
    let j = q.floor() + 1.0;
    // ln(1 + e^{p^2} + r) without overflow
    let middle = p * p + ((1.0 + r) * (-p * p).exp()).ln_1p();
    q.ln() + middle + (q / j) * ln_factorial(j as u64)
}

/// `p/(p-1) (1 + e^{p^2} + (8+eps)/eps) ((floor(p/(p-1)) + 1)!)^{(p/(p-1)) / (floor(p/(p-1)) + 1)}`.
pub fn theorem_constant(p: f64, eps: f64) -> Result<f64> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::InvalidArgument(format!("theorem constant needs p > 1, got {p}")));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("theorem constant needs eps > 0, got {eps}")));
    }
    Ok(ln_theorem_constant(p, (8.0 + eps) / eps).exp())
}

/// Limit of [`theorem_constant`] as `eps -> infinity`.
pub fn theorem_constant_eps_limit(p: f64) -> Result<f64> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::InvalidArgument(format!("theorem constant needs p > 1, got {p}")));
    }
    Ok(ln_theorem_constant(p, 1.0).exp())
}

/// Grid scan of the theorem constant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantScan {
    pub p_grid: Vec<f64>,
    pub eps_grid: Vec<f64>,
    pub best_p: f64,
    pub best_eps: f64,
    pub best_value: f64,
    /// Best `p` and value with `eps -> infinity`.
    pub limit_p: f64,
    pub limit_value: f64,
    /// Whether every `p`-slice is nonincreasing in `eps` on the grid.
    pub decreasing_in_eps: bool,
}

pub fn minimize_theorem_constant(p_grid: &[f64], eps_grid: &[f64]) -> Result<ConstantScan> {
    if p_grid.is_empty() || eps_grid.is_empty() {
        return Err(Error::InvalidArgument("empty scan grid".into()));
    }
    let mut eps_sorted = eps_grid.to_vec();
    eps_sorted.sort_by(f64::total_cmp);
    let mut best = (f64::NAN, f64::NAN, f64::INFINITY);
    let mut limit = (f64::NAN, f64::INFINITY);
    let mut decreasing = true;
    for &p in p_grid {
        let mut prev = f64::INFINITY;
        for &e in &eps_sorted {
            let v = theorem_constant(p, e)?;
            if v > prev {
                decreasing = false;
            }
            prev = v;
            if v < best.2 {
                best = (p, e, v);
            }
        }
        let l = theorem_constant_eps_limit(p)?;
        if l < limit.1 {
            limit = (p, l);
        }
    }
    Ok(ConstantScan {
        p_grid: p_grid.to_vec(),
        eps_grid: eps_sorted,
        best_p: best.0,
        best_eps: best.1,
        best_value: best.2,
        limit_p: limit.0,
        limit_value: limit.1,
        decreasing_in_eps: decreasing,
    })
}

/// Default scan: `p` in `1.05..=4` step `0.05`, `eps` log-spaced on `[1e-2, 1e4]`.
pub fn default_constant_scan() -> Result<ConstantScan> {
    let p: Vec<f64> = (1..=60).map(|i| 1.0 + 0.05 * i as f64).collect();
    let e: Vec<f64> = (0..=24).map(|i| 10f64.powf(-2.0 + i as f64 / 4.0)).collect();
    minimize_theorem_constant(&p, &e)
}
