//! Total-variation bounds, histogram TV estimates and log-log rate fits.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::statistics::{Data, OrderStatistics};

use crate::ensemble::PathEnsemble;
use crate::error::{Error, Result};
use crate::girsanov::EntropyEstimate;

/// Number of standard errors an entropy estimate may dip below zero.
const NEGATIVE_ENTROPY_SE: f64 = 3.0;
const MAX_BINS_1D: usize = 4096;
const MAX_BINS_2D: usize = 512;

/// A TV bound, clamped to 1 with the raw value kept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TvBound {
    pub raw: f64,
    /// `min(raw, 1)`.
    pub value: f64,
    pub std_err: f64,
}

impl TvBound {
    fn new(raw: f64, std_err: f64) -> Self {
        Self {
            raw,
            value: raw.min(1.0),
            std_err,
        }
    }
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("need 1 <= k <= N, got k = {k}, N = {n}")));
    }
    Ok(())
}

/// `sqrt(2 (k / N) h)` from an entropy estimate of the full `N`-particle law.
pub fn tv_bound_pinsker(h: &EntropyEstimate, k: usize, n: usize) -> Result<TvBound> {
    pinsker_bound(h.h_hat, h.std_err, k, n)
}

/// [`tv_bound_pinsker`] from a bare estimate and its standard error.
///
/// The standard error is propagated with the delta method.
pub fn pinsker_bound(h_hat: f64, h_se: f64, k: usize, n: usize) -> Result<TvBound> {
    check_k(k, n)?;
    if !h_hat.is_finite() || !(h_se.is_finite() && h_se >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "entropy estimate must be finite, got {h_hat} +- {h_se}"
        )));
    }
    if h_hat < -NEGATIVE_ENTROPY_SE * h_se - 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "entropy estimate {h_hat} is negative beyond {NEGATIVE_ENTROPY_SE} standard errors ({h_se})"
        )));
    }
    let a = 2.0 * k as f64 / n as f64;
    let raw = (a * h_hat.max(0.0)).sqrt();
    let se = if raw > 0.0 { a * h_se / (2.0 * raw) } else { (a * h_se).sqrt() };
    Ok(TvBound::new(raw, se))
}

/// `C (1 + beta T) sqrt(k / N)`.
pub fn tv_bound_theorem(beta: f64, t: f64, k: usize, n: usize, c: f64) -> Result<TvBound> {
    check_k(k, n)?;
    if !(beta >= 0.0 && t >= 0.0 && c >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "beta, T and C must be nonnegative, got {beta}, {t}, {c}"
        )));
    }
    Ok(TvBound::new(c * (1.0 + beta * t) * (k as f64 / n as f64).sqrt(), 0.0))
}

/// Histogram bin rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Binning {
    /// Width `2 IQR n^{-1/(2 + dim)}` per dimension on the pooled samples.
    FreedmanDiaconis,
    /// Fixed number of bins per dimension over the pooled range.
    Fixed(usize),
}

/// Which marginal to compare: `k` distinct particles, listed coordinates of each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarginalSelection {
    pub k: usize,
    pub coords: Vec<usize>,
}

impl MarginalSelection {
    pub fn single(k: usize, coord: usize) -> Self {
        Self { k, coords: vec![coord] }
    }

    pub fn dim(&self) -> usize {
        self.k * self.coords.len()
    }
}

/// Rows of the `k`-particle marginal at time `t`.
///
/// Each ensemble contributes `floor(n_paths / k)` disjoint groups of
/// consecutive paths.
pub fn marginal_samples(ensembles: &[&PathEnsemble], t: f64, sel: &MarginalSelection) -> Result<Vec<f64>> {
    if sel.k == 0 || sel.coords.is_empty() {
        return Err(Error::InvalidArgument("empty marginal selection".into()));
    }
    let mut rows = Vec::new();
    for e in ensembles {
        let step = e
            .grid()
            .index_of(t)
            .ok_or_else(|| Error::GridMismatch(format!("time {t} is not on the ensemble grid")))?;
        if let Some(&c) = sel.coords.iter().find(|&&c| c >= e.dim()) {
            return Err(Error::InvalidArgument(format!("coordinate {c} out of range")));
        }
        for g in 0..e.n_paths() / sel.k {
            for p in g * sel.k..(g + 1) * sel.k {
                let x = e.state(p, step);
                rows.extend(sel.coords.iter().map(|&c| x[c]));
            }
        }
    }
    Ok(rows)
}

/// Histogram estimate of TV between time-`t` marginals of two ensemble sets.
pub fn tv_direct_marginal(
    a: &[&PathEnsemble],
    b: &[&PathEnsemble],
    t: f64,
    sel: &MarginalSelection,
    binning: Binning,
) -> Result<f64> {
    let dim = sel.dim();
    if dim > 2 {
        return Err(Error::InvalidArgument(format!(
            "direct TV supports marginals of dimension <= 2, got {dim}"
        )));
    }
    let sa = marginal_samples(a, t, sel)?;
    let sb = marginal_samples(b, t, sel)?;
    tv_histogram(&sa, &sb, dim, binning)
}

/// `1/2 sum_bins |p_a - p_b|` over a common histogram; rows have `dim` entries.
pub fn tv_histogram(a: &[f64], b: &[f64], dim: usize, binning: Binning) -> Result<f64> {
    if dim == 0 || dim > 2 {
        return Err(Error::InvalidArgument(format!("histogram dimension must be 1 or 2, got {dim}")));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("empty sample".into()));
    }
    if !a.len().is_multiple_of(dim) || !b.len().is_multiple_of(dim) {
        return Err(Error::ShapeMismatch("sample length is not a multiple of the dimension".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite sample value".into()));
    }
    let (na, nb) = (a.len() / dim, b.len() / dim);
    let cap = if dim == 1 { MAX_BINS_1D } else { MAX_BINS_2D };
    let mut axes = Vec::with_capacity(dim);
    for j in 0..dim {
        let pooled: Vec<f64> = a.iter().skip(j).step_by(dim).chain(b.iter().skip(j).step_by(dim)).copied().collect();
        let lo = pooled.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = pooled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        let bins = if range <= 0.0 {
            1
        } else {
            match binning {
                Binning::Fixed(n) => n.max(1),
                Binning::FreedmanDiaconis => {
                    let iqr = Data::new(pooled).interquartile_range();
                    let n = na.min(nb) as f64;
                    let width = 2.0 * iqr * n.powf(-1.0 / (2.0 + dim as f64));
                    if width > 0.0 {
                        (range / width).ceil() as usize
                    } else {
                        cap
                    }
                }
            }
        }
        .clamp(1, cap);
        axes.push((lo, range, bins));
    }
    let total: usize = axes.iter().map(|a| a.2).product();
    let index = |row: &[f64]| -> usize {
        let mut idx = 0;
        for (j, &(lo, range, bins)) in axes.iter().enumerate() {
            let u = if range > 0.0 { (row[j] - lo) / range } else { 0.0 };
            let i = ((u * bins as f64) as usize).min(bins - 1);
            idx = idx * bins + i;
        }
        idx
    };
    let mut ca = vec![0u64; total];
    let mut cb = vec![0u64; total];
    for row in a.chunks_exact(dim) {
        ca[index(row)] += 1;
    }
    for row in b.chunks_exact(dim) {
        cb[index(row)] += 1;
    }
    let tv = 0.5
        * ca
            .iter()
            .zip(&cb)
            .map(|(&x, &y)| (x as f64 / na as f64 - y as f64 / nb as f64).abs())
            .sum::<f64>();
    Ok(tv.clamp(0.0, 1.0))
}

/// Least-squares fit of `log value = intercept + slope * log N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_std_err: f64,
    /// 95% confidence interval for the slope (Student t).
    pub slope_ci95: (f64, f64),
}

pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs at least 4 points, got {}",
            points.len()
        )));
    }
    if points.iter().all(|&(_, v)| v == 0.0) {
        return Err(Error::DegenerateSeries("all values are zero, no rate to fit".into()));
    }
    if let Some(&(n, v)) = points.iter().find(|&&(n, v)| !(n > 0.0 && v > 0.0 && n.is_finite() && v.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs positive finite points, got ({n}, {v})"
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("rate fit needs at least two distinct N".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let df = n - 2.0;
    let slope_std_err = (sse / df / sxx).sqrt();
    let q = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(RateFit {
        points: points.to_vec(),
        slope,
        intercept,
        r_squared,
        slope_std_err,
        slope_ci95: (slope - q * slope_std_err, slope + q * slope_std_err),
    })
}
