//! Study drivers: each writes its files into the output directory and
//! returns whether every check passed.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use super::config::{ExperimentConfig, StudyKind};
use super::output::{header, write_csv, write_json};
use crate::concentration::{
    check_bounded_difference, check_carlen_kree, check_exp_martingale_moment, check_subgaussian_moments,
    default_constant_scan, run_condition_c, BoundedLaw, ConstantScan, EmpiricalMean, Integrand, MomentReport,
    MomentRow, FLOOR_NOTE,
};
use crate::engine::{simulate_independent, InitSampler};
use crate::error::{Error, Result};
use crate::girsanov::{interacting_with_entropy, summarize_quadratic, EntropyEstimate};
use crate::grid::TimeGrid;
use crate::law::FrozenLaw;
use crate::metrics::{fit_rate, marginal_samples, pinsker_bound, tv_bound_theorem, tv_histogram, Binning, MarginalSelection, RateFit};
use crate::model::ModelSpec;
use crate::reference::{build_reference_law, ReferenceLaw};
use crate::rng::{standard_normal, RngPlan};

/// Files written by a study and its verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutcome {
    pub study: StudyKind,
    pub files: Vec<PathBuf>,
    pub pass: bool,
    pub notes: Vec<String>,
}

/// Runs the configured study into `out`.
pub fn run_study(cfg: &ExperimentConfig, out: &Path) -> Result<StudyOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    match cfg.study_kind()? {
        StudyKind::Rate => run_rate_study(cfg, out),
        StudyKind::ConditionC => run_condition_c_study(cfg, out),
        StudyKind::Inequalities => run_inequalities(cfg, out),
        StudyKind::TvDirect => run_tv_direct(cfg, out),
        StudyKind::Prop31 => run_prop31(cfg, out),
        StudyKind::ReferenceLaw => run_reference_law(cfg, out),
    }
}

struct Setup {
    model: ModelSpec,
    grid: TimeGrid,
    init: Box<dyn InitSampler>,
    plan: RngPlan,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    let model = cfg.model_spec()?;
    Ok(Setup {
        grid: cfg.grid()?,
        init: cfg.init_sampler(&model),
        plan: RngPlan::new(cfg.seed),
        model,
    })
}

fn reference(cfg: &ExperimentConfig, s: &Setup) -> Result<ReferenceLaw> {
    build_reference_law(&s.model, cfg.n_ref, &s.grid, s.init.as_ref(), &s.plan.scoped("reference"), &cfg.picard())
}

fn binning(cfg: &ExperimentConfig) -> Binning {
    cfg.tv_bins.map_or(Binning::FreedmanDiaconis, Binning::Fixed)
}

/// The `k`-marginal on the first coordinate of every particle.
fn selection(k: usize) -> MarginalSelection {
    MarginalSelection::single(k, 0)
}

// ---------------------------------------------------------------------------
// rate

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub model_id: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub k: usize,
    pub h_hat: f64,
    pub h_se: f64,
    pub pinsker_bound: f64,
    pub theorem_bound: f64,
    pub direct_tv: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct EntropyRow {
    model_id: String,
    #[serde(rename = "N")]
    n: usize,
    estimator: &'static str,
    h_hat: f64,
    h_se: f64,
    h_per_particle: f64,
    n_replications: usize,
    pinsker_raw: f64,
    pinsker_se: f64,
    theorem_raw: f64,
}

#[derive(Debug, Clone, Serialize)]
struct TheoremConstant {
    value: f64,
    source: &'static str,
    scan: Option<ConstantScan>,
    note: &'static str,
}

fn theorem_constant(cfg: &ExperimentConfig) -> Result<TheoremConstant> {
    Ok(match cfg.theorem_c {
        Some(c) => TheoremConstant {
            value: c,
            source: "config",
            scan: None,
            note: FLOOR_NOTE,
        },
        None => {
            let scan = default_constant_scan()?;
            TheoremConstant {
                value: scan.limit_value,
                source: "grid minimum over p with eps -> infinity",
                scan: Some(scan),
                note: FLOOR_NOTE,
            }
        }
    })
}

/// Per-replication entropy sample plus time-`T` marginal rows for each `k`.
struct InteractingSample {
    h: f64,
    rows: Vec<Vec<f64>>,
}

fn interacting_samples(
    cfg: &ExperimentConfig,
    s: &Setup,
    law: &FrozenLaw,
    n: usize,
    plan: &RngPlan,
    with_marginals: bool,
) -> Result<Vec<InteractingSample>> {
    let t = s.grid.t_end();
    (0..cfg.n_replications)
        .into_par_iter()
        .map(|r| {
            let (ens, h) = interacting_with_entropy(&s.model, law, n, &s.grid, s.init.as_ref(), &plan.replication(r as u64))?;
            let rows = if with_marginals {
                cfg.k_list
                    .iter()
                    .map(|&k| marginal_samples(&[&ens], t, &selection(k)))
                    .collect::<Result<_>>()?
            } else {
                Vec::new()
            };
            Ok(InteractingSample { h, rows })
        })
        .collect()
}

fn independent_marginals(cfg: &ExperimentConfig, s: &Setup, law: &FrozenLaw, n: usize, plan: &RngPlan) -> Result<Vec<Vec<f64>>> {
    let t = s.grid.t_end();
    let per_rep = (0..cfg.n_replications)
        .into_par_iter()
        .map(|r| {
            let ens = simulate_independent(&s.model, n, law, &s.grid, s.init.as_ref(), &plan.replication(r as u64))?;
            cfg.k_list
                .iter()
                .map(|&k| marginal_samples(&[&ens], t, &selection(k)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(pool(&per_rep, cfg.k_list.len()))
}

fn pool(per_rep: &[Vec<Vec<f64>>], n_k: usize) -> Vec<Vec<f64>> {
    (0..n_k)
        .map(|j| per_rep.iter().flat_map(|r| r[j].iter().copied()).collect())
        .collect()
}

#[derive(Debug, Clone, Serialize)]
struct RateSummary {
    model_id: String,
    fit: Option<RateFit>,
    per_particle_fit: Option<RateFit>,
    notice: Option<String>,
    slope_target: f64,
    slope_tolerance: f64,
    min_r_squared: f64,
    pass: bool,
    theorem_constant: TheoremConstant,
    beta: Option<f64>,
    n_ref: usize,
    n_picard_used: usize,
    picard_diagnostics: Vec<f64>,
    picard_converged: bool,
}

pub fn run_rate_study(cfg: &ExperimentConfig, out: &Path) -> Result<StudyOutcome> {
    let s = setup(cfg)?;
    let beta = cfg.beta(&s.model).ok();
    let c = theorem_constant(cfg)?;
    let law = reference(cfg, &s)?;
    let mut rows = Vec::new();
    let mut entropy_rows = Vec::new();
    let mut points = Vec::new();
    let mut per_particle = Vec::new();
    let mut notes = Vec::new();
    let mut tv_ok = true;

    for &n in &cfg.n_list {
        log::info!("rate study: N = {n}");
        let entropy_plan = s.plan.scoped(&format!("entropy-N{n}"));
        let samples = interacting_samples(cfg, &s, law.frozen(), n, &entropy_plan, cfg.rate_direct_tv)?;
        let h: Vec<f64> = samples.iter().map(|x| x.h).collect();
        let est: EntropyEstimate = summarize_quadratic(&h);
        let direct = if cfg.rate_direct_tv {
            let a = pool(&samples.into_iter().map(|x| x.rows).collect::<Vec<_>>(), cfg.k_list.len());
            // same streams as the interacting runs: a synchronous coupling
            let b = independent_marginals(cfg, &s, law.frozen(), n, &entropy_plan)?;
            Some((a, b))
        } else {
            None
        };
        for (j, &k) in cfg.k_list.iter().enumerate() {
            if k > n {
                continue;
            }
            let pinsker = pinsker_bound(est.h_hat, est.std_err, k, n)?;
            let theorem = match beta {
                Some(b) => tv_bound_theorem(b, s.grid.t_end() - s.grid.t_start(), k, n, c.value)?.value,
                None => f64::NAN,
            };
            let direct_tv = match &direct {
                Some((a, b)) => {
                    let tv = tv_histogram(&a[j], &b[j], selection(k).dim(), binning(cfg))?;
                    if tv > pinsker.value + 3.0 * pinsker.std_err {
                        tv_ok = false;
                        notes.push(format!("N = {n}, k = {k}: direct TV {tv} exceeds the Pinsker bound {}", pinsker.value));
                    }
                    Some(tv)
                }
                None => None,
            };
            if k == 1 {
                points.push((n as f64, pinsker.raw));
                per_particle.push((n as f64, est.h_hat / n as f64));
                entropy_rows.push(EntropyRow {
                    model_id: s.model.id.clone(),
                    n,
                    estimator: est.kind.as_str(),
                    h_hat: est.h_hat,
                    h_se: est.std_err,
                    h_per_particle: est.h_hat / n as f64,
                    n_replications: est.n_replications,
                    pinsker_raw: pinsker.raw,
                    pinsker_se: pinsker.std_err,
                    theorem_raw: match beta {
                        Some(b) => tv_bound_theorem(b, s.grid.t_end() - s.grid.t_start(), 1, n, c.value)?.raw,
                        None => f64::NAN,
                    },
                });
            }
            rows.push(RateRow {
                model_id: s.model.id.clone(),
                n,
                k,
                h_hat: est.h_hat,
                h_se: est.std_err,
                pinsker_bound: pinsker.value,
                theorem_bound: theorem,
                direct_tv,
            });
        }
    }

    let (fit, notice) = match fit_rate(&points) {
        Ok(f) => (Some(f), None),
        Err(e @ Error::DegenerateSeries(_)) => {
            let msg = e.to_string();
            log::info!("{msg}");
            notes.push(msg.clone());
            (None, Some(msg))
        }
        Err(e) => return Err(e),
    };
    let per_particle_fit = fit_rate(&per_particle).ok();
    let fit_ok = match &fit {
        Some(f) => (f.slope - cfg.slope_target).abs() <= cfg.slope_tolerance && f.r_squared >= cfg.min_r_squared,
        None => true,
    };
    if let Some(f) = &fit {
        notes.push(format!("slope {:.4} (95% CI {:.4}..{:.4}), R^2 {:.4}", f.slope, f.slope_ci95.0, f.slope_ci95.1, f.r_squared));
    }
    let summary = RateSummary {
        model_id: s.model.id.clone(),
        fit,
        per_particle_fit,
        notice,
        slope_target: cfg.slope_target,
        slope_tolerance: cfg.slope_tolerance,
        min_r_squared: cfg.min_r_squared,
        pass: fit_ok && tv_ok,
        theorem_constant: c,
        beta,
        n_ref: law.n_ref(),
        n_picard_used: law.n_picard(),
        picard_diagnostics: law.diagnostics().to_vec(),
        picard_converged: law.converged(),
    };
    let hdr = header(cfg);
    let files = vec![out.join("rate.csv"), out.join("entropy.csv"), out.join("rate_summary.json")];
    write_csv(&files[0], &hdr, &rows)?;
    write_csv(&files[1], &hdr, &entropy_rows)?;
    write_json(&files[2], &hdr, &summary)?;
    Ok(StudyOutcome {
        study: StudyKind::Rate,
        files,
        pass: summary.pass,
        notes,
    })
}

// ---------------------------------------------------------------------------
// report studies

fn tag(report: MomentReport, label: &str) -> Vec<MomentRow> {
    report
        .rows
        .into_iter()
        .map(|mut r| {
            r.check = format!("{}[{label}]", r.check);
            r
        })
        .collect()
}

fn finish_report(cfg: &ExperimentConfig, out: &Path, study: StudyKind, file: &str, rows: Vec<MomentRow>, mut notes: Vec<String>) -> Result<StudyOutcome> {
    let path = out.join(file);
    write_csv(&path, &header(cfg), &rows)?;
    for r in rows.iter().filter(|r| !r.pass) {
        notes.push(format!(
            "{} order {}: {} > {} + 3 * {}",
            r.check, r.order, r.empirical, r.bound, r.std_err
        ));
    }
    Ok(StudyOutcome {
        study,
        files: vec![path],
        pass: rows.iter().all(|r| r.pass),
        notes,
    })
}

pub fn run_condition_c_study(cfg: &ExperimentConfig, out: &Path) -> Result<StudyOutcome> {
    let s = setup(cfg)?;
    let beta = cfg.beta(&s.model)?;
    let law = reference(cfg, &s)?;
    let mut rows = Vec::new();
    for &n in &cfg.n_list {
        log::info!("condition-c study: N = {n}");
        let report = run_condition_c(
            &s.model,
            law.frozen(),
            n,
            &s.grid,
            s.init.as_ref(),
            &s.plan.scoped(&format!("condition-c-N{n}")),
            cfg.n_replications,
            beta,
            cfg.t0,
            cfg.delta,
            &cfg.orders,
        )?;
        rows.extend(tag(report, &format!("N={n}")));
    }
    let mut notes = Vec::new();
    if cfg.t0 + cfg.delta > s.grid.t_end() {
        notes.push(format!("window truncated to [{}, {}]", cfg.t0, s.grid.t_end()));
    }
    finish_report(cfg, out, StudyKind::ConditionC, "condition_c.csv", rows, notes)
}

pub fn run_prop31(cfg: &ExperimentConfig, out: &Path) -> Result<StudyOutcome> {
    let s = setup(cfg)?;
    let beta = cfg.beta(&s.model)?;
    // reject a bad window before paying for the reference law
    crate::concentration::exp_martingale_bound(cfg.exp_kappa, cfg.delta, beta)?;
    let law = reference(cfg, &s)?;
    let mut rows = Vec::new();
    for &n in &cfg.n_list {
        log::info!("prop31 study: N = {n}");
        let report = check_exp_martingale_moment(
            &s.model,
            law.frozen(),
            n,
            &s.grid,
            s.init.as_ref(),
            &s.plan.scoped(&format!("prop31-N{n}")),
            cfg.n_replications,
            cfg.t0,
            cfg.delta,
            cfg.exp_kappa,
            beta,
        )?;
        rows.extend(tag(report, &format!("N={n}")));
    }
    finish_report(cfg, out, StudyKind::Prop31, "prop31.csv", rows, Vec::new())
}

pub fn run_inequalities(cfg: &ExperimentConfig, out: &Path) -> Result<StudyOutcome> {
    let plan = RngPlan::new(cfg.seed);
    let reps = cfg.n_replications;
    let uniform = BoundedLaw::Uniform { half_width: 1.0 };
    let mut rows = Vec::new();
    rows.extend(check_subgaussian_moments(&BoundedLaw::Rademacher, cfg.sum_n, &cfg.sum_orders, reps, &plan.scoped("subgaussian-rademacher"))?.rows);
    rows.extend(check_subgaussian_moments(&uniform, cfg.uniform_n, &cfg.sum_orders, reps, &plan.scoped("subgaussian-uniform"))?.rows);
    let f = EmpiricalMean {
        n: cfg.sum_n,
        half_width: 1.0,
    };
    for law in [BoundedLaw::Rademacher, uniform] {
        let report = check_bounded_difference(&f, &law, &cfg.tail_levels, &cfg.tail_moment_orders, reps, &plan.scoped(&format!("bounded-difference-{}", law.name())))?;
        rows.extend(tag(report, law.name()));
    }
    let grid = cfg.grid()?;
    for h in [Integrand::Constant(1.0), Integrand::TanhOfW { scale: 1.0 }] {
        rows.extend(check_carlen_kree(&h, &grid, &cfg.ck_orders, reps, &plan.scoped(&format!("carlen-kree-{}", h.name())))?.rows);
    }
    let scan = default_constant_scan()?;
    let path = out.join("theorem_constant.json");
    write_json(&path, &header(cfg), &serde_json::json!({ "scan": scan, "note": FLOOR_NOTE }))?;
    let mut outcome = finish_report(cfg, out, StudyKind::Inequalities, "inequalities.csv", rows, Vec::new())?;
    outcome.files.push(path);
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// tv-direct

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TvRow {
    pub model_id: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub k: usize,
    pub t: f64,
    pub direct_tv: f64,
    pub pinsker_bound: Option<f64>,
    pub pinsker_se: Option<f64>,
    pub expected: Option<f64>,
    pub pass: bool,
}

/// Histogram TV between `N(0, 1)` and `N(shift, 1)` samples, with the exact value.
pub fn gaussian_oracle(samples: usize, shift: f64, binning: Binning, plan: &RngPlan) -> Result<(f64, f64)> {
    let draw = |r: u64, mu: f64| {
        let mut rng = plan.replication(r).aux(0);
        (0..samples).map(|_| mu + standard_normal(&mut rng)).collect::<Vec<f64>>()
    };
    let (a, b) = rayon::join(|| draw(0, 0.0), || draw(1, shift));
    let tv = tv_histogram(&a, &b, 1, binning)?;
    let exact = 2.0 * Normal::standard().cdf(shift / 2.0) - 1.0;
    Ok((tv, exact))
}

/// Tolerance on the Gaussian oracle row.
pub const ORACLE_TOLERANCE: f64 = 0.01;

pub fn run_tv_direct(cfg: &ExperimentConfig, out: &Path) -> Result<StudyOutcome> {
    let s = setup(cfg)?;
    let law = reference(cfg, &s)?;
    let t = s.grid.t_end();
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    for &n in &cfg.n_list {
        log::info!("tv-direct study: N = {n}");
        let plan = s.plan.scoped(&format!("tv-N{n}"));
        let samples = interacting_samples(cfg, &s, law.frozen(), n, &plan, true)?;
        let est = summarize_quadratic(&samples.iter().map(|x| x.h).collect::<Vec<_>>());
        let a = pool(&samples.into_iter().map(|x| x.rows).collect::<Vec<_>>(), cfg.k_list.len());
        // McKean copies driven by the same streams (synchronous coupling)
        let b = independent_marginals(cfg, &s, law.frozen(), n, &plan)?;
        for (j, &k) in cfg.k_list.iter().enumerate() {
            if k > n {
                continue;
            }
            let tv = tv_histogram(&a[j], &b[j], selection(k).dim(), binning(cfg))?;
            let p = pinsker_bound(est.h_hat, est.std_err, k, n)?;
            let pass = tv <= p.value + 3.0 * p.std_err;
            if !pass {
                notes.push(format!("N = {n}, k = {k}: direct TV {tv} exceeds the Pinsker bound {}", p.value));
            }
            rows.push(TvRow {
                model_id: s.model.id.clone(),
                n,
                k,
                t,
                direct_tv: tv,
                pinsker_bound: Some(p.value),
                pinsker_se: Some(p.std_err),
                expected: None,
                pass,
            });
        }
    }
    let (tv, exact) = gaussian_oracle(cfg.oracle_samples, 0.1, binning(cfg), &s.plan.scoped("gaussian-oracle"))?;
    rows.push(TvRow {
        model_id: "gaussian-oracle".into(),
        n: cfg.oracle_samples,
        k: 1,
        t: 0.0,
        direct_tv: tv,
        pinsker_bound: None,
        pinsker_se: None,
        expected: Some(exact),
        pass: (tv - exact).abs() <= ORACLE_TOLERANCE,
    });
    let path = out.join("tv_direct.csv");
    write_csv(&path, &header(cfg), &rows)?;
    Ok(StudyOutcome {
        study: StudyKind::TvDirect,
        files: vec![path],
        pass: rows.iter().all(|r| r.pass),
        notes,
    })
}

// ---------------------------------------------------------------------------
// reference-law

#[derive(Debug, Clone, PartialEq, Serialize)]
struct PicardRow {
    pass: usize,
    drift_change: f64,
}

pub fn run_reference_law(cfg: &ExperimentConfig, out: &Path) -> Result<StudyOutcome> {
    let s = setup(cfg)?;
    let law = reference(cfg, &s)?;
    let dir = out.join("reference_law");
    law.save(&dir)?;
    let rows: Vec<PicardRow> = law
        .diagnostics()
        .iter()
        .enumerate()
        .map(|(j, &d)| PicardRow { pass: j, drift_change: d })
        .collect();
    let path = out.join("reference_law.csv");
    write_csv(&path, &header(cfg), &rows)?;
    let mut notes = vec![format!("law written to {}", dir.display())];
    if !law.converged() {
        notes.push(format!("Picard iteration did not reach tolerance {}", cfg.picard_tolerance));
    }
    Ok(StudyOutcome {
        study: StudyKind::ReferenceLaw,
        files: vec![path, dir.join(crate::reference::LAW_FILE), dir.join(crate::reference::META_FILE)],
        pass: law.converged(),
        notes,
    })
}
