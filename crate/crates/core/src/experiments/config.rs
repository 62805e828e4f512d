//! Flat TOML run description.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{GaussianInit, InitSampler, PointMass};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::law::Tabulation;
use crate::model::ModelSpec;
use crate::models::{
    make_bounded_kernel_spec, make_kinetic_spec, make_zero_interaction_spec, model_beta, BoundedKernelModel,
    KineticModel,
};
use crate::reference::PicardConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    Rate,
    ConditionC,
    Inequalities,
    TvDirect,
    Prop31,
    ReferenceLaw,
}

impl StudyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StudyKind::Rate => "rate",
            StudyKind::ConditionC => "condition-c",
            StudyKind::Inequalities => "inequalities",
            StudyKind::TvDirect => "tv-direct",
            StudyKind::Prop31 => "prop31",
            StudyKind::ReferenceLaw => "reference-law",
        }
    }
}

impl FromStr for StudyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "rate" => StudyKind::Rate,
            "condition-c" => StudyKind::ConditionC,
            "inequalities" => StudyKind::Inequalities,
            "tv-direct" => StudyKind::TvDirect,
            "prop31" => StudyKind::Prop31,
            "reference-law" => StudyKind::ReferenceLaw,
            other => {
                return Err(Error::Config(format!(
                    "unknown study kind {other:?}; expected rate, condition-c, inequalities, tv-direct, prop31 or reference-law"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Tanh,
    Linear,
    Zero,
    KineticTanh,
    KineticZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    /// `N(0, init_std^2 I)`.
    Gaussian,
    /// Every particle starts at the origin.
    Origin,
}

/// Every knob of every study; unused fields are ignored by a given study
/// but still echoed and hashed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub study: String,
    pub model: ModelKind,
    pub kappa: f64,
    pub sigma: f64,
    /// State dimension; velocity dimension for kinetic models.
    pub dim: usize,
    pub init: InitKind,
    pub init_std: f64,
    pub t_end: f64,
    pub n_steps: usize,
    pub n_list: Vec<usize>,
    pub k_list: Vec<usize>,
    pub n_ref: usize,
    pub n_picard: usize,
    pub picard_tolerance: f64,
    /// Lagrange table size for frozen laws; 0 evaluates exactly.
    pub table_nodes: usize,
    pub n_replications: usize,
    pub seed: u64,
    /// Overrides `2 * kernel_bound^2`.
    pub beta: Option<f64>,
    /// Overrides the minimized theorem constant.
    pub theorem_c: Option<f64>,
    pub t0: f64,
    pub delta: f64,
    pub orders: Vec<u32>,
    /// Exponent of the windowed density ratio.
    pub exp_kappa: f64,
    pub slope_target: f64,
    pub slope_tolerance: f64,
    pub min_r_squared: f64,
    /// Direct TV in the rate study (pooled over replications).
    pub rate_direct_tv: bool,
    pub tv_bins: Option<usize>,
    pub sum_n: usize,
    pub uniform_n: usize,
    pub sum_orders: Vec<u32>,
    pub tail_levels: Vec<f64>,
    pub tail_moment_orders: Vec<u32>,
    pub ck_orders: Vec<u32>,
    pub oracle_samples: usize,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            study: "rate".into(),
            model: ModelKind::Tanh,
            kappa: 1.0,
            sigma: 1.0,
            dim: 1,
            init: InitKind::Gaussian,
            init_std: 1.0,
            t_end: 1.0,
            n_steps: 200,
            n_list: vec![32, 64, 128, 256, 512],
            k_list: vec![1],
            n_ref: 8192,
            n_picard: 3,
            picard_tolerance: PicardConfig::default().tolerance,
            table_nodes: 512,
            n_replications: 200,
            seed: 20_240_917,
            beta: None,
            theorem_c: None,
            t0: 0.2,
            delta: 0.1,
            orders: vec![1, 2, 3],
            exp_kappa: 2.0,
            slope_target: -0.5,
            slope_tolerance: 0.15,
            min_r_squared: 0.95,
            rate_direct_tv: false,
            tv_bins: None,
            sum_n: 100,
            uniform_n: 50,
            sum_orders: vec![1, 2, 3],
            tail_levels: vec![0.1, 0.2, 0.3],
            tail_moment_orders: vec![1, 2],
            ck_orders: vec![2, 4, 8],
            oracle_samples: 1_000_000,
            workers: None,
            out: None,
        }
    }
}

/// Command-line values that win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub study: Option<StudyKind>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.study {
            if self.study != s.as_str() {
                log::info!("study {:?} from the file replaced by {}", self.study, s.as_str());
            }
            self.study = s.as_str().into();
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if o.workers.is_some() {
            self.workers = o.workers;
        }
        if o.out.is_some() {
            self.out = o.out.clone();
        }
    }

    pub fn study_kind(&self) -> Result<StudyKind> {
        self.study.parse()
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::horizon(self.t_end, self.n_steps)
    }

    pub fn tabulation(&self) -> Tabulation {
        if self.table_nodes == 0 {
            Tabulation::Exact
        } else {
            Tabulation::Tabulated { nodes: self.table_nodes }
        }
    }

    pub fn picard(&self) -> PicardConfig {
        PicardConfig {
            n_picard: self.n_picard,
            tolerance: self.picard_tolerance,
            tabulation: self.tabulation(),
            ..PicardConfig::default()
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        match self.model {
            ModelKind::Tanh => make_bounded_kernel_spec(&BoundedKernelModel::tanh(self.kappa, self.sigma, self.dim)),
            ModelKind::Linear => make_bounded_kernel_spec(&BoundedKernelModel::linear(self.kappa, self.sigma, self.dim)),
            ModelKind::Zero => make_zero_interaction_spec(self.dim, self.sigma),
            ModelKind::KineticTanh => make_kinetic_spec(&KineticModel::tanh(self.kappa, self.sigma, self.dim)),
            ModelKind::KineticZero => make_kinetic_spec(&KineticModel::free(self.sigma, self.dim)),
        }
    }

    pub fn init_sampler(&self, model: &ModelSpec) -> Box<dyn InitSampler> {
        let d = model.state_dim;
        match self.init {
            InitKind::Gaussian => Box::new(GaussianInit {
                mean: vec![0.0; d],
                std: self.init_std,
            }),
            InitKind::Origin => Box::new(PointMass(vec![0.0; d])),
        }
    }

    /// Configured `beta`, else `2 * kernel_bound^2` of the model.
    pub fn beta(&self, model: &ModelSpec) -> Result<f64> {
        match self.beta {
            Some(b) if b >= 0.0 && b.is_finite() => Ok(b),
            Some(b) => Err(Error::Config(format!("beta must be finite and >= 0, got {b}"))),
            None => model_beta(model).ok_or_else(|| {
                Error::Config(format!("model {} has no kernel bound; set beta explicitly", model.id))
            }),
        }
    }

    pub fn max_n(&self) -> usize {
        self.n_list.iter().copied().max().unwrap_or(0)
    }

    /// Checks shared by every study, plus the study-specific ones.
    pub fn validate(&self) -> Result<()> {
        let kind = self.study_kind()?;
        if self.dim == 0 {
            return Err(Error::Config("dim must be at least 1".into()));
        }
        if !(self.sigma.is_finite() && self.sigma != 0.0) {
            return Err(Error::Config(format!("sigma must be finite and nonzero, got {}", self.sigma)));
        }
        if !(self.init_std.is_finite() && self.init_std >= 0.0) {
            return Err(Error::Config(format!("init_std must be finite and >= 0, got {}", self.init_std)));
        }
        self.grid().map_err(|e| Error::Config(format!("grid: {e}")))?;
        if self.n_replications < 2 {
            return Err(Error::Config("n_replications must be at least 2".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        match kind {
            StudyKind::Rate | StudyKind::TvDirect => {
                if self.n_list.is_empty() || self.n_list.contains(&0) {
                    return Err(Error::Config("n_list must hold positive particle counts".into()));
                }
                if self.n_ref < 16 * self.max_n() {
                    return Err(Error::Config(format!(
                        "n_ref = {} is below 16 * max(n_list) = {}",
                        self.n_ref,
                        16 * self.max_n()
                    )));
                }
                if let Some(&k) = self.k_list.iter().find(|&&k| k == 0 || k > 2) {
                    return Err(Error::Config(format!("k_list entries must be 1 or 2, got {k}")));
                }
                if kind == StudyKind::Rate && self.n_list.len() < 4 {
                    return Err(Error::Config(format!(
                        "rate study needs at least 4 particle counts, got {}",
                        self.n_list.len()
                    )));
                }
            }
            StudyKind::ConditionC | StudyKind::Prop31 => {
                if self.n_list.is_empty() || self.n_list.contains(&0) {
                    return Err(Error::Config("n_list must hold positive particle counts".into()));
                }
                if !(self.t0 >= 0.0 && self.t0 < self.t_end) {
                    return Err(Error::Config(format!("t0 = {} outside [0, {})", self.t0, self.t_end)));
                }
                if !(self.delta > 0.0) {
                    return Err(Error::Config(format!("delta must be positive, got {}", self.delta)));
                }
            }
            StudyKind::Inequalities => {
                if self.sum_n == 0 || self.uniform_n == 0 {
                    return Err(Error::Config("sum_n and uniform_n must be positive".into()));
                }
            }
            StudyKind::ReferenceLaw => {}
        }
        Ok(())
    }

    /// The configuration without `workers` and `out`, as canonical JSON.
    pub fn canonical(&self) -> String {
        let mut c = self.clone();
        c.workers = None;
        c.out = None;
        serde_json::to_string(&c).expect("config serializes")
    }

    /// Hex SHA-256 of [`canonical`](Self::canonical).
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    /// `(key, value)` pairs echoed into output headers, in declaration order.
    pub fn echo(&self) -> Vec<(String, String)> {
        let value: serde_json::Value = serde_json::from_str(&self.canonical()).expect("canonical JSON");
        let serde_json::Value::Object(map) = value else {
            unreachable!("config is a struct")
        };
        map.into_iter()
            .filter(|(k, _)| k != "workers" && k != "out")
            .map(|(k, v)| (k, v.to_string()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_partial_files() {
        let c = ExperimentConfig::from_toml_str("study = \"prop31\"\ndelta = 0.01\nn_list = [50]\n").unwrap();
        assert_eq!(c.study_kind().unwrap(), StudyKind::Prop31);
        assert_eq!(c.delta, 0.01);
        assert_eq!(c.kappa, 1.0);
    }

    #[test]
    fn rejects_unknown_fields_and_studies() {
        assert!(ExperimentConfig::from_toml_str("colour = 3\n").is_err());
        let c = ExperimentConfig::from_toml_str("study = \"plot\"\n").unwrap();
        let err = c.validate().unwrap_err();
        assert!(err.to_string().contains("unknown study kind"), "{err}");
    }

    #[test]
    fn reference_size_rule() {
        let c = ExperimentConfig {
            n_ref: 1000,
            ..ExperimentConfig::default()
        };
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("16 * max(n_list) = 8192"), "{err}");
    }

    #[test]
    fn hash_ignores_workers_and_out() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.workers = Some(8);
        b.out = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert!(a.echo().iter().all(|(k, _)| k != "workers"));
    }

    #[test]
    fn overrides_win() {
        let mut c = ExperimentConfig::default();
        c.apply(&Overrides {
            study: Some(StudyKind::Inequalities),
            seed: Some(7),
            workers: Some(4),
            out: None,
        });
        assert_eq!(c.study, "inequalities");
        assert_eq!(c.seed, 7);
        assert_eq!(c.workers, Some(4));
    }

    #[test]
    fn beta_defaults_to_model() {
        let c = ExperimentConfig::default();
        assert_eq!(c.beta(&c.model_spec().unwrap()).unwrap(), 2.0);
        let lin = ExperimentConfig {
            model: ModelKind::Linear,
            ..ExperimentConfig::default()
        };
        assert!(lin.beta(&lin.model_spec().unwrap()).is_err());
    }
}
