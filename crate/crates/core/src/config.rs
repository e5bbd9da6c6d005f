//! The TOML run configuration and its translation into an
//! [`ExperimentPlan`].

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::covariance::{CovarianceOptions, PrefactorExponent, DEFAULT_MC_SAMPLES};
use crate::error::{Error, Result};
use crate::experiments::{default_pairs, default_targets, Check, ExperimentPlan};
use crate::lattice::TimePoint;
use crate::observables::{Holder, Observable, Polynomial, Term};
use crate::qmaps::{QFamily, QMap};
use crate::quadrature::QuadratureConfig;
use crate::random_fields::FieldSpec;
use crate::schedule::{AssumptionParams, DEFAULT_ETA, DEFAULT_TAU};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableConfig {
    /// `Σ_j c_j x_j`.
    Linear {
        coeffs: Vec<f64>,
        holder: Option<Holder>,
    },
    /// `∏_j x_{j, comps[j]}`.
    Product {
        comps: Vec<usize>,
        #[serde(default = "one")]
        dim: usize,
        holder: Option<Holder>,
    },
    /// `x_{arg}^p` (0-based `arg`).
    Power {
        arity: usize,
        arg: usize,
        p: u32,
        holder: Option<Holder>,
    },
    Polynomial {
        arity: usize,
        #[serde(default = "one")]
        dim: usize,
        terms: Vec<Term>,
        holder: Option<Holder>,
    },
    Zero {
        arity: usize,
        #[serde(default = "one")]
        dim: usize,
    },
}

fn one() -> usize {
    1
}

impl ObservableConfig {
    pub fn build(&self) -> Result<Observable> {
        let with = |o: Observable, h: &Option<Holder>| match h {
            Some(h) => o.with_holder(*h),
            None => Ok(o),
        };
        match self {
            ObservableConfig::Linear { coeffs, holder } => {
                with(Observable::linear(coeffs)?, holder)
            }
            ObservableConfig::Product { comps, dim, holder } => {
                with(Observable::product(comps, *dim)?, holder)
            }
            ObservableConfig::Power {
                arity,
                arg,
                p,
                holder,
            } => with(Observable::power(*arity, *arg, *p)?, holder),
            ObservableConfig::Polynomial {
                arity,
                dim,
                terms,
                holder,
            } => Observable::polynomial(*arity, *dim, Polynomial::new(terms.clone()), *holder),
            ObservableConfig::Zero { arity, dim } => Observable::zero(*arity, *dim),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QMapsConfig {
    pub k: usize,
    #[serde(default)]
    pub nonlinear: Vec<QMap>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub tau: f64,
    pub eta: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            tau: DEFAULT_TAU,
            eta: DEFAULT_ETA,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub n_grid: Vec<u64>,
    pub replicas: usize,
    pub seed: u64,
    /// Defaults to `(¼,…)`, `(½,…)`, `(1,…)`.
    pub targets: Option<Vec<Vec<f64>>>,
    /// Defaults to the 3×3 grid `s ∈ {0,¼,½}`, `t ∈ {½,¾,1}`.
    pub pairs: Option<Vec<(Vec<f64>, Vec<f64>)>>,
    pub checks: Vec<Check>,
    pub cramer_wold: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_grid: vec![16, 32, 64],
            replicas: 5000,
            seed: 0,
            targets: None,
            pairs: None,
            checks: vec![
                Check::Cov,
                Check::Gauss,
                Check::Moment4,
                Check::Slln,
                Check::Cross,
            ],
            cramer_wold: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CovarianceConfig {
    pub prefactor: PrefactorExponent,
    pub truncation_radius: Option<u64>,
    pub mc_samples: usize,
}

impl Default for CovarianceConfig {
    fn default() -> Self {
        CovarianceConfig {
            prefactor: PrefactorExponent::Dimension,
            truncation_radius: None,
            mc_samples: DEFAULT_MC_SAMPLES,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckConfig {
    /// Radius of the q-map condition scan; defaults by dimension.
    pub scan_radius: Option<f64>,
    pub assumption: Option<AssumptionParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: "rf-lab-out".into(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub field: FieldSpec,
    pub observable: ObservableConfig,
    pub qmaps: QMapsConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub covariance: CovarianceConfig,
    #[serde(default)]
    pub check: CheckConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Written by `rf-lab init`; every default spelled out.
pub const TEMPLATE: &str = r#"# rf-lab configuration. Unknown keys are rejected.

[field]
kind = "iid"            # iid | gaussian_ma | kernel_ma
nu = 1                  # lattice dimension
value_dim = 1
marginal = { type = "normal", std_dev = 1.0 }   # law of the driving noise
kernel = []             # e.g. [{ offset = [0], weight = 1.0 }, { offset = [1], weight = 1.0 }]

[observable]
type = "linear"         # linear | product | power | polynomial | zero
coeffs = [1.0]

[qmaps]
k = 1                   # q_j(n) = j·n for j ≤ k
nonlinear = []          # e.g. [{ type = "monomial", exponents = [2] }]

[schedule]
tau = 0.9
eta = 0.29

[experiment]
n_grid = [16, 32, 64]
replicas = 5000
seed = 0
checks = ["cov", "gauss", "moment4", "slln", "cross"]   # also: "gaps"
cramer_wold = 8
# targets = [[0.25], [0.5], [1.0]]
# pairs = [[[0.0], [0.5]], [[0.25], [1.0]]]

[covariance]
prefactor = "dimension" # dimension: (v/(ij))^nu | literal: v/(ij)
mc_samples = 100000
# truncation_radius = 4

[check]
# scan_radius = 2048.0
# assumption = { p = 2.0, q = 4.0, m = 8.0, delta = 1.0 }

[output]
dir = "rf-lab-out"
"#;

fn point(v: &[f64]) -> Result<TimePoint> {
    TimePoint::new(v.to_vec()).map_err(|e| Error::Config(e.to_string()))
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// SHA-256 of the canonical JSON form, independent of layout and comments.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canon))
    }

    pub fn qfamily(&self) -> Result<QFamily> {
        QFamily::new(self.field.nu, self.qmaps.k, self.qmaps.nonlinear.clone())
    }

    pub fn covariance_options(&self) -> CovarianceOptions {
        CovarianceOptions {
            truncation_radius: self.covariance.truncation_radius,
            prefactor: self.covariance.prefactor,
            mc_samples: self.covariance.mc_samples,
            ..CovarianceOptions::default()
        }
    }

    pub fn plan(&self) -> Result<ExperimentPlan> {
        let nu = self.field.nu;
        let e = &self.experiment;
        let mut p = ExperimentPlan::new(
            self.field.clone(),
            self.observable.build()?,
            self.qfamily()?,
        );
        p.n_grid = e.n_grid.clone();
        p.replicas = e.replicas;
        p.seed = e.seed;
        p.targets = match &e.targets {
            Some(t) => t.iter().map(|v| point(v)).collect::<Result<_>>()?,
            None => default_targets(nu),
        };
        p.pairs = match &e.pairs {
            Some(ps) => ps
                .iter()
                .map(|(s, t)| Ok((point(s)?, point(t)?)))
                .collect::<Result<_>>()?,
            None => default_pairs(nu),
        };
        p.checks = e.checks.clone();
        p.tau = self.schedule.tau;
        p.eta = self.schedule.eta;
        p.covariance = self.covariance_options();
        p.quadrature = QuadratureConfig::default();
        p.cramer_wold = e.cramer_wold;
        p.config_hash = self.hash();
        p.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(p)
    }
}
