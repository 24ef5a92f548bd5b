//! Experiment configuration: one JSON document per run.
//!
//! ```json
//! {"experiment": "nonexit", "seed": 7, "output": "out/nonexit.json",
//!  "params": {"model": {"model": "tail", "eta": 1.0, "D": 1.0}, "box": {...}, "t": 2.0,
//!             "n_env": 32, "n_walks": 256}}
//! ```
//!
//! Field paths in error messages are dotted from the document root, e.g. `params.box.G`.

use std::fmt;
use std::path::{Path, PathBuf};

use rwrc::conductance::{ConductanceModel, EllipticModel, TailModel};
use rwrc::lattice::{BoxSpec, Domain, Site};
use rwrc::scaling::ChiInput;
use rwrc::spectrum::DEFAULT_TOLERANCE;
use rwrc::varprob::SolverConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};
use crate::slopes::SlopePoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Sample,
    Simulate,
    ChiD,
    ChiC,
    Nonexit,
    Lifshitz,
    Homog,
    Regime,
    Predict,
    Eigen,
    CompareSlopes,
}

impl ExperimentKind {
    /// Kinds that draw random environments or walks and therefore need an explicit seed.
    pub fn is_stochastic(self) -> bool {
        matches!(self, Self::Sample | Self::Simulate | Self::Nonexit | Self::Lifshitz | Self::Homog)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Sample => "sample",
            Self::Simulate => "simulate",
            Self::ChiD => "chi-d",
            Self::ChiC => "chi-c",
            Self::Nonexit => "nonexit",
            Self::Lifshitz => "lifshitz",
            Self::Homog => "homog",
            Self::Regime => "regime",
            Self::Predict => "predict",
            Self::Eigen => "eigen",
            Self::CompareSlopes => "compare-slopes",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A potential `V` on the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    Constant {
        value: f64,
    },
    /// `offset + gradient · y`.
    Linear {
        gradient: Vec<f64>,
        #[serde(default)]
        offset: f64,
    },
    /// `scale |y - center|^2`.
    Quadratic {
        center: Vec<f64>,
        #[serde(default = "one")]
        scale: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl PotentialSpec {
    pub fn eval(&self, y: &[f64]) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::Linear { gradient, offset } => offset + gradient.iter().zip(y).map(|(g, y)| g * y).sum::<f64>(),
            Self::Quadratic { center, scale } => scale * center.iter().zip(y).map(|(c, y)| (y - c).powi(2)).sum::<f64>(),
        }
    }

    fn check(&self, d: usize, path: &str) -> CliResult<()> {
        let (len, field) = match self {
            Self::Constant { .. } => return Ok(()),
            Self::Linear { gradient, .. } => (gradient.len(), "gradient"),
            Self::Quadratic { center, .. } => (center.len(), "center"),
        };
        if len != d {
            return Err(CliError::config(
                format!("{path}.{field}"),
                format!("expected {d} components, got {len}"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleParams {
    pub model: ConductanceModel,
    #[serde(rename = "box")]
    pub box_spec: BoxSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateParams {
    pub model: ConductanceModel,
    #[serde(rename = "box")]
    pub box_spec: BoxSpec,
    /// Defaults to the origin.
    #[serde(default)]
    pub start: Option<Site>,
    pub horizon: f64,
    #[serde(default = "yes")]
    pub stop_on_exit: bool,
}

fn yes() -> bool {
    true
}

/// Exactly one of `p` and `eta`; `eta` maps to `p = 2 eta / (1 + eta)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Exponent {
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub eta: Option<f64>,
}

impl Exponent {
    pub fn resolve(&self) -> CliResult<f64> {
        match (self.p, self.eta) {
            (Some(p), None) if p.is_finite() && p > 0.0 => Ok(p),
            (Some(_), None) => Err(CliError::config("params.p", "must be positive and finite")),
            (None, Some(eta)) if eta.is_finite() && eta > 0.0 => Ok(2.0 * eta / (1.0 + eta)),
            (None, Some(_)) => Err(CliError::config("params.eta", "must be positive and finite")),
            _ => Err(CliError::config("params", "give exactly one of `p` and `eta`")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChiDParams {
    #[serde(rename = "box")]
    pub box_spec: BoxSpec,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChiCParams {
    #[serde(rename = "G")]
    pub domain: Domain,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub eta: Option<f64>,
    pub levels: Vec<f64>,
    #[serde(default)]
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonExitParams {
    pub model: ConductanceModel,
    #[serde(rename = "box")]
    pub box_spec: BoxSpec,
    #[serde(default)]
    pub start: Option<Site>,
    pub t: f64,
    pub n_env: usize,
    pub n_walks: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifshitzParams {
    pub model: TailModel,
    #[serde(rename = "box")]
    pub box_spec: BoxSpec,
    pub eps: Vec<f64>,
    pub n_env: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomogParams {
    pub model: EllipticModel,
    pub d: usize,
    pub sizes: Vec<f64>,
    pub j_max: usize,
    pub n_env: usize,
    #[serde(default)]
    pub potential: Option<PotentialSpec>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeQuery {
    pub eta: f64,
    pub d: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum PredictParams {
    Nonexit {
        eta: f64,
        #[serde(rename = "D")]
        tail_constant: f64,
        d: usize,
        t: f64,
        alpha: f64,
        chi: ChiInput,
        #[serde(default = "default_window")]
        window_ratio: f64,
    },
    Lifshitz {
        eta: f64,
        d: usize,
        s: f64,
        chi_c: f64,
    },
}

fn default_window() -> f64 {
    rwrc::scaling::DEFAULT_WINDOW_RATIO
}

/// Unit-scale box with the same conductance on every bond.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformField {
    #[serde(rename = "box")]
    pub box_spec: BoxSpec,
    #[serde(default = "one")]
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EigenParams {
    /// A field written by `sample` (either the whole result file or a bare field record).
    #[serde(default)]
    pub field: Option<PathBuf>,
    #[serde(default)]
    pub uniform: Option<UniformField>,
    #[serde(default)]
    pub potential: Option<PotentialSpec>,
    #[serde(default = "one")]
    pub laplace_scale: f64,
    #[serde(default = "one_usize")]
    pub count: usize,
    /// Residual tolerance relative to the spectral scale of the operator.
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn one_usize() -> usize {
    1
}

fn default_tol() -> f64 {
    DEFAULT_TOLERANCE
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSlopesParams {
    #[serde(default)]
    pub table: Option<Vec<SlopePoint>>,
    /// CSV with columns `x,estimate,lo,hi`.
    #[serde(default)]
    pub table_file: Option<PathBuf>,
    pub predicted_slope: f64,
}

#[derive(Debug, Clone)]
pub enum Params {
    Sample(SampleParams),
    Simulate(SimulateParams),
    ChiD(ChiDParams),
    ChiC(ChiCParams),
    Nonexit(NonExitParams),
    Lifshitz(LifshitzParams),
    Homog(HomogParams),
    Regime(RegimeQuery),
    Predict(PredictParams),
    Eigen(EigenParams),
    CompareSlopes(CompareSlopesParams),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    experiment: ExperimentKind,
    #[serde(default)]
    seed: Option<u64>,
    output: PathBuf,
    params: Value,
}

/// A parsed and validated experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: Option<u64>,
    pub output: PathBuf,
    pub params: Params,
    hash: String,
}

fn parse_at<T: DeserializeOwned>(value: Value, prefix: &str) -> CliResult<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let path = match (prefix.is_empty(), inner.as_str()) {
            (true, ".") => "$".to_string(),
            (true, _) => inner,
            (false, ".") => prefix.to_string(),
            (false, _) => format!("{prefix}.{inner}"),
        };
        CliError::config(path, e.into_inner().to_string())
    })
}

fn require_file(path: &Path, field: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::config(field, format!("file {} does not exist", path.display())))
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config("$", format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> CliResult<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| CliError::config("$", e.to_string()))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> CliResult<Self> {
        let doc: Document = parse_at(value, "")?;
        if doc.kind_needs_seed() && doc.seed.is_none() {
            return Err(CliError::config(
                "seed",
                format!("`{}` is stochastic and needs an explicit seed", doc.experiment),
            ));
        }
        let hash = config_hash(doc.experiment, doc.seed, &doc.params);
        let raw = doc.params;
        let params = match doc.experiment {
            ExperimentKind::Sample => Params::Sample(parse_at(raw, "params")?),
            ExperimentKind::Simulate => Params::Simulate(parse_at(raw, "params")?),
            ExperimentKind::ChiD => Params::ChiD(parse_at(raw, "params")?),
            ExperimentKind::ChiC => Params::ChiC(parse_at(raw, "params")?),
            ExperimentKind::Nonexit => Params::Nonexit(parse_at(raw, "params")?),
            ExperimentKind::Lifshitz => Params::Lifshitz(parse_at(raw, "params")?),
            ExperimentKind::Homog => Params::Homog(parse_at(raw, "params")?),
            ExperimentKind::Regime => Params::Regime(parse_at(raw, "params")?),
            ExperimentKind::Predict => Params::Predict(parse_at(raw, "params")?),
            ExperimentKind::Eigen => Params::Eigen(parse_at(raw, "params")?),
            ExperimentKind::CompareSlopes => Params::CompareSlopes(parse_at(raw, "params")?),
        };
        let config = Self {
            kind: doc.experiment,
            seed: doc.seed,
            output: doc.output,
            params,
            hash,
        };
        config.check()?;
        Ok(config)
    }

    /// SHA-256 of the canonical (key-sorted, compact) JSON of `experiment`, `seed` and `params`.
    /// The output path is left out so that reruns into different directories agree.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Cross-field checks that the schema alone cannot express.
    fn check(&self) -> CliResult<()> {
        match &self.params {
            Params::ChiD(p) => {
                Exponent { p: p.p, eta: p.eta }.resolve()?;
            }
            Params::ChiC(p) => {
                Exponent { p: p.p, eta: p.eta }.resolve()?;
                if p.levels.is_empty() {
                    return Err(CliError::config("params.levels", "need at least one level"));
                }
            }
            Params::Homog(p) => {
                if let Some(v) = &p.potential {
                    v.check(p.d, "params.potential")?;
                }
            }
            Params::Eigen(p) => {
                match (&p.field, &p.uniform) {
                    (Some(path), None) => require_file(path, "params.field")?,
                    (None, Some(_)) => {}
                    _ => return Err(CliError::config("params", "give exactly one of `field` and `uniform`")),
                }
                if p.count == 0 {
                    return Err(CliError::config("params.count", "must be at least 1"));
                }
            }
            Params::CompareSlopes(p) => match (&p.table, &p.table_file) {
                (Some(_), None) => {}
                (None, Some(path)) => require_file(path, "params.table_file")?,
                _ => return Err(CliError::config("params", "give exactly one of `table` and `table_file`")),
            },
            _ => {}
        }
        Ok(())
    }
}

impl Document {
    fn kind_needs_seed(&self) -> bool {
        self.experiment.is_stochastic()
    }
}

fn config_hash(kind: ExperimentKind, seed: Option<u64>, params: &Value) -> String {
    // serde_json maps are key-sorted, so `to_string` is canonical.
    let canonical = json!({ "experiment": kind, "seed": seed, "params": params }).to_string();
    let digest = Sha256::digest(canonical.as_bytes());
    format!("{digest:x}")
}
