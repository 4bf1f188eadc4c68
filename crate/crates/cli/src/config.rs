//! JSON configurations per subcommand. `--schema` prints the generated schema.

use std::collections::BTreeMap;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use ldplab::action::MinimizeOptions;
use ldplab::conditions::{ContainmentCandidate, ContainmentProbe, Direction, Side};
use ldplab::ldp_verify::EventPredicate;
use ldplab::models::{bundled, Model, ModelSpec};

use crate::output::CliError;

/// A bundled model name or an inline model specification.
#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum ModelRef {
    Builtin(String),
    Inline(#[schemars(with = "serde_json::Value")] Box<ModelSpec>),
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
pub struct ModelSection {
    pub model: ModelRef,
    /// Parameter overrides applied after loading.
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl ModelSection {
    pub fn load(&self) -> Result<Model, CliError> {
        let base = match &self.model {
            ModelRef::Builtin(name) => bundled(name)?,
            ModelRef::Inline(spec) => Model::from_spec((**spec).clone())?,
        };
        if self.params.is_empty() {
            Ok(base)
        } else {
            Ok(base.with_params(&self.params)?)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
pub struct SimulateConfig {
    #[serde(flatten)]
    pub model: ModelSection,
    pub n: u64,
    pub horizon: f64,
    pub seed: u64,
    /// Initial counts; `x0 * n` rounded when absent.
    #[serde(default)]
    pub q0: Option<Vec<i64>>,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub replicas: u64,
    #[serde(default)]
    pub max_events: Option<u64>,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
pub struct LlnConfig {
    #[serde(flatten)]
    pub model: ModelSection,
    pub x0: Vec<f64>,
    pub n_list: Vec<u64>,
    pub horizon: f64,
    pub reps: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PathConfig {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
pub struct ActionConfig {
    #[serde(flatten)]
    pub model: ModelSection,
    pub path: PathConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
pub struct MinpathConfig {
    #[serde(flatten)]
    pub model: ModelSection,
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub horizon: f64,
    pub segments: usize,
    #[serde(default)]
    #[schemars(with = "Option<serde_json::Value>")]
    pub options: Option<MinimizeOptions>,
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
pub struct FlowConfig {
    #[serde(flatten)]
    pub model: ModelSection,
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
    /// Gradient expressions in `x1..xd`; zero-cost flow when absent.
    #[serde(default)]
    pub gradient: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, JsonSchema, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum LagrangianKind {
    /// Transform of `H_dagger` at x.
    Full,
    /// Convex hull of the active piece Lagrangians.
    Hull,
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct VRange {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
pub struct LegendreConfig {
    #[serde(flatten)]
    pub model: ModelSection,
    pub x: Vec<f64>,
    /// Explicit velocities.
    #[serde(default)]
    pub v: Vec<Vec<f64>>,
    /// One-dimensional velocity range, appended to `v`.
    #[serde(default)]
    pub v_range: Option<VRange>,
    #[serde(default = "full")]
    pub kind: LagrangianKind,
}

fn full() -> LagrangianKind {
    LagrangianKind::Full
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum LdpRateConfig {
    /// `-(1/n) log P[Poisson(n rho t) >= n a]` for each n.
    PoissonExact { rho: f64, t: f64, a: f64, n_list: Vec<u64> },
    MonteCarlo {
        #[serde(flatten)]
        model: ModelSection,
        #[schemars(with = "serde_json::Value")]
        event: EventPredicate,
        x0: Vec<f64>,
        n: u64,
        horizon: f64,
        reps: u64,
        seed: u64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct BasicSection {
    pub k: (f64, f64),
    #[serde(default = "p_max")]
    pub p_max: f64,
}

fn p_max() -> f64 {
    ldplab::conditions::P_MAX
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct BoundarySection {
    #[schemars(with = "String")]
    pub side: Side,
    #[schemars(with = "String")]
    pub direction: Direction,
    #[serde(default = "half")]
    pub len: f64,
    #[serde(default = "p_max")]
    pub p_max: f64,
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ContainmentSection {
    #[schemars(with = "serde_json::Value")]
    pub candidate: ContainmentCandidate,
    #[schemars(with = "serde_json::Value")]
    pub probe: ContainmentProbe,
    /// A priori confinement level for paths started in `k` with cost at most `m` up to `horizon`.
    #[serde(default)]
    pub confinement: Option<ConfinementSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ConfinementSection {
    pub k: Vec<(f64, f64)>,
    pub horizon: f64,
    pub m: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AppendixBSection {
    pub alpha: f64,
    pub probe: (f64, f64),
    #[serde(default = "two_hundred")]
    pub points: usize,
}

fn two_hundred() -> usize {
    200
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct MultidSection {
    pub box_bounds: Vec<(f64, f64)>,
    #[serde(default = "two_hundred")]
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
pub struct ConditionsConfig {
    #[serde(flatten)]
    pub model: ModelSection,
    #[serde(default)]
    pub basic: Option<BasicSection>,
    #[serde(default)]
    pub boundary: Vec<BoundarySection>,
    #[serde(default)]
    pub containment: Vec<ContainmentSection>,
    #[serde(default)]
    pub appendix_b: Option<AppendixBSection>,
    #[serde(default)]
    pub multid: Option<MultidSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
pub struct HjConfig {
    #[serde(flatten)]
    pub model: ModelSection,
    pub lambda: f64,
    /// Right-hand side as an expression in `x1` (model parameters are in scope).
    pub h: String,
    pub lo: f64,
    pub hi: f64,
    pub intervals: usize,
    /// Number of grid halvings for the comparison study.
    #[serde(default)]
    pub refinements: usize,
    #[serde(default)]
    pub sponge_check: bool,
    /// Build the Hamiltonians without consistency checks (negative controls).
    #[serde(default)]
    pub unchecked: bool,
    /// Damping for the fixed-point iteration; Newton when absent.
    #[serde(default)]
    pub damping: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct DemoConfig {
    #[serde(default = "demo_replicas")]
    pub replicas: u64,
    #[serde(default = "demo_n")]
    pub n: u64,
    #[serde(default = "demo_segments")]
    pub segments: usize,
    #[serde(default = "one")]
    pub seed: u64,
}

fn demo_replicas() -> u64 {
    1_000_000
}

fn demo_n() -> u64 {
    100
}

fn demo_segments() -> usize {
    10_000
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig { replicas: demo_replicas(), n: demo_n(), segments: demo_segments(), seed: 1 }
    }
}
