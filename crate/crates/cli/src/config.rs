//! Experiment configuration: one TOML file per experiment. A top-level
//! `include` (string or array of paths, relative to the including file)
//! pulls in shared tables first; keys in the including file win.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use nnet_core::model::{validate_limit_params, CostSpec, LimitParams};
use serde::Deserialize;
use toml::{Table, Value};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Problem {
    /// Queue plus idleness cost.
    #[default]
    Unconstrained,
    /// Queue cost with per-pool idleness budgets.
    Budget,
    /// Queue cost with pool-1 idleness tied to θ times pool-2 idleness.
    Fairness,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    #[default]
    Sdp,
    /// Schedule induced by a control field everywhere (static priority where infeasible).
    Induced,
    /// Induced inside a ball around the fluid center, static priority outside.
    Concatenated,
    /// Allocation table from the exact oracle.
    Table,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub r: [f64; 2],
    pub h: [f64; 2],
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { r: [8.0, 8.0], h: [0.05, 0.05] }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HjbConfig {
    pub max_iter: usize,
    /// Constraint tolerance of the budget and fairness solvers.
    pub tol: f64,
    pub max_outer: usize,
    /// Regularization strengths for the fairness ε-mode; empty disables it.
    pub eps: Vec<f64>,
    /// Weight of the coercive term; derived from the diffusion drift bound when absent.
    pub kappa2: Option<f64>,
    /// Multiplier offsets for the saddle check of the budget problem; empty skips it.
    pub saddle_offsets: Vec<f64>,
}

impl Default for HjbConfig {
    fn default() -> Self {
        HjbConfig { max_iter: 100, tol: 1e-3, max_outer: 500, eps: Vec::new(), kappa2: None, saddle_offsets: Vec::new() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub horizon: f64,
    pub burn_in: f64,
    pub batches: usize,
    pub replicates: usize,
    pub k_list: Vec<f64>,
    pub policy: PolicyKind,
    /// Control field (`x1,x2,t,s`) or allocation table (`x1,x2,z11,z12,z22`).
    pub policy_file: Option<PathBuf>,
    /// ℓ¹ radius of the induced region as a fraction of `n`.
    pub radius: Option<f64>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            horizon: 1e4,
            burn_in: 1e3,
            batches: 20,
            replicates: 8,
            k_list: vec![2.0],
            policy: PolicyKind::Sdp,
            policy_file: None,
            radius: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MdpConfig {
    pub n_list: Vec<u64>,
    /// Fixed box `[0, max1] × [0, max2]`; overrides `box_width`.
    pub box_max: Option<[i64; 2]>,
    /// Box `maxᵢ = ⌈n x*ᵢ + width √n⌉`.
    pub box_width: f64,
    /// Restrict to jointly work-conserving actions inside this ℓ¹ radius (fraction of `n`).
    pub ejwc_radius: Option<f64>,
    pub tol: f64,
}

impl Default for MdpConfig {
    fn default() -> Self {
        MdpConfig { n_list: Vec::new(), box_max: None, box_width: 12.0, ejwc_radius: None, tol: 1e-9 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub k: f64,
    /// Fixed β for the chain check; searched over `[1, 4β̄]` when absent.
    pub beta: Option<f64>,
    pub beta_candidates: usize,
    pub sdp_n: u64,
    pub sdp_radius: f64,
    pub diffusion_box: f64,
    pub diffusion_step: f64,
    pub s_step: f64,
    pub induced_n: u64,
    /// ℓ¹ radius of the induced check as a fraction of `n`; half the JWC radius when absent.
    pub induced_radius: Option<f64>,
    /// Control field for the induced check; the row is skipped when absent.
    pub policy_file: Option<PathBuf>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            k: 2.0,
            beta: None,
            beta_candidates: 9,
            sdp_n: 100,
            sdp_radius: 20.0,
            diffusion_box: 10.0,
            diffusion_step: 0.1,
            s_step: 0.05,
            induced_n: 100,
            induced_radius: None,
            policy_file: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimalityConfig {
    pub n_list: Vec<u64>,
    pub oracle_n_list: Vec<u64>,
    pub horizon: f64,
    pub burn_in: f64,
    pub replicates: usize,
    pub radius: Option<f64>,
    /// Extrapolate the limiting value from grid steps `h` and `h/2`.
    pub richardson: bool,
}

impl Default for OptimalityConfig {
    fn default() -> Self {
        OptimalityConfig {
            n_list: vec![50, 100, 200, 400],
            oracle_n_list: vec![5, 10, 20],
            horizon: 2000.0,
            burn_in: 200.0,
            replicates: 8,
            radius: None,
            richardson: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub params: LimitParams,
    #[serde(default)]
    pub cost: CostSpec,
    #[serde(default)]
    pub problem: Problem,
    #[serde(default = "default_n_list")]
    pub n_list: Vec<u64>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub hjb: HjbConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub mdp: MdpConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub optimality: OptimalityConfig,
}

fn default_n_list() -> Vec<u64> {
    vec![100]
}

fn default_seed() -> u64 {
    1
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let table = load_table(path, &mut BTreeSet::new())?;
        let mut cfg: ExperimentConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for f in [&mut cfg.simulation.policy_file, &mut cfg.verify.policy_file].into_iter().flatten() {
            if f.is_relative() {
                *f = base.join(&*f);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        validate_limit_params(&self.params)?;
        self.cost.validate()?;
        if self.problem == Problem::Fairness {
            self.cost.validate_fairness()?;
        }
        if self.n_list.contains(&0) {
            return Err(CliError::Config("n_list entries must be positive".into()));
        }
        Ok(())
    }
}

fn load_table(path: &Path, stack: &mut BTreeSet<PathBuf>) -> Result<Table, CliError> {
    let canon = path.canonicalize().map_err(|e| CliError::io(path, e))?;
    if !stack.insert(canon.clone()) {
        return Err(CliError::Config(format!("include cycle through {}", path.display())));
    }
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut table: Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(format!("{}: {e}", path.display())))?;
    let includes = match table.remove("include") {
        None => Vec::new(),
        Some(Value::String(s)) => vec![s],
        Some(Value::Array(a)) => a
            .into_iter()
            .map(|v| match v {
                Value::String(s) => Ok(s),
                other => Err(CliError::Config(format!("{}: include entries must be strings, got {other}", path.display()))),
            })
            .collect::<Result<_, _>>()?,
        Some(other) => {
            return Err(CliError::Config(format!("{}: include must be a string or array, got {other}", path.display())))
        }
    };
    let base = path.parent().unwrap_or(Path::new("."));
    let mut merged = Table::new();
    for inc in includes {
        let sub = load_table(&base.join(inc), stack)?;
        merge(&mut merged, sub);
    }
    merge(&mut merged, table);
    stack.remove(&canon);
    Ok(merged)
}

/// Deep merge, `over` taking precedence.
fn merge(into: &mut Table, over: Table) {
    for (k, v) in over {
        match (into.get_mut(&k), v) {
            (Some(Value::Table(a)), Value::Table(b)) => merge(a, b),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}
