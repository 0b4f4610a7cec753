//! Experiment configuration: human-editable TOML selecting a system, an
//! action cost, a network and the training/evaluation settings.
//!
//! All randomness flows from the single `seed`, split per consumer through
//! counter-based streams, so reruns reproduce bit-identical artifacts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::action_cost::ActionCost;
use crate::diffnet::{Activation, DifferentialNetwork};
use crate::dynamics::{CartpoleParams, ControlAffineSystem, Linear1dParams, PendulumParams};
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

pub const SYSTEM_IDS: &[&str] = &["linear_1d", "pendulum", "flexible_cartpole"];
pub const COST_IDS: &[&str] = &[
    "linear",
    "logistic",
    "atan",
    "tanh",
    "tanh-scaled",
    "atan-scaled",
    "bang-bang",
    "bang-lin",
];

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct SystemConfig {
    pub name: String,
    pub linear_1d: Option<Linear1dParams>,
    pub pendulum: Option<PendulumParams>,
    pub cartpole: Option<CartpoleParams>,
}

impl SystemConfig {
    pub fn build(&self) -> Result<ControlAffineSystem> {
        match self.name.as_str() {
            "linear_1d" => Ok(self
                .linear_1d
                .clone()
                .map(ControlAffineSystem::linear_1d_with)
                .unwrap_or_else(ControlAffineSystem::linear_1d)),
            "pendulum" => Ok(self
                .pendulum
                .clone()
                .map(ControlAffineSystem::pendulum_with)
                .unwrap_or_else(ControlAffineSystem::pendulum)),
            "flexible_cartpole" => Ok(self
                .cartpole
                .clone()
                .map(ControlAffineSystem::flexible_cartpole_with)
                .unwrap_or_else(ControlAffineSystem::flexible_cartpole)),
            other => Err(Error::Config(format!(
                "unknown system '{other}'; available: {SYSTEM_IDS:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CostConfig {
    pub id: String,
    /// Diagonal R for the `linear` cost.
    pub r_diag: Option<Vec<f64>>,
    /// Barrier limit for `tanh-scaled` / `atan-scaled`; defaults to the
    /// system's action limit.
    pub alpha: Option<f64>,
    /// Optional cost scaling applied on top of the base entry.
    pub beta: Option<f64>,
    /// Optional action shift applied on top of the base entry.
    pub gamma: Option<f64>,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self { id: "linear".into(), r_diag: None, alpha: None, beta: None, gamma: None }
    }
}

impl CostConfig {
    pub fn build(&self, system: &ControlAffineSystem) -> Result<ActionCost> {
        let n_u = system.action_dim();
        let alpha = self
            .alpha
            .or(system.action_limit())
            .ok_or_else(|| Error::Config("barrier cost needs alpha or a system action limit".into()));
        let mut cost = match self.id.as_str() {
            "linear" => {
                let r = self.r_diag.clone().unwrap_or_else(|| vec![1.0; n_u]);
                if r.len() != n_u {
                    return Err(Error::Config(format!(
                        "r_diag has {} entries for {} actions",
                        r.len(),
                        n_u
                    )));
                }
                ActionCost::linear(r)?
            }
            "logistic" => ActionCost::logistic(n_u),
            "atan" => ActionCost::atan(n_u),
            "tanh" => ActionCost::tanh(n_u),
            "tanh-scaled" => ActionCost::tanh_act_scaled(alpha?, n_u)?,
            "atan-scaled" => ActionCost::atan_act_scaled(alpha?, n_u)?,
            "bang-bang" => ActionCost::bang_bang(n_u),
            "bang-lin" => ActionCost::bang_lin(n_u),
            other => {
                return Err(Error::Config(format!(
                    "unknown cost '{other}'; available: {COST_IDS:?}"
                )))
            }
        };
        if let Some(beta) = self.beta {
            cost = cost.scale_cost(beta)?;
        }
        if let Some(gamma) = self.gamma {
            cost = cost.shift_action(gamma)?;
        }
        Ok(cost)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { hidden: vec![64, 64], activation: Activation::Softplus }
    }
}

impl NetworkConfig {
    pub fn build(&self, system: &ControlAffineSystem, seed: u64) -> Result<DifferentialNetwork> {
        let mut widths = vec![system.state_dim()];
        widths.extend(&self.hidden);
        widths.push(1);
        DifferentialNetwork::init(&widths, self.activation, seed)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub n_starts: usize,
    pub horizon_s: f64,
    /// Discounting for reported costs; `None` uses the final training rho.
    pub rho_eval: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n_starts: 300, horizon_s: 10.0, rho_eval: None }
    }
}

/// Oracle/value-export settings for `run` bundles.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// Grid points per state dimension for the value-iteration oracle.
    pub grid_points: usize,
    pub n_actions: usize,
    pub dt: f64,
    /// Relative inset of the action grid from barrier limits.
    pub action_inset: f64,
    /// Action-grid half-range for unconstrained costs.
    pub action_range: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { grid_points: 201, n_actions: 101, dt: 0.02, action_inset: 1e-3, action_range: 13.0 }
    }
}

/// One reproducible experiment.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    /// Worker cap for intra-stage parallelism; `None` uses all cores.
    pub threads: Option<usize>,
    pub system: SystemConfig,
    pub cost: CostConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub oracle: OracleConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let system = self.system.build()?;
        let cost = self.cost.build(&system)?;
        if cost.action_dim() != system.action_dim() {
            return Err(Error::Config(format!(
                "cost dimension {} != system action dimension {}",
                cost.action_dim(),
                system.action_dim()
            )));
        }
        self.train.validate()?;
        if self.eval.n_starts == 0 || self.eval.horizon_s <= 0.0 {
            return Err(Error::Config("evaluation needs starts >= 1 and a positive horizon".into()));
        }
        Ok(())
    }

    /// FNV-1a hash of the canonical TOML form, recorded in run manifests.
    pub fn content_hash(&self) -> u64 {
        fnv1a(self.to_toml().as_bytes())
    }
}

/// Parameters of the penalty-landscape sweep, loadable from the
/// `[fig1]` table of a config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Fig1SweepConfig {
    pub theta_min: f64,
    pub theta_max: f64,
    pub n_thetas: usize,
    pub lambdas: Vec<f64>,
    pub rho: f64,
    pub rhos_for_roots: Vec<f64>,
}

impl Default for Fig1SweepConfig {
    fn default() -> Self {
        Self {
            theta_min: -3.0,
            theta_max: 3.0,
            n_thetas: 601,
            lambdas: vec![0.0, 1.0, 10.0],
            rho: 0.0,
            rhos_for_roots: vec![0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0, 100.0, 300.0, 1000.0],
        }
    }
}

impl Fig1SweepConfig {
    pub fn load(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Wrapper {
            fig1: Fig1SweepConfig,
        }
        let text = std::fs::read_to_string(path)?;
        let w: Wrapper =
            toml::from_str(&text).map_err(|e| Error::Config(format!("fig1 config: {e}")))?;
        Ok(w.fig1)
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}
