//! Experiment configuration, loadable from TOML.

use std::path::{Path, PathBuf};

use pbrl_core::algorithms::{AlgoConfig, AlgoVariant, EngineKind};
use pbrl_core::explorer::NavigatorConfig;
use pbrl_core::mdp::{
    make_counterexample, make_gridworld, make_random_mdp, make_tiny_mdp, LayeredMdp, RandomMdpParams,
    RewardNormalization, TinyShape,
};
use pbrl_core::preference::PreferenceSpec;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

/// Environment generator and its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    Gridworld {
        size: usize,
        #[serde(default = "default_blocks")]
        blocks: usize,
        #[serde(default = "default_block_reward")]
        block_reward: f64,
    },
    RandomMdp {
        #[serde(default = "default_layers")]
        n_layers: usize,
        #[serde(default = "default_states_per_layer")]
        states_per_layer: usize,
        #[serde(default = "default_actions")]
        n_actions: usize,
        #[serde(default = "default_dirichlet")]
        dirichlet_param: f64,
        #[serde(default = "default_exp_scale")]
        exp_scale: f64,
        #[serde(default)]
        normalization: RewardNormalization,
    },
    Tiny {
        layers: usize,
        states_per_layer: usize,
        actions: usize,
        #[serde(default)]
        deterministic: bool,
    },
    Counterexample,
    /// Environment JSON written by `gen-env`; the seed is ignored.
    File { path: PathBuf },
}

fn default_blocks() -> usize {
    3
}
fn default_block_reward() -> f64 {
    1.0 / 3.0
}
fn default_layers() -> usize {
    5
}
fn default_states_per_layer() -> usize {
    4
}
fn default_actions() -> usize {
    4
}
fn default_dirichlet() -> f64 {
    0.1
}
fn default_exp_scale() -> f64 {
    5.0
}

impl EnvSpec {
    pub fn build(&self, seed: u64) -> Result<LayeredMdp, HarnessError> {
        Ok(match self {
            Self::Gridworld { size, blocks, block_reward } => make_gridworld(*size, *blocks, *block_reward, seed)?,
            Self::RandomMdp { n_layers, states_per_layer, n_actions, dirichlet_param, exp_scale, normalization } => {
                let params = RandomMdpParams {
                    n_layers: *n_layers,
                    states_per_layer: *states_per_layer,
                    n_actions: *n_actions,
                    dirichlet_param: *dirichlet_param,
                    exp_scale: *exp_scale,
                    normalization: *normalization,
                };
                make_random_mdp(&params, seed)?
            }
            Self::Tiny { layers, states_per_layer, actions, deterministic } => make_tiny_mdp(
                TinyShape {
                    layers: *layers,
                    states_per_layer: *states_per_layer,
                    actions: *actions,
                    deterministic: *deterministic,
                },
                seed,
            )?,
            Self::Counterexample => make_counterexample(),
            Self::File { path } => {
                let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
                LayeredMdp::from_json(&text)?
            }
        })
    }

    /// Short identifier used in output records.
    pub fn id(&self) -> String {
        match self {
            Self::Gridworld { size, .. } => format!("gridworld{size}x{size}"),
            Self::RandomMdp { n_layers, states_per_layer, n_actions, .. } => {
                format!("random{n_layers}x{states_per_layer}x{n_actions}")
            }
            Self::Tiny { layers, states_per_layer, actions, .. } => format!("tiny{layers}x{states_per_layer}x{actions}"),
            Self::Counterexample => "counterexample".into(),
            Self::File { path } => path.file_stem().map_or("file".into(), |s| s.to_string_lossy().into_owned()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgoName {
    /// Uniformly random policy; uses no interaction.
    Random,
    Pps,
    PepsTarget,
    PepsBudget,
    Peps2,
    PepsFixed,
}

impl AlgoName {
    pub fn label(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Pps => "pps",
            Self::PepsTarget => "peps_target",
            Self::PepsBudget => "peps_budget",
            Self::Peps2 => "peps2",
            Self::PepsFixed => "peps_fixed",
        }
    }
}

/// An algorithm whose episode budget is supplied per run.
///
/// The budget `N` maps to each variant as follows, with `S` the number of
/// states: `peps_fixed` uses `N` directly; `peps_target` and `peps_budget` run
/// `⌊N/S⌋` episodes per state; `peps2` uses `⌊N/S⌋` for its second phase and,
/// unless given, for `n0` and `n1`; `pps` allows `⌊N/(2S)⌋` queries per state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgoSpec {
    pub name: AlgoName,
    /// Overrides the record's algorithm column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_epsilon1")]
    pub epsilon1: f64,
    #[serde(default = "default_c0")]
    pub c0: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n0: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n1: Option<u64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engine: Option<EngineKind>,
    #[serde(default = "default_gamma")]
    pub btm_gamma: f64,
    #[serde(default)]
    pub navigator: NavigatorConfig,
}

fn default_epsilon() -> f64 {
    0.5
}
fn default_epsilon1() -> f64 {
    0.1
}
fn default_c0() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    2.0
}
fn default_delta() -> f64 {
    0.1
}
fn default_gamma() -> f64 {
    0.5
}

impl AlgoSpec {
    pub fn new(name: AlgoName) -> Self {
        Self {
            name,
            label: None,
            epsilon: default_epsilon(),
            epsilon1: default_epsilon1(),
            c0: default_c0(),
            alpha: default_alpha(),
            n0: None,
            n1: None,
            delta: default_delta(),
            engine: None,
            btm_gamma: default_gamma(),
            navigator: NavigatorConfig::default(),
        }
    }

    pub fn id(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.name.label().into())
    }

    /// Concrete configuration for `budget` episodes on an MDP with `states`
    /// states; `None` for the random baseline.
    pub fn algo_config(&self, budget: u64, states: usize, seed: u64) -> Option<AlgoConfig> {
        let per_state = budget / states as u64;
        let variant = match self.name {
            AlgoName::Random => return None,
            AlgoName::Pps => AlgoVariant::Pps { epsilon1: self.epsilon1, n2: budget / (2 * states as u64) },
            AlgoName::PepsTarget => AlgoVariant::PepsTarget { epsilon: self.epsilon, c0: self.c0, n0: per_state },
            AlgoName::PepsBudget => AlgoVariant::PepsBudget { n0: per_state },
            AlgoName::Peps2 => AlgoVariant::Peps2 {
                epsilon: self.epsilon,
                alpha: self.alpha,
                n0: self.n0.unwrap_or(per_state),
                n1: self.n1.unwrap_or(per_state).max(1),
                n2: per_state,
            },
            AlgoName::PepsFixed => AlgoVariant::PepsFixed { n: budget },
        };
        Some(AlgoConfig {
            variant,
            delta: self.delta,
            engine: self.engine,
            btm_gamma: self.btm_gamma,
            navigator: self.navigator,
            seed,
        })
    }
}

/// Budgets either as absolute episode counts or as multiples of the state count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budgets {
    Absolute(Vec<u64>),
    StateMultiples(Vec<u64>),
}

impl Budgets {
    pub fn resolve(&self, states: usize) -> Vec<u64> {
        match self {
            Self::Absolute(b) => b.clone(),
            Self::StateMultiples(m) => m.iter().map(|k| k * states as u64).collect(),
        }
    }

    fn raw(&self) -> &[u64] {
        match self {
            Self::Absolute(b) | Self::StateMultiples(b) => b,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plot: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub env: EnvSpec,
    /// Pins one environment for every repetition; by default each seed draws
    /// its own environment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_seed: Option<u64>,
    pub model: PreferenceSpec,
    pub algorithms: Vec<AlgoSpec>,
    pub budgets: Budgets,
    #[serde(default = "default_repetitions")]
    pub repetitions: u64,
    #[serde(default)]
    pub base_seed: u64,
    /// When false, `wall_ms` is written as 0 so outputs are reproducible byte for byte.
    #[serde(default = "default_true")]
    pub record_wall_time: bool,
    #[serde(default)]
    pub output: OutputPaths,
}

fn default_name() -> String {
    "experiment".into()
}
fn default_repetitions() -> u64 {
    32
}
fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    pub fn new(env: EnvSpec, model: PreferenceSpec, algorithms: Vec<AlgoSpec>, budgets: Budgets) -> Self {
        Self {
            name: default_name(),
            env,
            env_seed: None,
            model,
            algorithms,
            budgets,
            repetitions: default_repetitions(),
            base_seed: 0,
            record_wall_time: true,
            output: OutputPaths::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let config: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.into()));
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        let raw = self.budgets.raw();
        if raw.is_empty() {
            return bad("budget list is empty");
        }
        if raw.windows(2).any(|w| w[0] >= w[1]) {
            return bad("budget list must be strictly increasing");
        }
        if self.algorithms.is_empty() {
            return bad("no algorithms configured");
        }
        if self.model == PreferenceSpec::Human {
            return bad("the human model needs the preference service");
        }
        Ok(())
    }

    /// Seed of repetition `rep`.
    pub fn seed(&self, rep: u64) -> u64 {
        self.base_seed.wrapping_add(rep)
    }

    pub fn env_seed_for(&self, seed: u64) -> u64 {
        self.env_seed.unwrap_or(seed)
    }
}
