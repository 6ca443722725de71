//! TOML experiment configuration.
//!
//! ```toml
//! algorithm = "fail"          # fail | ifail | fail_star | tree_identify | rl_random_search_baseline
//! n = 2000                    # learner rollouts per step (search budget for the baseline)
//! n_prime = 2000              # expert observations per step
//! iterations = 200            # game iterations per step
//! seeds = [0, 1, 2]
//! out = "runs/tree"
//! # optional: readout = "leader", eta = 0.1, eta0 = 1.0, demos = "runs/demos"
//!
//! [environment]
//! name = "tree"               # tree | random | lipschitz_chain | abstraction
//! horizon = 2
//! leaf_costs = [1.0, 0.0]
//!
//! [classes]
//! policy = "tabular"          # tabular | deterministic
//! discriminator = { type = "sign_patterns" }
//! ```

use anyhow::{bail, Context, Result};
use fail_core::discriminators::{FiniteClass, FunctionClass, Kernel};
use fail_core::environments::{
    make_abstraction_mdp, make_lipschitz_chain, make_tree_mdp, random_mdp, separation_leaf_costs, RandomMdpConfig,
    Smoothness,
};
use fail_core::fail::MODEL_CLASS_CAP;
use fail_core::game::{PolicyClassSpec, Readout};
use fail_core::mdp::{optimal_policy, DistanceMatrix, Mdp, PolicySequence, PolicyTable};
use fail_core::Seed;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Fail,
    Ifail,
    FailStar,
    TreeIdentify,
    RlRandomSearchBaseline,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Fail => "fail",
            Algorithm::Ifail => "ifail",
            Algorithm::FailStar => "fail_star",
            Algorithm::TreeIdentify => "tree_identify",
            Algorithm::RlRandomSearchBaseline => "rl_random_search_baseline",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentSpec {
    /// Binary tree; without `leaf_costs` the leftmost leaf costs 0 and the rest 1.
    Tree { horizon: usize, leaf_costs: Option<Vec<f64>> },
    /// Random MDP with the optimal policy as expert.
    Random {
        horizon: usize,
        min_obs: usize,
        max_obs: usize,
        actions: usize,
        support: usize,
        #[serde(default)]
        seed: u64,
    },
    LipschitzChain {
        states: usize,
        horizon: usize,
        actions: usize,
        transition_smoothness: f64,
        policy_smoothness: f64,
        #[serde(default)]
        seed: u64,
    },
    Abstraction {
        copies: usize,
        blocks: usize,
        horizon: usize,
        actions: usize,
        #[serde(default)]
        seed: u64,
    },
}

impl EnvironmentSpec {
    pub fn name(&self) -> &'static str {
        match self {
            EnvironmentSpec::Tree { .. } => "tree",
            EnvironmentSpec::Random { .. } => "random",
            EnvironmentSpec::LipschitzChain { .. } => "lipschitz_chain",
            EnvironmentSpec::Abstraction { .. } => "abstraction",
        }
    }

    pub fn build(&self) -> Result<(Mdp, PolicySequence)> {
        Ok(match self {
            EnvironmentSpec::Tree { horizon, leaf_costs } => {
                let costs = match leaf_costs {
                    Some(c) => c.clone(),
                    None => separation_leaf_costs(*horizon, 0),
                };
                make_tree_mdp(*horizon, &costs)?
            }
            EnvironmentSpec::Random { horizon, min_obs, max_obs, actions, support, seed } => {
                let config = RandomMdpConfig {
                    horizon: *horizon,
                    min_obs: *min_obs,
                    max_obs: *max_obs,
                    actions: *actions,
                    support: *support,
                };
                let mdp = random_mdp(&config, Seed(*seed))?;
                let expert = optimal_policy(&mdp);
                (mdp, expert)
            }
            EnvironmentSpec::LipschitzChain { states, horizon, actions, transition_smoothness, policy_smoothness, seed } => {
                let sm = Smoothness { transition: *transition_smoothness, policy: *policy_smoothness };
                make_lipschitz_chain(*states, *horizon, *actions, sm, Seed(*seed))?
            }
            EnvironmentSpec::Abstraction { copies, blocks, horizon, actions, seed } => {
                make_abstraction_mdp(*copies, *blocks, *horizon, *actions, Seed(*seed))?
            }
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    #[default]
    Tabular,
    /// Every deterministic table for the step.
    Deterministic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiscriminatorSpec {
    SignPatterns,
    /// Uses the environment metric, or the discrete metric if it has none.
    Lipschitz { lipschitz: f64 },
    Rkhs { bandwidth: f64, norm_bound: f64 },
    /// Needs an environment with an abstraction.
    PiecewiseConstant,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    #[serde(default)]
    pub policy: PolicyKind,
    #[serde(default = "default_discriminator")]
    pub discriminator: DiscriminatorSpec,
}

fn default_discriminator() -> DiscriminatorSpec {
    DiscriminatorSpec::SignPatterns
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        default_discriminator()
    }
}

fn default_eta0() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentSpec,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub classes: ClassSpec,
    pub n: usize,
    pub n_prime: usize,
    pub iterations: usize,
    #[serde(default)]
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    /// Directory holding `demos_seed{s}.jsonl`; demos are generated in memory when absent.
    pub demos: Option<PathBuf>,
    #[serde(default)]
    pub readout: Readout,
    pub eta: Option<f64>,
    #[serde(default = "default_eta0")]
    pub eta0: f64,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let config: ExperimentConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(config)
    }

    /// Applies command-line overrides and checks the result.
    pub fn resolve(mut self, seed_count: Option<u64>, out: Option<PathBuf>) -> Result<Self> {
        if let Some(count) = seed_count {
            self.seeds = (0..count).collect();
        }
        if out.is_some() {
            self.out = out;
        }
        if self.seeds.is_empty() {
            bail!("no seeds: set `seeds` in the config or pass --seed-count");
        }
        if self.n == 0 {
            bail!("n must be at least 1");
        }
        if self.iterations == 0 && matches!(self.algorithm, Algorithm::Fail | Algorithm::Ifail | Algorithm::FailStar) {
            bail!("iterations must be at least 1");
        }
        Ok(self)
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out.as_deref().context("no output directory: set `out` in the config or pass --out")
    }
}

pub fn policy_classes(kind: PolicyKind, mdp: &Mdp) -> Result<Vec<PolicyClassSpec>> {
    let k = mdp.action_count();
    (0..mdp.horizon() - 1)
        .map(|h| {
            let states = mdp.obs_count(h);
            Ok(match kind {
                PolicyKind::Tabular => PolicyClassSpec::tabular(states, k),
                PolicyKind::Deterministic => {
                    let total = (k as f64).powi(states as i32);
                    if total > MODEL_CLASS_CAP as f64 {
                        bail!("step {h} has {total} deterministic policies, above the cap of {MODEL_CLASS_CAP}");
                    }
                    PolicyClassSpec::FiniteList { candidates: deterministic_tables(states, k) }
                }
            })
        })
        .collect()
}

fn deterministic_tables(states: usize, actions: usize) -> Vec<PolicyTable> {
    let total = actions.pow(states as u32);
    (0..total)
        .map(|mut code| {
            let acts: Vec<usize> = (0..states)
                .map(|_| {
                    let a = code % actions;
                    code /= actions;
                    a
                })
                .collect();
            PolicyTable::deterministic(&acts, actions)
        })
        .collect()
}

/// One class per action step; entry `h` lives on the observations of step `h + 1`.
pub fn discriminator_classes(spec: &DiscriminatorSpec, mdp: &Mdp) -> Result<Vec<FunctionClass>> {
    (1..mdp.horizon())
        .map(|h| {
            let n = mdp.obs_count(h);
            let metric = || mdp.metric().map(|m| m[h].clone()).unwrap_or_else(|| DistanceMatrix::discrete(n));
            Ok(match spec {
                DiscriminatorSpec::SignPatterns => FunctionClass::Finite(FiniteClass::sign_patterns(n)?),
                DiscriminatorSpec::Lipschitz { lipschitz } => {
                    FunctionClass::Lipschitz { metric: metric(), lipschitz: *lipschitz }
                }
                DiscriminatorSpec::Rkhs { bandwidth, norm_bound } => FunctionClass::Rkhs {
                    kernel: Kernel::Gaussian { bandwidth: *bandwidth },
                    metric: metric(),
                    norm_bound: *norm_bound,
                },
                DiscriminatorSpec::PiecewiseConstant => {
                    let phi = mdp.abstraction().context("piecewise_constant needs an environment with an abstraction")?;
                    FunctionClass::PiecewiseConstant { abstraction: phi[h].clone() }
                }
            })
        })
        .collect()
}
