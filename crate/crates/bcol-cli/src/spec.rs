//! Experiment spec files: one TOML document describes an end-to-end run
//! (environment, dataset, training, evaluation, sweep grids, ablations,
//! output directory). Command-line flags override individual fields, so a
//! spec file plus the invocation line fully reproduces an experiment.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use bcol::envs::{builtin_env, BuiltinEnv, EnvParams};
use bcol::fitted::TrainConfig;
use bcol::mdp::PolicyTable;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub env: EnvSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub ablate: AblateSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub name: String,
    /// Door count for `key_door_grid`.
    #[serde(default = "default_key_count")]
    pub key_count: usize,
    /// Corridor width for `noisy_cliff`.
    #[serde(default = "default_cliff_width")]
    pub width: usize,
    /// Slip probability for `noisy_cliff`.
    #[serde(default = "default_slip")]
    pub slip: f64,
    /// Discount override (environments with a fixed discount ignore it).
    #[serde(default)]
    pub discount: Option<f64>,
}

fn default_key_count() -> usize {
    2
}
fn default_cliff_width() -> usize {
    6
}
fn default_slip() -> f64 {
    0.1
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            name: "r_chain".to_string(),
            key_count: default_key_count(),
            width: default_cliff_width(),
            slip: default_slip(),
            discount: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default = "default_data_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    /// Logging policy: `designated`, `uniform`, or `mix:<eps>` (the
    /// designated behavior blended with `eps` uniform noise).
    #[serde(default = "default_logging")]
    pub logging: String,
    /// Additive smoothing for behavior cloning.
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
}

fn default_episodes() -> usize {
    500
}
fn default_data_horizon() -> usize {
    10
}
fn default_logging() -> String {
    "designated".to_string()
}
fn default_smoothing() -> f64 {
    1e-3
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            episodes: default_episodes(),
            horizon: default_data_horizon(),
            seed: 0,
            logging: default_logging(),
            smoothing: default_smoothing(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_omega")]
    pub omega: f64,
    #[serde(default = "default_action_samples")]
    pub action_samples: usize,
    #[serde(default = "default_alpha")]
    pub alpha_q: f64,
    #[serde(default = "default_alpha")]
    pub alpha_p: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// 0 trains on the full dataset every step.
    #[serde(default)]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
}

fn default_budget() -> usize {
    1
}
fn default_omega() -> f64 {
    1.0
}
fn default_action_samples() -> usize {
    5
}
fn default_alpha() -> f64 {
    0.1
}
fn default_tau() -> f64 {
    0.005
}
fn default_steps() -> usize {
    5_000
}
fn default_checkpoint_every() -> usize {
    500
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            budget: default_budget(),
            omega: default_omega(),
            action_samples: default_action_samples(),
            alpha_q: default_alpha(),
            alpha_p: default_alpha(),
            tau: default_tau(),
            steps: default_steps(),
            batch_size: 0,
            seed: 0,
            checkpoint_every: default_checkpoint_every(),
        }
    }
}

impl TrainSection {
    pub fn to_config(&self) -> TrainConfig {
        TrainConfig {
            max_budget: self.budget,
            omega: self.omega,
            action_samples: self.action_samples,
            alpha_q: self.alpha_q,
            alpha_p: self.alpha_p,
            tau: self.tau,
            steps: self.steps,
            batch_size: if self.batch_size == 0 {
                None
            } else {
                Some(self.batch_size)
            },
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_eval_episodes")]
    pub episodes: usize,
    #[serde(default = "default_eval_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    /// Collapse sampled distributions to their argmax during inference.
    #[serde(default)]
    pub greedy: bool,
}

fn default_eval_episodes() -> usize {
    300
}
fn default_eval_horizon() -> usize {
    1_000
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            episodes: default_eval_episodes(),
            horizon: default_eval_horizon(),
            seed: 0,
            greedy: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "default_budgets")]
    pub budgets: Vec<usize>,
    #[serde(default = "default_omegas")]
    pub omegas: Vec<f64>,
}

fn default_budgets() -> Vec<usize> {
    vec![1, 10, 50]
}
fn default_omegas() -> Vec<f64> {
    vec![0.0, 1.0, 10.0, 100.0]
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            budgets: default_budgets(),
            omegas: default_omegas(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AblateSection {
    /// Use exact dynamic-programming solutions instead of training
    /// (oracle-sized environments only).
    #[serde(default)]
    pub exact: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_out_dir(),
        }
    }
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read spec file {}", path.display()))?;
        let spec: ExperimentSpec = toml::from_str(&text)
            .with_context(|| format!("cannot parse spec file {}", path.display()))?;
        Ok(spec)
    }

    /// Builds the environment described by the `[env]` section.
    pub fn build_env(&self) -> Result<BuiltinEnv, bcol::envs::EnvError> {
        let params = EnvParams {
            key_count: self.env.key_count,
            cliff_width: self.env.width,
            slip: self.env.slip,
            discount: self.env.discount,
        };
        builtin_env(&self.env.name, &params)
    }

    /// Resolves the `[dataset].logging` policy against the designated
    /// behavior of the environment.
    pub fn logging_policy(&self, env: &BuiltinEnv) -> Result<PolicyTable> {
        logging_policy_from_str(&self.dataset.logging, env)
    }
}

pub fn logging_policy_from_str(kind: &str, env: &BuiltinEnv) -> Result<PolicyTable> {
    if kind == "designated" {
        return Ok(env.behavior.clone());
    }
    if kind == "uniform" {
        return Ok(PolicyTable::uniform(
            env.mdp.num_states(),
            env.mdp.num_actions(),
        ));
    }
    if let Some(eps) = kind.strip_prefix("mix:") {
        let eps: f64 = eps
            .parse()
            .with_context(|| format!("cannot parse mix fraction from '{kind}'"))?;
        if !(0.0..=1.0).contains(&eps) {
            bail!("mix fraction must be in [0, 1], got {eps}");
        }
        return Ok(env.behavior.mix_with_uniform(eps));
    }
    bail!("unknown logging policy '{kind}'; use designated, uniform, or mix:<eps>")
}
