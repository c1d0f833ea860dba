//! Budget-aware action selection and evaluation.
//!
//! At test time the policy cannot simply act greedily: it must decide,
//! per step, whether the expected value of spending one budget unit on its
//! own action beats following the (estimated) behavior policy with the
//! budget intact. [`select`] is that comparison; [`rollout_budgeted`]
//! applies it step by step, which makes the budget bound a hard guarantee
//! rather than a training-time preference. The ablation producers
//! reproduce the reference points used by the benchmark commands: no
//! budgeting at all, and budget spent at uniformly random steps with and
//! without budget-aware training.

use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dp::{argmax, BudgetedQ, QTable};
use crate::mdp::{
    derive_seed, rollout, BudgetedPolicy, FiniteMdp, PolicyTable, RolloutError, StepChoice,
    Trajectory,
};

/// Outcome of one budget-aware selection.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectDecision {
    /// Distribution the action is to be drawn from.
    pub action_dist: Vec<f64>,
    pub new_budget: usize,
    pub counterfactual: bool,
    /// `E_{ā∼π(s,b)} Q(s, b−1, ā)`; `None` at `b = 0` where no spend
    /// branch exists.
    pub counterfactual_value: Option<f64>,
    /// `E_{ā∼μ̂(s)} Q(s, b, ā)`.
    pub behavior_value: f64,
}

/// The inference-time comparison: follow `μ̂` (budget intact) if `b = 0`
/// or if the spend-branch expectation does not strictly beat the behavior
/// expectation; otherwise play `π(·|s,b)` and pay one budget unit. Both
/// expectations are exact sums over the discrete actions, and ties prefer
/// the behavior branch, mirroring the `≤` in the training backup.
pub fn select(
    policy: &BudgetedPolicy,
    mu_hat: &PolicyTable,
    state: usize,
    budget: usize,
    q: &BudgetedQ,
) -> SelectDecision {
    assert!(budget <= q.max_budget(), "budget out of range");
    let behavior_value: f64 = mu_hat
        .row(state)
        .iter()
        .zip(q.slice(state, budget))
        .map(|(p, v)| p * v)
        .sum();
    if budget == 0 {
        return SelectDecision {
            action_dist: mu_hat.row(state).to_vec(),
            new_budget: 0,
            counterfactual: false,
            counterfactual_value: None,
            behavior_value,
        };
    }
    let counterfactual_value: f64 = policy
        .row(state, budget)
        .iter()
        .zip(q.slice(state, budget - 1))
        .map(|(p, v)| p * v)
        .sum();
    if counterfactual_value > behavior_value {
        SelectDecision {
            action_dist: policy.row(state, budget).to_vec(),
            new_budget: budget - 1,
            counterfactual: true,
            counterfactual_value: Some(counterfactual_value),
            behavior_value,
        }
    } else {
        SelectDecision {
            action_dist: mu_hat.row(state).to_vec(),
            new_budget: budget,
            counterfactual: false,
            counterfactual_value: Some(counterfactual_value),
            behavior_value,
        }
    }
}

/// Full budget-aware inference: start with `initial_budget`, run [`select`]
/// every step, sample from whichever distribution it returns, and let the
/// rollout machinery account for the budget. The counterfactual count of
/// the resulting trajectory can never exceed the initial budget. With
/// `greedy`, the chosen distribution is collapsed to its argmax before
/// sampling (off by default; sampling is the faithful behavior).
#[allow(clippy::too_many_arguments)]
pub fn rollout_budgeted_with(
    mdp: &FiniteMdp,
    policy: &BudgetedPolicy,
    mu_hat: &PolicyTable,
    q: &BudgetedQ,
    initial_budget: usize,
    horizon: usize,
    seed: u64,
    greedy: bool,
) -> Result<Trajectory, RolloutError> {
    rollout(
        mdp,
        |s, b, _t| {
            let decision = select(policy, mu_hat, s, b, q);
            let dist = if greedy {
                let mut one_hot = vec![0.0; decision.action_dist.len()];
                one_hot[argmax(&decision.action_dist)] = 1.0;
                one_hot
            } else {
                decision.action_dist
            };
            StepChoice {
                action_dist: dist,
                counterfactual: decision.counterfactual,
            }
        },
        initial_budget,
        horizon,
        seed,
    )
}

/// [`rollout_budgeted_with`] in its default sampling mode.
pub fn rollout_budgeted(
    mdp: &FiniteMdp,
    policy: &BudgetedPolicy,
    mu_hat: &PolicyTable,
    q: &BudgetedQ,
    initial_budget: usize,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory, RolloutError> {
    rollout_budgeted_with(mdp, policy, mu_hat, q, initial_budget, horizon, seed, false)
}

/// Per-episode evaluation record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub seed: u64,
    pub return_discounted: f64,
    pub return_undiscounted: f64,
    pub counterfactual_count: usize,
    /// Step at which the budget ran out, if it did.
    pub exhaustion_step: Option<usize>,
}

/// Summary statistics over independently seeded episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub episodes: Vec<EpisodeRecord>,
    pub mean_discounted: f64,
    pub std_discounted: f64,
    pub mean_undiscounted: f64,
    pub std_undiscounted: f64,
    pub mean_counterfactual: f64,
    /// Histogram of budget-exhaustion steps as `(step, episode count)`,
    /// sorted by step; episodes that never exhaust are counted separately.
    pub exhaustion_histogram: Vec<(usize, usize)>,
    pub never_exhausted: usize,
    /// `γ^H · R_max / (1−γ)`: the value mass an H-step truncation can hide.
    pub truncation_bias: f64,
    /// Largest per-state L1 gap between the estimated and true behavior
    /// policies, when the caller knows the truth.
    pub behavior_gap: Option<f64>,
}

impl EvalReport {
    /// Standard error of the discounted-return mean.
    pub fn standard_error(&self) -> f64 {
        self.std_discounted / (self.episodes.len() as f64).sqrt()
    }

    pub fn with_behavior_gap(mut self, gap: f64) -> Self {
        self.behavior_gap = Some(gap);
        self
    }
}

/// Produces one trajectory per `(episode seed, horizon)` request.
pub type RolloutProducer<'a> = dyn FnMut(u64, usize) -> Result<Trajectory, RolloutError> + 'a;

fn sample_std(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let var =
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

/// Runs `episodes` independent rollouts with derived seeds and summarizes
/// them. Episodes are ordered and the reduction is sequential, so the
/// report is deterministic.
pub fn evaluate(
    mdp: &FiniteMdp,
    producer: &mut RolloutProducer<'_>,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<EvalReport, RolloutError> {
    assert!(episodes >= 1, "need at least one episode");
    let mut records = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let ep_seed = derive_seed(seed, ep as u64);
        let tr = producer(ep_seed, horizon)?;
        records.push(EpisodeRecord {
            episode: ep,
            seed: ep_seed,
            return_discounted: tr.return_discounted,
            return_undiscounted: tr.return_undiscounted(),
            counterfactual_count: tr.counterfactual_count(),
            exhaustion_step: tr.exhaustion_step(),
        });
    }
    let disc: Vec<f64> = records.iter().map(|r| r.return_discounted).collect();
    let undisc: Vec<f64> = records.iter().map(|r| r.return_undiscounted).collect();
    let mean_discounted = disc.iter().sum::<f64>() / episodes as f64;
    let mean_undiscounted = undisc.iter().sum::<f64>() / episodes as f64;
    let mean_counterfactual = records
        .iter()
        .map(|r| r.counterfactual_count as f64)
        .sum::<f64>()
        / episodes as f64;
    let mut hist = std::collections::BTreeMap::new();
    let mut never = 0;
    for r in &records {
        match r.exhaustion_step {
            Some(step) => *hist.entry(step).or_insert(0usize) += 1,
            None => never += 1,
        }
    }
    Ok(EvalReport {
        std_discounted: sample_std(&disc, mean_discounted),
        std_undiscounted: sample_std(&undisc, mean_undiscounted),
        mean_discounted,
        mean_undiscounted,
        mean_counterfactual,
        exhaustion_histogram: hist.into_iter().collect(),
        never_exhausted: never,
        truncation_bias: mdp.discount().powi(horizon as i32) * mdp.value_bound(),
        behavior_gap: None,
        episodes: records,
    })
}

/// The three reference behaviors the benchmark compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationMode {
    /// Greedy on the unbudgeted table at every step.
    NoBudgeting,
    /// Budget spent at uniformly random steps on unbudgeted-greedy actions,
    /// behavior estimate everywhere else.
    RandomBudgetUnplanned,
    /// Budget spent at uniformly random steps on actions from the
    /// budget-trained policy (tracking actual spend), behavior estimate
    /// everywhere else.
    RandomBudgetTrained,
}

impl AblationMode {
    pub const ALL: [AblationMode; 3] = [
        AblationMode::NoBudgeting,
        AblationMode::RandomBudgetUnplanned,
        AblationMode::RandomBudgetTrained,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::NoBudgeting => "no_budgeting",
            AblationMode::RandomBudgetUnplanned => "random_budget_unplanned",
            AblationMode::RandomBudgetTrained => "random_budget_trained",
        }
    }
}

#[derive(Debug, Error)]
pub enum AblationError {
    #[error("unknown ablation mode '{0}'; available: no_budgeting, random_budget_unplanned, random_budget_trained")]
    UnknownMode(String),
    #[error("mode {0} needs a budget-trained policy")]
    MissingTrainedPolicy(&'static str),
}

impl FromStr for AblationMode {
    type Err = AblationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "no_budgeting" => Ok(AblationMode::NoBudgeting),
            "random_budget_unplanned" => Ok(AblationMode::RandomBudgetUnplanned),
            "random_budget_trained" => Ok(AblationMode::RandomBudgetTrained),
            other => Err(AblationError::UnknownMode(other.to_string())),
        }
    }
}

/// Everything the ablation producers can draw on.
#[derive(Clone, Copy)]
pub struct AblationInputs<'a> {
    pub mdp: &'a FiniteMdp,
    /// Unbudgeted value table (trained or exact, the caller decides).
    pub unbudgeted_q: &'a QTable,
    pub mu_hat: &'a PolicyTable,
    /// Budget-trained policy; required by `random_budget_trained`.
    pub budgeted_policy: Option<&'a BudgetedPolicy>,
    pub budget: usize,
}

/// Chooses `count` distinct steps uniformly from `0..horizon` by partial
/// Fisher-Yates; with `count ≥ horizon` every step is chosen.
fn choose_steps<R: Rng>(horizon: usize, count: usize, rng: &mut R) -> Vec<bool> {
    let mut selected = vec![false; horizon];
    if count >= horizon {
        selected.iter_mut().for_each(|s| *s = true);
        return selected;
    }
    let mut pool: Vec<usize> = (0..horizon).collect();
    for i in 0..count {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
        selected[pool[i]] = true;
    }
    selected
}

/// Builds the rollout producer for one ablation mode. Each episode derives
/// its own RNG from the episode seed: random modes first draw their step
/// selection, then hand a sub-seed to the simulator.
pub fn ablation_producer<'a>(
    mode: AblationMode,
    inputs: AblationInputs<'a>,
) -> Result<Box<RolloutProducer<'a>>, AblationError> {
    match mode {
        AblationMode::NoBudgeting => {
            let greedy: Vec<usize> = (0..inputs.unbudgeted_q.num_states())
                .map(|s| inputs.unbudgeted_q.greedy_action(s))
                .collect();
            let na = inputs.unbudgeted_q.num_actions();
            let mdp = inputs.mdp;
            Ok(Box::new(move |seed, horizon| {
                // Every step deviates; seeding the budget with the horizon
                // keeps the bookkeeping exact without ever binding.
                rollout(
                    mdp,
                    |s, _b, _t| {
                        let mut dist = vec![0.0; na];
                        dist[greedy[s]] = 1.0;
                        StepChoice {
                            action_dist: dist,
                            counterfactual: true,
                        }
                    },
                    horizon,
                    horizon,
                    seed,
                )
            }))
        }
        AblationMode::RandomBudgetUnplanned => {
            let greedy: Vec<usize> = (0..inputs.unbudgeted_q.num_states())
                .map(|s| inputs.unbudgeted_q.greedy_action(s))
                .collect();
            let na = inputs.unbudgeted_q.num_actions();
            let mdp = inputs.mdp;
            let mu_hat = inputs.mu_hat;
            let budget = inputs.budget;
            Ok(Box::new(move |seed, horizon| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let selected = choose_steps(horizon, budget, &mut rng);
                let sim_seed = rng.gen();
                rollout(
                    mdp,
                    |s, _b, t| {
                        if selected[t] {
                            let mut dist = vec![0.0; na];
                            dist[greedy[s]] = 1.0;
                            StepChoice {
                                action_dist: dist,
                                counterfactual: true,
                            }
                        } else {
                            StepChoice::follow(mu_hat.row(s))
                        }
                    },
                    budget,
                    horizon,
                    sim_seed,
                )
            }))
        }
        AblationMode::RandomBudgetTrained => {
            let policy = inputs
                .budgeted_policy
                .ok_or(AblationError::MissingTrainedPolicy("random_budget_trained"))?;
            let mdp = inputs.mdp;
            let mu_hat = inputs.mu_hat;
            let budget = inputs.budget;
            Ok(Box::new(move |seed, horizon| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let selected = choose_steps(horizon, budget, &mut rng);
                let sim_seed = rng.gen();
                rollout(
                    mdp,
                    |s, b, t| {
                        if selected[t] && b > 0 {
                            // Budget-trained head for the *remaining* budget.
                            StepChoice::deviate(policy.row(s, b.min(policy.max_budget())))
                        } else {
                            StepChoice::follow(mu_hat.row(s))
                        }
                    },
                    budget,
                    horizon,
                    sim_seed,
                )
            }))
        }
    }
}

/// Producer for the full budget-aware method.
pub fn budgeted_producer<'a>(
    mdp: &'a FiniteMdp,
    policy: &'a BudgetedPolicy,
    mu_hat: &'a PolicyTable,
    q: &'a BudgetedQ,
    budget: usize,
) -> Box<RolloutProducer<'a>> {
    Box::new(move |seed, horizon| rollout_budgeted(mdp, policy, mu_hat, q, budget, horizon, seed))
}

/// Producer that follows a fixed budget-free policy.
pub fn policy_producer<'a>(
    mdp: &'a FiniteMdp,
    policy: &'a PolicyTable,
) -> Box<RolloutProducer<'a>> {
    Box::new(move |seed, horizon| crate::mdp::rollout_policy(mdp, policy, horizon, seed))
}
