//! Sample-based training of the budgeted Q table and its softmax policy
//! from a fixed offline dataset.
//!
//! The loop alternates a TD step on the Q parameters (squared error
//! against targets from a delayed table, summed over all budget levels per
//! sample, optionally plus a monotonicity penalty), an exact softmax
//! policy-gradient step, and a polyak update of the delayed table. All
//! gradients are closed-form; the only sampling is the `m`-action
//! approximation of the greedy branch inside the TD target, exactly as the
//! backup is estimated from one-sample transitions.
//!
//! Training reads the dataset and nothing else: the environment is never
//! consulted, and the reward scale used by the divergence guard comes from
//! the data.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{OfflineDataset, Transition};
use crate::dp::{argmax, BudgetedQ, QTable};
use crate::mdp::{sample_index, BudgetedPolicy, FiniteMdp};

/// The only facts about the task a trainer is allowed to know: table
/// shapes and the discount.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MdpDims {
    pub num_states: usize,
    pub num_actions: usize,
    pub discount: f64,
}

impl MdpDims {
    pub fn from_mdp(mdp: &FiniteMdp) -> Self {
        MdpDims {
            num_states: mdp.num_states(),
            num_actions: mdp.num_actions(),
            discount: mdp.discount(),
        }
    }
}

/// Trainable Q table plus its delayed target, always shape-identical. The
/// target moves only through [`polyak_update`].
#[derive(Debug, Clone, PartialEq)]
pub struct QParams {
    pub theta: BudgetedQ,
    pub target: BudgetedQ,
}

impl QParams {
    pub fn zeros(dims: MdpDims, max_budget: usize) -> Self {
        let theta = BudgetedQ::zeros(dims.num_states, dims.num_actions, max_budget);
        QParams {
            target: theta.clone(),
            theta,
        }
    }
}

/// `θ̄ ← (1−τ)·θ̄ + τ·θ`, elementwise.
pub fn polyak_update(params: &mut QParams, tau: f64) {
    assert!(tau > 0.0 && tau <= 1.0, "tau must be in (0, 1]");
    let theta = params.theta.values();
    for (t, &x) in params.target.values_mut().iter_mut().zip(theta) {
        *t = (1.0 - tau) * *t + tau * x;
    }
}

/// Softmax policy parameters: one logit per `(state, budget, action)` cell
/// at unit temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPolicyParams {
    num_states: usize,
    num_actions: usize,
    max_budget: usize,
    logits: Vec<f64>,
}

impl SoftPolicyParams {
    pub fn zeros(dims: MdpDims, max_budget: usize) -> Self {
        SoftPolicyParams {
            num_states: dims.num_states,
            num_actions: dims.num_actions,
            max_budget,
            logits: vec![0.0; dims.num_states * (max_budget + 1) * dims.num_actions],
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn max_budget(&self) -> usize {
        self.max_budget
    }

    #[inline]
    pub fn index(&self, state: usize, budget: usize, action: usize) -> usize {
        (state * (self.max_budget + 1) + budget) * self.num_actions + action
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn from_logits(
        num_states: usize,
        num_actions: usize,
        max_budget: usize,
        logits: Vec<f64>,
    ) -> Self {
        assert_eq!(logits.len(), num_states * (max_budget + 1) * num_actions);
        SoftPolicyParams {
            num_states,
            num_actions,
            max_budget,
            logits,
        }
    }

    /// Softmax probabilities at `(state, budget)`, numerically stabilized.
    pub fn probs(&self, state: usize, budget: usize) -> Vec<f64> {
        let base = self.index(state, budget, 0);
        let row = &self.logits[base..base + self.num_actions];
        let peak = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut out: Vec<f64> = row.iter().map(|z| (z - peak).exp()).collect();
        let total: f64 = out.iter().sum();
        for p in &mut out {
            *p /= total;
        }
        out
    }

    pub fn sample_action<R: Rng>(&self, state: usize, budget: usize, rng: &mut R) -> usize {
        sample_index(&self.probs(state, budget), rng)
    }

    /// The induced budget-conditioned policy table.
    pub fn to_budgeted_policy(&self) -> BudgetedPolicy {
        let levels = self.max_budget + 1;
        let mut probs = vec![0.0; self.num_states * levels * self.num_actions];
        for s in 0..self.num_states {
            for b in 0..levels {
                let row = self.probs(s, b);
                let base = (s * levels + b) * self.num_actions;
                probs[base..base + self.num_actions].copy_from_slice(&row);
            }
        }
        BudgetedPolicy::new(self.num_states, self.num_actions, self.max_budget, probs)
    }
}

/// Training hyperparameters. The target update rate follows the published
/// value for actor-critic target networks; step sizes are tabular-scale
/// constants and the budget/penalty grids used by the sweep commands are
/// `{1, 10, 50}` and `{0, 1, 10, 100}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub max_budget: usize,
    /// Monotonicity penalty weight ω ≥ 0.
    pub omega: f64,
    /// Number of policy samples approximating the greedy branch (m).
    pub action_samples: usize,
    pub alpha_q: f64,
    pub alpha_p: f64,
    /// Polyak rate for the delayed target.
    pub tau: f64,
    /// Number of alternating gradient steps (T).
    pub steps: usize,
    /// `None` trains on the full dataset every step; `Some(k)` draws `k`
    /// transitions with replacement per step.
    pub batch_size: Option<usize>,
    pub seed: u64,
    /// Record report metrics every this many steps (0 records only the
    /// final state).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_budget: 1,
            omega: 1.0,
            action_samples: 5,
            alpha_q: 0.1,
            alpha_p: 0.1,
            tau: 0.005,
            steps: 5_000,
            batch_size: None,
            seed: 0,
            checkpoint_every: 500,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    BadConfig(String),
    #[error(
        "training diverged at step {step}: |Q| reached {magnitude:.6e}, guard bound {bound:.6e}"
    )]
    Diverged {
        step: usize,
        magnitude: f64,
        bound: f64,
    },
    #[error("dataset is empty")]
    EmptyDataset,
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if self.action_samples == 0 {
            return Err(TrainError::BadConfig("action_samples must be ≥ 1".into()));
        }
        if self.alpha_q <= 0.0 || self.alpha_p <= 0.0 {
            return Err(TrainError::BadConfig("step sizes must be positive".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(TrainError::BadConfig("tau must be in (0, 1]".into()));
        }
        if self.omega < 0.0 {
            return Err(TrainError::BadConfig("omega must be nonnegative".into()));
        }
        if self.batch_size == Some(0) {
            return Err(TrainError::BadConfig("batch_size must be ≥ 1".into()));
        }
        Ok(())
    }
}

fn sampled_backup<R: Rng>(
    q_target: &BudgetedQ,
    spend_probs: &[f64],
    transition: &Transition,
    budget: usize,
    action_samples: usize,
    discount: f64,
    rng: &mut R,
) -> f64 {
    let follow = q_target.get(transition.next_state, budget, transition.next_action);
    let continuation = if budget == 0 {
        follow
    } else {
        let mut spend = f64::NEG_INFINITY;
        for _ in 0..action_samples {
            let a = sample_index(spend_probs, rng);
            spend = spend.max(q_target.get(transition.next_state, budget - 1, a));
        }
        spend.max(follow)
    };
    transition.reward + discount * continuation
}

/// One-sample TD target: `r + γ·max( max over m policy samples ā of
/// θ̄(s', b−1, ā), θ̄(s', b, a') )` for `b > 0`, and the logged-action
/// continuation `r + γ·θ̄(s', b, a')` at `b = 0`. The policy samples come
/// from the head matching the slice they score, `π(·|s', b−1)`.
pub fn approx_backup_target<R: Rng>(
    q_target: &BudgetedQ,
    policy: &SoftPolicyParams,
    transition: &Transition,
    budget: usize,
    action_samples: usize,
    discount: f64,
    rng: &mut R,
) -> f64 {
    debug_assert!(budget <= q_target.max_budget());
    let spend_probs = if budget > 0 {
        policy.probs(transition.next_state, budget - 1)
    } else {
        Vec::new()
    };
    sampled_backup(
        q_target,
        &spend_probs,
        transition,
        budget,
        action_samples,
        discount,
        rng,
    )
}

/// Squared TD error of the trainable table against delayed-table targets,
/// averaged over the batch and summed over budget levels; returns the loss
/// and its exact gradient table (targets are constants, so the gradient of
/// each term is `2·(θ − y)` at the one touched cell). The softmax rows are
/// computed once per call, not per sample.
pub fn q_loss<R: Rng>(
    params: &QParams,
    policy: &SoftPolicyParams,
    batch: &[Transition],
    action_samples: usize,
    discount: f64,
    rng: &mut R,
) -> (f64, BudgetedQ) {
    assert!(!batch.is_empty(), "batch must be nonempty");
    let max_budget = params.theta.max_budget();
    let n = batch.len() as f64;
    let mut grad = BudgetedQ::zeros(
        params.theta.num_states(),
        params.theta.num_actions(),
        max_budget,
    );
    let probs = policy.to_budgeted_policy();
    let empty: [f64; 0] = [];
    let mut loss = 0.0;
    for t in batch {
        for b in 0..=max_budget {
            let spend_probs: &[f64] = if b > 0 {
                probs.row(t.next_state, b - 1)
            } else {
                &empty
            };
            let y = sampled_backup(
                &params.target,
                spend_probs,
                t,
                b,
                action_samples,
                discount,
                rng,
            );
            let e = params.theta.get(t.state, b, t.action) - y;
            loss += e * e / n;
            let i = grad.index(t.state, b, t.action);
            grad.values_mut()[i] += 2.0 * e / n;
        }
    }
    (loss, grad)
}

/// Policy objective `−Σ_b E_{s∼batch} E_{a∼π(s,b)} Q(s,b,a)` with the
/// action expectation computed exactly over the discrete actions, and its
/// exact softmax gradient with respect to the logits.
pub fn policy_loss(
    policy: &SoftPolicyParams,
    q: &BudgetedQ,
    states: &[usize],
    max_budget: usize,
) -> (f64, Vec<f64>) {
    assert!(!states.is_empty(), "batch must be nonempty");
    let n = states.len() as f64;
    let mut grad = vec![0.0; policy.logits().len()];
    let mut loss = 0.0;
    for &s in states {
        for b in 0..=max_budget {
            let p = policy.probs(s, b);
            let row = q.slice(s, b);
            let mean: f64 = p.iter().zip(row).map(|(pi, qi)| pi * qi).sum();
            loss -= mean / n;
            for a in 0..policy.num_actions() {
                grad[policy.index(s, b, a)] -= p[a] * (row[a] - mean) / n;
            }
        }
    }
    (loss, grad)
}

/// Squared hinge on adjacent budget slices, `max(Q(s,b,a) − Q(s,b+1,a), 0)²`,
/// at one policy-sampled action per `(state, budget)` pair, averaged over
/// the batch and the `B` adjacent pairs. Returns the raw (unweighted)
/// penalty and its gradient; the caller applies ω. Zero whenever the table
/// is monotone in the budget, which the fixed point is.
pub fn monotonicity_penalty<R: Rng>(
    theta: &BudgetedQ,
    policy: &SoftPolicyParams,
    states: &[usize],
    rng: &mut R,
) -> (f64, BudgetedQ) {
    assert!(!states.is_empty(), "batch must be nonempty");
    let max_budget = theta.max_budget();
    assert!(max_budget >= 1, "penalty needs at least two budget levels");
    let n = (states.len() * max_budget) as f64;
    let mut grad = BudgetedQ::zeros(theta.num_states(), theta.num_actions(), max_budget);
    let probs = policy.to_budgeted_policy();
    let mut value = 0.0;
    for &s in states {
        for b in 0..max_budget {
            let a = sample_index(probs.row(s, b), rng);
            let gap = theta.get(s, b, a) - theta.get(s, b + 1, a);
            if gap > 0.0 {
                value += gap * gap / n;
                let lo = grad.index(s, b, a);
                grad.values_mut()[lo] += 2.0 * gap / n;
                let hi = grad.index(s, b + 1, a);
                grad.values_mut()[hi] -= 2.0 * gap / n;
            }
        }
    }
    (value, grad)
}

/// Metrics recorded along a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub step: usize,
    pub loss_q: f64,
    pub loss_pi: f64,
    pub penalty: f64,
    /// Sup-norm distance of θ to a supplied exact fixed point.
    pub sup_dist_to_reference: Option<f64>,
    /// Fraction of `(s, b ≥ 1)` pairs whose greedy action differs from the
    /// head one budget level down.
    pub head_disagreement: f64,
    /// Fraction of `(s, b < B, a)` cells with `θ(s,b,a) > θ(s,b+1,a)`
    /// beyond numerical dust.
    pub monotonicity_violation_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub checkpoints: Vec<CheckpointRecord>,
}

impl TrainReport {
    pub fn last(&self) -> Option<&CheckpointRecord> {
        self.checkpoints.last()
    }
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: QParams,
    pub policy: SoftPolicyParams,
    pub report: TrainReport,
}

fn head_disagreement(theta: &BudgetedQ) -> f64 {
    let b_max = theta.max_budget();
    if b_max == 0 {
        return 0.0;
    }
    let mut count = 0;
    let mut total = 0;
    for s in 0..theta.num_states() {
        for b in 1..=b_max {
            total += 1;
            if argmax(theta.slice(s, b)) != argmax(theta.slice(s, b - 1)) {
                count += 1;
            }
        }
    }
    count as f64 / total as f64
}

fn monotonicity_violations(theta: &BudgetedQ) -> f64 {
    let b_max = theta.max_budget();
    if b_max == 0 {
        return 0.0;
    }
    let mut count = 0;
    let mut total = 0;
    for s in 0..theta.num_states() {
        for b in 0..b_max {
            for a in 0..theta.num_actions() {
                total += 1;
                if theta.get(s, b, a) - theta.get(s, b + 1, a) > 1e-9 {
                    count += 1;
                }
            }
        }
    }
    count as f64 / total as f64
}

/// Runs the alternating training loop for `cfg.steps` steps. Both
/// gradients of a step are taken at the current iterate, then the θ and φ
/// updates are applied and the delayed target is polyak-moved. Purely a
/// function of `(dims, dataset, cfg, reference)`: same inputs, bit-equal
/// outputs.
///
/// `reference`, when given, is an exact fixed point used only for report
/// metrics; it never influences the trajectory of training.
pub fn train_with_reference(
    dims: MdpDims,
    dataset: &OfflineDataset,
    cfg: &TrainConfig,
    reference: Option<&BudgetedQ>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let bound = 10.0 * dataset.reward_bound() / (1.0 - dims.discount);
    let mut params = QParams::zeros(dims, cfg.max_budget);
    let mut policy = SoftPolicyParams::zeros(dims, cfg.max_budget);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = TrainReport::default();
    let mut minibatch: Vec<Transition> = Vec::new();

    let record = |step: usize,
                  loss_q: f64,
                  loss_pi: f64,
                  penalty: f64,
                  params: &QParams,
                  report: &mut TrainReport| {
        report.checkpoints.push(CheckpointRecord {
            step,
            loss_q,
            loss_pi,
            penalty,
            sup_dist_to_reference: reference.map(|r| params.theta.sup_distance(r)),
            head_disagreement: head_disagreement(&params.theta),
            monotonicity_violation_fraction: monotonicity_violations(&params.theta),
        });
    };

    let mut last_losses = (0.0, 0.0, 0.0);
    for step in 0..cfg.steps {
        let batch: &[Transition] = match cfg.batch_size {
            None => &dataset.transitions,
            Some(k) => {
                minibatch.clear();
                for _ in 0..k {
                    let i = rng.gen_range(0..dataset.transitions.len());
                    minibatch.push(dataset.transitions[i]);
                }
                &minibatch
            }
        };
        let states: Vec<usize> = batch.iter().map(|t| t.state).collect();

        // Both gradients at the current iterate.
        let (lq, grad_q) = q_loss(
            &params,
            &policy,
            batch,
            cfg.action_samples,
            dims.discount,
            &mut rng,
        );
        let (pen, grad_pen) = if cfg.max_budget >= 1 && cfg.omega > 0.0 {
            monotonicity_penalty(&params.theta, &policy, &states, &mut rng)
        } else {
            (
                0.0,
                BudgetedQ::zeros(dims.num_states, dims.num_actions, cfg.max_budget),
            )
        };
        let (lp, grad_p) = policy_loss(&policy, &params.theta, &states, cfg.max_budget);

        for ((t, gq), gp) in params
            .theta
            .values_mut()
            .iter_mut()
            .zip(grad_q.values())
            .zip(grad_pen.values())
        {
            *t -= cfg.alpha_q * (gq + cfg.omega * gp);
        }
        for (z, g) in policy.logits_mut().iter_mut().zip(&grad_p) {
            *z -= cfg.alpha_p * g;
        }
        polyak_update(&mut params, cfg.tau);

        let magnitude = params.theta.max_abs();
        if magnitude > bound {
            return Err(TrainError::Diverged {
                step,
                magnitude,
                bound,
            });
        }
        last_losses = (lq, lp, pen);
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            record(step + 1, lq, lp, pen, &params, &mut report);
        }
    }
    let already_recorded = report
        .checkpoints
        .last()
        .map(|c| c.step == cfg.steps)
        .unwrap_or(false);
    if !already_recorded {
        let (lq, lp, pen) = last_losses;
        record(cfg.steps, lq, lp, pen, &params, &mut report);
    }
    Ok(TrainOutcome {
        params,
        policy,
        report,
    })
}

/// [`train_with_reference`] without a reference table.
pub fn train(
    dims: MdpDims,
    dataset: &OfflineDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    train_with_reference(dims, dataset, cfg, None)
}

/// Budget-free fitted Q-learning on the same dataset: squared error against
/// `r + γ max_a' θ̄(s', a')` with a polyak target. This is the desk-scale
/// stand-in for an offline actor-critic trained without any budget
/// constraint, used by the no-budgeting ablation.
pub fn fitted_q_learning(
    dims: MdpDims,
    dataset: &OfflineDataset,
    alpha: f64,
    tau: f64,
    steps: usize,
) -> Result<QTable, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    assert!(alpha > 0.0 && tau > 0.0 && tau <= 1.0);
    let bound = 10.0 * dataset.reward_bound() / (1.0 - dims.discount);
    let n = dataset.transitions.len() as f64;
    let mut theta = QTable::zeros(dims.num_states, dims.num_actions);
    let mut target = theta.clone();
    for step in 0..steps {
        let mut grad = vec![0.0; dims.num_states * dims.num_actions];
        for t in &dataset.transitions {
            let best_next = target
                .row(t.next_state)
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            let y = t.reward + dims.discount * best_next;
            let e = theta.get(t.state, t.action) - y;
            grad[t.state * dims.num_actions + t.action] += 2.0 * e / n;
        }
        for (s, g) in grad.iter().enumerate() {
            let (st, a) = (s / dims.num_actions, s % dims.num_actions);
            theta.set(st, a, theta.get(st, a) - alpha * g);
        }
        for s in 0..dims.num_states {
            for a in 0..dims.num_actions {
                let v = (1.0 - tau) * target.get(s, a) + tau * theta.get(s, a);
                target.set(s, a, v);
            }
        }
        let magnitude = theta.values().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if magnitude > bound {
            return Err(TrainError::Diverged {
                step,
                magnitude,
                bound,
            });
        }
    }
    Ok(theta)
}
