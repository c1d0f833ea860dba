//! Independent certification of the budgeted fixed point.
//!
//! Two routes compute the same `Q(s, b, a)` without touching the solver in
//! [`crate::dp`]:
//!
//! 1. compile the budget constraint into an ordinary MDP over augmented
//!    states `(s, b)` and run a plain, self-contained value iteration on
//!    it;
//! 2. on tiny instances, enumerate every deterministic stationary policy
//!    of that augmented MDP, evaluate each exactly with the linear solver
//!    from [`crate::mdp`], and take the pointwise maximum.
//!
//! Agreement of the solver with both routes is what certifies the
//! fixed-point theorem executable-ly: existence and uniqueness come from
//! the contraction probe, constrained optimality from the equality with
//! the augmented optimum.

use thiserror::Error;

use crate::dp::BudgetedQ;
use crate::mdp::{evaluate_policy_exact, validate_mdp, EvalError, FiniteMdp, PolicyTable};

/// Cap on the augmented state count.
pub const STATE_CAP: usize = 1_000_000;
/// Cap on the number of candidate policies the enumeration oracle accepts,
/// measured as `(|A|+1)^(|S|·(B+1))`.
pub const ENUMERATION_CAP: f64 = 1e7;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("augmented state count {needed} exceeds the cap {cap}")]
    StateCapExceeded { needed: usize, cap: usize },
    #[error(
        "enumeration would visit {candidates:.3e} candidate policies (cap {cap:.0e}); \
         use the augmented value-iteration oracle instead"
    )]
    EnumerationCapExceeded { candidates: f64, cap: f64 },
    #[error(
        "augmented value iteration hit the {max_iters}-iteration cap with residual {residual}"
    )]
    NonConvergence { max_iters: usize, residual: f64 },
    #[error("candidate evaluation failed: {0}")]
    Eval(#[from] EvalError),
}

/// The budget constraint compiled into reachability: states are `(s, b)`
/// pairs, actions are the base actions (each burning one budget unit)
/// plus a final "follow the behavior policy" action that keeps the budget.
/// Base actions at `b = 0` are illegal and self-loop with a sentinel
/// reward of `−2 R_max/(1−γ)`, strictly below every achievable value, so
/// they are never optimal.
#[derive(Debug, Clone)]
pub struct AugmentedMdp {
    pub mdp: FiniteMdp,
    pub base_states: usize,
    pub base_actions: usize,
    pub max_budget: usize,
}

impl AugmentedMdp {
    /// Augmented index of `(state, budget)`.
    pub fn state_index(&self, state: usize, budget: usize) -> usize {
        state * (self.max_budget + 1) + budget
    }

    /// Index of the follow-behavior action.
    pub fn follow_action(&self) -> usize {
        self.base_actions
    }
}

/// Builds the `|S|·(B+1)`-state augmented MDP. The initial distribution
/// places the base initial mass at full budget.
pub fn build_augmented_mdp(
    mdp: &FiniteMdp,
    mu: &PolicyTable,
    max_budget: usize,
) -> Result<AugmentedMdp, OracleError> {
    let levels = max_budget + 1;
    let n_aug = mdp
        .num_states()
        .checked_mul(levels)
        .filter(|&n| n <= STATE_CAP)
        .ok_or(OracleError::StateCapExceeded {
            needed: mdp.num_states().saturating_mul(levels),
            cap: STATE_CAP,
        })?;
    let n_act = mdp.num_actions() + 1;
    let sentinel = -2.0 * mdp.value_bound();
    let mut reward = vec![0.0; n_aug * n_act];
    let mut transition = vec![0.0; n_aug * n_act * n_aug];
    let aug = |s: usize, b: usize| s * levels + b;
    for s in 0..mdp.num_states() {
        for b in 0..levels {
            let x = aug(s, b);
            // Counterfactual base actions: legal only with budget to burn.
            for a in 0..mdp.num_actions() {
                let idx = x * n_act + a;
                if b > 0 {
                    reward[idx] = mdp.reward(s, a);
                    for (sn, &p) in mdp.transition_row(s, a).iter().enumerate() {
                        transition[idx * n_aug + aug(sn, b - 1)] += p;
                    }
                } else {
                    reward[idx] = sentinel;
                    transition[idx * n_aug + x] = 1.0;
                }
            }
            // Follow-behavior action: the behavior mixture over base
            // actions, budget intact.
            let idx = x * n_act + mdp.num_actions();
            for a in 0..mdp.num_actions() {
                let w = mu.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                reward[idx] += w * mdp.reward(s, a);
                for (sn, &p) in mdp.transition_row(s, a).iter().enumerate() {
                    transition[idx * n_aug + aug(sn, b)] += w * p;
                }
            }
        }
    }
    let mut initial = vec![0.0; n_aug];
    for (s, &p) in mdp.initial_dist().iter().enumerate() {
        initial[aug(s, max_budget)] = p;
    }
    let out = FiniteMdp::new(n_aug, n_act, reward, transition, initial, mdp.discount());
    debug_assert!(validate_mdp(&out).is_ok());
    Ok(AugmentedMdp {
        mdp: out,
        base_states: mdp.num_states(),
        base_actions: mdp.num_actions(),
        max_budget,
    })
}

/// Plain optimal value iteration on an arbitrary MDP, kept local so this
/// module shares no code with the solver it certifies.
fn optimal_state_values(
    mdp: &FiniteMdp,
    tol: f64,
    max_iters: usize,
) -> Result<Vec<f64>, OracleError> {
    let n = mdp.num_states();
    let gamma = mdp.discount();
    let mut v = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        let mut next = vec![f64::NEG_INFINITY; n];
        for (s, slot) in next.iter_mut().enumerate() {
            for a in 0..mdp.num_actions() {
                let cont: f64 = mdp
                    .transition_row(s, a)
                    .iter()
                    .zip(&v)
                    .map(|(p, x)| p * x)
                    .sum();
                let q = mdp.reward(s, a) + gamma * cont;
                if q > *slot {
                    *slot = q;
                }
            }
        }
        residual = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if residual < tol {
            return Ok(v);
        }
    }
    Err(OracleError::NonConvergence {
        max_iters,
        residual,
    })
}

/// Re-indexes augmented state values to a budgeted table under the
/// convention that the budget argument is the budget remaining *after*
/// the action: `Q(s, b, a) = r(s, a) + γ Σ_{s'} P(s'|s,a) V_aug(s', b)`.
fn reindex_to_budgeted(mdp: &FiniteMdp, max_budget: usize, v_aug: &[f64]) -> BudgetedQ {
    let levels = max_budget + 1;
    let gamma = mdp.discount();
    let mut q = BudgetedQ::zeros(mdp.num_states(), mdp.num_actions(), max_budget);
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            let row = mdp.transition_row(s, a);
            for b in 0..levels {
                let cont: f64 = row
                    .iter()
                    .enumerate()
                    .map(|(sn, &p)| p * v_aug[sn * levels + b])
                    .sum();
                q.set(s, b, a, mdp.reward(s, a) + gamma * cont);
            }
        }
    }
    q
}

/// First oracle route: optimal value iteration on the augmented MDP.
pub fn augmented_vi_q(
    mdp: &FiniteMdp,
    mu: &PolicyTable,
    max_budget: usize,
    tol: f64,
) -> Result<BudgetedQ, OracleError> {
    let aug = build_augmented_mdp(mdp, mu, max_budget)?;
    let v_aug = optimal_state_values(&aug.mdp, tol, 1_000_000)?;
    Ok(reindex_to_budgeted(mdp, max_budget, &v_aug))
}

/// Everything the enumeration oracle learns about an instance.
#[derive(Debug, Clone)]
pub struct EnumerationOutcome {
    /// Pointwise maximum over all candidate policies.
    pub q: BudgetedQ,
    /// The candidate with the highest expected value from the augmented
    /// initial distribution, as a policy table over augmented states.
    pub best_policy: PolicyTable,
    /// That candidate's expected initial value.
    pub best_initial_value: f64,
    /// Number of candidates evaluated.
    pub candidates: usize,
    /// The augmented MDP the candidates were evaluated on.
    pub augmented: AugmentedMdp,
}

/// Second oracle route: exhaustively enumerate deterministic stationary
/// policies of the augmented MDP (per `(s, b)` with `b > 0`: one of the
/// base actions or follow-behavior; at `b = 0` follow-behavior is forced),
/// evaluate each exactly, and return the pointwise maximum Q. The
/// candidate count is checked against [`ENUMERATION_CAP`] before any work.
///
/// Restricting to deterministic stationary candidates is sound because the
/// constrained problem *is* an ordinary finite MDP on the augmented space,
/// and ordinary finite MDPs always admit a deterministic stationary
/// optimum attaining the pointwise-maximal value.
pub fn enumerate_policies(
    mdp: &FiniteMdp,
    mu: &PolicyTable,
    max_budget: usize,
) -> Result<EnumerationOutcome, OracleError> {
    let levels = max_budget + 1;
    let choices = (mdp.num_actions() + 1) as f64;
    let candidates_bound = choices.powi((mdp.num_states() * levels) as i32);
    if candidates_bound > ENUMERATION_CAP || !candidates_bound.is_finite() {
        return Err(OracleError::EnumerationCapExceeded {
            candidates: candidates_bound,
            cap: ENUMERATION_CAP,
        });
    }
    let aug = build_augmented_mdp(mdp, mu, max_budget)?;
    let n_aug = aug.mdp.num_states();
    let n_act = aug.mdp.num_actions();
    let follow = aug.follow_action();
    // Free cells: (s, b) with b > 0, in a fixed order.
    let free: Vec<usize> = (0..mdp.num_states())
        .flat_map(|s| (1..levels).map(move |b| s * levels + b))
        .collect();
    let mut assignment = vec![0usize; free.len()];
    let mut best_v: Option<Vec<f64>> = None;
    let mut max_v = vec![f64::NEG_INFINITY; n_aug];
    let mut best_policy: Option<PolicyTable> = None;
    let mut best_initial = f64::NEG_INFINITY;
    let mut candidates = 0usize;
    loop {
        // Materialize the candidate: forced follow-behavior at b = 0.
        let mut actions = vec![follow; n_aug];
        for (slot, &cell) in free.iter().enumerate() {
            actions[cell] = assignment[slot];
        }
        let candidate = PolicyTable::deterministic(n_aug, n_act, &actions);
        let v = evaluate_policy_exact(&aug.mdp, &candidate)?;
        for (m, &x) in max_v.iter_mut().zip(&v) {
            if x > *m {
                *m = x;
            }
        }
        let initial: f64 = aug
            .mdp
            .initial_dist()
            .iter()
            .zip(&v)
            .map(|(p, x)| p * x)
            .sum();
        if initial > best_initial {
            best_initial = initial;
            best_policy = Some(candidate);
            best_v = Some(v);
        }
        candidates += 1;
        // Mixed-radix increment over the free cells.
        let mut slot = 0;
        loop {
            if slot == assignment.len() {
                let _ = best_v;
                let q = {
                    // The pointwise max over candidates of Q^π equals the
                    // re-indexing of the pointwise-max state values, since
                    // the maximizing candidate attains the max everywhere.
                    pointwise_max_q(mdp, max_budget, &max_v)
                };
                return Ok(EnumerationOutcome {
                    q,
                    best_policy: best_policy.expect("at least one candidate"),
                    best_initial_value: best_initial,
                    candidates,
                    augmented: aug,
                });
            }
            assignment[slot] += 1;
            if assignment[slot] < n_act {
                break;
            }
            assignment[slot] = 0;
            slot += 1;
        }
    }
}

fn pointwise_max_q(mdp: &FiniteMdp, max_budget: usize, max_v: &[f64]) -> BudgetedQ {
    reindex_to_budgeted(mdp, max_budget, max_v)
}

/// Convenience wrapper returning just the enumerated Q table.
pub fn enumeration_q(
    mdp: &FiniteMdp,
    mu: &PolicyTable,
    max_budget: usize,
) -> Result<BudgetedQ, OracleError> {
    Ok(enumerate_policies(mdp, mu, max_budget)?.q)
}
