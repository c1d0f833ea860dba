//! The counterfactual-budgeting Bellman operator and exact budgeted value
//! iteration.
//!
//! `Q(s, b, a)` is indexed by state, remaining budget `b ∈ {0..B}`, and
//! action, under the convention that `b` is the budget available *after*
//! taking `a` (the current action is not charged). The backup is
//!
//! ```text
//! (T Q)(s, b, a) = r(s, a) + γ Σ_{s'} P(s'|s,a) · V_Q(s', b)
//! V_Q(s', b)     = max( max_a' Q(s', b−1, a'),  Σ_a' μ(a'|s') Q(s', b, a') )   b > 0
//!                =                              Σ_a' μ(a'|s') Q(s', b, a')     b = 0
//! ```
//!
//! i.e. per budget level the backup chooses between spending one unit on a
//! greedy action and following the behavior policy with the budget intact.
//! The operator is a γ-contraction in the sup norm, so iteration from any
//! start converges to its unique fixed point. Updates are Jacobi style
//! (whole table from the previous table), which makes the backup literally
//! the operator above and keeps the sweep order irrelevant.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::mdp::{BudgetedPolicy, FiniteMdp, PolicyTable};

/// Default convergence tolerance for the value-iteration drivers.
pub const DEFAULT_TOL: f64 = 1e-9;
/// Default iteration cap for the value-iteration drivers.
pub const DEFAULT_MAX_ITERS: usize = 100_000;

#[derive(Debug, Error)]
pub enum DpError {
    #[error("budget {budget} out of range 0..={max_budget}")]
    BudgetOutOfRange { budget: usize, max_budget: usize },
    #[error("dimension mismatch: {message}")]
    DimensionMismatch { message: String },
    #[error("value iteration hit the {max_iters}-iteration cap with residual {residual}")]
    MaxIterations { max_iters: usize, residual: f64 },
}

/// A plain state-action value table, `values[s * A + a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        QTable {
            num_states,
            num_actions,
            values: vec![0.0; num_states * num_actions],
        }
    }

    pub fn from_values(num_states: usize, num_actions: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), num_states * num_actions, "q table shape");
        QTable {
            num_states,
            num_actions,
            values,
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.num_actions + action]
    }

    pub fn set(&mut self, state: usize, action: usize, value: f64) {
        self.values[state * self.num_actions + action] = value;
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.num_actions..(state + 1) * self.num_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Greedy action per state, ties broken toward the lowest index.
    pub fn greedy_action(&self, state: usize) -> usize {
        argmax(self.row(state))
    }

    /// `max_a Q(s, a)` per state.
    pub fn state_values(&self) -> Vec<f64> {
        (0..self.num_states)
            .map(|s| {
                self.row(s)
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        assert_eq!(self.values.len(), other.values.len());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A budget-indexed Q table, `values[(s * (B+1) + b) * A + a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetedQ {
    num_states: usize,
    num_actions: usize,
    max_budget: usize,
    values: Vec<f64>,
}

impl BudgetedQ {
    pub fn zeros(num_states: usize, num_actions: usize, max_budget: usize) -> Self {
        BudgetedQ {
            num_states,
            num_actions,
            max_budget,
            values: vec![0.0; num_states * (max_budget + 1) * num_actions],
        }
    }

    pub fn from_values(
        num_states: usize,
        num_actions: usize,
        max_budget: usize,
        values: Vec<f64>,
    ) -> Self {
        assert_eq!(
            values.len(),
            num_states * (max_budget + 1) * num_actions,
            "budgeted q shape"
        );
        BudgetedQ {
            num_states,
            num_actions,
            max_budget,
            values,
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

    pub fn get(&self, state: usize, budget: usize, action: usize) -> f64 {
        self.values[self.index(state, budget, action)]
    }

    pub fn set(&mut self, state: usize, budget: usize, action: usize, value: f64) {
        let i = self.index(state, budget, action);
        self.values[i] = value;
    }

    /// Action-value row at `(state, budget)`.
    pub fn slice(&self, state: usize, budget: usize) -> &[f64] {
        let base = (state * (self.max_budget + 1) + budget) * self.num_actions;
        &self.values[base..base + self.num_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// One budget level extracted as a plain table.
    pub fn budget_slice(&self, budget: usize) -> QTable {
        assert!(budget <= self.max_budget);
        let mut q = QTable::zeros(self.num_states, self.num_actions);
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                q.set(s, a, self.get(s, budget, a));
            }
        }
        q
    }

    pub fn sup_distance(&self, other: &BudgetedQ) -> f64 {
        assert_eq!(self.values.len(), other.values.len(), "table shapes differ");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    let mut best_val = row[0];
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > best_val {
            best_val = v;
            best = i;
        }
    }
    best
}

fn check_dims(mdp: &FiniteMdp, mu: &PolicyTable, q: &BudgetedQ) -> Result<(), DpError> {
    if q.num_states() != mdp.num_states()
        || q.num_actions() != mdp.num_actions()
        || mu.num_states() != mdp.num_states()
        || mu.num_actions() != mdp.num_actions()
    {
        return Err(DpError::DimensionMismatch {
            message: format!(
                "mdp {}x{}, policy {}x{}, q {}x{}",
                mdp.num_states(),
                mdp.num_actions(),
                mu.num_states(),
                mu.num_actions(),
                q.num_states(),
                q.num_actions()
            ),
        });
    }
    Ok(())
}

/// The two-case state value `V_Q(s, b)`: for `b > 0` the max of the greedy
/// value one budget level down and the behavior expectation at the same
/// level; for `b = 0` the behavior expectation only.
pub fn budgeted_state_value(
    q: &BudgetedQ,
    mu: &PolicyTable,
    state: usize,
    budget: usize,
) -> Result<f64, DpError> {
    if budget > q.max_budget() {
        return Err(DpError::BudgetOutOfRange {
            budget,
            max_budget: q.max_budget(),
        });
    }
    let follow: f64 = mu
        .row(state)
        .iter()
        .zip(q.slice(state, budget))
        .map(|(p, v)| p * v)
        .sum();
    if budget == 0 {
        return Ok(follow);
    }
    let spend = q
        .slice(state, budget - 1)
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(spend.max(follow))
}

/// One full Jacobi application of the budgeted Bellman operator. The input
/// is untouched; expectations over the next state are exact dense dot
/// products.
pub fn budgeted_bellman_backup(
    mdp: &FiniteMdp,
    mu: &PolicyTable,
    q: &BudgetedQ,
) -> Result<BudgetedQ, DpError> {
    check_dims(mdp, mu, q)?;
    let levels = q.max_budget() + 1;
    // State values of the previous table, v[s' * levels + b].
    let mut v = vec![0.0; mdp.num_states() * levels];
    for s in 0..mdp.num_states() {
        for b in 0..levels {
            v[s * levels + b] = budgeted_state_value(q, mu, s, b)?;
        }
    }
    let gamma = mdp.discount();
    let mut out = BudgetedQ::zeros(mdp.num_states(), mdp.num_actions(), q.max_budget());
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            let row = mdp.transition_row(s, a);
            let r = mdp.reward(s, a);
            for b in 0..levels {
                let cont: f64 = row
                    .iter()
                    .enumerate()
                    .map(|(sn, &p)| p * v[sn * levels + b])
                    .sum();
                out.set(s, b, a, r + gamma * cont);
            }
        }
    }
    Ok(out)
}

/// Result of a value-iteration run.
#[derive(Debug, Clone)]
pub struct ViOutcome {
    pub q: BudgetedQ,
    pub iterations: usize,
    pub residual: f64,
}

/// Iterates the budgeted backup from `Q ≡ 0` until the sup-norm step falls
/// below `tol`. Because successive iterates satisfy
/// `‖Q_{k+1} − T Q_{k+1}‖ ≤ γ‖Q_k − Q_{k+1}‖`, the returned table's own
/// Bellman residual is below `tol`, and by contraction it is within
/// `tol/(1−γ)` of the fixed point.
pub fn budgeted_value_iteration(
    mdp: &FiniteMdp,
    mu: &PolicyTable,
    max_budget: usize,
    tol: f64,
    max_iters: usize,
) -> Result<ViOutcome, DpError> {
    assert!(tol > 0.0, "tolerance must be positive");
    let mut q = BudgetedQ::zeros(mdp.num_states(), mdp.num_actions(), max_budget);
    let mut residual = f64::INFINITY;
    for it in 1..=max_iters {
        let next = budgeted_bellman_backup(mdp, mu, &q)?;
        residual = next.sup_distance(&q);
        q = next;
        if residual < tol {
            return Ok(ViOutcome {
                q,
                iterations: it,
                residual,
            });
        }
    }
    Err(DpError::MaxIterations {
        max_iters,
        residual,
    })
}

/// Result of unbudgeted value iteration.
#[derive(Debug, Clone)]
pub struct StdViOutcome {
    pub q: QTable,
    pub iterations: usize,
    pub residual: f64,
}

/// Standard optimal value iteration (the budget-free limit of the budgeted
/// backup: with unlimited budget the greedy branch always wins).
pub fn standard_value_iteration(
    mdp: &FiniteMdp,
    tol: f64,
    max_iters: usize,
) -> Result<StdViOutcome, DpError> {
    assert!(tol > 0.0, "tolerance must be positive");
    let gamma = mdp.discount();
    let mut q = QTable::zeros(mdp.num_states(), mdp.num_actions());
    let mut residual = f64::INFINITY;
    for it in 1..=max_iters {
        let v = q.state_values();
        let mut next = QTable::zeros(mdp.num_states(), mdp.num_actions());
        for s in 0..mdp.num_states() {
            for a in 0..mdp.num_actions() {
                let cont: f64 = mdp
                    .transition_row(s, a)
                    .iter()
                    .zip(&v)
                    .map(|(p, x)| p * x)
                    .sum();
                next.set(s, a, mdp.reward(s, a) + gamma * cont);
            }
        }
        residual = next.sup_distance(&q);
        q = next;
        if residual < tol {
            return Ok(StdViOutcome {
                q,
                iterations: it,
                residual,
            });
        }
    }
    Err(DpError::MaxIterations {
        max_iters,
        residual,
    })
}

/// Outcome of [`contraction_probe`].
#[derive(Debug, Clone, Copy)]
pub struct ProbeOutcome {
    /// Largest observed `‖T Q1 − T Q2‖_∞ / ‖Q1 − Q2‖_∞`.
    pub max_ratio: f64,
    pub trials: usize,
}

/// Empirically probes the contraction factor of the budgeted backup on
/// random table pairs. Identical inputs contribute ratio 0 by convention.
pub fn contraction_probe(
    mdp: &FiniteMdp,
    mu: &PolicyTable,
    max_budget: usize,
    trials: usize,
    seed: u64,
) -> ProbeOutcome {
    assert!(trials >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = mdp.value_bound().max(1.0);
    let mut max_ratio = 0.0_f64;
    for _ in 0..trials {
        let mut q1 = BudgetedQ::zeros(mdp.num_states(), mdp.num_actions(), max_budget);
        let mut q2 = q1.clone();
        for v in q1.values_mut() {
            *v = rng.gen_range(-scale..scale);
        }
        for v in q2.values_mut() {
            *v = rng.gen_range(-scale..scale);
        }
        let d = q1.sup_distance(&q2);
        if d == 0.0 {
            continue;
        }
        let t1 = budgeted_bellman_backup(mdp, mu, &q1).expect("dims fixed by construction");
        let t2 = budgeted_bellman_backup(mdp, mu, &q2).expect("dims fixed by construction");
        max_ratio = max_ratio.max(t1.sup_distance(&t2) / d);
    }
    ProbeOutcome { max_ratio, trials }
}

/// Deterministic greedy policy per `(state, budget)` cell, ties broken
/// toward the lowest action index.
pub fn greedy_budgeted_policy(q: &BudgetedQ) -> BudgetedPolicy {
    let levels = q.max_budget() + 1;
    let mut probs = vec![0.0; q.num_states() * levels * q.num_actions()];
    for s in 0..q.num_states() {
        for b in 0..levels {
            let a = argmax(q.slice(s, b));
            probs[(s * levels + b) * q.num_actions() + a] = 1.0;
        }
    }
    BudgetedPolicy::new(q.num_states(), q.num_actions(), q.max_budget(), probs)
}

/// Deterministic greedy policy of a plain table.
pub fn greedy_policy(q: &QTable) -> PolicyTable {
    let actions: Vec<usize> = (0..q.num_states()).map(|s| q.greedy_action(s)).collect();
    PolicyTable::deterministic(q.num_states(), q.num_actions(), &actions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::r_chain;
    use crate::mdp::{evaluate_policy_exact, policy_q_from_v};

    fn single_state_mdp() -> FiniteMdp {
        FiniteMdp::new(1, 1, vec![1.0], vec![1.0], vec![1.0], 0.5)
    }

    #[test]
    fn state_value_constant_table_at_zero_budget() {
        let mut q = BudgetedQ::zeros(1, 3, 2);
        for v in q.values_mut() {
            *v = 4.25;
        }
        let mu = PolicyTable::uniform(1, 3);
        assert_eq!(budgeted_state_value(&q, &mu, 0, 0).unwrap(), 4.25);
    }

    #[test]
    fn state_value_two_case_max() {
        // b=1: spend-branch sees (0, 1) one level down, follow-branch sees
        // (0, 0) at the same level under a uniform policy.
        let mut q = BudgetedQ::zeros(1, 2, 1);
        q.set(0, 0, 1, 1.0);
        let mu = PolicyTable::uniform(1, 2);
        assert_eq!(budgeted_state_value(&q, &mu, 0, 1).unwrap(), 1.0);
    }

    #[test]
    fn state_value_rejects_out_of_range_budget() {
        let q = BudgetedQ::zeros(1, 2, 1);
        let mu = PolicyTable::uniform(1, 2);
        assert!(matches!(
            budgeted_state_value(&q, &mu, 0, 2),
            Err(DpError::BudgetOutOfRange { .. })
        ));
    }

    #[test]
    fn backup_of_zero_table_is_reward() {
        let (mdp, mu) = r_chain();
        let q = BudgetedQ::zeros(2, 2, 2);
        let t = budgeted_bellman_backup(&mdp, &mu, &q).unwrap();
        for s in 0..2 {
            for b in 0..=2 {
                for a in 0..2 {
                    assert_eq!(t.get(s, b, a), mdp.reward(s, a));
                }
            }
        }
    }

    #[test]
    fn backup_rejects_dimension_mismatch() {
        let (mdp, mu) = r_chain();
        let q = BudgetedQ::zeros(3, 2, 1);
        assert!(matches!(
            budgeted_bellman_backup(&mdp, &mu, &q),
            Err(DpError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn single_state_fixed_point_ignores_budget() {
        let mdp = single_state_mdp();
        let mu = PolicyTable::uniform(1, 1);
        let out = budgeted_value_iteration(&mdp, &mu, 3, 1e-12, 10_000).unwrap();
        for b in 0..=3 {
            assert!((out.q.get(0, b, 0) - 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_reward_fixed_point_is_zero() {
        let (mdp, mu) = r_chain();
        let zero = FiniteMdp::new(
            2,
            2,
            vec![0.0; 4],
            mdp.transition_table().to_vec(),
            mdp.initial_dist().to_vec(),
            mdp.discount(),
        );
        let out = budgeted_value_iteration(&zero, &mu, 2, 1e-12, 10_000).unwrap();
        assert!(out.q.max_abs() < 1e-12);
    }

    /// Frozen fixed-point values for the canonical chain at B = 1,
    /// derived by hand from the recursion and confirmed by the
    /// augmented-MDP oracle (see the oracle module's tests).
    #[test]
    fn r_chain_budget_one_fixed_point() {
        let (mdp, mu) = r_chain();
        let out = budgeted_value_iteration(&mdp, &mu, 1, 1e-10, 10_000).unwrap();
        let q = &out.q;
        assert!((q.get(0, 1, 1) - 1.5).abs() < 1e-9);
        assert!((q.get(1, 1, 1) - 1.5).abs() < 1e-9);
        assert!((q.get(1, 1, 0) - 0.5).abs() < 1e-9);
        assert!((q.get(1, 0, 1) - 1.0).abs() < 1e-9);
        assert!((q.get(0, 1, 0) - 0.5).abs() < 1e-9);
        assert!((q.get(0, 0, 1) - 1.0).abs() < 1e-9);
        assert!(q.get(0, 0, 0).abs() < 1e-9);
        // V(s=1, b=1) under the two-case rule.
        let v11 = budgeted_state_value(q, &mu, 1, 1).unwrap();
        assert!((v11 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn budget_zero_equals_behavior_evaluation() {
        let (mdp, mu) = r_chain();
        let out = budgeted_value_iteration(&mdp, &mu, 0, 1e-12, 10_000).unwrap();
        let v = evaluate_policy_exact(&mdp, &mu).unwrap();
        let q_mu = policy_q_from_v(&mdp, &v);
        for s in 0..2 {
            for a in 0..2 {
                assert!((out.q.get(s, 0, a) - q_mu[s * 2 + a]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn standard_vi_on_r_chain() {
        let (mdp, _) = r_chain();
        let out = standard_value_iteration(&mdp, 1e-12, 10_000).unwrap();
        assert!(out.iterations >= 30);
        assert!((out.q.get(0, 1) - 2.0).abs() < 1e-10);
        assert!((out.q.get(1, 1) - 2.0).abs() < 1e-10);
    }

    #[test]
    fn standard_vi_zero_rewards() {
        let mdp = FiniteMdp::new(1, 2, vec![0.0, 0.0], vec![1.0, 1.0], vec![1.0], 0.9);
        let out = standard_value_iteration(&mdp, 1e-12, 10_000).unwrap();
        assert!(out.q.values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn max_iterations_error_carries_residual() {
        let (mdp, mu) = r_chain();
        let err = budgeted_value_iteration(&mdp, &mu, 1, 1e-12, 2).unwrap_err();
        match err {
            DpError::MaxIterations { residual, .. } => assert!(residual > 0.0),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn constant_shift_contracts_exactly_by_gamma() {
        let (mdp, mu) = r_chain();
        let mut q1 = BudgetedQ::zeros(2, 2, 1);
        for (i, v) in q1.values_mut().iter_mut().enumerate() {
            *v = i as f64 * 0.37 - 1.0;
        }
        let mut q2 = q1.clone();
        for v in q2.values_mut() {
            *v += 3.0;
        }
        let t1 = budgeted_bellman_backup(&mdp, &mu, &q1).unwrap();
        let t2 = budgeted_bellman_backup(&mdp, &mu, &q2).unwrap();
        let ratio = t1.sup_distance(&t2) / q1.sup_distance(&q2);
        assert!((ratio - mdp.discount()).abs() < 1e-12);
    }

    #[test]
    fn probe_stays_below_gamma() {
        let (mdp, mu) = r_chain();
        let probe = contraction_probe(&mdp, &mu, 2, 100, 11);
        assert!(probe.max_ratio <= mdp.discount() + 1e-12);
    }

    #[test]
    fn greedy_extraction_and_tie_break() {
        let mut q = BudgetedQ::zeros(1, 2, 1);
        q.set(0, 0, 1, 1.0); // (0, 1) -> action 1
        q.set(0, 1, 0, 1.0);
        q.set(0, 1, 1, 1.0); // tie -> action 0
        let pi = greedy_budgeted_policy(&q);
        assert_eq!(pi.row(0, 0), &[0.0, 1.0]);
        assert_eq!(pi.row(0, 1), &[1.0, 0.0]);
    }

    #[test]
    fn r_chain_greedy_at_budget_one_goes_right() {
        let (mdp, mu) = r_chain();
        let out = budgeted_value_iteration(&mdp, &mu, 1, 1e-10, 10_000).unwrap();
        let pi = greedy_budgeted_policy(&out.q);
        assert_eq!(pi.row(0, 1), &[0.0, 1.0]);
    }

    #[test]
    fn monotone_in_budget_at_fixed_point() {
        let (mdp, mu) = r_chain();
        let out = budgeted_value_iteration(&mdp, &mu, 3, 1e-10, 10_000).unwrap();
        for s in 0..2 {
            for b in 0..3 {
                for a in 0..2 {
                    assert!(out.q.get(s, b + 1, a) >= out.q.get(s, b, a) - 1e-10);
                }
            }
        }
    }
}
