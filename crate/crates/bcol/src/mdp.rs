//! Finite MDPs, policies, trajectories, rollouts, and exact policy
//! evaluation.
//!
//! All types are immutable after construction and all operations are pure
//! given their inputs and a seed, so values can be shared freely across
//! threads.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Tolerance used by the structural validators for probability-row sums.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// A tabular MDP `⟨S, A, r, P0, P, γ⟩` with dense reward and transition
/// tables.
///
/// Layout: `reward[s * A + a]`, `transition[(s * A + a) * S + s']`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    num_states: usize,
    num_actions: usize,
    reward: Vec<f64>,
    transition: Vec<f64>,
    initial_dist: Vec<f64>,
    discount: f64,
}

impl FiniteMdp {
    /// Builds an MDP from dense tables. Panics on shape mismatches;
    /// semantic checks (row sums, discount range) live in
    /// [`validate_mdp`], which reports rather than aborts.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        reward: Vec<f64>,
        transition: Vec<f64>,
        initial_dist: Vec<f64>,
        discount: f64,
    ) -> Self {
        assert!(
            num_states > 0 && num_actions > 0,
            "empty state or action space"
        );
        assert_eq!(reward.len(), num_states * num_actions, "reward table shape");
        assert_eq!(
            transition.len(),
            num_states * num_actions * num_states,
            "transition table shape"
        );
        assert_eq!(initial_dist.len(), num_states, "initial distribution shape");
        FiniteMdp {
            num_states,
            num_actions,
            reward,
            transition,
            initial_dist,
            discount,
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.reward[state * self.num_actions + action]
    }

    /// Probability vector over next states for `(state, action)`.
    pub fn transition_row(&self, state: usize, action: usize) -> &[f64] {
        let base = (state * self.num_actions + action) * self.num_states;
        &self.transition[base..base + self.num_states]
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn reward_table(&self) -> &[f64] {
        &self.reward
    }

    pub fn transition_table(&self) -> &[f64] {
        &self.transition
    }

    /// `R_max`: the largest reward magnitude in the table.
    pub fn reward_bound(&self) -> f64 {
        self.reward.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// `R_max / (1 − γ)`, the sup-norm bound on any discounted value.
    pub fn value_bound(&self) -> f64 {
        self.reward_bound() / (1.0 - self.discount)
    }
}

/// A budget-free policy: one probability vector over actions per state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl PolicyTable {
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Self {
        assert_eq!(probs.len(), num_states * num_actions, "policy table shape");
        PolicyTable {
            num_states,
            num_actions,
            probs,
        }
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_actions as f64;
        PolicyTable::new(num_states, num_actions, vec![p; num_states * num_actions])
    }

    /// Deterministic policy taking `actions[s]` in state `s`.
    pub fn deterministic(num_states: usize, num_actions: usize, actions: &[usize]) -> Self {
        assert_eq!(actions.len(), num_states);
        let mut probs = vec![0.0; num_states * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            assert!(a < num_actions, "action out of range");
            probs[s * num_actions + a] = 1.0;
        }
        PolicyTable::new(num_states, num_actions, probs)
    }

    /// Mixture `(1 − eps)·self + eps·uniform`, row by row.
    pub fn mix_with_uniform(&self, eps: f64) -> Self {
        let u = eps / self.num_actions as f64;
        let probs = self.probs.iter().map(|p| p * (1.0 - eps) + u).collect();
        PolicyTable::new(self.num_states, self.num_actions, probs)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.probs[state * self.num_actions..(state + 1) * self.num_actions]
    }

    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.probs[state * self.num_actions + action]
    }

    pub fn rows(&self) -> &[f64] {
        &self.probs
    }

    /// Largest per-state L1 distance to another policy.
    pub fn l1_gap(&self, other: &PolicyTable) -> f64 {
        assert_eq!(self.num_states, other.num_states);
        assert_eq!(self.num_actions, other.num_actions);
        (0..self.num_states)
            .map(|s| {
                self.row(s)
                    .iter()
                    .zip(other.row(s))
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

/// A budget-conditioned policy: one probability vector per `(state, budget)`
/// pair, with budgets `0..=max_budget`.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetedPolicy {
    num_states: usize,
    num_actions: usize,
    max_budget: usize,
    probs: Vec<f64>,
}

impl BudgetedPolicy {
    pub fn new(num_states: usize, num_actions: usize, max_budget: usize, probs: Vec<f64>) -> Self {
        assert_eq!(
            probs.len(),
            num_states * (max_budget + 1) * num_actions,
            "budgeted policy shape"
        );
        BudgetedPolicy {
            num_states,
            num_actions,
            max_budget,
            probs,
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

    pub fn row(&self, state: usize, budget: usize) -> &[f64] {
        assert!(budget <= self.max_budget, "budget out of range");
        let base = (state * (self.max_budget + 1) + budget) * self.num_actions;
        &self.probs[base..base + self.num_actions]
    }

    pub fn rows(&self) -> &[f64] {
        &self.probs
    }
}

/// One executed step of a trajectory. `budget_before` is the remaining
/// counterfactual budget when the decision was taken; `counterfactual`
/// records the decision the agent committed to (not a post-hoc
/// distribution comparison), so the budget recursion
/// `b_{t+1} = b_t − 1{counterfactual}` is checkable on the record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryStep {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub budget_before: usize,
    pub counterfactual: bool,
}

/// A finite rollout and its discounted return.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub return_discounted: f64,
}

impl Trajectory {
    pub fn counterfactual_count(&self) -> usize {
        self.steps.iter().filter(|s| s.counterfactual).count()
    }

    pub fn return_undiscounted(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// Step index at which the budget reached zero, if it ever did.
    pub fn exhaustion_step(&self) -> Option<usize> {
        self.steps
            .iter()
            .position(|s| s.counterfactual && s.budget_before == 1)
    }
}

/// Structural check result for an MDP. Diagnostic only: it lists every
/// violation and never aborts.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every invariant of a [`FiniteMdp`]: stochastic transition rows,
/// stochastic initial distribution, finite bounded rewards, and
/// `0 ≤ γ < 1`.
pub fn validate_mdp(mdp: &FiniteMdp) -> ValidationReport {
    let mut report = ValidationReport::default();
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            let row = mdp.transition_row(s, a);
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                report
                    .violations
                    .push(format!("transition row sum {sum} at (s={s}, a={a})"));
            }
            if let Some(j) = row.iter().position(|&p| p < 0.0) {
                report.violations.push(format!(
                    "negative transition probability {} at (s={s}, a={a}, s'={j})",
                    row[j]
                ));
            }
            let r = mdp.reward(s, a);
            if !r.is_finite() {
                report
                    .violations
                    .push(format!("non-finite reward {r} at (s={s}, a={a})"));
            }
        }
    }
    let p0_sum: f64 = mdp.initial_dist().iter().sum();
    if (p0_sum - 1.0).abs() > PROB_SUM_TOL {
        report
            .violations
            .push(format!("initial distribution sum {p0_sum}"));
    }
    if let Some(j) = mdp.initial_dist().iter().position(|&p| p < 0.0) {
        report.violations.push(format!(
            "negative initial probability {} at s={j}",
            mdp.initial_dist()[j]
        ));
    }
    if !(0.0..1.0).contains(&mdp.discount()) {
        report.violations.push(format!(
            "discount must be < 1 and ≥ 0, got {}",
            mdp.discount()
        ));
    }
    report
}

/// Checks that every row of a policy table is a probability vector.
pub fn validate_policy(policy: &PolicyTable) -> ValidationReport {
    let mut report = ValidationReport::default();
    for s in 0..policy.num_states() {
        let row = policy.row(s);
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            report
                .violations
                .push(format!("policy row sum {sum} at s={s}"));
        }
        if row.iter().any(|&p| p < 0.0) {
            report
                .violations
                .push(format!("negative policy probability at s={s}"));
        }
    }
    report
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(
        "policy evaluation did not converge: residual {residual} after {iterations} iterations"
    )]
    NonConvergence { residual: f64, iterations: usize },
    #[error("linear system is singular at pivot column {column}")]
    SingularSystem { column: usize },
}

/// Residual the direct solve must meet (sup-norm of the Bellman-evaluation
/// equations at the returned solution).
pub const EVAL_RESIDUAL_TOL: f64 = 1e-10;

/// Exact policy evaluation: solves `(I − γ P_π) V = r_π` by Gaussian
/// elimination with partial pivoting and verifies the residual is below
/// [`EVAL_RESIDUAL_TOL`].
pub fn evaluate_policy_exact(mdp: &FiniteMdp, policy: &PolicyTable) -> Result<Vec<f64>, EvalError> {
    let n = mdp.num_states();
    let gamma = mdp.discount();
    // Build r_pi and P_pi.
    let mut r_pi = vec![0.0; n];
    let mut p_pi = vec![0.0; n * n];
    for s in 0..n {
        for (a, &w) in policy.row(s).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            r_pi[s] += w * mdp.reward(s, a);
            let row = mdp.transition_row(s, a);
            for (j, &p) in row.iter().enumerate() {
                p_pi[s * n + j] += w * p;
            }
        }
    }
    // A = I - gamma * P_pi
    let mut a_mat = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a_mat[i * n + j] = if i == j { 1.0 } else { 0.0 } - gamma * p_pi[i * n + j];
        }
    }
    let v = solve_dense(&mut a_mat, r_pi.clone(), n)?;
    // Residual check against the untouched system.
    let mut residual = 0.0_f64;
    for s in 0..n {
        let mut lhs = v[s];
        for j in 0..n {
            lhs -= gamma * p_pi[s * n + j] * v[j];
        }
        residual = residual.max((lhs - r_pi[s]).abs());
    }
    if residual > EVAL_RESIDUAL_TOL {
        return Err(EvalError::NonConvergence {
            residual,
            iterations: 0,
        });
    }
    Ok(v)
}

/// Iterative policy evaluation: repeats `V ← r_π + γ P_π V` until the
/// sup-norm update falls below `tol`.
pub fn evaluate_policy_iterative(
    mdp: &FiniteMdp,
    policy: &PolicyTable,
    tol: f64,
    max_iters: usize,
) -> Result<Vec<f64>, EvalError> {
    let n = mdp.num_states();
    let gamma = mdp.discount();
    let mut v = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for it in 0..max_iters {
        let mut next = vec![0.0; n];
        for (s, slot) in next.iter_mut().enumerate() {
            let mut val = 0.0;
            for (a, &w) in policy.row(s).iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let row = mdp.transition_row(s, a);
                let cont: f64 = row.iter().zip(&v).map(|(p, x)| p * x).sum();
                val += w * (mdp.reward(s, a) + gamma * cont);
            }
            *slot = val;
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
        let _ = it;
    }
    Err(EvalError::NonConvergence {
        residual,
        iterations: max_iters,
    })
}

/// State-action values of a policy: `Q^π(s,a) = r(s,a) + γ Σ_{s'} P V^π(s')`,
/// given `V^π` from one of the evaluators. Returned flat, `s * A + a`.
pub fn policy_q_from_v(mdp: &FiniteMdp, v: &[f64]) -> Vec<f64> {
    assert_eq!(v.len(), mdp.num_states());
    let gamma = mdp.discount();
    let mut q = vec![0.0; mdp.num_states() * mdp.num_actions()];
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            let cont: f64 = mdp
                .transition_row(s, a)
                .iter()
                .zip(v)
                .map(|(p, x)| p * x)
                .sum();
            q[s * mdp.num_actions() + a] = mdp.reward(s, a) + gamma * cont;
        }
    }
    q
}

/// Dense linear solve by Gaussian elimination with partial pivoting.
/// Consumes the matrix in place.
fn solve_dense(a: &mut [f64], mut b: Vec<f64>, n: usize) -> Result<Vec<f64>, EvalError> {
    for col in 0..n {
        let mut pivot = col;
        let mut best = a[col * n + col].abs();
        for row in col + 1..n {
            let mag = a[row * n + col].abs();
            if mag > best {
                best = mag;
                pivot = row;
            }
        }
        if best == 0.0 {
            return Err(EvalError::SingularSystem { column: col });
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                a[row * n + j] -= factor * a[col * n + j];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut sum = b[row];
        for j in row + 1..n {
            sum -= a[row * n + j] * x[j];
        }
        x[row] = sum / a[row * n + row];
    }
    Ok(x)
}

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("horizon must be at least 1")]
    EmptyHorizon,
    #[error(
        "decision at step {step} returned a distribution of length {got}, expected {expected}"
    )]
    DistributionShape {
        step: usize,
        got: usize,
        expected: usize,
    },
    #[error("decision at step {step} returned an invalid distribution (sum {sum})")]
    InvalidDistribution { step: usize, sum: f64 },
    #[error("counterfactual decision at step {step} with zero budget remaining")]
    BudgetOverspent { step: usize },
}

/// A per-step decision: the distribution to sample the action from, and
/// whether the agent commits to this step being counterfactual (which
/// charges one unit of budget).
#[derive(Debug, Clone)]
pub struct StepChoice {
    pub action_dist: Vec<f64>,
    pub counterfactual: bool,
}

impl StepChoice {
    /// Follow a fixed distribution without spending budget.
    pub fn follow(dist: &[f64]) -> Self {
        StepChoice {
            action_dist: dist.to_vec(),
            counterfactual: false,
        }
    }

    /// Commit a counterfactual step with the given distribution.
    pub fn deviate(dist: &[f64]) -> Self {
        StepChoice {
            action_dist: dist.to_vec(),
            counterfactual: true,
        }
    }
}

/// Samples an index from a probability vector by inverse CDF with the
/// fixed storage ordering, so a given uniform draw always maps to the
/// same index.
pub(crate) fn sample_index<R: Rng>(dist: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    // Float shortfall: the row sums to 1 within tolerance; fall back to
    // the last index with positive mass.
    last_positive
}

/// Derives a per-stream seed from a base seed and an index (splitmix64).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Simulates up to `horizon` steps of the MDP, asking `decide` for each
/// step's action distribution and counterfactual commitment.
///
/// The initial state is drawn from the MDP's initial distribution. The
/// remaining budget starts at `initial_budget`, decreases by exactly 1 at
/// committed counterfactual steps, and the rollout refuses to overspend.
/// Deterministic given the seed: the RNG is ChaCha8 and every draw uses
/// inverse-CDF sampling in fixed storage order.
pub fn rollout<F>(
    mdp: &FiniteMdp,
    mut decide: F,
    initial_budget: usize,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory, RolloutError>
where
    F: FnMut(usize, usize, usize) -> StepChoice,
{
    if horizon == 0 {
        return Err(RolloutError::EmptyHorizon);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = sample_index(mdp.initial_dist(), &mut rng);
    let mut budget = initial_budget;
    let mut steps = Vec::with_capacity(horizon);
    let mut ret = 0.0;
    let mut disc = 1.0;
    for step in 0..horizon {
        let choice = decide(state, budget, step);
        if choice.action_dist.len() != mdp.num_actions() {
            return Err(RolloutError::DistributionShape {
                step,
                got: choice.action_dist.len(),
                expected: mdp.num_actions(),
            });
        }
        let sum: f64 = choice.action_dist.iter().sum();
        let deviation = (sum - 1.0).abs();
        if !deviation.is_finite() || deviation > 1e-9 || choice.action_dist.iter().any(|&p| p < 0.0)
        {
            return Err(RolloutError::InvalidDistribution { step, sum });
        }
        if choice.counterfactual && budget == 0 {
            return Err(RolloutError::BudgetOverspent { step });
        }
        let action = sample_index(&choice.action_dist, &mut rng);
        let reward = mdp.reward(state, action);
        steps.push(TrajectoryStep {
            state,
            action,
            reward,
            budget_before: budget,
            counterfactual: choice.counterfactual,
        });
        ret += disc * reward;
        disc *= mdp.discount();
        if choice.counterfactual {
            budget -= 1;
        }
        state = sample_index(mdp.transition_row(state, action), &mut rng);
    }
    Ok(Trajectory {
        steps,
        return_discounted: ret,
    })
}

/// Rolls out a fixed budget-free policy (no counterfactual bookkeeping).
pub fn rollout_policy(
    mdp: &FiniteMdp,
    policy: &PolicyTable,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory, RolloutError> {
    rollout(
        mdp,
        |s, _b, _t| StepChoice::follow(policy.row(s)),
        0,
        horizon,
        seed,
    )
}
