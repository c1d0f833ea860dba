//! Random-instance generators shared by the integration and acceptance
//! suites. Each test target links its own copy, so not every helper is
//! used everywhere.
#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use bcol::dp::BudgetedQ;
use bcol::mdp::{FiniteMdp, PolicyTable};

/// Draws a dense random MDP with rewards in [-1, 1] and Dirichlet-ish
/// transition rows (normalized positive uniforms, so every entry is
/// strictly positive and rows sum to 1 exactly up to float error).
pub fn random_mdp<R: Rng>(
    num_states: usize,
    num_actions: usize,
    discount: f64,
    rng: &mut R,
) -> FiniteMdp {
    let mut reward = Vec::with_capacity(num_states * num_actions);
    for _ in 0..num_states * num_actions {
        reward.push(rng.gen_range(-1.0..1.0));
    }
    let mut transition = Vec::with_capacity(num_states * num_actions * num_states);
    for _ in 0..num_states * num_actions {
        transition.extend(random_dist(num_states, rng));
    }
    let initial = random_dist(num_states, rng);
    FiniteMdp::new(
        num_states,
        num_actions,
        reward,
        transition,
        initial,
        discount,
    )
}

/// Strictly positive normalized probability vector.
pub fn random_dist<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    let mut row: Vec<f64> = (0..len).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = row.iter().sum();
    for p in &mut row {
        *p /= total;
    }
    row
}

pub fn random_policy<R: Rng>(num_states: usize, num_actions: usize, rng: &mut R) -> PolicyTable {
    let mut probs = Vec::with_capacity(num_states * num_actions);
    for _ in 0..num_states {
        probs.extend(random_dist(num_actions, rng));
    }
    PolicyTable::new(num_states, num_actions, probs)
}

pub fn random_budgeted_q<R: Rng>(
    num_states: usize,
    num_actions: usize,
    max_budget: usize,
    scale: f64,
    rng: &mut R,
) -> BudgetedQ {
    let mut q = BudgetedQ::zeros(num_states, num_actions, max_budget);
    for v in q.values_mut() {
        *v = rng.gen_range(-scale..scale);
    }
    q
}

/// A reproducible instance stream for suite tests.
pub fn suite_rng(salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0xBC01_u64 ^ salt)
}
