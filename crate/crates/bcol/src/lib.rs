//! Budgeted-counterfactual offline reinforcement learning on finite MDPs.
//!
//! The central object is a Q table with an extra *budget* axis: `Q(s, b, a)`
//! is the best achievable discounted return from `(s, a)` when at most `b`
//! future decisions may deviate from a fixed behavior policy. The crate
//! provides:
//!
//! * [`mdp`] — tabular MDPs, policies, rollouts, exact policy evaluation;
//! * [`envs`] — small built-in benchmark environments with designated
//!   behavior policies;
//! * [`dp`] — the budgeted Bellman operator and value iteration to its
//!   unique fixed point;
//! * [`oracle`] — two independent certifications of that fixed point
//!   (budget-augmented product MDP, exhaustive policy enumeration);
//! * [`data`] — offline dataset generation, persistence, and behavior
//!   cloning;
//! * [`fitted`] — the sample-based training loop (TD loss, exact softmax
//!   policy gradient, monotonicity penalty, delayed target);
//! * [`inference`] — budget-aware action selection, evaluation rollouts,
//!   and the ablation policies used by the benchmark CLI;
//! * [`textio`] — lossless plain-text serialization for MDPs, tables, and
//!   policies.
//!
//! Solving a built-in environment exactly and evaluating its budget-aware
//! policy:
//!
//! ```
//! use bcol::dp::{budgeted_value_iteration, greedy_budgeted_policy};
//! use bcol::envs;
//! use bcol::inference::{budgeted_producer, evaluate};
//!
//! let (mdp, mu) = envs::key_door_grid(2, 0.99).unwrap();
//! let solved = budgeted_value_iteration(&mdp, &mu, 2, 1e-10, 100_000).unwrap();
//! let policy = greedy_budgeted_policy(&solved.q);
//! let mut producer = budgeted_producer(&mdp, &policy, &mu, &solved.q, 2);
//! let report = evaluate(&mdp, &mut producer, 50, 500, 0).unwrap();
//! assert!(report.mean_discounted > 10.0);
//! assert!(report.mean_counterfactual <= 2.0);
//! ```

pub mod data;
pub mod dp;
pub mod envs;
pub mod fitted;
pub mod inference;
pub mod mdp;
pub mod oracle;
pub mod textio;

pub use dp::{BudgetedQ, QTable};
pub use mdp::{BudgetedPolicy, FiniteMdp, PolicyTable, Trajectory};
