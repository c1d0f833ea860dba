//! Built-in benchmark environments.
//!
//! Each constructor returns a validated MDP together with its designated
//! (deliberately suboptimal) behavior policy. They are small on purpose:
//! every one of them is solvable by the exact solver and by both oracles,
//! so end-to-end claims can be checked against ground truth.

use thiserror::Error;

use crate::mdp::{validate_mdp, FiniteMdp, PolicyTable};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("unknown environment '{name}'; available: {available}")]
    UnknownEnv { name: String, available: String },
    #[error("invalid parameter for {env}: {message}")]
    BadParams { env: &'static str, message: String },
}

/// Names accepted by [`builtin_env`].
pub const ENV_NAMES: [&str; 3] = ["r_chain", "key_door_grid", "noisy_cliff"];

/// Optional knobs for the built-in environments; `Default` gives the
/// documented baseline of each.
#[derive(Debug, Clone)]
pub struct EnvParams {
    /// Number of door states in `key_door_grid`.
    pub key_count: usize,
    /// Corridor width of `noisy_cliff`.
    pub cliff_width: usize,
    /// Probability that a `noisy_cliff` move slips sideways.
    pub slip: f64,
    /// Discount override; `None` keeps the environment's default.
    pub discount: Option<f64>,
}

impl Default for EnvParams {
    fn default() -> Self {
        EnvParams {
            key_count: 2,
            cliff_width: 6,
            slip: 0.1,
            discount: None,
        }
    }
}

/// A named environment plus its designated behavior policy.
#[derive(Debug, Clone)]
pub struct BuiltinEnv {
    pub name: String,
    pub mdp: FiniteMdp,
    pub behavior: PolicyTable,
}

/// Looks an environment up by name.
pub fn builtin_env(name: &str, params: &EnvParams) -> Result<BuiltinEnv, EnvError> {
    let (mdp, behavior) = match name {
        "r_chain" => r_chain(),
        "key_door_grid" => key_door_grid(params.key_count, params.discount.unwrap_or(0.99))?,
        "noisy_cliff" => noisy_cliff(
            params.cliff_width,
            params.slip,
            params.discount.unwrap_or(0.99),
        )?,
        other => {
            return Err(EnvError::UnknownEnv {
                name: other.to_string(),
                available: ENV_NAMES.join(", "),
            })
        }
    };
    debug_assert!(validate_mdp(&mdp).is_ok());
    Ok(BuiltinEnv {
        name: name.to_string(),
        mdp,
        behavior,
    })
}

/// The canonical two-state chain. States `{0, 1}`, actions `{0 = L, 1 = R}`:
/// from state 0, `R` moves to state 1 with reward 1 and `L` stays with
/// reward 0; from state 1 both actions stay, `R` paying 1 and `L` paying 0.
/// γ = 1/2, start in state 0, behavior policy always `L`. Everything about
/// this chain is computable by hand, which is exactly why it exists.
pub fn r_chain() -> (FiniteMdp, PolicyTable) {
    let reward = vec![
        0.0, 1.0, // s0: L, R
        0.0, 1.0, // s1: L, R
    ];
    let transition = vec![
        1.0, 0.0, // (s0, L) -> s0
        0.0, 1.0, // (s0, R) -> s1
        0.0, 1.0, // (s1, L) -> s1
        0.0, 1.0, // (s1, R) -> s1
    ];
    let mdp = FiniteMdp::new(2, 2, reward, transition, vec![1.0, 0.0], 0.5);
    let mu = PolicyTable::deterministic(2, 2, &[0, 0]);
    (mdp, mu)
}

/// Index of the goal cell in `key_door_grid(k)`.
pub fn key_door_goal(key_count: usize) -> usize {
    2 * key_count
}

/// A corridor of `k` locked doors. Cells alternate hallway `H_i = 2i` and
/// door `D_i = 2i + 1`, ending at an absorbing goal `G = 2k` that pays 1
/// per step. Action 0 walks forward in hallways but bounces off doors;
/// action 1 opens a door but is a wasted stand-still in hallways. The
/// behavior policy always takes action 0, so it walks up to the first door
/// and bounces forever: reaching the goal requires deviating from it at
/// exactly the `k` door states, and any budget below `k` provably cannot
/// reach the goal.
pub fn key_door_grid(
    key_count: usize,
    discount: f64,
) -> Result<(FiniteMdp, PolicyTable), EnvError> {
    if key_count == 0 {
        return Err(EnvError::BadParams {
            env: "key_door_grid",
            message: "key_count must be at least 1".to_string(),
        });
    }
    if !(0.0..1.0).contains(&discount) {
        return Err(EnvError::BadParams {
            env: "key_door_grid",
            message: format!("discount must be in [0, 1), got {discount}"),
        });
    }
    let num_states = 2 * key_count + 1;
    let goal = key_door_goal(key_count);
    let num_actions = 2;
    let mut reward = vec![0.0; num_states * num_actions];
    let mut transition = vec![0.0; num_states * num_actions * num_states];
    let mut set = |s: usize, a: usize, s_next: usize| {
        transition[(s * num_actions + a) * num_states + s_next] = 1.0;
    };
    for i in 0..key_count {
        let hall = 2 * i;
        let door = 2 * i + 1;
        set(hall, 0, door); // walk forward
        set(hall, 1, hall); // fiddle with a key where there is no door
        set(door, 0, door); // bounce
        set(door, 1, door + 1); // unlock and pass
    }
    set(goal, 0, goal);
    set(goal, 1, goal);
    reward[goal * num_actions] = 1.0;
    reward[goal * num_actions + 1] = 1.0;
    let mut initial = vec![0.0; num_states];
    initial[0] = 1.0;
    let mdp = FiniteMdp::new(
        num_states,
        num_actions,
        reward,
        transition,
        initial,
        discount,
    );
    let mu = PolicyTable::deterministic(num_states, num_actions, &vec![0; num_states]);
    Ok((mdp, mu))
}

/// Cell indexing for `noisy_cliff`: three rows of `width` cells,
/// `state = row * width + col`, row 2 at the bottom.
pub fn cliff_state(width: usize, row: usize, col: usize) -> usize {
    row * width + col
}

/// A 3×`width` gridworld with a cliff along the bottom edge. Start is the
/// bottom-left cell, goal the bottom-right (absorbing, reward 0); every
/// other action costs −1 and any transition that would land on a cliff
/// cell pays an extra −19 and teleports back to the start. Moves slip
/// sideways with probability `slip`. The behavior policy prefers the long
/// safe route over the top row, mixed with 20% uniform noise.
pub fn noisy_cliff(
    width: usize,
    slip: f64,
    discount: f64,
) -> Result<(FiniteMdp, PolicyTable), EnvError> {
    if width < 3 {
        return Err(EnvError::BadParams {
            env: "noisy_cliff",
            message: format!("width must be at least 3, got {width}"),
        });
    }
    if !(0.0..=1.0).contains(&slip) {
        return Err(EnvError::BadParams {
            env: "noisy_cliff",
            message: format!("slip must be in [0, 1], got {slip}"),
        });
    }
    if !(0.0..1.0).contains(&discount) {
        return Err(EnvError::BadParams {
            env: "noisy_cliff",
            message: format!("discount must be in [0, 1), got {discount}"),
        });
    }
    let rows = 3;
    let num_states = rows * width;
    let num_actions = 4; // 0=up 1=down 2=left 3=right
    let start = cliff_state(width, 2, 0);
    let goal = cliff_state(width, 2, width - 1);
    let is_cliff = |s: usize| {
        let (row, col) = (s / width, s % width);
        row == 2 && col > 0 && col < width - 1
    };
    let step_cell = |s: usize, a: usize| -> usize {
        let (row, col) = (s / width, s % width);
        let (nr, nc) = match a {
            0 => (row.wrapping_sub(1), col),
            1 => (row + 1, col),
            2 => (row, col.wrapping_sub(1)),
            _ => (row, col + 1),
        };
        if nr >= rows || nc >= width {
            s // bumped the wall
        } else {
            cliff_state(width, nr, nc)
        }
    };
    let mut reward = vec![0.0; num_states * num_actions];
    let mut transition = vec![0.0; num_states * num_actions * num_states];
    for s in 0..num_states {
        for a in 0..num_actions {
            let idx = s * num_actions + a;
            if s == goal {
                transition[idx * num_states + goal] = 1.0;
                continue;
            }
            // Intended move plus sideways slips.
            let perpendicular: [usize; 2] = if a < 2 { [2, 3] } else { [0, 1] };
            let outcomes = [
                (a, 1.0 - slip),
                (perpendicular[0], slip / 2.0),
                (perpendicular[1], slip / 2.0),
            ];
            let mut r = -1.0;
            for (dir, p) in outcomes {
                if p == 0.0 {
                    continue;
                }
                let landing = step_cell(s, dir);
                if is_cliff(landing) {
                    r += p * -19.0;
                    transition[idx * num_states + start] += p;
                } else {
                    transition[idx * num_states + landing] += p;
                }
            }
            reward[idx] = r;
        }
    }
    let mut initial = vec![0.0; num_states];
    initial[start] = 1.0;
    let mdp = FiniteMdp::new(
        num_states,
        num_actions,
        reward,
        transition,
        initial,
        discount,
    );

    // Safe-route preference: climb to the top row, cross, then descend at
    // the far column.
    let preferred: Vec<usize> = (0..num_states)
        .map(|s| {
            let (row, col) = (s / width, s % width);
            if col == width - 1 {
                1 // down toward the goal
            } else if row == 0 {
                3 // cross along the top
            } else {
                0 // climb away from the cliff
            }
        })
        .collect();
    let mu = PolicyTable::deterministic(num_states, num_actions, &preferred).mix_with_uniform(0.2);
    Ok((mdp, mu))
}
