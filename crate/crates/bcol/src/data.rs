//! Offline datasets: generation under a logging policy, a line-based
//! persistent format, behavior-policy estimation, and coverage accounting.
//!
//! Episodes have a fixed horizon and no terminal states. An episode with
//! horizon `H` draws `H` actions and stores `H − 1` transitions
//! `(s, a, r, s', a')`: the final drawn action appears only as the `a'`
//! of the last transition, so every stored tuple is complete.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::mdp::{derive_seed, rollout, FiniteMdp, PolicyTable, StepChoice};

/// One logged SARSA tuple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub next_action: usize,
}

/// An offline dataset with its provenance and episode boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub env_name: String,
    pub seed: u64,
    pub num_states: usize,
    pub num_actions: usize,
    pub transitions: Vec<Transition>,
    /// `(start, len)` into `transitions`, one per episode. Episodes of
    /// horizon 1 contribute zero transitions but are still recorded.
    pub episodes: Vec<(usize, usize)>,
}

impl OfflineDataset {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn episode(&self, i: usize) -> &[Transition] {
        let (start, len) = self.episodes[i];
        &self.transitions[start..start + len]
    }

    /// Largest reward magnitude in the data; the only reward scale an
    /// offline consumer is allowed to know.
    pub fn reward_bound(&self) -> f64 {
        self.transitions
            .iter()
            .fold(0.0, |m, t| m.max(t.reward.abs()))
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed dataset line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dataset truncated: header promises {expected} transitions, last good line is {last_good_line}")]
    Truncated {
        expected: usize,
        last_good_line: usize,
    },
    #[error("dataset is empty")]
    Empty,
}

/// Draws `episodes` fixed-horizon episodes under the logging policy `mu`
/// and chains them into SARSA tuples. Per-episode seeds are derived from
/// `seed`, so generation is reproducible and episodes are independent.
pub fn generate_dataset(
    mdp: &FiniteMdp,
    mu: &PolicyTable,
    env_name: &str,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> OfflineDataset {
    assert!(episodes >= 1, "need at least one episode");
    assert!(horizon >= 1, "horizon must be at least 1");
    let mut transitions = Vec::with_capacity(episodes * horizon.saturating_sub(1));
    let mut bounds = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let tr = rollout(
            mdp,
            |s, _b, _t| StepChoice::follow(mu.row(s)),
            0,
            horizon,
            derive_seed(seed, ep as u64),
        )
        .expect("horizon checked above");
        let start = transitions.len();
        for w in tr.steps.windows(2) {
            transitions.push(Transition {
                state: w[0].state,
                action: w[0].action,
                reward: w[0].reward,
                next_state: w[1].state,
                next_action: w[1].action,
            });
        }
        bounds.push((start, transitions.len() - start));
    }
    OfflineDataset {
        env_name: env_name.to_string(),
        seed,
        num_states: mdp.num_states(),
        num_actions: mdp.num_actions(),
        transitions,
        episodes: bounds,
    }
}

/// A behavior-cloned policy estimate with its evidence.
#[derive(Debug, Clone)]
pub struct BehaviorEstimate {
    pub policy: PolicyTable,
    /// Action draws observed per state (transition `(s, a)` pairs plus the
    /// final `(s', a')` of each episode).
    pub state_counts: Vec<u64>,
    pub smoothing: f64,
}

/// Tabular maximum-likelihood behavior cloning with additive smoothing:
/// `μ̂(a|s) = (count(s,a) + κ) / (count(s) + κ·|A|)`, falling back to the
/// uniform distribution at states never visited.
pub fn estimate_behavior(
    dataset: &OfflineDataset,
    smoothing: f64,
) -> Result<BehaviorEstimate, DataError> {
    if dataset.is_empty() {
        return Err(DataError::Empty);
    }
    assert!(smoothing >= 0.0, "smoothing must be nonnegative");
    let (ns, na) = (dataset.num_states, dataset.num_actions);
    let mut counts = vec![0u64; ns * na];
    for t in &dataset.transitions {
        counts[t.state * na + t.action] += 1;
    }
    // The final drawn action of each episode is a real behavior draw too.
    for i in 0..dataset.episodes.len() {
        if let Some(last) = dataset.episode(i).last() {
            counts[last.next_state * na + last.next_action] += 1;
        }
    }
    let mut probs = vec![0.0; ns * na];
    let mut state_counts = vec![0u64; ns];
    for s in 0..ns {
        let total: u64 = counts[s * na..(s + 1) * na].iter().sum();
        state_counts[s] = total;
        let denom = total as f64 + smoothing * na as f64;
        for a in 0..na {
            probs[s * na + a] = if denom > 0.0 {
                (counts[s * na + a] as f64 + smoothing) / denom
            } else {
                1.0 / na as f64
            };
        }
    }
    Ok(BehaviorEstimate {
        policy: PolicyTable::new(ns, na, probs),
        state_counts,
        smoothing,
    })
}

/// Per-(state, action) visitation summary.
#[derive(Debug, Clone)]
pub struct CoverageReport {
    /// Visit counts indexed `s * A + a`; counts one entry per transition.
    pub counts: Vec<u64>,
    /// Fraction of the state-action space with at least one visit.
    pub covered_fraction: f64,
    pub total_transitions: usize,
}

pub fn coverage_report(dataset: &OfflineDataset, mdp: &FiniteMdp) -> CoverageReport {
    let na = mdp.num_actions();
    let mut counts = vec![0u64; mdp.num_states() * na];
    for t in &dataset.transitions {
        counts[t.state * na + t.action] += 1;
    }
    let covered = counts.iter().filter(|&&c| c > 0).count();
    CoverageReport {
        covered_fraction: covered as f64 / counts.len() as f64,
        counts,
        total_transitions: dataset.len(),
    }
}

/// Writes the dataset in the documented line format: one header line, then
/// one transition per line as `episode step s a r s_next a_next`. Rewards
/// use Rust's shortest round-trip decimal formatting, so reading the file
/// back reproduces every bit.
pub fn write_dataset(dataset: &OfflineDataset, path: &Path) -> Result<(), DataError> {
    let mut out = String::new();
    out.push_str(&format!(
        "dataset v1 env={} seed={} num_states={} num_actions={} episodes={} transitions={}\n",
        dataset.env_name,
        dataset.seed,
        dataset.num_states,
        dataset.num_actions,
        dataset.episodes.len(),
        dataset.transitions.len()
    ));
    for (ep, &(start, len)) in dataset.episodes.iter().enumerate() {
        for (step, t) in dataset.transitions[start..start + len].iter().enumerate() {
            out.push_str(&format!(
                "{ep} {step} {} {} {} {} {}\n",
                t.state, t.action, t.reward, t.next_state, t.next_action
            ));
        }
    }
    let mut file = fs::File::create(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(out.as_bytes())
        .map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })
}

fn parse_kv<'a>(field: &'a str, key: &str, line: usize) -> Result<&'a str, DataError> {
    field
        .strip_prefix(key)
        .and_then(|rest| rest.strip_prefix('='))
        .ok_or_else(|| DataError::Parse {
            line,
            message: format!("expected {key}=<value>, got '{field}'"),
        })
}

fn parse_num<T: std::str::FromStr>(text: &str, what: &str, line: usize) -> Result<T, DataError> {
    text.parse().map_err(|_| DataError::Parse {
        line,
        message: format!("cannot parse {what} from '{text}'"),
    })
}

/// Reads a dataset written by [`write_dataset`]. Malformed lines are
/// reported with their 1-based line number; a file shorter than its header
/// promises is reported with the last line that parsed cleanly.
pub fn read_dataset(path: &Path) -> Result<OfflineDataset, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(DataError::Parse {
        line: 1,
        message: "missing header".to_string(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 8 || fields[0] != "dataset" || fields[1] != "v1" {
        return Err(DataError::Parse {
            line: 1,
            message: "header must be 'dataset v1 env=.. seed=.. num_states=.. num_actions=.. episodes=.. transitions=..'"
                .to_string(),
        });
    }
    let env_name = parse_kv(fields[2], "env", 1)?.to_string();
    let seed = parse_num(parse_kv(fields[3], "seed", 1)?, "seed", 1)?;
    let num_states = parse_num(parse_kv(fields[4], "num_states", 1)?, "num_states", 1)?;
    let num_actions = parse_num(parse_kv(fields[5], "num_actions", 1)?, "num_actions", 1)?;
    let episode_count: usize = parse_num(parse_kv(fields[6], "episodes", 1)?, "episodes", 1)?;
    let expected: usize = parse_num(parse_kv(fields[7], "transitions", 1)?, "transitions", 1)?;

    let mut transitions = Vec::with_capacity(expected);
    let mut episode_ids = Vec::with_capacity(expected);
    let mut last_good_line = 1;
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 7 {
            return Err(DataError::Parse {
                line: line_no,
                message: format!("expected 7 fields, got {}", parts.len()),
            });
        }
        let ep: usize = parse_num(parts[0], "episode id", line_no)?;
        let step: usize = parse_num(parts[1], "step", line_no)?;
        let t = Transition {
            state: parse_num(parts[2], "state", line_no)?,
            action: parse_num(parts[3], "action", line_no)?,
            reward: parse_num(parts[4], "reward", line_no)?,
            next_state: parse_num(parts[5], "next state", line_no)?,
            next_action: parse_num(parts[6], "next action", line_no)?,
        };
        if t.state >= num_states || t.next_state >= num_states {
            return Err(DataError::Parse {
                line: line_no,
                message: "state index out of range".to_string(),
            });
        }
        if t.action >= num_actions || t.next_action >= num_actions {
            return Err(DataError::Parse {
                line: line_no,
                message: "action index out of range".to_string(),
            });
        }
        let _ = step;
        episode_ids.push(ep);
        transitions.push(t);
        last_good_line = line_no;
    }
    if transitions.len() != expected {
        return Err(DataError::Truncated {
            expected,
            last_good_line,
        });
    }
    // Rebuild episode bounds; episode ids are contiguous and ascending in
    // a well-formed file, but zero-length episodes leave gaps.
    let mut episodes = vec![(0usize, 0usize); episode_count];
    for (idx, &ep) in episode_ids.iter().enumerate() {
        if ep >= episode_count {
            return Err(DataError::Parse {
                line: idx + 2,
                message: format!("episode id {ep} out of range"),
            });
        }
        let (start, len) = &mut episodes[ep];
        if *len == 0 {
            *start = idx;
        }
        *len += 1;
    }
    // Fix starts of empty episodes to keep bounds well-formed.
    let mut cursor = 0;
    for bounds in episodes.iter_mut() {
        if bounds.1 == 0 {
            bounds.0 = cursor;
        } else {
            cursor = bounds.0 + bounds.1;
        }
    }
    Ok(OfflineDataset {
        env_name,
        seed,
        num_states,
        num_actions,
        transitions,
        episodes,
    })
}
