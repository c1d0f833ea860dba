//! Lossless plain-text serialization for MDPs, budgeted tables, and
//! policies.
//!
//! Each document is line-oriented: a `<kind> v1` tag, named dimension
//! lines, then named sections of whitespace-separated numbers in row-major
//! order. Floats are written with 17 significant digits in scientific
//! notation, which is enough for `f64` to round-trip bit-exactly. The
//! formats are pinned in `docs/FORMATS.md`.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::dp::BudgetedQ;
use crate::fitted::SoftPolicyParams;
use crate::mdp::{FiniteMdp, PolicyTable};

#[derive(Debug, Error)]
pub enum TextIoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.17e}")
}

struct Writer {
    out: String,
}

impl Writer {
    fn new(kind: &str) -> Self {
        Writer {
            out: format!("{kind} v1\n"),
        }
    }

    fn field(&mut self, name: &str, value: impl std::fmt::Display) {
        self.out.push_str(&format!("{name} {value}\n"));
    }

    fn section(&mut self, name: &str, values: &[f64], per_line: usize) {
        self.out.push_str(name);
        self.out.push('\n');
        for chunk in values.chunks(per_line.max(1)) {
            let line: Vec<String> = chunk.iter().map(|&v| fmt_f64(v)).collect();
            self.out.push_str(&line.join(" "));
            self.out.push('\n');
        }
    }

    fn finish(mut self, path: &Path) -> Result<(), TextIoError> {
        self.out.push_str("end\n");
        fs::write(path, self.out).map_err(|source| TextIoError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

struct Reader<'a> {
    lines: Vec<&'a str>,
    cursor: usize,
}

impl<'a> Reader<'a> {
    fn new(text: &'a str) -> Self {
        Reader {
            lines: text.lines().collect(),
            cursor: 0,
        }
    }

    fn line_no(&self) -> usize {
        self.cursor // 1-based number of the line just consumed
    }

    fn next_line(&mut self) -> Result<&'a str, TextIoError> {
        while self.cursor < self.lines.len() {
            let line = self.lines[self.cursor];
            self.cursor += 1;
            if !line.trim().is_empty() {
                return Ok(line.trim());
            }
        }
        Err(TextIoError::Parse {
            line: self.cursor + 1,
            message: "unexpected end of file".to_string(),
        })
    }

    fn expect_tag(&mut self, kind: &str) -> Result<(), TextIoError> {
        let line = self.next_line()?;
        if line != format!("{kind} v1") {
            return Err(TextIoError::Parse {
                line: self.line_no(),
                message: format!("expected '{kind} v1', got '{line}'"),
            });
        }
        Ok(())
    }

    fn named_value(&mut self, name: &str) -> Result<&'a str, TextIoError> {
        let line = self.next_line()?;
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(key), Some(value), None) if key == name => Ok(value),
            _ => Err(TextIoError::Parse {
                line: self.line_no(),
                message: format!("expected '{name} <value>', got '{line}'"),
            }),
        }
    }

    fn named_usize(&mut self, name: &str) -> Result<usize, TextIoError> {
        let raw = self.named_value(name)?;
        let line = self.line_no();
        raw.parse().map_err(|_| TextIoError::Parse {
            line,
            message: format!("cannot parse {name} from '{raw}'"),
        })
    }

    fn named_f64(&mut self, name: &str) -> Result<f64, TextIoError> {
        let raw = self.named_value(name)?;
        let line = self.line_no();
        raw.parse().map_err(|_| TextIoError::Parse {
            line,
            message: format!("cannot parse {name} from '{raw}'"),
        })
    }

    fn section(&mut self, name: &str, count: usize) -> Result<Vec<f64>, TextIoError> {
        let header = self.next_line()?;
        if header != name {
            return Err(TextIoError::Parse {
                line: self.line_no(),
                message: format!("expected section '{name}', got '{header}'"),
            });
        }
        let mut values = Vec::with_capacity(count);
        while values.len() < count {
            let line = self.next_line()?;
            for token in line.split_whitespace() {
                let v: f64 = token.parse().map_err(|_| TextIoError::Parse {
                    line: self.line_no(),
                    message: format!("cannot parse number '{token}' in section '{name}'"),
                })?;
                values.push(v);
            }
        }
        if values.len() != count {
            return Err(TextIoError::Parse {
                line: self.line_no(),
                message: format!(
                    "section '{name}' holds {} values, expected {count}",
                    values.len()
                ),
            });
        }
        Ok(values)
    }

    fn expect_end(&mut self) -> Result<(), TextIoError> {
        let line = self.next_line()?;
        if line != "end" {
            return Err(TextIoError::Parse {
                line: self.line_no(),
                message: format!("expected 'end', got '{line}'"),
            });
        }
        Ok(())
    }
}

fn read_text(path: &Path) -> Result<String, TextIoError> {
    fs::read_to_string(path).map_err(|source| TextIoError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes an MDP document: dimensions and discount, then `reward`
/// (`S·A` values), `transition` (`S·A·S` values), and `initial_dist`.
pub fn write_mdp(mdp: &FiniteMdp, path: &Path) -> Result<(), TextIoError> {
    let mut w = Writer::new("mdp");
    w.field("num_states", mdp.num_states());
    w.field("num_actions", mdp.num_actions());
    w.field("discount", fmt_f64(mdp.discount()));
    w.section("reward", mdp.reward_table(), mdp.num_actions());
    w.section("transition", mdp.transition_table(), mdp.num_states());
    w.section("initial_dist", mdp.initial_dist(), mdp.num_states());
    w.finish(path)
}

pub fn read_mdp(path: &Path) -> Result<FiniteMdp, TextIoError> {
    let text = read_text(path)?;
    let mut r = Reader::new(&text);
    r.expect_tag("mdp")?;
    let num_states = r.named_usize("num_states")?;
    let num_actions = r.named_usize("num_actions")?;
    let discount = r.named_f64("discount")?;
    let reward = r.section("reward", num_states * num_actions)?;
    let transition = r.section("transition", num_states * num_actions * num_states)?;
    let initial = r.section("initial_dist", num_states)?;
    r.expect_end()?;
    Ok(FiniteMdp::new(
        num_states,
        num_actions,
        reward,
        transition,
        initial,
        discount,
    ))
}

fn write_table3(
    kind: &str,
    num_states: usize,
    num_actions: usize,
    max_budget: usize,
    values: &[f64],
    path: &Path,
) -> Result<(), TextIoError> {
    let mut w = Writer::new(kind);
    w.field("num_states", num_states);
    w.field("num_actions", num_actions);
    w.field("max_budget", max_budget);
    w.section("values", values, num_actions);
    w.finish(path)
}

fn read_table3(kind: &str, path: &Path) -> Result<(usize, usize, usize, Vec<f64>), TextIoError> {
    let text = read_text(path)?;
    let mut r = Reader::new(&text);
    r.expect_tag(kind)?;
    let num_states = r.named_usize("num_states")?;
    let num_actions = r.named_usize("num_actions")?;
    let max_budget = r.named_usize("max_budget")?;
    let values = r.section("values", num_states * (max_budget + 1) * num_actions)?;
    r.expect_end()?;
    Ok((num_states, num_actions, max_budget, values))
}

/// Writes a budgeted Q table (`budgeted_q` document, values in
/// `(s, b, a)` row-major order).
pub fn write_budgeted_q(q: &BudgetedQ, path: &Path) -> Result<(), TextIoError> {
    write_table3(
        "budgeted_q",
        q.num_states(),
        q.num_actions(),
        q.max_budget(),
        q.values(),
        path,
    )
}

pub fn read_budgeted_q(path: &Path) -> Result<BudgetedQ, TextIoError> {
    let (s, a, b, values) = read_table3("budgeted_q", path)?;
    Ok(BudgetedQ::from_values(s, a, b, values))
}

/// Writes softmax policy logits (`logits` document, same layout as the
/// budgeted Q table).
pub fn write_logits(policy: &SoftPolicyParams, path: &Path) -> Result<(), TextIoError> {
    write_table3(
        "logits",
        policy.num_states(),
        policy.num_actions(),
        policy.max_budget(),
        policy.logits(),
        path,
    )
}

pub fn read_logits(path: &Path) -> Result<SoftPolicyParams, TextIoError> {
    let (s, a, b, values) = read_table3("logits", path)?;
    Ok(SoftPolicyParams::from_logits(s, a, b, values))
}

/// Writes a budget-free policy (`policy` document, one probability row per
/// state).
pub fn write_policy(policy: &PolicyTable, path: &Path) -> Result<(), TextIoError> {
    let mut w = Writer::new("policy");
    w.field("num_states", policy.num_states());
    w.field("num_actions", policy.num_actions());
    w.section("probs", policy.rows(), policy.num_actions());
    w.finish(path)
}

pub fn read_policy(path: &Path) -> Result<PolicyTable, TextIoError> {
    let text = read_text(path)?;
    let mut r = Reader::new(&text);
    r.expect_tag("policy")?;
    let num_states = r.named_usize("num_states")?;
    let num_actions = r.named_usize("num_actions")?;
    let probs = r.section("probs", num_states * num_actions)?;
    r.expect_end()?;
    Ok(PolicyTable::new(num_states, num_actions, probs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{noisy_cliff, r_chain};

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("bcol_textio_test");
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn mdp_round_trip_is_bit_exact() {
        let (mdp, _) = noisy_cliff(6, 0.1, 0.99).unwrap();
        let path = tmp("cliff.mdp");
        write_mdp(&mdp, &path).unwrap();
        let back = read_mdp(&path).unwrap();
        assert_eq!(mdp, back);
    }

    #[test]
    fn budgeted_q_round_trip() {
        let mut q = BudgetedQ::zeros(3, 2, 2);
        for (i, v) in q.values_mut().iter_mut().enumerate() {
            *v = (i as f64 + 0.123_456_789).sin() * 1e3;
        }
        let path = tmp("table.q");
        write_budgeted_q(&q, &path).unwrap();
        assert_eq!(read_budgeted_q(&path).unwrap(), q);
    }

    #[test]
    fn policy_round_trip() {
        let (_, mu) = r_chain();
        let path = tmp("mu.policy");
        write_policy(&mu, &path).unwrap();
        assert_eq!(read_policy(&path).unwrap(), mu);
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let (mdp, _) = r_chain();
        let path = tmp("kind.mdp");
        write_mdp(&mdp, &path).unwrap();
        let err = read_budgeted_q(&path).unwrap_err();
        assert!(err.to_string().contains("expected 'budgeted_q v1'"));
    }

    #[test]
    fn short_section_names_its_line() {
        let path = tmp("short.q");
        fs::write(
            &path,
            "budgeted_q v1\nnum_states 2\nnum_actions 2\nmax_budget 0\nvalues\n1.0 2.0\nend\n",
        )
        .unwrap();
        match read_budgeted_q(&path).unwrap_err() {
            TextIoError::Parse { line, .. } => assert_eq!(line, 7),
            other => panic!("unexpected {other:?}"),
        }
    }
}
