use std::collections::HashSet;
use std::fmt::Write as _;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive, seeded};

/// Token id assignment for a 128-token vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLayout {
    pub vocab: u32,
    pub keys: Range<u32>,
    pub values: Range<u32>,
    pub pad: u32,
    pub sep: u32,
}

impl Default for TokenLayout {
    fn default() -> Self {
        Self { vocab: 128, keys: 0..64, values: 64..126, pad: 126, sep: 127 }
    }
}

impl TokenLayout {
    pub fn validate(&self) -> Result<()> {
        let inside = |r: &Range<u32>| r.start < r.end && r.end <= self.vocab;
        if !inside(&self.keys) || !inside(&self.values) {
            return Err(Error::Infeasible(format!(
                "token ranges {:?} and {:?} must be non-empty and inside a vocabulary of {}",
                self.keys, self.values, self.vocab
            )));
        }
        if self.keys.start < self.values.end && self.values.start < self.keys.end {
            return Err(Error::Infeasible(format!(
                "key range {:?} overlaps value range {:?}",
                self.keys, self.values
            )));
        }
        for (name, id) in [("pad", self.pad), ("separator", self.sep)] {
            if id >= self.vocab || self.keys.contains(&id) || self.values.contains(&id) {
                return Err(Error::Infeasible(format!("{name} id {id} collides with a token range")));
            }
        }
        if self.pad == self.sep {
            return Err(Error::Infeasible("pad and separator ids must differ".into()));
        }
        Ok(())
    }

    /// Ids a copy task may draw from: everything but pad and separator.
    fn content(&self) -> Vec<u32> {
        (0..self.vocab).filter(|&t| t != self.pad && t != self.sep).collect()
    }
}

/// Multi-query associative recall instance:
/// `[k₁ v₁ … kₙ vₙ PAD… SEP k_σ(1) … k_σ(n)]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MqarInstance {
    pub tokens: Vec<u32>,
    pub query_positions: Vec<usize>,
    pub targets: Vec<u32>,
    pub n_pairs: usize,
    pub seed: u64,
}

pub fn gen_mqar(n_pairs: usize, total_len: usize, layout: &TokenLayout, seed: u64) -> Result<MqarInstance> {
    layout.validate()?;
    if n_pairs == 0 {
        return Err(Error::Infeasible("need at least one pair".into()));
    }
    if n_pairs > layout.keys.len() {
        return Err(Error::Infeasible(format!(
            "{n_pairs} distinct keys requested from a range of {}",
            layout.keys.len()
        )));
    }
    let min_len = 3 * n_pairs + 1;
    if total_len < min_len {
        return Err(Error::Infeasible(format!("length {total_len} is below the minimum {min_len}")));
    }
    let mut rng = seeded(derive(seed, 0x3a4));
    let keys: Vec<u32> = layout.keys.clone().collect::<Vec<_>>().choose_multiple(&mut rng, n_pairs).copied().collect();
    let values: Vec<u32> = (0..n_pairs).map(|_| rng.gen_range(layout.values.clone())).collect();
    let mut perm: Vec<usize> = (0..n_pairs).collect();
    perm.shuffle(&mut rng);

    let mut tokens = Vec::with_capacity(total_len);
    for (k, v) in keys.iter().zip(&values) {
        tokens.extend([*k, *v]);
    }
    tokens.extend(std::iter::repeat_n(layout.pad, total_len - min_len));
    tokens.push(layout.sep);
    let start = tokens.len();
    tokens.extend(perm.iter().map(|&i| keys[i]));
    Ok(MqarInstance {
        tokens,
        query_positions: (start..start + n_pairs).collect(),
        targets: perm.iter().map(|&i| values[i]).collect(),
        n_pairs,
        seed,
    })
}

impl MqarInstance {
    pub fn pad_len(&self) -> usize {
        self.tokens.len() - (3 * self.n_pairs + 1)
    }

    /// Check the interleaved layout, key distinctness, the query permutation
    /// and target consistency.
    pub fn validate(&self, layout: &TokenLayout) -> Result<()> {
        let bad = |m: String| Err(Error::Infeasible(m));
        let n = self.n_pairs;
        if n == 0 || self.tokens.len() < 3 * n + 1 {
            return bad(format!("length {} cannot hold {n} pairs", self.tokens.len()));
        }
        let context = &self.tokens[..2 * n];
        let keys: Vec<u32> = context.iter().step_by(2).copied().collect();
        if !keys.iter().all(|k| layout.keys.contains(k)) {
            return bad("context key outside the key range".into());
        }
        if !context.iter().skip(1).step_by(2).all(|v| layout.values.contains(v)) {
            return bad("context value outside the value range".into());
        }
        if keys.iter().collect::<HashSet<_>>().len() != n {
            return bad("context keys are not distinct".into());
        }
        let sep = 2 * n + self.pad_len();
        if self.tokens[2 * n..sep].iter().any(|&t| t != layout.pad) || self.tokens[sep] != layout.sep {
            return bad("padding or separator misplaced".into());
        }
        let expected: Vec<usize> = (sep + 1..sep + 1 + n).collect();
        if self.query_positions != expected || self.targets.len() != n {
            return bad("query positions do not cover the query section".into());
        }
        let mut seen = HashSet::new();
        for (&pos, &target) in self.query_positions.iter().zip(&self.targets) {
            let q = self.tokens[pos];
            let Some(i) = keys.iter().position(|&k| k == q) else {
                return bad(format!("query {q} was never stored"));
            };
            if !seen.insert(i) {
                return bad(format!("key {q} queried twice"));
            }
            if context[2 * i + 1] != target {
                return bad(format!("target for key {q} does not match its stored value"));
            }
        }
        Ok(())
    }
}

/// Copy instance `[first half, second half, SEP]`; the answer is the second
/// half, emitted in the `half_len` slots following the separator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CopyInstance {
    pub tokens: Vec<u32>,
    pub targets: Vec<u32>,
    pub half_len: usize,
    pub seed: u64,
}

impl CopyInstance {
    pub const LAYOUT: &'static str = "first-half second-half SEP answer-slots";

    /// Positions of the answer slots, counted past the end of `tokens`.
    pub fn answer_positions(&self) -> Vec<usize> {
        let start = self.tokens.len();
        (start..start + self.half_len).collect()
    }
}

pub fn gen_copy(half_len: usize, layout: &TokenLayout, seed: u64) -> Result<CopyInstance> {
    layout.validate()?;
    if half_len == 0 {
        return Err(Error::Infeasible("copy needs a non-empty half".into()));
    }
    let content = layout.content();
    let mut rng = seeded(derive(seed, 0xc0b1));
    let mut tokens: Vec<u32> = (0..2 * half_len).map(|_| *content.choose(&mut rng).unwrap()).collect();
    let targets = tokens[half_len..].to_vec();
    tokens.push(layout.sep);
    Ok(CopyInstance { tokens, targets, half_len, seed })
}

/// One line per instance:
/// `kind<TAB>seed<TAB>n<TAB>tokens<TAB>query positions<TAB>targets`, with the
/// three lists space-separated.
pub fn to_line(kind: &str, seed: u64, n: usize, tokens: &[u32], positions: &[usize], targets: &[u32]) -> String {
    fn join<T: ToString>(xs: &[T]) -> String {
        xs.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
    }
    let mut s = String::new();
    let _ = write!(s, "{kind}\t{seed}\t{n}\t{}\t{}\t{}", join(tokens), join(positions), join(targets));
    s
}

impl MqarInstance {
    pub fn to_line(&self) -> String {
        to_line("mqar", self.seed, self.n_pairs, &self.tokens, &self.query_positions, &self.targets)
    }
}

impl CopyInstance {
    pub fn to_line(&self) -> String {
        to_line("copy", self.seed, self.half_len, &self.tokens, &self.answer_positions(), &self.targets)
    }
}

/// A parsed instance line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InstanceLine {
    Mqar(MqarInstance),
    Copy(CopyInstance),
}

pub fn parse_line(line: &str) -> Result<InstanceLine> {
    let fields: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').collect();
    if fields.len() != 6 {
        return Err(Error::Config(format!("expected 6 tab-separated fields, found {}", fields.len())));
    }
    fn list<T: std::str::FromStr>(field: &str, what: &str) -> Result<Vec<T>> {
        field
            .split_whitespace()
            .map(|x| x.parse().map_err(|_| Error::Config(format!("bad {what} entry '{x}'"))))
            .collect()
    }
    let seed = fields[1].parse().map_err(|_| Error::Config(format!("bad seed '{}'", fields[1])))?;
    let n = fields[2].parse().map_err(|_| Error::Config(format!("bad count '{}'", fields[2])))?;
    let tokens = list(fields[3], "token")?;
    let positions: Vec<usize> = list(fields[4], "position")?;
    let targets = list(fields[5], "target")?;
    match fields[0] {
        "mqar" => Ok(InstanceLine::Mqar(MqarInstance { tokens, query_positions: positions, targets, n_pairs: n, seed })),
        "copy" => {
            let inst = CopyInstance { tokens, targets, half_len: n, seed };
            if positions != inst.answer_positions() {
                return Err(Error::Config("copy answer positions do not follow the separator".into()));
            }
            Ok(InstanceLine::Copy(inst))
        }
        other => Err(Error::Config(format!("unknown instance kind '{other}'"))),
    }
}
