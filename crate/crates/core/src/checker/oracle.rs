//! A deliberately naive reimplementation of the balancing rules, used to
//! cross-check the engine. Nodes are plain vectors and every query is a
//! linear scan.

use crate::balancer::{BalanceKind, Engine};
use crate::config::{at_most_fraction, exceeds, BalanceConfig, Rational};
use crate::directory::DirectoryMode;
use crate::error::{Error, Result};
use crate::keyspace::{Key, SystemState, DOMAIN_END};
use crate::workload::Op;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleNode {
    pub id: u32,
    pub lo: u128,
    pub hi: u128,
    /// Sorted ascending.
    pub keys: Vec<Key>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleState {
    pub nodes: Vec<OracleNode>,
}

impl OracleState {
    pub fn from_state(state: &SystemState) -> Self {
        OracleState {
            nodes: state
                .nodes()
                .iter()
                .map(|n| OracleNode {
                    id: n.id.0,
                    lo: n.range.lo,
                    hi: n.range.hi,
                    keys: n.keys.iter().copied().collect(),
                })
                .collect(),
        }
    }

    pub fn loads(&self) -> Vec<u64> {
        self.nodes.iter().map(|n| n.keys.len() as u64).collect()
    }

    fn load(&self, i: usize) -> u64 {
        self.nodes[i].keys.len() as u64
    }

    fn owner(&self, key: Key) -> usize {
        let k = key as u128;
        let mut found = 0;
        for (i, n) in self.nodes.iter().enumerate() {
            if n.lo <= k && k < n.hi {
                found = i;
            }
        }
        found
    }

    fn argmin(&self) -> usize {
        let mut best = 0;
        for i in 1..self.nodes.len() {
            if self.load(i) < self.load(best) {
                best = i;
            }
        }
        best
    }

    fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..self.nodes.len() {
            if self.load(i) > self.load(best) {
                best = i;
            }
        }
        best
    }

    fn lighter_neighbor(&self, i: usize) -> usize {
        if i == 0 {
            return 1;
        }
        if i + 1 == self.nodes.len() {
            return i - 1;
        }
        if self.load(i + 1) < self.load(i - 1) {
            i + 1
        } else {
            i - 1
        }
    }

    fn pos(&self, id: u32) -> usize {
        self.nodes.iter().position(|n| n.id == id).unwrap()
    }

    /// Moves `count` keys from `from` to the adjacent `to`.
    fn shift(&mut self, from: usize, to: usize, count: usize) {
        let all = count == self.nodes[from].keys.len();
        if count == 0 && !all {
            return;
        }
        if from < to {
            let cut = self.nodes[from].keys.len() - count;
            let moved = self.nodes[from].keys.split_off(cut);
            let boundary = if all { self.nodes[from].lo } else { moved[0] as u128 };
            self.nodes[to].keys.splice(0..0, moved);
            self.nodes[from].hi = boundary;
            self.nodes[to].lo = boundary;
        } else {
            let moved: Vec<Key> = self.nodes[from].keys.drain(..count).collect();
            let boundary = if all { self.nodes[from].hi } else { self.nodes[from].keys[0] as u128 };
            self.nodes[to].keys.extend(moved);
            self.nodes[to].hi = boundary;
            self.nodes[from].lo = boundary;
        }
    }

    /// Moves the empty node `empty` next to `target`, handing it all but the
    /// lowest `keep` keys of `target`.
    fn relocate(&mut self, empty: u32, target: u32, keep: usize) {
        let mut node = self.nodes.remove(self.pos(empty));
        let t = self.pos(target);
        let tail = self.nodes[t].keys.split_off(keep);
        let x = tail.first().map_or(self.nodes[t].hi, |&k| k as u128);
        node.lo = x;
        node.hi = self.nodes[t].hi;
        node.keys = tail;
        self.nodes[t].hi = x;
        self.nodes.insert(t + 1, node);
    }

    fn insert(&mut self, key: Key, config: &BalanceConfig) -> Result<BalanceKind> {
        let u = self.owner(key);
        match self.nodes[u].keys.binary_search(&key) {
            Ok(_) => return Err(Error::DuplicateKey(key)),
            Err(i) => self.nodes[u].keys.insert(i, key),
        }
        let v = self.argmin();
        let min = self.load(v);
        let lu = self.load(u);
        if !exceeds(lu, config.alpha, min) || lu < 2 {
            return Ok(BalanceKind::None);
        }
        let (uid, vid) = (self.nodes[u].id, self.nodes[v].id);
        let z = self.lighter_neighbor(v);
        self.shift(v, z, min as usize);
        let keep = self.nodes[self.pos(uid)].keys.len().div_ceil(2);
        self.relocate(vid, uid, keep);
        Ok(BalanceKind::MinBalance)
    }

    fn delete(&mut self, key: Key, config: &BalanceConfig) -> Result<BalanceKind> {
        let u = self.owner(key);
        let i = self.nodes[u].keys.binary_search(&key).map_err(|_| Error::KeyNotFound(key))?;
        self.nodes[u].keys.remove(i);
        let w = self.argmax();
        let max = self.load(w);
        let lu = self.load(u);
        if !at_most_fraction(lu, max, config.beta) {
            return Ok(BalanceKind::None);
        }
        let z = self.lighter_neighbor(u);
        let lz = self.load(z);
        if at_most_fraction(lz, 2 * max, config.beta) {
            if max < 2 {
                return Ok(BalanceKind::None);
            }
            let (uid, wid) = (self.nodes[u].id, self.nodes[w].id);
            self.shift(u, z, lu as usize);
            let keep = self.nodes[self.pos(wid)].keys.len().div_ceil(2);
            self.relocate(uid, wid, keep);
            Ok(BalanceKind::SplitMax)
        } else {
            let count = (lu + lz).div_ceil(2) - lu;
            self.shift(z, u, count as usize);
            Ok(BalanceKind::SplitNbr)
        }
    }

    pub fn apply(&mut self, op: Op, config: &BalanceConfig) -> Result<BalanceKind> {
        match op {
            Op::Insert(k) => self.insert(k, config),
            Op::Delete(k) => self.delete(k, config),
        }
    }

    /// Structural problems, checked independently of the engine's validator.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.nodes.first().map(|n| n.lo) != Some(0) || self.nodes.last().map(|n| n.hi) != Some(DOMAIN_END) {
            out.push("ranges do not span the domain".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if i + 1 < self.nodes.len() && n.hi != self.nodes[i + 1].lo {
                out.push(format!("gap after position {i}"));
            }
            if n.keys.windows(2).any(|w| w[0] >= w[1]) {
                out.push(format!("position {i}: keys unsorted"));
            }
            if n.keys.iter().any(|&k| (k as u128) < n.lo || (k as u128) >= n.hi) {
                out.push(format!("position {i}: key outside range"));
            }
        }
        out
    }
}

/// Replays `ops` on the naive model and returns the final state.
pub fn oracle_replay(initial: &SystemState, ops: &[Op], config: &BalanceConfig) -> Result<OracleState> {
    let mut state = OracleState::from_state(initial);
    for &op in ops {
        state.apply(op, config)?;
    }
    Ok(state)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Divergence {
    /// One-based index of the first operation after which the models differ.
    pub op_index: u64,
    pub op: Op,
    pub detail: String,
}

/// Runs the engine and the naive model side by side and reports the first
/// operation after which their node order, ranges, keys or balancing
/// decision differ.
pub fn replay_against_engine(initial: &SystemState, ops: &[Op], config: &BalanceConfig) -> Result<Option<Divergence>> {
    let mut engine = Engine::new(initial.clone(), *config, DirectoryMode::Centralized, Rational::from_integer(1), false);
    let mut oracle = OracleState::from_state(initial);
    for (i, &op) in ops.iter().enumerate() {
        let expected = oracle.apply(op, config)?;
        let record = match op {
            Op::Insert(k) => engine.insert(k)?,
            Op::Delete(k) => engine.delete(k)?,
        };
        let diverged = |detail: String| {
            Some(Divergence {
                op_index: i as u64 + 1,
                op,
                detail,
            })
        };
        if record.balance != expected {
            return Ok(diverged(format!("engine ran {:?}, oracle {:?}", record.balance, expected)));
        }
        let actual = OracleState::from_state(engine.state());
        if actual != oracle {
            let at = actual
                .nodes
                .iter()
                .zip(&oracle.nodes)
                .position(|(a, b)| a != b)
                .unwrap_or(0);
            return Ok(diverged(format!("states differ at position {at}")));
        }
        let problems = oracle.problems();
        if !problems.is_empty() {
            return Ok(diverged(problems.join("; ")));
        }
    }
    Ok(None)
}
