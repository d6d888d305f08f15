//! Ordered node sequence, key storage and the two boundary primitives.
//!
//! Every node owns a half-open range `[lo, hi)` of the 64-bit key domain.
//! Ranges are contiguous left to right and together cover `[0, 2^64)`.
//! Boundaries are stored as `u128` so the domain end is representable.

use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::directory::LoadIndex;
use crate::error::{Error, Result};

pub type Key = u64;

/// One past the largest key.
pub const DOMAIN_END: u128 = 1u128 << 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "N{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct KeyRange {
    pub lo: u128,
    pub hi: u128,
}

impl KeyRange {
    pub fn new(lo: u128, hi: u128) -> Self {
        debug_assert!(lo <= hi);
        KeyRange { lo, hi }
    }

    pub fn contains(&self, key: Key) -> bool {
        let k = key as u128;
        self.lo <= k && k < self.hi
    }

    pub fn is_empty(&self) -> bool {
        self.lo == self.hi
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Node {
    pub id: NodeId,
    pub keys: BTreeSet<Key>,
    pub range: KeyRange,
}

impl Node {
    pub fn load(&self) -> u64 {
        self.keys.len() as u64
    }
}

/// Effect of a primitive on the partition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Transfer {
    pub keys_moved: u64,
    pub partition_changes: u32,
}

/// Plain-data view of a state, used for structural comparison.
pub type Snapshot = Vec<(NodeId, u128, u128, Vec<Key>)>;

#[derive(Clone, Debug)]
pub struct SystemState {
    nodes: Vec<Node>,
    index: LoadIndex,
    total: u64,
}

impl PartialEq for SystemState {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
    }
}

impl Eq for SystemState {}

impl SystemState {
    /// Seeds `n` nodes with `c0` keys each, one key per equal-width slot of
    /// the domain (jittered by `seed`). Boundaries sit between the largest
    /// key of one node and the smallest key of the next.
    pub fn init(n: usize, c0: u64, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!("need at least 2 nodes, got {n}")));
        }
        if c0 < 1 {
            return Err(Error::Config("c0 must be at least 1".into()));
        }
        let total = (n as u128) * (c0 as u128);
        let step = DOMAIN_END / total;
        if step == 0 {
            return Err(Error::Config("too many initial keys for the domain".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keys: Vec<Key> = (0..total)
            .map(|slot| (slot * step + rng.random_range(0..step)) as Key)
            .collect();

        let per_node = c0 as usize;
        let mut nodes = Vec::with_capacity(n);
        let mut lo = 0u128;
        for i in 0..n {
            let chunk = &keys[i * per_node..(i + 1) * per_node];
            let hi = if i + 1 == n {
                DOMAIN_END
            } else {
                let last = *chunk.last().unwrap() as u128;
                let next = keys[(i + 1) * per_node] as u128;
                last + (next - last).div_ceil(2)
            };
            nodes.push(Node {
                id: NodeId(i as u32),
                keys: chunk.iter().copied().collect(),
                range: KeyRange::new(lo, hi),
            });
            lo = hi;
        }
        Ok(Self::from_nodes(nodes))
    }

    /// Builds a state from explicit nodes without validating them.
    pub fn from_nodes(nodes: Vec<Node>) -> Self {
        let loads: Vec<u64> = nodes.iter().map(Node::load).collect();
        let total = loads.iter().sum();
        SystemState {
            index: LoadIndex::new(&loads),
            nodes,
            total,
        }
    }

    /// Builds a state whose nodes hold the given sorted key lists and whose
    /// boundaries sit at the smallest key of each node after the first.
    /// Nodes without keys get empty ranges at the running boundary.
    pub fn from_key_lists(lists: &[Vec<Key>]) -> Result<Self> {
        if lists.len() < 2 {
            return Err(Error::Config("need at least 2 nodes".into()));
        }
        let mut nodes = Vec::with_capacity(lists.len());
        let mut lo = 0u128;
        for (i, list) in lists.iter().enumerate() {
            let hi = if i + 1 == lists.len() {
                DOMAIN_END
            } else {
                lists[i + 1..]
                    .iter()
                    .find_map(|l| l.first().map(|&k| k as u128))
                    .unwrap_or(DOMAIN_END)
                    .max(lo)
            };
            nodes.push(Node {
                id: NodeId(i as u32),
                keys: list.iter().copied().collect(),
                range: KeyRange::new(lo, hi),
            });
            lo = hi;
        }
        let state = Self::from_nodes(nodes);
        let report = state.validate();
        if !report.is_empty() {
            return Err(Error::Config(report.join("; ")));
        }
        Ok(state)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, pos: usize) -> &Node {
        &self.nodes[pos]
    }

    pub fn load(&self, pos: usize) -> u64 {
        self.nodes[pos].load()
    }

    pub fn loads(&self) -> Vec<u64> {
        self.nodes.iter().map(Node::load).collect()
    }

    pub fn total_keys(&self) -> u64 {
        self.total
    }

    pub fn position_of(&self, id: NodeId) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    /// Leftmost minimum-loaded position and its load, without charging a
    /// directory query.
    pub fn min_load(&self) -> (usize, u64) {
        self.index.min()
    }

    /// Leftmost maximum-loaded position and its load, without charging.
    pub fn max_load(&self) -> (usize, u64) {
        self.index.max()
    }

    pub(crate) fn index(&self) -> &LoadIndex {
        &self.index
    }

    pub fn contains_key(&self, key: Key) -> bool {
        self.nodes[self.route(key)].keys.contains(&key)
    }

    pub fn snapshot(&self) -> Snapshot {
        self.nodes
            .iter()
            .map(|n| (n.id, n.range.lo, n.range.hi, n.keys.iter().copied().collect()))
            .collect()
    }

    /// Position of the node whose range contains `key`.
    pub fn route(&self, key: Key) -> usize {
        let k = key as u128;
        // last node whose lower bound is <= key; an empty range [x, x) is
        // always followed by a node starting at x, which wins.
        self.nodes.partition_point(|n| n.range.lo <= k) - 1
    }

    pub fn raw_insert(&mut self, key: Key) -> Result<usize> {
        let pos = self.route(key);
        if !self.nodes[pos].keys.insert(key) {
            return Err(Error::DuplicateKey(key));
        }
        self.total += 1;
        self.index.set(pos, self.nodes[pos].load());
        Ok(pos)
    }

    pub fn raw_delete(&mut self, key: Key) -> Result<usize> {
        let pos = self.route(key);
        if !self.nodes[pos].keys.remove(&key) {
            return Err(Error::KeyNotFound(key));
        }
        self.total -= 1;
        self.index.set(pos, self.nodes[pos].load());
        Ok(pos)
    }

    fn check_pos(&self, pos: usize) -> Result<()> {
        if pos >= self.nodes.len() {
            return Err(Error::Position {
                pos,
                len: self.nodes.len(),
            });
        }
        Ok(())
    }

    /// The adjacent position with the smaller load; ties go left.
    pub fn lightly_loaded_neighbor(&self, pos: usize) -> usize {
        let left = pos.checked_sub(1);
        let right = (pos + 1 < self.nodes.len()).then_some(pos + 1);
        match (left, right) {
            (Some(l), Some(r)) => {
                if self.load(r) < self.load(l) {
                    r
                } else {
                    l
                }
            }
            (Some(l), None) => l,
            (None, Some(r)) => r,
            (None, None) => unreachable!("a state always has at least two nodes"),
        }
    }

    /// Moves the `count` keys of `from` nearest to its boundary with `to`.
    ///
    /// The shared boundary becomes the smallest key on its upper side. When
    /// `from` gives up all of its keys it also gives up its whole range and
    /// is left with an empty range.
    pub fn nbr_adjust(&mut self, from: usize, to: usize, count: u64) -> Result<Transfer> {
        self.check_pos(from)?;
        self.check_pos(to)?;
        if from.abs_diff(to) != 1 {
            return Err(Error::Adjacency { from, to });
        }
        let available = self.load(from);
        if count > available {
            return Err(Error::Underflow {
                requested: count,
                available,
            });
        }
        let full = count == available;
        if count == 0 && (!full || self.nodes[from].range.is_empty()) {
            return Ok(Transfer::default());
        }

        let (left, right) = if from < to { (from, to) } else { (to, from) };
        let (head, tail) = self.nodes.split_at_mut(right);
        let (l, r) = (&mut head[left], &mut tail[0]);

        let boundary = if from < to {
            // upper keys of the left node move right
            if full {
                r.keys.append(&mut l.keys);
                l.range.lo
            } else {
                let split = *l.keys.iter().nth((available - count) as usize).unwrap();
                let mut moved = l.keys.split_off(&split);
                r.keys.append(&mut moved);
                split as u128
            }
        } else if full {
            l.keys.append(&mut r.keys);
            r.range.hi
        } else {
            // lower keys of the right node move left
            let split = *r.keys.iter().nth(count as usize).unwrap();
            let kept = r.keys.split_off(&split);
            let mut moved = std::mem::replace(&mut r.keys, kept);
            l.keys.append(&mut moved);
            split as u128
        };
        l.range.hi = boundary;
        r.range.lo = boundary;

        self.index.set(left, self.nodes[left].load());
        self.index.set(right, self.nodes[right].load());
        Ok(Transfer {
            keys_moved: count,
            partition_changes: 1,
        })
    }

    /// Relocates the empty node at `empty_pos` to sit immediately right of
    /// `target_pos`. The target keeps its lowest `keep_count` keys and the
    /// relocated node takes the rest together with the upper part of the
    /// target's range. Returns the relocated node's new position.
    pub fn reorder(&mut self, empty_pos: usize, target_pos: usize, keep_count: u64) -> Result<usize> {
        self.check_pos(empty_pos)?;
        self.check_pos(target_pos)?;
        let empty = &self.nodes[empty_pos];
        if empty_pos == target_pos || empty.load() != 0 || !empty.range.is_empty() {
            return Err(Error::NotEmpty(empty_pos));
        }
        let available = self.load(target_pos);
        if keep_count > available {
            return Err(Error::Underflow {
                requested: keep_count,
                available,
            });
        }

        let mut moving = self.nodes.remove(empty_pos);
        let target = if empty_pos < target_pos {
            target_pos - 1
        } else {
            target_pos
        };
        let t = &mut self.nodes[target];
        let split = if keep_count == available {
            t.range.hi
        } else {
            *t.keys.iter().nth(keep_count as usize).unwrap() as u128
        };
        moving.keys = if split >= DOMAIN_END {
            BTreeSet::new()
        } else {
            t.keys.split_off(&(split as Key))
        };
        moving.range = KeyRange::new(split, t.range.hi);
        t.range.hi = split;
        self.nodes.insert(target + 1, moving);

        self.index = LoadIndex::new(&self.loads());
        Ok(target + 1)
    }

    /// Lists every violated structural invariant; empty means valid.
    pub fn validate(&self) -> Vec<String> {
        let mut report = Vec::new();
        let n = self.nodes.len();
        if n < 2 {
            report.push(format!("node count {n} is below 2"));
        }
        if let Some(first) = self.nodes.first() {
            if first.range.lo != 0 {
                report.push(format!("first range starts at {} instead of 0", first.range.lo));
            }
        }
        if let Some(last) = self.nodes.last() {
            if last.range.hi != DOMAIN_END {
                report.push(format!("last range ends at {} instead of 2^64", last.range.hi));
            }
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.range.lo > node.range.hi {
                report.push(format!("position {i}: inverted range"));
            }
            if i + 1 < n && node.range.hi != self.nodes[i + 1].range.lo {
                report.push(format!(
                    "positions {i}/{}: boundary mismatch {} != {}",
                    i + 1,
                    node.range.hi,
                    self.nodes[i + 1].range.lo
                ));
            }
            // keys are sorted, so the extremes decide
            let extremes = [node.keys.first(), node.keys.last()];
            if let Some(k) = extremes.into_iter().flatten().find(|&&k| !node.range.contains(k)) {
                report.push(format!("position {i}: key {k} outside its range"));
            }
            if self.index.load(i) != node.load() {
                report.push(format!("position {i}: directory load is stale"));
            }
        }
        let sum: u64 = self.nodes.iter().map(Node::load).sum();
        if sum != self.total {
            report.push(format!("total {} != sum of loads {sum}", self.total));
        }
        let mut ids: Vec<NodeId> = self.nodes.iter().map(|n| n.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != n {
            report.push("duplicate node ids".into());
        }
        report
    }

    #[cfg(test)]
    pub(crate) fn nodes_mut(&mut self) -> &mut Vec<Node> {
        &mut self.nodes
    }
}

pub fn init_state(n: usize, c0: u64, seed: u64) -> Result<SystemState> {
    SystemState::init(n, c0, seed)
}

pub fn validate_partition(state: &SystemState) -> Vec<String> {
    state.validate()
}
