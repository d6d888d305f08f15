//! Seeded operation generators.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keyspace::{Key, SystemState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Op {
    Insert(Key),
    Delete(Key),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkloadKind {
    InsertOnly,
    #[default]
    Mixed,
    Adversarial,
}

impl FromStr for WorkloadKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "insert-only" => Ok(WorkloadKind::InsertOnly),
            "mixed" => Ok(WorkloadKind::Mixed),
            "adversarial" => Ok(WorkloadKind::Adversarial),
            other => Err(format!("unknown workload '{other}'")),
        }
    }
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WorkloadKind::InsertOnly => "insert-only",
            WorkloadKind::Mixed => "mixed",
            WorkloadKind::Adversarial => "adversarial",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeyDist {
    #[default]
    Uniform,
    /// With probability `weight`, draw from `[lo, hi)`; otherwise uniformly.
    HotRange { lo: Key, hi: Key, weight: f64 },
    /// Zipf-distributed bucket over `buckets` equal slices of the domain,
    /// uniform within the bucket.
    Zipf { s: f64, buckets: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub ops: u64,
    pub p_delete: f64,
    pub key_dist: KeyDist,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            kind: WorkloadKind::Mixed,
            ops: 1000,
            p_delete: 0.3,
            key_dist: KeyDist::Uniform,
            seed: 1,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.p_delete) {
            return Err(Error::Config(format!("p_delete {} outside [0, 1)", self.p_delete)));
        }
        match self.key_dist {
            KeyDist::Uniform => {}
            KeyDist::HotRange { lo, hi, weight } => {
                if lo >= hi {
                    return Err(Error::Config("hot range must satisfy lo < hi".into()));
                }
                if !(0.0..=1.0).contains(&weight) {
                    return Err(Error::Config("hot range weight outside [0, 1]".into()));
                }
            }
            KeyDist::Zipf { s, buckets } => {
                if s.is_nan() || s <= 0.0 || buckets < 1 {
                    return Err(Error::Config("zipf needs s > 0 and at least one bucket".into()));
                }
            }
        }
        Ok(())
    }
}

/// Pulls operations one at a time. The generator assumes every operation it
/// returns is applied, and tracks the stored key set accordingly.
#[derive(Clone, Debug)]
pub struct Generator {
    spec: WorkloadSpec,
    rng: ChaCha8Rng,
    present: Vec<Key>,
    slot: HashMap<Key, usize>,
    zipf: Option<Zipf<f64>>,
    emitted: u64,
}

impl Generator {
    pub fn new(spec: WorkloadSpec, state: &SystemState) -> Result<Self> {
        spec.validate()?;
        let present: Vec<Key> = state.nodes().iter().flat_map(|n| n.keys.iter().copied()).collect();
        let slot = present.iter().enumerate().map(|(i, &k)| (k, i)).collect();
        let zipf = match spec.key_dist {
            KeyDist::Zipf { s, buckets } => {
                Some(Zipf::new(buckets as f64, s).map_err(|e| Error::Config(format!("zipf: {e}")))?)
            }
            _ => None,
        };
        Ok(Generator {
            spec,
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            present,
            slot,
            zipf,
            emitted: 0,
        })
    }

    pub fn spec(&self) -> &WorkloadSpec {
        &self.spec
    }

    pub fn remaining(&self) -> u64 {
        self.spec.ops - self.emitted
    }

    /// The next operation, or `None` once `ops` operations were emitted.
    pub fn next_op(&mut self, state: &SystemState) -> Option<Op> {
        if self.emitted >= self.spec.ops {
            return None;
        }
        self.emitted += 1;
        let wants_delete = match self.spec.kind {
            WorkloadKind::InsertOnly => false,
            _ => self.spec.p_delete > 0.0 && self.rng.random_bool(self.spec.p_delete),
        };
        let op = if wants_delete {
            self.draw_delete(state).map(Op::Delete)
        } else {
            None
        };
        let op = op.unwrap_or_else(|| Op::Insert(self.draw_insert(state)));
        self.note(op);
        Some(op)
    }

    fn note(&mut self, op: Op) {
        match op {
            Op::Insert(k) => {
                self.slot.insert(k, self.present.len());
                self.present.push(k);
            }
            Op::Delete(k) => {
                let i = self.slot.remove(&k).expect("deleted key is present");
                self.present.swap_remove(i);
                if let Some(&moved) = self.present.get(i) {
                    self.slot.insert(moved, i);
                }
            }
        }
    }

    fn draw_delete(&mut self, state: &SystemState) -> Option<Key> {
        match self.spec.kind {
            WorkloadKind::Adversarial => {
                let (pos, load) = state.min_load();
                if load == 0 {
                    return None;
                }
                let i = self.rng.random_range(0..load as usize);
                state.node(pos).keys.iter().nth(i).copied()
            }
            _ => {
                if self.present.is_empty() {
                    return None;
                }
                Some(self.present[self.rng.random_range(0..self.present.len())])
            }
        }
    }

    fn draw_insert(&mut self, state: &SystemState) -> Key {
        if self.spec.kind == WorkloadKind::Adversarial {
            let (pos, _) = state.max_load();
            let range = state.node(pos).range;
            for _ in 0..64 {
                if range.is_empty() {
                    break;
                }
                let k = self.rng.random_range(range.lo..range.hi) as Key;
                if !self.slot.contains_key(&k) {
                    return k;
                }
            }
        }
        loop {
            let k = self.draw_key();
            if !self.slot.contains_key(&k) {
                return k;
            }
        }
    }

    fn draw_key(&mut self) -> Key {
        match self.spec.key_dist {
            KeyDist::Uniform => self.rng.random(),
            KeyDist::HotRange { lo, hi, weight } => {
                if self.rng.random_bool(weight) {
                    self.rng.random_range(lo..hi)
                } else {
                    self.rng.random()
                }
            }
            KeyDist::Zipf { buckets, .. } => {
                let rank = self.zipf.as_ref().unwrap().sample(&mut self.rng) as u64;
                let bucket = rank.clamp(1, buckets) - 1;
                let width = (u64::MAX / buckets).max(1);
                bucket.saturating_mul(width).saturating_add(self.rng.random_range(0..width))
            }
        }
    }
}

/// Materializes a whole operation sequence up front. Adversarial workloads
/// read the live state between operations and cannot be pre-generated.
pub fn generate(spec: WorkloadSpec, state: &SystemState) -> Result<Vec<Op>> {
    if spec.kind == WorkloadKind::Adversarial {
        return Err(Error::Config("adversarial workloads depend on the live state".into()));
    }
    let mut g = Generator::new(spec, state)?;
    let mut out = Vec::with_capacity(spec.ops as usize);
    while let Some(op) = g.next_op(state) {
        out.push(op);
    }
    Ok(out)
}
