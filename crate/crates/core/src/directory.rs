//! Global min/max load queries and their cost.
//!
//! Loads are indexed by a segment tree over node positions, updated on every
//! mutation, so a query is exact and cheap. The cost charged for a query or a
//! partition change depends on [`DirectoryMode`]: a centralized server, or an
//! overlay where each global operation costs `ceil(log2 n)` messages.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::keyspace::SystemState;
use crate::metrics::CostLedger;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectoryMode {
    #[default]
    Centralized,
    Overlay,
}

impl FromStr for DirectoryMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "centralized" => Ok(DirectoryMode::Centralized),
            "overlay" | "overlay-simulated" => Ok(DirectoryMode::Overlay),
            other => Err(format!("unknown directory mode '{other}'")),
        }
    }
}

impl fmt::Display for DirectoryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DirectoryMode::Centralized => "centralized",
            DirectoryMode::Overlay => "overlay",
        })
    }
}

/// `ceil(log2 n)`, with `ceil_log2(1) == 0`.
pub fn ceil_log2(n: usize) -> u64 {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as u64
    }
}

impl DirectoryMode {
    /// Messages for one global min/max lookup.
    pub fn query_messages(self, n: usize) -> u64 {
        match self {
            DirectoryMode::Centralized => 0,
            DirectoryMode::Overlay => ceil_log2(n),
        }
    }

    /// Messages for propagating one boundary change.
    pub fn partition_change_messages(self, n: usize) -> u64 {
        match self {
            DirectoryMode::Centralized => 1,
            DirectoryMode::Overlay => ceil_log2(n),
        }
    }

    /// Messages for contacting one adjacent node.
    pub fn contact_messages(self) -> u64 {
        1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Extreme {
    load: u64,
    pos: usize,
}

/// Segment tree keeping the leftmost minimum and leftmost maximum load.
#[derive(Clone, Debug)]
pub struct LoadIndex {
    len: usize,
    size: usize,
    min: Vec<Extreme>,
    max: Vec<Extreme>,
}

const MIN_PAD: Extreme = Extreme { load: u64::MAX, pos: usize::MAX };
const MAX_PAD: Extreme = Extreme { load: 0, pos: usize::MAX };

impl LoadIndex {
    pub fn new(loads: &[u64]) -> Self {
        let size = loads.len().next_power_of_two().max(1);
        let mut min = vec![MIN_PAD; 2 * size];
        let mut max = vec![MAX_PAD; 2 * size];
        for (pos, &load) in loads.iter().enumerate() {
            min[size + pos] = Extreme { load, pos };
            max[size + pos] = Extreme { load, pos };
        }
        let mut index = LoadIndex { len: loads.len(), size, min, max };
        for i in (1..size).rev() {
            index.pull(i);
        }
        index
    }

    // Padding leaves sit right of every real leaf, so preferring the left
    // child on ties yields the leftmost extreme.
    fn pull(&mut self, i: usize) {
        let (l, r) = (self.min[2 * i], self.min[2 * i + 1]);
        self.min[i] = if r.load < l.load { r } else { l };
        let (l, r) = (self.max[2 * i], self.max[2 * i + 1]);
        self.max[i] = if r.load > l.load { r } else { l };
    }

    pub fn set(&mut self, pos: usize, load: u64) {
        let mut i = self.size + pos;
        self.min[i].load = load;
        self.max[i].load = load;
        i /= 2;
        while i >= 1 {
            self.pull(i);
            i /= 2;
        }
    }

    pub fn load(&self, pos: usize) -> u64 {
        self.min[self.size + pos].load
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Leftmost position with the minimum load.
    pub fn min(&self) -> (usize, u64) {
        let e = self.min[1];
        (e.pos, e.load)
    }

    /// Leftmost position with the maximum load.
    pub fn max(&self) -> (usize, u64) {
        let e = self.max[1];
        (e.pos, e.load)
    }
}

pub fn query_min(state: &SystemState, mode: DirectoryMode, ledger: &mut CostLedger) -> (usize, u64) {
    ledger.load_info_queries += 1;
    ledger.messages += mode.query_messages(state.len());
    state.index().min()
}

pub fn query_max(state: &SystemState, mode: DirectoryMode, ledger: &mut CostLedger) -> (usize, u64) {
    ledger.load_info_queries += 1;
    ledger.messages += mode.query_messages(state.len());
    state.index().max()
}

/// Records one partition change and returns the messages it cost.
pub fn charge_partition_change(ledger: &mut CostLedger, n: usize, mode: DirectoryMode) -> u64 {
    let msgs = mode.partition_change_messages(n);
    ledger.partition_changes += 1;
    ledger.messages += msgs;
    msgs
}

pub fn charge_contacts(ledger: &mut CostLedger, contacts: u64, mode: DirectoryMode) -> u64 {
    let msgs = contacts * mode.contact_messages();
    ledger.adjacent_contacts += contacts;
    ledger.messages += msgs;
    msgs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_min(loads: &[u64]) -> (usize, u64) {
        let m = *loads.iter().min().unwrap();
        (loads.iter().position(|&l| l == m).unwrap(), m)
    }

    fn linear_max(loads: &[u64]) -> (usize, u64) {
        let m = *loads.iter().max().unwrap();
        (loads.iter().position(|&l| l == m).unwrap(), m)
    }

    #[test]
    fn leftmost_ties() {
        assert_eq!(LoadIndex::new(&[3, 1, 1]).min(), (1, 1));
        assert_eq!(LoadIndex::new(&[5, 5]).min(), (0, 5));
        assert_eq!(LoadIndex::new(&[3, 9, 9]).max(), (1, 9));
        assert_eq!(LoadIndex::new(&[4, 4, 4]).max(), (0, 4));
        assert_eq!(LoadIndex::new(&[0, 0, 0]).max(), (0, 0));
    }

    #[test]
    fn log2_costs() {
        assert_eq!(ceil_log2(1024), 10);
        assert_eq!(ceil_log2(64), 6);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(3), 2);
        assert_eq!(ceil_log2(65), 7);
    }

    #[test]
    fn charges() {
        let mut ledger = CostLedger::default();
        assert_eq!(charge_partition_change(&mut ledger, 1000, DirectoryMode::Centralized), 1);
        assert_eq!(charge_partition_change(&mut ledger, 64, DirectoryMode::Overlay), 6);
        assert_eq!(charge_partition_change(&mut ledger, 2, DirectoryMode::Overlay), 1);
        assert_eq!(ledger.partition_changes, 3);
        assert_eq!(ledger.messages, 8);
    }

    #[test]
    fn query_charges_overlay() {
        let state = SystemState::init(1024, 1, 0).unwrap();
        let mut ledger = CostLedger::default();
        query_min(&state, DirectoryMode::Overlay, &mut ledger);
        assert_eq!(ledger.messages, 10);
        assert_eq!(ledger.load_info_queries, 1);
        let state = SystemState::init(64, 1, 0).unwrap();
        query_max(&state, DirectoryMode::Overlay, &mut ledger);
        assert_eq!(ledger.messages, 16);
        query_max(&state, DirectoryMode::Centralized, &mut ledger);
        assert_eq!(ledger.messages, 16);
        assert_eq!(ledger.load_info_queries, 3);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn matches_linear_scan(loads in prop::collection::vec(0u64..6, 1..40),
                                   updates in prop::collection::vec((any::<usize>(), 0u64..6), 0..40)) {
                let mut loads = loads;
                let mut index = LoadIndex::new(&loads);
                prop_assert_eq!(index.min(), linear_min(&loads));
                prop_assert_eq!(index.max(), linear_max(&loads));
                for (p, l) in updates {
                    let p = p % loads.len();
                    loads[p] = l;
                    index.set(p, l);
                    prop_assert_eq!(index.min(), linear_min(&loads));
                    prop_assert_eq!(index.max(), linear_max(&loads));
                }
            }
        }
    }
}
