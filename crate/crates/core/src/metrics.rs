//! Event records, cost totals, the potential function and phase tracking.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::balancer::{BalanceKind, Direction, Roles};
use crate::config::{to_big, Rational};
use crate::error::{Error, Result};
use crate::keyspace::{Key, NodeId};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    /// Keys placed or moved, one unit each.
    pub data_movement: u64,
    pub partition_changes: u64,
    pub load_info_queries: u64,
    pub adjacent_contacts: u64,
    pub messages: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpKind {
    Insert,
    Delete,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OpKind::Insert => "insert",
            OpKind::Delete => "delete",
        })
    }
}

/// Load of a node involved in balancing, before and after the balancing
/// block (the triggering insert or delete is already applied in `before`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TouchedNode {
    pub id: NodeId,
    pub before: u64,
    pub after: u64,
}

/// One line of the trace: a key mutation together with its balancing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub kind: OpKind,
    pub key: Key,
    pub balance: BalanceKind,
    pub roles: Roles,
    pub direction: Direction,
    /// Keys moved by balancing, excluding the inserted or deleted key.
    pub keys_moved: u64,
    pub queries: u32,
    pub partition_changes: u32,
    pub contacts: u32,
    pub messages: u64,
    pub pre_min: u64,
    pub pre_max: u64,
    pub min: u64,
    pub max: u64,
    /// Load of the mutated node before the mutation and after balancing.
    pub load_u_pre: u64,
    pub load_u: u64,
    pub touched: Vec<TouchedNode>,
    pub phase: u64,
    pub phase_transition: bool,
    pub phi_pre_num: Option<String>,
    pub phi_pre_den: Option<String>,
    pub phi_mid_num: Option<String>,
    pub phi_mid_den: Option<String>,
    pub phi_num: Option<String>,
    pub phi_den: Option<String>,
}

pub(crate) fn phi_parts(phi: &Option<BigRational>) -> (Option<String>, Option<String>) {
    match phi {
        Some(p) => (Some(p.numer().to_string()), Some(p.denom().to_string())),
        None => (None, None),
    }
}

fn parse_phi(num: &Option<String>, den: &Option<String>) -> Option<BigRational> {
    let num = BigInt::from_str(num.as_deref()?).ok()?;
    let den = BigInt::from_str(den.as_deref()?).ok()?;
    if den == BigInt::from(0) {
        return None;
    }
    Some(BigRational::new(num, den))
}

impl EventRecord {
    /// Potential before the mutation.
    pub fn phi_pre(&self) -> Option<BigRational> {
        parse_phi(&self.phi_pre_num, &self.phi_pre_den)
    }

    /// Potential after the mutation, before balancing.
    pub fn phi_mid(&self) -> Option<BigRational> {
        parse_phi(&self.phi_mid_num, &self.phi_mid_den)
    }

    /// Potential after balancing.
    pub fn phi(&self) -> Option<BigRational> {
        parse_phi(&self.phi_num, &self.phi_den)
    }

    pub fn touched_node(&self, id: NodeId) -> Option<&TouchedNode> {
        self.touched.iter().find(|t| t.id == id)
    }
}

/// `c * (sum of squared loads) / (average load)`, exactly.
pub fn potential(loads: &[u64], c: Rational) -> Result<BigRational> {
    let total: u64 = loads.iter().sum();
    if total == 0 {
        return Err(Error::EmptySystem);
    }
    let sum_sq: u128 = loads.iter().map(|&l| (l as u128) * (l as u128)).sum();
    Ok(to_big(c) * BigRational::new(BigInt::from(sum_sq) * BigInt::from(loads.len()), BigInt::from(total)))
}

/// Incrementally maintained potential.
#[derive(Clone, Debug)]
pub struct PotentialTracker {
    c: Rational,
    n: u64,
    sum_sq: u128,
    total: u64,
}

impl PotentialTracker {
    pub fn new(loads: &[u64], c: Rational) -> Self {
        PotentialTracker {
            c,
            n: loads.len() as u64,
            sum_sq: loads.iter().map(|&l| (l as u128) * (l as u128)).sum(),
            total: loads.iter().sum(),
        }
    }

    pub fn c(&self) -> Rational {
        self.c
    }

    pub fn update(&mut self, before: u64, after: u64) {
        self.sum_sq = self.sum_sq - (before as u128) * (before as u128) + (after as u128) * (after as u128);
        self.total = self.total - before + after;
    }

    pub fn phi(&self) -> Option<BigRational> {
        if self.total == 0 {
            return None;
        }
        Some(
            to_big(self.c)
                * BigRational::new(BigInt::from(self.sum_sq) * BigInt::from(self.n), BigInt::from(self.total)),
        )
    }
}

/// Splits a trace into maximal runs over which the minimum load does not
/// decrease. Phases are numbered from 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhaseTracker {
    pub phase: u64,
    pub phase_start_seq: u64,
    pub min_at_last_event: Option<u64>,
}

impl PhaseTracker {
    pub fn new(initial_min: Option<u64>) -> Self {
        PhaseTracker {
            phase: 1,
            phase_start_seq: 0,
            min_at_last_event: initial_min,
        }
    }

    /// Feeds the minimum after event `seq`; returns whether a new phase began.
    pub fn update(&mut self, new_min: u64, seq: u64) -> bool {
        let transition = matches!(self.min_at_last_event, Some(m) if new_min < m);
        if transition {
            self.phase += 1;
            self.phase_start_seq = seq;
        }
        self.min_at_last_event = Some(new_min);
        transition
    }
}

pub fn phase_update(tracker: &mut PhaseTracker, new_min: u64, seq: u64) -> bool {
    tracker.update(new_min, seq)
}

pub const SUMMARY_COLUMNS: &str = "ops,max_ratio,moved_per_op,msgs_per_op,partition_changes_per_op,phases";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub ops: u64,
    /// Largest `max / min` over events with `min >= 1`.
    pub max_ratio: f64,
    /// Minimum load at the event where `max_ratio` was observed.
    pub max_ratio_min: u64,
    pub moved_per_op: f64,
    pub msgs_per_op: f64,
    pub partition_changes_per_op: f64,
    pub phases: u64,
    pub inserts: u64,
    pub deletes: u64,
    pub min_balance: u64,
    pub split_max: u64,
    pub split_nbr: u64,
}

impl Summary {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{}",
            self.ops, self.max_ratio, self.moved_per_op, self.msgs_per_op, self.partition_changes_per_op, self.phases
        )
    }
}

#[derive(Clone, Debug, Default)]
struct SummaryAcc {
    ops: u64,
    best: Option<(u64, u64)>,
    moved: u64,
    messages: u64,
    partition_changes: u64,
    phases: u64,
    inserts: u64,
    deletes: u64,
    min_balance: u64,
    split_max: u64,
    split_nbr: u64,
}

impl SummaryAcc {
    fn add(&mut self, r: &EventRecord) {
        self.ops += 1;
        // data movement counts the mutated key itself
        self.moved += r.keys_moved + 1;
        self.messages += r.messages;
        self.partition_changes += r.partition_changes as u64;
        self.phases = self.phases.max(r.phase);
        match r.kind {
            OpKind::Insert => self.inserts += 1,
            OpKind::Delete => self.deletes += 1,
        }
        match r.balance {
            BalanceKind::None => {}
            BalanceKind::MinBalance => self.min_balance += 1,
            BalanceKind::SplitMax => self.split_max += 1,
            BalanceKind::SplitNbr => self.split_nbr += 1,
        }
        if r.min >= 1 {
            let better = match self.best {
                None => true,
                // max/min > bmax/bmin
                Some((bmax, bmin)) => (r.max as u128) * (bmin as u128) > (bmax as u128) * (r.min as u128),
            };
            if better {
                self.best = Some((r.max, r.min));
            }
        }
    }

    fn finish(&self) -> Result<Summary> {
        if self.ops == 0 {
            return Err(Error::EmptyLog);
        }
        let ops = self.ops as f64;
        let (max_ratio, max_ratio_min) = match self.best {
            Some((max, min)) => (max as f64 / min as f64, min),
            None => (f64::INFINITY, 0),
        };
        Ok(Summary {
            ops: self.ops,
            max_ratio,
            max_ratio_min,
            moved_per_op: self.moved as f64 / ops,
            msgs_per_op: self.messages as f64 / ops,
            partition_changes_per_op: self.partition_changes as f64 / ops,
            phases: self.phases,
            inserts: self.inserts,
            deletes: self.deletes,
            min_balance: self.min_balance,
            split_max: self.split_max,
            split_nbr: self.split_nbr,
        })
    }
}

pub fn summarize(log: &[EventRecord]) -> Result<Summary> {
    let mut acc = SummaryAcc::default();
    log.iter().for_each(|r| acc.add(r));
    acc.finish()
}

/// Append-only event log. Assigns phases and keeps running summary totals;
/// retaining the records themselves is optional for long runs.
#[derive(Clone, Debug)]
pub struct EventLog {
    records: Vec<EventRecord>,
    retain: bool,
    last_seq: u64,
    phases: PhaseTracker,
    acc: SummaryAcc,
}

impl EventLog {
    pub fn new(initial_min: Option<u64>, retain: bool) -> Self {
        EventLog {
            records: Vec::new(),
            retain,
            last_seq: 0,
            phases: PhaseTracker::new(initial_min),
            acc: SummaryAcc::default(),
        }
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn phase_tracker(&self) -> &PhaseTracker {
        &self.phases
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn take_records(&mut self) -> Vec<EventRecord> {
        std::mem::take(&mut self.records)
    }

    /// Validates ordering, stamps the phase, and appends.
    pub fn record_event(&mut self, mut record: EventRecord) -> Result<EventRecord> {
        if record.seq != self.last_seq + 1 {
            return Err(Error::TraceOrder {
                last: self.last_seq,
                got: record.seq,
            });
        }
        record.phase_transition = self.phases.update(record.min, record.seq);
        record.phase = self.phases.phase;
        self.last_seq = record.seq;
        self.acc.add(&record);
        if self.retain {
            self.records.push(record.clone());
        }
        Ok(record)
    }

    pub fn summary(&self) -> Result<Summary> {
        self.acc.finish()
    }
}

pub fn record_event(log: &mut EventLog, record: EventRecord) -> Result<EventRecord> {
    log.record_event(record)
}
