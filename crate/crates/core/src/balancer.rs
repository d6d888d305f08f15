//! Post-mutation balancing: MinBalance after inserts, Split after deletes.
//!
//! Both procedures consult the directory exactly once and compose at most one
//! `nbr_adjust` with at most one `reorder`; neither recurses.

use serde::{Deserialize, Serialize};

use crate::config::{at_most_fraction, exceeds, BalanceConfig, Rational};
use crate::directory::{self, DirectoryMode};
use crate::error::Result;
use crate::keyspace::{Key, NodeId, SystemState, Transfer};
use crate::metrics::{phi_parts, CostLedger, EventLog, EventRecord, OpKind, PotentialTracker, TouchedNode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BalanceKind {
    None,
    MinBalance,
    SplitMax,
    SplitNbr,
}

/// Side of the receiving node `z` that a full-load transfer came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "left")]
    Left,
    #[serde(rename = "right")]
    Right,
    #[serde(rename = "n/a")]
    NotApplicable,
}

impl Direction {
    fn of_transfer(donor_pos: usize, receiver_pos: usize) -> Self {
        if donor_pos < receiver_pos {
            Direction::Left
        } else {
            Direction::Right
        }
    }
}

/// Nodes playing a part in one balancing step: `u` the mutated node, `v`
/// the minimum-loaded node, `z` the lightly-loaded neighbor that gives or
/// receives keys, `w` the maximum-loaded node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roles {
    pub u: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<NodeId>,
}

impl Roles {
    pub fn only(u: NodeId) -> Self {
        Roles { u, v: None, z: None, w: None }
    }

    fn ids(&self) -> impl Iterator<Item = NodeId> {
        [Some(self.u), self.v, self.z, self.w].into_iter().flatten()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BalanceOutcome {
    pub kind: BalanceKind,
    pub roles: Roles,
    pub keys_moved: u64,
    pub direction: Direction,
    /// Loads of every role node before and after the balancing block.
    pub touched: Vec<TouchedNode>,
}

impl BalanceOutcome {
    fn none(state: &SystemState, u_pos: usize) -> Self {
        let node = state.node(u_pos);
        BalanceOutcome {
            kind: BalanceKind::None,
            roles: Roles::only(node.id),
            keys_moved: 0,
            direction: Direction::NotApplicable,
            touched: vec![TouchedNode {
                id: node.id,
                before: node.load(),
                after: node.load(),
            }],
        }
    }
}

fn neighbor_count(state: &SystemState, pos: usize) -> u64 {
    (pos > 0) as u64 + (pos + 1 < state.len()) as u64
}

fn charge_transfer(state: &SystemState, mode: DirectoryMode, ledger: &mut CostLedger, t: Transfer) {
    for _ in 0..t.partition_changes {
        directory::charge_partition_change(ledger, state.len(), mode);
    }
    ledger.data_movement += t.keys_moved;
}

fn reorder_charged(
    state: &mut SystemState,
    empty: NodeId,
    target: NodeId,
    keep: u64,
    mode: DirectoryMode,
    ledger: &mut CostLedger,
) -> Result<u64> {
    let empty_pos = state.position_of(empty).expect("role node exists");
    let target_pos = state.position_of(target).expect("role node exists");
    let before = state.load(target_pos);
    state.reorder(empty_pos, target_pos, keep)?;
    // the vacated slot and the split
    charge_transfer(
        state,
        mode,
        ledger,
        Transfer {
            keys_moved: before - keep,
            partition_changes: 2,
        },
    );
    Ok(before - keep)
}

fn finish(state: &SystemState, kind: BalanceKind, roles: Roles, keys_moved: u64, direction: Direction, before: Vec<(NodeId, u64)>) -> BalanceOutcome {
    let touched = before
        .into_iter()
        .map(|(id, before)| TouchedNode {
            id,
            before,
            after: state.load(state.position_of(id).expect("role node exists")),
        })
        .collect();
    BalanceOutcome {
        kind,
        roles,
        keys_moved,
        direction,
        touched,
    }
}

fn snapshot_roles(state: &SystemState, roles: &Roles) -> Vec<(NodeId, u64)> {
    let mut out: Vec<(NodeId, u64)> = Vec::with_capacity(4);
    for id in roles.ids() {
        if !out.iter().any(|(seen, _)| *seen == id) {
            out.push((id, state.load(state.position_of(id).expect("role node exists"))));
        }
    }
    out
}

/// Runs after an insert on the node at `u_pos`.
///
/// When `L(u) > alpha * Min`, the minimum-loaded node `v` hands its keys to
/// its lighter neighbor and then takes the upper `floor(L(u)/2)` keys of `u`.
/// If that neighbor is `u` itself, the halving applies to the merged load.
pub fn min_balance(
    state: &mut SystemState,
    u_pos: usize,
    config: &BalanceConfig,
    mode: DirectoryMode,
    ledger: &mut CostLedger,
) -> Result<BalanceOutcome> {
    let (v_pos, min) = directory::query_min(state, mode, ledger);
    let lu = state.load(u_pos);
    // a half-load of fewer than two keys would leave the relocated node empty
    if !exceeds(lu, config.alpha, min) || lu < 2 {
        return Ok(BalanceOutcome::none(state, u_pos));
    }
    let z_pos = state.lightly_loaded_neighbor(v_pos);
    directory::charge_contacts(ledger, neighbor_count(state, v_pos), mode);

    let roles = Roles {
        u: state.node(u_pos).id,
        v: Some(state.node(v_pos).id),
        z: Some(state.node(z_pos).id),
        w: None,
    };
    let before = snapshot_roles(state, &roles);
    let direction = Direction::of_transfer(v_pos, z_pos);

    let t = state.nbr_adjust(v_pos, z_pos, min)?;
    charge_transfer(state, mode, ledger, t);

    let u_pos = state.position_of(roles.u).expect("role node exists");
    let keep = state.load(u_pos).div_ceil(2);
    let split = reorder_charged(state, roles.v.unwrap(), roles.u, keep, mode, ledger)?;

    Ok(finish(state, BalanceKind::MinBalance, roles, t.keys_moved + split, direction, before))
}

/// Runs after a delete on the node at `u_pos`.
///
/// When `L(u) <= Max / beta`: if the lighter neighbor `z` holds at most
/// `2 Max / beta`, `u` hands its keys to `z` and takes the upper
/// `floor(Max/2)` keys of the maximum-loaded node (SplitMax); otherwise `z`
/// shares keys with `u` until `u` holds `ceil((L(u)+L(z))/2)` (SplitNbr).
pub fn split(
    state: &mut SystemState,
    u_pos: usize,
    config: &BalanceConfig,
    mode: DirectoryMode,
    ledger: &mut CostLedger,
) -> Result<BalanceOutcome> {
    let (w_pos, max) = directory::query_max(state, mode, ledger);
    let lu = state.load(u_pos);
    if !at_most_fraction(lu, max, config.beta) {
        return Ok(BalanceOutcome::none(state, u_pos));
    }
    let z_pos = state.lightly_loaded_neighbor(u_pos);
    directory::charge_contacts(ledger, neighbor_count(state, u_pos), mode);
    let lz = state.load(z_pos);
    let u = state.node(u_pos).id;
    let z = state.node(z_pos).id;

    if at_most_fraction(lz, 2 * max, config.beta) {
        // a maximum below 2 cannot be halved into two non-empty nodes
        if max < 2 {
            return Ok(BalanceOutcome::none(state, u_pos));
        }
        let roles = Roles {
            u,
            v: None,
            z: Some(z),
            w: Some(state.node(w_pos).id),
        };
        let before = snapshot_roles(state, &roles);
        let direction = Direction::of_transfer(u_pos, z_pos);

        let t = state.nbr_adjust(u_pos, z_pos, lu)?;
        charge_transfer(state, mode, ledger, t);

        let w = roles.w.unwrap();
        let keep = state.load(state.position_of(w).expect("role node exists")).div_ceil(2);
        let split = reorder_charged(state, u, w, keep, mode, ledger)?;
        Ok(finish(state, BalanceKind::SplitMax, roles, t.keys_moved + split, direction, before))
    } else {
        let roles = Roles {
            u,
            v: None,
            z: Some(z),
            w: None,
        };
        let before = snapshot_roles(state, &roles);
        let count = (lu + lz).div_ceil(2) - lu;
        let t = state.nbr_adjust(z_pos, u_pos, count)?;
        charge_transfer(state, mode, ledger, t);
        Ok(finish(state, BalanceKind::SplitNbr, roles, t.keys_moved, Direction::NotApplicable, before))
    }
}

/// Owns a state together with its cost ledger, potential and event log, and
/// turns each insert or delete into one [`EventRecord`].
#[derive(Clone, Debug)]
pub struct Engine {
    state: SystemState,
    config: BalanceConfig,
    mode: DirectoryMode,
    ledger: CostLedger,
    potential: PotentialTracker,
    log: EventLog,
}

impl Engine {
    /// Does not validate `config`; callers that need the guarantees should
    /// call [`BalanceConfig::validate`] first.
    pub fn new(state: SystemState, config: BalanceConfig, mode: DirectoryMode, c: Rational, retain: bool) -> Self {
        let loads = state.loads();
        let initial_min = loads.iter().copied().min();
        Engine {
            potential: PotentialTracker::new(&loads, c),
            log: EventLog::new(initial_min, retain),
            state,
            config,
            mode,
            ledger: CostLedger::default(),
        }
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn config(&self) -> &BalanceConfig {
        &self.config
    }

    pub fn mode(&self) -> DirectoryMode {
        self.mode
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn log_mut(&mut self) -> &mut EventLog {
        &mut self.log
    }

    pub fn potential(&self) -> &PotentialTracker {
        &self.potential
    }

    pub fn insert(&mut self, key: Key) -> Result<EventRecord> {
        self.mutate(OpKind::Insert, key)
    }

    pub fn delete(&mut self, key: Key) -> Result<EventRecord> {
        self.mutate(OpKind::Delete, key)
    }

    fn mutate(&mut self, kind: OpKind, key: Key) -> Result<EventRecord> {
        let ledger_pre = self.ledger;
        let (_, pre_min) = self.state.index().min();
        let (_, pre_max) = self.state.index().max();
        let phi_pre = self.potential.phi();

        let pos = match kind {
            OpKind::Insert => self.state.raw_insert(key)?,
            OpKind::Delete => self.state.raw_delete(key)?,
        };
        self.ledger.data_movement += 1;
        let mid = self.state.load(pos);
        let load_u_pre = match kind {
            OpKind::Insert => mid - 1,
            OpKind::Delete => mid + 1,
        };
        self.potential.update(load_u_pre, mid);
        let phi_mid = self.potential.phi();

        let outcome = match kind {
            OpKind::Insert => min_balance(&mut self.state, pos, &self.config, self.mode, &mut self.ledger)?,
            OpKind::Delete => split(&mut self.state, pos, &self.config, self.mode, &mut self.ledger)?,
        };
        for t in &outcome.touched {
            self.potential.update(t.before, t.after);
        }
        let phi = self.potential.phi();
        let u = outcome.roles.u;
        let load_u = outcome
            .touched
            .iter()
            .find(|t| t.id == u)
            .map(|t| t.after)
            .expect("u is always touched");

        let (phi_pre_num, phi_pre_den) = phi_parts(&phi_pre);
        let (phi_mid_num, phi_mid_den) = phi_parts(&phi_mid);
        let (phi_num, phi_den) = phi_parts(&phi);
        let record = EventRecord {
            seq: self.log.last_seq() + 1,
            kind,
            key,
            balance: outcome.kind,
            roles: outcome.roles,
            direction: outcome.direction,
            keys_moved: outcome.keys_moved,
            queries: (self.ledger.load_info_queries - ledger_pre.load_info_queries) as u32,
            partition_changes: (self.ledger.partition_changes - ledger_pre.partition_changes) as u32,
            contacts: (self.ledger.adjacent_contacts - ledger_pre.adjacent_contacts) as u32,
            messages: self.ledger.messages - ledger_pre.messages,
            pre_min,
            pre_max,
            min: self.state.index().min().1,
            max: self.state.index().max().1,
            load_u_pre,
            load_u,
            touched: outcome.touched,
            phase: 0,
            phase_transition: false,
            phi_pre_num,
            phi_pre_den,
            phi_mid_num,
            phi_mid_den,
            phi_num,
            phi_den,
        };
        self.log.record_event(record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{parse_rational, BalanceMode};
    use crate::error::Error;
    use crate::metrics::potential;

    fn r(s: &str) -> Rational {
        parse_rational(s).unwrap()
    }

    /// Node `i` holds `loads[i]` keys `1000 * i + 1, 1000 * i + 2, ...`.
    fn with_loads(loads: &[u64]) -> SystemState {
        let lists: Vec<Vec<Key>> = loads
            .iter()
            .enumerate()
            .map(|(i, &l)| (1..=l).map(|k| 1000 * i as u64 + k).collect())
            .collect();
        SystemState::from_key_lists(&lists).unwrap()
    }

    fn engine(loads: &[u64], alpha: &str, beta: &str) -> Engine {
        let cfg = BalanceConfig::new(r(alpha), 1, BalanceMode::General).with_beta(r(beta));
        Engine::new(with_loads(loads), cfg, DirectoryMode::Centralized, r("1"), true)
    }

    fn ids_and_loads(e: &Engine) -> Vec<(u32, u64)> {
        e.state().nodes().iter().map(|n| (n.id.0, n.load())).collect()
    }

    #[test]
    fn insert_below_threshold() {
        let mut e = engine(&[2, 2], "4", "4");
        let rec = e.insert(3).unwrap();
        assert_eq!(e.state().loads(), vec![3, 2]);
        assert_eq!(rec.balance, BalanceKind::None);
        assert_eq!(rec.queries, 1);
        assert_eq!(rec.keys_moved, 0);
    }

    #[test]
    fn insert_triggers_min_balance_four_nodes() {
        let mut e = engine(&[12, 3, 2, 9], "5", "5");
        let rec = e.insert(500).unwrap();
        assert_eq!(rec.balance, BalanceKind::MinBalance);
        assert_eq!(ids_and_loads(&e), vec![(0, 7), (2, 6), (1, 5), (3, 9)]);
        assert_eq!(rec.roles.v, Some(NodeId(2)));
        assert_eq!(rec.roles.z, Some(NodeId(1)));
        // v gave 2 keys, then took floor(13/2)
        assert_eq!(rec.keys_moved, 2 + 6);
        assert_eq!(rec.direction, Direction::Right);
        assert_eq!(rec.partition_changes, 3);
        assert!(e.state().validate().is_empty());
    }

    #[test]
    fn insert_when_neighbor_is_u() {
        let mut e = engine(&[9, 2], "4", "4");
        let rec = e.insert(500).unwrap();
        assert_eq!(rec.balance, BalanceKind::MinBalance);
        assert_eq!(rec.roles.z, Some(NodeId(0)));
        assert_eq!(e.state().loads(), vec![6, 6]);
        assert_eq!(rec.keys_moved, 2 + 6);
        assert!(e.state().validate().is_empty());
    }

    #[test]
    fn min_balance_strict_threshold() {
        let mut s = with_loads(&[10, 2, 5]);
        let cfg = BalanceConfig::new(r("5"), 1, BalanceMode::General);
        let mut ledger = CostLedger::default();
        let out = min_balance(&mut s, 0, &cfg, DirectoryMode::Centralized, &mut ledger).unwrap();
        assert_eq!(out.kind, BalanceKind::None);
        assert_eq!(ledger.load_info_queries, 1);

        let mut s = with_loads(&[11, 2, 5]);
        let out = min_balance(&mut s, 0, &cfg, DirectoryMode::Centralized, &mut ledger).unwrap();
        assert_eq!(out.kind, BalanceKind::MinBalance);
        let u = out.touched.iter().find(|t| t.id == NodeId(0)).unwrap();
        let v = out.touched.iter().find(|t| t.id == NodeId(1)).unwrap();
        assert_eq!((u.after, v.after), (6, 5));
        assert_eq!(out.keys_moved, 7);
        assert_eq!(ledger.load_info_queries, 2);
    }

    #[test]
    fn min_balance_self_minimum() {
        let mut s = with_loads(&[3, 5, 5]);
        let cfg = BalanceConfig::new(r("5"), 1, BalanceMode::General);
        let mut ledger = CostLedger::default();
        let out = min_balance(&mut s, 0, &cfg, DirectoryMode::Centralized, &mut ledger).unwrap();
        assert_eq!(out.kind, BalanceKind::None);
    }

    #[test]
    fn delete_below_threshold() {
        let mut e = engine(&[8, 5], "4", "4");
        let rec = e.delete(1001).unwrap();
        assert_eq!(e.state().loads(), vec![8, 4]);
        assert_eq!(rec.balance, BalanceKind::None);
        assert_eq!(rec.queries, 1);
    }

    #[test]
    fn delete_triggers_split_max() {
        let mut e = engine(&[20, 6, 3, 18], "4", "4");
        let rec = e.delete(2001).unwrap();
        assert_eq!(rec.balance, BalanceKind::SplitMax);
        assert_eq!(ids_and_loads(&e), vec![(0, 10), (2, 10), (1, 8), (3, 18)]);
        assert_eq!(rec.keys_moved, 2 + 10);
        assert_eq!(rec.roles.w, Some(NodeId(0)));
        assert_eq!(rec.direction, Direction::Right);
        assert!(e.state().validate().is_empty());
    }

    #[test]
    fn delete_triggers_split_nbr() {
        let mut e = engine(&[40, 25, 3], "4", "4");
        let rec = e.delete(2001).unwrap();
        assert_eq!(rec.balance, BalanceKind::SplitNbr);
        assert_eq!(ids_and_loads(&e), vec![(0, 40), (1, 13), (2, 14)]);
        assert_eq!(rec.keys_moved, 12);
        assert_eq!(rec.partition_changes, 1);
        assert!(e.state().validate().is_empty());
    }

    #[test]
    fn split_boundary_inclusive() {
        let mut s = with_loads(&[20, 5, 20]);
        let cfg = BalanceConfig::new(r("5"), 1, BalanceMode::General).with_beta(r("4"));
        let mut ledger = CostLedger::default();
        let out = split(&mut s, 1, &cfg, DirectoryMode::Centralized, &mut ledger).unwrap();
        assert_ne!(out.kind, BalanceKind::None);
    }

    #[test]
    fn split_nbr_ceiling_goes_to_u() {
        let mut s = with_loads(&[2, 25, 40]);
        let cfg = BalanceConfig::new(r("5"), 1, BalanceMode::General).with_beta(r("4"));
        let mut ledger = CostLedger::default();
        let out = split(&mut s, 0, &cfg, DirectoryMode::Centralized, &mut ledger).unwrap();
        assert_eq!(out.kind, BalanceKind::SplitNbr);
        assert_eq!(s.loads(), vec![14, 13, 40]);
    }

    #[test]
    fn split_on_maximum_is_noop() {
        let mut s = with_loads(&[20, 5, 5]);
        let cfg = BalanceConfig::new(r("5"), 1, BalanceMode::General).with_beta(r("4"));
        let mut ledger = CostLedger::default();
        let out = split(&mut s, 0, &cfg, DirectoryMode::Centralized, &mut ledger).unwrap();
        assert_eq!(out.kind, BalanceKind::None);
    }

    #[test]
    fn errors_propagate() {
        let mut e = engine(&[2, 2], "5", "4");
        assert_eq!(e.insert(1).unwrap_err(), Error::DuplicateKey(1));
        assert_eq!(e.delete(7).unwrap_err(), Error::KeyNotFound(7));
        assert_eq!(e.log().last_seq(), 0);
    }

    #[test]
    fn potential_tracks_state() {
        let mut e = engine(&[12, 3, 2, 9], "5", "5");
        for k in [500u64, 501, 502, 3001, 3002, 1001] {
            let rec = if e.state().contains_key(k) { e.delete(k) } else { e.insert(k) }.unwrap();
            assert_eq!(rec.phi(), Some(potential(&e.state().loads(), r("1")).unwrap()));
        }
    }
}
