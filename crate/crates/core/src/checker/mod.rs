//! Trace-level assertions of the balancing guarantees.
//!
//! Every check is a pure function of its inputs. Ratio-based checks are
//! suspended at events whose minimum load is below one.

mod oracle;

use std::cmp::Ordering;

use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::balancer::{BalanceKind, Direction};
use crate::config::{cmp_scaled, exceeds, at_most_fraction, to_big, BalanceConfig, Rational};
use crate::directory::DirectoryMode;
use crate::error::{Error, Result};
use crate::metrics::{EventRecord, OpKind};

pub use oracle::{oracle_replay, replay_against_engine, Divergence, OracleState};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: String,
    pub passed: bool,
    /// Events the assertion was evaluated on (suspended events excluded).
    pub checked: u64,
    pub first_failing_seq: Option<u64>,
    pub context: Option<String>,
}

impl CheckReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

enum Verdict {
    Pass,
    Skip,
    Fail(String),
}

fn scan(name: &str, trace: &[EventRecord], mut f: impl FnMut(&EventRecord) -> Verdict) -> CheckReport {
    let mut checked = 0;
    for r in trace {
        match f(r) {
            Verdict::Pass => checked += 1,
            Verdict::Skip => {}
            Verdict::Fail(context) => {
                return CheckReport {
                    check: name.into(),
                    passed: false,
                    checked: checked + 1,
                    first_failing_seq: Some(r.seq),
                    context: Some(context),
                }
            }
        }
    }
    CheckReport {
        check: name.into(),
        passed: true,
        checked,
        first_failing_seq: None,
        context: None,
    }
}

fn two() -> Rational {
    Rational::from_integer(2)
}

/// `max <= (alpha + 2) * min + c0`.
fn within_imbalance(max: u64, min: u64, config: &BalanceConfig) -> bool {
    max <= config.c0 || cmp_scaled(max - config.c0, Rational::from_integer(1), min, config.alpha + two()) != Ordering::Greater
}

/// Checks the imbalance bound on a single load vector.
pub fn check_imbalance(loads: &[u64], config: &BalanceConfig) -> CheckReport {
    let min = loads.iter().copied().min().unwrap_or(0);
    let max = loads.iter().copied().max().unwrap_or(0);
    let (passed, checked, context) = if min < 1 {
        (true, 0, Some("suspended: min load below 1".to_string()))
    } else if within_imbalance(max, min, config) {
        (true, 1, Some(format!("ratio {:.4}", max as f64 / min as f64)))
    } else {
        (false, 1, Some(format!("max {max} > (alpha+2)*{min} + {}", config.c0)))
    };
    CheckReport {
        check: "imbalance".into(),
        passed,
        checked,
        first_failing_seq: (!passed).then_some(0),
        context,
    }
}

/// `Max <= (alpha + 2) * Min + c0` after every event; the context reports
/// the largest pure ratio `Max / Min` seen.
pub fn check_imbalance_trace(trace: &[EventRecord], config: &BalanceConfig) -> CheckReport {
    let mut worst: Option<(u64, u64)> = None;
    let mut report = scan("imbalance", trace, |r| {
        if r.min < 1 {
            return Verdict::Skip;
        }
        if worst.is_none_or(|(wmax, wmin)| (r.max as u128) * (wmin as u128) > (wmax as u128) * (r.min as u128)) {
            worst = Some((r.max, r.min));
        }
        if within_imbalance(r.max, r.min, config) {
            Verdict::Pass
        } else {
            Verdict::Fail(format!("max {} > (alpha+2)*{} + {}", r.max, r.min, config.c0))
        }
    });
    if report.passed {
        report.context = worst.map(|(max, min)| format!("max ratio {:.6} (max {max}, min {min})", max as f64 / min as f64));
    }
    report
}

/// The minimum load never decreases in an insert-only trace.
pub fn check_min_monotone(trace: &[EventRecord]) -> Result<CheckReport> {
    if trace.iter().any(|r| r.kind == OpKind::Delete) {
        return Err(Error::Inapplicable("trace contains deletes".into()));
    }
    let mut prev = trace.first().map(|r| r.pre_min);
    Ok(scan("min-monotone", trace, |r| {
        let verdict = match prev {
            Some(p) if r.min < p => Verdict::Fail(format!("min dropped from {p} to {}", r.min)),
            _ => Verdict::Pass,
        };
        prev = Some(r.min);
        verdict
    }))
}

/// After an insert, `L(u) <= alpha * Min`; after a delete that triggered
/// balancing, `L(u) > Max / beta`.
pub fn check_post_mutation_bounds(trace: &[EventRecord], config: &BalanceConfig) -> CheckReport {
    scan("post-mutation-bounds", trace, |r| match r.kind {
        OpKind::Insert => {
            if r.min < 1 {
                Verdict::Skip
            } else if exceeds(r.load_u, config.alpha, r.min) {
                Verdict::Fail(format!("L(u) {} > alpha * Min {}", r.load_u, r.min))
            } else {
                Verdict::Pass
            }
        }
        OpKind::Delete if r.balance != BalanceKind::None => {
            if at_most_fraction(r.load_u, r.max, config.beta) {
                Verdict::Fail(format!("L(u) {} <= Max {} / beta", r.load_u, r.max))
            } else {
                Verdict::Pass
            }
        }
        OpKind::Delete => Verdict::Skip,
    })
}

/// At most one global query and at most one balancing block per mutation,
/// and the block matches the mutation kind.
pub fn check_single_invocation(trace: &[EventRecord]) -> CheckReport {
    scan("single-invocation", trace, |r| {
        if r.queries > 1 {
            return Verdict::Fail(format!("{} global queries", r.queries));
        }
        let allowed = match (r.kind, r.balance) {
            (_, BalanceKind::None) => r.partition_changes == 0,
            (OpKind::Insert, BalanceKind::MinBalance) => r.partition_changes <= 3,
            (OpKind::Delete, BalanceKind::SplitMax) => r.partition_changes <= 3,
            (OpKind::Delete, BalanceKind::SplitNbr) => r.partition_changes <= 1,
            _ => false,
        };
        if allowed {
            Verdict::Pass
        } else {
            Verdict::Fail(format!(
                "{:?} after {} with {} partition changes",
                r.balance, r.kind, r.partition_changes
            ))
        }
    })
}

/// Expected keys moved by a balancing block, from the recorded pre-balance
/// loads of the role nodes.
pub fn expected_keys_moved(r: &EventRecord) -> Option<u64> {
    let before = |id| r.touched_node(id).map(|t| t.before);
    let u = before(r.roles.u)?;
    match r.balance {
        BalanceKind::None => Some(0),
        BalanceKind::MinBalance => {
            let v = before(r.roles.v?)?;
            let merged = if r.roles.z == Some(r.roles.u) { u + v } else { u };
            Some(v + merged / 2)
        }
        BalanceKind::SplitMax => Some(u + before(r.roles.w?)? / 2),
        BalanceKind::SplitNbr => {
            let z = before(r.roles.z?)?;
            Some((u + z).div_ceil(2) - u)
        }
    }
}

/// Internal consistency of each record: sequence numbers, movement
/// formulas, load conservation, transfer direction and message counts.
pub fn check_trace_consistency(trace: &[EventRecord], n: usize, mode: DirectoryMode) -> CheckReport {
    let mut last = trace.first().map(|r| r.seq.saturating_sub(1));
    scan("consistency", trace, |r| {
        if let Some(l) = last {
            if r.seq != l + 1 {
                return Verdict::Fail(format!("seq {} follows {l}", r.seq));
            }
        }
        last = Some(r.seq);
        match expected_keys_moved(r) {
            Some(k) if k == r.keys_moved => {}
            Some(k) => return Verdict::Fail(format!("keys_moved {} but formula gives {k}", r.keys_moved)),
            None => return Verdict::Fail("role loads missing".into()),
        }
        let sum_before: u64 = r.touched.iter().map(|t| t.before).sum();
        let sum_after: u64 = r.touched.iter().map(|t| t.after).sum();
        if sum_before != sum_after {
            return Verdict::Fail(format!("balancing changed key count {sum_before} -> {sum_after}"));
        }
        let u = r.touched_node(r.roles.u);
        let expected_mid = match r.kind {
            OpKind::Insert => r.load_u_pre + 1,
            OpKind::Delete => r.load_u_pre.wrapping_sub(1),
        };
        if u.map(|t| (t.before, t.after)) != Some((expected_mid, r.load_u)) {
            return Verdict::Fail("load of u inconsistent with the mutation".into());
        }
        let has_direction = matches!(r.balance, BalanceKind::MinBalance | BalanceKind::SplitMax);
        if has_direction == (r.direction == Direction::NotApplicable) {
            return Verdict::Fail(format!("direction {:?} for {:?}", r.direction, r.balance));
        }
        let expected_msgs = mode.query_messages(n) * r.queries as u64
            + mode.partition_change_messages(n) * r.partition_changes as u64
            + mode.contact_messages() * r.contacts as u64;
        if expected_msgs != r.messages {
            return Verdict::Fail(format!("messages {} but recount gives {expected_msgs}", r.messages));
        }
        Verdict::Pass
    })
}

/// Potential accounting with constant `c`: bounded gain per insert and
/// delete, and a drop covering the keys moved by every balancing block.
pub fn check_potential_accounting(trace: &[EventRecord], config: &BalanceConfig, c: Rational) -> Result<CheckReport> {
    config.with_accounting(true).validate()?;
    config.validate_c(c)?;
    let c = to_big(c);
    let a = to_big(config.alpha);
    let big = |x: i64| BigRational::from_integer(x.into());
    let insert_bound = &c * (big(2) * &a + big(5));
    let delete_bound = big(2) * &c * (&a + big(2)) * (&a + big(2));

    Ok(scan("potential-accounting", trace, |r| {
        if r.pre_min < 1 {
            return Verdict::Skip;
        }
        let (Some(pre), Some(mid), Some(post)) = (r.phi_pre(), r.phi_mid(), r.phi()) else {
            return Verdict::Fail("potential missing from record".into());
        };
        let gain = &mid - &pre;
        let bound = match r.kind {
            OpKind::Insert => &insert_bound,
            OpKind::Delete => &delete_bound,
        };
        if &gain > bound {
            return Verdict::Fail(format!("{} gain {} exceeds {}", r.kind, gain, bound));
        }
        if r.balance != BalanceKind::None {
            let drop = &mid - &post;
            if drop < big(r.keys_moved as i64) {
                return Verdict::Fail(format!("{:?} drop {} below keys moved {}", r.balance, drop, r.keys_moved));
            }
        }
        Verdict::Pass
    }))
}

/// At every event that starts a new phase, `Max < beta * Min`.
pub fn check_phase_start(trace: &[EventRecord], config: &BalanceConfig) -> CheckReport {
    scan("phase-start", trace, |r| {
        if !r.phase_transition {
            return Verdict::Skip;
        }
        if cmp_scaled(r.max, Rational::from_integer(1), r.min, config.beta) == Ordering::Less {
            Verdict::Pass
        } else {
            Verdict::Fail(format!("phase {} starts with Max {} >= beta * Min {}", r.phase, r.max, r.min))
        }
    })
}

/// The node receiving a full-load transfer stays within the imbalance bound.
pub fn check_transfer_receivers(trace: &[EventRecord], config: &BalanceConfig) -> CheckReport {
    scan("transfer-receivers", trace, |r| {
        if r.min < 1 || !matches!(r.balance, BalanceKind::MinBalance | BalanceKind::SplitMax) {
            return Verdict::Skip;
        }
        let Some(z) = r.roles.z.and_then(|z| r.touched_node(z)) else {
            return Verdict::Fail("receiver missing".into());
        };
        if within_imbalance(z.after, r.min, config) {
            Verdict::Pass
        } else {
            Verdict::Fail(format!("receiver {} holds {} against Min {}", z.id, z.after, r.min))
        }
    })
}

/// Phases begin only at deletes that did not trigger balancing.
pub fn check_phase_causes(trace: &[EventRecord]) -> CheckReport {
    scan("phase-causes", trace, |r| {
        if !r.phase_transition {
            Verdict::Skip
        } else if r.kind == OpKind::Delete && r.balance == BalanceKind::None {
            Verdict::Pass
        } else {
            Verdict::Fail(format!("phase began at {} with {:?}", r.kind, r.balance))
        }
    })
}

/// Runs every check applicable to the trace. `c` enables potential
/// accounting.
pub fn verify_trace(
    trace: &[EventRecord],
    config: &BalanceConfig,
    n: usize,
    mode: DirectoryMode,
    c: Option<Rational>,
) -> Result<Vec<CheckReport>> {
    let mut reports = vec![
        check_trace_consistency(trace, n, mode),
        check_single_invocation(trace),
        check_imbalance_trace(trace, config),
        check_post_mutation_bounds(trace, config),
        check_transfer_receivers(trace, config),
        check_phase_start(trace, config),
        check_phase_causes(trace),
    ];
    if let Ok(report) = check_min_monotone(trace) {
        reports.push(report);
    }
    if let Some(c) = c {
        reports.push(check_potential_accounting(trace, config, c)?);
    }
    Ok(reports)
}
