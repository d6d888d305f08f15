use proptest::prelude::*;

use rangebal::checker::{
    check_imbalance_trace, check_post_mutation_bounds, check_potential_accounting, check_single_invocation, check_trace_consistency,
    check_transfer_receivers, replay_against_engine,
};
use rangebal::config::{parse_rational, BalanceConfig, BalanceMode, Rational};
use rangebal::directory::DirectoryMode;
use rangebal::keyspace::SystemState;
use rangebal::metrics::potential;
use rangebal::workload::{generate, Generator, KeyDist, Op, WorkloadKind, WorkloadSpec};
use rangebal::{BalanceKind, Engine, EventRecord};

fn is_single_key_swap(e: &EventRecord) -> bool {
    let before = |id| e.touched_node(id).map(|t| t.before);
    e.balance == BalanceKind::SplitNbr
        && e.keys_moved == 1
        && before(e.roles.u) == Some(0)
        && e.roles.z.and_then(before) == Some(1)
}

fn alphas() -> impl Strategy<Value = Rational> {
    prop::sample::select(vec!["4.38", "5", "547/100", "6", "8", "12"]).prop_map(|a| parse_rational(a).unwrap())
}

fn dists() -> impl Strategy<Value = KeyDist> {
    prop_oneof![
        Just(KeyDist::Uniform),
        Just(KeyDist::HotRange { lo: 1 << 40, hi: (1 << 40) + 5000, weight: 0.9 }),
        Just(KeyDist::Zipf { s: 1.2, buckets: 32 }),
    ]
}

fn run(
    config: BalanceConfig,
    mode: DirectoryMode,
    n: usize,
    spec: WorkloadSpec,
) -> (Engine, Vec<EventRecord>) {
    run_with_c(config, mode, n, spec, Rational::from_integer(1))
}

fn run_with_c(
    config: BalanceConfig,
    mode: DirectoryMode,
    n: usize,
    spec: WorkloadSpec,
    c: Rational,
) -> (Engine, Vec<EventRecord>) {
    let state = SystemState::init(n, config.c0, spec.seed).unwrap();
    let mut engine = Engine::new(state, config, mode, c, true);
    let mut generator = Generator::new(spec, engine.state()).unwrap();
    while let Some(op) = generator.next_op(engine.state()) {
        match op {
            Op::Insert(k) => engine.insert(k).unwrap(),
            Op::Delete(k) => engine.delete(k).unwrap(),
        };
        assert_eq!(engine.state().validate(), Vec::<String>::new());
    }
    let trace = engine.log_mut().take_records();
    (engine, trace)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn general_mode_guarantees_hold(
        alpha in alphas(),
        c0 in 1u64..6,
        n in 2usize..24,
        adversarial in any::<bool>(),
        p_delete in 0.0f64..0.7,
        dist in dists(),
        overlay in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let config = BalanceConfig::new(alpha, c0, BalanceMode::General);
        prop_assume!(config.validate().is_ok());
        let mode = if overlay { DirectoryMode::Overlay } else { DirectoryMode::Centralized };
        let spec = WorkloadSpec {
            kind: if adversarial { WorkloadKind::Adversarial } else { WorkloadKind::Mixed },
            ops: 400,
            p_delete,
            key_dist: dist,
            seed,
        };
        let (engine, trace) = run(config, mode, n, spec);
        for report in [
            check_imbalance_trace(&trace, &config),
            check_post_mutation_bounds(&trace, &config),
            check_single_invocation(&trace),
            check_trace_consistency(&trace, n, mode),
            check_transfer_receivers(&trace, &config),
        ] {
            prop_assert!(report.passed, "{:?}", report);
        }
        // undefined once every key is gone
        let phi = potential(&engine.state().loads(), Rational::from_integer(1)).ok();
        prop_assert_eq!(trace.last().unwrap().phi(), phi);
    }

    #[test]
    fn potential_pays_for_balancing(
        adversarial in any::<bool>(),
        n in 2usize..32,
        c0 in 1u64..6,
        p_delete in 0.2f64..0.6,
        dist in dists(),
        seed in any::<u64>(),
    ) {
        let config = BalanceConfig::new(parse_rational("6").unwrap(), c0, BalanceMode::General)
            .with_beta(parse_rational("4").unwrap())
            .with_accounting(true);
        let c = Rational::from_integer(145);
        let spec = WorkloadSpec {
            kind: if adversarial { WorkloadKind::Adversarial } else { WorkloadKind::Mixed },
            ops: 1500,
            p_delete,
            key_dist: dist,
            seed,
        };
        let (_, trace) = run_with_c(config, DirectoryMode::Centralized, n, spec, c);
        // a one-key node refilling an emptied neighbor only swaps the loads
        // [0, 1] -> [1, 0]; the potential cannot pay for that move
        let (swaps, rest): (Vec<EventRecord>, Vec<EventRecord>) = trace.into_iter().partition(is_single_key_swap);
        for e in &swaps {
            prop_assert_eq!(e.phi_mid(), e.phi());
        }
        let report = check_potential_accounting(&rest, &config, c).unwrap();
        prop_assert!(report.passed, "{:?}", report);
    }

    #[test]
    fn oracle_agrees(n in 2usize..9, c0 in 1u64..5, ops in 1u64..200, p_delete in 0.1f64..0.6, seed in any::<u64>()) {
        let config = BalanceConfig::new(parse_rational("547/100").unwrap(), c0, BalanceMode::General);
        let initial = SystemState::init(n, c0, seed).unwrap();
        let spec = WorkloadSpec { kind: WorkloadKind::Mixed, ops, p_delete, key_dist: KeyDist::Uniform, seed };
        let ops = generate(spec, &initial).unwrap();
        prop_assert_eq!(replay_against_engine(&initial, &ops, &config).unwrap(), None);
    }

    #[test]
    fn checks_are_deterministic(seed in any::<u64>()) {
        let config = BalanceConfig::new(parse_rational("6").unwrap(), 2, BalanceMode::General);
        let spec = WorkloadSpec { kind: WorkloadKind::Adversarial, ops: 200, p_delete: 0.5, key_dist: KeyDist::Uniform, seed };
        let (_, a) = run(config, DirectoryMode::Centralized, 6, spec);
        let (_, b) = run(config, DirectoryMode::Centralized, 6, spec);
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(check_imbalance_trace(&a, &config), check_imbalance_trace(&b, &config));
    }
}

#[test]
fn single_key_swap_is_not_paid_by_the_potential() {
    let config = BalanceConfig::new(parse_rational("6").unwrap(), 1, BalanceMode::General)
        .with_beta(parse_rational("4").unwrap())
        .with_accounting(true);
    let c = Rational::from_integer(145);
    let state = SystemState::from_key_lists(&[vec![10], vec![20]]).unwrap();
    let mut engine = Engine::new(state, config, DirectoryMode::Centralized, c, true);
    let e = engine.delete(10).unwrap();
    assert_eq!(e.balance, BalanceKind::SplitNbr);
    assert_eq!(engine.state().loads(), vec![1, 0]);
    assert!(is_single_key_swap(&e));
    let report = check_potential_accounting(&[e], &config, c).unwrap();
    assert!(!report.passed);
    assert_eq!(report.first_failing_seq, Some(1));
}
