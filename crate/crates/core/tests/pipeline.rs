use proptest::prelude::*;

use uibcost::cost::{network_cost, DtypeWidths};
use uibcost::executor::{run_network_traced, ExecOptions};
use uibcost::ir::{emit_netspec, parse_netspec, propagate_shapes, BlockSpec, Kernel, NetworkSpec, Stride};
use uibcost::roofline::{sweep_ridge_points, DEFAULT_SWEEP};
use uibcost::search::{SearchConfig, SearchMode};
use uibcost::zoo;

#[test]
fn builtins_round_trip_through_json() {
    for net in zoo::builtins() {
        let back = parse_netspec(&emit_netspec(&net)).unwrap();
        assert_eq!(back, net, "{}", net.name);
        assert_eq!(
            network_cost(&back, DtypeWidths::INT8).unwrap(),
            network_cost(&net, DtypeWidths::INT8).unwrap()
        );
    }
}

#[test]
fn builtin_sweeps_are_monotone() {
    let reports: Vec<_> = zoo::builtins()
        .iter()
        .map(|n| network_cost(n, DtypeWidths::INT8).unwrap())
        .collect();
    let table = sweep_ridge_points(&reports, &DEFAULT_SWEEP, 1e12).unwrap();
    for (name, row) in table.models.iter().zip(&table.latency_s) {
        assert!(row.windows(2).all(|w| w[0] <= w[1]), "{name}");
        // rp 0 is the MAC-only limit
        let r = reports.iter().find(|r| &r.network == name).unwrap();
        assert_eq!(row[0], r.total_macs as f64 / 1e12);
    }
}

#[test]
fn bundled_toy_config_runs_both_modes() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/toy_search.toml")).unwrap();
    let cfg = SearchConfig::from_toml(&text).unwrap();
    let one = cfg.run(SearchMode::OneStage).unwrap();
    let two = cfg.run(SearchMode::TwoStage).unwrap();
    assert_eq!(one.log.len(), 3600);
    let count = |phase: &str| two.log.iter().filter(|e| e.phase == phase).count();
    // 36 coarse configs fit the coarse budget exactly
    assert_eq!(count("coarse"), 36);
    assert!((1..=cfg.budget.fine).contains(&count("fine")));
    assert_eq!(two.log.len(), count("coarse") + count("fine"));
    // one-stage enumerated everything, so nothing beats it
    assert!(one.best.reward >= two.best.reward);
}

fn kernel() -> impl Strategy<Value = Option<Kernel>> {
    prop_oneof![Just(None), Just(Some(Kernel::K3)), Just(Some(Kernel::K5))]
}

fn uib_block() -> impl Strategy<Value = (Option<Kernel>, Option<Kernel>, u32, u32, bool)> {
    (kernel(), kernel(), 1u32..=6, 1u32..=8, any::<bool>())
}

prop_compose! {
    fn random_net()(res in 8u32..=48, blocks in prop::collection::vec(uib_block(), 1..6)) -> NetworkSpec {
        let mut c = 8;
        let mut out = vec![BlockSpec::conv(Kernel::K3, Stride::TWO, c)];
        for (start, mid, exp, width, s2) in blocks {
            let stride = if s2 { Stride::TWO } else { Stride::ONE };
            let next = 8 * width;
            out.push(BlockSpec::uib(start, mid, exp * c, next, stride));
            c = next;
        }
        out.push(BlockSpec::Avgpool);
        out.push(BlockSpec::Dense { out: 10, bias: true });
        NetworkSpec::new("random", res, out)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cost_is_invariant_under_emit_parse(net in random_net()) {
        let back = parse_netspec(&emit_netspec(&net)).unwrap();
        prop_assert_eq!(&back, &net);
        for dtype in [DtypeWidths::INT8, DtypeWidths::FP16, DtypeWidths::FP32] {
            prop_assert_eq!(network_cost(&back, dtype).unwrap(), network_cost(&net, dtype).unwrap());
        }
    }

    #[test]
    fn executor_agrees_with_shape_propagation(net in random_net(), seed in any::<u64>()) {
        let trace = run_network_traced(&net, ExecOptions { seed, ..ExecOptions::default() }).unwrap();
        let expected: Vec<_> = propagate_shapes(&net).unwrap().iter().map(|s| s.output).collect();
        prop_assert_eq!(trace.block_shapes, expected);
        prop_assert!(trace.output.is_finite());
    }

    #[test]
    fn wider_dtype_never_lowers_bytes(net in random_net()) {
        let a = network_cost(&net, DtypeWidths::INT8).unwrap();
        let b = network_cost(&net, DtypeWidths::FP32).unwrap();
        prop_assert_eq!(a.total_macs, b.total_macs);
        prop_assert_eq!(a.total_params, b.total_params);
        prop_assert_eq!(b.total_bytes, 4 * a.total_bytes);
    }
}
