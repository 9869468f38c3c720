//! End-to-end run on the three-layer toy fixture: redundancy values worked
//! out by hand from how the fixture filters were placed, then allocation,
//! planning and application.

use std::path::PathBuf;

use srr_core::flops::plan_flops_drop;
use srr_core::redundancy::{
    allocate, analyze_model, AllocationConfig, Budget, Metric, RedundancyWeights, TieBreak,
};
use srr_core::selection::{apply_plan, make_plan, Criterion};
use srr_core::weights_io::{bind, load_arch, load_weights, serialize_weights, BoundModel};

fn toy() -> BoundModel {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/toy");
    bind(
        load_weights(root.join("weights.nrpw")).unwrap(),
        load_arch(root.join("arch.json")).unwrap(),
    )
    .unwrap()
}

#[test]
fn hand_audited_redundancy() {
    let reports = analyze_model(&toy(), 0.034, RedundancyWeights::default()).unwrap();
    // conv1: five filters along an arc, neighbours joined: a path whose
    // middle vertex is filter 0. Greedy radius 1 takes 0 then both ends'
    // remaining pieces; radius 2 needs only the middle.
    let c1 = &reports[0];
    assert_eq!((c1.n, c1.k, c1.n1, c1.n2), (5, 1, 3, 1));
    assert_eq!(c1.n1c_estimate, 2.0);
    assert!((c1.r - 5.0 / 1.65).abs() <= 1e-12);
    // conv2: two tight clusters of four.
    let c2 = &reports[1];
    assert_eq!((c2.n, c2.k, c2.n1, c2.n2), (8, 2, 2, 2));
    assert!((c2.r - 4.0).abs() <= 1e-12);
    // conv3: unrelated filters.
    let c3 = &reports[2];
    assert_eq!((c3.n, c3.k, c3.n1, c3.n2), (6, 6, 6, 6));
    assert_eq!(c3.r, 1.0);
}

#[test]
fn gamma_limits() {
    let m = toy();
    for r in analyze_model(&m, 1e-9, RedundancyWeights::default()).unwrap() {
        assert_eq!(r.r, 1.0, "{}", r.layer);
    }
    for r in analyze_model(&m, 10.0, RedundancyWeights::default()).unwrap() {
        assert_eq!(r.r, r.n as f64, "{}", r.layer);
    }
    let mut cfg = AllocationConfig::new(Budget::FilterCount(12));
    cfg.gamma = 10.0;
    cfg.seed = 3;
    let graph = allocate(&m, &cfg).unwrap();
    let nof = allocate(&m, &AllocationConfig { metric: Metric::Nof, ..cfg }).unwrap();
    assert_eq!(graph.trace, nof.trace);
}

#[test]
fn flops_budget_stops_at_first_crossing() {
    let m = toy();
    let mut cfg = AllocationConfig::new(Budget::FlopsFraction(0.4));
    cfg.seed = 7;
    let res = allocate(&m, &cfg).unwrap();
    let drops: Vec<f64> = res.trace.iter().map(|s| s.flops_drop.unwrap()).collect();
    assert!(*drops.last().unwrap() >= 0.4);
    assert!(drops[..drops.len() - 1].iter().all(|&d| d < 0.4));

    let plan = make_plan(&res, &m, Criterion::MinWeight, 7).unwrap();
    let report = plan_flops_drop(m.arch().unwrap(), &plan).unwrap();
    assert_eq!(report.drop_fraction, res.flops_drop);
}

#[test]
fn plan_and_apply() {
    let m = toy();
    let cfg = AllocationConfig {
        ties: TieBreak::LowestIndex,
        ..AllocationConfig::new(Budget::FilterCount(5))
    };
    let res = allocate(&m, &cfg).unwrap();
    assert_eq!(res.total_removed(), 5);
    let plan = make_plan(&res, &m, Criterion::MinWeight, 0).unwrap();
    let out = apply_plan(&m, &plan).unwrap();
    let arch = out.arch.as_ref().unwrap();
    for l in m.arch().unwrap().layers() {
        let removed = res.counts[&l.name];
        let t = out.weights.get(&l.name).unwrap();
        assert_eq!(t.out_channels(), l.out_channels - removed);
        assert_eq!(arch.layer(&l.name).unwrap().out_channels, t.out_channels());
        assert_eq!(arch.layer(&l.name).unwrap().in_channels, t.in_channels());
    }
    // The pruned model binds against the emitted architecture and survives
    // a write/read cycle.
    let again = bind(out.weights.clone(), out.arch.clone().unwrap()).unwrap();
    let bytes = serialize_weights(again.weights());
    assert_eq!(srr_core::weights_io::parse_weights(&bytes).unwrap(), out.weights);
}
