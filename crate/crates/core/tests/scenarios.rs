//! End-to-end behaviour on the automotive corpus.

mod common;

use std::collections::BTreeSet;

use admit_core::cf::check_not_until;
use admit_core::model::{apply_update, Configuration, Connection, ThreadId, UpdateRequest};
use admit_core::negotiate::{load_requests, negotiate, validate, Answer, Options, Viewpoint};
use admit_core::sim::{simulate, worst_observed, ReleaseScenario};
use admit_core::store::{Constraint, Literal};
use admit_core::taskgraph::{build_task_graph, build_task_graphs, Mode};
use admit_core::timing::{check_timing, utilization, Bound, InterferenceModel};
use num_rational::Ratio;
use proptest::prelude::*;

const MODELS: [InterferenceModel; 2] = [InterferenceModel::BusyWindow, InterferenceModel::SingleBlocking];

fn run(requests: &[UpdateRequest], model: InterferenceModel) -> (Answer, String) {
    let (a, t) = negotiate(&common::system(), requests, Options { model, ..Options::default() }).unwrap();
    (a, t.to_string())
}

fn accepted(a: &Answer) -> &Configuration {
    match a {
        Answer::Yes { config, .. } => config,
        Answer::No { .. } => panic!("expected yes, got {a}"),
    }
}

fn accepted_lane_update() -> (admit_core::dsl::SoftwareModel, Configuration) {
    let (a, _) = run(&common::lane_update(), InterferenceModel::SingleBlocking);
    let sw = admit_core::model::apply_updates(&common::system().software, &common::lane_update()).unwrap();
    (sw, accepted(&a).clone())
}

#[test]
fn deployed_system_is_valid_in_both_models() {
    let sys = common::system();
    for model in MODELS {
        let report = validate(&sys.software, &sys.platform, &sys.config, model).unwrap();
        let bounds: Vec<(String, Bound)> =
            report.verdicts.iter().map(|v| (v.req.target.to_string(), v.computed)).collect();
        assert!(bounds.contains(&("park_assist".into(), Bound::Finite(30))), "{bounds:?}");
        assert!(bounds.contains(&("object_recognition.get()".into(), Bound::Finite(10))), "{bounds:?}");
        assert_eq!(report.utilization["CPU1"], Ratio::new(3, 20));
    }
}

#[test]
fn lane_update_is_accepted_under_single_blocking() {
    let (a, trace) = run(&common::lane_update(), InterferenceModel::SingleBlocking);
    let cfg = accepted(&a);
    assert!(cfg.connections.contains(&Connection::new("T", "object_recognition", "O1")));
    assert!(cfg.connections.contains(&Connection::new("L", "object_recognition", "O2")));
    // or1's thread sits below every lane thread.
    let or1 = cfg.rank(&ThreadId::new("O1", "object_recognition_get")).unwrap();
    for t in ["L.lane_assist", "O2.object_masking_get", "O2.object_recognition_get", "S.steering_set_angle"] {
        let (c, th) = t.split_once('.').unwrap();
        assert!(cfg.rank(&ThreadId::new(c, th)).unwrap() < or1, "{t}");
    }
    assert!(trace.contains("not all {O1.object_recognition_get > L.lane_assist}"), "{trace}");
    assert!(trace.contains("accept candidate 1"));
}

#[test]
fn lane_update_is_rejected_under_busy_window() {
    let (a, trace) = run(&common::lane_update(), InterferenceModel::BusyWindow);
    assert!(matches!(a, Answer::No { .. }), "{a}");
    assert!(trace.contains("timing 150 park_assist: bound=170 FAIL"), "{trace}");
    assert!(trace.ends_with("exhausted after 2 candidates\n"), "{trace}");
}

#[test]
fn lane_with_or1_overloads_regardless_of_priorities() {
    let (sw, mut cfg) = accepted_lane_update();
    cfg.connections.remove(&Connection::new("L", "object_recognition", "O2"));
    cfg.connections.remove(&Connection::new("T", "object_recognition", "O1"));
    cfg.connections.insert(Connection::new("L", "object_recognition", "O1"));
    cfg.connections.insert(Connection::new("T", "object_recognition", "O2"));
    let g = build_task_graph(&sw, &cfg, Mode::Normal).unwrap();
    let lane = g.chain(&ThreadId::new("L", "lane_assist")).unwrap();
    let park = g.chain(&ThreadId::new("P", "park_assist")).unwrap();
    let load = |c| admit_core::timing::chain_utilization(c, &cfg.mapping).unwrap()["CPU1"];
    assert_eq!(load(lane), Ratio::new(9, 10));
    assert_eq!(load(park), Ratio::new(3, 20));
    assert_eq!(utilization(&g, &cfg.mapping).unwrap()["CPU1"], Ratio::new(21, 20));
    let graphs = build_task_graphs(&sw, &cfg).unwrap();
    let report = check_timing(&graphs, &cfg, InterferenceModel::SingleBlocking).unwrap();
    assert_eq!(report.overloaded, vec!["CPU1".to_string()]);
    assert!(report.feedback.iter().all(|k| matches!(k, Constraint::ForbidConjunction(_))));
    // The overload feedback holds for every priority order.
    cfg.priorities.reverse();
    let again = check_timing(&graphs, &cfg, InterferenceModel::SingleBlocking).unwrap();
    assert_eq!(again.feedback, report.feedback);
}

#[test]
fn park_chain_witness_reaches_170() {
    let (sw, cfg) = accepted_lane_update();
    let g = build_task_graph(&sw, &cfg, Mode::Normal).unwrap();
    let park = g.chains.iter().position(|c| c.root == ThreadId::new("P", "park_assist")).unwrap();
    let r = simulate(&g, &cfg.ranks(), &cfg.mapping, &ReleaseScenario::synchronous(&g, 200)).unwrap();
    assert_eq!(r.chain_latencies[park][0], 170);
    assert!(r.trace.contains(&"t=100 release L.lane_assist".to_string()));
    assert!(r.trace.contains(&"t=170 complete P.p2".to_string()), "{:?}", r.trace);
    let worst = worst_observed(&g, &cfg.ranks(), &cfg.mapping, 1).unwrap();
    assert_eq!(worst[&(park, 0)], 170);
    let lane = g.chains.iter().position(|c| c.root == ThreadId::new("L", "lane_assist")).unwrap();
    assert_eq!(worst[&(lane, 0)], 50);
}

#[test]
fn removing_o2_rewires_t_to_o1() {
    let reqs = load_requests(&common::corpus().join("remove_o2.req")).unwrap();
    for model in MODELS {
        let (a, _) = run(&reqs, model);
        let cfg = accepted(&a);
        assert!(!cfg.selected.contains("O2"));
        assert!(cfg.connections.contains(&Connection::new("T", "object_recognition", "O1")));
        let Answer::Yes { timing, .. } = &a else { unreachable!() };
        let park = timing.verdicts.iter().find(|v| v.req.target.to_string() == "park_assist").unwrap();
        assert_eq!(park.computed, Bound::Finite(70));
    }
}

#[test]
fn empty_request_keeps_the_configuration() {
    let reqs = load_requests(&common::corpus().join("empty.req")).unwrap();
    assert!(reqs.is_empty());
    let (a, trace) = run(&reqs, InterferenceModel::BusyWindow);
    assert_eq!(accepted(&a), &common::system().config);
    assert!(trace.contains("accept candidate 0"));
}

#[test]
fn init_requirement_holds_before_and_after_update() {
    let sys = common::system();
    assert!(check_not_until(&sys.software, &sys.config).passed());
    let (sw, cfg) = accepted_lane_update();
    let r = check_not_until(&sw, &cfg);
    assert!(r.passed(), "{:?}", r.violations);
}

#[test]
fn mutant_without_init_is_rejected_by_control_flow() {
    let reqs = load_requests(&common::corpus().join("mutant/update_p.req")).unwrap();
    let sys = common::system();
    let sw = apply_update(&sys.software, &reqs[0]).unwrap();
    let mut cfg = sys.config.clone();
    cfg.priorities.retain(|t| t != &ThreadId::new("P", "init"));
    let r = check_not_until(&sw, &cfg);
    assert_eq!(
        r.violations.iter().map(ToString::to_string).collect::<Vec<_>>(),
        vec!["control_flow: T.trajectory_calculation.get() reachable before trajectory_calculation.init() via P/park_assist"]
    );
    let forbidden = Constraint::forbid([Literal::Conn(Connection::new("P", "trajectory_calculation", "T"))]);
    assert_eq!(r.feedback, vec![forbidden.clone()]);
    assert!(!forbidden.satisfied_by(&cfg));
    assert_eq!(
        validate(&sw, &sys.platform, &cfg, InterferenceModel::BusyWindow).unwrap_err().0,
        Viewpoint::ControlFlow
    );
    for model in MODELS {
        let (a, trace) = run(&reqs, model);
        assert!(matches!(a, Answer::No { .. }), "{a}");
        assert!(trace.contains("control-flow fail"), "{trace}");
    }
}

#[test]
fn never_activated_tasks_are_pruned() {
    let sys = common::system();
    let before = build_task_graph(&sys.software, &sys.config, Mode::Normal).unwrap();
    assert!(!before.contains_task("O2", "om"));
    let (sw, cfg) = accepted_lane_update();
    let after = build_task_graph(&sw, &cfg, Mode::Normal).unwrap();
    assert_eq!(after.nodes().filter(|(_, n)| n.id.component == "O2" && n.id.task == "om").count(), 1);
}

#[test]
fn negotiation_is_deterministic() {
    let c = common::corpus();
    for req in ["update/add_lane_assist.req", "remove_o2.req", "empty.req", "mutant/update_p.req"] {
        let reqs = load_requests(&c.join(req)).unwrap();
        for model in MODELS {
            let (a1, t1) = run(&reqs, model);
            let (a2, t2) = run(&reqs, model);
            assert_eq!(a1.to_string(), a2.to_string(), "{req}");
            assert_eq!(t1, t2, "{req}");
        }
    }
}

#[test]
fn accepted_configurations_revalidate() {
    let (sw, cfg) = accepted_lane_update();
    let sys = common::system();
    let text = cfg.to_string();
    let parsed = Configuration::parse(&text).unwrap();
    assert_eq!(parsed, cfg);
    assert!(validate(&sw, &sys.platform, &parsed, InterferenceModel::SingleBlocking).is_ok());
}

fn arb_config() -> impl Strategy<Value = Configuration> {
    let name = "[A-Z][a-z0-9_]{0,5}";
    (
        prop::collection::btree_set(name, 0..4),
        prop::collection::btree_set((name, "[a-z][a-z_]{0,6}", name), 0..4),
        prop::collection::btree_map((name, "[a-z][a-z0-9]{0,4}"), name, 0..4),
        prop::collection::btree_set((name, "[a-z][a-z_]{0,6}"), 0..5),
    )
        .prop_map(|(selected, conns, mapping, threads)| Configuration {
            selected,
            connections: conns.iter().map(|(c, s, p)| Connection::new(c, s, p)).collect(),
            mapping: mapping
                .into_iter()
                .map(|((c, t), r)| (admit_core::model::TaskId::new(&c, &t), r))
                .collect(),
            priorities: threads.iter().map(|(c, t)| ThreadId::new(c, t)).collect(),
        })
}

proptest! {
    #[test]
    fn configuration_text_round_trips(cfg in arb_config()) {
        prop_assert_eq!(Configuration::parse(&cfg.to_string()).unwrap(), cfg);
    }

    #[test]
    fn applying_updates_leaves_the_input_untouched(pick in 0usize..3) {
        let sys = common::system();
        let before = sys.software.clone();
        let req = match pick {
            0 => UpdateRequest::add(common::contract("update/S.contract")),
            1 => UpdateRequest::remove("O2"),
            _ => UpdateRequest::update(common::contract("mutant/P.contract")),
        };
        let after = apply_update(&sys.software, &req).unwrap();
        prop_assert_eq!(&sys.software, &before);
        prop_assert_ne!(&after, &before);
        let names: BTreeSet<&String> = after.contracts.keys().collect();
        prop_assert_eq!(names.contains(&"O2".to_string()), pick != 1);
    }
}
