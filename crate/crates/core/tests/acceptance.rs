//! One PASS/FAIL line per acceptance criterion. Exits non-zero on any
//! failure.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};

use admit_core::cf::check_not_until;
use admit_core::deps::{connection_candidates, count_solutions};
use admit_core::dsl::{parse_contract, render_contract, Contract};
use admit_core::model::{apply_update, apply_updates, Configuration, Connection, SystemModel, ThreadId};
use admit_core::negotiate::{load_requests, negotiate, validate, Answer, Options};
use admit_core::sim::{hyperperiod, simulate, worst_observed, ReleaseScenario};
use admit_core::store::{Constraint, Literal};
use admit_core::taskgraph::{build_task_graph, build_task_graphs, Mode};
use admit_core::timing::{chain_latency_bound, chain_utilization, check_timing, Bound, InterferenceModel};
use common::random;
use num_rational::Ratio;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Check = Result<(), String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

const MODELS: [InterferenceModel; 2] = [InterferenceModel::BusyWindow, InterferenceModel::SingleBlocking];

fn negotiate_with(requests: &[admit_core::model::UpdateRequest], model: InterferenceModel) -> (Answer, String) {
    let (a, t) = negotiate(&common::system(), requests, Options { model, ..Options::default() }).unwrap();
    (a, t.to_string())
}

fn bound_of(answer: &Answer, target: &str) -> Option<Bound> {
    let Answer::Yes { timing, .. } = answer else { return None };
    timing.verdicts.iter().find(|v| v.req.target.to_string() == target).map(|v| v.computed)
}

fn dsl_round_trip() -> Check {
    for (src, golden) in [
        ("contracts/T.contract", "golden/T.json"),
        ("contracts/P.contract", "golden/P.json"),
        ("update/L.contract", "golden/L.json"),
    ] {
        let c = common::contract(src);
        let again = parse_contract(&render_contract(&c)).map_err(|e| format!("{src}: {e}"))?;
        ensure!(again == c, "{src} changes across render and parse");
        let expected: Contract = serde_json::from_str(&common::read(golden)).map_err(|e| e.to_string())?;
        ensure!(expected == c, "{src} differs from {golden}");
    }
    Ok(())
}

fn dependency_space() -> Check {
    let sw = apply_updates(&common::system().software, &common::lane_update()).map_err(|e| e.to_string())?;
    let cands = connection_candidates(&sw, &sw.roots()).map_err(|e| e.to_string())?;
    let must = BTreeSet::from([
        Connection::new("P", "trajectory_calculation", "T"),
        Connection::new("L", "object_masking", "O2"),
        Connection::new("L", "steering", "S"),
    ]);
    ensure!(cands.must == must, "must = {:?}", cands.must);
    let both = BTreeSet::from(["O1".to_string(), "O2".to_string()]);
    let may = BTreeMap::from([
        (("L".to_string(), "object_recognition".to_string()), both.clone()),
        (("T".to_string(), "object_recognition".to_string()), both),
    ]);
    ensure!(cands.may == may, "may = {:?}", cands.may);
    let n = count_solutions(&cands, &sw.services);
    ensure!(n == 2, "{n} solutions");
    Ok(())
}

fn load_reproduction() -> Check {
    let sw = apply_updates(&common::system().software, &common::lane_update()).map_err(|e| e.to_string())?;
    let (a, _) = negotiate_with(&common::lane_update(), InterferenceModel::SingleBlocking);
    let Answer::Yes { config, .. } = a else { return Err("lane update rejected".into()) };
    let mut cfg = config;
    for (c, p) in [("L", "O2"), ("T", "O1")] {
        cfg.connections.remove(&Connection::new(c, "object_recognition", p));
    }
    cfg.connections.insert(Connection::new("L", "object_recognition", "O1"));
    cfg.connections.insert(Connection::new("T", "object_recognition", "O2"));
    let g = build_task_graph(&sw, &cfg, Mode::Normal).map_err(|e| e.to_string())?;
    let load = |root: ThreadId| {
        let ch = g.chain(&root).expect("chain");
        chain_utilization(ch, &cfg.mapping).unwrap()["CPU1"]
    };
    let lane = load(ThreadId::new("L", "lane_assist"));
    let park = load(ThreadId::new("P", "park_assist"));
    ensure!(lane == Ratio::new(9, 10), "lane load {lane}");
    ensure!(park == Ratio::new(3, 20), "park load {park}");
    let graphs = build_task_graphs(&sw, &cfg).map_err(|e| e.to_string())?;
    let mut feedback = None;
    for reversed in [false, true] {
        if reversed {
            cfg.priorities.reverse();
        }
        let r = check_timing(&graphs, &cfg, InterferenceModel::SingleBlocking).map_err(|e| e.to_string())?;
        ensure!(r.overloaded == ["CPU1"], "overloaded {:?}", r.overloaded);
        ensure!(
            r.feedback.iter().all(|k| matches!(k, Constraint::ForbidConjunction(_))),
            "feedback depends on priorities"
        );
        ensure!(feedback.as_ref().is_none_or(|f| *f == r.feedback), "feedback changes with priorities");
        feedback = Some(r.feedback);
    }
    let forbid = &feedback.unwrap()[0];
    ensure!(!forbid.satisfied_by(&cfg), "nogood does not exclude the configuration");
    Ok(())
}

fn single_blocking_negotiation() -> Check {
    let (a, trace) = negotiate_with(&common::lane_update(), InterferenceModel::SingleBlocking);
    ensure!(a.is_yes(), "answer:\n{a}");
    for t in ["L.lane_assist", "O2.object_masking_get", "O2.object_recognition_get", "S.steering_set_angle"] {
        let lit = format!("not all {{O1.object_recognition_get > {t}}}");
        ensure!(trace.contains(&lit), "no constraint `{lit}`");
    }
    for (target, want) in [("lane_assist", 50), ("park_assist", 120), ("object_recognition.get()", 100)] {
        let got = bound_of(&a, target);
        ensure!(got == Some(Bound::Finite(want)), "{target}: {got:?}, want {want}");
    }
    Ok(())
}

fn sound_mode_negotiation() -> Check {
    let (a, trace) = negotiate_with(&common::lane_update(), InterferenceModel::BusyWindow);
    ensure!(!a.is_yes(), "accepted:\n{a}");
    ensure!(trace.contains("timing 150 park_assist: bound=170 FAIL"), "park bound is not 170");
    ensure!(trace.contains("exhausted after"), "search did not exhaust");
    // Witness on the single-blocking acceptance.
    let (a, _) = negotiate_with(&common::lane_update(), InterferenceModel::SingleBlocking);
    let Answer::Yes { config, .. } = a else { return Err("no single-blocking config".into()) };
    let sw = apply_updates(&common::system().software, &common::lane_update()).map_err(|e| e.to_string())?;
    let g = build_task_graph(&sw, &config, Mode::Normal).map_err(|e| e.to_string())?;
    let park = g.chains.iter().position(|c| c.root == ThreadId::new("P", "park_assist")).ok_or("no park chain")?;
    let len = g.chains[park].nodes.len();
    let bound = chain_latency_bound(&g, park, 0..len, &config.ranks(), &config.mapping, InterferenceModel::BusyWindow)
        .map_err(|e| e.to_string())?;
    ensure!(bound == Bound::Finite(170), "park bound {bound}");
    let r = simulate(&g, &config.ranks(), &config.mapping, &ReleaseScenario::synchronous(&g, 200))
        .map_err(|e| e.to_string())?;
    let seen = r.chain_latencies[park].iter().max().copied();
    ensure!(seen == Some(170), "simulated park latency {seen:?}");
    Ok(())
}

fn control_flow() -> Check {
    let sys = common::system();
    ensure!(check_not_until(&sys.software, &sys.config).passed(), "fails before the update");
    let (a, _) = negotiate_with(&common::lane_update(), InterferenceModel::SingleBlocking);
    let Answer::Yes { config, .. } = a else { return Err("lane update rejected".into()) };
    let sw = apply_updates(&sys.software, &common::lane_update()).map_err(|e| e.to_string())?;
    ensure!(check_not_until(&sw, &config).passed(), "fails after the update");

    let reqs = load_requests(&common::corpus().join("mutant/update_p.req")).map_err(|e| e.to_string())?;
    let mutant = apply_update(&sys.software, &reqs[0]).map_err(|e| e.to_string())?;
    let mut cfg = sys.config.clone();
    cfg.priorities.retain(|t| t != &ThreadId::new("P", "init"));
    let r = check_not_until(&mutant, &cfg);
    ensure!(!r.passed(), "mutant passes");
    let forbid = Constraint::forbid([Literal::Conn(Connection::new("P", "trajectory_calculation", "T"))]);
    ensure!(r.feedback == [forbid], "feedback {:?}", r.feedback);
    for model in MODELS {
        let (a, _) = negotiate_with(&reqs, model);
        ensure!(!a.is_yes(), "mutant accepted under {model}");
    }
    Ok(())
}

fn baseline() -> Check {
    let sys = common::system();
    for model in MODELS {
        let r = validate(&sys.software, &sys.platform, &sys.config, model).map_err(|(vp, d)| format!("{vp}: {d:?}"))?;
        let find = |mode: Mode, target: &str| {
            r.verdicts.iter().find(|v| v.mode == mode && v.req.target.to_string() == target).map(|v| v.computed)
        };
        ensure!(find(Mode::Normal, "park_assist") == Some(Bound::Finite(30)), "{model}: park");
        ensure!(find(Mode::Normal, "object_recognition.get()") == Some(Bound::Finite(10)), "{model}: or2");
        ensure!(r.verdicts.iter().all(|v| v.pass), "{model}: failing verdict");
    }
    let graphs = build_task_graphs(&sys.software, &sys.config).map_err(|e| e.to_string())?;
    ensure!(graphs.iter().any(|g| g.mode == Mode::Initialization), "no initialization graph");
    Ok(())
}

fn soundness_vs_simulation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut scen = ChaCha8Rng::seed_from_u64(3);
    let mut systems = 0;
    while systems < 200 {
        let Some(s) = random::sched(&mut rng) else { continue };
        systems += 1;
        let ranks = s.cfg.ranks();
        let step = s.graph.chains.iter().filter_map(|c| c.activation.period()).max().unwrap() / 4;
        let mut seen = worst_observed(&s.graph, &ranks, &s.cfg.mapping, step).map_err(|e| e.to_string())?;
        let horizon = 2 * hyperperiod(&s.graph);
        for _ in 0..5 {
            let r = simulate(&s.graph, &ranks, &s.cfg.mapping, &ReleaseScenario::random(&s.graph, horizon, &mut scen))
                .map_err(|e| e.to_string())?;
            for (k, lats) in r.requirement_latencies {
                let m = seen.entry(k).or_default();
                *m = (*m).max(lats.into_iter().max().unwrap_or(0));
            }
        }
        for ((c, r), lat) in seen {
            let range = s.graph.chains[c].requirements[r].range.clone();
            let b = chain_latency_bound(&s.graph, c, range, &ranks, &s.cfg.mapping, InterferenceModel::BusyWindow)
                .map_err(|e| e.to_string())?;
            ensure!(!matches!(b, Bound::Finite(v) if lat > v), "system {systems} chain {c} req {r}: observed {lat} > {b}");
        }
    }
    Ok(())
}

fn no_false_negatives() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    while checked < 50 {
        let Some(m) = random::model(&mut rng, 6) else { continue };
        let mut any = false;
        random::enumerate(&m.software, &m.platform, |_| {
            any = true;
            false
        });
        if !any {
            continue;
        }
        let model = MODELS[checked % 2];
        checked += 1;
        let sys = SystemModel { software: m.software.clone(), platform: m.platform.clone(), config: Configuration::default() };
        let (a, _) = negotiate(&sys, &[], Options { model, ..Options::default() }).map_err(|e| e.to_string())?;
        let mut witness = false;
        random::enumerate(&m.software, &m.platform, |c| {
            witness = validate(&m.software, &m.platform, c, model).is_ok();
            !witness
        });
        ensure!(a.is_yes() == witness, "model {checked}: answer {} but brute force {witness}", a.is_yes());
    }
    Ok(())
}

fn determinism() -> Check {
    for req in ["update/add_lane_assist.req", "remove_o2.req", "empty.req", "mutant/update_p.req"] {
        let reqs = load_requests(&common::corpus().join(req)).map_err(|e| e.to_string())?;
        for model in MODELS {
            let (a1, t1) = negotiate_with(&reqs, model);
            let (a2, t2) = negotiate_with(&reqs, model);
            ensure!(a1.to_string() == a2.to_string() && t1 == t2, "{req} under {model} differs");
        }
    }
    Ok(())
}

fn pruning() -> Check {
    let sys = common::system();
    let before = build_task_graph(&sys.software, &sys.config, Mode::Normal).map_err(|e| e.to_string())?;
    ensure!(!before.contains_task("O2", "om"), "om present before the update");
    let (a, _) = negotiate_with(&common::lane_update(), InterferenceModel::SingleBlocking);
    let Answer::Yes { config, .. } = a else { return Err("lane update rejected".into()) };
    let sw = apply_updates(&sys.software, &common::lane_update()).map_err(|e| e.to_string())?;
    let after = build_task_graph(&sw, &config, Mode::Normal).map_err(|e| e.to_string())?;
    let n = after.nodes().filter(|(_, n)| n.id.component == "O2" && n.id.task == "om").count();
    ensure!(n == 1, "om appears {n} times after the update");
    Ok(())
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("1 dsl round-trip and golden ASTs", dsl_round_trip),
        ("2 dependency space has two solutions", dependency_space),
        ("3 load 90%/15% and priority-independent nogood", load_reproduction),
        ("4 single-blocking negotiation accepts", single_blocking_negotiation),
        ("5 busy-window rejects with witness 170", sound_mode_negotiation),
        ("6 control flow before, after and on the mutant", control_flow),
        ("7 pre-update baseline in both models", baseline),
        ("8a busy-window bounds 200 simulated systems", soundness_vs_simulation),
        ("8b no false negatives on 50 models", no_false_negatives),
        ("8c determinism on every corpus request", determinism),
        ("9 never-activated task pruning", pruning),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match result {
            Ok(()) => println!("PASS {name}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
