//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use admit_core::cli::load_software;
use admit_core::dsl::{parse_contract, Contract};
use admit_core::model::{Configuration, PlatformModel, SystemModel, UpdateRequest};

pub fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus/automotive")
}

pub fn read(rel: &str) -> String {
    std::fs::read_to_string(corpus().join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

pub fn contract(rel: &str) -> Contract {
    parse_contract(&read(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

/// The deployed system before the update.
pub fn system() -> SystemModel {
    let c = corpus();
    SystemModel {
        software: load_software(&c.join("contracts"), &c.join("services.repo")).unwrap(),
        platform: PlatformModel::parse(&read("platform.txt")).unwrap(),
        config: Configuration::parse(&read("current.cfg")).unwrap(),
    }
}

/// Upload of S and L.
pub fn lane_update() -> Vec<UpdateRequest> {
    vec![
        UpdateRequest::add(contract("update/S.contract")),
        UpdateRequest::add(contract("update/L.contract")),
    ]
}

pub mod random {
    //! Seeded generators of small models, plus an exhaustive enumerator of
    //! well-formed configurations written independently of the store.

    use std::collections::{BTreeMap, BTreeSet};
    use std::fmt::Write;

    use admit_core::deps::connection_candidates;
    use admit_core::dsl::{load_software_model, SoftwareModel};
    use admit_core::model::{check_well_formed, Configuration, Connection, PlatformModel, TaskId, ThreadId};
    use itertools::Itertools;
    use rand::seq::SliceRandom;
    use rand::Rng;

    pub const SERVICES: [&str; 3] = ["s0", "s1", "s2"];

    pub struct Generated {
        pub software: SoftwareModel,
        pub platform: PlatformModel,
        pub contracts: Vec<String>,
    }

    fn task(out: &mut String, name: &str, rtype: &str, rng: &mut impl Rng) {
        let wcet = rng.gen_range(1..=6);
        let bcet = rng.gen_range(1..=wcet);
        let _ = write!(out, "\n      task {name} onto {rtype} wcet={wcet} bcet={bcet}");
    }

    fn rtype(dsp: bool, rng: &mut impl Rng) -> &'static str {
        if dsp && rng.gen_bool(0.25) {
            "dsp"
        } else {
            "cpu"
        }
    }

    /// A model of 2 to 5 components over three services. Component C0 is
    /// always a root; others become roots at random. Returns `None` when the
    /// part reachable from the roots has more than `max_threads` threads or
    /// more than six tasks.
    pub fn model(rng: &mut impl Rng, max_threads: usize) -> Option<Generated> {
        let mut repo = String::new();
        for s in SERVICES {
            let limit = if rng.gen_bool(0.3) { " max_clients 1" } else { "" };
            let _ = writeln!(repo, "service {s}{limit}\n  method f()\n  method g()");
        }
        let mut platform = String::from("resource R1 type cpu\n");
        if rng.gen_bool(0.3) {
            platform.push_str("resource R2 type cpu\n");
        }
        let dsp = rng.gen_bool(0.3);
        if dsp {
            platform.push_str("resource D1 type dsp\n");
        }

        let n = rng.gen_range(2..=5);
        let mut contracts = Vec::new();
        for i in 0..n {
            let provides: Vec<&str> = SERVICES.iter().copied().filter(|_| rng.gen_bool(0.35)).collect();
            let mut requires: Vec<&str> = SERVICES
                .iter()
                .copied()
                .filter(|s| !provides.contains(s) && rng.gen_bool(0.3))
                .collect();
            requires.shuffle(rng);
            let mut c = format!("component C{i}\n  services");
            for s in &requires {
                let _ = write!(c, "\n    requires {s}");
            }
            for s in &provides {
                let _ = write!(c, "\n    provides {s}");
            }
            c.push_str("\n  threads");
            let mut timings = Vec::new();
            let mut flows = Vec::new();
            let mut k = 0;
            for s in &provides {
                let _ = write!(c, "\n    thread serve_{s} on RPC {s}.f()");
                task(&mut c, &format!("t{k}"), rtype(dsp, rng), rng);
                k += 1;
                if !requires.is_empty() && rng.gen_bool(0.3) {
                    let _ = write!(c, "\n      RPC {}.f()", requires.choose(rng).unwrap());
                }
                if rng.gen_bool(0.3) {
                    let _ = write!(c, "\n    thread setup_{s} on RPC {s}.g()");
                    task(&mut c, &format!("t{k}"), rtype(dsp, rng), rng);
                    k += 1;
                    flows.push(format!("not {s}.f() until {s}.g()"));
                }
            }
            if i == 0 || rng.gen_bool(0.4) {
                let period = *[20u64, 40, 60].choose(rng).unwrap();
                let jitter = rng.gen_range(0..=3);
                let _ = write!(c, "\n    thread main on time (period={period} jitter={jitter})");
                task(&mut c, &format!("t{k}"), rtype(dsp, rng), rng);
                k += 1;
                for s in &requires {
                    let _ = write!(c, "\n      RPC {s}.f()");
                }
                if rng.gen_bool(0.5) {
                    task(&mut c, &format!("t{k}"), rtype(dsp, rng), rng);
                }
                if rng.gen_bool(0.7) {
                    timings.push(format!("timing {} main", rng.gen_range(5..=period)));
                }
                if let Some(s) = requires.first() {
                    if rng.gen_bool(0.3) {
                        timings.push(format!("timing {} {s}.f()", rng.gen_range(3..=period)));
                    }
                }
            }
            if let Some(s) = requires.first() {
                if rng.gen_bool(0.3) {
                    let _ = write!(c, "\n    thread boot on initialization\n      RPC {s}.g()");
                }
            }
            if !timings.is_empty() {
                c.push_str("\n  timings");
                for t in &timings {
                    let _ = write!(c, "\n    {t}");
                }
            }
            if !flows.is_empty() {
                c.push_str("\n  control_flow");
                for f in &flows {
                    let _ = write!(c, "\n    {f}");
                }
            }
            c.push('\n');
            contracts.push(c);
        }
        let software = load_software_model(&contracts, &repo).ok()?;
        let platform = PlatformModel::parse(&platform).ok()?;
        let reach = connection_candidates(&software, &software.roots()).ok()?.reachable;
        let threads: usize = reach.iter().map(|c| software.contracts[c].threads.len()).sum();
        let tasks: usize = reach.iter().map(|c| software.contracts[c].tasks().count()).sum();
        (threads <= max_threads && tasks <= 6).then_some(Generated {
            software,
            platform,
            contracts,
        })
    }

    /// Selected sets and connections of every well-formed configuration
    /// whose components are all reachable from the roots, with each
    /// requirement served once and interface client limits respected.
    /// Unreachable providers could only add threads that never run.
    pub fn structures(sw: &SoftwareModel) -> Vec<(BTreeSet<String>, BTreeSet<Connection>)> {
        let pinned = sw.roots();
        let others: Vec<&String> = sw.contracts.keys().filter(|c| !pinned.contains(*c)).collect();
        let mut out = Vec::new();
        for extra in others.iter().copied().powerset() {
            let selected: BTreeSet<String> = pinned.iter().cloned().chain(extra.into_iter().cloned()).collect();
            let reqs: Vec<(String, String)> = selected
                .iter()
                .flat_map(|c| sw.contracts[c].requires.iter().map(move |s| (c.clone(), s.clone())))
                .collect();
            let choices: Vec<Vec<Connection>> = reqs
                .iter()
                .map(|(c, s)| {
                    selected
                        .iter()
                        .filter(|p| *p != c && sw.contracts[*p].provides.contains(s))
                        .map(|p| Connection::new(c, s, p))
                        .collect()
                })
                .collect();
            for conns in product(&choices) {
                let connections: BTreeSet<Connection> = conns.into_iter().collect();
                let mut used = pinned.clone();
                let mut work: Vec<String> = pinned.iter().cloned().collect();
                while let Some(c) = work.pop() {
                    for k in connections.iter().filter(|k| k.client == c) {
                        if used.insert(k.provider.clone()) {
                            work.push(k.provider.clone());
                        }
                    }
                }
                let mut load: BTreeMap<(&str, &str), u32> = BTreeMap::new();
                for k in &connections {
                    *load.entry((&k.service, &k.provider)).or_default() += 1;
                }
                let within = load
                    .iter()
                    .all(|((s, _), n)| sw.services.max_clients(s).is_none_or(|max| *n <= max));
                if used == selected && within {
                    out.push((selected.clone(), connections));
                }
            }
        }
        out
    }

    /// Every well-formed configuration, in no particular order. Stops when
    /// `visit` returns false.
    pub fn enumerate(sw: &SoftwareModel, pf: &PlatformModel, mut visit: impl FnMut(&Configuration) -> bool) {
        for (selected, connections) in structures(sw) {
            let tasks: Vec<TaskId> = selected
                .iter()
                .flat_map(|c| sw.contracts[c].tasks().map(move |(_, t)| TaskId::new(c, &t.name)))
                .collect();
            let domains: Vec<Vec<String>> = tasks
                .iter()
                .map(|t| {
                    let rt = &sw.contracts[&t.component].task(&t.task).unwrap().resource_type;
                    pf.of_type(rt).map(|r| r.name.clone()).collect()
                })
                .collect();
            let threads: Vec<ThreadId> = selected
                .iter()
                .flat_map(|c| sw.contracts[c].threads.iter().map(move |t| ThreadId::new(c, &t.name)))
                .collect();
            for resources in product(&domains) {
                let mut cfg = Configuration {
                    selected: selected.clone(),
                    connections: connections.clone(),
                    mapping: tasks.iter().cloned().zip(resources).collect(),
                    priorities: threads.clone(),
                };
                assert!(check_well_formed(&cfg, sw, pf).unwrap().is_empty(), "{cfg}");
                for order in threads.iter().cloned().permutations(threads.len()) {
                    cfg.priorities = order;
                    if !visit(&cfg) {
                        return;
                    }
                }
            }
        }
    }

    /// A fixed-priority system of one to four periodic chains and at most
    /// six tasks on one or two processors, with load at most 1 on each.
    /// Some chains call a server component; the call position varies so that
    /// requirement ranges start at the chain head or mid-chain.
    pub struct Sched {
        pub software: SoftwareModel,
        pub cfg: Configuration,
        pub graph: admit_core::taskgraph::TaskGraph,
    }

    pub fn sched(rng: &mut impl Rng) -> Option<Sched> {
        use admit_core::taskgraph::{build_task_graph, Mode};
        use admit_core::timing::utilization;
        use num_rational::Ratio;

        let n = rng.gen_range(1..=4);
        let mut repo = String::new();
        let mut contracts = Vec::new();
        let mut connections = BTreeSet::new();
        for i in 0..n {
            let _ = writeln!(repo, "service s{i}\n  method f()");
            let calls = rng.gen_bool(0.4);
            let period = *[8u64, 12, 16, 24].choose(rng).unwrap();
            let jitter = rng.gen_range(0..=3);
            let mut steps: Vec<String> = (0..rng.gen_range(1..=2))
                .map(|k| {
                    let w = rng.gen_range(1..=4);
                    format!("task a{k} onto cpu wcet={w} bcet=1")
                })
                .collect();
            let mut c = format!("component C{i}\n  services");
            if calls {
                let _ = write!(c, "\n    requires s{i}");
                let at = rng.gen_range(0..=steps.len());
                steps.insert(at, format!("RPC s{i}.f()"));
                let w = rng.gen_range(1..=4);
                contracts.push(format!(
                    "component K{i} services provides s{i} threads thread serve on RPC s{i}.f() \
                     task b onto cpu wcet={w} bcet=1"
                ));
                connections.insert(Connection::new(&format!("C{i}"), &format!("s{i}"), &format!("K{i}")));
            }
            let _ = write!(c, "\n  threads\n    thread main on time (period={period} jitter={jitter})");
            for st in &steps {
                let _ = write!(c, "\n      {st}");
            }
            c.push_str("\n  timings\n    timing 1000 main");
            if calls {
                let _ = write!(c, "\n    timing 1000 s{i}.f()");
            }
            contracts.push(c);
        }
        let software = load_software_model(&contracts, &repo).unwrap();
        let resources: &[&str] = if rng.gen_bool(0.4) { &["R1", "R2"] } else { &["R1"] };
        let mut cfg = Configuration {
            selected: software.contracts.keys().cloned().collect(),
            connections,
            ..Default::default()
        };
        for (name, c) in &software.contracts {
            for (_, t) in c.tasks() {
                cfg.mapping.insert(TaskId::new(name, &t.name), resources.choose(rng).unwrap().to_string());
            }
            cfg.priorities.extend(c.threads.iter().map(|t| ThreadId::new(name, &t.name)));
        }
        cfg.priorities.shuffle(rng);
        if cfg.mapping.len() > 6 {
            return None;
        }
        let graph = build_task_graph(&software, &cfg, Mode::Normal).unwrap();
        let load = utilization(&graph, &cfg.mapping).unwrap();
        load.values().all(|u| *u <= Ratio::from_integer(1)).then_some(Sched { software, cfg, graph })
    }

    /// Cartesian product; one empty tuple for no factors.
    fn product<T: Clone>(factors: &[Vec<T>]) -> Vec<Vec<T>> {
        if factors.is_empty() {
            return vec![Vec::new()];
        }
        factors.iter().map(|f| f.iter().cloned()).multi_cartesian_product().collect()
    }
}
