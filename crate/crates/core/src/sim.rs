//! Discrete-event simulation of a task graph under preemptive fixed
//! priority scheduling. Used as an oracle for the latency bounds and as a
//! witness generator.
//!
//! Time is integral. Every task runs for its wcet. Resources run in
//! parallel; on each resource the ready task of the highest-priority thread
//! runs. Activations of one chain are served in release order, one at a
//! time, and a chain's nodes run strictly in sequence.

use std::collections::BTreeMap;

use num_integer::Integer;
use rand::Rng;

use crate::model::{TaskId, ThreadId};
use crate::taskgraph::{ChainActivation, TaskGraph};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ChainRelease {
    pub offset: u64,
    /// Release delay of activation k; missing entries are 0.
    pub jitter: Vec<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReleaseScenario {
    /// One entry per chain of the graph, in graph order.
    pub chains: Vec<ChainRelease>,
    /// Activations are released strictly before the horizon.
    pub horizon: u64,
}

/// Least common multiple of the chain periods; 1 for a graph without
/// periodic chains.
pub fn hyperperiod(graph: &TaskGraph) -> u64 {
    graph
        .chains
        .iter()
        .filter_map(|c| c.activation.period())
        .fold(1, |acc, p| acc.lcm(&p))
}

impl ReleaseScenario {
    /// Everything released at its offset with no jitter.
    pub fn synchronous(graph: &TaskGraph, horizon: u64) -> Self {
        Self::with_offsets(graph, &vec![0; graph.chains.len()], horizon, false)
    }

    /// Given offsets; with `late_first`, the first activation of each chain
    /// is delayed by its full jitter and later ones are on time.
    pub fn with_offsets(graph: &TaskGraph, offsets: &[u64], horizon: u64, late_first: bool) -> Self {
        let chains = graph
            .chains
            .iter()
            .zip(offsets)
            .map(|(c, &offset)| ChainRelease {
                offset,
                jitter: if late_first { vec![c.activation.jitter()] } else { Vec::new() },
            })
            .collect();
        ReleaseScenario { chains, horizon }
    }

    /// Offsets and jitter drawn uniformly: offset in `[0, P)`, every delay in
    /// `[0, J]`.
    pub fn random(graph: &TaskGraph, horizon: u64, rng: &mut impl Rng) -> Self {
        let chains = graph
            .chains
            .iter()
            .map(|c| {
                let p = c.activation.period().unwrap_or(horizon.max(1));
                let n = horizon.div_ceil(p.max(1)) as usize;
                ChainRelease {
                    offset: rng.gen_range(0..p.max(1)),
                    jitter: (0..n).map(|_| rng.gen_range(0..=c.activation.jitter())).collect(),
                }
            })
            .collect();
        ReleaseScenario { chains, horizon }
    }

    fn releases(&self, graph: &TaskGraph) -> Vec<Vec<u64>> {
        graph
            .chains
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let r = self.chains.get(i).cloned().unwrap_or_default();
                let delay = |k: usize| r.jitter.get(k).copied().unwrap_or(0);
                match c.activation {
                    ChainActivation::OneShot => vec![r.offset + delay(0)],
                    ChainActivation::Periodic(em) => (0..)
                        .map(|k| (k, r.offset + k as u64 * em.period))
                        .take_while(|&(_, t)| t < self.horizon)
                        .map(|(k, t)| t + delay(k))
                        .collect(),
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("task {0} is not mapped")]
    Unmapped(TaskId),
    #[error("thread {0} has no priority")]
    Unranked(ThreadId),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SimResult {
    /// End-to-end latency of every completed activation, per chain.
    pub chain_latencies: Vec<Vec<u64>>,
    /// Observed latencies per (chain, requirement index).
    pub requirement_latencies: BTreeMap<(usize, usize), Vec<u64>>,
    /// Some released activation did not finish within the simulated time.
    pub partial: bool,
    pub trace: Vec<String>,
}

impl SimResult {
    pub fn max_latency(&self, chain: usize, req: usize) -> Option<u64> {
        self.requirement_latencies.get(&(chain, req)).and_then(|l| l.iter().copied().max())
    }
}

struct Active {
    release: u64,
    node: usize,
    remaining: u64,
    /// When each requirement's range started, if it has.
    range_start: Vec<Option<u64>>,
}

/// Simulate releases before `scenario.horizon`, then keep running for one
/// more horizon to let the backlog drain.
pub fn simulate(
    graph: &TaskGraph,
    ranks: &BTreeMap<ThreadId, usize>,
    mapping: &BTreeMap<TaskId, String>,
    scenario: &ReleaseScenario,
) -> Result<SimResult, SimError> {
    let n = graph.chains.len();
    let mut prio: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut res: Vec<Vec<&str>> = Vec::with_capacity(n);
    for c in &graph.chains {
        let mut p = Vec::new();
        let mut r = Vec::new();
        for node in &c.nodes {
            p.push(*ranks.get(&node.thread).ok_or_else(|| SimError::Unranked(node.thread.clone()))?);
            r.push(mapping.get(&node.id).ok_or_else(|| SimError::Unmapped(node.id.clone()))?.as_str());
        }
        prio.push(p);
        res.push(r);
    }
    let releases = scenario.releases(graph);
    let end = scenario.horizon.saturating_mul(2);
    let mut out = SimResult {
        chain_latencies: vec![Vec::new(); n],
        ..Default::default()
    };
    let mut released = vec![0usize; n];
    let mut started = vec![0usize; n];
    let mut active: Vec<Option<Active>> = (0..n).map(|_| None).collect();
    let mut running: BTreeMap<&str, usize> = BTreeMap::new();
    let mut t = 0u64;
    loop {
        // Completions at t.
        for c in 0..n {
            let Some(a) = active[c].as_mut() else { continue };
            let chain = &graph.chains[c];
            while a.remaining == 0 && running.get(res[c][a.node]) == Some(&c) {
                let node = a.node;
                out.trace.push(format!("t={t} complete {}", chain.nodes[node].id));
                running.remove(res[c][node]);
                for (ri, req) in chain.requirements.iter().enumerate() {
                    if !req.range.is_empty() && req.range.end == node + 1 {
                        if let Some(s) = a.range_start[ri] {
                            out.requirement_latencies.entry((c, ri)).or_default().push(t - s);
                        }
                    }
                }
                if node + 1 == chain.nodes.len() {
                    out.chain_latencies[c].push(t - a.release);
                    active[c] = None;
                    break;
                }
                a.node += 1;
                a.remaining = chain.nodes[a.node].wcet;
                mark_range_start(chain, a, t);
            }
        }
        // Releases at t, then start queued activations.
        for c in 0..n {
            while released[c] < releases[c].len() && releases[c][released[c]] <= t {
                out.trace.push(format!("t={t} release {}", graph.chains[c].root));
                released[c] += 1;
            }
            if active[c].is_none() && started[c] < released[c] && !graph.chains[c].nodes.is_empty() {
                let chain = &graph.chains[c];
                let mut a = Active {
                    release: releases[c][started[c]],
                    node: 0,
                    remaining: chain.nodes[0].wcet,
                    range_start: vec![None; chain.requirements.len()],
                };
                mark_range_start(chain, &mut a, t);
                active[c] = Some(a);
                started[c] += 1;
            }
        }
        // Dispatch.
        let mut best: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for c in 0..n {
            if let Some(a) = &active[c] {
                let key = (prio[c][a.node], c);
                let r = res[c][a.node];
                if best.get(r).is_none_or(|b| key < *b) {
                    best.insert(r, key);
                }
            }
        }
        for (r, (_, c)) in &best {
            let prev = running.get(r).copied();
            if prev == Some(*c) {
                continue;
            }
            if let Some(p) = prev {
                let a = active[p].as_ref().unwrap_or_else(|| unreachable!());
                out.trace.push(format!("t={t} preempt {}", graph.chains[p].nodes[a.node].id));
            }
            let a = active[*c].as_ref().unwrap_or_else(|| unreachable!());
            out.trace.push(format!("t={t} dispatch {}", graph.chains[*c].nodes[a.node].id));
            running.insert(r, *c);
        }
        // Advance to the next event.
        let next_release = (0..n).filter_map(|c| releases[c].get(released[c]).copied()).min();
        let next_completion = running
            .values()
            .filter_map(|&c| active[c].as_ref().map(|a| t + a.remaining))
            .min();
        let Some(next) = [next_release, next_completion].into_iter().flatten().min() else {
            break;
        };
        if next > end {
            out.partial = true;
            break;
        }
        for &c in running.values() {
            if let Some(a) = active[c].as_mut() {
                a.remaining -= next - t;
            }
        }
        t = next;
    }
    if active.iter().any(Option::is_some) || (0..n).any(|c| started[c] < releases[c].len()) {
        out.partial = true;
    }
    Ok(out)
}

/// Record range starts for requirements whose first node just became ready.
/// A range that begins at the chain head is measured from the release.
fn mark_range_start(chain: &crate::taskgraph::Chain, a: &mut Active, t: u64) {
    for (ri, req) in chain.requirements.iter().enumerate() {
        if !req.range.is_empty() && req.range.start == a.node {
            a.range_start[ri] = Some(if a.node == 0 { a.release } else { t });
        }
    }
}

/// Largest latency observed per (chain, requirement) over a grid of release
/// offsets. Chain 0 is released at 0; every other chain at each multiple of
/// `step` below its period. The first activation of every chain comes late
/// by its full jitter, later ones on time. Each run covers two hyperperiods
/// plus the largest offset.
pub fn worst_observed(
    graph: &TaskGraph,
    ranks: &BTreeMap<ThreadId, usize>,
    mapping: &BTreeMap<TaskId, String>,
    step: u64,
) -> Result<BTreeMap<(usize, usize), u64>, SimError> {
    let step = step.max(1);
    let grids: Vec<Vec<u64>> = graph
        .chains
        .iter()
        .enumerate()
        .map(|(i, c)| match c.activation.period() {
            Some(p) if i > 0 => (0..p).step_by(step as usize).collect(),
            _ => vec![0],
        })
        .collect();
    let max_offset = grids.iter().filter_map(|g| g.last()).max().copied().unwrap_or(0);
    let horizon = 2 * hyperperiod(graph) + max_offset;
    let mut worst: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut offsets = vec![0; grids.len()];
    let mut idx = vec![0usize; grids.len()];
    loop {
        for (k, g) in grids.iter().enumerate() {
            offsets[k] = g[idx[k]];
        }
        let scenario = ReleaseScenario::with_offsets(graph, &offsets, horizon, true);
        let r = simulate(graph, ranks, mapping, &scenario)?;
        for (key, lat) in &r.requirement_latencies {
            if let Some(m) = lat.iter().max() {
                let w = worst.entry(*key).or_default();
                *w = (*w).max(*m);
            }
        }
        // Odometer over the grid.
        let mut k = grids.len();
        loop {
            if k == 0 {
                return Ok(worst);
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < grids[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
}
