//! Timing viewpoint: per-resource load, chain latency bounds under static
//! priority preemptive scheduling, feedback constraints and priority
//! synthesis.
//!
//! A task's priority is that of its thread. For a node range of a chain, the
//! interferers are the tasks of *other* chains of the same mode that run on a
//! resource hosting some range task and whose thread is above the lowest
//! priority thread of the range. Two interference models are offered:
//!
//! * `SingleBlocking`: every interferer delays the range once.
//! * `BusyWindow`: least fixed point of `w = C + Σ η_j(w)·C_j`; a range that
//!   spans a whole periodic chain also accounts for its own backlog.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::model::{Configuration, TaskId, ThreadId};
use crate::store::{Constraint, Literal, OrderConstraints};
use crate::taskgraph::{Chain, ChainActivation, EventModel, LatencyReq, Mode, TaskGraph};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InterferenceModel {
    #[default]
    BusyWindow,
    SingleBlocking,
}

impl fmt::Display for InterferenceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InterferenceModel::BusyWindow => "busy-window",
            InterferenceModel::SingleBlocking => "single-blocking",
        })
    }
}

impl FromStr for InterferenceModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "busy-window" => Ok(InterferenceModel::BusyWindow),
            "single-blocking" => Ok(InterferenceModel::SingleBlocking),
            other => Err(format!("unknown interference model `{other}` (busy-window | single-blocking)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Bound {
    Finite(u64),
    Unbounded,
}

impl Bound {
    pub fn within(&self, limit: u64) -> bool {
        matches!(self, Bound::Finite(b) if *b <= limit)
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::Finite(b) => write!(f, "{b}"),
            Bound::Unbounded => f.write_str("unbounded"),
        }
    }
}

/// Values beyond this are treated as divergence.
const DIVERGED: u64 = 1 << 48;

/// Fixed-point iteration cap for a graph: `10·ceil(Σ wcet / min period)`,
/// never below 1000.
pub fn iteration_cap(graph: &TaskGraph) -> u64 {
    let total: u64 = graph.chains.iter().map(Chain::total_wcet).sum();
    let min_p = graph.chains.iter().filter_map(|c| c.activation.period()).min();
    let scaled = min_p.map_or(0, |p| 10 * total.div_ceil(p));
    scaled.max(1000)
}

/// Where an analyzed range starts, which decides what it can wait for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RangeStart {
    /// Nothing of its own chain can precede it: the head of a one-shot
    /// chain.
    Isolated,
    /// Head of a periodic chain, measured from release. It also waits for
    /// earlier activations still in progress; `chain_wcet` is the demand of
    /// one whole activation.
    Head { em: EventModel, chain_wcet: u64 },
    /// Inside a chain, measured from when its first node becomes ready.
    /// Higher-priority work released earlier may still be pending then.
    /// `own` is the chain's activation and per-activation demand on the
    /// range's resource when there is exactly one; with several, the
    /// interferers' widened jitter already covers carried-in work.
    Inner { own: Option<(ChainActivation, u64)> },
}

/// Least fixed point of `f` from `start`, or `None` past the cap or the
/// divergence threshold.
fn settle(start: u64, cap: u64, f: impl Fn(u64) -> u64) -> Option<u64> {
    let mut w = start;
    for _ in 0..cap {
        let next = f(w);
        if next == w {
            return Some(w);
        }
        if next > DIVERGED {
            return None;
        }
        w = next;
    }
    None
}

/// Latency bound of a range of `c_range` work; `interferers` lists
/// activation pattern and per-activation demand.
///
/// A head range examines successive activations: the q-th one finishes
/// after `q-1` whole activations plus the range itself, until a whole
/// activation completes before the next release. An inner range on one
/// resource completes within the busy period it became ready in, and became
/// ready at most `L - c_range` into it, where `L` bounds that busy period;
/// interferer releases are counted over the window stretched by that much.
pub fn latency_bound(
    c_range: u64,
    start: RangeStart,
    interferers: &[(ChainActivation, u64)],
    model: InterferenceModel,
    cap: u64,
) -> Bound {
    let demand = |w: u64| interferers.iter().map(|(a, c)| a.eta(w) * c).sum::<u64>();
    if model == InterferenceModel::SingleBlocking {
        return Bound::Finite(c_range + interferers.iter().map(|(_, c)| c).sum::<u64>());
    }
    let fixed_point = |base: u64| settle(base, cap, |w| base + demand(w));
    let finite = |w: Option<u64>| w.map_or(Bound::Unbounded, Bound::Finite);
    match start {
        RangeStart::Isolated => finite(fixed_point(c_range)),
        RangeStart::Inner { .. } if interferers.is_empty() => Bound::Finite(c_range),
        RangeStart::Inner { own: None } => finite(fixed_point(c_range)),
        RangeStart::Inner { own: Some((activation, own)) } => {
            let Some(busy) = settle(own.max(c_range), cap, |l| activation.eta(l) * own + demand(l)) else {
                return Bound::Unbounded;
            };
            let lead = busy - c_range;
            let carried = settle(c_range, cap, |w| c_range + demand(w + lead));
            Bound::Finite(carried.map_or(busy, |w| w.min(busy)))
        }
        RangeStart::Head { em, chain_wcet } => {
            let mut worst = 0;
            for q in 1..=cap {
                let before = (q - 1) * chain_wcet;
                let Some(w) = fixed_point(before + c_range) else {
                    return Bound::Unbounded;
                };
                // The q-th release comes at least (q-1)·P - J after the first.
                let r = if q == 1 { w } else { w.saturating_sub((q - 1) * em.period - em.jitter) };
                worst = worst.max(r);
                let whole = if c_range == chain_wcet { Some(w) } else { fixed_point(before + chain_wcet) };
                let Some(whole) = whole else {
                    return Bound::Unbounded;
                };
                if whole <= (q * em.period).saturating_sub(em.jitter) {
                    return Bound::Finite(worst);
                }
            }
            Bound::Unbounded
        }
    }
}

/// Rounds of the global exposure iteration before giving up.
const EXPOSURE_ROUNDS: usize = 100;

fn resources_of<'m>(chain: &Chain, mapping: &'m BTreeMap<TaskId, String>) -> BTreeSet<&'m String> {
    chain.nodes.iter().filter_map(|n| mapping.get(&n.id)).collect()
}

/// Whether a chain's arrivals on `resources` follow its own event model: the
/// resources are a single one and the chain never leaves it. Otherwise its
/// tasks there can become ready at any point of an activation.
fn follows_release(chain: &Chain, resources: &BTreeSet<&String>, mapping: &BTreeMap<TaskId, String>) -> bool {
    resources.len() == 1 && chain.nodes.iter().all(|n| mapping.get(&n.id).is_some_and(|r| resources.contains(r)))
}

/// Activation pattern of `chain`'s work on `resources`, given its exposure
/// window; `None` when that window is unbounded.
fn arrivals(
    chain: &Chain,
    window: Option<u64>,
    resources: &BTreeSet<&String>,
    mapping: &BTreeMap<TaskId, String>,
) -> Option<ChainActivation> {
    match chain.activation {
        ChainActivation::Periodic(em) if !follows_release(chain, resources, mapping) => {
            Some(ChainActivation::Periodic(EventModel {
                period: em.period,
                jitter: em.jitter + window?,
            }))
        }
        a => Some(a),
    }
}

/// Per chain, a priority-independent bound on how long one activation stays
/// in the system: its latency with every other task on its resources above
/// it. Work of an activation released at `a` runs within `[a, a + B)`, so a
/// chain whose arrivals on some resource do not follow its release still
/// has at most `ceil((w + J + B)/P)` activations executing in a window `w`.
/// `None` marks an unbounded window.
pub fn exposure_windows(graph: &TaskGraph, mapping: &BTreeMap<TaskId, String>) -> Vec<Option<u64>> {
    let cap = iteration_cap(graph);
    let chains = &graph.chains;
    let mut windows: Vec<Option<u64>> = chains.iter().map(|c| Some(c.total_wcet())).collect();
    for _ in 0..EXPOSURE_ROUNDS {
        let next: Vec<Option<u64>> = chains
            .iter()
            .enumerate()
            .map(|(j, ch)| {
                let res = resources_of(ch, mapping);
                let mut interf = Vec::new();
                for (k, other) in chains.iter().enumerate() {
                    let c: u64 = other
                        .nodes
                        .iter()
                        .filter(|n| k != j && mapping.get(&n.id).is_some_and(|r| res.contains(r)))
                        .map(|n| n.wcet)
                        .sum();
                    if c > 0 {
                        interf.push((arrivals(other, windows[k], &res, mapping)?, c));
                    }
                }
                let start = match ch.activation {
                    ChainActivation::Periodic(em) => RangeStart::Head {
                        em,
                        chain_wcet: ch.total_wcet(),
                    },
                    ChainActivation::OneShot => RangeStart::Isolated,
                };
                match latency_bound(ch.total_wcet(), start, &interf, InterferenceModel::BusyWindow, cap) {
                    Bound::Finite(b) => Some(b),
                    Bound::Unbounded => None,
                }
            })
            .collect();
        if next == windows {
            return windows;
        }
        windows = next;
    }
    vec![None; chains.len()]
}

/// Load per resource of the given chain: `Σ wcet / P` of its tasks there.
pub fn chain_utilization(
    chain: &Chain,
    mapping: &BTreeMap<TaskId, String>,
) -> Result<BTreeMap<String, Ratio<u64>>, TimingError> {
    let period = chain
        .activation
        .period()
        .ok_or_else(|| TimingError::NoPeriod(chain.root.clone()))?;
    let mut out: BTreeMap<String, Ratio<u64>> = BTreeMap::new();
    for n in &chain.nodes {
        let r = mapping.get(&n.id).ok_or_else(|| TimingError::Unmapped(n.id.clone()))?;
        *out.entry(r.clone()).or_insert_with(|| Ratio::from_integer(0)) += Ratio::new(n.wcet, period);
    }
    Ok(out)
}

/// Load per resource over all chains of a graph.
pub fn utilization(
    graph: &TaskGraph,
    mapping: &BTreeMap<TaskId, String>,
) -> Result<BTreeMap<String, Ratio<u64>>, TimingError> {
    let mut out: BTreeMap<String, Ratio<u64>> = BTreeMap::new();
    for chain in &graph.chains {
        for (r, u) in chain_utilization(chain, mapping)? {
            *out.entry(r).or_insert_with(|| Ratio::from_integer(0)) += u;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum TimingError {
    #[error("chain {0} has no period")]
    NoPeriod(ThreadId),
    #[error("task {0} is not mapped")]
    Unmapped(TaskId),
    #[error("thread {0} has no priority")]
    Unranked(ThreadId),
}

/// A requirement prepared for repeated evaluation against different sets of
/// higher-priority threads.
struct Prepared<'g> {
    graph: &'g TaskGraph,
    chain: usize,
    req: &'g LatencyReq,
    threads: BTreeSet<ThreadId>,
    c_range: u64,
    start: RangeStart,
    /// Nodes whose threads and resources determine interference.
    span: Range<usize>,
    /// thread -> chain -> demand of that thread's tasks on the range's
    /// resources, other chains only.
    contrib: BTreeMap<ThreadId, BTreeMap<usize, u64>>,
    /// thread -> the interfering tasks behind `contrib`.
    tasks: BTreeMap<ThreadId, BTreeSet<TaskId>>,
    /// Arrival pattern on the span's resources per interfering chain;
    /// `None` if unbounded.
    arrivals: BTreeMap<usize, Option<ChainActivation>>,
    /// Some arrival pattern depends on exposure windows, and with them on
    /// the whole graph and mapping.
    global: bool,
    cap: u64,
}

impl<'g> Prepared<'g> {
    fn new(
        graph: &'g TaskGraph,
        chain: usize,
        req: &'g LatencyReq,
        mapping: &BTreeMap<TaskId, String>,
        windows: &[Option<u64>],
    ) -> Self {
        let ch = &graph.chains[chain];
        let head = match ch.activation {
            ChainActivation::Periodic(em) if req.range.start == 0 => Some(RangeStart::Head {
                em,
                chain_wcet: ch.total_wcet(),
            }),
            ChainActivation::OneShot if req.range.start == 0 => Some(RangeStart::Isolated),
            _ => None,
        };
        // A periodic head range can wait for the rest of the previous
        // activation, so it is exposed to everything the whole chain is.
        let span = match head {
            Some(RangeStart::Head { .. }) => 0..ch.nodes.len(),
            _ => req.range.clone(),
        };
        let nodes = &ch.nodes[span.clone()];
        let resources: BTreeSet<&String> = nodes.iter().filter_map(|n| mapping.get(&n.id)).collect();
        let start = head.unwrap_or_else(|| RangeStart::Inner {
            own: (resources.len() == 1).then(|| {
                let demand = ch
                    .nodes
                    .iter()
                    .filter(|n| mapping.get(&n.id).is_some_and(|r| resources.contains(r)))
                    .map(|n| n.wcet)
                    .sum();
                (ch.activation, demand)
            }),
        });
        let mut contrib: BTreeMap<ThreadId, BTreeMap<usize, u64>> = BTreeMap::new();
        let mut tasks: BTreeMap<ThreadId, BTreeSet<TaskId>> = BTreeMap::new();
        for (j, other) in graph.chains.iter().enumerate() {
            if j == chain {
                continue;
            }
            for n in &other.nodes {
                if mapping.get(&n.id).is_some_and(|r| resources.contains(r)) {
                    *contrib.entry(n.thread.clone()).or_default().entry(j).or_default() += n.wcet;
                    tasks.entry(n.thread.clone()).or_default().insert(n.id.clone());
                }
            }
        }
        let mut global = false;
        let mut arrivals_of = BTreeMap::new();
        for j in contrib.values().flat_map(|m| m.keys()) {
            let other = &graph.chains[*j];
            global |= matches!(other.activation, ChainActivation::Periodic(_))
                && !follows_release(other, &resources, mapping);
            arrivals_of.insert(*j, arrivals(other, windows[*j], &resources, mapping));
        }
        Prepared {
            graph,
            chain,
            req,
            threads: nodes.iter().map(|n| n.thread.clone()).collect(),
            c_range: ch.range_wcet(&req.range),
            start,
            span,
            contrib,
            tasks,
            arrivals: arrivals_of,
            global,
            cap: iteration_cap(graph),
        }
    }

    fn bound<'a>(&self, hp: impl IntoIterator<Item = &'a ThreadId>, model: InterferenceModel) -> Bound {
        if self.req.range.is_empty() {
            return Bound::Finite(0);
        }
        let mut per_chain: BTreeMap<usize, u64> = BTreeMap::new();
        for t in hp {
            for (j, c) in self.contrib.get(t).into_iter().flatten() {
                *per_chain.entry(*j).or_default() += c;
            }
        }
        let mut interf = Vec::with_capacity(per_chain.len());
        for (j, c) in per_chain {
            match self.arrivals[&j] {
                Some(a) => interf.push((a, c)),
                None if model == InterferenceModel::BusyWindow => return Bound::Unbounded,
                None => interf.push((self.graph.chains[j].activation, c)),
            }
        }
        latency_bound(self.c_range, self.start, &interf, model, self.cap)
    }

    /// Literals that fix this chain's contents and the resources of the
    /// span; everything in the graph when exposure windows are involved.
    fn context(&self, mapping: &BTreeMap<TaskId, String>) -> BTreeSet<Literal> {
        let ch = &self.graph.chains[self.chain];
        let mut ctx = chain_context(ch);
        for n in &ch.nodes[self.span.clone()] {
            if let Some(r) = mapping.get(&n.id) {
                ctx.insert(Literal::map(&n.id, r));
            }
        }
        if self.global {
            for (_, n) in self.graph.nodes() {
                if let Some(r) = mapping.get(&n.id) {
                    ctx.insert(Literal::map(&n.id, r));
                }
            }
            for c in &self.graph.chains {
                ctx.extend(chain_context(c));
            }
        }
        ctx
    }

    /// Literals that fix the interference a thread contributes.
    fn thread_context(&self, t: &ThreadId, mapping: &BTreeMap<TaskId, String>) -> BTreeSet<Literal> {
        let mut ctx = BTreeSet::new();
        for j in self.contrib.get(t).into_iter().flat_map(|m| m.keys()) {
            ctx.extend(chain_context(&self.graph.chains[*j]));
        }
        for task in self.tasks.get(t).into_iter().flatten() {
            if let Some(r) = mapping.get(task) {
                ctx.insert(Literal::map(task, r));
            }
        }
        ctx
    }

    /// Threads whose interference alone breaks the requirement, assuming the
    /// range itself fits.
    fn sole_breakers(&self, model: InterferenceModel) -> Vec<&ThreadId> {
        if !self.bound([], model).within(self.req.bound) {
            return Vec::new();
        }
        self.contrib
            .keys()
            .filter(|t| !self.bound([*t], model).within(self.req.bound))
            .collect()
    }

    /// One single-pair nogood per (breaker, range thread): the breaker may
    /// not be above any thread of the range.
    fn sole_nogoods(&self, model: InterferenceModel, mapping: &BTreeMap<TaskId, String>) -> Vec<Constraint> {
        let mut out = Vec::new();
        for t in self.sole_breakers(model) {
            let mut ctx = self.context(mapping);
            ctx.extend(self.thread_context(t, mapping));
            for r in &self.threads {
                out.push(Constraint::PriorityNogood {
                    context: ctx.clone(),
                    pairs: BTreeSet::from([(t.clone(), r.clone())]),
                });
            }
        }
        out
    }
}

/// `sel` of the root component plus every connection the chain went through.
pub fn chain_context(chain: &Chain) -> BTreeSet<Literal> {
    let mut ctx: BTreeSet<Literal> = chain.via.iter().cloned().map(Literal::Conn).collect();
    ctx.insert(Literal::Sel(chain.root.component.clone()));
    ctx
}

fn prepare<'g>(graphs: &'g [TaskGraph], mapping: &BTreeMap<TaskId, String>) -> Vec<Prepared<'g>> {
    let mut out = Vec::new();
    for g in graphs {
        let windows = exposure_windows(g, mapping);
        for (ci, ch) in g.chains.iter().enumerate() {
            for req in &ch.requirements {
                out.push(Prepared::new(g, ci, req, mapping, &windows));
            }
        }
    }
    out
}

/// Bound of a node range of one chain under a complete priority order.
pub fn chain_latency_bound(
    graph: &TaskGraph,
    chain: usize,
    range: Range<usize>,
    ranks: &BTreeMap<ThreadId, usize>,
    mapping: &BTreeMap<TaskId, String>,
    model: InterferenceModel,
) -> Result<Bound, TimingError> {
    let ch = &graph.chains[chain];
    let req = LatencyReq {
        bound: u64::MAX,
        owner: ch.root.component.clone(),
        target: crate::dsl::TimingTarget::Thread(ch.root.thread.clone()),
        range,
    };
    let p = Prepared::new(graph, chain, &req, mapping, &exposure_windows(graph, mapping));
    let hp = higher_priority(&p, ranks)?;
    Ok(p.bound(&hp, model))
}

/// Threads with interfering tasks that sit above the range's lowest thread.
fn higher_priority(p: &Prepared, ranks: &BTreeMap<ThreadId, usize>) -> Result<Vec<ThreadId>, TimingError> {
    let rank = |t: &ThreadId| ranks.get(t).copied().ok_or_else(|| TimingError::Unranked(t.clone()));
    let mut lowest = None;
    for t in &p.threads {
        let r = rank(t)?;
        lowest = Some(lowest.map_or(r, |l: usize| l.max(r)));
    }
    let Some(lowest) = lowest else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for t in p.contrib.keys() {
        if rank(t)? < lowest {
            out.push(t.clone());
        }
    }
    Ok(out)
}

fn lowest_thread<'a>(p: &'a Prepared, ranks: &BTreeMap<ThreadId, usize>) -> Option<&'a ThreadId> {
    p.threads.iter().max_by_key(|t| ranks.get(*t).copied().unwrap_or(usize::MAX))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReqVerdict {
    pub mode: Mode,
    pub chain: ThreadId,
    pub req: LatencyReq,
    pub computed: Bound,
    pub pass: bool,
    pub model: InterferenceModel,
}

impl fmt::Display for ReqVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: bound={} {} model={}",
            self.req,
            self.computed,
            if self.pass { "PASS" } else { "FAIL" },
            self.model
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TimingReport {
    pub utilization: BTreeMap<String, Ratio<u64>>,
    pub overloaded: Vec<String>,
    pub verdicts: Vec<ReqVerdict>,
    pub feedback: Vec<Constraint>,
}

impl TimingReport {
    pub fn passed(&self) -> bool {
        self.overloaded.is_empty() && self.verdicts.iter().all(|v| v.pass)
    }

    pub fn lines(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .utilization
            .iter()
            .map(|(r, u)| {
                let tag = if *u > Ratio::from_integer(1) { "OVERLOAD" } else { "ok" };
                format!("utilization {r}={u} {tag}")
            })
            .collect();
        out.extend(self.verdicts.iter().map(ToString::to_string));
        out
    }
}

/// Utilization test on the normal-mode graph, then every latency requirement
/// of every graph. Feedback: on overload, a forbid over the literals that put
/// the overloading chains on the resource; on a latency miss, single-pair
/// nogoods for each thread whose interference alone breaks the requirement
/// and one nogood over all higher-priority threads, or a forbid over the
/// chain when no priority order can help.
pub fn check_timing(
    graphs: &[TaskGraph],
    cfg: &Configuration,
    model: InterferenceModel,
) -> Result<TimingReport, TimingError> {
    let mut report = TimingReport::default();
    let ranks = cfg.ranks();
    for g in graphs.iter().filter(|g| g.mode == Mode::Normal) {
        for (r, u) in utilization(g, &cfg.mapping)? {
            *report.utilization.entry(r).or_insert_with(|| Ratio::from_integer(0)) += u;
        }
        for (r, u) in report.utilization.clone() {
            if u > Ratio::from_integer(1) {
                report.overloaded.push(r.clone());
                report.feedback.push(overload_nogood(g, &cfg.mapping, &r)?);
            }
        }
    }
    for p in prepare(graphs, &cfg.mapping) {
        let hp = higher_priority(&p, &ranks)?;
        let computed = p.bound(&hp, model);
        let pass = computed.within(p.req.bound);
        report.verdicts.push(ReqVerdict {
            mode: p.graph.mode,
            chain: p.graph.chains[p.chain].root.clone(),
            req: p.req.clone(),
            computed,
            pass,
            model,
        });
        if pass || !report.overloaded.is_empty() {
            continue;
        }
        if !p.bound([], model).within(p.req.bound) {
            report.feedback.push(Constraint::ForbidConjunction(chain_context(&p.graph.chains[p.chain])));
            continue;
        }
        report.feedback.extend(p.sole_nogoods(model, &cfg.mapping));
        if let Some(low) = lowest_thread(&p, &ranks) {
            let mut ctx = p.context(&cfg.mapping);
            for t in &hp {
                ctx.extend(p.thread_context(t, &cfg.mapping));
            }
            report.feedback.push(Constraint::PriorityNogood {
                context: ctx,
                pairs: hp.iter().map(|t| (t.clone(), low.clone())).collect(),
            });
        }
    }
    report.feedback.sort();
    report.feedback.dedup();
    Ok(report)
}

/// Forbid the smallest set of chains, heaviest first, that already
/// overloads `resource`.
fn overload_nogood(
    graph: &TaskGraph,
    mapping: &BTreeMap<TaskId, String>,
    resource: &str,
) -> Result<Constraint, TimingError> {
    let mut loads = Vec::new();
    for ch in &graph.chains {
        if let Some(u) = chain_utilization(ch, mapping)?.get(resource) {
            loads.push((*u, ch));
        }
    }
    loads.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.root.cmp(&b.1.root)));
    let mut lits = BTreeSet::new();
    let mut total = Ratio::from_integer(0);
    for (u, ch) in loads {
        lits.extend(chain_context(ch));
        for n in ch.nodes.iter().filter(|n| mapping.get(&n.id).map(String::as_str) == Some(resource)) {
            lits.insert(Literal::map(&n.id, resource));
        }
        total += u;
        if total > Ratio::from_integer(1) {
            break;
        }
    }
    Ok(Constraint::ForbidConjunction(lits))
}

/// Outcome of priority synthesis.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Synthesis {
    /// Highest priority first.
    pub order: Option<Vec<ThreadId>>,
    /// The order meets every requirement.
    pub feasible: bool,
    /// Single-pair priority constraints that hold for every feasible order.
    pub derived: Vec<Constraint>,
}

/// Search budget for one synthesis run.
const SYNTHESIS_NODES: usize = 200_000;

/// Priority assignment for the threads of `oc`.
///
/// Threads are keyed deadline-monotonically (smallest requirement bound
/// covering one of their tasks). The search fills priority levels from the
/// bottom, trying threads with the loosest key first. A requirement is
/// evaluated exactly when the first of its threads is placed: that thread is
/// the lowest of the range and everything still unplaced ends up above it.
/// When no order meets every requirement, the first order that satisfies
/// the constraints alone is returned instead; `None` means the constraints
/// contradict each other (or the search budget ran out).
pub fn synthesize_priorities(
    graphs: &[TaskGraph],
    mapping: &BTreeMap<TaskId, String>,
    oc: &OrderConstraints,
    model: InterferenceModel,
) -> Synthesis {
    let prepared = prepare(graphs, mapping);
    let mut derived = Vec::new();
    let mut precedences = oc.precedences.clone();
    for p in &prepared {
        for k in p.sole_nogoods(model, mapping) {
            if let Constraint::PriorityNogood { pairs, .. } = &k {
                for (a, b) in pairs {
                    precedences.insert((b.clone(), a.clone()));
                }
            }
            derived.push(k);
        }
    }
    derived.sort();
    derived.dedup();

    let n = oc.threads.len();
    let idx: BTreeMap<&ThreadId, usize> = oc.threads.iter().enumerate().map(|(i, t)| (t, i)).collect();
    let known = |pairs: &BTreeSet<(ThreadId, ThreadId)>| pairs.iter().all(|(a, b)| idx.contains_key(a) && idx.contains_key(b));
    let prec: Vec<(usize, usize)> = precedences
        .iter()
        .filter(|(a, b)| idx.contains_key(a) && idx.contains_key(b))
        .map(|(a, b)| (idx[a], idx[b]))
        .collect();
    let nogoods: Vec<Vec<(usize, usize)>> = oc
        .nogoods
        .iter()
        .filter(|ng| known(ng))
        .map(|ng| ng.iter().map(|(a, b)| (idx[a], idx[b])).collect())
        .collect();

    let mut key = vec![u64::MAX; n];
    for p in &prepared {
        if p.req.range.is_empty() {
            continue;
        }
        for t in &p.threads {
            if let Some(&i) = idx.get(t) {
                key[i] = key[i].min(p.req.bound);
            }
        }
    }
    // Loosest first; ties broken so that the final order is ascending by id.
    let mut try_order: Vec<usize> = (0..n).collect();
    try_order.sort_by(|&a, &b| key[b].cmp(&key[a]).then_with(|| oc.threads[b].cmp(&oc.threads[a])));

    let reqs: Vec<ReqIdx> = prepared
        .iter()
        .map(|p| ReqIdx {
            threads: p.threads.iter().filter_map(|t| idx.get(t).copied()).collect(),
        })
        .collect();

    let mut search = Search {
        n,
        prec: &prec,
        nogoods: &nogoods,
        try_order: &try_order,
        reqs: &reqs,
        prepared: &prepared,
        threads: &oc.threads,
        model,
        timing: true,
        failed: HashSet::new(),
        nodes: 0,
    };
    let mut placed = Vec::with_capacity(n);
    let mut is_placed = vec![false; n];
    let feasible = search.run(&mut placed, &mut is_placed);
    if !feasible {
        search.timing = false;
        search.failed.clear();
        search.nodes = 0;
        placed.clear();
        is_placed.fill(false);
        if !search.run(&mut placed, &mut is_placed) {
            return Synthesis {
                order: None,
                feasible: false,
                derived,
            };
        }
    }
    let order = placed.iter().rev().map(|&i| oc.threads[i].clone()).collect();
    Synthesis {
        order: Some(order),
        feasible,
        derived,
    }
}

struct ReqIdx {
    threads: Vec<usize>,
}

struct Search<'a, 'g> {
    n: usize,
    prec: &'a [(usize, usize)],
    nogoods: &'a [Vec<(usize, usize)>],
    try_order: &'a [usize],
    reqs: &'a [ReqIdx],
    prepared: &'a [Prepared<'g>],
    threads: &'a [ThreadId],
    model: InterferenceModel,
    timing: bool,
    failed: HashSet<(Vec<bool>, Vec<bool>)>,
    nodes: usize,
}

impl Search<'_, '_> {
    /// `placed` lists threads bottom-up.
    fn run(&mut self, placed: &mut Vec<usize>, is_placed: &mut [bool]) -> bool {
        if placed.len() == self.n {
            return true;
        }
        let falsified: Vec<bool> = self
            .nogoods
            .iter()
            .map(|ng| ng.iter().any(|&(a, b)| is_placed[a] && self.pos(placed, a) < self.pos(placed, b)))
            .collect();
        let state = (is_placed.to_vec(), falsified);
        if self.failed.contains(&state) || self.nodes >= SYNTHESIS_NODES {
            return false;
        }
        self.nodes += 1;
        for &x in self.try_order {
            if is_placed[x] || !self.may_place(x, placed, is_placed) {
                continue;
            }
            placed.push(x);
            is_placed[x] = true;
            if self.run(placed, is_placed) {
                return true;
            }
            placed.pop();
            is_placed[x] = false;
        }
        self.failed.insert(state);
        false
    }

    /// Position from the bottom; unplaced threads end up above everything.
    fn pos(&self, placed: &[usize], t: usize) -> usize {
        placed.iter().position(|&p| p == t).unwrap_or(usize::MAX)
    }

    fn may_place(&self, x: usize, placed: &[usize], is_placed: &[bool]) -> bool {
        // Everything unplaced will sit above x.
        if self.prec.iter().any(|&(a, b)| a == x && !is_placed[b]) {
            return false;
        }
        let pos_after = |t: usize| if t == x { placed.len() } else { self.pos(placed, t) };
        for ng in self.nogoods {
            let all_true = ng.iter().all(|&(a, b)| {
                let (pa, pb) = (pos_after(a), pos_after(b));
                // Known true once b is placed below a (placed or not).
                pb != usize::MAX && pa > pb
            });
            if all_true {
                return false;
            }
        }
        if !self.timing {
            return true;
        }
        for (ri, r) in self.reqs.iter().enumerate() {
            if !r.threads.contains(&x) || r.threads.iter().any(|&t| is_placed[t]) {
                continue;
            }
            let p = &self.prepared[ri];
            let hp = p
                .contrib
                .keys()
                .filter(|t| self.threads.iter().position(|u| u == *t).is_some_and(|i| !is_placed[i] && i != x));
            if !p.bound(hp, self.model).within(p.req.bound) {
                return false;
            }
        }
        true
    }
}
