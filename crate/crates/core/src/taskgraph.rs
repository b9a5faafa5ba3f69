//! Unfolding of threads into task chains.
//!
//! Every time-activated thread (normal mode) or initialization thread
//! (initialization mode) of a selected component roots one chain. RPC steps
//! are replaced in place by the tasks of the provider's entry thread, so a
//! chain is the flat sequence of everything one activation executes. Signal
//! steps fork a separate chain that inherits the trigger's event model.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{Activation, CallKind, Contract, MethodRef, SoftwareModel, Step, TimingTarget};
use crate::model::{Configuration, Connection, TaskId, ThreadId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    Initialization,
    Normal,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Initialization => "init",
            Mode::Normal => "normal",
        })
    }
}

/// Periodic activation with release jitter. `η(Δ) = ceil((Δ + J) / P)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventModel {
    pub period: u64,
    pub jitter: u64,
}

impl EventModel {
    pub fn eta(&self, window: u64) -> u64 {
        (window + self.jitter).div_ceil(self.period)
    }
}

/// How a chain is activated: periodically, or exactly once (initialization
/// mode).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChainActivation {
    Periodic(EventModel),
    OneShot,
}

impl ChainActivation {
    /// Activations within a window of the given length.
    pub fn eta(&self, window: u64) -> u64 {
        match self {
            ChainActivation::Periodic(em) => em.eta(window),
            ChainActivation::OneShot => 1,
        }
    }

    pub fn period(&self) -> Option<u64> {
        match self {
            ChainActivation::Periodic(em) => Some(em.period),
            ChainActivation::OneShot => None,
        }
    }

    pub fn jitter(&self) -> u64 {
        match self {
            ChainActivation::Periodic(em) => em.jitter,
            ChainActivation::OneShot => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskNode {
    pub id: TaskId,
    /// Thread that declares the task; its priority is the task's priority.
    pub thread: ThreadId,
    pub wcet: u64,
    pub bcet: u64,
    pub resource_type: String,
}

/// A timing requirement attached to a node range of a chain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyReq {
    pub bound: u64,
    /// Component whose contract states the requirement.
    pub owner: String,
    pub target: TimingTarget,
    pub range: Range<usize>,
}

impl LatencyReq {
    pub fn covers_chain(&self, chain: &Chain) -> bool {
        self.range.start == 0 && self.range.end == chain.nodes.len()
    }
}

impl fmt::Display for LatencyReq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "timing {} {}", self.bound, self.target)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chain {
    pub root: ThreadId,
    pub mode: Mode,
    pub nodes: Vec<TaskNode>,
    pub activation: ChainActivation,
    /// Root chain and node position of the signal that forks this chain.
    pub triggered_by: Option<(ThreadId, usize)>,
    pub requirements: Vec<LatencyReq>,
    /// Connections the unfolding went through, including those of the
    /// triggering chain for forked chains.
    pub via: BTreeSet<Connection>,
}

impl Chain {
    pub fn total_wcet(&self) -> u64 {
        self.nodes.iter().map(|n| n.wcet).sum()
    }

    pub fn range_wcet(&self, range: &Range<usize>) -> u64 {
        self.nodes[range.clone()].iter().map(|n| n.wcet).sum()
    }

    pub fn threads(&self) -> BTreeSet<&ThreadId> {
        self.nodes.iter().map(|n| &n.thread).collect()
    }
}

impl fmt::Display for Chain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "chain {} mode={}", self.root, self.mode)?;
        match self.activation {
            ChainActivation::Periodic(em) => write!(f, " period={} jitter={}", em.period, em.jitter)?,
            ChainActivation::OneShot => write!(f, " once")?,
        }
        if let Some((t, pos)) = &self.triggered_by {
            write!(f, " signal={t}@{pos}")?;
        }
        f.write_str(":")?;
        for (i, n) in self.nodes.iter().enumerate() {
            let sep = if i == 0 { " " } else { " -> " };
            write!(f, "{sep}{}({}/{})", n.id.task, n.wcet, n.bcet)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskGraph {
    pub mode: Mode,
    pub chains: Vec<Chain>,
}

impl TaskGraph {
    pub fn chain(&self, root: &ThreadId) -> Option<&Chain> {
        self.chains.iter().find(|c| &c.root == root)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (usize, &TaskNode)> {
        self.chains
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.nodes.iter().map(move |n| (i, n)))
    }

    pub fn contains_task(&self, component: &str, task: &str) -> bool {
        self.nodes()
            .any(|(_, n)| n.id.component == component && n.id.task == task)
    }
}

impl fmt::Display for TaskGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.chains {
            writeln!(f, "{c}")?;
            for r in &c.requirements {
                writeln!(f, "  {r} covers [{}..{})", r.range.start, r.range.end)?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("unfolding cycle through {}", fmt_path(.path))]
    Cycle {
        path: Vec<ThreadId>,
        via: BTreeSet<Connection>,
    },
    #[error("{client} has no provider for {service}")]
    MissingProvider {
        client: String,
        service: String,
        via: BTreeSet<Connection>,
    },
    #[error("{provider} has no entry thread for {method}")]
    MissingEntry {
        provider: String,
        method: MethodRef,
        via: BTreeSet<Connection>,
    },
    #[error("entry thread {thread} is activated from more than one chain in {mode} mode")]
    SharedEntry {
        thread: ThreadId,
        mode: Mode,
        via: BTreeSet<Connection>,
    },
    #[error("time-activated chain {0} has no tasks")]
    EmptyChain(ThreadId),
    #[error("component {0} is selected but unknown")]
    UnknownComponent(String),
}

fn fmt_path(path: &[ThreadId]) -> String {
    path.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" -> ")
}

impl GraphError {
    /// Connections whose joint presence produces the error.
    pub fn culprits(&self) -> BTreeSet<Connection> {
        match self {
            GraphError::Cycle { via, .. }
            | GraphError::MissingProvider { via, .. }
            | GraphError::MissingEntry { via, .. }
            | GraphError::SharedEntry { via, .. } => via.clone(),
            GraphError::EmptyChain(_) | GraphError::UnknownComponent(_) => BTreeSet::new(),
        }
    }

    /// Root components whose selection, together with `culprits`, produces
    /// the error.
    pub fn roots(&self) -> BTreeSet<String> {
        match self {
            GraphError::Cycle { path, .. } => path.first().map(|t| t.component.clone()).into_iter().collect(),
            GraphError::EmptyChain(t) => BTreeSet::from([t.component.clone()]),
            _ => BTreeSet::new(),
        }
    }
}

/// Where an inlined thread landed inside a chain.
#[derive(Clone, Debug)]
struct Inlined {
    thread: ThreadId,
    range: Range<usize>,
    /// Per call step of the thread: inlined range of the callee.
    calls: Vec<(MethodRef, Range<usize>)>,
}

struct Pending {
    root: ThreadId,
    activation: ChainActivation,
    triggered_by: Option<(ThreadId, usize)>,
    via: BTreeSet<Connection>,
}

struct Builder<'a> {
    software: &'a SoftwareModel,
    cfg: &'a Configuration,
    mode: Mode,
    /// Entry thread -> (root of the chain that uses it, connections leading
    /// there).
    used: BTreeMap<ThreadId, (ThreadId, BTreeSet<Connection>)>,
    queue: Vec<Pending>,
}

impl<'a> Builder<'a> {
    fn contract(&self, name: &str) -> Result<&'a Contract, GraphError> {
        self.software
            .contract(name)
            .ok_or_else(|| GraphError::UnknownComponent(name.to_string()))
    }

    /// Resolve the provider entry thread a call from `component` lands in.
    fn callee(
        &self,
        component: &str,
        target: &MethodRef,
        via: &BTreeSet<Connection>,
    ) -> Result<(ThreadId, Connection), GraphError> {
        let provider = self.cfg.provider(component, &target.service).ok_or_else(|| {
            GraphError::MissingProvider {
                client: component.to_string(),
                service: target.service.clone(),
                via: via.clone(),
            }
        })?;
        let conn = Connection::new(component, &target.service, provider);
        let entry = self.contract(provider)?.entry_thread(target).ok_or_else(|| {
            let mut via = via.clone();
            via.insert(conn.clone());
            GraphError::MissingEntry {
                provider: provider.to_string(),
                method: target.clone(),
                via,
            }
        })?;
        Ok((ThreadId::new(provider, &entry.name), conn))
    }

    fn claim(&mut self, entry: &ThreadId, root: &ThreadId, via: &BTreeSet<Connection>) -> Result<(), GraphError> {
        match self.used.get(entry) {
            Some((owner, _)) if owner == root => Ok(()),
            Some((_, other)) => Err(GraphError::SharedEntry {
                thread: entry.clone(),
                mode: self.mode,
                via: via.union(other).cloned().collect(),
            }),
            None => {
                self.used.insert(entry.clone(), (root.clone(), via.clone()));
                Ok(())
            }
        }
    }

    /// Append the tasks of `thread` (recursively inlining RPCs) to `nodes`.
    fn unfold(
        &mut self,
        chain_root: &ThreadId,
        thread: &ThreadId,
        stack: &mut Vec<ThreadId>,
        via: &mut BTreeSet<Connection>,
        nodes: &mut Vec<TaskNode>,
        inlined: &mut Vec<Inlined>,
    ) -> Result<(), GraphError> {
        if stack.contains(thread) {
            let mut path = stack.clone();
            path.push(thread.clone());
            return Err(GraphError::Cycle {
                path,
                via: via.clone(),
            });
        }
        stack.push(thread.clone());
        let contract = self.contract(&thread.component)?;
        let th = contract
            .thread(&thread.thread)
            .ok_or_else(|| GraphError::UnknownComponent(thread.to_string()))?;
        let start = nodes.len();
        let slot = inlined.len();
        inlined.push(Inlined {
            thread: thread.clone(),
            range: start..start,
            calls: Vec::new(),
        });
        let mut calls = Vec::new();
        for step in &th.steps {
            match step {
                Step::Task(t) => nodes.push(TaskNode {
                    id: TaskId::new(&thread.component, &t.name),
                    thread: thread.clone(),
                    wcet: t.wcet,
                    bcet: t.bcet,
                    resource_type: t.resource_type.clone(),
                }),
                Step::Call { kind, target } => {
                    let (entry, conn) = self.callee(&thread.component, target, via)?;
                    let mut path = via.clone();
                    path.insert(conn.clone());
                    self.claim(&entry, chain_root, &path)?;
                    match kind {
                        CallKind::Rpc => {
                            let call_start = nodes.len();
                            via.insert(conn);
                            self.unfold(chain_root, &entry, stack, via, nodes, inlined)?;
                            calls.push((target.clone(), call_start..nodes.len()));
                        }
                        CallKind::Signal => {
                            via.insert(conn);
                            self.queue.push(Pending {
                                root: entry,
                                activation: ChainActivation::OneShot,
                                triggered_by: Some((chain_root.clone(), nodes.len())),
                                via: path,
                            });
                            calls.push((target.clone(), nodes.len()..nodes.len()));
                        }
                    }
                }
            }
        }
        inlined[slot].range = start..nodes.len();
        inlined[slot].calls = calls;
        stack.pop();
        Ok(())
    }

    fn build_chain(&mut self, pending: Pending) -> Result<Chain, GraphError> {
        let mut nodes = Vec::new();
        let mut inlined = Vec::new();
        let mut via = pending.via.clone();
        let mut stack = Vec::new();
        let queued = self.queue.len();
        self.unfold(
            &pending.root,
            &pending.root,
            &mut stack,
            &mut via,
            &mut nodes,
            &mut inlined,
        )?;
        // Forked chains inherit the event model of their trigger.
        for p in &mut self.queue[queued..] {
            p.activation = pending.activation;
        }
        let mut chain = Chain {
            root: pending.root,
            mode: self.mode,
            nodes,
            activation: pending.activation,
            triggered_by: pending.triggered_by,
            requirements: Vec::new(),
            via,
        };
        if chain.nodes.is_empty() && self.mode == Mode::Normal && chain.triggered_by.is_none() {
            return Err(GraphError::EmptyChain(chain.root));
        }
        chain.requirements = self.requirements(&chain, &inlined)?;
        Ok(chain)
    }

    /// Attach every requirement whose target occurs in the chain.
    fn requirements(&self, chain: &Chain, inlined: &[Inlined]) -> Result<Vec<LatencyReq>, GraphError> {
        let mut out = Vec::new();
        let mut owners: BTreeSet<&str> = BTreeSet::new();
        for i in inlined {
            owners.insert(&i.thread.component);
        }
        for owner in owners {
            let contract = self.contract(owner)?;
            for req in &contract.timings {
                let mut push = |range: Range<usize>| {
                    out.push(LatencyReq {
                        bound: req.bound,
                        owner: owner.to_string(),
                        target: req.target.clone(),
                        range,
                    })
                };
                match &req.target {
                    TimingTarget::Thread(name) => {
                        let id = ThreadId::new(owner, name);
                        if chain.root == id {
                            push(0..chain.nodes.len());
                        } else {
                            for i in inlined.iter().filter(|i| i.thread == id) {
                                push(i.range.clone());
                            }
                        }
                    }
                    TimingTarget::Method(m) if contract.provides.contains(&m.service) => {
                        let Some(entry) = contract.entry_thread(m) else {
                            continue;
                        };
                        let id = ThreadId::new(owner, &entry.name);
                        for i in inlined.iter().filter(|i| i.thread == id) {
                            let range = if chain.root == id { 0..chain.nodes.len() } else { i.range.clone() };
                            push(range);
                        }
                    }
                    TimingTarget::Method(m) => {
                        for i in inlined.iter().filter(|i| i.thread.component == owner) {
                            for (call, range) in &i.calls {
                                if call.same_method(m) {
                                    push(range.clone());
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Unfold the selected components of `cfg` into the chains of one mode.
/// Chains are ordered by root component and thread declaration order, with
/// forked chains after their trigger.
pub fn build_task_graph(
    software: &SoftwareModel,
    cfg: &Configuration,
    mode: Mode,
) -> Result<TaskGraph, GraphError> {
    let mut b = Builder {
        software,
        cfg,
        mode,
        used: BTreeMap::new(),
        queue: Vec::new(),
    };
    let mut chains = Vec::new();
    for name in &cfg.selected {
        let contract = b.contract(name)?;
        for th in &contract.threads {
            let activation = match (&th.activation, mode) {
                (Activation::Time { period, jitter }, Mode::Normal) => {
                    ChainActivation::Periodic(EventModel {
                        period: *period,
                        jitter: *jitter,
                    })
                }
                (Activation::Initialization, Mode::Initialization) => ChainActivation::OneShot,
                _ => continue,
            };
            let root = ThreadId::new(name, &th.name);
            chains.push(b.build_chain(Pending {
                root,
                activation,
                triggered_by: None,
                via: BTreeSet::new(),
            })?);
            while !b.queue.is_empty() {
                let p = b.queue.remove(0);
                chains.push(b.build_chain(p)?);
            }
        }
    }
    Ok(TaskGraph { mode, chains })
}

/// Both modes, normal first.
pub fn build_task_graphs(
    software: &SoftwareModel,
    cfg: &Configuration,
) -> Result<[TaskGraph; 2], GraphError> {
    Ok([
        build_task_graph(software, cfg, Mode::Normal)?,
        build_task_graph(software, cfg, Mode::Initialization)?,
    ])
}

pub fn total_wcet(chain: &Chain) -> u64 {
    chain.total_wcet()
}
