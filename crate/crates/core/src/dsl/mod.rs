//! Textual contract language.
//!
//! A contract describes one component: the services it requires and
//! provides, its threads (activation plus a sequence of tasks and calls),
//! latency requirements and `not X until Y` control-flow requirements.
//! Assumptions and guarantees live side by side in one block.
//!
//! ```text
//! component T
//!   services
//!     requires object_recognition
//!     provides trajectory_calculation
//!   threads
//!     thread trajectory_calculation_get
//!       on RPC trajectory_calculation.get()
//!         task tc1
//!           onto CPU_type_1
//!             wcet=5 bcet=1
//!         RPC object_recognition.get()
//!   timings
//!     timing 100
//!       object_recognition.get()
//!   control_flow
//!     not trajectory_calculation.get()
//!       until trajectory_calculation.init()
//! ```

mod parse;
mod render;
mod repo;
mod scan;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::parse_contract;
pub use scan::is_identifier;
pub use render::render_contract;
pub use repo::{
    load_software_model, parse_service_repository, MethodSig, ServiceInterface, ServiceRepository,
    SoftwareModel,
};

/// 1-based source position.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum DslError {
    #[error("{pos}: syntax error: {msg}")]
    Syntax { pos: Pos, msg: String },
    #[error("{pos}: duplicate thread `{name}`")]
    DuplicateThread { pos: Pos, name: String },
    #[error("{pos}: duplicate task `{name}`")]
    DuplicateTask { pos: Pos, name: String },
    #[error("{pos}: service `{service}` is declared more than once")]
    DuplicateService { pos: Pos, service: String },
    #[error("{pos}: service `{service}` is both required and provided")]
    RequiredAndProvided { pos: Pos, service: String },
    #[error("{pos}: `{service}` is not declared by component {component}")]
    UndeclaredService {
        pos: Pos,
        component: String,
        service: String,
    },
    #[error("{pos}: two threads are entry points for {method}")]
    DuplicateEntry { pos: Pos, method: String },
    #[error("{pos}: task `{task}` has bcet={bcet} outside 0 < bcet <= wcet={wcet}")]
    BadExecutionTime {
        pos: Pos,
        task: String,
        wcet: u64,
        bcet: u64,
    },
    #[error("{pos}: invalid activation: period={period} jitter={jitter} (need period > 0 and jitter < period)")]
    BadActivation { pos: Pos, period: u64, jitter: u64 },
    #[error("{pos}: timing bound must be positive")]
    ZeroTimingBound { pos: Pos },
    #[error("{pos}: timing target `{target}` does not resolve in component {component}")]
    UnresolvedTimingTarget {
        pos: Pos,
        component: String,
        target: String,
    },
    #[error("duplicate component `{0}`")]
    DuplicateComponent(String),
    #[error("component {component}: unknown service `{service}`")]
    UnknownService { component: String, service: String },
    #[error("component {component}: {method} is not a method of the service interface")]
    UnknownMethod { component: String, method: String },
    #[error("service repository: duplicate method `{method}` in `{service}`")]
    DuplicateMethod { service: String, method: String },
    #[error("service repository: duplicate service `{0}`")]
    DuplicateInterface(String),
    #[error("service repository: max_clients of `{0}` must be at least 1")]
    ZeroMaxClients(String),
}

/// `service.method(args)`; `args` is opaque text compared verbatim after
/// whitespace normalisation.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MethodRef {
    pub service: String,
    pub method: String,
    pub args: String,
}

impl MethodRef {
    pub fn new(service: &str, method: &str, args: &str) -> Self {
        MethodRef {
            service: service.to_string(),
            method: method.to_string(),
            args: scan::normalize_args(args),
        }
    }

    /// Same service and method name, regardless of arguments.
    pub fn same_method(&self, other: &MethodRef) -> bool {
        self.service == other.service && self.method == other.method
    }
}

impl fmt::Display for MethodRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}({})", self.service, self.method, self.args)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Rpc(MethodRef),
    Initialization,
    Time { period: u64, jitter: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CallKind {
    Rpc,
    Signal,
}

impl fmt::Display for CallKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CallKind::Rpc => "RPC",
            CallKind::Signal => "SIGNAL",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDecl {
    pub name: String,
    pub resource_type: String,
    pub wcet: u64,
    pub bcet: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Step {
    Task(TaskDecl),
    Call { kind: CallKind, target: MethodRef },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thread {
    pub name: String,
    pub activation: Activation,
    pub steps: Vec<Step>,
}

impl Thread {
    pub fn tasks(&self) -> impl Iterator<Item = &TaskDecl> {
        self.steps.iter().filter_map(|s| match s {
            Step::Task(t) => Some(t),
            Step::Call { .. } => None,
        })
    }

    pub fn calls(&self) -> impl Iterator<Item = (usize, CallKind, &MethodRef)> {
        self.steps.iter().enumerate().filter_map(|(i, s)| match s {
            Step::Call { kind, target } => Some((i, *kind, target)),
            Step::Task(_) => None,
        })
    }

    pub fn entry_point(&self) -> Option<&MethodRef> {
        match &self.activation {
            Activation::Rpc(m) => Some(m),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimingTarget {
    Method(MethodRef),
    Thread(String),
}

impl fmt::Display for TimingTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimingTarget::Method(m) => m.fmt(f),
            TimingTarget::Thread(t) => f.write_str(t),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingReq {
    pub bound: u64,
    pub target: TimingTarget,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotUntilReq {
    pub forbidden: MethodRef,
    pub prerequisite: MethodRef,
}

/// Where the pieces of a contract came from. Diagnostic only: two contracts
/// that differ only in source positions compare equal.
#[derive(Clone, Debug, Default)]
pub struct SourceMap {
    pub component: Pos,
    pub threads: Vec<Pos>,
    pub steps: Vec<Vec<Pos>>,
    pub timings: Vec<Pos>,
    pub control_flow: Vec<Pos>,
}

impl SourceMap {
    pub fn thread(&self, idx: usize) -> Pos {
        self.threads.get(idx).copied().unwrap_or(self.component)
    }

    pub fn step(&self, thread: usize, step: usize) -> Pos {
        self.steps
            .get(thread)
            .and_then(|s| s.get(step))
            .copied()
            .unwrap_or_else(|| self.thread(thread))
    }

    pub fn timing(&self, idx: usize) -> Pos {
        self.timings.get(idx).copied().unwrap_or(self.component)
    }

    pub fn control_flow(&self, idx: usize) -> Pos {
        self.control_flow.get(idx).copied().unwrap_or(self.component)
    }
}

impl PartialEq for SourceMap {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl Eq for SourceMap {}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contract {
    pub component: String,
    pub requires: BTreeSet<String>,
    pub provides: BTreeSet<String>,
    pub threads: Vec<Thread>,
    pub timings: Vec<TimingReq>,
    pub control_flow: Vec<NotUntilReq>,
    #[serde(skip)]
    pub spans: SourceMap,
}

impl Contract {
    pub fn new(component: &str) -> Self {
        Contract {
            component: component.to_string(),
            requires: BTreeSet::new(),
            provides: BTreeSet::new(),
            threads: Vec::new(),
            timings: Vec::new(),
            control_flow: Vec::new(),
            spans: SourceMap::default(),
        }
    }

    pub fn thread(&self, name: &str) -> Option<&Thread> {
        self.threads.iter().find(|t| t.name == name)
    }

    /// The thread activated by an RPC (or signal) on `method`.
    pub fn entry_thread(&self, method: &MethodRef) -> Option<&Thread> {
        self.threads
            .iter()
            .find(|t| t.entry_point().is_some_and(|m| m.same_method(method)))
    }

    pub fn tasks(&self) -> impl Iterator<Item = (&Thread, &TaskDecl)> {
        self.threads
            .iter()
            .flat_map(|th| th.tasks().map(move |t| (th, t)))
    }

    pub fn task(&self, name: &str) -> Option<&TaskDecl> {
        self.tasks().map(|(_, t)| t).find(|t| t.name == name)
    }

    /// True if the component has a thread activated by a timer or by the
    /// initialization mode, i.e. it starts work on its own.
    pub fn is_root(&self) -> bool {
        self.threads.iter().any(|t| {
            matches!(
                t.activation,
                Activation::Time { .. } | Activation::Initialization
            )
        })
    }

    /// Structural checks that only need the contract itself.
    pub fn validate(&self) -> Result<(), DslError> {
        let sp = &self.spans;
        if let Some(s) = self.requires.intersection(&self.provides).next() {
            return Err(DslError::RequiredAndProvided {
                pos: sp.component,
                service: s.clone(),
            });
        }
        let mut thread_names = BTreeSet::new();
        let mut task_names = BTreeSet::new();
        let mut entries: Vec<&MethodRef> = Vec::new();
        for (ti, th) in self.threads.iter().enumerate() {
            if !thread_names.insert(th.name.as_str()) {
                return Err(DslError::DuplicateThread {
                    pos: sp.thread(ti),
                    name: th.name.clone(),
                });
            }
            match &th.activation {
                Activation::Rpc(m) => {
                    if !self.provides.contains(&m.service) {
                        return Err(self.undeclared(sp.thread(ti), &m.service));
                    }
                    if entries.iter().any(|e| e.same_method(m)) {
                        return Err(DslError::DuplicateEntry {
                            pos: sp.thread(ti),
                            method: m.to_string(),
                        });
                    }
                    entries.push(m);
                }
                Activation::Time { period, jitter } => {
                    if *period == 0 || jitter >= period {
                        return Err(DslError::BadActivation {
                            pos: sp.thread(ti),
                            period: *period,
                            jitter: *jitter,
                        });
                    }
                }
                Activation::Initialization => {}
            }
            for (si, step) in th.steps.iter().enumerate() {
                match step {
                    Step::Task(t) => {
                        if !task_names.insert(t.name.as_str()) {
                            return Err(DslError::DuplicateTask {
                                pos: sp.step(ti, si),
                                name: t.name.clone(),
                            });
                        }
                        if t.bcet == 0 || t.bcet > t.wcet {
                            return Err(DslError::BadExecutionTime {
                                pos: sp.step(ti, si),
                                task: t.name.clone(),
                                wcet: t.wcet,
                                bcet: t.bcet,
                            });
                        }
                    }
                    Step::Call { target, .. } => {
                        if !self.requires.contains(&target.service) {
                            return Err(self.undeclared(sp.step(ti, si), &target.service));
                        }
                    }
                }
            }
        }
        for (i, req) in self.timings.iter().enumerate() {
            if req.bound == 0 {
                return Err(DslError::ZeroTimingBound { pos: sp.timing(i) });
            }
            let resolves = match &req.target {
                TimingTarget::Thread(name) => thread_names.contains(name.as_str()),
                TimingTarget::Method(m) => {
                    self.requires.contains(&m.service) || self.provides.contains(&m.service)
                }
            };
            if !resolves {
                return Err(DslError::UnresolvedTimingTarget {
                    pos: sp.timing(i),
                    component: self.component.clone(),
                    target: req.target.to_string(),
                });
            }
        }
        for (i, req) in self.control_flow.iter().enumerate() {
            for m in [&req.forbidden, &req.prerequisite] {
                if !self.requires.contains(&m.service) && !self.provides.contains(&m.service) {
                    return Err(self.undeclared(sp.control_flow(i), &m.service));
                }
            }
        }
        Ok(())
    }

    fn undeclared(&self, pos: Pos, service: &str) -> DslError {
        DslError::UndeclaredService {
            pos,
            component: self.component.clone(),
            service: service.to_string(),
        }
    }
}
