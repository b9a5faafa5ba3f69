//! System model: platform, configuration, update requests and the structural
//! well-formedness conditions a configuration must meet.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{is_identifier, Contract, DslError, SoftwareModel};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("unknown {kind} `{name}`")]
    Unresolved { kind: &'static str, name: String },
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("platform: duplicate resource `{0}`")]
    DuplicateResource(String),
    #[error("platform has no resources")]
    EmptyPlatform,
    #[error("cannot add `{0}`: a component with that name already exists")]
    NameCollision(String),
    #[error("cannot {op} `{name}`: no such component")]
    UnknownComponent { op: &'static str, name: String },
    #[error(transparent)]
    Contract(#[from] DslError),
}

fn unresolved(kind: &'static str, name: impl fmt::Display) -> ModelError {
    ModelError::Unresolved {
        kind,
        name: name.to_string(),
    }
}

/// `component.thread`
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ThreadId {
    pub component: String,
    pub thread: String,
}

impl ThreadId {
    pub fn new(component: &str, thread: &str) -> Self {
        ThreadId {
            component: component.to_string(),
            thread: thread.to_string(),
        }
    }
}

impl fmt::Display for ThreadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.component, self.thread)
    }
}

/// `component.task`
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskId {
    pub component: String,
    pub task: String,
}

impl TaskId {
    pub fn new(component: &str, task: &str) -> Self {
        TaskId {
            component: component.to_string(),
            task: task.to_string(),
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.component, self.task)
    }
}

fn split_dotted(s: &str) -> Option<(&str, &str)> {
    let (a, b) = s.split_once('.')?;
    (is_identifier(a) && is_identifier(b)).then_some((a, b))
}

/// Service connection `(client, service, provider)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Connection {
    pub client: String,
    pub service: String,
    pub provider: String,
}

impl Connection {
    pub fn new(client: &str, service: &str, provider: &str) -> Self {
        Connection {
            client: client.to_string(),
            service: service.to_string(),
            provider: provider.to_string(),
        }
    }
}

impl fmt::Display for Connection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {} -> {}", self.client, self.service, self.provider)
    }
}

/// A processing resource. Every resource is scheduled static-priority
/// preemptive, so only the type matters for mapping.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resource {
    pub name: String,
    pub rtype: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlatformModel {
    pub resources: BTreeMap<String, Resource>,
}

impl PlatformModel {
    pub fn new(resources: impl IntoIterator<Item = Resource>) -> Result<Self, ModelError> {
        let mut map = BTreeMap::new();
        for r in resources {
            if map.contains_key(&r.name) {
                return Err(ModelError::DuplicateResource(r.name));
            }
            map.insert(r.name.clone(), r);
        }
        if map.is_empty() {
            return Err(ModelError::EmptyPlatform);
        }
        Ok(PlatformModel { resources: map })
    }

    /// One `resource <name> type <rtype>` per line.
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let mut resources = Vec::new();
        for (i, line) in content_lines(text) {
            let words: Vec<&str> = line.split_whitespace().collect();
            match words.as_slice() {
                ["resource", name, "type", rtype]
                    if is_identifier(name) && is_identifier(rtype) =>
                {
                    resources.push(Resource {
                        name: name.to_string(),
                        rtype: rtype.to_string(),
                    })
                }
                _ => {
                    return Err(ModelError::Format {
                        line: i,
                        msg: format!("expected `resource <name> type <rtype>`, found `{line}`"),
                    })
                }
            }
        }
        PlatformModel::new(resources)
    }

    /// Resources of the given type, in name order.
    pub fn of_type<'a>(&'a self, rtype: &'a str) -> impl Iterator<Item = &'a Resource> + 'a {
        self.resources.values().filter(move |r| r.rtype == rtype)
    }
}

impl fmt::Display for PlatformModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in self.resources.values() {
            writeln!(f, "resource {} type {}", r.name, r.rtype)?;
        }
        Ok(())
    }
}

/// Non-blank lines with `#` comments stripped, numbered from 1.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

/// Selected components, service connections, task mapping and thread
/// priority order (index 0 = highest priority).
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Configuration {
    pub selected: BTreeSet<String>,
    pub connections: BTreeSet<Connection>,
    pub mapping: BTreeMap<TaskId, String>,
    pub priorities: Vec<ThreadId>,
}

impl Configuration {
    pub fn provider(&self, client: &str, service: &str) -> Option<&str> {
        self.connections
            .iter()
            .find(|c| c.client == client && c.service == service)
            .map(|c| c.provider.as_str())
    }

    /// Rank of a thread, 0 = highest priority.
    pub fn rank(&self, thread: &ThreadId) -> Option<usize> {
        self.priorities.iter().position(|t| t == thread)
    }

    pub fn ranks(&self) -> BTreeMap<ThreadId, usize> {
        self.priorities
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let mut cfg = Configuration::default();
        let mut section = None;
        let mut ranks: Vec<(usize, ThreadId)> = Vec::new();
        for (line_no, line) in content_lines(text) {
            let err = |msg: String| ModelError::Format { line: line_no, msg };
            if line.starts_with('[') {
                section = match line {
                    "[selected]" => Some(0),
                    "[connections]" => Some(1),
                    "[mapping]" => Some(2),
                    "[priorities]" => Some(3),
                    _ => return Err(err(format!("unknown section `{line}`"))),
                };
                continue;
            }
            match section {
                None => return Err(err("entry outside of a section".into())),
                Some(0) => {
                    if !is_identifier(line) {
                        return Err(err(format!("invalid component name `{line}`")));
                    }
                    cfg.selected.insert(line.to_string());
                }
                Some(1) => {
                    let parts: Vec<&str> = line.split("->").map(str::trim).collect();
                    match parts.as_slice() {
                        [c1, s, c2] if [c1, s, c2].iter().all(|p| is_identifier(p)) => {
                            cfg.connections.insert(Connection::new(c1, s, c2));
                        }
                        _ => return Err(err(format!("expected `client -> service -> provider`, found `{line}`"))),
                    }
                }
                Some(2) => {
                    let parts: Vec<&str> = line.split("->").map(str::trim).collect();
                    match parts.as_slice() {
                        [task, res] if is_identifier(res) => {
                            let (c, t) = split_dotted(task)
                                .ok_or_else(|| err(format!("expected `component.task`, found `{task}`")))?;
                            if cfg.mapping.insert(TaskId::new(c, t), res.to_string()).is_some() {
                                return Err(err(format!("task `{task}` mapped twice")));
                            }
                        }
                        _ => return Err(err(format!("expected `component.task -> resource`, found `{line}`"))),
                    }
                }
                Some(_) => {
                    let mut words = line.split_whitespace();
                    let (Some(rank), Some(thread), None) = (words.next(), words.next(), words.next())
                    else {
                        return Err(err(format!("expected `rank component.thread`, found `{line}`")));
                    };
                    let rank: usize = rank
                        .parse()
                        .map_err(|_| err(format!("invalid rank `{rank}`")))?;
                    let (c, t) = split_dotted(thread)
                        .ok_or_else(|| err(format!("expected `component.thread`, found `{thread}`")))?;
                    ranks.push((rank, ThreadId::new(c, t)));
                }
            }
        }
        ranks.sort();
        for (expected, (rank, _)) in ranks.iter().enumerate() {
            if *rank != expected {
                return Err(ModelError::Format {
                    line: 0,
                    msg: format!("priority ranks must be 0..{} without gaps or repeats", ranks.len()),
                });
            }
        }
        cfg.priorities = ranks.into_iter().map(|(_, t)| t).collect();
        Ok(cfg)
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[selected]")?;
        for c in &self.selected {
            writeln!(f, "{c}")?;
        }
        writeln!(f, "\n[connections]")?;
        for c in &self.connections {
            writeln!(f, "{c}")?;
        }
        writeln!(f, "\n[mapping]")?;
        for (t, r) in &self.mapping {
            writeln!(f, "{t} -> {r}")?;
        }
        writeln!(f, "\n[priorities]")?;
        for (i, t) in self.priorities.iter().enumerate() {
            writeln!(f, "{i} {t}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SystemModel {
    pub software: SoftwareModel,
    pub platform: PlatformModel,
    pub config: Configuration,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChangeType {
    Add,
    Remove,
    Update,
}

impl fmt::Display for ChangeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChangeType::Add => "add",
            ChangeType::Remove => "remove",
            ChangeType::Update => "update",
        })
    }
}

/// A change to the software model. For `Remove` only the component name of
/// the contract is consulted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UpdateRequest {
    pub change: ChangeType,
    pub contract: Contract,
}

impl UpdateRequest {
    pub fn add(contract: Contract) -> Self {
        UpdateRequest {
            change: ChangeType::Add,
            contract,
        }
    }

    pub fn remove(component: &str) -> Self {
        UpdateRequest {
            change: ChangeType::Remove,
            contract: Contract::new(component),
        }
    }

    pub fn update(contract: Contract) -> Self {
        UpdateRequest {
            change: ChangeType::Update,
            contract,
        }
    }
}

impl fmt::Display for UpdateRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.change, self.contract.component)
    }
}

/// Apply one request, returning a new model.
pub fn apply_update(
    software: &SoftwareModel,
    req: &UpdateRequest,
) -> Result<SoftwareModel, ModelError> {
    let name = &req.contract.component;
    let mut next = software.clone();
    match req.change {
        ChangeType::Add => {
            if next.contracts.contains_key(name) {
                return Err(ModelError::NameCollision(name.clone()));
            }
            next.check_contract(&req.contract)?;
            next.contracts.insert(name.clone(), req.contract.clone());
        }
        ChangeType::Remove => {
            if next.contracts.remove(name).is_none() {
                return Err(ModelError::UnknownComponent {
                    op: "remove",
                    name: name.clone(),
                });
            }
        }
        ChangeType::Update => {
            if !next.contracts.contains_key(name) {
                return Err(ModelError::UnknownComponent {
                    op: "update",
                    name: name.clone(),
                });
            }
            next.check_contract(&req.contract)?;
            next.contracts.insert(name.clone(), req.contract.clone());
        }
    }
    Ok(next)
}

/// Apply a batch of requests atomically: either all succeed or the original
/// model is left as the only result.
pub fn apply_updates(
    software: &SoftwareModel,
    reqs: &[UpdateRequest],
) -> Result<SoftwareModel, ModelError> {
    reqs.iter()
        .try_fold(software.clone(), |m, r| apply_update(&m, r))
}

/// Which structural condition a configuration violates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    /// Connections link a client that requires the service to a different
    /// component that provides it, both selected.
    ConnectionTyping,
    /// Every required service of a selected component has exactly one
    /// selected provider.
    UniqueProvider,
    /// Tasks are mapped onto resources of their declared type.
    MappingType,
    /// The priority order covers exactly the threads of the selected
    /// components, so all tasks of a thread share its priority.
    ThreadPriority,
    /// No provider serves a service to more clients than its interface allows.
    MaxClients,
    /// No thread occurs twice in the priority order.
    StrictOrder,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::ConnectionTyping => "condition 1",
            Condition::UniqueProvider => "condition 2",
            Condition::MappingType => "condition 3",
            Condition::ThreadPriority => "condition 4",
            Condition::MaxClients => "max_clients",
            Condition::StrictOrder => "strict order",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Violation {
    pub condition: Condition,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.condition, self.detail)
    }
}

/// Check the structural conditions. Returns every violation found (empty
/// means well-formed); names that do not resolve against the models are an
/// error rather than a violation.
pub fn check_well_formed(
    cfg: &Configuration,
    software: &SoftwareModel,
    platform: &PlatformModel,
) -> Result<Vec<Violation>, ModelError> {
    resolve_names(cfg, software, platform)?;
    let mut out = Vec::new();
    let mut v = |condition, detail: String| out.push(Violation { condition, detail });

    for conn in &cfg.connections {
        let client = &software.contracts[&conn.client];
        let provider = &software.contracts[&conn.provider];
        if conn.client == conn.provider {
            v(Condition::ConnectionTyping, format!("{conn}: a component cannot serve itself"));
        }
        if !client.requires.contains(&conn.service) {
            v(Condition::ConnectionTyping, format!("{conn}: {} does not require {}", conn.client, conn.service));
        }
        if !provider.provides.contains(&conn.service) {
            v(Condition::ConnectionTyping, format!("{conn}: {} does not provide {}", conn.provider, conn.service));
        }
        for end in [&conn.client, &conn.provider] {
            if !cfg.selected.contains(end) {
                v(Condition::ConnectionTyping, format!("{conn}: {end} is not selected"));
            }
        }
    }

    for name in &cfg.selected {
        let c = &software.contracts[name];
        for s in &c.requires {
            let n = cfg
                .connections
                .iter()
                .filter(|k| &k.client == name && &k.service == s && cfg.selected.contains(&k.provider))
                .count();
            if n != 1 {
                v(
                    Condition::UniqueProvider,
                    format!("({name}, {s}) has {n} selected providers, expected exactly 1"),
                );
            }
        }
    }

    for name in &cfg.selected {
        for (_, task) in software.contracts[name].tasks() {
            let id = TaskId::new(name, &task.name);
            match cfg.mapping.get(&id) {
                None => v(Condition::MappingType, format!("{id} is not mapped")),
                Some(r) => {
                    let rtype = &platform.resources[r].rtype;
                    if rtype != &task.resource_type {
                        v(
                            Condition::MappingType,
                            format!("{id} needs {} but {r} is {rtype}", task.resource_type),
                        );
                    }
                }
            }
        }
    }
    for id in cfg.mapping.keys() {
        if !cfg.selected.contains(&id.component) {
            v(Condition::MappingType, format!("{id} belongs to an unselected component"));
        }
    }

    let mut seen = BTreeSet::new();
    for t in &cfg.priorities {
        if !seen.insert(t) {
            v(Condition::StrictOrder, format!("{t} appears more than once"));
        }
        if !cfg.selected.contains(&t.component) {
            v(Condition::ThreadPriority, format!("{t} belongs to an unselected component"));
        }
    }
    for name in &cfg.selected {
        for th in &software.contracts[name].threads {
            let id = ThreadId::new(name, &th.name);
            if !seen.contains(&id) {
                v(Condition::ThreadPriority, format!("{id} has no priority"));
            }
        }
    }

    let mut clients: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for conn in &cfg.connections {
        *clients.entry((&conn.service, &conn.provider)).or_default() += 1;
    }
    for ((service, provider), n) in clients {
        if let Some(max) = software.services.max_clients(service) {
            if n > max as usize {
                v(
                    Condition::MaxClients,
                    format!("{provider} serves {service} to {n} clients, at most {max} allowed"),
                );
            }
        }
    }
    out.sort();
    Ok(out)
}

fn resolve_names(
    cfg: &Configuration,
    software: &SoftwareModel,
    platform: &PlatformModel,
) -> Result<(), ModelError> {
    let component = |n: &str| {
        software
            .contract(n)
            .ok_or_else(|| unresolved("component", n))
    };
    for c in &cfg.selected {
        component(c)?;
    }
    for conn in &cfg.connections {
        component(&conn.client)?;
        component(&conn.provider)?;
        if software.services.get(&conn.service).is_none() {
            return Err(unresolved("service", &conn.service));
        }
    }
    for (t, r) in &cfg.mapping {
        if component(&t.component)?.task(&t.task).is_none() {
            return Err(unresolved("task", t));
        }
        if !platform.resources.contains_key(r) {
            return Err(unresolved("resource", r));
        }
    }
    for t in &cfg.priorities {
        if component(&t.component)?.thread(&t.thread).is_none() {
            return Err(unresolved("thread", t));
        }
    }
    Ok(())
}
