//! The configuration space as decision variables plus constraints.
//!
//! Candidates are enumerated depth first. Connection assignments come from
//! the dependency resolver (smallest open `(client, service)` pair first,
//! providers in name order), the selection follows from them, mappings are
//! enumerated task by task in name order, and priority orders come from a
//! caller-supplied heuristic with exhaustive fallback for small thread sets.
//! Every constraint only ever removes candidates, so a cursor that has moved
//! past a candidate never needs to revisit it.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::{self, Write};

use serde::{Deserialize, Serialize};

use crate::deps::{connection_candidates, enumerate_assignments, selected_by, ConnectionCandidates, Requirement};
use crate::dsl::SoftwareModel;
use crate::model::{Condition, Configuration, Connection, ModelError, PlatformModel, TaskId, ThreadId};

/// Threads up to which priority orders are enumerated exhaustively.
pub const EXHAUSTIVE_THREADS: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Literal {
    Sel(String),
    Conn(Connection),
    Map { task: TaskId, resource: String },
}

impl Literal {
    pub fn holds(&self, cfg: &Configuration) -> bool {
        match self {
            Literal::Sel(c) => cfg.selected.contains(c),
            Literal::Conn(c) => cfg.connections.contains(c),
            Literal::Map { task, resource } => cfg.mapping.get(task) == Some(resource),
        }
    }

    pub fn map(task: &TaskId, resource: &str) -> Self {
        Literal::Map {
            task: task.clone(),
            resource: resource.to_string(),
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Sel(c) => write!(f, "sel({c})"),
            Literal::Conn(c) => write!(f, "conn({},{},{})", c.client, c.service, c.provider),
            Literal::Map { task, resource } => write!(f, "map({task},{resource})"),
        }
    }
}

/// `(above, below)`: the first thread has the higher priority.
pub type Precedence = (ThreadId, ThreadId);

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Constraint {
    /// Enforced by construction of the enumeration; listed for the record.
    Structural(Condition),
    /// Not all of these literals may hold. The empty conjunction is false.
    ForbidConjunction(BTreeSet<Literal>),
    PriorityPrecedence { above: ThreadId, below: ThreadId },
    /// When the whole context holds, at least one pair must be reversed.
    PriorityNogood {
        context: BTreeSet<Literal>,
        pairs: BTreeSet<Precedence>,
    },
}

impl Constraint {
    pub fn forbid(lits: impl IntoIterator<Item = Literal>) -> Self {
        Constraint::ForbidConjunction(lits.into_iter().collect())
    }

    /// Whether a complete configuration satisfies the constraint. Structural
    /// conditions are checked by `check_well_formed` instead.
    pub fn satisfied_by(&self, cfg: &Configuration) -> bool {
        match self {
            Constraint::Structural(_) => true,
            Constraint::ForbidConjunction(lits) => !lits.iter().all(|l| l.holds(cfg)),
            Constraint::PriorityPrecedence { above, below } => above_in(cfg, above, below) != Some(false),
            Constraint::PriorityNogood { context, pairs } => {
                !(context.iter().all(|l| l.holds(cfg))
                    && pairs.iter().all(|(a, b)| above_in(cfg, a, b) == Some(true)))
            }
        }
    }
}

fn above_in(cfg: &Configuration, a: &ThreadId, b: &ThreadId) -> Option<bool> {
    Some(cfg.rank(a)? < cfg.rank(b)?)
}

fn join<T: fmt::Display>(items: impl IntoIterator<Item = T>, sep: &str) -> String {
    items.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(sep)
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constraint::Structural(c) => write!(f, "structural {c}"),
            Constraint::ForbidConjunction(lits) => write!(f, "forbid {{{}}}", join(lits, " & ")),
            Constraint::PriorityPrecedence { above, below } => write!(f, "precedence {above} > {below}"),
            Constraint::PriorityNogood { context, pairs } => {
                let pairs = join(pairs.iter().map(|(a, b)| format!("{a} > {b}")), ", ");
                if context.is_empty() {
                    write!(f, "nogood not all {{{pairs}}}")
                } else {
                    write!(f, "nogood when {{{}}} not all {{{pairs}}}", join(context, " & "))
                }
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DecisionVars {
    pub pinned: BTreeSet<String>,
    /// Components that can be selected at all.
    pub components: BTreeSet<String>,
    pub conn: BTreeMap<Requirement, Vec<String>>,
    pub map: BTreeMap<TaskId, Vec<String>>,
    pub threads: BTreeMap<String, Vec<ThreadId>>,
}

/// Priority constraints that apply to one structural candidate.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OrderConstraints {
    /// Threads to order, sorted.
    pub threads: Vec<ThreadId>,
    pub precedences: BTreeSet<Precedence>,
    pub nogoods: Vec<BTreeSet<Precedence>>,
}

impl OrderConstraints {
    pub fn allows(&self, order: &[ThreadId]) -> bool {
        let rank: BTreeMap<&ThreadId, usize> = order.iter().enumerate().map(|(i, t)| (t, i)).collect();
        let above = |(a, b): &Precedence| rank[a] < rank[b];
        order.len() == self.threads.len()
            && self.threads.iter().all(|t| rank.contains_key(t))
            && self.precedences.iter().all(above)
            && self.nogoods.iter().all(|ng| !ng.iter().all(above))
    }
}

/// What a priority heuristic hands back: an order to try, and constraints it
/// derived on the way.
#[derive(Clone, Debug, Default)]
pub struct Ranking {
    pub order: Option<Vec<ThreadId>>,
    pub derived: Vec<Constraint>,
}

#[derive(Clone, Debug, Default)]
struct Cursor {
    conn: usize,
    map: Option<Vec<usize>>,
    perm: Option<Vec<usize>>,
}

#[derive(Clone, Debug)]
pub struct ConstraintStore {
    pub vars: DecisionVars,
    cands: ConnectionCandidates,
    always: BTreeSet<String>,
    assignments: Vec<BTreeSet<Connection>>,
    constraints: Vec<Constraint>,
    known: HashSet<Constraint>,
    unsat: bool,
    cursor: Cursor,
    emitted: HashSet<Configuration>,
    derived: Vec<Constraint>,
}

impl ConstraintStore {
    /// The space of well-formed configurations that select `pinned`.
    pub fn init_space(
        software: &SoftwareModel,
        platform: &PlatformModel,
        pinned: &BTreeSet<String>,
    ) -> Result<Self, ModelError> {
        let cands = connection_candidates(software, pinned)?;
        let mut vars = DecisionVars {
            pinned: pinned.clone(),
            components: cands.reachable.clone(),
            ..Default::default()
        };
        for req in cands.requirements() {
            let providers = cands.providers(&req);
            vars.conn.insert(req, providers);
        }
        for name in &cands.reachable {
            let contract = &software.contracts[name];
            for (_, t) in contract.tasks() {
                let dom = platform.of_type(&t.resource_type).map(|r| r.name.clone()).collect();
                vars.map.insert(TaskId::new(name, &t.name), dom);
            }
            vars.threads.insert(
                name.clone(),
                contract.threads.iter().map(|t| ThreadId::new(name, &t.name)).collect(),
            );
        }
        let mut assignments = Vec::new();
        enumerate_assignments(&cands, &software.services, |a| {
            assignments.push(a.clone());
            true
        });
        let always = cands.always_selected();
        let mut store = ConstraintStore {
            vars,
            cands,
            always,
            assignments,
            constraints: Vec::new(),
            known: HashSet::new(),
            unsat: false,
            cursor: Cursor::default(),
            emitted: HashSet::new(),
            derived: Vec::new(),
        };
        for c in [
            Condition::ConnectionTyping,
            Condition::UniqueProvider,
            Condition::MappingType,
            Condition::ThreadPriority,
            Condition::MaxClients,
            Condition::StrictOrder,
        ] {
            store.add_constraint(Constraint::Structural(c));
        }
        Ok(store)
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn candidates(&self) -> &ConnectionCandidates {
        &self.cands
    }

    pub fn is_unsatisfiable(&self) -> bool {
        self.unsat
    }

    /// Add a constraint after simplifying it against the literals that hold
    /// in every candidate. Returns the stored form, or `None` if it was
    /// already known.
    pub fn add_constraint(&mut self, k: Constraint) -> Option<Constraint> {
        let k = self.simplify(k);
        if !self.known.insert(k.clone()) {
            return None;
        }
        match &k {
            Constraint::ForbidConjunction(lits) if lits.is_empty() => self.unsat = true,
            Constraint::PriorityNogood { context, pairs } if context.is_empty() && pairs.is_empty() => {
                self.unsat = true
            }
            _ => {}
        }
        self.constraints.push(k.clone());
        Some(k)
    }

    /// Constraints derived by the priority heuristic since the last call.
    pub fn take_derived(&mut self) -> Vec<Constraint> {
        std::mem::take(&mut self.derived)
    }

    /// Record a configuration obtained elsewhere so it is never emitted.
    pub fn mark_emitted(&mut self, cfg: &Configuration) {
        self.emitted.insert(cfg.clone());
    }

    pub fn satisfies(&self, cfg: &Configuration) -> bool {
        !self.unsat && self.constraints.iter().all(|k| k.satisfied_by(cfg))
    }

    fn always_true(&self, lit: &Literal) -> bool {
        match lit {
            Literal::Sel(c) => self.always.contains(c),
            Literal::Conn(c) => {
                self.always.contains(&c.client)
                    && self.vars.conn.get(&(c.client.clone(), c.service.clone()))
                        == Some(&vec![c.provider.clone()])
            }
            Literal::Map { task, resource } => {
                self.always.contains(&task.component) && self.vars.map.get(task) == Some(&vec![resource.clone()])
            }
        }
    }

    fn simplify_lits(&self, lits: &BTreeSet<Literal>) -> BTreeSet<Literal> {
        // A mapping with a single choice holds exactly when its component is
        // selected.
        let kept: BTreeSet<Literal> = lits
            .iter()
            .map(|l| match l {
                Literal::Map { task, resource } if self.vars.map.get(task) == Some(&vec![resource.clone()]) => {
                    Literal::Sel(task.component.clone())
                }
                other => other.clone(),
            })
            .filter(|l| !self.always_true(l))
            .collect();
        let implied: BTreeSet<&str> = kept
            .iter()
            .flat_map(|l| match l {
                Literal::Sel(_) => vec![],
                Literal::Conn(c) => vec![c.client.as_str(), c.provider.as_str()],
                Literal::Map { task, .. } => vec![task.component.as_str()],
            })
            .collect();
        kept.iter()
            .filter(|l| !matches!(l, Literal::Sel(c) if implied.contains(c.as_str())))
            .cloned()
            .collect()
    }

    fn simplify(&self, k: Constraint) -> Constraint {
        match k {
            Constraint::ForbidConjunction(lits) => Constraint::ForbidConjunction(self.simplify_lits(&lits)),
            Constraint::PriorityNogood { context, pairs } => {
                let context = self.simplify_lits(&context);
                if context.is_empty() && pairs.len() == 1 {
                    let (a, b) = pairs.into_iter().next().unwrap_or_else(|| unreachable!());
                    Constraint::PriorityPrecedence { above: b, below: a }
                } else {
                    Constraint::PriorityNogood { context, pairs }
                }
            }
            other => other,
        }
    }

    /// Connection assignments that no sel/conn-only constraint excludes.
    pub fn connection_assignments(&self) -> Vec<&BTreeSet<Connection>> {
        if self.unsat {
            return Vec::new();
        }
        (0..self.assignments.len())
            .filter(|&i| self.conn_ok(i))
            .map(|i| &self.assignments[i])
            .collect()
    }

    fn structure(&self, i: usize) -> (BTreeSet<String>, &BTreeSet<Connection>) {
        (selected_by(&self.vars.pinned, &self.assignments[i]), &self.assignments[i])
    }

    /// Evaluate a literal without a mapping: `None` for map literals.
    fn lit_without_map(sel: &BTreeSet<String>, conns: &BTreeSet<Connection>, lit: &Literal) -> Option<bool> {
        match lit {
            Literal::Sel(c) => Some(sel.contains(c)),
            Literal::Conn(c) => Some(conns.contains(c)),
            Literal::Map { task, .. } => (!sel.contains(&task.component)).then_some(false),
        }
    }

    fn conn_ok(&self, i: usize) -> bool {
        let (sel, conns) = self.structure(i);
        self.constraints.iter().all(|k| match k {
            Constraint::ForbidConjunction(lits) => {
                lits.iter().any(|l| Self::lit_without_map(&sel, conns, l) != Some(true))
                    || lits.iter().any(|l| matches!(l, Literal::Map { .. }))
            }
            _ => true,
        })
    }

    fn tasks_of(&self, sel: &BTreeSet<String>) -> Vec<TaskId> {
        self.vars
            .map
            .keys()
            .filter(|t| sel.contains(&t.component))
            .cloned()
            .collect()
    }

    /// Next mapping of the tasks of assignment `i` after `after`, honoring
    /// every forbid whose literals are all decided.
    fn next_mapping(&self, i: usize, after: Option<&[usize]>) -> Option<Vec<usize>> {
        let (sel, conns) = self.structure(i);
        let tasks = self.tasks_of(&sel);
        let sizes: Vec<usize> = tasks.iter().map(|t| self.vars.map[t].len()).collect();
        let relevant: Vec<&BTreeSet<Literal>> = self
            .constraints
            .iter()
            .filter_map(|k| match k {
                Constraint::ForbidConjunction(lits)
                    if lits.iter().all(|l| Self::lit_without_map(&sel, conns, l) != Some(false)) =>
                {
                    Some(lits)
                }
                _ => None,
            })
            .collect();
        let index: BTreeMap<&TaskId, usize> = tasks.iter().enumerate().map(|(i, t)| (t, i)).collect();
        next_assignment(&sizes, after, |prefix| {
            relevant.iter().all(|lits| {
                !lits.iter().all(|l| match l {
                    Literal::Map { task, resource } => index
                        .get(task)
                        .and_then(|&k| prefix.get(k))
                        .is_some_and(|&v| &self.vars.map[task][v] == resource),
                    _ => true,
                })
            })
        })
    }

    fn partial_config(&self, i: usize, mapping: &[usize]) -> Configuration {
        let (sel, conns) = self.structure(i);
        let tasks = self.tasks_of(&sel);
        Configuration {
            mapping: tasks
                .into_iter()
                .zip(mapping)
                .map(|(t, &v)| {
                    let r = self.vars.map[&t][v].clone();
                    (t, r)
                })
                .collect(),
            selected: sel,
            connections: conns.clone(),
            priorities: Vec::new(),
        }
    }

    /// Priority constraints active under a configuration's structure.
    pub fn order_constraints(&self, partial: &Configuration) -> OrderConstraints {
        let threads: Vec<ThreadId> = partial
            .selected
            .iter()
            .flat_map(|c| self.vars.threads.get(c).into_iter().flatten().cloned())
            .collect();
        let present: BTreeSet<&ThreadId> = threads.iter().collect();
        let mut oc = OrderConstraints {
            precedences: BTreeSet::new(),
            nogoods: Vec::new(),
            threads: Vec::new(),
        };
        for k in &self.constraints {
            match k {
                Constraint::PriorityPrecedence { above, below } if present.contains(above) && present.contains(below) => {
                    oc.precedences.insert((above.clone(), below.clone()));
                }
                Constraint::PriorityNogood { context, pairs }
                    if context.iter().all(|l| l.holds(partial))
                        && pairs.iter().all(|(a, b)| present.contains(a) && present.contains(b)) =>
                {
                    if pairs.len() == 1 {
                        let (a, b) = pairs.iter().next().cloned().unwrap_or_else(|| unreachable!());
                        oc.precedences.insert((b, a));
                    } else {
                        oc.nogoods.push(pairs.clone());
                    }
                }
                _ => {}
            }
        }
        oc.nogoods.sort();
        oc.nogoods.dedup();
        oc.threads = threads;
        oc.threads.sort();
        oc
    }

    fn next_perm(oc: &OrderConstraints, after: Option<&[usize]>) -> Option<Vec<usize>> {
        let n = oc.threads.len();
        let idx: BTreeMap<&ThreadId, usize> = oc.threads.iter().enumerate().map(|(i, t)| (t, i)).collect();
        let prec: Vec<(usize, usize)> = oc.precedences.iter().map(|(a, b)| (idx[a], idx[b])).collect();
        let nogoods: Vec<Vec<(usize, usize)>> = oc
            .nogoods
            .iter()
            .map(|ng| ng.iter().map(|(a, b)| (idx[a], idx[b])).collect())
            .collect();
        next_assignment(&vec![n; n], after, |prefix| {
            let last = prefix[prefix.len() - 1];
            if prefix[..prefix.len() - 1].contains(&last) {
                return false;
            }
            let pos = |t: usize| prefix.iter().position(|&x| x == t);
            // `a above b` is decided true once a is placed ahead of b.
            let decided = |(a, b): (usize, usize)| match (pos(a), pos(b)) {
                (Some(pa), Some(pb)) => pa < pb,
                (Some(_), None) => true,
                _ => false,
            };
            prec.iter().all(|&(a, b)| match pos(b) {
                None => true,
                Some(pb) => pos(a).is_some_and(|pa| pa < pb),
            }) && nogoods.iter().all(|ng| !ng.iter().all(|&p| decided(p)))
        })
    }

    /// Next candidate in enumeration order, with priority orders supplied by
    /// exhaustive enumeration only.
    pub fn next_candidate(&mut self) -> Option<Configuration> {
        self.next_candidate_with(|_, _| Ranking::default())
    }

    /// Next candidate; `rank` proposes a priority order for a structural
    /// candidate under its active priority constraints.
    pub fn next_candidate_with(
        &mut self,
        mut rank: impl FnMut(&Configuration, &OrderConstraints) -> Ranking,
    ) -> Option<Configuration> {
        loop {
            if self.unsat || self.cursor.conn >= self.assignments.len() {
                return None;
            }
            let i = self.cursor.conn;
            if !self.conn_ok(i) {
                self.advance_conn();
                continue;
            }
            let mapping = match &self.cursor.map {
                Some(m) => m.clone(),
                None => match self.next_mapping(i, None) {
                    Some(m) => {
                        self.cursor.map = Some(m.clone());
                        m
                    }
                    None => {
                        self.advance_conn();
                        continue;
                    }
                },
            };
            let mut partial = self.partial_config(i, &mapping);
            if !self.constraints.iter().all(|k| match k {
                Constraint::ForbidConjunction(_) => k.satisfied_by(&partial),
                _ => true,
            }) {
                self.advance_map();
                continue;
            }
            let mut oc = self.order_constraints(&partial);
            let ranking = rank(&partial, &oc);
            if !ranking.derived.is_empty() {
                for k in ranking.derived {
                    if let Some(k) = self.add_constraint(k) {
                        self.derived.push(k);
                    }
                }
                oc = self.order_constraints(&partial);
            }
            if let Some(order) = ranking.order {
                partial.priorities = order;
                if oc.allows(&partial.priorities) && self.emit(&partial) {
                    return Some(partial);
                }
            }
            if oc.threads.len() <= EXHAUSTIVE_THREADS {
                while let Some(p) = Self::next_perm(&oc, self.cursor.perm.as_deref()) {
                    partial.priorities = p.iter().map(|&k| oc.threads[k].clone()).collect();
                    self.cursor.perm = Some(p);
                    if self.emit(&partial) {
                        return Some(partial);
                    }
                }
            }
            self.advance_map();
        }
    }

    fn emit(&mut self, cfg: &Configuration) -> bool {
        self.emitted.insert(cfg.clone())
    }

    fn advance_conn(&mut self) {
        self.cursor = Cursor {
            conn: self.cursor.conn + 1,
            map: None,
            perm: None,
        };
    }

    fn advance_map(&mut self) {
        let i = self.cursor.conn;
        let next = self.cursor.map.as_deref().and_then(|m| self.next_mapping(i, Some(m)));
        match next {
            Some(m) => {
                self.cursor.map = Some(m);
                self.cursor.perm = None;
            }
            None => self.advance_conn(),
        }
    }

    /// Stable textual listing of variables, domains and constraints.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "pinned: {}", join(&self.vars.pinned, " "));
        let _ = writeln!(out, "components: {}", join(&self.vars.components, " "));
        for ((c, s), dom) in &self.vars.conn {
            let _ = writeln!(out, "conn[{c},{s}] in {{{}}}", dom.join(", "));
        }
        for (t, dom) in &self.vars.map {
            let _ = writeln!(out, "map[{t}] in {{{}}}", dom.join(", "));
        }
        for (c, ts) in &self.vars.threads {
            if !ts.is_empty() {
                let _ = writeln!(out, "rank[{c}] over {{{}}}", join(ts, ", "));
            }
        }
        let _ = writeln!(out, "connection assignments: {}", self.connection_assignments().len());
        for k in &self.constraints {
            let _ = writeln!(out, "{k}");
        }
        if self.unsat {
            let _ = writeln!(out, "unsatisfiable");
        }
        out
    }
}

/// Depth-first odometer: the next vector `v` (with `v[k] < sizes[k]`) after
/// `after` in lexicographic order such that every prefix passes `ok`.
/// `ok` sees each prefix with its newest element last.
pub fn next_assignment(
    sizes: &[usize],
    after: Option<&[usize]>,
    mut ok: impl FnMut(&[usize]) -> bool,
) -> Option<Vec<usize>> {
    let n = sizes.len();
    let mut stack: Vec<usize>;
    let mut from;
    match after {
        None if n == 0 => return Some(Vec::new()),
        None => {
            stack = Vec::with_capacity(n);
            from = 0;
        }
        Some(a) => {
            stack = a.to_vec();
            from = stack.pop()? + 1;
        }
    }
    loop {
        let depth = stack.len();
        let mut found = false;
        for v in from..sizes[depth] {
            stack.push(v);
            if ok(&stack) {
                found = true;
                break;
            }
            stack.pop();
        }
        if found {
            if stack.len() == n {
                return Some(stack);
            }
            from = 0;
        } else {
            from = stack.pop()? + 1;
        }
    }
}
