//! Functional dependencies: which (client, service) pairs have a forced
//! provider, which have a choice, and which cannot be satisfied.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use crate::dsl::{ServiceRepository, SoftwareModel};
use crate::model::{Connection, ModelError};

/// `(client, service)`
pub type Requirement = (String, String);

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConnectionCandidates {
    pub pinned: BTreeSet<String>,
    /// Pairs with exactly one provider.
    pub must: BTreeSet<Connection>,
    /// Pairs with two or more providers.
    pub may: BTreeMap<Requirement, BTreeSet<String>>,
    /// Pairs nobody provides.
    pub unsatisfiable: BTreeSet<Requirement>,
    /// Everything reachable from `pinned` through some provider choice.
    pub reachable: BTreeSet<String>,
    requires: BTreeMap<String, BTreeSet<String>>,
}

impl ConnectionCandidates {
    /// Providers of a pair in name order; empty if unsatisfiable or unknown.
    pub fn providers(&self, req: &Requirement) -> Vec<String> {
        if let Some(ps) = self.may.get(req) {
            return ps.iter().cloned().collect();
        }
        self.must
            .iter()
            .filter(|c| c.client == req.0 && c.service == req.1)
            .map(|c| c.provider.clone())
            .collect()
    }

    /// Requirements of one component, in service-name order.
    pub fn requirements_of(&self, component: &str) -> Vec<Requirement> {
        self.requires
            .get(component)
            .into_iter()
            .flatten()
            .map(|s| (component.to_string(), s.clone()))
            .collect()
    }

    /// All pairs of reachable components.
    pub fn requirements(&self) -> Vec<Requirement> {
        self.reachable
            .iter()
            .flat_map(|c| self.requirements_of(c))
            .collect()
    }

    /// Components selected in every solution: the pinned set closed under
    /// must edges.
    pub fn always_selected(&self) -> BTreeSet<String> {
        let mut out = self.pinned.clone();
        let mut work: Vec<String> = out.iter().cloned().collect();
        while let Some(c) = work.pop() {
            for m in self.must.iter().filter(|m| m.client == c) {
                if out.insert(m.provider.clone()) {
                    work.push(m.provider.clone());
                }
            }
        }
        out
    }

    /// Deterministic edge list: `must`, `may` and `unsatisfiable` lines.
    pub fn edge_list(&self) -> String {
        let mut out = String::new();
        for c in &self.must {
            let _ = writeln!(out, "must {} -> {} -> {}", c.client, c.service, c.provider);
        }
        for ((client, service), ps) in &self.may {
            for p in ps {
                let _ = writeln!(out, "may {client} -> {service} -> {p}");
            }
        }
        for (client, service) in &self.unsatisfiable {
            let _ = writeln!(out, "unsatisfiable {client} -> {service}");
        }
        out
    }

    /// Graphviz rendering: solid edges for must, dashed for may.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph dependencies {\n  rankdir=LR;\n");
        for c in &self.reachable {
            let shape = if self.pinned.contains(c) { "doublecircle" } else { "circle" };
            let _ = writeln!(out, "  \"{c}\" [shape={shape}];");
        }
        for c in &self.must {
            let _ = writeln!(
                out,
                "  \"{}\" -> \"{}\" [label=\"{}\"];",
                c.client, c.provider, c.service
            );
        }
        for ((client, service), ps) in &self.may {
            for p in ps {
                let _ = writeln!(
                    out,
                    "  \"{client}\" -> \"{p}\" [label=\"{service}\", style=dashed];"
                );
            }
        }
        for (client, service) in &self.unsatisfiable {
            let _ = writeln!(
                out,
                "  \"{client}\" -> \"?{service}\" [style=dotted, color=red];"
            );
        }
        out.push_str("}\n");
        out
    }
}

/// Classify the requirements of everything reachable from `pinned`.
/// A component never provides to itself.
pub fn connection_candidates(
    software: &SoftwareModel,
    pinned: &BTreeSet<String>,
) -> Result<ConnectionCandidates, ModelError> {
    let mut cands = ConnectionCandidates {
        pinned: pinned.clone(),
        ..Default::default()
    };
    let mut work: Vec<String> = Vec::new();
    for p in pinned {
        if software.contract(p).is_none() {
            return Err(ModelError::Unresolved {
                kind: "component",
                name: p.clone(),
            });
        }
        if cands.reachable.insert(p.clone()) {
            work.push(p.clone());
        }
    }
    while let Some(name) = work.pop() {
        let contract = &software.contracts[&name];
        cands.requires.insert(name.clone(), contract.requires.clone());
        for s in &contract.requires {
            let providers: BTreeSet<String> = software
                .providers_of(s, &name)
                .map(str::to_string)
                .collect();
            for p in &providers {
                if cands.reachable.insert(p.clone()) {
                    work.push(p.clone());
                }
            }
            let req = (name.clone(), s.clone());
            match providers.len() {
                0 => {
                    cands.unsatisfiable.insert(req);
                }
                1 => {
                    let p = providers.into_iter().next().unwrap_or_default();
                    cands.must.insert(Connection::new(&name, s, &p));
                }
                _ => {
                    cands.may.insert(req, providers);
                }
            }
        }
    }
    Ok(cands)
}

/// Complete connection assignments honoring max_clients, in depth-first
/// order: the smallest pending pair is decided first and providers are tried
/// in name order. A provider's requirements become pending only once it is
/// chosen.
pub fn enumerate_assignments(
    cands: &ConnectionCandidates,
    services: &ServiceRepository,
    mut visit: impl FnMut(&BTreeSet<Connection>) -> bool,
) {
    let pending: BTreeSet<Requirement> = cands
        .pinned
        .iter()
        .flat_map(|c| cands.requirements_of(c))
        .collect();
    let mut chosen = BTreeSet::new();
    let mut selected = cands.pinned.clone();
    let mut load = BTreeMap::new();
    dfs(
        cands,
        services,
        pending,
        &mut chosen,
        &mut selected,
        &mut load,
        &mut visit,
    );
}

fn dfs(
    cands: &ConnectionCandidates,
    services: &ServiceRepository,
    mut pending: BTreeSet<Requirement>,
    chosen: &mut BTreeSet<Connection>,
    selected: &mut BTreeSet<String>,
    load: &mut BTreeMap<(String, String), u32>,
    visit: &mut impl FnMut(&BTreeSet<Connection>) -> bool,
) -> bool {
    let Some(req) = pending.pop_first() else {
        return visit(chosen);
    };
    let (client, service) = &req;
    for p in cands.providers(&req) {
        let key = (service.clone(), p.clone());
        let n = load.get(&key).copied().unwrap_or(0);
        if services.max_clients(service).is_some_and(|max| n >= max) {
            continue;
        }
        let conn = Connection::new(client, service, &p);
        let newly = selected.insert(p.clone());
        let mut next = pending.clone();
        if newly {
            next.extend(cands.requirements_of(&p));
        }
        load.insert(key.clone(), n + 1);
        chosen.insert(conn.clone());
        let go_on = dfs(cands, services, next, chosen, selected, load, visit);
        chosen.remove(&conn);
        load.insert(key, n);
        if newly {
            selected.remove(&p);
        }
        if !go_on {
            return false;
        }
    }
    true
}

/// Number of complete connection assignments.
pub fn count_solutions(cands: &ConnectionCandidates, services: &ServiceRepository) -> u64 {
    let mut n = 0;
    enumerate_assignments(cands, services, |_| {
        n += 1;
        true
    });
    n
}

/// Components selected by an assignment: the pinned set plus every chosen
/// provider.
pub fn selected_by(pinned: &BTreeSet<String>, conns: &BTreeSet<Connection>) -> BTreeSet<String> {
    let mut out = pinned.clone();
    out.extend(conns.iter().map(|c| c.provider.clone()));
    out
}
