//! Control-flow viewpoint: `not X until Y` requirements checked on the
//! mode-and-sequence call profile of a configuration.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use crate::dsl::{Activation, MethodRef, NotUntilReq, SoftwareModel};
use crate::model::{Configuration, Connection, ThreadId};
use crate::store::{Constraint, Literal};
use crate::taskgraph::Mode;

/// One call step as it can execute under a configuration.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct CallSite {
    /// Thread containing the call step.
    pub thread: ThreadId,
    pub step: usize,
    pub target: MethodRef,
    pub provider: String,
    pub mode: Mode,
    /// Connections traversed from a root thread to `thread`, first path found
    /// breadth-first.
    pub path: BTreeSet<Connection>,
}

/// Every reachable call of the selected components, keyed by calling
/// component.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CallProfile {
    pub calls: BTreeMap<String, BTreeSet<CallSite>>,
}

impl CallProfile {
    /// Modes propagate from root threads through connections; an entry
    /// thread runs in every mode it is called in.
    pub fn build(sw: &SoftwareModel, cfg: &Configuration) -> Self {
        let mut seen: BTreeSet<(ThreadId, Mode)> = BTreeSet::new();
        let mut work: VecDeque<(ThreadId, Mode, BTreeSet<Connection>)> = VecDeque::new();
        for comp in &cfg.selected {
            let Some(c) = sw.contract(comp) else { continue };
            for th in &c.threads {
                let mode = match th.activation {
                    Activation::Time { .. } => Mode::Normal,
                    Activation::Initialization => Mode::Initialization,
                    Activation::Rpc(_) => continue,
                };
                let id = ThreadId::new(comp, &th.name);
                if seen.insert((id.clone(), mode)) {
                    work.push_back((id, mode, BTreeSet::new()));
                }
            }
        }
        let mut profile = CallProfile::default();
        while let Some((tid, mode, path)) = work.pop_front() {
            let Some(th) = sw.contract(&tid.component).and_then(|c| c.thread(&tid.thread)) else {
                continue;
            };
            for (step, _, target) in th.calls() {
                let Some(provider) = cfg.provider(&tid.component, &target.service) else {
                    continue;
                };
                profile.calls.entry(tid.component.clone()).or_default().insert(CallSite {
                    thread: tid.clone(),
                    step,
                    target: target.clone(),
                    provider: provider.to_string(),
                    mode,
                    path: path.clone(),
                });
                let Some(entry) = sw.contract(provider).and_then(|c| c.entry_thread(target)) else {
                    continue;
                };
                let next = ThreadId::new(provider, &entry.name);
                if seen.insert((next.clone(), mode)) {
                    let mut p = path.clone();
                    p.insert(Connection::new(&tid.component, &target.service, provider));
                    work.push_back((next, mode, p));
                }
            }
        }
        profile
    }

    pub fn sites(&self) -> impl Iterator<Item = &CallSite> {
        self.calls.values().flatten()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct CfViolation {
    pub provider: String,
    pub forbidden: MethodRef,
    pub prerequisite: MethodRef,
    pub site: CallSite,
}

impl fmt::Display for CfViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "control_flow: {}.{} reachable before {} via {}/{}",
            self.provider, self.forbidden, self.prerequisite, self.site.thread.component, self.site.thread.thread
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CfReport {
    pub violations: Vec<CfViolation>,
    pub feedback: Vec<Constraint>,
}

impl CfReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every `not X until Y` of every selected component.
///
/// An X call passes if its own thread called Y at an earlier step. Otherwise
/// an initialization-mode X call is a violation, and a normal-mode X call is
/// a violation unless some initialization-mode call reaches Y on the same
/// provider.
pub fn check_not_until(sw: &SoftwareModel, cfg: &Configuration) -> CfReport {
    let profile = CallProfile::build(sw, cfg);
    let mut report = CfReport::default();
    for owner in &cfg.selected {
        let Some(contract) = sw.contract(owner) else { continue };
        for req in &contract.control_flow {
            check_one(sw, cfg, &profile, owner, contract.provides.contains(&req.forbidden.service), req, &mut report);
        }
    }
    report.violations.sort();
    report.violations.dedup();
    report.feedback.sort();
    report.feedback.dedup();
    report
}

fn check_one(
    sw: &SoftwareModel,
    cfg: &Configuration,
    profile: &CallProfile,
    owner: &str,
    owner_provides: bool,
    req: &NotUntilReq,
    report: &mut CfReport,
) {
    // A requirement on a required service constrains the owner's own calls.
    let provider = if owner_provides {
        owner
    } else {
        match cfg.provider(owner, &req.forbidden.service) {
            Some(p) => p,
            None => return,
        }
    };
    let relevant = |s: &&CallSite| owner_provides || s.thread.component == owner;
    let calls_y = |s: &CallSite| s.provider == provider && s.target.same_method(&req.prerequisite);
    let global_y = profile
        .sites()
        .filter(relevant)
        .any(|s| s.mode == Mode::Initialization && calls_y(s));
    for site in profile.sites().filter(relevant) {
        if site.provider != provider || !site.target.same_method(&req.forbidden) {
            continue;
        }
        let self_init = profile
            .sites()
            .any(|s| s.thread == site.thread && s.mode == site.mode && s.step < site.step && calls_y(s));
        if self_init {
            continue;
        }
        let early = site.mode == Mode::Initialization;
        if !early && global_y {
            continue;
        }
        report.violations.push(CfViolation {
            provider: provider.to_string(),
            forbidden: req.forbidden.clone(),
            prerequisite: req.prerequisite.clone(),
            site: site.clone(),
        });
        let mut lits: BTreeSet<Literal> = site.path.iter().cloned().map(Literal::Conn).collect();
        lits.insert(Literal::Conn(Connection::new(&site.thread.component, &req.forbidden.service, provider)));
        if early || !any_y_caller(sw, &req.prerequisite) {
            report.feedback.push(Constraint::ForbidConjunction(lits));
        } else {
            // Another component might still supply the missing call.
            report.feedback.push(Constraint::ForbidConjunction(
                cfg.connections.iter().cloned().map(Literal::Conn).collect(),
            ));
        }
    }
}

/// Whether any contract in the model has a thread calling `m`.
fn any_y_caller(sw: &SoftwareModel, m: &MethodRef) -> bool {
    sw.contracts
        .values()
        .any(|c| c.threads.iter().any(|t| t.calls().any(|(_, _, target)| target.same_method(m))))
}
