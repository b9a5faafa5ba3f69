//! The negotiation loop: apply update requests to a copy of the software
//! model, then draw candidates from the constraint store and run the
//! viewpoint checks until one passes or the space is exhausted.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::cf::check_not_until;
use crate::dsl::{parse_contract, DslError, SoftwareModel};
use crate::model::{apply_updates, check_well_formed, Configuration, ModelError, SystemModel, UpdateRequest};
use crate::store::{Constraint, ConstraintStore, Literal, Ranking};
use crate::taskgraph::build_task_graphs;
use crate::timing::{check_timing, synthesize_priorities, InterferenceModel, TimingReport};

pub const DEFAULT_BUDGET: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Options {
    pub model: InterferenceModel,
    /// Maximum number of candidates examined.
    pub budget: usize,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            model: InterferenceModel::default(),
            budget: DEFAULT_BUDGET,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoReason {
    /// Every candidate was examined or excluded.
    Exhausted,
    /// The candidate budget ran out first.
    Budget,
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[allow(clippy::large_enum_variant)]
pub enum Answer {
    Yes {
        config: Configuration,
        previous: Configuration,
        timing: TimingReport,
    },
    No {
        reason: NoReason,
        /// Everything learned about the space; together they exclude every
        /// candidate.
        constraints: Vec<Constraint>,
    },
}

impl Answer {
    pub fn is_yes(&self) -> bool {
        matches!(self, Answer::Yes { .. })
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Answer::Yes { config, timing, .. } => {
                writeln!(f, "yes")?;
                for l in timing.lines() {
                    writeln!(f, "{l}")?;
                }
                write!(f, "{config}")
            }
            Answer::No { reason, constraints } => {
                let why = match reason {
                    NoReason::Exhausted => "no feasible configuration",
                    NoReason::Budget => "candidate budget exhausted",
                };
                writeln!(f, "no: {why}")?;
                for k in constraints {
                    writeln!(f, "{k}")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Viewpoint {
    WellFormed,
    ControlFlow,
    TaskGraph,
    Timing,
}

impl fmt::Display for Viewpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Viewpoint::WellFormed => "well-formed",
            Viewpoint::ControlFlow => "control-flow",
            Viewpoint::TaskGraph => "task-graph",
            Viewpoint::Timing => "timing",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TraceEvent {
    Request(String),
    Space { pinned: BTreeSet<String>, assignments: usize },
    Candidate { id: usize, config: Configuration },
    Verdict { id: usize, viewpoint: Viewpoint, pass: bool, detail: Vec<String> },
    Added { id: usize, constraints: Vec<Constraint> },
    Accept(usize),
    Exhausted { candidates: usize, reason: NoReason },
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceEvent::Request(r) => write!(f, "request {r}"),
            TraceEvent::Space { pinned, assignments } => {
                let pins: Vec<&str> = pinned.iter().map(String::as_str).collect();
                write!(f, "space pinned={{{}}} assignments={assignments}", pins.join(", "))
            }
            TraceEvent::Candidate { id, config } => {
                let conns: Vec<String> = config
                    .connections
                    .iter()
                    .map(|c| format!("{}.{}={}", c.client, c.service, c.provider))
                    .collect();
                let order: Vec<String> = config.priorities.iter().map(ToString::to_string).collect();
                write!(f, "candidate {id} conn [{}] prio [{}]", conns.join(" "), order.join(" > "))
            }
            TraceEvent::Verdict { id, viewpoint, pass, detail } => {
                write!(f, "candidate {id} {viewpoint} {}", if *pass { "pass" } else { "fail" })?;
                for d in detail {
                    write!(f, "\n  {d}")?;
                }
                Ok(())
            }
            TraceEvent::Added { id, constraints } => {
                write!(f, "candidate {id} learned {}", constraints.len())?;
                for k in constraints {
                    write!(f, "\n  + {k}")?;
                }
                Ok(())
            }
            TraceEvent::Accept(id) => write!(f, "accept candidate {id}"),
            TraceEvent::Exhausted { candidates, reason } => match reason {
                NoReason::Exhausted => write!(f, "exhausted after {candidates} candidates"),
                NoReason::Budget => write!(f, "budget exhausted after {candidates} candidates"),
            },
        }
    }
}

/// Append-only log of one negotiation; the last event is an accept or an
/// exhaustion.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NegotiationTrace {
    pub events: Vec<TraceEvent>,
    pub candidates: usize,
}

impl fmt::Display for NegotiationTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.events {
            writeln!(f, "{e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum NegotiateError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Contract {
        path: PathBuf,
        #[source]
        source: DslError,
    },
    #[error("{path}:{line}: {msg}")]
    Request { path: PathBuf, line: usize, msg: String },
}

/// Parse a request file: `add <file>`, `remove <component>` or
/// `update <file>` per line, `#` comments. Contract paths are relative to
/// `base`.
pub fn parse_requests(text: &str, path: &Path, base: &Path) -> Result<Vec<UpdateRequest>, NegotiateError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| NegotiateError::Request {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let mut words = line.split_whitespace();
        let (Some(op), Some(arg), None) = (words.next(), words.next(), words.next()) else {
            return Err(err(format!("expected `<op> <argument>`, found `{line}`")));
        };
        let load = |arg: &str| -> Result<_, NegotiateError> {
            let file = base.join(arg);
            let text = std::fs::read_to_string(&file).map_err(|source| NegotiateError::Io {
                path: file.clone(),
                source,
            })?;
            parse_contract(&text).map_err(|source| NegotiateError::Contract { path: file, source })
        };
        out.push(match op {
            "add" => UpdateRequest::add(load(arg)?),
            "update" => UpdateRequest::update(load(arg)?),
            "remove" => UpdateRequest::remove(arg),
            other => return Err(err(format!("unknown request `{other}`"))),
        });
    }
    Ok(out)
}

pub fn load_requests(path: &Path) -> Result<Vec<UpdateRequest>, NegotiateError> {
    let text = std::fs::read_to_string(path).map_err(|source| NegotiateError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_requests(&text, path, path.parent().unwrap_or(Path::new(".")))
}

/// Run the negotiation. The input system is never modified.
pub fn negotiate(
    sys: &SystemModel,
    requests: &[UpdateRequest],
    opts: Options,
) -> Result<(Answer, NegotiationTrace), NegotiateError> {
    let software = apply_updates(&sys.software, requests)?;
    let pinned = software.roots();
    let mut store = ConstraintStore::init_space(&software, &sys.platform, &pinned)?;
    let mut trace = NegotiationTrace::default();
    for r in requests {
        trace.events.push(TraceEvent::Request(r.to_string()));
    }
    trace.events.push(TraceEvent::Space {
        pinned: pinned.clone(),
        assignments: store.connection_assignments().len(),
    });

    let mut current = Some(sys.config.clone())
        .filter(|c| c.selected.is_superset(&pinned) && check_well_formed(c, &software, &sys.platform).is_ok());
    if let Some(c) = &current {
        store.mark_emitted(c);
    }
    let model = opts.model;
    loop {
        if trace.candidates >= opts.budget {
            return Ok(no(&store, trace, NoReason::Budget));
        }
        let cand = match current.take() {
            Some(c) => c,
            None => {
                let next = store.next_candidate_with(|partial, oc| {
                    let Ok(graphs) = build_task_graphs(&software, partial) else {
                        return Ranking::default();
                    };
                    let s = synthesize_priorities(&graphs, &partial.mapping, oc, model);
                    Ranking {
                        order: s.order,
                        derived: s.derived,
                    }
                });
                let derived = store.take_derived();
                if !derived.is_empty() {
                    trace.events.push(TraceEvent::Added {
                        id: trace.candidates,
                        constraints: derived,
                    });
                }
                match next {
                    Some(c) => c,
                    None => return Ok(no(&store, trace, NoReason::Exhausted)),
                }
            }
        };
        let id = trace.candidates;
        trace.candidates += 1;
        trace.events.push(TraceEvent::Candidate { id, config: cand.clone() });
        match evaluate(&software, &sys.platform, &cand, model) {
            Evaluation::Pass(timing) => {
                trace.events.push(TraceEvent::Verdict {
                    id,
                    viewpoint: Viewpoint::Timing,
                    pass: true,
                    detail: timing.lines(),
                });
                trace.events.push(TraceEvent::Accept(id));
                let answer = Answer::Yes {
                    config: cand,
                    previous: sys.config.clone(),
                    timing,
                };
                return Ok((answer, trace));
            }
            Evaluation::Fail { viewpoint, detail, feedback } => {
                trace.events.push(TraceEvent::Verdict {
                    id,
                    viewpoint,
                    pass: false,
                    detail,
                });
                let added: Vec<Constraint> = feedback.into_iter().filter_map(|k| store.add_constraint(k)).collect();
                if !added.is_empty() {
                    trace.events.push(TraceEvent::Added { id, constraints: added });
                }
            }
        }
    }
}

fn no(store: &ConstraintStore, mut trace: NegotiationTrace, reason: NoReason) -> (Answer, NegotiationTrace) {
    trace.events.push(TraceEvent::Exhausted {
        candidates: trace.candidates,
        reason,
    });
    let answer = Answer::No {
        reason,
        constraints: store.constraints().to_vec(),
    };
    (answer, trace)
}

enum Evaluation {
    Pass(TimingReport),
    Fail {
        viewpoint: Viewpoint,
        detail: Vec<String>,
        feedback: Vec<Constraint>,
    },
}

/// Run every viewpoint on one candidate, cheapest first, stopping at the
/// first failure.
fn evaluate(
    software: &SoftwareModel,
    platform: &crate::model::PlatformModel,
    cand: &Configuration,
    model: InterferenceModel,
) -> Evaluation {
    let fail = |viewpoint, detail, feedback| Evaluation::Fail {
        viewpoint,
        detail,
        feedback,
    };
    match check_well_formed(cand, software, platform) {
        Err(e) => {
            // Only the current configuration can reference unknown names.
            return fail(Viewpoint::WellFormed, vec![e.to_string()], Vec::new());
        }
        Ok(v) if !v.is_empty() => {
            return fail(Viewpoint::WellFormed, v.iter().map(ToString::to_string).collect(), Vec::new());
        }
        Ok(_) => {}
    }
    let cf = check_not_until(software, cand);
    if !cf.passed() {
        return fail(
            Viewpoint::ControlFlow,
            cf.violations.iter().map(ToString::to_string).collect(),
            cf.feedback,
        );
    }
    let graphs = match build_task_graphs(software, cand) {
        Ok(g) => g,
        Err(e) => {
            let mut lits: BTreeSet<Literal> = e.culprits().into_iter().map(Literal::Conn).collect();
            lits.extend(e.roots().into_iter().map(Literal::Sel));
            return fail(Viewpoint::TaskGraph, vec![e.to_string()], vec![Constraint::ForbidConjunction(lits)]);
        }
    };
    match check_timing(&graphs, cand, model) {
        Err(e) => fail(Viewpoint::Timing, vec![e.to_string()], Vec::new()),
        Ok(report) if report.passed() => Evaluation::Pass(report),
        Ok(report) => fail(Viewpoint::Timing, report.lines(), report.feedback),
    }
}

/// Re-run every viewpoint on a configuration; `Ok` carries the timing
/// report of a configuration that passes all of them.
pub fn validate(
    software: &SoftwareModel,
    platform: &crate::model::PlatformModel,
    cfg: &Configuration,
    model: InterferenceModel,
) -> Result<TimingReport, (Viewpoint, Vec<String>)> {
    match evaluate(software, platform, cfg, model) {
        Evaluation::Pass(r) => Ok(r),
        Evaluation::Fail { viewpoint, detail, .. } => Err((viewpoint, detail)),
    }
}
