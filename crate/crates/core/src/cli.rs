//! Command-line front end. Exit status: 0 for a positive answer, 1 for a
//! negative one, 2 for unusable input.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::deps::{connection_candidates, count_solutions};
use crate::dsl::{parse_contract, parse_service_repository, SoftwareModel};
use crate::model::{apply_updates, Configuration, PlatformModel, SystemModel, ThreadId};
use crate::negotiate::{load_requests, negotiate, validate, Answer, Options};
use crate::sim::{hyperperiod, simulate, worst_observed, ReleaseScenario};
use crate::store::ConstraintStore;
use crate::taskgraph::{build_task_graphs, Mode};
use crate::timing::{chain_latency_bound, InterferenceModel};

#[derive(Parser, Debug)]
#[command(name = "admit", version, about = "Negotiate software updates against component contracts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub inputs: Inputs,
}

#[derive(Args, Debug)]
pub struct Inputs {
    /// Directory of `*.contract` files.
    #[arg(long, global = true, value_name = "DIR")]
    pub contracts: Option<PathBuf>,
    /// Service repository file.
    #[arg(long, global = true, value_name = "FILE")]
    pub services: Option<PathBuf>,
    /// Platform file.
    #[arg(long, global = true, value_name = "FILE")]
    pub platform: Option<PathBuf>,
    /// Current configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Request file (`add`, `remove`, `update` lines).
    #[arg(long, global = true, value_name = "FILE")]
    pub request: Option<PathBuf>,
    #[arg(long, global = true, default_value = "busy-window", value_parser = parse_model)]
    pub model: InterferenceModel,
    /// Directory for output artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Print the negotiation or schedule trace.
    #[arg(long, global = true)]
    pub trace: bool,
    /// Seed for randomized release scenarios.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

fn parse_model(s: &str) -> Result<InterferenceModel, String> {
    s.parse()
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Search for a configuration admitting the requested update.
    Negotiate {
        /// Maximum number of candidates to examine.
        #[arg(long, default_value_t = crate::negotiate::DEFAULT_BUDGET)]
        budget: usize,
    },
    /// Check the current configuration against every viewpoint.
    Validate,
    /// Show must/may connections of the (updated) software model.
    Deps {
        /// Graphviz output.
        #[arg(long)]
        dot: bool,
        /// Dump the initial constraint store.
        #[arg(long)]
        store: bool,
    },
    /// Print the task graphs of the current configuration.
    Graph,
    /// Simulate the normal-mode task graph of the current configuration.
    Simulate {
        /// Release horizon; defaults to two hyperperiods.
        #[arg(long)]
        horizon: Option<u64>,
        /// Search release offsets on a grid of this step instead.
        #[arg(long)]
        grid: Option<u64>,
    },
    /// Latency bound of a chain, or of every requirement.
    Bound {
        /// Root thread of the chain, `Component.thread`.
        #[arg(long)]
        chain: Option<String>,
        /// Node range `start..end` (default: whole chain).
        #[arg(long)]
        range: Option<String>,
    },
}

/// Run with process arguments, writing to stdout and stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut out = std::io::stdout().lock();
    let mut err = std::io::stderr().lock();
    run_with(args, &mut out, &mut err)
}

pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return 2;
            }
            let _ = write!(out, "{e}");
            return 0;
        }
    };
    match execute(&cli) {
        Ok(Outcome { code, text }) => {
            let _ = out.write_all(text.as_bytes());
            code
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

struct Outcome {
    code: i32,
    text: String,
}

type CliResult<T> = Result<T, String>;

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    p.as_deref().ok_or_else(|| format!("missing --{flag}"))
}

/// Parse every `*.contract` file of a directory, in file-name order.
pub fn load_software(dir: &Path, services: &Path) -> CliResult<SoftwareModel> {
    let repo = parse_service_repository(&read(services)?).map_err(|e| format!("{}: {e}", services.display()))?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "contract"))
        .collect();
    files.sort();
    let mut contracts = Vec::new();
    for f in &files {
        contracts.push(parse_contract(&read(f)?).map_err(|e| format!("{}:{e}", f.display()))?);
    }
    SoftwareModel::from_contracts(contracts, repo).map_err(|e| format!("{}: {e}", dir.display()))
}

fn load_software_with_requests(inputs: &Inputs) -> CliResult<SoftwareModel> {
    let sw = load_software(need(&inputs.contracts, "contracts")?, need(&inputs.services, "services")?)?;
    match &inputs.request {
        None => Ok(sw),
        Some(r) => {
            let reqs = load_requests(r).map_err(|e| e.to_string())?;
            apply_updates(&sw, &reqs).map_err(|e| e.to_string())
        }
    }
}

fn load_platform(inputs: &Inputs) -> CliResult<PlatformModel> {
    let p = need(&inputs.platform, "platform")?;
    PlatformModel::parse(&read(p)?).map_err(|e| format!("{}: {e}", p.display()))
}

fn load_config(inputs: &Inputs) -> CliResult<Configuration> {
    match &inputs.config {
        Some(p) => Configuration::parse(&read(p)?).map_err(|e| format!("{}: {e}", p.display())),
        None => Ok(Configuration::default()),
    }
}

fn write_out(dir: &Option<PathBuf>, name: &str, text: &str) -> CliResult<()> {
    if let Some(d) = dir {
        std::fs::create_dir_all(d).map_err(|e| format!("{}: {e}", d.display()))?;
        let p = d.join(name);
        std::fs::write(&p, text).map_err(|e| format!("{}: {e}", p.display()))?;
    }
    Ok(())
}

fn execute(cli: &Cli) -> CliResult<Outcome> {
    let inputs = &cli.inputs;
    match &cli.command {
        Command::Negotiate { budget } => {
            let sys = SystemModel {
                software: load_software(need(&inputs.contracts, "contracts")?, need(&inputs.services, "services")?)?,
                platform: load_platform(inputs)?,
                config: load_config(inputs)?,
            };
            let requests = match &inputs.request {
                Some(r) => load_requests(r).map_err(|e| e.to_string())?,
                None => Vec::new(),
            };
            let opts = Options {
                model: inputs.model,
                budget: *budget,
            };
            let (answer, trace) = negotiate(&sys, &requests, opts).map_err(|e| e.to_string())?;
            let trace_text = trace.to_string();
            write_out(&inputs.out, "trace.txt", &trace_text)?;
            write_out(&inputs.out, "answer.txt", &answer.to_string())?;
            if let Answer::Yes { config, .. } = &answer {
                write_out(&inputs.out, "config.cfg", &config.to_string())?;
            }
            let mut text = String::new();
            if inputs.trace {
                text.push_str(&trace_text);
            }
            text.push_str(&answer.to_string());
            Ok(Outcome {
                code: if answer.is_yes() { 0 } else { 1 },
                text,
            })
        }
        Command::Validate => {
            let sw = load_software_with_requests(inputs)?;
            let pf = load_platform(inputs)?;
            let cfg = load_config(inputs)?;
            let (code, text) = match validate(&sw, &pf, &cfg, inputs.model) {
                Ok(report) => (0, format!("valid\n{}\n", report.lines().join("\n"))),
                Err((vp, detail)) => (1, format!("invalid: {vp}\n{}\n", detail.join("\n"))),
            };
            write_out(&inputs.out, "validate.txt", &text)?;
            Ok(Outcome { code, text })
        }
        Command::Deps { dot, store } => {
            let sw = load_software_with_requests(inputs)?;
            let pinned = sw.roots();
            let cands = connection_candidates(&sw, &pinned).map_err(|e| e.to_string())?;
            let mut text = if *dot {
                cands.to_dot()
            } else {
                let mut t = cands.edge_list();
                let _ = writeln!(t, "solutions {}", count_solutions(&cands, &sw.services));
                t
            };
            if *store {
                let st = ConstraintStore::init_space(&sw, &load_platform(inputs)?, &pinned).map_err(|e| e.to_string())?;
                text.push_str(&st.dump());
            }
            write_out(&inputs.out, if *dot { "deps.dot" } else { "deps.txt" }, &text)?;
            Ok(Outcome { code: 0, text })
        }
        Command::Graph => {
            let sw = load_software_with_requests(inputs)?;
            let cfg = load_config(inputs)?;
            let graphs = build_task_graphs(&sw, &cfg).map_err(|e| e.to_string())?;
            let text: String = graphs.iter().map(ToString::to_string).collect();
            write_out(&inputs.out, "graph.txt", &text)?;
            Ok(Outcome { code: 0, text })
        }
        Command::Simulate { horizon, grid } => simulate_cmd(inputs, *horizon, *grid),
        Command::Bound { chain, range } => bound_cmd(inputs, chain.as_deref(), range.as_deref()),
    }
}

fn simulate_cmd(inputs: &Inputs, horizon: Option<u64>, grid: Option<u64>) -> CliResult<Outcome> {
    let sw = load_software_with_requests(inputs)?;
    let cfg = load_config(inputs)?;
    let graphs = build_task_graphs(&sw, &cfg).map_err(|e| e.to_string())?;
    let g = graphs.iter().find(|g| g.mode == Mode::Normal).ok_or("no normal-mode graph")?;
    let ranks = cfg.ranks();
    let mut text = String::new();
    let label = |c: usize, r: usize| format!("{} {}", g.chains[c].root, g.chains[c].requirements[r]);
    if let Some(step) = grid {
        let worst = worst_observed(g, &ranks, &cfg.mapping, step).map_err(|e| e.to_string())?;
        for ((c, r), lat) in worst {
            let _ = writeln!(text, "worst {}: {lat}", label(c, r));
        }
    } else {
        let h = horizon.unwrap_or(2 * hyperperiod(g));
        let scenario = match inputs.seed {
            Some(seed) => ReleaseScenario::random(g, h, &mut ChaCha8Rng::seed_from_u64(seed)),
            None => ReleaseScenario::synchronous(g, h),
        };
        let result = simulate(g, &ranks, &cfg.mapping, &scenario).map_err(|e| e.to_string())?;
        if inputs.trace {
            for l in &result.trace {
                let _ = writeln!(text, "{l}");
            }
        }
        for (&(c, r), lats) in &result.requirement_latencies {
            let max = lats.iter().max().copied().unwrap_or(0);
            let _ = writeln!(text, "observed {}: max={max} activations={}", label(c, r), lats.len());
        }
        if result.partial {
            text.push_str("partial: unfinished activations at end of simulation\n");
        }
    }
    write_out(&inputs.out, "simulation.txt", &text)?;
    Ok(Outcome { code: 0, text })
}

fn bound_cmd(inputs: &Inputs, chain: Option<&str>, range: Option<&str>) -> CliResult<Outcome> {
    let sw = load_software_with_requests(inputs)?;
    let cfg = load_config(inputs)?;
    let graphs = build_task_graphs(&sw, &cfg).map_err(|e| e.to_string())?;
    let Some(root) = chain else {
        let report = crate::timing::check_timing(&graphs, &cfg, inputs.model).map_err(|e| e.to_string())?;
        let text = format!("{}\n", report.lines().join("\n"));
        return Ok(Outcome {
            code: if report.passed() { 0 } else { 1 },
            text,
        });
    };
    let (c, t) = root.split_once('.').ok_or_else(|| format!("expected Component.thread, found `{root}`"))?;
    let root = ThreadId::new(c, t);
    for g in &graphs {
        if let Some(idx) = g.chains.iter().position(|ch| ch.root == root) {
            let len = g.chains[idx].nodes.len();
            let r = match range {
                None => 0..len,
                Some(s) => {
                    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected start..end, found `{s}`"))?;
                    let a: usize = a.parse().map_err(|_| format!("bad range start `{a}`"))?;
                    let b: usize = b.parse().map_err(|_| format!("bad range end `{b}`"))?;
                    if a > b || b > len {
                        return Err(format!("range {a}..{b} outside chain of {len} nodes"));
                    }
                    a..b
                }
            };
            let bound = chain_latency_bound(g, idx, r.clone(), &cfg.ranks(), &cfg.mapping, inputs.model)
                .map_err(|e| e.to_string())?;
            let text = format!("bound {root} {}..{}: {bound} model={}\n", r.start, r.end, inputs.model);
            return Ok(Outcome { code: 0, text });
        }
    }
    let known: BTreeSet<String> = graphs.iter().flat_map(|g| g.chains.iter().map(|c| c.root.to_string())).collect();
    Err(format!("no chain rooted at {root} (chains: {})", known.into_iter().collect::<Vec<_>>().join(", ")))
}
