use std::fmt::Write;

use super::{Activation, Contract, Step, TimingTarget};

/// Canonical text of a contract, two-space indentation, one clause per line.
pub fn render_contract(c: &Contract) -> String {
    let mut out = String::new();
    // Writing into a String cannot fail.
    let _ = write_contract(&mut out, c);
    out
}

fn write_contract(out: &mut String, c: &Contract) -> std::fmt::Result {
    writeln!(out, "component {}", c.component)?;
    if !c.requires.is_empty() || !c.provides.is_empty() {
        writeln!(out, "  services")?;
        for s in &c.requires {
            writeln!(out, "    requires {s}")?;
        }
        for s in &c.provides {
            writeln!(out, "    provides {s}")?;
        }
    }
    if !c.threads.is_empty() {
        writeln!(out, "  threads")?;
        for th in &c.threads {
            writeln!(out, "    thread {}", th.name)?;
            match &th.activation {
                Activation::Rpc(m) => writeln!(out, "      on RPC {m}")?,
                Activation::Initialization => writeln!(out, "      on initialization")?,
                Activation::Time { period, jitter } => {
                    writeln!(out, "      on time (period={period} jitter={jitter})")?
                }
            }
            for step in &th.steps {
                match step {
                    Step::Task(t) => {
                        writeln!(out, "        task {}", t.name)?;
                        writeln!(out, "          onto {}", t.resource_type)?;
                        writeln!(out, "            wcet={} bcet={}", t.wcet, t.bcet)?;
                    }
                    Step::Call { kind, target } => writeln!(out, "        {kind} {target}")?,
                }
            }
        }
    }
    if !c.timings.is_empty() {
        writeln!(out, "  timings")?;
        for t in &c.timings {
            writeln!(out, "    timing {}", t.bound)?;
            match &t.target {
                TimingTarget::Method(m) => writeln!(out, "      {m}")?,
                TimingTarget::Thread(name) => writeln!(out, "      {name}")?,
            }
        }
    }
    if !c.control_flow.is_empty() {
        writeln!(out, "  control_flow")?;
        for r in &c.control_flow {
            writeln!(out, "    not {}", r.forbidden)?;
            writeln!(out, "      until {}", r.prerequisite)?;
        }
    }
    Ok(())
}
