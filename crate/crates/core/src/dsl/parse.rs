use super::scan::Scanner;
use super::{
    Activation, CallKind, Contract, DslError, MethodRef, NotUntilReq, Step, TaskDecl, Thread,
    TimingReq, TimingTarget,
};

const SECTIONS: [&str; 4] = ["services", "threads", "timings", "control_flow"];

/// Parse and validate a single `component` block.
pub fn parse_contract(text: &str) -> Result<Contract, DslError> {
    let mut s = Scanner::new(text);
    let component_pos = s.keyword("component")?;
    let (name, _) = s.ident()?;
    let mut c = Contract::new(&name);
    c.spans.component = component_pos;

    let mut next_section = 0;
    while !s.at_eof() {
        let word = s.peek_word();
        let Some(idx) = word.and_then(|w| SECTIONS.iter().position(|k| *k == w)) else {
            return Err(s.error(format!(
                "expected one of {} or end of contract, found `{}`",
                SECTIONS[next_section..].join(", "),
                word.unwrap_or("?")
            )));
        };
        if idx < next_section {
            return Err(s.error(format!("section `{}` is out of order or repeated", SECTIONS[idx])));
        }
        next_section = idx + 1;
        s.keyword(SECTIONS[idx])?;
        match idx {
            0 => services(&mut s, &mut c)?,
            1 => threads(&mut s, &mut c)?,
            2 => timings(&mut s, &mut c)?,
            _ => control_flow(&mut s, &mut c)?,
        }
    }
    c.validate()?;
    Ok(c)
}

fn services(s: &mut Scanner, c: &mut Contract) -> Result<(), DslError> {
    loop {
        let required = match s.peek_word() {
            Some("requires") => true,
            Some("provides") => false,
            _ => return Ok(()),
        };
        s.ident()?;
        let (service, pos) = s.ident()?;
        let set = if required {
            &mut c.requires
        } else {
            &mut c.provides
        };
        if !set.insert(service.clone()) {
            return Err(DslError::DuplicateService { pos, service });
        }
    }
}

fn threads(s: &mut Scanner, c: &mut Contract) -> Result<(), DslError> {
    while s.peek_word() == Some("thread") {
        let pos = s.keyword("thread")?;
        let (name, _) = s.ident()?;
        s.keyword("on")?;
        let activation = activation(s)?;
        let mut steps = Vec::new();
        let mut step_pos = Vec::new();
        loop {
            let kind = match s.peek_word() {
                Some("task") => None,
                Some("RPC") => Some(CallKind::Rpc),
                Some("SIGNAL") => Some(CallKind::Signal),
                _ => break,
            };
            s.skip_trivia();
            step_pos.push(s.pos());
            s.ident()?;
            match kind {
                None => {
                    let (name, _) = s.ident()?;
                    s.keyword("onto")?;
                    let (resource_type, _) = s.ident()?;
                    let wcet = s.assignment("wcet")?;
                    let bcet = s.assignment("bcet")?;
                    steps.push(Step::Task(TaskDecl {
                        name,
                        resource_type,
                        wcet,
                        bcet,
                    }));
                }
                Some(kind) => steps.push(Step::Call {
                    kind,
                    target: method_ref(s)?,
                }),
            }
        }
        c.threads.push(Thread {
            name,
            activation,
            steps,
        });
        c.spans.threads.push(pos);
        c.spans.steps.push(step_pos);
    }
    Ok(())
}

fn activation(s: &mut Scanner) -> Result<Activation, DslError> {
    match s.peek_word() {
        Some("RPC") => {
            s.keyword("RPC")?;
            Ok(Activation::Rpc(method_ref(s)?))
        }
        Some("initialization") => {
            s.keyword("initialization")?;
            Ok(Activation::Initialization)
        }
        Some("time") => {
            s.keyword("time")?;
            s.punct('(')?;
            let period = s.assignment("period")?;
            let jitter = s.assignment("jitter")?;
            s.punct(')')?;
            Ok(Activation::Time { period, jitter })
        }
        _ => Err(s.error("expected activation `RPC`, `initialization` or `time`")),
    }
}

fn method_ref(s: &mut Scanner) -> Result<MethodRef, DslError> {
    let (service, _) = s.ident()?;
    s.punct('.')?;
    let (method, _) = s.ident()?;
    s.punct('(')?;
    let args = s.raw_args()?;
    Ok(MethodRef {
        service,
        method,
        args,
    })
}

fn timings(s: &mut Scanner, c: &mut Contract) -> Result<(), DslError> {
    while s.peek_word() == Some("timing") {
        let pos = s.keyword("timing")?;
        let bound = s.int()?;
        let (first, _) = s.ident()?;
        s.skip_trivia();
        let target = if s.punct('.').is_ok() {
            let (method, _) = s.ident()?;
            s.punct('(')?;
            let args = s.raw_args()?;
            TimingTarget::Method(MethodRef {
                service: first,
                method,
                args,
            })
        } else {
            TimingTarget::Thread(first)
        };
        c.timings.push(TimingReq { bound, target });
        c.spans.timings.push(pos);
    }
    Ok(())
}

fn control_flow(s: &mut Scanner, c: &mut Contract) -> Result<(), DslError> {
    while s.peek_word() == Some("not") {
        let pos = s.keyword("not")?;
        let forbidden = method_ref(s)?;
        s.keyword("until")?;
        let prerequisite = method_ref(s)?;
        c.control_flow.push(NotUntilReq {
            forbidden,
            prerequisite,
        });
        c.spans.control_flow.push(pos);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::Pos;

    #[test]
    fn minimal_contract() {
        let c = parse_contract("component X").unwrap();
        assert_eq!(c, Contract::new("X"));
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_contract("component X\n  services\n    requires 42").unwrap_err();
        match err {
            DslError::Syntax { pos, .. } => assert_eq!(pos, Pos { line: 3, col: 14 }),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bcet_above_wcet() {
        let src = "component X services provides s threads thread t on RPC s.m() \
                   task a onto CPU wcet=2 bcet=3";
        assert!(matches!(
            parse_contract(src),
            Err(DslError::BadExecutionTime { wcet: 2, bcet: 3, .. })
        ));
    }

    #[test]
    fn rejects_duplicate_task_across_threads() {
        let src = "component X threads \
                   thread a on initialization task t onto CPU wcet=1 bcet=1 \
                   thread b on initialization task t onto CPU wcet=1 bcet=1";
        assert!(matches!(
            parse_contract(src),
            Err(DslError::DuplicateTask { .. })
        ));
    }

    #[test]
    fn rejects_duplicate_thread() {
        let src = "component X threads thread a on initialization thread a on initialization";
        assert!(matches!(
            parse_contract(src),
            Err(DslError::DuplicateThread { .. })
        ));
    }

    #[test]
    fn rejects_call_to_undeclared_service() {
        let src = "component X threads thread a on initialization RPC s.m()";
        assert!(matches!(
            parse_contract(src),
            Err(DslError::UndeclaredService { .. })
        ));
    }

    #[test]
    fn rejects_sections_out_of_order() {
        let src = "component X threads services requires s";
        assert!(matches!(parse_contract(src), Err(DslError::Syntax { .. })));
    }

    #[test]
    fn rejects_jitter_not_below_period() {
        let src = "component X threads thread a on time (period=5 jitter=5)";
        assert!(matches!(
            parse_contract(src),
            Err(DslError::BadActivation { .. })
        ));
    }

    #[test]
    fn signal_steps_parse() {
        let src = "component X services requires s threads \
                   thread a on time (period=10 jitter=0) SIGNAL s.notify(u8 code)";
        let c = parse_contract(src).unwrap();
        assert_eq!(
            c.threads[0].steps,
            vec![Step::Call {
                kind: CallKind::Signal,
                target: MethodRef::new("s", "notify", "u8 code"),
            }]
        );
    }

    #[test]
    fn timing_target_must_resolve() {
        let src = "component X timings timing 5 nowhere";
        assert!(matches!(
            parse_contract(src),
            Err(DslError::UnresolvedTimingTarget { .. })
        ));
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        assert!(matches!(
            parse_contract("component X bogus"),
            Err(DslError::Syntax { .. })
        ));
    }
}
