//! C interface to the negotiation engine.
//!
//! A session owns a system model (service repository, platform, contracts,
//! current configuration) and a list of pending update requests. Every entry
//! point returns an [`AdmitStatus`]; on failure the message is available
//! from [`admit_last_error`] on the same thread. Strings returned by the
//! library are owned by the session and stay valid until the next call that
//! mutates it.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use admit_core::dsl::{parse_contract, parse_service_repository, SoftwareModel};
use admit_core::model::{Configuration, PlatformModel, SystemModel, UpdateRequest};
use admit_core::negotiate::{negotiate, Options};
use admit_core::timing::InterferenceModel;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdmitStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    ModelError = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdmitModel {
    BusyWindow = 0,
    SingleBlocking = 1,
}

impl From<AdmitModel> for InterferenceModel {
    fn from(m: AdmitModel) -> Self {
        match m {
            AdmitModel::BusyWindow => InterferenceModel::BusyWindow,
            AdmitModel::SingleBlocking => InterferenceModel::SingleBlocking,
        }
    }
}

/// Opaque session handle.
pub struct AdmitSession {
    system: SystemModel,
    requests: Vec<UpdateRequest>,
    answer: CString,
    trace: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

type Failure = (AdmitStatus, String);

/// Run `f`, converting errors and panics into a status plus last-error text.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AdmitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            AdmitStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AdmitStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or a valid NUL-terminated string.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err((AdmitStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| (AdmitStatus::InvalidUtf8, format!("{what}: {e}")))
}

/// # Safety
/// `s` is null or a pointer obtained from this library and not yet freed.
unsafe fn session<'a>(s: *mut AdmitSession) -> Result<&'a mut AdmitSession, Failure> {
    s.as_mut().ok_or((AdmitStatus::NullArgument, "session is null".into()))
}

fn parse_err(e: impl ToString) -> Failure {
    (AdmitStatus::ParseError, e.to_string())
}

fn model_err(e: impl ToString) -> Failure {
    (AdmitStatus::ModelError, e.to_string())
}

/// Create a session from a service repository text and a platform text. On
/// success `*out` receives a handle to release with
/// [`admit_session_free`].
///
/// # Safety
/// String arguments are valid NUL-terminated strings; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn admit_session_new(
    services: *const c_char,
    platform: *const c_char,
    out: *mut *mut AdmitSession,
) -> AdmitStatus {
    guard(|| {
        if out.is_null() {
            return Err((AdmitStatus::NullArgument, "out is null".into()));
        }
        let repo = parse_service_repository(text(services, "services")?).map_err(parse_err)?;
        let platform = PlatformModel::parse(text(platform, "platform")?).map_err(parse_err)?;
        let s = Box::new(AdmitSession {
            system: SystemModel {
                software: SoftwareModel::new(repo),
                platform,
                config: Configuration::default(),
            },
            requests: Vec::new(),
            answer: CString::default(),
            trace: CString::default(),
        });
        *out = Box::into_raw(s);
        Ok(())
    })
}

/// # Safety
/// `s` is null or a live session handle; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn admit_session_free(s: *mut AdmitSession) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Add a contract to the deployed software model.
///
/// # Safety
/// `s` is a live session; `contract` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn admit_session_add_contract(s: *mut AdmitSession, contract: *const c_char) -> AdmitStatus {
    guard(|| {
        let s = session(s)?;
        let c = parse_contract(text(contract, "contract")?).map_err(parse_err)?;
        let sw = SoftwareModel::from_contracts(
            s.system.software.contracts.values().cloned().chain([c]),
            s.system.software.services.clone(),
        )
        .map_err(model_err)?;
        s.system.software = sw;
        Ok(())
    })
}

/// Set the running configuration from its text form.
///
/// # Safety
/// `s` is a live session; `config` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn admit_session_set_config(s: *mut AdmitSession, config: *const c_char) -> AdmitStatus {
    guard(|| {
        let s = session(s)?;
        s.system.config = Configuration::parse(text(config, "config")?).map_err(parse_err)?;
        Ok(())
    })
}

/// Queue a request to add a new component.
///
/// # Safety
/// `s` is a live session; `contract` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn admit_session_request_add(s: *mut AdmitSession, contract: *const c_char) -> AdmitStatus {
    guard(|| {
        let s = session(s)?;
        let c = parse_contract(text(contract, "contract")?).map_err(parse_err)?;
        s.requests.push(UpdateRequest::add(c));
        Ok(())
    })
}

/// Queue a request to replace a component's contract.
///
/// # Safety
/// `s` is a live session; `contract` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn admit_session_request_update(s: *mut AdmitSession, contract: *const c_char) -> AdmitStatus {
    guard(|| {
        let s = session(s)?;
        let c = parse_contract(text(contract, "contract")?).map_err(parse_err)?;
        s.requests.push(UpdateRequest::update(c));
        Ok(())
    })
}

/// Queue a request to remove a component.
///
/// # Safety
/// `s` is a live session; `component` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn admit_session_request_remove(s: *mut AdmitSession, component: *const c_char) -> AdmitStatus {
    guard(|| {
        let s = session(s)?;
        s.requests.push(UpdateRequest::remove(text(component, "component")?));
        Ok(())
    })
}

/// Drop all queued requests.
///
/// # Safety
/// `s` is a live session.
#[no_mangle]
pub unsafe extern "C" fn admit_session_clear_requests(s: *mut AdmitSession) -> AdmitStatus {
    guard(|| {
        session(s)?.requests.clear();
        Ok(())
    })
}

/// Negotiate the queued requests. `*accepted` is set to whether a feasible
/// configuration was found; the answer and trace texts are then available.
/// The session's model and configuration are left untouched.
///
/// # Safety
/// `s` is a live session; `accepted` is writable.
#[no_mangle]
pub unsafe extern "C" fn admit_session_negotiate(
    s: *mut AdmitSession,
    model: AdmitModel,
    accepted: *mut bool,
) -> AdmitStatus {
    guard(|| {
        let s = session(s)?;
        if accepted.is_null() {
            return Err((AdmitStatus::NullArgument, "accepted is null".into()));
        }
        let opts = Options {
            model: model.into(),
            ..Options::default()
        };
        let (answer, trace) = negotiate(&s.system, &s.requests, opts).map_err(model_err)?;
        s.answer = CString::new(answer.to_string()).map_err(model_err)?;
        s.trace = CString::new(trace.to_string()).map_err(model_err)?;
        *accepted = answer.is_yes();
        Ok(())
    })
}

/// Text of the last answer; empty before the first negotiation.
///
/// # Safety
/// `s` is null or a live session.
#[no_mangle]
pub unsafe extern "C" fn admit_session_answer(s: *const AdmitSession) -> *const c_char {
    s.as_ref().map_or(ptr::null(), |s| s.answer.as_ptr())
}

/// Trace of the last negotiation; empty before the first negotiation.
///
/// # Safety
/// `s` is null or a live session.
#[no_mangle]
pub unsafe extern "C" fn admit_session_trace(s: *const AdmitSession) -> *const c_char {
    s.as_ref().map_or(ptr::null(), |s| s.trace.as_ptr())
}

/// Message of the last failed call on this thread, or null.
#[no_mangle]
pub extern "C" fn admit_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}
