//! C ABI over `crystal-core`.
//!
//! Engines and sessions cross the boundary as opaque handles. Every call
//! returns a [`CrystalStatus`]; on anything but `Ok` a message is kept per
//! thread and can be read with [`crystal_last_error`]. Strings written to
//! `out` parameters are owned by the caller and go back through
//! [`crystal_string_free`]. Structured values (edits, moves, feedback) are
//! exchanged as JSON.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use crystal_core::audit::{AuditResult, EditOp};
use crystal_core::config::EngineConfig;
use crystal_core::dialogue::{open_session, DialogueError, Session, StepContext};
use crystal_core::engine::{Engine, EngineError};
use crystal_core::evolution::Feedback;
use crystal_core::extraction::{Agent, PromptRegistry};
use crystal_core::graph::CanvasGraph;
use crystal_core::io::{canonical_graph, load_graph, save_graph, IoError};
use crystal_core::rulebook::RuleSet;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrystalStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidJson = 3,
    Io = 4,
    InvalidGraph = 5,
    /// The edit was audited but not applied; the result JSON says why.
    Rejected = 6,
    Dialogue = 7,
    Internal = 8,
}

/// An engine plus the rule set its sessions are gated by.
pub struct CrystalEngine {
    engine: Engine,
    rules: RuleSet,
    agent: Agent,
    registry: PromptRegistry,
}

pub struct CrystalSession {
    session: Session,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

type Failure = (CrystalStatus, String);

fn set_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(text));
}

/// Runs `body`, turning failures and panics into a status code.
fn guard(body: impl FnOnce() -> Result<CrystalStatus, Failure>) -> CrystalStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match panic::catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(status)) => status,
        Ok(Err((status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("panic inside crystal-ffi");
            CrystalStatus::Internal
        }
    }
}

fn null() -> Failure {
    (CrystalStatus::NullArgument, "null pointer argument".into())
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| (CrystalStatus::InvalidUtf8, e.to_string()))
}

unsafe fn write_string(out: *mut *mut c_char, text: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null());
    }
    let c = CString::new(text).map_err(|e| (CrystalStatus::Internal, e.to_string()))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn handle<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(null)
}

fn json_err(e: serde_json::Error) -> Failure {
    (CrystalStatus::InvalidJson, e.to_string())
}

fn io_err(e: IoError) -> Failure {
    let status = match e {
        IoError::Io(_) => CrystalStatus::Io,
        IoError::Malformed(_) => CrystalStatus::InvalidJson,
        _ => CrystalStatus::InvalidGraph,
    };
    (status, e.to_string())
}

fn engine_err(e: EngineError) -> Failure {
    let status = match e {
        EngineError::InvalidGraph(_) | EngineError::Config(_) => CrystalStatus::InvalidGraph,
        EngineError::Io(_) | EngineError::Replay(_) => CrystalStatus::Io,
        EngineError::Rejected { .. } => CrystalStatus::Rejected,
        _ => CrystalStatus::Internal,
    };
    (status, e.to_string())
}

fn dialogue_err(e: DialogueError) -> Failure {
    (CrystalStatus::Dialogue, e.to_string())
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string(value).map_err(|e| (CrystalStatus::Internal, e.to_string()))
}

fn boxed(engine: Engine) -> *mut CrystalEngine {
    Box::into_raw(Box::new(CrystalEngine {
        engine,
        rules: RuleSet::new(),
        agent: Agent::reference(),
        registry: PromptRegistry::default(),
    }))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn crystal_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn crystal_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must be NULL or a string previously returned by this library.
#[no_mangle]
pub unsafe extern "C" fn crystal_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a checksummed graph file.
///
/// # Safety
/// `path` must be a valid C string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn crystal_engine_open(path: *const c_char, out: *mut *mut CrystalEngine) -> CrystalStatus {
    guard(|| {
        let path = read_str(path)?;
        if out.is_null() {
            return Err(null());
        }
        let (graph, config) = load_graph(Path::new(path)).map_err(io_err)?;
        *out = boxed(Engine::new(graph, config).map_err(engine_err)?);
        Ok(CrystalStatus::Ok)
    })
}

/// Builds an engine from bare graph JSON with the default configuration.
///
/// # Safety
/// `graph_json` must be a valid C string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn crystal_engine_from_json(graph_json: *const c_char, out: *mut *mut CrystalEngine) -> CrystalStatus {
    guard(|| {
        let text = read_str(graph_json)?;
        if out.is_null() {
            return Err(null());
        }
        let graph: CanvasGraph = serde_json::from_str(text).map_err(json_err)?;
        *out = boxed(Engine::new(graph, EngineConfig::default()).map_err(engine_err)?);
        Ok(CrystalStatus::Ok)
    })
}

/// # Safety
/// `engine` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn crystal_engine_free(engine: *mut CrystalEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Canonical JSON of the current graph.
///
/// # Safety
/// `engine` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn crystal_engine_graph_json(engine: *mut CrystalEngine, out: *mut *mut c_char) -> CrystalStatus {
    guard(|| {
        let e = handle(engine)?;
        write_string(out, canonical_graph(e.engine.graph()))?;
        Ok(CrystalStatus::Ok)
    })
}

/// # Safety
/// `engine` must be a live handle and `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn crystal_engine_save(engine: *mut CrystalEngine, path: *const c_char) -> CrystalStatus {
    guard(|| {
        let e = handle(engine)?;
        let path = read_str(path)?;
        save_graph(e.engine.graph(), e.engine.config(), Path::new(path)).map_err(io_err)?;
        Ok(CrystalStatus::Ok)
    })
}

/// Replaces the rule set that gates session answers.
///
/// # Safety
/// `engine` must be a live handle and `rules_json` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn crystal_engine_set_rules(engine: *mut CrystalEngine, rules_json: *const c_char) -> CrystalStatus {
    guard(|| {
        let e = handle(engine)?;
        e.rules = RuleSet::from_json(read_str(rules_json)?).map_err(json_err)?;
        Ok(CrystalStatus::Ok)
    })
}

/// Applies one edit (`{"payload": ..., "actor": ...}`) and writes the
/// audited result. Returns `Rejected` when the edit was refused; the result
/// JSON is written either way.
///
/// # Safety
/// `engine` must be a live handle, `edit_json` a valid C string and `out`
/// NULL or a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn crystal_engine_apply_edit(
    engine: *mut CrystalEngine,
    edit_json: *const c_char,
    out: *mut *mut c_char,
) -> CrystalStatus {
    guard(|| {
        let e = handle(engine)?;
        let edit: EditOp = serde_json::from_str(read_str(edit_json)?).map_err(json_err)?;
        let result = e.engine.apply_edit(edit).map_err(engine_err)?;
        if !out.is_null() {
            write_string(out, to_json(&result)?)?;
        }
        match &result.result {
            AuditResult::Applied => Ok(CrystalStatus::Ok),
            AuditResult::Rejected(r) => Err((CrystalStatus::Rejected, r.to_string())),
        }
    })
}

/// Opens a session over a snapshot of the engine's current graph.
///
/// # Safety
/// `engine` must be a live handle, `session_id` a valid C string and `out`
/// a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn crystal_session_open(
    engine: *mut CrystalEngine,
    session_id: *const c_char,
    out: *mut *mut CrystalSession,
) -> CrystalStatus {
    guard(|| {
        let e = handle(engine)?;
        let id = read_str(session_id)?;
        if out.is_null() {
            return Err(null());
        }
        let session = open_session(Arc::new(e.engine.graph().clone()), id).map_err(dialogue_err)?;
        *out = Box::into_raw(Box::new(CrystalSession { session }));
        Ok(CrystalStatus::Ok)
    })
}

/// # Safety
/// `session` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn crystal_session_free(session: *mut CrystalSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// One user turn; writes the system move as JSON.
///
/// # Safety
/// Both handles must be live, `utterance` a valid C string and `out` a
/// writable pointer.
#[no_mangle]
pub unsafe extern "C" fn crystal_session_step(
    session: *mut CrystalSession,
    engine: *mut CrystalEngine,
    utterance: *const c_char,
    out: *mut *mut c_char,
) -> CrystalStatus {
    guard(|| {
        let s = handle(session)?;
        let e = handle(engine)?;
        let text = read_str(utterance)?;
        if out.is_null() {
            return Err(null());
        }
        let ctx = StepContext {
            ruleset: &e.rules,
            agent: &e.agent,
            registry: &e.registry,
            engine: &mut e.engine,
        };
        let mv = s.session.step(text, ctx).map_err(dialogue_err)?;
        write_string(out, to_json(&mv)?)?;
        Ok(CrystalStatus::Ok)
    })
}

/// Current dialogue state as JSON.
///
/// # Safety
/// `session` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn crystal_session_state_json(session: *mut CrystalSession, out: *mut *mut c_char) -> CrystalStatus {
    guard(|| {
        let s = handle(session)?;
        write_string(out, to_json(&s.session.state)?)?;
        Ok(CrystalStatus::Ok)
    })
}

/// Folds outcome feedback for a closed session into the engine; writes the
/// per-edge summary as JSON.
///
/// # Safety
/// Both handles must be live, `feedback_json` a valid C string and `out`
/// NULL or a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn crystal_session_feedback(
    session: *mut CrystalSession,
    engine: *mut CrystalEngine,
    feedback_json: *const c_char,
    out: *mut *mut c_char,
) -> CrystalStatus {
    guard(|| {
        let s = handle(session)?;
        let e = handle(engine)?;
        let feedback: Feedback = serde_json::from_str(read_str(feedback_json)?).map_err(json_err)?;
        let summary = s.session.integrate_feedback(&feedback, &mut e.engine).map_err(dialogue_err)?;
        if !out.is_null() {
            write_string(out, to_json(&summary)?)?;
        }
        Ok(CrystalStatus::Ok)
    })
}
