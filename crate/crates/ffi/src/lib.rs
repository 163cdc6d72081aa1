//! C ABI over the soundscape core.
//!
//! Handles are opaque and owned by the caller until passed to the matching
//! `_free`. Every fallible call returns an [`SsStatus`]; on failure the
//! message is available from [`ss_last_error`] on the same thread. Strings
//! returned through `char **` out-parameters are released with
//! [`ss_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use soundscape_core::sim::{self, Resolved, Scenario, Simulation, Trace};
use soundscape_core::wire;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Scenario = 3,
    Simulation = 4,
    Decode = 5,
    Encode = 6,
    BufferTooSmall = 7,
    UnknownZone = 8,
    Consumed = 9,
    Panic = 99,
}

pub struct SsScenario(Resolved);

pub struct SsSimulation(Option<Simulation>); // None once finished

pub struct SsTrace(Trace);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let c = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Fail(SsStatus, String);

impl Fail {
    fn new(status: SsStatus, msg: impl ToString) -> Self {
        Fail(status, msg.to_string())
    }
}

/// Run `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SsStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned()).unwrap_or_default();
            set_error(format!("panic: {msg}"));
            SsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::new(SsStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::new(SsStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail::new(SsStatus::NullArgument, format!("{what} is null")))
}

unsafe fn mut_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail::new(SsStatus::NullArgument, format!("{what} is null")))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::new(SsStatus::NullArgument, format!("{what} is null")));
    }
    out.write(value);
    Ok(())
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes replaced").into_raw()
}

/// Message for the last failed call on this thread; empty after success.
/// Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn ss_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn ss_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ss_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parse and resolve a scenario from TOML text. `base_dir` (may be null)
/// anchors relative fixture paths.
///
/// # Safety
/// `toml` and `base_dir` must be NUL-terminated or null; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_scenario_parse(toml: *const c_char, base_dir: *const c_char, out: *mut *mut SsScenario) -> SsStatus {
    guard(|| {
        let text = str_arg(toml, "toml")?;
        let base = if base_dir.is_null() { None } else { Some(Path::new(str_arg(base_dir, "base_dir")?)) };
        let resolved = Scenario::parse(text).and_then(|s| s.resolve(base)).map_err(|e| Fail::new(SsStatus::Scenario, e))?;
        put(out, Box::into_raw(Box::new(SsScenario(resolved))), "out")
    })
}

/// Virtual window `[start, end)` in milliseconds.
///
/// # Safety
/// `scenario` must be a live handle; out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_scenario_window(scenario: *const SsScenario, start_ms: *mut i64, end_ms: *mut i64) -> SsStatus {
    guard(|| {
        let (s, e) = ref_arg(scenario, "scenario")?.0.window();
        put(start_ms, s.millis(), "start_ms")?;
        put(end_ms, e.millis(), "end_ms")
    })
}

/// # Safety
/// `scenario` must come from [`ss_scenario_parse`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ss_scenario_free(scenario: *mut SsScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Start a step-wise simulation. The scenario stays owned by the caller.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_sim_new(scenario: *const SsScenario, out: *mut *mut SsSimulation) -> SsStatus {
    guard(|| {
        let r = ref_arg(scenario, "scenario")?;
        let sim = Simulation::new(r.0.clone()).map_err(|e| Fail::new(SsStatus::Simulation, e))?;
        put(out, Box::into_raw(Box::new(SsSimulation(Some(sim)))), "out")
    })
}

fn live(sim: &mut SsSimulation) -> Result<&mut Simulation, Fail> {
    sim.0.as_mut().ok_or_else(|| Fail::new(SsStatus::Consumed, "simulation already finished into a trace"))
}

/// Advance one virtual second. `more` is false once the window is done.
///
/// # Safety
/// `sim` must be a live handle; `more` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_sim_step(sim: *mut SsSimulation, more: *mut bool) -> SsStatus {
    guard(|| {
        let s = live(mut_arg(sim, "sim")?)?;
        let m = s.step().map_err(|e| Fail::new(SsStatus::Simulation, e))?;
        put(more, m, "more")
    })
}

/// # Safety
/// `sim` must be a live handle; `now_ms` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_sim_now(sim: *mut SsSimulation, now_ms: *mut i64) -> SsStatus {
    guard(|| {
        let s = live(mut_arg(sim, "sim")?)?;
        put(now_ms, s.now().millis(), "now_ms")
    })
}

/// Latest modelled level of a zone and how many voices make it up.
///
/// # Safety
/// `sim` must be a live handle, `zone` NUL-terminated, out-pointers writable.
#[no_mangle]
pub unsafe extern "C" fn ss_sim_zone_level(sim: *mut SsSimulation, zone: *const c_char, level_dba: *mut f64, voices: *mut usize) -> SsStatus {
    guard(|| {
        let s = live(mut_arg(sim, "sim")?)?;
        let zone = str_arg(zone, "zone")?;
        let (_, l, v) = s.zone_levels().into_iter().find(|(z, _, _)| z == zone).ok_or_else(|| Fail::new(SsStatus::UnknownZone, format!("unknown zone {zone}")))?;
        put(level_dba, l, "level_dba")?;
        put(voices, v, "voices")
    })
}

/// Close the simulation into a trace. The handle must still be freed.
///
/// # Safety
/// `sim` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_sim_finish(sim: *mut SsSimulation, out: *mut *mut SsTrace) -> SsStatus {
    guard(|| {
        let h = mut_arg(sim, "sim")?;
        if out.is_null() {
            return Err(Fail::new(SsStatus::NullArgument, "out is null"));
        }
        let s = h.0.take().ok_or_else(|| Fail::new(SsStatus::Consumed, "simulation already finished into a trace"))?;
        put(out, Box::into_raw(Box::new(SsTrace(s.finish()))), "out")
    })
}

/// # Safety
/// `sim` must come from [`ss_sim_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ss_sim_free(sim: *mut SsSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Run the whole scenario as fast as possible.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_run(scenario: *const SsScenario, out: *mut *mut SsTrace) -> SsStatus {
    guard(|| {
        let r = ref_arg(scenario, "scenario")?;
        if out.is_null() {
            return Err(Fail::new(SsStatus::NullArgument, "out is null"));
        }
        let t = sim::run(&r.0).map_err(|e| Fail::new(SsStatus::Simulation, e))?;
        put(out, Box::into_raw(Box::new(SsTrace(t))), "out")
    })
}

/// Trace in its text form; free with [`ss_string_free`].
///
/// # Safety
/// `trace` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_trace_render(trace: *const SsTrace, out: *mut *mut c_char) -> SsStatus {
    guard(|| {
        let t = ref_arg(trace, "trace")?;
        put(out, owned_string(t.0.render()), "out")
    })
}

/// Parse a trace from its text form.
///
/// # Safety
/// `text` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_trace_parse(text: *const c_char, out: *mut *mut SsTrace) -> SsStatus {
    guard(|| {
        let t = Trace::parse(str_arg(text, "text")?).map_err(|e| Fail::new(SsStatus::Simulation, e))?;
        put(out, Box::into_raw(Box::new(SsTrace(t))), "out")
    })
}

/// Check a trace against its scenario. `passed` reports the verdict; the
/// optional `report_json` receives the full report.
///
/// # Safety
/// Handles must be live; `passed` writable; `report_json` writable or null.
#[no_mangle]
pub unsafe extern "C" fn ss_trace_check(trace: *const SsTrace, scenario: *const SsScenario, passed: *mut bool, report_json: *mut *mut c_char) -> SsStatus {
    guard(|| {
        let t = ref_arg(trace, "trace")?;
        let r = ref_arg(scenario, "scenario")?;
        let report = sim::check(&t.0, &r.0);
        put(passed, report.passed(), "passed")?;
        if !report_json.is_null() {
            report_json.write(owned_string(report.to_json()));
        }
        Ok(())
    })
}

/// Compare onsets of two traces. `equivalent` is true when every onset
/// matches within `tolerance_ms`; the optional `detail` says how close.
///
/// # Safety
/// Handles must be live; `equivalent` writable; `detail` writable or null.
#[no_mangle]
pub unsafe extern "C" fn ss_trace_equivalent(
    reference: *const SsTrace,
    other: *const SsTrace,
    tolerance_ms: i64,
    equivalent: *mut bool,
    detail: *mut *mut c_char,
) -> SsStatus {
    guard(|| {
        let a = ref_arg(reference, "reference")?;
        let b = ref_arg(other, "other")?;
        let r = sim::equivalence(&a.0, &b.0, tolerance_ms);
        put(equivalent, r.passed, "equivalent")?;
        if !detail.is_null() {
            detail.write(owned_string(r.detail));
        }
        Ok(())
    })
}

/// # Safety
/// `trace` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ss_trace_free(trace: *mut SsTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Decode a control datagram and write its canonical encoding into `buf`.
/// `written` receives the length, or the needed size on
/// `SS_STATUS_BUFFER_TOO_SMALL`.
///
/// # Safety
/// `bytes` must point to `len` readable bytes, `buf` to `cap` writable bytes
/// (or be null with `cap` 0), `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_wire_canonicalize(bytes: *const u8, len: usize, buf: *mut u8, cap: usize, written: *mut usize) -> SsStatus {
    guard(|| {
        if bytes.is_null() {
            return Err(Fail::new(SsStatus::NullArgument, "bytes is null"));
        }
        let input = std::slice::from_raw_parts(bytes, len);
        let msg = wire::decode(input).map_err(|e| Fail::new(SsStatus::Decode, e))?;
        let enc = wire::encode(&msg).map_err(|e| Fail::new(SsStatus::Encode, e))?;
        put(written, enc.len(), "written")?;
        if enc.len() > cap || buf.is_null() {
            return Err(Fail::new(SsStatus::BufferTooSmall, format!("need {} bytes", enc.len())));
        }
        ptr::copy_nonoverlapping(enc.as_ptr(), buf, enc.len());
        Ok(())
    })
}
