//! C interface: opaque handles for the simulator, trained policies and
//! stimulation patterns.
//!
//! Every fallible function returns a [`FesrlStatus`]; on failure the message
//! is available from [`fesrl_last_error`] on the same thread. Handles are
//! created by `*_new`/`*_from_json`/`*_load` functions and released with the
//! matching `*_free`. Passing a freed handle is undefined behaviour.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use fesrl::biomech::{CyclingConfig, Plant, RealityGapConfig, Side, SimState, StartAssist};
use fesrl::offline::{evaluate_pattern, trial_seeds};
use fesrl::pattern::{extract_pattern, pattern_control, ExtractOptions, StimulationPattern};
use fesrl::rl::Agent;
use fesrl::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FesrlStatus {
    Ok = 0,
    /// Well-formed input that the model rejects (bad parameters, shapes, ...).
    Domain = 1,
    /// Unreadable file or malformed JSON.
    IoOrParse = 2,
    NullPointer = 3,
    InvalidUtf8 = 4,
    /// The output buffer is too small; the required size was reported.
    BufferTooSmall = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

pub struct FesrlPlant(Plant);

pub struct FesrlSim {
    plant: Plant,
    state: SimState,
    assist: Option<StartAssist>,
}

pub struct FesrlAgent(Agent);

pub struct FesrlPattern(StimulationPattern);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(FesrlStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = if e.is_io_or_parse() { FesrlStatus::IoOrParse } else { FesrlStatus::Domain };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(FesrlStatus::NullPointer, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FesrlStatus {
    let (status, message) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (FesrlStatus::Ok, String::new()),
        Ok(Err(Failure(status, message))) => (status, message),
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            (FesrlStatus::Panic, message)
        }
    };
    LAST_ERROR.with(|e| *e.borrow_mut() = message);
    status
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|e| Failure(FesrlStatus::InvalidUtf8, format!("`{what}`: {e}")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn copy_out(values: &[f64], out: *mut f64, out_len: usize) -> Result<(), Failure> {
    if out_len < values.len() {
        return Err(Failure(FesrlStatus::BufferTooSmall, format!("need {} values, buffer holds {out_len}", values.len())));
    }
    if out.is_null() {
        return Err(null("out"));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

/// Copies `text` plus a NUL terminator into `buf`; `needed` receives the
/// full size including the terminator either way.
unsafe fn copy_text(text: &str, buf: *mut c_char, buf_len: usize, needed: *mut usize) -> Result<(), Failure> {
    if !needed.is_null() {
        *needed = text.len() + 1;
    }
    if buf_len < text.len() + 1 {
        return Err(Failure(FesrlStatus::BufferTooSmall, format!("need {} bytes, buffer holds {buf_len}", text.len() + 1)));
    }
    if buf.is_null() {
        return Err(null("buf"));
    }
    ptr::copy_nonoverlapping(text.as_ptr().cast::<c_char>(), buf, text.len());
    *buf.add(text.len()) = 0;
    Ok(())
}

fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(unsafe { Box::from_raw(p) });
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fesrl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the message of the last failed call on this thread into `buf`
/// (truncated, always NUL-terminated when `buf_len > 0`). Returns the
/// untruncated message length without the terminator.
///
/// # Safety
/// `buf` must be null or point to `buf_len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fesrl_last_error(buf: *mut c_char, buf_len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && buf_len > 0 {
            let n = msg.len().min(buf_len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Builds a simulator from a cycling-configuration JSON document, optionally
/// perturbed by a reality-gap JSON document (`gap_json` may be null).
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fesrl_plant_from_json(
    config_json: *const c_char,
    gap_json: *const c_char,
    out: *mut *mut FesrlPlant,
) -> FesrlStatus {
    guard(|| {
        let config = CyclingConfig::from_json(str_arg(config_json, "config_json")?)?.validate()?;
        let mut plant = Plant::new(config);
        if !gap_json.is_null() {
            let gap = RealityGapConfig::from_json(str_arg(gap_json, "gap_json")?)?;
            plant = gap.apply(&plant)?;
        }
        write_out(out, FesrlPlant(plant))
    })
}

/// Muscles per leg, or 0 for a null handle.
///
/// # Safety
/// `plant` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fesrl_plant_n_muscles(plant: *const FesrlPlant) -> usize {
    plant.as_ref().map_or(0, |p| p.0.n_muscles())
}

/// # Safety
/// `plant` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn fesrl_plant_free(plant: *mut FesrlPlant) {
    free(plant)
}

/// Starts a simulation at rest at `crank_angle` (rad). With `assist` non-zero
/// the start-up motor spins the crank up during the first second.
///
/// # Safety
/// `plant` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fesrl_sim_new(
    plant: *const FesrlPlant,
    crank_angle: f64,
    assist: c_int,
    out: *mut *mut FesrlSim,
) -> FesrlStatus {
    guard(|| {
        let plant = ref_arg(plant, "plant")?.0.clone();
        if !crank_angle.is_finite() {
            return Err(Error::InvalidArgument("crank angle must be finite".into()).into());
        }
        let state = plant.initial_state(crank_angle);
        write_out(out, FesrlSim { plant, state, assist: (assist != 0).then(StartAssist::default) })
    })
}

/// Advances by one control interval `dt` (s) holding `controls` (right-leg
/// muscles then left, each in [0, 1]).
///
/// # Safety
/// `sim` must be a live handle; `controls` must hold `n_controls` values.
#[no_mangle]
pub unsafe extern "C" fn fesrl_sim_step(sim: *mut FesrlSim, controls: *const f64, n_controls: usize, dt: f64) -> FesrlStatus {
    guard(|| {
        let sim = sim.as_mut().ok_or_else(|| null("sim"))?;
        let controls = slice_arg(controls, n_controls, "controls")?;
        sim.state = sim.plant.sim_step_assisted(&sim.state, controls, dt, sim.assist.as_ref())?;
        Ok(())
    })
}

/// Reads crank angle (rad, in [0, 2π)), cadence (rad/s) and time (s). Any
/// output pointer may be null.
///
/// # Safety
/// `sim` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn fesrl_sim_state(
    sim: *const FesrlSim,
    crank_angle: *mut f64,
    cadence: *mut f64,
    time: *mut f64,
) -> FesrlStatus {
    guard(|| {
        let s = &ref_arg(sim, "sim")?.state;
        for (p, v) in [(crank_angle, s.crank_angle), (cadence, s.cadence), (time, s.sim_time)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `sim` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn fesrl_sim_free(sim: *mut FesrlSim) {
    free(sim)
}

/// Parses an agent checkpoint from a JSON string.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fesrl_agent_from_json(json: *const c_char, out: *mut *mut FesrlAgent) -> FesrlStatus {
    guard(|| write_out(out, FesrlAgent(Agent::from_json(str_arg(json, "json")?)?)))
}

/// Loads an agent checkpoint file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fesrl_agent_load(path: *const c_char, out: *mut *mut FesrlAgent) -> FesrlStatus {
    guard(|| write_out(out, FesrlAgent(Agent::load(Path::new(str_arg(path, "path")?))?)))
}

/// Actions per leg, or 0 for a null handle.
///
/// # Safety
/// `agent` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fesrl_agent_n_actions(agent: *const FesrlAgent) -> usize {
    agent.as_ref().map_or(0, |a| a.0.n_actions())
}

/// Observation length, or 0 for a null handle.
///
/// # Safety
/// `agent` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fesrl_agent_obs_dim(agent: *const FesrlAgent) -> usize {
    agent.as_ref().map_or(0, |a| a.0.obs_dim())
}

/// Deterministic policy output for one observation
/// `(sin θ, cos θ, cadence, previous actions...)`.
///
/// # Safety
/// `agent` must be a live handle; `obs` must hold `obs_len` values and `out`
/// must have room for `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn fesrl_agent_mean_action(
    agent: *const FesrlAgent,
    obs: *const f64,
    obs_len: usize,
    out: *mut f64,
    out_len: usize,
) -> FesrlStatus {
    guard(|| {
        let agent = &ref_arg(agent, "agent")?.0;
        let obs = slice_arg(obs, obs_len, "obs")?;
        copy_out(&agent.actor.mean_action(obs)?, out, out_len)
    })
}

/// # Safety
/// `agent` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn fesrl_agent_free(agent: *mut FesrlAgent) {
    free(agent)
}

/// Parses and validates a pattern JSON document.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fesrl_pattern_from_json(json: *const c_char, out: *mut *mut FesrlPattern) -> FesrlStatus {
    guard(|| write_out(out, FesrlPattern(StimulationPattern::from_json(str_arg(json, "json")?)?)))
}

/// Thresholds the agent's deterministic policy into a pattern;
/// `reference_cadence` in rad/s.
///
/// # Safety
/// `agent` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fesrl_pattern_extract(
    agent: *const FesrlAgent,
    threshold: f64,
    reference_cadence: f64,
    out: *mut *mut FesrlPattern,
) -> FesrlStatus {
    guard(|| {
        let agent = &ref_arg(agent, "agent")?.0;
        let opts = ExtractOptions { threshold, reference_cadence, ..Default::default() };
        write_out(out, FesrlPattern(extract_pattern(&agent.actor, &opts)?))
    })
}

/// Muscles per leg, or 0 for a null handle.
///
/// # Safety
/// `pattern` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fesrl_pattern_n_muscles(pattern: *const FesrlPattern) -> usize {
    pattern.as_ref().map_or(0, |p| p.0.n_muscles())
}

/// ON/OFF controls of one leg (`side` 0 = right, 1 = left) at `crank_angle`
/// (rad).
///
/// # Safety
/// `pattern` must be a live handle; `out` must have room for `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn fesrl_pattern_control(
    pattern: *const FesrlPattern,
    crank_angle: f64,
    side: c_int,
    out: *mut f64,
    out_len: usize,
) -> FesrlStatus {
    guard(|| {
        let p = &ref_arg(pattern, "pattern")?.0;
        let side = match side {
            0 => Side::Right,
            1 => Side::Left,
            _ => return Err(Error::InvalidArgument(format!("side {side} is not 0 (right) or 1 (left)")).into()),
        };
        copy_out(&pattern_control(p, crank_angle, side), out, out_len)
    })
}

/// Serializes the pattern to JSON. Call with `buf_len = 0` to query the size.
///
/// # Safety
/// `pattern` must be a live handle; `buf` must have room for `buf_len`
/// bytes; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn fesrl_pattern_to_json(
    pattern: *const FesrlPattern,
    buf: *mut c_char,
    buf_len: usize,
    needed: *mut usize,
) -> FesrlStatus {
    guard(|| copy_text(&ref_arg(pattern, "pattern")?.0.to_json(), buf, buf_len, needed))
}

/// # Safety
/// `pattern` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn fesrl_pattern_free(pattern: *mut FesrlPattern) {
    free(pattern)
}

/// Mean cadence in RPM of `n_trials` open-loop trials of `duration_s` seconds
/// from random starts seeded `seed, seed + 1, ...`, skipping the first 5 s
/// of each trial.
///
/// # Safety
/// Handles must be live; `mean_rpm` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fesrl_evaluate_pattern(
    plant: *const FesrlPlant,
    pattern: *const FesrlPattern,
    duration_s: f64,
    n_trials: usize,
    seed: u64,
    assist: c_int,
    mean_rpm: *mut f64,
) -> FesrlStatus {
    guard(|| {
        let plant = &ref_arg(plant, "plant")?.0;
        let pattern = &ref_arg(pattern, "pattern")?.0;
        if mean_rpm.is_null() {
            return Err(null("mean_rpm"));
        }
        let assist = (assist != 0).then(StartAssist::default);
        let report = evaluate_pattern(plant, pattern, duration_s, &trial_seeds(seed, n_trials), assist.as_ref())?;
        *mean_rpm = report.mean_rpm;
        Ok(())
    })
}
