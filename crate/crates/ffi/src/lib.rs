//! C ABI over `bdsim`.
//!
//! Objects cross the boundary as opaque heap handles that the caller frees
//! with the matching `*_free` function. Every fallible call returns a
//! [`BdsimStatus`]; on failure a message is kept per thread and can be read
//! with [`bdsim_last_error_message`]. Panics are caught and reported as
//! [`BdsimStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use bdsim::io::{write_trajectory_jsonl, ModelSpec};
use bdsim::{Caps, Configuration, EventKind, Point, RateModel, RngStreamKey, Status, Trajectory};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BdsimStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument was out of its domain.
    InvalidArgument = 2,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 3,
    /// JSON input could not be parsed or describes an invalid model.
    Parse = 4,
    /// The simulator reported an error.
    Simulation = 5,
    /// An index or time was out of range.
    OutOfRange = 6,
    /// A panic was caught at the boundary.
    Panic = 7,
}

/// How a run ended.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BdsimRunStatus {
    /// Reached the horizon.
    Completed = 0,
    /// The total rate reached zero.
    Absorbed = 1,
    /// Stopped at the population cap.
    PopulationCap = 2,
    /// Stopped at the event budget.
    EventCap = 3,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BdsimEventKind {
    Birth = 0,
    Death = 1,
}

/// One event of a trajectory. The position is written to a caller buffer.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BdsimEvent {
    pub time: f64,
    pub kind: BdsimEventKind,
    pub particle_index: i64,
}

/// A rate model together with its spatial dimension.
pub struct BdsimModel {
    model: RateModel,
    dim: usize,
}

/// A finite configuration of labelled points.
pub struct BdsimConfiguration(Configuration);

/// The event log of one simulated run.
pub struct BdsimTrajectory(Trajectory);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

struct Fail(BdsimStatus, String);

impl Fail {
    fn null(what: &str) -> Self {
        Fail(BdsimStatus::NullPointer, format!("`{what}` is null"))
    }
    fn arg(msg: impl Into<String>) -> Self {
        Fail(BdsimStatus::InvalidArgument, msg.into())
    }
}

impl From<bdsim::Error> for Fail {
    fn from(e: bdsim::Error) -> Self {
        let code = match e {
            bdsim::Error::TimeOutOfRange { .. } => BdsimStatus::OutOfRange,
            bdsim::Error::Config { .. } => BdsimStatus::Parse,
            bdsim::Error::InvalidPoint(_)
            | bdsim::Error::DimensionMismatch { .. }
            | bdsim::Error::DuplicatePosition(_)
            | bdsim::Error::InvalidParameter(_) => BdsimStatus::InvalidArgument,
            _ => BdsimStatus::Simulation,
        };
        Fail(code, e.to_string())
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> BdsimStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            BdsimStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            BdsimStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail::null(what))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn text<'a>(s: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if s.is_null() {
        return Err(Fail::null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|e| Fail(BdsimStatus::InvalidUtf8, format!("`{what}`: {e}")))
}

/// Message of the last failed call on this thread, or null if the last
/// call succeeded. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn bdsim_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bdsim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a model from its JSON description (the `model` object of an
/// experiment config) for points in `dim` dimensions.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bdsim_model_from_json(json: *const c_char, dim: usize, out: *mut *mut BdsimModel) -> BdsimStatus {
    guard(|| {
        let json = text(json, "json")?;
        if dim == 0 {
            return Err(Fail::arg("dimension must be positive"));
        }
        let spec: ModelSpec = serde_json::from_str(json).map_err(|e| Fail(BdsimStatus::Parse, e.to_string()))?;
        let model = spec.build(dim, "model")?;
        put(out, Box::into_raw(Box::new(BdsimModel { model, dim })), "out")
    })
}

/// # Safety
/// `model` must be null or a handle from [`bdsim_model_from_json`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bdsim_model_free(model: *mut BdsimModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Builds a configuration from `n` points stored row-major in `coords`
/// (`n * dim` values). Points get the initial labels `0, -1, ...` in
/// lexicographic order.
///
/// # Safety
/// `coords` must point to `n * dim` doubles (it may be null when `n` is 0)
/// and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bdsim_configuration_new(
    dim: usize,
    coords: *const f64,
    n: usize,
    out: *mut *mut BdsimConfiguration,
) -> BdsimStatus {
    guard(|| {
        if dim == 0 {
            return Err(Fail::arg("dimension must be positive"));
        }
        let values: &[f64] = if n == 0 {
            &[]
        } else {
            if coords.is_null() {
                return Err(Fail::null("coords"));
            }
            let len = n.checked_mul(dim).ok_or_else(|| Fail::arg("n * dim overflows"))?;
            std::slice::from_raw_parts(coords, len)
        };
        let points = values.chunks(dim).map(|c| Point::new(c.to_vec())).collect::<Result<Vec<_>, _>>()?;
        let config = Configuration::from_points(dim, points)?;
        put(out, Box::into_raw(Box::new(BdsimConfiguration(config))), "out")
    })
}

/// # Safety
/// `config` must be null or a live configuration handle.
#[no_mangle]
pub unsafe extern "C" fn bdsim_configuration_free(config: *mut BdsimConfiguration) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Number of points, or 0 for a null handle.
///
/// # Safety
/// `config` must be null or a live configuration handle.
#[no_mangle]
pub unsafe extern "C" fn bdsim_configuration_len(config: *const BdsimConfiguration) -> usize {
    config.as_ref().map_or(0, |c| c.0.len())
}

/// Bounded matching distance between two configurations: 1 when the
/// cardinalities differ, otherwise the minimum of 1 and the optimal
/// Euclidean matching cost.
///
/// # Safety
/// `a` and `b` must be live configuration handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bdsim_dist(
    a: *const BdsimConfiguration,
    b: *const BdsimConfiguration,
    out: *mut f64,
) -> BdsimStatus {
    guard(|| {
        let d = bdsim::dist(&get(a, "a")?.0, &get(b, "b")?.0)?;
        put(out, d, "out")
    })
}

/// Simulates one trajectory up to `horizon`. Runs keyed by the same
/// `(master_seed, trajectory)` are identical.
///
/// # Safety
/// `model` and `initial` must be live handles and `out` a valid pointer.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn bdsim_simulate(
    model: *const BdsimModel,
    initial: *const BdsimConfiguration,
    horizon: f64,
    max_population: usize,
    max_events: u64,
    master_seed: u64,
    trajectory: u64,
    out: *mut *mut BdsimTrajectory,
) -> BdsimStatus {
    guard(|| {
        let model = get(model, "model")?;
        let initial = &get(initial, "initial")?.0;
        if initial.dim() != model.dim {
            return Err(Fail::arg(format!(
                "configuration has dimension {}, model has {}",
                initial.dim(),
                model.dim
            )));
        }
        let caps = Caps {
            max_population,
            max_events,
        };
        let key = RngStreamKey::new(master_seed).with_trajectory(trajectory);
        let traj = bdsim::simulate(&model.model, initial, horizon, caps, key)?;
        put(out, Box::into_raw(Box::new(BdsimTrajectory(traj))), "out")
    })
}

/// # Safety
/// `traj` must be null or a live trajectory handle.
#[no_mangle]
pub unsafe extern "C" fn bdsim_trajectory_free(traj: *mut BdsimTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Number of events, or 0 for a null handle.
///
/// # Safety
/// `traj` must be null or a live trajectory handle.
#[no_mangle]
pub unsafe extern "C" fn bdsim_trajectory_event_count(traj: *const BdsimTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.0.events.len())
}

/// How the run ended and when: the horizon, the absorption time or the
/// time the cap was hit.
///
/// # Safety
/// `traj` must be a live handle; `status` and `time` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn bdsim_trajectory_status(
    traj: *const BdsimTrajectory,
    status: *mut BdsimRunStatus,
    time: *mut f64,
) -> BdsimStatus {
    guard(|| {
        let t = &get(traj, "traj")?.0;
        let (s, at) = match t.status {
            Status::Completed => (BdsimRunStatus::Completed, t.horizon),
            Status::Absorbed { time } => (BdsimRunStatus::Absorbed, time),
            Status::CapHit { kind, time, .. } => match kind {
                bdsim::simulate::CapKind::Population => (BdsimRunStatus::PopulationCap, time),
                bdsim::simulate::CapKind::Events => (BdsimRunStatus::EventCap, time),
            },
        };
        put(status, s, "status")?;
        put(time, at, "time")
    })
}

/// Event `i` of the trajectory. Its position is written to `coords`, which
/// must hold at least `coords_len` doubles, with `coords_len` at least the
/// dimension.
///
/// # Safety
/// `traj` must be a live handle, `event` a valid pointer and `coords` valid
/// for `coords_len` writes.
#[no_mangle]
pub unsafe extern "C" fn bdsim_trajectory_event(
    traj: *const BdsimTrajectory,
    i: usize,
    event: *mut BdsimEvent,
    coords: *mut f64,
    coords_len: usize,
) -> BdsimStatus {
    guard(|| {
        let t = &get(traj, "traj")?.0;
        let e = t
            .events
            .get(i)
            .ok_or_else(|| Fail(BdsimStatus::OutOfRange, format!("event {i} of {}", t.events.len())))?;
        let x = e.position.coords();
        if coords.is_null() {
            return Err(Fail::null("coords"));
        }
        if coords_len < x.len() {
            return Err(Fail::arg(format!("coords buffer holds {coords_len}, need {}", x.len())));
        }
        ptr::copy_nonoverlapping(x.as_ptr(), coords, x.len());
        let kind = match e.kind {
            EventKind::Birth => BdsimEventKind::Birth,
            EventKind::Death => BdsimEventKind::Death,
        };
        put(
            event,
            BdsimEvent {
                time: e.time,
                kind,
                particle_index: e.particle_index,
            },
            "event",
        )
    })
}

/// Population size at time `t`, within the range the run is valid for.
///
/// # Safety
/// `traj` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bdsim_trajectory_size_at(traj: *const BdsimTrajectory, t: f64, out: *mut usize) -> BdsimStatus {
    guard(|| {
        let n = get(traj, "traj")?.0.size_at(t)?;
        put(out, n, "out")
    })
}

/// The trajectory in JSON Lines form as a newly allocated string; release
/// it with [`bdsim_string_free`].
///
/// # Safety
/// `traj` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bdsim_trajectory_to_jsonl(traj: *const BdsimTrajectory, out: *mut *mut c_char) -> BdsimStatus {
    guard(|| {
        let t = &get(traj, "traj")?.0;
        let mut buf = Vec::new();
        write_trajectory_jsonl(t, &mut buf)?;
        let s = CString::new(buf).map_err(|e| Fail(BdsimStatus::Simulation, e.to_string()))?;
        put(out, s.into_raw(), "out")
    })
}

/// # Safety
/// `s` must be null or a string returned by this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bdsim_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
