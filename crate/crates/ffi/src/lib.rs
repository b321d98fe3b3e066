//! C ABI over the `rems` core.
//!
//! Every function returns a [`RemsStatus`]. On failure the message is kept
//! per thread and can be copied out with [`rems_last_error`]. Handles are
//! opaque and must be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use rems::backend::{BackendError, Implementation, ProfileOverrides};
use rems::record::{convert_unit, DefRecord, RecordError, UnitSpec};
use rems::robot::{builtin, DefinitionError, Space};
use rems::runtime::{ComposedRobot, SensePrecedence};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    UnknownKey = 4,
    Record = 5,
    Definition = 6,
    Backend = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Which record of a robot a key refers to.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemsSpace {
    Input = 0,
    State = 1,
    Output = 2,
}

impl From<RemsSpace> for Space {
    fn from(s: RemsSpace) -> Self {
        match s {
            RemsSpace::Input => Space::Input,
            RemsSpace::State => Space::State,
            RemsSpace::Output => Space::Output,
        }
    }
}

/// A robot definition composed with an implementation, stepped by the caller.
pub struct RemsRobot {
    robot: ComposedRobot,
    input: DefRecord,
    state: DefRecord,
    output: DefRecord,
    stale: bool,
    t: f64,
}

impl RemsRobot {
    fn record(&self, space: Space) -> &DefRecord {
        match space {
            Space::Input => &self.input,
            Space::State => &self.state,
            Space::Output => &self.output,
        }
    }
}

struct Failure {
    status: RemsStatus,
    message: String,
}

impl Failure {
    fn new(status: RemsStatus, message: impl Into<String>) -> Self {
        Failure {
            status,
            message: message.into(),
        }
    }
}

impl From<RecordError> for Failure {
    fn from(e: RecordError) -> Self {
        let status = match e {
            RecordError::UnknownKey(_) => RemsStatus::UnknownKey,
            _ => RemsStatus::Record,
        };
        Failure::new(status, e.to_string())
    }
}

impl From<DefinitionError> for Failure {
    fn from(e: DefinitionError) -> Self {
        Failure::new(RemsStatus::Definition, e.to_string())
    }
}

impl From<BackendError> for Failure {
    fn from(e: BackendError) -> Self {
        Failure::new(RemsStatus::Backend, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_last_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RemsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(String::new());
            RemsStatus::Ok
        }
        Ok(Err(fail)) => {
            set_last_error(fail.message);
            fail.status
        }
        Err(_) => {
            set_last_error("panic inside rems".into());
            RemsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(
            RemsStatus::NullPointer,
            format!("{what} is null"),
        ));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(RemsStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn robot_ref<'a>(p: *const RemsRobot) -> Result<&'a RemsRobot, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure::new(RemsStatus::NullPointer, "robot is null"))
}

unsafe fn robot_mut<'a>(p: *mut RemsRobot) -> Result<&'a mut RemsRobot, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure::new(RemsStatus::NullPointer, "robot is null"))
}

fn out_ptr<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    // SAFETY: callers pass either null or a valid, writable pointer.
    unsafe { p.as_mut() }
        .ok_or_else(|| Failure::new(RemsStatus::NullPointer, "output pointer is null"))
}

/// Copy `s` with a NUL terminator. `needed` receives the full size in bytes.
unsafe fn copy_out(
    s: &str,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> Result<(), Failure> {
    if !needed.is_null() {
        *needed = s.len() + 1;
    }
    if buf.is_null() || len < s.len() + 1 {
        return Err(Failure::new(
            RemsStatus::BufferTooSmall,
            format!("need {} bytes, have {len}", s.len() + 1),
        ));
    }
    std::ptr::copy_nonoverlapping(s.as_ptr(), buf.cast::<u8>(), s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

/// Copy the last error message of this thread into `buf`. Returns the
/// message length including the terminator; 0 means no error.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn rems_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if msg.is_empty() {
            return 0;
        }
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len() + 1
    })
}

/// Convert `value` between two unit names, e.g. `"rad/s"` to `"rpm"`.
///
/// # Safety
/// `from` and `to` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rems_convert_unit(
    value: f64,
    from: *const c_char,
    to: *const c_char,
    out: *mut f64,
) -> RemsStatus {
    guard(|| {
        let from = UnitSpec::new(str_arg(from, "from")?)?;
        let to = UnitSpec::new(str_arg(to, "to")?)?;
        *out_ptr(out)? = convert_unit(value, &from, &to)?;
        Ok(())
    })
}

/// Create a robot from a built-in definition and an implementation reference
/// (`analytical`, `emulated:<profile>`, `bridge:<url>`), initialized at t = 0.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable. The
/// returned handle is released with [`rems_robot_free`].
#[no_mangle]
pub unsafe extern "C" fn rems_robot_new(
    definition: *const c_char,
    implementation: *const c_char,
    seed: u64,
    out: *mut *mut RemsRobot,
) -> RemsStatus {
    guard(|| {
        let out = out_ptr(out)?;
        *out = std::ptr::null_mut();
        let def = builtin(str_arg(definition, "definition")?)?;
        let imp = Implementation::parse(str_arg(implementation, "implementation")?)?;
        let backend = imp.build(&ProfileOverrides::default())?;
        let mut robot = ComposedRobot::new(def.clone(), backend, SensePrecedence::Definition)?;
        robot.init(0.0, seed)?;
        let boxed = Box::new(RemsRobot {
            input: DefRecord::new(def.input_schema()),
            state: def.initial_state()?,
            output: DefRecord::new(def.output_schema()),
            stale: false,
            t: 0.0,
            robot,
        });
        *out = Box::into_raw(boxed);
        Ok(())
    })
}

/// Close and release a robot. Null is ignored.
///
/// # Safety
/// `robot` must come from [`rems_robot_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rems_robot_free(robot: *mut RemsRobot) {
    if robot.is_null() {
        return;
    }
    let mut r = Box::from_raw(robot);
    if let Err(e) = r.robot.close() {
        set_last_error(e.to_string());
    }
}

/// Set one input key. `unit` may be null to use the schema's unit.
///
/// # Safety
/// `robot` must be a live handle; strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rems_robot_set_input(
    robot: *mut RemsRobot,
    key: *const c_char,
    value: f64,
    unit: *const c_char,
) -> RemsStatus {
    guard(|| {
        let r = robot_mut(robot)?;
        let key = str_arg(key, "key")?;
        let unit = opt_str_arg(unit, "unit")?;
        r.input = r.input.set_value(key, value, unit)?;
        Ok(())
    })
}

/// Advance the robot by `dt` seconds with the current input.
///
/// # Safety
/// `robot` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rems_robot_step(robot: *mut RemsRobot, dt: f64) -> RemsStatus {
    guard(|| {
        let r = robot_mut(robot)?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Failure::new(
                RemsStatus::InvalidArgument,
                format!("dt must be > 0, got {dt}"),
            ));
        }
        let t = r.t + dt;
        let obs = r.robot.step(&r.input, t, |_| {})?;
        r.t = t;
        r.state = obs.state;
        r.output = obs.output;
        r.stale = obs.stale;
        Ok(())
    })
}

/// Read one key of the latest input, state or output. `unit` may be null.
///
/// # Safety
/// `robot` must be a live handle; strings must be NUL-terminated; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn rems_robot_get(
    robot: *const RemsRobot,
    space: RemsSpace,
    key: *const c_char,
    unit: *const c_char,
    out: *mut f64,
) -> RemsStatus {
    guard(|| {
        let r = robot_ref(robot)?;
        let key = str_arg(key, "key")?;
        let unit = opt_str_arg(unit, "unit")?;
        *out_ptr(out)? = r.record(space.into()).get_value(key, unit)?;
        Ok(())
    })
}

/// Simulated time of the latest step.
///
/// # Safety
/// `robot` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rems_robot_time(robot: *const RemsRobot, out: *mut f64) -> RemsStatus {
    guard(|| {
        *out_ptr(out)? = robot_ref(robot)?.t;
        Ok(())
    })
}

/// Whether the latest observation was stale.
///
/// # Safety
/// `robot` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rems_robot_is_stale(
    robot: *const RemsRobot,
    out: *mut bool,
) -> RemsStatus {
    guard(|| {
        *out_ptr(out)? = robot_ref(robot)?.stale;
        Ok(())
    })
}

/// Number of keys in one record of the robot.
///
/// # Safety
/// `robot` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rems_robot_key_count(
    robot: *const RemsRobot,
    space: RemsSpace,
    out: *mut usize,
) -> RemsStatus {
    guard(|| {
        *out_ptr(out)? = robot_ref(robot)?.record(space.into()).schema().len();
        Ok(())
    })
}

/// Copy the `index`-th key of a record into `buf`. `needed` (nullable)
/// receives the required size including the terminator.
///
/// # Safety
/// `robot` must be a live handle; `buf` must be null or point to `len`
/// writable bytes.
#[no_mangle]
pub unsafe extern "C" fn rems_robot_key_name(
    robot: *const RemsRobot,
    space: RemsSpace,
    index: usize,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> RemsStatus {
    guard(|| {
        let r = robot_ref(robot)?;
        let leaves = r.record(space.into()).schema().leaves();
        let leaf = leaves.get(index).ok_or_else(|| {
            Failure::new(
                RemsStatus::InvalidArgument,
                format!("index {index} out of range ({} keys)", leaves.len()),
            )
        })?;
        copy_out(&leaf.path, buf, len, needed)
    })
}
