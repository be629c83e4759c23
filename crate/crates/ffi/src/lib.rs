//! C ABI for the accounting engine.
//!
//! Every fallible function returns an [`ImpactStatus`]; on failure a
//! description is kept per thread and can be copied out with
//! [`impact_last_error_message`]. Handles are opaque and must be released
//! with their `_free` function. Strings are NUL-terminated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use impact_core::accounting::{self, AccountingParams, Execution, IntensityMode, Method};
use impact_core::carbon::{self, CarbonIntensitySeries, DepreciationSchedule, IntensityBook};
use impact_core::machine::{self, Machine, MachineId};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImpactStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    InvalidArgument = 4,
    NotFound = 5,
    Accounting = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImpactMethod {
    Runtime = 0,
    Energy = 1,
    Peak = 2,
    Eba = 3,
    Cba = 4,
}

impl From<ImpactMethod> for Method {
    fn from(m: ImpactMethod) -> Self {
        match m {
            ImpactMethod::Runtime => Method::Runtime,
            ImpactMethod::Energy => Method::Energy,
            ImpactMethod::Peak => Method::Peak,
            ImpactMethod::Eba => Method::Eba,
            ImpactMethod::Cba => Method::Cba,
        }
    }
}

/// One run of a job on one machine.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ImpactExecution {
    pub duration_s: f64,
    pub energy_j: f64,
    pub cores_used: u32,
    /// Epoch seconds.
    pub start_time: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ImpactParams {
    pub beta: f64,
    pub annual_rate: f64,
    /// Use the mean intensity over the run instead of the value at start.
    pub integrated: bool,
}

/// Price plus its two components. For EBA the parts are the measured and
/// potential halves; for CBA, operational and embodied grams. Other methods
/// leave both parts at zero.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ImpactQuote {
    pub amount: f64,
    pub part_a: f64,
    pub part_b: f64,
}

/// Opaque set of machines.
pub struct ImpactMachineSet {
    machines: Vec<Machine>,
}

/// Opaque collection of per-region carbon-intensity series.
pub struct ImpactIntensity {
    book: IntensityBook,
}

struct Failure(ImpactStatus, String);

type FfiResult<T> = Result<T, Failure>;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn guard(body: impl FnOnce() -> FfiResult<()>) -> ImpactStatus {
    let outcome = catch_unwind(AssertUnwindSafe(body))
        .unwrap_or_else(|_| Err(Failure(ImpactStatus::Panic, "internal panic".into())));
    match outcome {
        Ok(()) => {
            LAST_ERROR.with(|e| e.borrow_mut().clear());
            ImpactStatus::Ok
        }
        Err(Failure(status, msg)) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = msg);
            status
        }
    }
}

fn fail<E: std::fmt::Display>(status: ImpactStatus) -> impl FnOnce(E) -> Failure {
    move |e| Failure(status, e.to_string())
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure(
            ImpactStatus::NullPointer,
            format!("{what} is null"),
        ));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(ImpactStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref()
        .ok_or_else(|| Failure(ImpactStatus::NullPointer, format!("{what} is null")))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut()
        .ok_or_else(|| Failure(ImpactStatus::NullPointer, format!("{what} is null")))
}

/// Copies the calling thread's last error message into `buf` (truncated and
/// NUL-terminated) and returns the full message length in bytes, excluding
/// the terminator. `buf` may be null when `len` is 0.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn impact_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Parses a machine fixture (TOML text).
///
/// # Safety
/// `toml` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn impact_machines_parse(
    toml: *const c_char,
    out: *mut *mut ImpactMachineSet,
) -> ImpactStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let machines = machine::parse_machines(text(toml, "toml")?, "<ffi>")
            .map_err(fail(ImpactStatus::Parse))?;
        *out = Box::into_raw(Box::new(ImpactMachineSet { machines }));
        Ok(())
    })
}

/// Loads a machine fixture from a file.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn impact_machines_load(
    path: *const c_char,
    out: *mut *mut ImpactMachineSet,
) -> ImpactStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let machines =
            machine::load_machines(text(path, "path")?).map_err(fail(ImpactStatus::Parse))?;
        *out = Box::into_raw(Box::new(ImpactMachineSet { machines }));
        Ok(())
    })
}

/// Number of machines in the set, or 0 for a null handle.
///
/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn impact_machines_count(set: *const ImpactMachineSet) -> usize {
    set.as_ref().map_or(0, |s| s.machines.len())
}

/// # Safety
/// `set` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn impact_machines_free(set: *mut ImpactMachineSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Creates an empty intensity collection.
#[no_mangle]
pub extern "C" fn impact_intensity_new() -> *mut ImpactIntensity {
    Box::into_raw(Box::new(ImpactIntensity {
        book: IntensityBook::new(),
    }))
}

/// Adds a series loaded from an hourly intensity file, replacing any series
/// for the same region.
///
/// # Safety
/// `book` must be a live handle and `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn impact_intensity_load(
    book: *mut ImpactIntensity,
    path: *const c_char,
) -> ImpactStatus {
    guard(|| {
        let book = deref_mut(book, "book")?;
        let series =
            CarbonIntensitySeries::load(text(path, "path")?).map_err(fail(ImpactStatus::Parse))?;
        book.book.insert(series);
        Ok(())
    })
}

/// Adds a flat series of `hours` hourly values starting at `start` (epoch
/// seconds, hour aligned).
///
/// # Safety
/// `book` must be a live handle and `region` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn impact_intensity_add_constant(
    book: *mut ImpactIntensity,
    region: *const c_char,
    start: i64,
    hours: usize,
    g_per_kwh: f64,
) -> ImpactStatus {
    guard(|| {
        let book = deref_mut(book, "book")?;
        let series =
            CarbonIntensitySeries::new(text(region, "region")?, start, vec![g_per_kwh; hours])
                .map_err(fail(ImpactStatus::InvalidArgument))?;
        book.book.insert(series);
        Ok(())
    })
}

/// # Safety
/// `book` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn impact_intensity_free(book: *mut ImpactIntensity) {
    if !book.is_null() {
        drop(Box::from_raw(book));
    }
}

/// Default parameters: beta 1, annual rate 0.4, intensity at start.
#[no_mangle]
pub extern "C" fn impact_params_default() -> ImpactParams {
    let p = AccountingParams::default();
    ImpactParams {
        beta: p.beta,
        annual_rate: p.annual_rate,
        integrated: p.mode == IntensityMode::Integrated,
    }
}

/// Prices one execution on `machine_id` under `method`. `intensity` may be
/// null except for CBA; `params` may be null for the defaults.
///
/// # Safety
/// Pointers must be null where allowed or valid otherwise.
#[no_mangle]
pub unsafe extern "C" fn impact_quote(
    machines: *const ImpactMachineSet,
    machine_id: *const c_char,
    method: ImpactMethod,
    exec: *const ImpactExecution,
    intensity: *const ImpactIntensity,
    params: *const ImpactParams,
    out: *mut ImpactQuote,
) -> ImpactStatus {
    guard(|| {
        let set = deref(machines, "machines")?;
        let id = MachineId::new(text(machine_id, "machine_id")?);
        let exec = deref(exec, "exec")?;
        let out = deref_mut(out, "out")?;
        let m = machine::find(&set.machines, &id)
            .ok_or_else(|| Failure(ImpactStatus::NotFound, format!("unknown machine `{id}`")))?;
        let params = match params.as_ref() {
            None => AccountingParams::default(),
            Some(p) => AccountingParams {
                beta: p.beta,
                annual_rate: p.annual_rate,
                mode: if p.integrated {
                    IntensityMode::Integrated
                } else {
                    IntensityMode::AtStart
                },
            },
        };
        let ci = match intensity.as_ref() {
            Some(b) => Some(
                b.book
                    .get(&m.region_id)
                    .map_err(fail(ImpactStatus::NotFound))?,
            ),
            None => None,
        };
        let execution = Execution {
            job_id: "ffi".into(),
            machine_id: id,
            duration_s: exec.duration_s,
            energy_j: exec.energy_j,
            cores_used: exec.cores_used,
            start_time: exec.start_time,
        };
        let method = Method::from(method);
        let q = accounting::quote(method, &execution, m, ci, &params)
            .map_err(fail(ImpactStatus::Accounting))?;
        let part = |k: &str| q.breakdown.get(k).copied().unwrap_or(0.0);
        *out = match method {
            Method::Eba => ImpactQuote {
                amount: q.amount,
                part_a: part("measured"),
                part_b: part("potential"),
            },
            Method::Cba => ImpactQuote {
                amount: q.amount,
                part_a: part("operational_g"),
                part_b: part("embodied_g"),
            },
            _ => ImpactQuote {
                amount: q.amount,
                ..ImpactQuote::default()
            },
        };
        Ok(())
    })
}

/// Whole-machine embodied carbon attributed per hour (g/h) during
/// machine-year `age` under accelerated depreciation.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn impact_hourly_carbon_rate(
    total_embodied_g: f64,
    annual_rate: f64,
    age: i64,
    out: *mut f64,
) -> ImpactStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = DepreciationSchedule::accelerated(total_embodied_g)
            .with_rate(annual_rate)
            .hourly_carbon_rate(age)
            .map_err(fail(ImpactStatus::InvalidArgument))?;
        Ok(())
    })
}

/// Same as [`impact_hourly_carbon_rate`] for straight-line depreciation.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn impact_linear_hourly_carbon_rate(
    total_embodied_g: f64,
    lifetime_years: u32,
    age: i64,
    out: *mut f64,
) -> ImpactStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = DepreciationSchedule::linear(total_embodied_g)
            .with_lifetime(lifetime_years)
            .hourly_carbon_rate(age)
            .map_err(fail(ImpactStatus::InvalidArgument))?;
        Ok(())
    })
}

/// Accelerated-to-linear rate ratio at `age`.
#[no_mangle]
pub extern "C" fn impact_accelerated_to_linear_ratio(
    annual_rate: f64,
    lifetime_years: u32,
    age: i32,
) -> f64 {
    carbon::accelerated_to_linear_ratio(annual_rate, lifetime_years, age)
}
