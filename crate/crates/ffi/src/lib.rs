//! C interface: opaque handles for configurations, media, data series and ROMs.
//!
//! Every fallible function returns a `WromStatus`; on failure the message is available from
//! `wrom_last_error` on the calling thread. Handles are released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DMatrix;
use wrom_core::assess::assess;
use wrom_core::config::Config;
use wrom_core::data::DataSeries;
use wrom_core::grid::{Grid2D, Medium};
use wrom_core::rom::{build_rom, verify_data_fit, RomPair};
use wrom_core::Error;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WromStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Numerical = 3,
    Factorization = 4,
    Divergence = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Parsed configuration.
pub struct WromConfig(Config);

/// Wave-speed field on a grid.
pub struct WromMedium(Medium);

/// Data series `D_j`, `D̈_j`.
pub struct WromSeries(DataSeries);

/// Propagator and wave-operator ROMs.
pub struct WromRom(RomPair);

/// Matrices held by a `WromRom`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WromRomMatrix {
    Cholesky = 0,
    Propagator = 1,
    WaveOperator = 2,
    Mass = 3,
}

/// Relative data-fit errors of a ROM.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WromFitReport {
    pub family1: f64,
    pub family2: f64,
    pub propagated: f64,
    pub mass_residual: f64,
    pub truncation_rank: usize,
    pub dim: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

fn status_of(error: &Error) -> WromStatus {
    match error {
        Error::Io(_) => WromStatus::Io,
        Error::Divergence(_) => WromStatus::Divergence,
        e => match e.exit_code() {
            2 => WromStatus::InvalidInput,
            4 => WromStatus::Factorization,
            _ => WromStatus::Numerical,
        },
    }
}

enum Failure {
    Status(WromStatus, String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn null() -> Failure {
    Failure::Status(WromStatus::NullPointer, "null pointer argument".into())
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> WromStatus {
    let outcome = catch_unwind(AssertUnwindSafe(body)).unwrap_or_else(|_| {
        Err(Failure::Status(WromStatus::Panic, "internal panic".into()))
    });
    match outcome {
        Ok(()) => {
            set_last_error("");
            WromStatus::Ok
        }
        Err(Failure::Status(s, msg)) => {
            set_last_error(&msg);
            s
        }
        Err(Failure::Core(e)) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(null)
}

unsafe fn text<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Status(WromStatus::InvalidInput, "string is not UTF-8".into()))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null());
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn copy_out(values: &[f64], buf: *mut f64, len: usize) -> Result<(), Failure> {
    if buf.is_null() {
        return Err(null());
    }
    if len < values.len() {
        return Err(Failure::Status(
            WromStatus::BufferTooSmall,
            format!("buffer holds {len} values, need {}", values.len()),
        ));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
    Ok(())
}

/// Message of the last failure on this thread; empty after a success. Valid until the next call.
#[no_mangle]
pub extern "C" fn wrom_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn wrom_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Configuration from a named parameter set.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wrom_config_preset(name: *const c_char, out: *mut *mut WromConfig) -> WromStatus {
    guard(|| emit(out, WromConfig(Config::preset(text(name)?)?)))
}

/// Configuration parsed from INI text.
///
/// # Safety
/// `source` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wrom_config_parse(source: *const c_char, out: *mut *mut WromConfig) -> WromStatus {
    guard(|| emit(out, WromConfig(Config::parse(text(source)?)?)))
}

/// Applies an override `section.key=value`.
///
/// # Safety
/// `config` must come from this library and `assignment` be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn wrom_config_set(config: *mut WromConfig, assignment: *const c_char) -> WromStatus {
    guard(|| {
        let c = config.as_mut().ok_or_else(null)?;
        c.0.set_assignment(text(assignment)?)?;
        Ok(())
    })
}

/// # Safety
/// `config` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn wrom_config_free(config: *mut WromConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Medium described by a configuration.
///
/// # Safety
/// `config` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wrom_medium_from_config(config: *const WromConfig, out: *mut *mut WromMedium) -> WromStatus {
    guard(|| {
        let c = &borrow(config)?.0;
        let grid = c.grid()?;
        emit(out, WromMedium(c.medium(&grid)?))
    })
}

/// Medium from `nx·ny` speeds with flat index `ix·ny + iy`.
///
/// # Safety
/// `speed` must point to `nx·ny` values and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wrom_medium_new(
    nx: usize,
    ny: usize,
    h: f64,
    c_ref: f64,
    speed: *const f64,
    out: *mut *mut WromMedium,
) -> WromStatus {
    guard(|| {
        if speed.is_null() {
            return Err(null());
        }
        let grid = Grid2D::new(nx, ny, h, (0.0, 0.0))?;
        let values = std::slice::from_raw_parts(speed, grid.len()).to_vec();
        emit(out, WromMedium(Medium::new(grid, values, c_ref)?))
    })
}

/// Grid size of a medium.
///
/// # Safety
/// `medium` must come from this library; `nx` and `ny` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn wrom_medium_dims(medium: *const WromMedium, nx: *mut usize, ny: *mut usize) -> WromStatus {
    guard(|| {
        let g = borrow(medium)?.0.grid();
        if nx.is_null() || ny.is_null() {
            return Err(null());
        }
        *nx = g.nx;
        *ny = g.ny;
        Ok(())
    })
}

/// Copies the speeds, flat index `ix·ny + iy`, into `buf`.
///
/// # Safety
/// `medium` must come from this library and `buf` hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn wrom_medium_speed(medium: *const WromMedium, buf: *mut f64, len: usize) -> WromStatus {
    guard(|| copy_out(borrow(medium)?.0.speed(), buf, len))
}

/// # Safety
/// `medium` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn wrom_medium_free(medium: *mut WromMedium) {
    if !medium.is_null() {
        drop(Box::from_raw(medium));
    }
}

/// Correlation of two media over the configured inversion region.
///
/// # Safety
/// All handles must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wrom_assess(
    config: *const WromConfig,
    truth: *const WromMedium,
    estimate: *const WromMedium,
    out: *mut f64,
) -> WromStatus {
    guard(|| {
        let region = borrow(config)?.0.region()?;
        let value = assess(&borrow(truth)?.0, &borrow(estimate)?.0, &region)?;
        *out.as_mut().ok_or_else(null)? = value;
        Ok(())
    })
}

/// Simulates the configured acquisition in `medium` and returns its data series.
///
/// # Safety
/// Handles must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wrom_series_simulate(
    config: *const WromConfig,
    medium: *const WromMedium,
    out: *mut *mut WromSeries,
) -> WromStatus {
    guard(|| {
        let medium = &borrow(medium)?.0;
        let acq = borrow(config)?.0.acquisition(medium.grid())?;
        let record = acq.simulate(medium, acq.n)?;
        emit(out, WromSeries(acq.series(&record, acq.n)?))
    })
}

/// Series from `2n` column-major `m × m` matrices stored back to back in `d` and `ddot`.
///
/// # Safety
/// `d` and `ddot` must each point to `2n·m·m` values and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wrom_series_new(
    m: usize,
    n: usize,
    tau: f64,
    d: *const f64,
    ddot: *const f64,
    out: *mut *mut WromSeries,
) -> WromStatus {
    guard(|| {
        if d.is_null() || ddot.is_null() {
            return Err(null());
        }
        let size = m * m;
        let split = |p: *const f64| -> Vec<DMatrix<f64>> {
            let all = std::slice::from_raw_parts(p, 2 * n * size);
            all.chunks(size.max(1))
                .take(2 * n)
                .map(|c| DMatrix::from_column_slice(m, m, &c[..size]))
                .collect()
        };
        emit(out, WromSeries(DataSeries::new(split(d), split(ddot), tau)?))
    })
}

/// Array size `m` and ROM order `n` of a series.
///
/// # Safety
/// `series` must come from this library; `m` and `n` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn wrom_series_dims(series: *const WromSeries, m: *mut usize, n: *mut usize) -> WromStatus {
    guard(|| {
        let s = &borrow(series)?.0;
        if m.is_null() || n.is_null() {
            return Err(null());
        }
        *m = s.m();
        *n = s.n();
        Ok(())
    })
}

/// Copies `D_j` (or `D̈_j` when `second` is nonzero), column-major, into `buf`.
///
/// # Safety
/// `series` must come from this library and `buf` hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn wrom_series_matrix(
    series: *const WromSeries,
    j: usize,
    second: i32,
    buf: *mut f64,
    len: usize,
) -> WromStatus {
    guard(|| {
        let s = &borrow(series)?.0;
        let list = if second != 0 { s.ddot() } else { s.d() };
        let mat = list.get(j).ok_or_else(|| {
            Failure::Core(Error::IndexRange {
                index: j,
                max: list.len() - 1,
            })
        })?;
        copy_out(mat.as_slice(), buf, len)
    })
}

/// # Safety
/// `series` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn wrom_series_free(series: *mut WromSeries) {
    if !series.is_null() {
        drop(Box::from_raw(series));
    }
}

/// Builds the ROM pair; `trunc_tol` is the relative mass-matrix eigenvalue floor.
///
/// # Safety
/// `series` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wrom_rom_build(series: *const WromSeries, trunc_tol: f64, out: *mut *mut WromRom) -> WromStatus {
    guard(|| emit(out, WromRom(build_rom(&borrow(series)?.0, trunc_tol)?)))
}

/// Side length `n·m` of the ROM matrices.
///
/// # Safety
/// `rom` must come from this library and `dim` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wrom_rom_dim(rom: *const WromRom, dim: *mut usize) -> WromStatus {
    guard(|| {
        let r = &borrow(rom)?.0;
        *dim.as_mut().ok_or_else(null)? = r.mass.dim();
        Ok(())
    })
}

/// Copies one ROM matrix, column-major, into `buf`.
///
/// # Safety
/// `rom` must come from this library and `buf` hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn wrom_rom_matrix(
    rom: *const WromRom,
    which: WromRomMatrix,
    buf: *mut f64,
    len: usize,
) -> WromStatus {
    guard(|| {
        let r = &borrow(rom)?.0;
        let mat = match which {
            WromRomMatrix::Cholesky => r.r(),
            WromRomMatrix::Propagator => &r.p_rom,
            WromRomMatrix::WaveOperator => &r.a_rom,
            WromRomMatrix::Mass => &r.mass,
        };
        copy_out(mat.matrix().as_slice(), buf, len)
    })
}

/// Data-fit errors of a ROM against the series it was built from.
///
/// # Safety
/// Handles must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wrom_rom_fit(
    rom: *const WromRom,
    series: *const WromSeries,
    out: *mut WromFitReport,
) -> WromStatus {
    guard(|| {
        let (r, s) = (&borrow(rom)?.0, &borrow(series)?.0);
        if r.n() != s.n() || r.m() != s.m() {
            return Err(Error::DimensionMismatch("ROM and series differ in size".into()).into());
        }
        let f = verify_data_fit(r, s);
        *out.as_mut().ok_or_else(null)? = WromFitReport {
            family1: f.family1,
            family2: f.family2,
            propagated: f.propagated,
            mass_residual: f.mass_residual,
            truncation_rank: f.truncation_rank,
            dim: f.dim,
        };
        Ok(())
    })
}

/// # Safety
/// `rom` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn wrom_rom_free(rom: *mut WromRom) {
    if !rom.is_null() {
        drop(Box::from_raw(rom));
    }
}
