//! C ABI over the `nearstab` solver.
//!
//! Matrices and results are opaque handles released with their `_free`
//! function. Fallible calls return an [`NsStatus`]; the message for the most
//! recent failure on the calling thread is available from [`ns_last_error`].
//! Dense arrays are column-major with separate real and imaginary parts.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nearstab::cli::{load_matrix, resolve_structure, StructureArg};
use nearstab::faer::{c64, Mat, MatRef};
use nearstab::gallery::{self, GalleryEntry, Provenance};
use nearstab::inner::{inner_iteration, ConvergedReason, InnerParams, InnerResult, RankMode};
use nearstab::outer::{outer_iteration, OuterParams, OuterResult};
use nearstab::{FunctionalKind, StabConfig, StabError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Solver = 4,
    Unstabilizable = 5,
    Structure = 6,
    Io = 7,
    Parse = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NsFunctional {
    F = 0,
    Hermite = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NsStructure {
    None = 0,
    Pattern = 1,
    Toeplitz = 2,
    Real = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NsInnerReason {
    FunctionalZero = 0,
    Stationary = 1,
    Maxit = 2,
    Stalled = 3,
}

/// Solver options; fill with [`ns_options_default`] before changing fields.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct NsOptions {
    pub delta: f64,
    /// Hermite blend end; values `<= delta` select `2 delta`.
    pub delta2: f64,
    pub functional: NsFunctional,
    pub structure: NsStructure,
    /// 0 selects the adaptive rank.
    pub fixed_rank: usize,
    pub tau_rank: f64,
    pub tol_inner: f64,
    pub maxit_inner: usize,
    pub h0: f64,
    pub watchdog: usize,
    pub tol_outer: f64,
    pub maxit_outer: usize,
    /// Non-positive values select the defaults.
    pub eps0: f64,
    pub eps_max: f64,
}

pub struct NsMatrix {
    entry: GalleryEntry,
}

pub struct NsInnerResult {
    result: InnerResult,
}

pub struct NsOuterResult {
    result: OuterResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(NsStatus, String);

impl From<StabError> for Failure {
    fn from(e: StabError) -> Self {
        let status = match &e {
            StabError::NotSquare { .. } | StabError::Dimension { .. } => NsStatus::Dimension,
            StabError::Precondition(_) => NsStatus::InvalidArgument,
            StabError::Unstabilizable { .. } => NsStatus::Unstabilizable,
            StabError::StructureMismatch(_) => NsStatus::Structure,
            StabError::Io(_) => NsStatus::Io,
            StabError::MatrixMarket(_) => NsStatus::Parse,
            _ => NsStatus::Solver,
        };
        Failure(status, e.to_string())
    }
}

fn fail<T>(status: NsStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

/// Run `f`, mapping errors and panics to a status and the thread's message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            NsStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: the caller passes either null or a live handle from this library
    unsafe { p.as_ref() }.ok_or_else(|| Failure(NsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(NsStatus::NullPointer, format!("{what} is null"));
    }
    // SAFETY: non-null and NUL-terminated per the API contract
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .or_else(|_| fail(NsStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return fail(NsStatus::NullPointer, "output pointer is null");
    }
    // SAFETY: out is non-null and writable per the API contract
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

unsafe fn write_matrix(m: MatRef<'_, c64>, re: *mut f64, im: *mut f64, len: usize) -> Result<(), Failure> {
    let need = m.nrows() * m.ncols();
    if re.is_null() {
        return fail(NsStatus::NullPointer, "output array is null");
    }
    if len < need {
        return fail(
            NsStatus::BufferTooSmall,
            format!("buffer holds {len} values, need {need}"),
        );
    }
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let k = j * m.nrows() + i;
            // SAFETY: k < need <= len, and both arrays hold len values
            unsafe {
                *re.add(k) = m[(i, j)].re;
                if !im.is_null() {
                    *im.add(k) = m[(i, j)].im;
                }
            }
        }
    }
    Ok(())
}

unsafe fn write_values(v: &[c64], re: *mut f64, im: *mut f64, len: usize) -> Result<(), Failure> {
    if re.is_null() || im.is_null() {
        return fail(NsStatus::NullPointer, "output array is null");
    }
    if len < v.len() {
        return fail(
            NsStatus::BufferTooSmall,
            format!("buffer holds {len} values, need {}", v.len()),
        );
    }
    for (k, z) in v.iter().enumerate() {
        // SAFETY: k < v.len() <= len
        unsafe {
            *re.add(k) = z.re;
            *im.add(k) = z.im;
        }
    }
    Ok(())
}

fn solver_params(o: &NsOptions) -> (StabConfig, InnerParams) {
    let cfg = StabConfig {
        delta: o.delta,
        delta1: o.delta,
        delta2: if o.delta2 > o.delta { o.delta2 } else { 2.0 * o.delta },
    };
    let params = InnerParams {
        tol_inner: o.tol_inner,
        maxit: o.maxit_inner,
        tau_rank: o.tau_rank,
        h0: o.h0,
        functional: match o.functional {
            NsFunctional::F => FunctionalKind::F,
            NsFunctional::Hermite => FunctionalKind::Hermite,
        },
        rank_mode: match o.fixed_rank {
            0 => RankMode::Adaptive,
            r => RankMode::Fixed(r),
        },
        watchdog: o.watchdog,
        ..Default::default()
    };
    (cfg, params)
}

fn structure_arg(s: NsStructure) -> StructureArg {
    match s {
        NsStructure::None => StructureArg::None,
        NsStructure::Pattern => StructureArg::Pattern,
        NsStructure::Toeplitz => StructureArg::Toeplitz,
        NsStructure::Real => StructureArg::Real,
    }
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ns_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ns_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn ns_options_default() -> NsOptions {
    let cfg = StabConfig::default();
    let inner = InnerParams::default();
    let outer = OuterParams::default();
    NsOptions {
        delta: cfg.delta,
        delta2: cfg.delta2,
        functional: NsFunctional::F,
        structure: NsStructure::None,
        fixed_rank: 0,
        tau_rank: inner.tau_rank,
        tol_inner: inner.tol_inner,
        maxit_inner: inner.maxit,
        h0: inner.h0,
        watchdog: inner.watchdog,
        tol_outer: outer.tol_outer,
        maxit_outer: outer.maxit,
        eps0: 0.0,
        eps_max: 0.0,
    }
}

/// Build an `n x n` matrix from column-major parts; `im` may be null.
///
/// # Safety
/// `re` (and `im` when non-null) must point to `n * n` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn ns_matrix_new(n: usize, re: *const f64, im: *const f64, out: *mut *mut NsMatrix) -> NsStatus {
    guard(|| {
        if re.is_null() {
            return fail(NsStatus::NullPointer, "re is null");
        }
        if n == 0 {
            return fail(NsStatus::Dimension, "matrix dimension must be positive");
        }
        let matrix = Mat::from_fn(n, n, |i, j| {
            let k = j * n + i;
            // SAFETY: k < n * n, guaranteed readable by the caller
            unsafe { c64::new(*re.add(k), if im.is_null() { 0.0 } else { *im.add(k) }) }
        });
        let entry = GalleryEntry {
            name: "user".into(),
            matrix,
            default_structure: None,
            provenance: Provenance::ExternalFile,
        };
        unsafe { put(out, NsMatrix { entry }) }
    })
}

/// Named test matrix; `n == 0` keeps the family's default size.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ns_matrix_gallery(
    name: *const c_char,
    n: usize,
    seed: u64,
    out: *mut *mut NsMatrix,
) -> NsStatus {
    guard(|| {
        let name = unsafe { c_str(name, "name") }?;
        let entry = gallery::by_name(name, (n > 0).then_some(n), seed)?;
        unsafe { put(out, NsMatrix { entry }) }
    })
}

/// Read a Matrix Market file; its stored pattern becomes the sparsity structure.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ns_matrix_read_mtx(path: *const c_char, out: *mut *mut NsMatrix) -> NsStatus {
    guard(|| {
        let path = unsafe { c_str(path, "path") }?;
        let entry = load_matrix(&format!("mm:{path}"), None, 0, 0.0)?;
        unsafe { put(out, NsMatrix { entry }) }
    })
}

/// Replace the matrix by `A - sigma I`.
///
/// # Safety
/// `m` must be null or a live matrix handle.
#[no_mangle]
pub unsafe extern "C" fn ns_matrix_shift(m: *mut NsMatrix, sigma: f64) -> NsStatus {
    guard(|| {
        // SAFETY: null or a live handle
        let Some(m) = (unsafe { m.as_mut() }) else {
            return fail(NsStatus::NullPointer, "matrix is null");
        };
        m.entry.matrix = gallery::shift(m.entry.matrix.as_ref(), sigma);
        Ok(())
    })
}

/// Dimension of the matrix, 0 for null.
///
/// # Safety
/// `m` must be null or a live matrix handle.
#[no_mangle]
pub unsafe extern "C" fn ns_matrix_dim(m: *const NsMatrix) -> usize {
    unsafe { m.as_ref() }.map_or(0, |m| m.entry.matrix.nrows())
}

/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ns_matrix_free(m: *mut NsMatrix) {
    if !m.is_null() {
        // SAFETY: created by Box::into_raw in this library
        drop(unsafe { Box::from_raw(m) });
    }
}

/// Minimize the functional at size `eps`.
///
/// # Safety
/// `a` and `opts` must be live, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ns_inner(
    a: *const NsMatrix,
    eps: f64,
    opts: *const NsOptions,
    out: *mut *mut NsInnerResult,
) -> NsStatus {
    guard(|| {
        let a = unsafe { deref(a, "matrix") }?;
        let opts = unsafe { deref(opts, "options") }?;
        let (cfg, params) = solver_params(opts);
        let structure = resolve_structure(structure_arg(opts.structure), &a.entry)?;
        let result = inner_iteration(a.entry.matrix.as_ref(), eps, None, &cfg, &params, structure.as_ref())?;
        unsafe { put(out, NsInnerResult { result }) }
    })
}

/// # Safety
/// `r` must be null or a live inner result.
#[no_mangle]
pub unsafe extern "C" fn ns_inner_value(r: *const NsInnerResult) -> f64 {
    unsafe { r.as_ref() }.map_or(f64::NAN, |r| r.result.value)
}

/// # Safety
/// `r` must be null or a live inner result.
#[no_mangle]
pub unsafe extern "C" fn ns_inner_rank(r: *const NsInnerResult) -> usize {
    unsafe { r.as_ref() }.map_or(0, |r| r.result.rank())
}

/// # Safety
/// `r` must be null or a live inner result.
#[no_mangle]
pub unsafe extern "C" fn ns_inner_max_rank(r: *const NsInnerResult) -> usize {
    unsafe { r.as_ref() }.map_or(0, |r| r.result.max_rank)
}

/// # Safety
/// `r` must be null or a live inner result.
#[no_mangle]
pub unsafe extern "C" fn ns_inner_iterations(r: *const NsInnerResult) -> usize {
    unsafe { r.as_ref() }.map_or(0, |r| r.result.iterations)
}

/// # Safety
/// `r` must be a live inner result.
#[no_mangle]
pub unsafe extern "C" fn ns_inner_reason(r: *const NsInnerResult, reason: *mut NsInnerReason) -> NsStatus {
    guard(|| {
        let r = unsafe { deref(r, "result") }?;
        if reason.is_null() {
            return fail(NsStatus::NullPointer, "reason is null");
        }
        let v = match r.result.converged_reason {
            ConvergedReason::FunctionalZero => NsInnerReason::FunctionalZero,
            ConvergedReason::Stationary => NsInnerReason::Stationary,
            ConvergedReason::Maxit => NsInnerReason::Maxit,
            ConvergedReason::Stalled => NsInnerReason::Stalled,
        };
        // SAFETY: non-null and writable
        unsafe { *reason = v };
        Ok(())
    })
}

/// Copy the unit perturbation `E*` (`n * n` values per part; `im` may be null).
///
/// # Safety
/// `re` and `im` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ns_inner_perturbation(
    r: *const NsInnerResult,
    re: *mut f64,
    im: *mut f64,
    len: usize,
) -> NsStatus {
    guard(|| {
        let r = unsafe { deref(r, "result") }?;
        unsafe { write_matrix(r.result.e.as_ref(), re, im, len) }
    })
}

/// # Safety
/// `r` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ns_inner_free(r: *mut NsInnerResult) {
    if !r.is_null() {
        // SAFETY: created by Box::into_raw in this library
        drop(unsafe { Box::from_raw(r) });
    }
}

/// Find the smallest stabilizing size and its perturbation.
///
/// # Safety
/// `a` and `opts` must be live, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ns_stabilize(
    a: *const NsMatrix,
    opts: *const NsOptions,
    out: *mut *mut NsOuterResult,
) -> NsStatus {
    guard(|| {
        let a = unsafe { deref(a, "matrix") }?;
        let opts = unsafe { deref(opts, "options") }?;
        let (cfg, params) = solver_params(opts);
        let structure = resolve_structure(structure_arg(opts.structure), &a.entry)?;
        let outer = OuterParams {
            tol_outer: opts.tol_outer,
            maxit: opts.maxit_outer,
            eps0: (opts.eps0 > 0.0).then_some(opts.eps0),
            eps_max: (opts.eps_max > 0.0).then_some(opts.eps_max),
        };
        let result = outer_iteration(a.entry.matrix.as_ref(), &cfg, &params, &outer, structure.as_ref())?;
        unsafe { put(out, NsOuterResult { result }) }
    })
}

/// # Safety
/// `r` must be null or a live outer result.
#[no_mangle]
pub unsafe extern "C" fn ns_outer_eps_star(r: *const NsOuterResult) -> f64 {
    unsafe { r.as_ref() }.map_or(f64::NAN, |r| r.result.eps_star)
}

/// # Safety
/// `r` must be null or a live outer result.
#[no_mangle]
pub unsafe extern "C" fn ns_outer_rank(r: *const NsOuterResult) -> usize {
    unsafe { r.as_ref() }.map_or(0, |r| r.result.rank_at_star)
}

/// # Safety
/// `r` must be null or a live outer result.
#[no_mangle]
pub unsafe extern "C" fn ns_outer_final_value(r: *const NsOuterResult) -> f64 {
    unsafe { r.as_ref() }.map_or(f64::NAN, |r| r.result.final_value)
}

/// Number of recorded size evaluations.
///
/// # Safety
/// `r` must be null or a live outer result.
#[no_mangle]
pub unsafe extern "C" fn ns_outer_history_len(r: *const NsOuterResult) -> usize {
    unsafe { r.as_ref() }.map_or(0, |r| r.result.history.len())
}

/// 1 when both certificates hold, 0 otherwise (including null).
///
/// # Safety
/// `r` must be null or a live outer result.
#[no_mangle]
pub unsafe extern "C" fn ns_outer_certified(r: *const NsOuterResult) -> i32 {
    unsafe { r.as_ref() }.map_or(0, |r| i32::from(r.result.certificate.passed()))
}

/// Copy `Delta = eps* E*` (`n * n` values per part; `im` may be null).
///
/// # Safety
/// `re` and `im` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ns_outer_delta(r: *const NsOuterResult, re: *mut f64, im: *mut f64, len: usize) -> NsStatus {
    guard(|| {
        let r = unsafe { deref(r, "result") }?;
        unsafe { write_matrix(r.result.delta().as_ref(), re, im, len) }
    })
}

/// Copy the `n` eigenvalues of `A + Delta`, sorted by descending real part.
///
/// # Safety
/// `re` and `im` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ns_outer_eigenvalues(
    r: *const NsOuterResult,
    re: *mut f64,
    im: *mut f64,
    len: usize,
) -> NsStatus {
    guard(|| {
        let r = unsafe { deref(r, "result") }?;
        unsafe { write_values(&r.result.stabilized_eigenvalues, re, im, len) }
    })
}

/// # Safety
/// `r` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ns_outer_free(r: *mut NsOuterResult) {
    if !r.is_null() {
        // SAFETY: created by Box::into_raw in this library
        drop(unsafe { Box::from_raw(r) });
    }
}
