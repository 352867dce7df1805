//! C ABI for the sbpgreen library: opaque handles, status codes, and
//! copy-out accessors. The generated header lives at
//! `include/sbpgreen.h`.
//!
//! Every constructor returns a status and writes the handle through an
//! out-pointer; handles are freed with their matching `_free` function.
//! On failure, `sbpg_last_error_message` describes the most recent
//! error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sbpgreen::borrowing;
use sbpgreen::error::Error;
use sbpgreen::green_first::{invert_general_first, GreenFirst};
use sbpgreen::green_second::{invert_general_second, singularity_check, xi_scalars, GreenSecond};
use sbpgreen::grid::Grid;
use sbpgreen::matrix::DenseMatrix;
use sbpgreen::operators::{
    build_first, build_second, verify_first, verify_second, FirstVariant, SbpFirstOp,
    SbpSecondOp, SecondVariant,
};
use sbpgreen::sat::{assemble_first, assemble_second, SatFirst, SatSecond};

/// Status codes mirroring the CLI exit codes.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum SbpgStatus {
    Ok = 0,
    /// A verification failed or a numerical guarantee was not met.
    Verify = 1,
    /// Invalid arguments (unknown variant, grid too small, null pointer).
    Usage = 2,
    /// The requested system is singular.
    Singular = 3,
    /// An internal panic was caught at the boundary.
    Panic = 4,
}

/// Which singularity condition fired, for `sbpg_second_singularity`.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum SbpgCondition {
    None = 0,
    BoundaryConditions = 1,
    Penalty = 2,
}

/// Robin penalty parameters for the heat scheme; plain data, passed by
/// value.
#[repr(C)]
#[derive(Clone, Copy)]
pub struct SbpgSatSecond {
    pub sigma_l: f64,
    pub sigma_r: f64,
    pub tau_l: f64,
    pub tau_r: f64,
    pub alpha_l: f64,
    pub alpha_r: f64,
    pub beta_l: f64,
    pub beta_r: f64,
}

impl From<SbpgSatSecond> for SatSecond {
    fn from(s: SbpgSatSecond) -> Self {
        SatSecond {
            sigma_l: s.sigma_l,
            sigma_r: s.sigma_r,
            tau_l: s.tau_l,
            tau_r: s.tau_r,
            alpha_l: s.alpha_l,
            alpha_r: s.alpha_r,
            beta_l: s.beta_l,
            beta_r: s.beta_r,
        }
    }
}

impl From<SatSecond> for SbpgSatSecond {
    fn from(s: SatSecond) -> Self {
        SbpgSatSecond {
            sigma_l: s.sigma_l,
            sigma_r: s.sigma_r,
            tau_l: s.tau_l,
            tau_r: s.tau_r,
            alpha_l: s.alpha_l,
            alpha_r: s.alpha_r,
            beta_l: s.beta_l,
            beta_r: s.beta_r,
        }
    }
}

/// Opaque first-derivative bundle.
pub struct SbpgFirstOp {
    op: SbpFirstOp,
}

/// Opaque second-derivative bundle.
pub struct SbpgSecondOp {
    op: SbpSecondOp,
}

/// Opaque advection inverse.
pub struct SbpgGreenFirst {
    green: GreenFirst,
    residual: f64,
}

/// Opaque heat inverse.
pub struct SbpgGreenSecond {
    green: GreenSecond,
    residual: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap();
    });
}

fn status_for(err: &Error) -> SbpgStatus {
    match err {
        Error::SingularMatrix { .. }
        | Error::SingularPenalty
        | Error::SingularQbar
        | Error::SingularAbar
        | Error::SingularSigma { .. }
        | Error::SingularSystem => SbpgStatus::Singular,
        Error::GridTooSmall { .. }
        | Error::InvalidArgument(_)
        | Error::InvalidCoefficients(_)
        | Error::OddN { .. }
        | Error::NotWideStencil
        | Error::DegenerateBc => SbpgStatus::Usage,
        _ => SbpgStatus::Verify,
    }
}

fn fail(err: &Error) -> SbpgStatus {
    set_error(&err.to_string());
    status_for(err)
}

fn usage(msg: &str) -> SbpgStatus {
    set_error(msg);
    SbpgStatus::Usage
}

/// Runs a closure, converting panics into `SbpgStatus::Panic`.
fn guarded(f: impl FnOnce() -> SbpgStatus) -> SbpgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            SbpgStatus::Panic
        }
    }
}

/// # Safety
/// The returned pointer refers to thread-local storage that stays
/// valid until the next failing call on the same thread. Do not free.
#[no_mangle]
pub unsafe extern "C" fn sbpg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn sbpg_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

unsafe fn parse_variant_str<'a>(variant: *const c_char) -> Option<&'a str> {
    if variant.is_null() {
        return None;
    }
    CStr::from_ptr(variant).to_str().ok()
}

/// Builds a first-derivative bundle (`d1_21` or `d1_42`).
///
/// # Safety
/// `variant` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sbpg_first_build(
    variant: *const c_char,
    n: usize,
    ell: f64,
    out: *mut *mut SbpgFirstOp,
) -> SbpgStatus {
    if out.is_null() {
        return usage("out pointer is null");
    }
    let Some(name) = parse_variant_str(variant) else {
        return usage("variant must be a valid string");
    };
    let v = match name {
        "d1_21" | "d121" => FirstVariant::D121,
        "d1_42" | "d142" => FirstVariant::D142,
        _ => return usage("unknown first-derivative variant"),
    };
    guarded(|| {
        let grid = match Grid::new(n, ell) {
            Ok(g) => g,
            Err(e) => return fail(&e),
        };
        match build_first(v, &grid) {
            Ok(op) => {
                *out = Box::into_raw(Box::new(SbpgFirstOp { op }));
                SbpgStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `op` must come from `sbpg_first_build` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sbpg_first_free(op: *mut SbpgFirstOp) {
    if !op.is_null() {
        drop(Box::from_raw(op));
    }
}

/// Verifies the SBP identities; returns Ok when all residuals pass.
///
/// # Safety
/// `op` must be a live handle; `max_residual` may be null.
#[no_mangle]
pub unsafe extern "C" fn sbpg_first_verify(
    op: *const SbpgFirstOp,
    max_residual: *mut f64,
) -> SbpgStatus {
    if op.is_null() {
        return usage("op handle is null");
    }
    guarded(|| {
        let report = verify_first(&(*op).op);
        if !max_residual.is_null() {
            *max_residual = report.max_residual();
        }
        if report.all_ok() {
            SbpgStatus::Ok
        } else {
            set_error("summation-by-parts identities violated");
            SbpgStatus::Verify
        }
    })
}

/// Inverts the penalized advection matrix for a given inflow penalty.
///
/// # Safety
/// `op` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sbpg_first_invert(
    op: *const SbpgFirstOp,
    sigma_l: f64,
    out: *mut *mut SbpgGreenFirst,
) -> SbpgStatus {
    if op.is_null() || out.is_null() {
        return usage("null pointer");
    }
    guarded(|| {
        let sys = assemble_first(&(*op).op, SatFirst::new(sigma_l));
        match invert_general_first(&sys) {
            Ok(green) => {
                let residual = green.residual(&sys.k);
                *out = Box::into_raw(Box::new(SbpgGreenFirst { green, residual }));
                SbpgStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `green` must come from `sbpg_first_invert` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sbpg_green_first_free(green: *mut SbpgGreenFirst) {
    if !green.is_null() {
        drop(Box::from_raw(green));
    }
}

/// Matrix order (n + 1) of the stored inverse.
///
/// # Safety
/// `green` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sbpg_green_first_dim(green: *const SbpgGreenFirst) -> usize {
    if green.is_null() {
        0
    } else {
        (*green).green.kinv.rows()
    }
}

/// Round-trip residual of the stored inverse.
///
/// # Safety
/// `green` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sbpg_green_first_residual(green: *const SbpgGreenFirst) -> f64 {
    if green.is_null() {
        f64::NAN
    } else {
        (*green).residual
    }
}

unsafe fn copy_matrix(m: &DenseMatrix, buf: *mut f64, len: usize) -> SbpgStatus {
    let need = m.rows() * m.cols();
    if buf.is_null() || len < need {
        return usage("buffer too small");
    }
    ptr::copy_nonoverlapping(m.data().as_ptr(), buf, need);
    SbpgStatus::Ok
}

/// Copies the inverse row-major into `buf` (length >= (n+1)^2).
///
/// # Safety
/// `green` must be a live handle and `buf` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sbpg_green_first_kinv(
    green: *const SbpgGreenFirst,
    buf: *mut f64,
    len: usize,
) -> SbpgStatus {
    if green.is_null() {
        return usage("green handle is null");
    }
    guarded(|| copy_matrix(&(*green).green.kinv, buf, len))
}

/// Builds a second-derivative bundle (`n20`, `n21`, `n42`, `w20`).
///
/// # Safety
/// `variant` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sbpg_second_build(
    variant: *const c_char,
    n: usize,
    ell: f64,
    out: *mut *mut SbpgSecondOp,
) -> SbpgStatus {
    if out.is_null() {
        return usage("out pointer is null");
    }
    let Some(name) = parse_variant_str(variant) else {
        return usage("variant must be a valid string");
    };
    let v = match name {
        "n20" => SecondVariant::N20,
        "n21" => SecondVariant::N21,
        "n42" => SecondVariant::N42,
        "w20" => SecondVariant::W20,
        _ => return usage("unknown second-derivative variant"),
    };
    guarded(|| {
        let grid = match Grid::new(n, ell) {
            Ok(g) => g,
            Err(e) => return fail(&e),
        };
        match build_second(v, &grid) {
            Ok(op) => {
                *out = Box::into_raw(Box::new(SbpgSecondOp { op }));
                SbpgStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `op` must come from `sbpg_second_build` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sbpg_second_free(op: *mut SbpgSecondOp) {
    if !op.is_null() {
        drop(Box::from_raw(op));
    }
}

/// Verifies the SBP identities; returns Ok when all residuals pass.
///
/// # Safety
/// `op` must be a live handle; `max_residual` may be null.
#[no_mangle]
pub unsafe extern "C" fn sbpg_second_verify(
    op: *const SbpgSecondOp,
    max_residual: *mut f64,
) -> SbpgStatus {
    if op.is_null() {
        return usage("op handle is null");
    }
    guarded(|| {
        let report = verify_second(&(*op).op);
        if !max_residual.is_null() {
            *max_residual = report.max_residual();
        }
        if report.all_ok() {
            SbpgStatus::Ok
        } else {
            set_error("summation-by-parts identities violated");
            SbpgStatus::Verify
        }
    })
}

/// Boundary capacity scalars. `xi_t` is written as NaN when the
/// closures are not equivalent. Null out-pointers are skipped.
///
/// # Safety
/// `op` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sbpg_second_xi(
    op: *const SbpgSecondOp,
    xi_l: *mut f64,
    xi_r: *mut f64,
    xi_c: *mut f64,
    xi_t: *mut f64,
) -> SbpgStatus {
    if op.is_null() {
        return usage("op handle is null");
    }
    guarded(|| match xi_scalars(&(*op).op) {
        Ok(xi) => {
            if !xi_l.is_null() {
                *xi_l = xi.xi_l;
            }
            if !xi_r.is_null() {
                *xi_r = xi.xi_r;
            }
            if !xi_c.is_null() {
                *xi_c = xi.xi_c;
            }
            if !xi_t.is_null() {
                *xi_t = xi.total().unwrap_or(f64::NAN);
            }
            SbpgStatus::Ok
        }
        Err(e) => fail(&e),
    })
}

/// Maximal borrowing parameter gamma located by eigenvalue bisection.
///
/// # Safety
/// `op` must be a live handle; `gamma` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sbpg_second_gamma(
    op: *const SbpgSecondOp,
    gamma: *mut f64,
) -> SbpgStatus {
    if op.is_null() || gamma.is_null() {
        return usage("null pointer");
    }
    guarded(|| {
        *gamma = borrowing::borrow_gamma(&(*op).op).gamma;
        SbpgStatus::Ok
    })
}

/// Classifies a penalty choice: writes 1/0 to `singular` and the
/// firing condition.
///
/// # Safety
/// `op` must be a live handle; out-pointers may be null to skip.
#[no_mangle]
pub unsafe extern "C" fn sbpg_second_singularity(
    op: *const SbpgSecondOp,
    sat: SbpgSatSecond,
    singular: *mut i32,
    condition: *mut SbpgCondition,
) -> SbpgStatus {
    if op.is_null() {
        return usage("op handle is null");
    }
    guarded(|| {
        let xi = match xi_scalars(&(*op).op) {
            Ok(xi) => xi,
            Err(e) => return fail(&e),
        };
        let verdict = singularity_check(&sat.into(), &xi, (*op).op.grid.ell());
        if !singular.is_null() {
            *singular = verdict.singular as i32;
        }
        if !condition.is_null() {
            *condition = if verdict.bc_fires {
                SbpgCondition::BoundaryConditions
            } else if verdict.penalty_fires {
                SbpgCondition::Penalty
            } else {
                SbpgCondition::None
            };
        }
        SbpgStatus::Ok
    })
}

/// The penalty that is energy stable, dual consistent and singular:
/// `sigma = -xi_T/(beta xi_T + alpha)`, `tau = 1/(beta xi_T + alpha)`.
///
/// # Safety
/// `op` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sbpg_second_stable_singular_witness(
    op: *const SbpgSecondOp,
    alpha: f64,
    beta: f64,
    out: *mut SbpgSatSecond,
) -> SbpgStatus {
    if op.is_null() || out.is_null() {
        return usage("null pointer");
    }
    guarded(
        || match borrowing::stable_singular_witness(&(*op).op, alpha, beta) {
            Ok(sat) => {
                *out = sat.into();
                SbpgStatus::Ok
            }
            Err(e) => fail(&e),
        },
    )
}

/// Inverts the penalized heat matrix for a Robin penalty choice.
///
/// # Safety
/// `op` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sbpg_second_invert(
    op: *const SbpgSecondOp,
    sat: SbpgSatSecond,
    out: *mut *mut SbpgGreenSecond,
) -> SbpgStatus {
    if op.is_null() || out.is_null() {
        return usage("null pointer");
    }
    guarded(|| {
        let sys = assemble_second(&(*op).op, sat.into());
        match invert_general_second(&sys) {
            Ok(green) => {
                let residual = green.residual(&sys.k);
                *out = Box::into_raw(Box::new(SbpgGreenSecond { green, residual }));
                SbpgStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `green` must come from `sbpg_second_invert` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sbpg_green_second_free(green: *mut SbpgGreenSecond) {
    if !green.is_null() {
        drop(Box::from_raw(green));
    }
}

/// Matrix order (n + 1) of the stored inverse.
///
/// # Safety
/// `green` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sbpg_green_second_dim(green: *const SbpgGreenSecond) -> usize {
    if green.is_null() {
        0
    } else {
        (*green).green.kinv.rows()
    }
}

/// Round-trip residual of the stored inverse.
///
/// # Safety
/// `green` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sbpg_green_second_residual(green: *const SbpgGreenSecond) -> f64 {
    if green.is_null() {
        f64::NAN
    } else {
        (*green).residual
    }
}

/// Copies the inverse row-major into `buf` (length >= (n+1)^2).
///
/// # Safety
/// `green` must be a live handle and `buf` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sbpg_green_second_kinv(
    green: *const SbpgGreenSecond,
    buf: *mut f64,
    len: usize,
) -> SbpgStatus {
    if green.is_null() {
        return usage("green handle is null");
    }
    guarded(|| copy_matrix(&(*green).green.kinv, buf, len))
}
