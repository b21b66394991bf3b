//! C ABI for the reduced-basis homogenization toolkit.
//!
//! Handles are opaque pointers created and destroyed by this library; every
//! fallible call returns an [`RbhomStatus`] and stores a message retrievable
//! with [`rbhom_last_error_message`]. Tensor outputs are written row-major
//! into caller-provided arrays of four doubles.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::path::Path;
use std::ptr;

use rbhom::cell::AffineSystem;
use rbhom::mesh::PeriodicMesh;
use rbhom::param::{CellParam, ParamBox};
use rbhom::rb::{greedy_build, GreedyOptions, ReducedBasis};
use rbhom::sample::{sample_params, SampleSpec};
use rbhom::Error;

/// Status codes mirroring the CLI exit-code convention.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RbhomStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    NumericalFailure = 3,
    BoundViolation = 4,
    IoError = 5,
}

/// Truth engine bound to one periodic mesh (opaque).
pub struct RbhomSystem {
    inner: AffineSystem,
}

/// Certified reduced basis (opaque).
pub struct RbhomBasis {
    inner: ReducedBasis,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> RbhomStatus {
    match err {
        Error::Io(_) | Error::BasisFile { .. } => RbhomStatus::IoError,
        Error::BoundViolation { .. } => RbhomStatus::BoundViolation,
        _ => match err.exit_code() {
            2 => RbhomStatus::InvalidArgument,
            4 => RbhomStatus::BoundViolation,
            _ => RbhomStatus::NumericalFailure,
        },
    }
}

fn fail(err: Error) -> RbhomStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

fn param_from(b1: f64, c1: f64, b2: f64, c2: f64, theta: f64) -> Result<CellParam, Error> {
    CellParam::new(b1, c1, b2, c2, theta)
}

/// Copy the message of the most recent error on this thread into `buf`
/// (truncated, always NUL-terminated). Returns the full message length.
///
/// # Safety
/// `buf` must point to at least `len` writable bytes, or be null (in which
/// case only the length is returned).
#[no_mangle]
pub unsafe extern "C" fn rbhom_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Create a truth engine on the periodic mesh with `n_per_side` intervals
/// per side (a positive multiple of four).
///
/// # Safety
/// `out` must be a valid pointer to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn rbhom_system_new(
    n_per_side: u32,
    out: *mut *mut RbhomSystem,
) -> RbhomStatus {
    if out.is_null() {
        set_error("out pointer is null");
        return RbhomStatus::NullArgument;
    }
    *out = ptr::null_mut();
    match PeriodicMesh::new(n_per_side as usize) {
        Ok(mesh) => {
            let system = Box::new(RbhomSystem { inner: AffineSystem::new(mesh) });
            *out = Box::into_raw(system);
            RbhomStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Release a system handle. Null is a no-op.
///
/// # Safety
/// `system` must be a handle returned by [`rbhom_system_new`] that has not
/// been freed, or null.
#[no_mangle]
pub unsafe extern "C" fn rbhom_system_free(system: *mut RbhomSystem) {
    if !system.is_null() {
        drop(Box::from_raw(system));
    }
}

/// Number of FE degrees of freedom of the system's mesh.
///
/// # Safety
/// `system` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rbhom_system_dof_count(system: *const RbhomSystem) -> u32 {
    if system.is_null() {
        return 0;
    }
    (*system).inner.n_dof() as u32
}

/// Solve the cell problems at one parameter with the truth engine and write
/// the homogenized tensor (row-major 2x2) into `a_star`.
///
/// # Safety
/// `system` must be a live handle and `a_star` must point to four writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn rbhom_truth_tensor(
    system: *const RbhomSystem,
    b1: f64,
    c1: f64,
    b2: f64,
    c2: f64,
    theta: f64,
    a_star: *mut f64,
) -> RbhomStatus {
    if system.is_null() || a_star.is_null() {
        set_error("null handle or output pointer");
        return RbhomStatus::NullArgument;
    }
    let system = &(*system).inner;
    let run = param_from(b1, c1, b2, c2, theta)
        .and_then(|p| system.solve_cell(&p))
        .map(|sol| system.homogenized_tensor(&sol));
    match run {
        Ok(t) => {
            for i in 0..2 {
                for j in 0..2 {
                    *a_star.add(2 * i + j) = t.a_star[i][j];
                }
            }
            RbhomStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Build a certified reduced basis by the greedy offline stage over a
/// uniformly seeded training sample of `sample_count` parameters in the box
/// (delta, theta0).
///
/// # Safety
/// `system` must be a live handle and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn rbhom_basis_build(
    system: *const RbhomSystem,
    delta: f64,
    theta0: f64,
    sample_count: u32,
    n_max: u32,
    rel_tol: f64,
    seed: u64,
    out: *mut *mut RbhomBasis,
) -> RbhomStatus {
    if system.is_null() || out.is_null() {
        set_error("null handle or output pointer");
        return RbhomStatus::NullArgument;
    }
    *out = ptr::null_mut();
    let system = &(*system).inner;
    let build = ParamBox::new(delta, theta0).and_then(|pbox| {
        let sample = sample_params(&SampleSpec {
            seed,
            count: sample_count as usize,
            param_box: pbox,
        });
        greedy_build(
            system,
            &sample,
            pbox,
            GreedyOptions::new(n_max as usize, rel_tol, seed),
        )
    });
    match build {
        Ok(basis) => {
            *out = Box::into_raw(Box::new(RbhomBasis { inner: basis }));
            RbhomStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Release a basis handle. Null is a no-op.
///
/// # Safety
/// `basis` must be a handle returned by this library that has not been
/// freed, or null.
#[no_mangle]
pub unsafe extern "C" fn rbhom_basis_free(basis: *mut RbhomBasis) {
    if !basis.is_null() {
        drop(Box::from_raw(basis));
    }
}

/// Number of basis functions.
///
/// # Safety
/// `basis` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rbhom_basis_size(basis: *const RbhomBasis) -> u32 {
    if basis.is_null() {
        return 0;
    }
    (*basis).inner.len() as u32
}

/// Store the basis container at `path`.
///
/// # Safety
/// `basis` must be a live handle; `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn rbhom_basis_save(
    basis: *const RbhomBasis,
    path: *const c_char,
) -> RbhomStatus {
    if basis.is_null() || path.is_null() {
        set_error("null handle or path");
        return RbhomStatus::NullArgument;
    }
    let path = match CStr::from_ptr(path).to_str() {
        Ok(s) => Path::new(s),
        Err(_) => {
            set_error("path is not valid UTF-8");
            return RbhomStatus::InvalidArgument;
        }
    };
    match rbhom::basis_io::save_basis(&(*basis).inner, path) {
        Ok(()) => RbhomStatus::Ok,
        Err(e) => fail(e),
    }
}

/// Load a basis container, verifying integrity and mesh compatibility with
/// the given system.
///
/// # Safety
/// `system` must be a live handle, `path` a NUL-terminated UTF-8 string and
/// `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn rbhom_basis_load(
    path: *const c_char,
    system: *const RbhomSystem,
    out: *mut *mut RbhomBasis,
) -> RbhomStatus {
    if system.is_null() || path.is_null() || out.is_null() {
        set_error("null handle, path or output pointer");
        return RbhomStatus::NullArgument;
    }
    *out = ptr::null_mut();
    let path = match CStr::from_ptr(path).to_str() {
        Ok(s) => Path::new(s),
        Err(_) => {
            set_error("path is not valid UTF-8");
            return RbhomStatus::InvalidArgument;
        }
    };
    match rbhom::basis_io::load_basis(path, &(*system).inner) {
        Ok(basis) => {
            *out = Box::into_raw(Box::new(RbhomBasis { inner: basis }));
            RbhomStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Certified online query: homogenized tensor and the 2x2 output error
/// bounds, both row-major. The cost is independent of the FE dimension.
///
/// # Safety
/// `basis` must be a live handle; `a_star` and `delta_s` must each point to
/// four writable doubles (`delta_s` may be null if bounds are not wanted).
#[no_mangle]
pub unsafe extern "C" fn rbhom_online_tensor(
    basis: *const RbhomBasis,
    b1: f64,
    c1: f64,
    b2: f64,
    c2: f64,
    theta: f64,
    a_star: *mut f64,
    delta_s: *mut f64,
) -> RbhomStatus {
    if basis.is_null() || a_star.is_null() {
        set_error("null handle or output pointer");
        return RbhomStatus::NullArgument;
    }
    let run = param_from(b1, c1, b2, c2, theta)
        .and_then(|p| (*basis).inner.online_solve(&p));
    match run {
        Ok(online) => {
            for i in 0..2 {
                for j in 0..2 {
                    *a_star.add(2 * i + j) = online.a_star[i][j];
                    if !delta_s.is_null() {
                        *delta_s.add(2 * i + j) = online.delta_s[i][j];
                    }
                }
            }
            RbhomStatus::Ok
        }
        Err(e) => fail(e),
    }
}
