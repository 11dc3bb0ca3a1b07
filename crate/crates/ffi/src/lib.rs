//! C ABI for the mdlod solver: opaque handles, integer status codes, and a
//! thread-local last-error message.
//!
//! All functions are safe to call from any thread. Strings are NUL-terminated
//! UTF-8. Handles returned by `mdlod_domain_load` must be released with
//! `mdlod_domain_free`.

use mdlod::geometry::{build_domain, GeometrySpec, MixedDomain};
use mdlod::harness::{run_experiment, ExperimentConfig, HarnessError};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MdlodStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    GeometryError = 3,
    MeshError = 4,
    SolverError = 5,
    ConfigError = 6,
    IoError = 7,
    InternalError = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn classify(err: &HarnessError) -> MdlodStatus {
    match err {
        HarnessError::Geometry(_) => MdlodStatus::GeometryError,
        HarnessError::Mesh(_) => MdlodStatus::MeshError,
        HarnessError::Fem(_) | HarnessError::Lod(_) | HarnessError::Interp(_) => {
            MdlodStatus::SolverError
        }
        HarnessError::Io(_) => MdlodStatus::IoError,
        HarnessError::Config(_) | HarnessError::Parse(_) => MdlodStatus::ConfigError,
        _ => MdlodStatus::InternalError,
    }
}

/// Opaque mixed-dimensional domain handle.
pub struct MdlodDomain {
    inner: MixedDomain,
}

unsafe fn path_arg(ptr: *const c_char) -> Result<PathBuf, MdlodStatus> {
    if ptr.is_null() {
        set_error("null path argument");
        return Err(MdlodStatus::NullArgument);
    }
    match unsafe { CStr::from_ptr(ptr) }.to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(MdlodStatus::InvalidUtf8)
        }
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mdlod_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the most recent error on this thread (empty if none). The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mdlod_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads and builds a mixed-dimensional domain from a geometry spec file.
/// On success stores a new handle in `out`; release it with
/// [`mdlod_domain_free`].
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mdlod_domain_load(
    path: *const c_char,
    out: *mut *mut MdlodDomain,
) -> MdlodStatus {
    if out.is_null() {
        set_error("null output argument");
        return MdlodStatus::NullArgument;
    }
    let path = match unsafe { path_arg(path) } {
        Ok(p) => p,
        Err(s) => return s,
    };
    let spec = match GeometrySpec::from_path(&path) {
        Ok(s) => s,
        Err(e) => {
            set_error(&e.to_string());
            return MdlodStatus::GeometryError;
        }
    };
    match build_domain(&spec) {
        Ok(domain) => {
            unsafe { *out = Box::into_raw(Box::new(MdlodDomain { inner: domain })) };
            MdlodStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            MdlodStatus::GeometryError
        }
    }
}

/// Segment counts of a domain: bulk, interface, junction.
///
/// # Safety
/// `domain` must be a live handle; count pointers may be null to skip.
#[no_mangle]
pub unsafe extern "C" fn mdlod_domain_counts(
    domain: *const MdlodDomain,
    n_bulk: *mut usize,
    n_interface: *mut usize,
    n_junction: *mut usize,
) -> MdlodStatus {
    if domain.is_null() {
        set_error("null domain handle");
        return MdlodStatus::NullArgument;
    }
    let d = unsafe { &(*domain).inner };
    if !n_bulk.is_null() {
        unsafe { *n_bulk = d.n_bulk };
    }
    if !n_interface.is_null() {
        unsafe { *n_interface = d.interfaces.len() };
    }
    if !n_junction.is_null() {
        unsafe { *n_junction = d.junctions.len() };
    }
    MdlodStatus::Ok
}

/// Runs the structural validation of a domain and reports the number of
/// violations found (zero means the domain is valid).
///
/// # Safety
/// `domain` must be a live handle and `n_violations` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mdlod_domain_validate(
    domain: *const MdlodDomain,
    n_violations: *mut usize,
) -> MdlodStatus {
    if domain.is_null() || n_violations.is_null() {
        set_error("null argument");
        return MdlodStatus::NullArgument;
    }
    let violations = unsafe { &(*domain).inner }.validate();
    if let Some(first) = violations.first() {
        set_error(&first.to_string());
    }
    unsafe { *n_violations = violations.len() };
    MdlodStatus::Ok
}

/// Releases a domain handle. Null is a no-op.
///
/// # Safety
/// `domain` must be null or a handle returned by [`mdlod_domain_load`] that
/// has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn mdlod_domain_free(domain: *mut MdlodDomain) {
    if !domain.is_null() {
        drop(unsafe { Box::from_raw(domain) });
    }
}

/// Runs the experiment described by a config file and writes the CSV report.
/// `out_csv` overrides the config's output path when non-null; `threads`
/// limits the worker pool (0 = all cores); with `has_seed` set, `seed`
/// overrides the seed of random coefficient fields.
///
/// # Safety
/// `config_path` must be a valid NUL-terminated string; `out_csv` must be
/// null or a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mdlod_run_experiment(
    config_path: *const c_char,
    out_csv: *const c_char,
    threads: usize,
    seed: u64,
    has_seed: bool,
) -> MdlodStatus {
    let path = match unsafe { path_arg(config_path) } {
        Ok(p) => p,
        Err(s) => return s,
    };
    let mut cfg = match ExperimentConfig::from_path(Path::new(&path)) {
        Ok(c) => c,
        Err(e) => {
            set_error(&e.to_string());
            return classify(&e);
        }
    };
    if !out_csv.is_null() {
        match unsafe { path_arg(out_csv) } {
            Ok(p) => cfg.output = p,
            Err(s) => return s,
        }
    }
    let seed_override = has_seed.then_some(seed);
    let run = move || run_experiment(cfg, seed_override);
    let result = if threads > 0 {
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(run),
            Err(e) => {
                set_error(&e.to_string());
                return MdlodStatus::InternalError;
            }
        }
    } else {
        run()
    };
    match result {
        Ok(_) => MdlodStatus::Ok,
        Err(e) => {
            set_error(&e.to_string());
            classify(&e)
        }
    }
}
