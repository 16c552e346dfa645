//! C ABI over the `vaetruss` library.
//!
//! Every fallible function returns a [`VtStatus`]; on failure a message is
//! available from [`vt_last_error_message`] on the same thread. Objects are
//! opaque handles created by `*_new`/`*_load`-style functions and released by
//! the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use vaetruss::materials::MaterialDatabase;
use vaetruss::optimizer::{self, DesignMode, OptimizationReport, OptimizeError, ProblemSpec};
use vaetruss::truss::{Truss, TrussError};
use vaetruss::vae::{self, TrainConfig, VaeError, VaeModel};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Infeasible = 4,
    Numeric = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Which design variables an optimization may change.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VtMode {
    Simultaneous = 0,
    /// Areas fixed at `a_init`.
    MaterialOnly = 1,
    /// Material fixed to a named database entry.
    AreaOnly = 2,
}

/// Problem settings. A limit that is NaN is not applied.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct VtProblem {
    pub cost_limit: f64,
    pub mass_limit: f64,
    pub safety_factor: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub a_init: f64,
    pub p: u32,
    pub t0: f64,
    pub mu: f64,
    pub lr: f64,
    pub max_iters: usize,
    pub eps_star: f64,
    pub tol: f64,
    pub hidden: usize,
}

impl From<&VtProblem> for ProblemSpec {
    fn from(p: &VtProblem) -> Self {
        let limit = |v: f64| if v.is_nan() { None } else { Some(v) };
        ProblemSpec {
            cost_limit: limit(p.cost_limit),
            mass_limit: limit(p.mass_limit),
            safety_factor: p.safety_factor,
            a_min: p.a_min,
            a_max: p.a_max,
            a_init: p.a_init,
            p: p.p,
            t0: p.t0,
            mu: p.mu,
            lr: p.lr,
            max_iters: p.max_iters,
            eps_star: p.eps_star,
            tol: p.tol,
            hidden: p.hidden,
        }
    }
}

/// Material database handle.
pub struct VtMaterialDb(MaterialDatabase);

/// Trained VAE handle.
pub struct VtModel(VaeModel);

/// Truss handle.
pub struct VtTruss(Truss);

/// Optimization report handle.
pub struct VtReport {
    report: OptimizationReport,
    snapped: CString,
}

#[derive(Debug, thiserror::Error)]
enum FfiError {
    #[error("null pointer passed as `{0}`")]
    Null(&'static str),
    #[error("`{0}` is not valid UTF-8")]
    Utf8(&'static str),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Numeric(String),
    #[error("buffer holds {given} values, {needed} needed")]
    BufferTooSmall { given: usize, needed: usize },
}

impl FfiError {
    fn status(&self) -> VtStatus {
        match self {
            FfiError::Null(_) => VtStatus::NullPointer,
            FfiError::Utf8(_) | FfiError::Invalid(_) => VtStatus::InvalidArgument,
            FfiError::Io(_) => VtStatus::Io,
            FfiError::Infeasible(_) => VtStatus::Infeasible,
            FfiError::Numeric(_) => VtStatus::Numeric,
            FfiError::BufferTooSmall { .. } => VtStatus::BufferTooSmall,
        }
    }
}

impl From<VaeError> for FfiError {
    fn from(e: VaeError) -> Self {
        match e {
            VaeError::Io(_) => FfiError::Io(e.to_string()),
            VaeError::Divergence { .. } | VaeError::Autodiff(_) => FfiError::Numeric(e.to_string()),
            _ => FfiError::Invalid(e.to_string()),
        }
    }
}

impl From<TrussError> for FfiError {
    fn from(e: TrussError) -> Self {
        match e {
            TrussError::Io(_) => FfiError::Io(e.to_string()),
            _ => FfiError::Invalid(e.to_string()),
        }
    }
}

impl From<OptimizeError> for FfiError {
    fn from(e: OptimizeError) -> Self {
        match e {
            OptimizeError::Analysis { .. } | OptimizeError::Divergence { .. } | OptimizeError::Autodiff(_) => FfiError::Numeric(e.to_string()),
            OptimizeError::NoFeasibleMaterial(_) => FfiError::Infeasible(e.to_string()),
            OptimizeError::Vae(v) => v.into(),
            OptimizeError::Truss(t) => t.into(),
            OptimizeError::Spec(_) => FfiError::Invalid(e.to_string()),
        }
    }
}

impl From<vaetruss::materials::MaterialError> for FfiError {
    fn from(e: vaetruss::materials::MaterialError) -> Self {
        match e {
            vaetruss::materials::MaterialError::Io(_) => FfiError::Io(e.to_string()),
            _ => FfiError::Invalid(e.to_string()),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, records any failure and converts it to a status.
fn guard(f: impl FnOnce() -> Result<(), FfiError>) -> VtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            VtStatus::Ok
        }
        Ok(Err(e)) => {
            set_last_error(&e.to_string());
            e.status()
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            VtStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, FfiError> {
    p.as_ref().ok_or(FfiError::Null(name))
}

unsafe fn as_str<'a>(p: *const c_char, name: &'static str) -> Result<&'a str, FfiError> {
    if p.is_null() {
        return Err(FfiError::Null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| FfiError::Utf8(name))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), FfiError> {
    if out.is_null() {
        return Err(FfiError::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn fill(buf: *mut f64, len: usize, values: &[f64]) -> Result<(), FfiError> {
    if buf.is_null() {
        return Err(FfiError::Null("buffer"));
    }
    if len < values.len() {
        return Err(FfiError::BufferTooSmall {
            given: len,
            needed: values.len(),
        });
    }
    ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn vt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default problem settings with no limits set.
#[no_mangle]
pub extern "C" fn vt_problem_default() -> VtProblem {
    let d = ProblemSpec::default();
    VtProblem {
        cost_limit: f64::NAN,
        mass_limit: f64::NAN,
        safety_factor: d.safety_factor,
        a_min: d.a_min,
        a_max: d.a_max,
        a_init: d.a_init,
        p: d.p,
        t0: d.t0,
        mu: d.mu,
        lr: d.lr,
        max_iters: d.max_iters,
        eps_star: d.eps_star,
        tol: d.tol,
        hidden: d.hidden,
    }
}

/// The bundled nine-material database.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vt_db_table1(out: *mut *mut VtMaterialDb) -> VtStatus {
    guard(|| put(out, VtMaterialDb(MaterialDatabase::table1())))
}

/// Loads a material CSV.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vt_db_load(path: *const c_char, out: *mut *mut VtMaterialDb) -> VtStatus {
    guard(|| {
        let path = as_str(path, "path")?;
        put(out, VtMaterialDb(MaterialDatabase::load(path)?))
    })
}

/// Number of materials, or 0 for a null handle.
///
/// # Safety
/// `db` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vt_db_len(db: *const VtMaterialDb) -> usize {
    db.as_ref().map_or(0, |d| d.0.len())
}

/// # Safety
/// `db` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vt_db_free(db: *mut VtMaterialDb) {
    free(db)
}

/// Trains a VAE on `db`.
///
/// # Safety
/// `db` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vt_model_train(db: *const VtMaterialDb, epochs: usize, lr: f64, beta: f64, seed: u64, out: *mut *mut VtModel) -> VtStatus {
    guard(|| {
        let db = as_ref(db, "db")?;
        let cfg = TrainConfig { beta, lr, epochs, seed };
        put(out, VtModel(vae::train(&db.0, &cfg)?.model))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vt_model_load(path: *const c_char, out: *mut *mut VtModel) -> VtStatus {
    guard(|| {
        let path = as_str(path, "path")?;
        put(out, VtModel(VaeModel::load(path)?))
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vt_model_save(model: *const VtModel, path: *const c_char) -> VtStatus {
    guard(|| {
        let model = as_ref(model, "model")?;
        let path = PathBuf::from(as_str(path, "path")?);
        Ok(model.0.save(path)?)
    })
}

/// Decodes latent point `(z0, z1)` into E, cost, density and yield strength.
///
/// # Safety
/// `model` must be a live handle and `out` must hold 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn vt_model_decode(model: *const VtModel, z0: f64, z1: f64, out: *mut f64) -> VtStatus {
    guard(|| {
        let model = as_ref(model, "model")?;
        fill(out, 4, &model.0.decode([z0, z1]).0)
    })
}

/// Latent embedding of database material `index`.
///
/// # Safety
/// `model` must be a live handle and `out` must hold 2 doubles.
#[no_mangle]
pub unsafe extern "C" fn vt_model_embedding(model: *const VtModel, index: usize, out: *mut f64) -> VtStatus {
    guard(|| {
        let model = as_ref(model, "model")?;
        let z = model
            .0
            .embeddings()
            .get(index)
            .ok_or_else(|| FfiError::Invalid(format!("material index {index} out of range")))?;
        fill(out, 2, z)
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vt_model_free(model: *mut VtModel) {
    free(model)
}

/// A bundled truss: `midcant6` or `tower47`.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vt_truss_bundled(name: *const c_char, out: *mut *mut VtTruss) -> VtStatus {
    guard(|| {
        let name = as_str(name, "name")?;
        let t = Truss::bundled(name).ok_or_else(|| FfiError::Invalid(format!("no bundled truss named `{name}`")))?;
        put(out, VtTruss(t))
    })
}

/// Loads a truss TOML file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vt_truss_load(path: *const c_char, out: *mut *mut VtTruss) -> VtStatus {
    guard(|| {
        let path = as_str(path, "path")?;
        put(out, VtTruss(Truss::load(path)?))
    })
}

/// Number of members, or 0 for a null handle.
///
/// # Safety
/// `truss` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vt_truss_num_members(truss: *const VtTruss) -> usize {
    truss.as_ref().map_or(0, |t| t.0.num_members())
}

/// Compliance of the truss with member areas `areas[0..n]` and modulus `e`.
///
/// # Safety
/// `truss` must be a live handle, `areas` must hold `n` doubles and
/// `compliance` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vt_truss_compliance(truss: *const VtTruss, areas: *const f64, n: usize, e: f64, compliance: *mut f64) -> VtStatus {
    guard(|| {
        let truss = as_ref(truss, "truss")?;
        if areas.is_null() {
            return Err(FfiError::Null("areas"));
        }
        if compliance.is_null() {
            return Err(FfiError::Null("compliance"));
        }
        let areas = std::slice::from_raw_parts(areas, n);
        let a = truss.0.analyze(areas, e)?;
        *compliance = a.compliance;
        Ok(())
    })
}

/// # Safety
/// `truss` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vt_truss_free(truss: *mut VtTruss) {
    free(truss)
}

/// Runs the optimize, snap and re-optimize pipeline.
///
/// `model` may be null in area-only mode; `material` names the fixed
/// material there and is ignored otherwise. An infeasible final design still
/// produces a report; check [`vt_report_feasible`].
///
/// # Safety
/// Handles must be live, `problem` valid, `material` null or NUL-terminated,
/// and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vt_optimize(
    truss: *const VtTruss,
    model: *const VtModel,
    db: *const VtMaterialDb,
    problem: *const VtProblem,
    mode: VtMode,
    material: *const c_char,
    seed: u64,
    out: *mut *mut VtReport,
) -> VtStatus {
    guard(|| {
        let truss = &as_ref(truss, "truss")?.0;
        let db = &as_ref(db, "db")?.0;
        let spec = ProblemSpec::from(as_ref(problem, "problem")?);
        let model = model.as_ref().map(|m| &m.0);
        let mode = match mode {
            VtMode::Simultaneous => DesignMode::Simultaneous,
            VtMode::MaterialOnly => DesignMode::MaterialOnly {
                areas: vec![spec.a_init; truss.num_members()],
            },
            VtMode::AreaOnly => {
                let name = as_str(material, "material")?;
                let (_, m) = db.find(name).ok_or_else(|| FfiError::Invalid(format!("unknown material `{name}`")))?;
                DesignMode::AreaOnly { material: m.clone() }
            }
        };
        let report = optimizer::optimize(truss, model, db, &spec, mode, seed)?;
        let snapped = CString::new(report.snapped.replace('\0', " ")).expect("nul bytes removed");
        put(out, VtReport { report, snapped })
    })
}

/// Whether the final design meets every constraint within tolerance.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vt_report_feasible(report: *const VtReport) -> bool {
    report.as_ref().is_some_and(|r| r.report.feasible)
}

/// Compliance of the final design, NaN for a null handle.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vt_report_j_star(report: *const VtReport) -> f64 {
    report.as_ref().map_or(f64::NAN, |r| r.report.j_star)
}

/// Compliance before snapping, NaN for a null handle.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vt_report_j_raw(report: *const VtReport) -> f64 {
    report.as_ref().map_or(f64::NAN, |r| r.report.j_raw)
}

/// Name of the selected material, owned by the report.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vt_report_material(report: *const VtReport) -> *const c_char {
    report.as_ref().map_or(ptr::null(), |r| r.snapped.as_ptr())
}

/// Copies the final member areas into `buf[0..len]`.
///
/// # Safety
/// `report` must be a live handle and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn vt_report_areas(report: *const VtReport, buf: *mut f64, len: usize) -> VtStatus {
    guard(|| fill(buf, len, &as_ref(report, "report")?.report.a_star))
}

/// Copies the latent optimum into `out[0..2]`; fails for area-only reports.
///
/// # Safety
/// `report` must be a live handle and `out` must hold 2 doubles.
#[no_mangle]
pub unsafe extern "C" fn vt_report_z_star(report: *const VtReport, out: *mut f64) -> VtStatus {
    guard(|| {
        let r = as_ref(report, "report")?;
        let z = r.report.z_star.ok_or_else(|| FfiError::Invalid("area-only reports have no latent optimum".into()))?;
        fill(out, 2, &z)
    })
}

/// The full report as JSON. Release with [`vt_string_free`].
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vt_report_to_json(report: *const VtReport) -> *mut c_char {
    match report.as_ref() {
        Some(r) => CString::new(r.report.to_json()).map_or(ptr::null_mut(), CString::into_raw),
        None => ptr::null_mut(),
    }
}

/// # Safety
/// `report` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vt_report_free(report: *mut VtReport) {
    free(report)
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
