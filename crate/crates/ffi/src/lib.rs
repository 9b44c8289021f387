//! C ABI over the paracorona toolkit.
//!
//! Objects are opaque handles created by `pc_*_new`-style functions and
//! released with the matching `pc_*_free`. Fallible calls return a
//! `PcStatus`; the message of the last failure on the calling thread is
//! available through `pc_last_error_message`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use paracorona::beta::{compute_beta_field, BetaField, BetaParams};
use paracorona::corona::{build_regimes, CoronaParams, CoronaResult};
use paracorona::dyadic::{DyadicTree, TreeOptions};
use paracorona::surfaces::{synthesize, SurfaceKind, SynthParams};
use paracorona::whitney::{assemble_psi, GraphField};
use paracorona::{io, metric, Error, Surface};

/// Status codes returned by fallible calls.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcStatus {
    Ok = 0,
    NullPointer = 1,
    Input = 2,
    Parse = 3,
    Precondition = 4,
    Resolution = 5,
    DegenerateFit = 6,
    Construction = 7,
    RegimeIntegrity = 8,
    Io = 9,
    Panic = 10,
}

pub struct PcSurface(Surface);
pub struct PcTree(DyadicTree);
pub struct PcBetas(BetaField);
pub struct PcCorona(CoronaResult);
pub struct PcGraph(GraphField);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> PcStatus {
    match e {
        Error::Input(_) => PcStatus::Input,
        Error::Parse { .. } | Error::Json(_) => PcStatus::Parse,
        Error::Precondition(_) => PcStatus::Precondition,
        Error::Resolution(_) => PcStatus::Resolution,
        Error::DegenerateFit(_) => PcStatus::DegenerateFit,
        Error::Construction(_) => PcStatus::Construction,
        Error::RegimeIntegrity(_) => PcStatus::RegimeIntegrity,
        Error::Io(_) => PcStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

/// Run `f`, translating failures and panics into a status.
fn call<T>(f: impl FnOnce() -> Result<T, Fail>) -> Result<T, PcStatus> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("{what} is null"));
            Err(PcStatus::NullPointer)
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            Err(status_of(&e))
        }
        Err(_) => {
            set_error("internal panic".into());
            Err(PcStatus::Panic)
        }
    }
}

fn status(r: Result<(), PcStatus>) -> PcStatus {
    r.err().unwrap_or(PcStatus::Ok)
}

/// Like `call`, boxing the result into `*out`.
fn guard<T>(out: *mut *mut T, f: impl FnOnce() -> Result<T, Fail>) -> PcStatus {
    if out.is_null() {
        set_error("output pointer is null".into());
        return PcStatus::NullPointer;
    }
    unsafe { *out = std::ptr::null_mut() };
    status(call(f).map(|v| unsafe { *out = Box::into_raw(Box::new(v)) }))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn string<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Core(Error::Input(format!("{what} is not UTF-8"))))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Copy the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn pc_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Parabolic distance |x - y| + |t - s|^{1/2} in R^n x R.
///
/// # Safety
/// `x` and `y` must point to `n` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn pc_dist_p(x: *const f64, t: f64, y: *const f64, s: f64, n: usize) -> f64 {
    match (slice(x, n, "x"), slice(y, n, "y")) {
        (Ok(a), Ok(b)) => metric::dist_p(a, t, b, s),
        _ => f64::NAN,
    }
}

/// Surface from `count` points: `xs` holds `count * n` coordinates, point-major.
///
/// # Safety
/// Arrays must hold the stated number of doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_surface_new(
    n: usize,
    spacing: f64,
    xs: *const f64,
    ts: *const f64,
    ws: *const f64,
    count: usize,
    out: *mut *mut PcSurface,
) -> PcStatus {
    guard(out, || {
        let xs = slice(xs, count.checked_mul(n).ok_or(Fail::Core(Error::Input("point count overflows".into())))?, "xs")?;
        let ts = slice(ts, count, "ts")?;
        let ws = slice(ws, count, "ws")?;
        Ok(PcSurface(Surface::new(n, spacing, xs.to_vec(), ts.to_vec(), ws.to_vec())?))
    })
}

/// Synthetic surface of the named kind (`t_plane`, `ridge`, ...) with the
/// kind's default parameters; a finite `amplitude` overrides the default.
///
/// # Safety
/// `kind` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_surface_synthesize(
    kind: *const c_char,
    n: usize,
    spacing: f64,
    extent: f64,
    amplitude: f64,
    out: *mut *mut PcSurface,
) -> PcStatus {
    guard(out, || {
        let kind: SurfaceKind = string(kind, "kind")?.parse()?;
        let mut p = SynthParams::new(kind, n, spacing, extent);
        if amplitude.is_finite() {
            p.amplitude = amplitude;
        }
        Ok(PcSurface(synthesize(&p)?.0))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_surface_load(path: *const c_char, out: *mut *mut PcSurface) -> PcStatus {
    guard(out, || Ok(PcSurface(io::load_surface(Path::new(string(path, "path")?))?)))
}

/// # Safety
/// `s` must be a live surface handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pc_surface_save(s: *const PcSurface, path: *const c_char) -> PcStatus {
    status(call(|| Ok(io::save_surface(&handle(s, "surface")?.0, Path::new(string(path, "path")?))?)))
}

/// Number of points, 0 for a null handle.
///
/// # Safety
/// `s` must be null or a live surface handle.
#[no_mangle]
pub unsafe extern "C" fn pc_surface_len(s: *const PcSurface) -> usize {
    s.as_ref().map_or(0, |s| s.0.len())
}

/// Number of sampling warnings recorded when the surface was loaded.
///
/// # Safety
/// `s` must be null or a live surface handle.
#[no_mangle]
pub unsafe extern "C" fn pc_surface_warning_count(s: *const PcSurface) -> usize {
    s.as_ref().map_or(0, |s| s.0.warnings.len())
}

/// # Safety
/// `s` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pc_surface_free(s: *mut PcSurface) {
    free(s)
}

/// Dyadic cube tree with default options; `max_depth` < 0 means unlimited.
///
/// # Safety
/// `s` must be a live surface handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_tree_build(s: *const PcSurface, max_depth: i32, out: *mut *mut PcTree) -> PcStatus {
    guard(out, || {
        let s = handle(s, "surface")?;
        let opts = TreeOptions { max_depth: u32::try_from(max_depth).ok(), ..Default::default() };
        Ok(PcTree(DyadicTree::build(&s.0, opts)?))
    })
}

/// # Safety
/// `t` must be null or a live tree handle.
#[no_mangle]
pub unsafe extern "C" fn pc_tree_len(t: *const PcTree) -> usize {
    t.as_ref().map_or(0, |t| t.0.len())
}

/// Number of generations, 0 for a null handle.
///
/// # Safety
/// `t` must be null or a live tree handle.
#[no_mangle]
pub unsafe extern "C" fn pc_tree_depth(t: *const PcTree) -> usize {
    t.as_ref().map_or(0, |t| t.0.generations.len())
}

/// # Safety
/// `t` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pc_tree_free(t: *mut PcTree) {
    free(t)
}

/// Beta numbers of every cube with window constant `k`.
///
/// # Safety
/// Handles must be live and built from the same surface; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_betas_compute(s: *const PcSurface, t: *const PcTree, k: f64, bilateral: bool, out: *mut *mut PcBetas) -> PcStatus {
    guard(out, || {
        let params = BetaParams { k, bilateral, ..Default::default() };
        Ok(PcBetas(compute_beta_field(&handle(s, "surface")?.0, &handle(t, "tree")?.0, params)?))
    })
}

/// beta_inf, bilateral beta (NaN when not computed) and the resolved flag of one cube.
///
/// # Safety
/// `b` must be a live handle; output pointers must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn pc_betas_get(b: *const PcBetas, cube: u32, beta_inf: *mut f64, bbeta: *mut f64, resolved: *mut bool) -> PcStatus {
    let Some(b) = b.as_ref() else {
        set_error("betas is null".into());
        return PcStatus::NullPointer;
    };
    let Some(r) = b.0.records.get(cube as usize) else {
        set_error(format!("no cube {cube} (have {})", b.0.records.len()));
        return PcStatus::Input;
    };
    if let Some(p) = beta_inf.as_mut() {
        *p = r.beta_inf;
    }
    if let Some(p) = bbeta.as_mut() {
        *p = r.bbeta_inf.unwrap_or(f64::NAN);
    }
    if let Some(p) = resolved.as_mut() {
        *p = r.resolved;
    }
    PcStatus::Ok
}

/// # Safety
/// `b` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pc_betas_free(b: *mut PcBetas) {
    free(b)
}

/// Corona decomposition with the given thresholds; `kappa` 2 and the
/// window constant of the betas.
///
/// # Safety
/// Handles must be live and consistent; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_corona_build(
    t: *const PcTree,
    b: *const PcBetas,
    epsilon: f64,
    delta: f64,
    bilateral: bool,
    out: *mut *mut PcCorona,
) -> PcStatus {
    guard(out, || {
        let b = handle(b, "betas")?;
        let mut params = CoronaParams::new(epsilon, delta);
        params.k = b.0.params.k;
        params.bilateral = bilateral;
        Ok(PcCorona(build_regimes(&handle(t, "tree")?.0, &b.0, params)?))
    })
}

/// # Safety
/// `c` must be null or a live corona handle.
#[no_mangle]
pub unsafe extern "C" fn pc_corona_regime_count(c: *const PcCorona) -> usize {
    c.as_ref().map_or(0, |c| c.0.regimes.len())
}

/// # Safety
/// `c` must be null or a live corona handle.
#[no_mangle]
pub unsafe extern "C" fn pc_corona_bad_count(c: *const PcCorona) -> usize {
    c.as_ref().map_or(0, |c| c.0.bad.len())
}

/// Regime id of a cube, -1 for bad cubes and out-of-range ids.
///
/// # Safety
/// `c` must be null or a live corona handle.
#[no_mangle]
pub unsafe extern "C" fn pc_corona_assignment(c: *const PcCorona, cube: u32) -> i64 {
    c.as_ref().and_then(|c| c.0.assignment.get(cube as usize).copied()).unwrap_or(-1)
}

/// # Safety
/// `c` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pc_corona_free(c: *mut PcCorona) {
    free(c)
}

/// Lip(1,1/2) graph of one regime.
///
/// # Safety
/// Handles must be live and consistent; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_graph_assemble(
    s: *const PcSurface,
    t: *const PcTree,
    c: *const PcCorona,
    regime: u32,
    out: *mut *mut PcGraph,
) -> PcStatus {
    guard(out, || Ok(PcGraph(assemble_psi(&handle(s, "surface")?.0, &handle(t, "tree")?.0, &handle(c, "corona")?.0, regime)?)))
}

/// Number of frame coordinates y of the graph (n - 1).
///
/// # Safety
/// `g` must be null or a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn pc_graph_dim(g: *const PcGraph) -> usize {
    g.as_ref().map_or(0, |g| g.0.family.m)
}

/// psi at frame coordinates (y, s); `y` holds `pc_graph_dim` doubles.
///
/// # Safety
/// `g` must be a live handle, `y` readable for `m` doubles and `value` writable.
#[no_mangle]
pub unsafe extern "C" fn pc_graph_psi(g: *const PcGraph, y: *const f64, m: usize, s: f64, value: *mut f64) -> PcStatus {
    status(call(|| {
        let g = handle(g, "graph")?;
        if m != g.0.family.m {
            return Err(Fail::Core(Error::Input(format!("graph has {} frame coordinates, got {m}", g.0.family.m))));
        }
        if value.is_null() {
            return Err(Fail::Null("value"));
        }
        *value = g.0.psi_value(slice(y, m, "y")?, s);
        Ok(())
    }))
}

/// # Safety
/// `g` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pc_graph_free(g: *mut PcGraph) {
    free(g)
}
