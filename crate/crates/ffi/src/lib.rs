//! C interface to gmls-vec.
//!
//! Objects are opaque handles created by `gmls_*_new`/`gmls_*_sample`-style
//! functions and released with the matching `*_free`. Every fallible call
//! returns a [`GmlsStatus`]; on failure `gmls_last_error()` describes it.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gmls_vec::geometry::{analytic_frames, sample_manifold, NeighborIndex, PointCloud, Stencils};
use gmls_vec::harness::leading_eigenvalues;
use gmls_vec::intrinsic::{assemble_intrinsic, Degrees};
use gmls_vec::extrinsic::assemble_extrinsic;
use gmls_vec::operators::{BlockOperator, LaplacianKind};
use gmls_vec::pde::solve_screened_poisson;
use gmls_vec::tangent::{estimate_frames, FrameField, Refinement};
use gmls_vec::{Error, Manifold};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GmlsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Bad input data or file.
    Validation = 3,
    /// Degenerate fit, solver breakdown and similar.
    Numerical = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GmlsMethod {
    Intrinsic = 0,
    Extrinsic = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GmlsKind {
    Bochner = 0,
    L = 1,
    Hodge = 2,
}

/// Point cloud, optionally tied to one of the built-in manifolds.
pub struct GmlsCloud(PointCloud);

/// One orthonormal tangent frame per point.
pub struct GmlsFrames(FrameField);

/// Assembled block-sparse vector Laplacian.
pub struct GmlsOperator(BlockOperator);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: GmlsStatus, msg: impl Into<String>) -> GmlsStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> GmlsStatus {
    let s = if e.is_validation() {
        GmlsStatus::Validation
    } else {
        GmlsStatus::Numerical
    };
    fail(s, e.to_string())
}

fn guard(f: impl FnOnce() -> GmlsStatus) -> GmlsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(GmlsStatus::Panic, msg)
        }
    }
}

fn store<T>(out: *mut *mut T, v: T) -> GmlsStatus {
    // SAFETY: callers check `out` for null before computing `v`.
    unsafe { *out = Box::into_raw(Box::new(v)) };
    GmlsStatus::Ok
}

macro_rules! non_null {
    ($($p:expr),+) => {
        $(if $p.is_null() {
            return fail(GmlsStatus::NullPointer, concat!(stringify!($p), " is null"));
        })+
    };
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gmls_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gmls_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Sample `n` points from a named manifold ("sphere", "torus3", "torus9",
/// "flat_torus12", "rbc", "bumpy_sphere").
///
/// # Safety
/// `manifold` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gmls_cloud_sample(
    manifold: *const c_char,
    n: usize,
    seed: u64,
    out: *mut *mut GmlsCloud,
) -> GmlsStatus {
    guard(|| {
        non_null!(manifold, out);
        let Ok(name) = CStr::from_ptr(manifold).to_str() else {
            return fail(GmlsStatus::InvalidArgument, "manifold name is not UTF-8");
        };
        let m: Manifold = match name.parse() {
            Ok(m) => m,
            Err(e) => return from_error(e),
        };
        match sample_manifold(m, n, seed) {
            Ok(c) => store(out, GmlsCloud(c)),
            Err(e) => from_error(e),
        }
    })
}

/// Cloud from `count` row-major points in R^`ambient` on a `dim`-manifold.
///
/// # Safety
/// `points` must hold `count * ambient` values and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gmls_cloud_from_points(
    points: *const f64,
    count: usize,
    ambient: usize,
    dim: usize,
    out: *mut *mut GmlsCloud,
) -> GmlsStatus {
    guard(|| {
        non_null!(points, out);
        let Some(len) = count.checked_mul(ambient) else {
            return fail(GmlsStatus::InvalidArgument, "point buffer size overflows");
        };
        let pts = std::slice::from_raw_parts(points, len).to_vec();
        match PointCloud::new(pts, ambient, dim) {
            Ok(c) => store(out, GmlsCloud(c)),
            Err(e) => from_error(e),
        }
    })
}

/// Number of points, or 0 for a null handle.
///
/// # Safety
/// `cloud` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gmls_cloud_len(cloud: *const GmlsCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.0.len())
}

/// Copy the coordinates (row-major, `len * ambient` values) into `buf`.
///
/// # Safety
/// `buf` must have room for `buf_len` values.
#[no_mangle]
pub unsafe extern "C" fn gmls_cloud_points(cloud: *const GmlsCloud, buf: *mut f64, buf_len: usize) -> GmlsStatus {
    guard(|| {
        non_null!(cloud, buf);
        let p = (*cloud).0.points();
        if buf_len < p.len() {
            return fail(GmlsStatus::InvalidArgument, format!("buffer holds {buf_len} values, need {}", p.len()));
        }
        ptr::copy_nonoverlapping(p.as_ptr(), buf, p.len());
        GmlsStatus::Ok
    })
}

/// # Safety
/// `cloud` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn gmls_cloud_free(cloud: *mut GmlsCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// Exact frames of a sampled cloud.
///
/// # Safety
/// `cloud` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn gmls_frames_analytic(cloud: *const GmlsCloud, out: *mut *mut GmlsFrames) -> GmlsStatus {
    guard(|| {
        non_null!(cloud, out);
        match analytic_frames(&(*cloud).0) {
            Ok(f) => store(out, GmlsFrames(f)),
            Err(e) => from_error(e),
        }
    })
}

/// Frames estimated from `k`-nearest-neighbor stencils with degree `l` refinement.
///
/// # Safety
/// `cloud` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn gmls_frames_estimate(
    cloud: *const GmlsCloud,
    k: usize,
    l: usize,
    out: *mut *mut GmlsFrames,
) -> GmlsStatus {
    guard(|| {
        non_null!(cloud, out);
        let c = &(*cloud).0;
        let r = Stencils::build(&NeighborIndex::build(c), k)
            .and_then(|st| estimate_frames(c, &st, l, Refinement::Auto));
        match r {
            Ok(f) => store(out, GmlsFrames(f)),
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `frames` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn gmls_frames_free(frames: *mut GmlsFrames) {
    if !frames.is_null() {
        drop(Box::from_raw(frames));
    }
}

/// Assemble a vector Laplacian with `k`-point stencils, field degree
/// `l_field` and (intrinsic only) manifold degree `l_manifold`.
///
/// # Safety
/// Handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn gmls_operator_assemble(
    cloud: *const GmlsCloud,
    frames: *const GmlsFrames,
    k: usize,
    l_field: usize,
    l_manifold: usize,
    method: GmlsMethod,
    kind: GmlsKind,
    out: *mut *mut GmlsOperator,
) -> GmlsStatus {
    guard(|| {
        non_null!(cloud, frames, out);
        let (c, f) = (&(*cloud).0, &(*frames).0);
        let kind = match kind {
            GmlsKind::Bochner => LaplacianKind::Bochner,
            GmlsKind::L => LaplacianKind::L,
            GmlsKind::Hodge => LaplacianKind::Hodge,
        };
        let r = Stencils::build(&NeighborIndex::build(c), k).and_then(|st| match method {
            GmlsMethod::Intrinsic => assemble_intrinsic(
                c,
                f,
                &st,
                kind,
                Degrees {
                    field: l_field,
                    manifold: l_manifold,
                },
            ),
            GmlsMethod::Extrinsic => assemble_extrinsic(c, f, &st, kind, l_field),
        });
        match r {
            Ok(op) => store(out, GmlsOperator(op)),
            Err(e) => from_error(e),
        }
    })
}

/// Scalar dimension dN, or 0 for a null handle.
///
/// # Safety
/// `op` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gmls_operator_dim(op: *const GmlsOperator) -> usize {
    op.as_ref().map_or(0, |o| o.0.dim())
}

/// y = L x, both of length dN.
///
/// # Safety
/// `x` and `y` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn gmls_operator_apply(op: *const GmlsOperator, x: *const f64, y: *mut f64, len: usize) -> GmlsStatus {
    guard(|| {
        non_null!(op, x, y);
        let o = &(*op).0;
        if len != o.dim() {
            return fail(GmlsStatus::InvalidArgument, format!("length {len} but dN = {}", o.dim()));
        }
        let xs = std::slice::from_raw_parts(x, len);
        match o.apply_into(xs, std::slice::from_raw_parts_mut(y, len)) {
            Ok(()) => GmlsStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// Solve (aI − L)u = f.
///
/// # Safety
/// `f` and `u` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn gmls_operator_solve_screened(
    op: *const GmlsOperator,
    a: f64,
    f: *const f64,
    u: *mut f64,
    len: usize,
) -> GmlsStatus {
    guard(|| {
        non_null!(op, f, u);
        let o = &(*op).0;
        if len != o.dim() {
            return fail(GmlsStatus::InvalidArgument, format!("length {len} but dN = {}", o.dim()));
        }
        match solve_screened_poisson(o, a, std::slice::from_raw_parts(f, len)) {
            Ok(sol) => {
                ptr::copy_nonoverlapping(sol.as_ptr(), u, len);
                GmlsStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// `count` eigenvalues of largest real part, written to `re` and `im` in
/// descending order of real part.
///
/// # Safety
/// `re` and `im` must hold `count` values.
#[no_mangle]
pub unsafe extern "C" fn gmls_operator_eigenvalues(
    op: *const GmlsOperator,
    count: usize,
    re: *mut f64,
    im: *mut f64,
) -> GmlsStatus {
    guard(|| {
        non_null!(op, re, im);
        let o = &(*op).0;
        if count == 0 || count > o.dim() {
            return fail(GmlsStatus::InvalidArgument, "count must be in 1..=dN");
        }
        match leading_eigenvalues(o, count) {
            Ok(s) if s.values.len() >= count => {
                for (i, z) in s.values.iter().take(count).enumerate() {
                    *re.add(i) = z.re;
                    *im.add(i) = z.im;
                }
                GmlsStatus::Ok
            }
            Ok(s) => fail(GmlsStatus::Numerical, format!("only {} eigenvalues converged", s.values.len())),
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `op` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn gmls_operator_free(op: *mut GmlsOperator) {
    if !op.is_null() {
        drop(Box::from_raw(op));
    }
}
