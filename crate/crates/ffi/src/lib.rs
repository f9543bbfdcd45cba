//! C ABI over `splat-align`.
//!
//! Every function returns an [`SaStatus`]; on failure the message is available
//! from [`sa_last_error_message`] on the same thread. Matrices are row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use splat_align::cli::{self, RunConfig};
use splat_align::correspond::Corr3D;
use splat_align::math::{mat_from_row_slice, mat_to_row_vec};
use splat_align::register::{anisotropic_regularized, anisotropic_svd, coarse_align, umeyama, ShapeSolverConfig};
use splat_align::splat::{apply_anisotropic, load_ply, save_ply};
use splat_align::synth::{chamfer, emd};
use splat_align::{AnisotropicTransform, Error, SimilarityTransform, SplatCloud, Vec3};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    NotFound = 5,
    Registration = 6,
    Numerical = 7,
    Panic = 8,
    Other = 9,
}

/// Opaque Gaussian splat cloud.
pub struct SaCloud {
    inner: SplatCloud,
}

/// `p ↦ scale·R·p + t`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SaSimilarity {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub scale: f64,
}

/// `p ↦ R·Fᵀ·diag(scale)·F·p + t`, with `F` the scaling frame.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SaAnisotropic {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub scale: [f64; 3],
    pub frame: [f64; 9],
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(SaStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Validation(_)
            | Error::InvalidRotation(_)
            | Error::InvalidScale(_)
            | Error::InvalidPrimitive { .. }
            | Error::UnsupportedDegree(_)
            | Error::DimensionMismatch(_)
            | Error::NonFiniteData { .. } => SaStatus::InvalidArgument,
            Error::Io { .. } => SaStatus::Io,
            Error::Format(_) | Error::Json(_) | Error::Image(_) => SaStatus::Format,
            Error::NotFound(_) => SaStatus::NotFound,
            Error::RegistrationFailed { .. }
            | Error::InsufficientData(_)
            | Error::NoConsensus(_)
            | Error::Degenerate(_) => SaStatus::Registration,
            Error::SolverFailure(_) | Error::NonFiniteLoss { .. } => SaStatus::Numerical,
            _ => SaStatus::Other,
        };
        Fail(status, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SaStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SaStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SaStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SaStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn points_arg<'a>(p: *const f64, n: usize, what: &str) -> Result<Vec<Vec3>, Fail> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        return Err(null(what));
    }
    let s: &'a [f64] = std::slice::from_raw_parts(p, 3 * n);
    Ok(s.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
}

unsafe fn pairs_arg(src: *const f64, dst: *const f64, n: usize) -> Result<Vec<Corr3D>, Fail> {
    let a = points_arg(src, n, "src")?;
    let b = points_arg(dst, n, "dst")?;
    Ok(a.into_iter().zip(b).map(|(p, q)| Corr3D::new(p, q)).collect())
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

fn sim_to_c(t: &SimilarityTransform) -> SaSimilarity {
    let mut rotation = [0.0; 9];
    rotation.copy_from_slice(&mat_to_row_vec(&t.rotation));
    SaSimilarity {
        rotation,
        translation: t.translation.into(),
        scale: t.scale,
    }
}

fn aniso_to_c(t: &AnisotropicTransform) -> SaAnisotropic {
    let mut rotation = [0.0; 9];
    let mut frame = [0.0; 9];
    rotation.copy_from_slice(&mat_to_row_vec(&t.rotation));
    frame.copy_from_slice(&mat_to_row_vec(&t.frame));
    SaAnisotropic {
        rotation,
        translation: t.translation.into(),
        scale: t.scale.into(),
        frame,
    }
}

fn aniso_from_c(t: &SaAnisotropic) -> Result<AnisotropicTransform, Fail> {
    Ok(AnisotropicTransform::new(
        mat_from_row_slice(&t.rotation),
        t.translation.into(),
        t.scale.into(),
        mat_from_row_slice(&t.frame),
    )?)
}

/// Message of the last failed call on this thread, or null. Valid until the next call.
#[no_mangle]
pub extern "C" fn sa_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn sa_cloud_load_ply(path: *const c_char, out: *mut *mut SaCloud) -> SaStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let inner = load_ply(path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(SaCloud { inner }));
        Ok(())
    })
}

/// # Safety
/// `cloud` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sa_cloud_save_ply(cloud: *const SaCloud, path: *const c_char) -> SaStatus {
    guard(|| {
        let c = cloud.as_ref().ok_or_else(|| null("cloud"))?;
        save_ply(&c.inner, path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Releases a cloud; null is ignored.
///
/// # Safety
/// `cloud` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sa_cloud_free(cloud: *mut SaCloud) {
    if !cloud.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(cloud))));
    }
}

/// # Safety
/// `cloud` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sa_cloud_len(cloud: *const SaCloud, out: *mut usize) -> SaStatus {
    guard(|| {
        let c = cloud.as_ref().ok_or_else(|| null("cloud"))?;
        *out_ref(out, "out")? = c.inner.len();
        Ok(())
    })
}

/// Copies the primitive means as `x, y, z` triples; `capacity` counts points.
///
/// # Safety
/// `xyz` must have room for `3·capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn sa_cloud_means(cloud: *const SaCloud, xyz: *mut f64, capacity: usize) -> SaStatus {
    guard(|| {
        let c = cloud.as_ref().ok_or_else(|| null("cloud"))?;
        let n = c.inner.len();
        if capacity < n {
            return Err(Fail(SaStatus::InvalidArgument, format!("capacity {capacity} < {n} points")));
        }
        if n == 0 {
            return Ok(());
        }
        if xyz.is_null() {
            return Err(null("xyz"));
        }
        let dst = std::slice::from_raw_parts_mut(xyz, 3 * n);
        for (d, m) in dst.chunks_exact_mut(3).zip(c.inner.means()) {
            d.copy_from_slice(m.as_slice());
        }
        Ok(())
    })
}

/// New cloud with `t` applied to means, covariances and SH.
///
/// # Safety
/// Pointers must be valid; `out` receives a handle to free with `sa_cloud_free`.
#[no_mangle]
pub unsafe extern "C" fn sa_cloud_apply_anisotropic(
    cloud: *const SaCloud,
    t: *const SaAnisotropic,
    out: *mut *mut SaCloud,
) -> SaStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let c = cloud.as_ref().ok_or_else(|| null("cloud"))?;
        let t = aniso_from_c(t.as_ref().ok_or_else(|| null("t"))?)?;
        let inner = apply_anisotropic(&c.inner, &t)?;
        *out = Box::into_raw(Box::new(SaCloud { inner }));
        Ok(())
    })
}

/// Least-squares similarity mapping `src[i]` onto `dst[i]`.
///
/// # Safety
/// `src` and `dst` hold `3·n` doubles each.
#[no_mangle]
pub unsafe extern "C" fn sa_umeyama(src: *const f64, dst: *const f64, n: usize, out: *mut SaSimilarity) -> SaStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = sim_to_c(&umeyama(&pairs_arg(src, dst, n)?)?);
        Ok(())
    })
}

/// Unregularized anisotropic fit.
///
/// # Safety
/// `src` and `dst` hold `3·n` doubles each.
#[no_mangle]
pub unsafe extern "C" fn sa_anisotropic_svd(src: *const f64, dst: *const f64, n: usize, out: *mut SaAnisotropic) -> SaStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let fit = anisotropic_svd(&pairs_arg(src, dst, n)?)?;
        let t = AnisotropicTransform::new(fit.rotation, fit.translation, fit.scale, splat_align::Mat3::identity())?;
        *out = aniso_to_c(&t);
        Ok(())
    })
}

/// Regularized anisotropic fit with bounded scales; `iterations == 0` keeps the default.
///
/// # Safety
/// `src` and `dst` hold `3·n` doubles each.
#[no_mangle]
pub unsafe extern "C" fn sa_anisotropic_regularized(
    src: *const f64,
    dst: *const f64,
    n: usize,
    iterations: usize,
    out: *mut SaAnisotropic,
) -> SaStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let mut cfg = ShapeSolverConfig::default();
        if iterations > 0 {
            cfg.iterations = iterations;
        }
        *out = aniso_to_c(&anisotropic_regularized(&pairs_arg(src, dst, n)?, &cfg)?.transform);
        Ok(())
    })
}

/// Scale, centroid and multi-start ICP alignment of `gen` onto `par`.
///
/// # Safety
/// Cloud pointers must come from this library.
#[no_mangle]
pub unsafe extern "C" fn sa_coarse_align(gen: *const SaCloud, par: *const SaCloud, seed: u64, out: *mut SaSimilarity) -> SaStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let g = gen.as_ref().ok_or_else(|| null("gen"))?;
        let p = par.as_ref().ok_or_else(|| null("par"))?;
        let c = coarse_align(&g.inner, &p.inner, &Default::default(), seed)?;
        *out = sim_to_c(&c.transform);
        Ok(())
    })
}

/// Halved symmetric mean nearest-neighbour distance.
///
/// # Safety
/// `a` holds `3·na` doubles and `b` holds `3·nb`.
#[no_mangle]
pub unsafe extern "C" fn sa_chamfer(a: *const f64, na: usize, b: *const f64, nb: usize, out: *mut f64) -> SaStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = chamfer(&points_arg(a, na, "a")?, &points_arg(b, nb, "b")?)?;
        Ok(())
    })
}

/// Mean distance under the optimal one-to-one matching of seeded equal-size resamples.
///
/// # Safety
/// `a` holds `3·na` doubles and `b` holds `3·nb`.
#[no_mangle]
pub unsafe extern "C" fn sa_emd(a: *const f64, na: usize, b: *const f64, nb: usize, seed: u64, out: *mut f64) -> SaStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = emd(&points_arg(a, na, "a")?, &points_arg(b, nb, "b")?, seed)?;
        Ok(())
    })
}

unsafe fn run_config(config_path: *const c_char, seed: u64) -> Result<RunConfig, Fail> {
    let path = if config_path.is_null() {
        None
    } else {
        Some(path_arg(config_path, "config_path")?)
    };
    Ok(RunConfig::load(path.as_deref(), &[format!("seed={seed}")])?)
}

/// Generates a scene bundle into `out_dir`; `config_path` may be null for defaults.
///
/// # Safety
/// String arguments must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sa_synth_bundle(config_path: *const c_char, seed: u64, out_dir: *const c_char) -> SaStatus {
    guard(|| {
        let cfg = run_config(config_path, seed)?;
        cli::cmd_synth(&cfg, &path_arg(out_dir, "out_dir")?)?;
        Ok(())
    })
}

/// Aligns object `object` of a bundle and writes the align outputs into `out_dir`.
///
/// # Safety
/// String arguments must be NUL-terminated; `final_residual` may be null.
#[no_mangle]
pub unsafe extern "C" fn sa_align_bundle(
    bundle_dir: *const c_char,
    object: usize,
    config_path: *const c_char,
    seed: u64,
    out_dir: *const c_char,
    final_residual: *mut f64,
) -> SaStatus {
    guard(|| {
        let cfg = run_config(config_path, seed)?;
        let res = cli::cmd_align(&path_arg(bundle_dir, "bundle_dir")?, object, &cfg, &path_arg(out_dir, "out_dir")?)?;
        if let Some(r) = final_residual.as_mut() {
            *r = res.transform.final_residual;
        }
        Ok(())
    })
}
