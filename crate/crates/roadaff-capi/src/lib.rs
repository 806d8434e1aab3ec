//! C ABI over the affordance pipeline. Callers hold opaque handles, every
//! fallible call returns a status code, and the message for the most
//! recent failure on the current thread is kept for
//! [`roadaff_last_error`]. The matching header lives in include/roadaff.h.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use roadaff::annotation::{project_pose, CameraModel};
use roadaff::config::{apply_override, PipelineConfig};
use roadaff::net::loss::{total_loss, total_loss_grads, ViewTargets};
use roadaff::pipeline::run_pipeline;
use roadaff::trajectory::Pose;
use roadaff::Error;

/// Outcome of a call. Anything but `Ok` leaves a message for
/// `roadaff_last_error`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoadaffStatus {
    /// The call succeeded.
    Ok = 0,
    /// The configuration is malformed or inconsistent.
    Config = 1,
    /// A pipeline stage failed; artifacts before it are still on disk.
    Stage = 2,
    /// A null pointer, bad UTF-8, or out-of-domain argument.
    Arg = 3,
    /// Any other failure (I/O, numeric, internal).
    Runtime = 4,
}

/// Weighted loss over the three heads, mirroring the training objective.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RoadaffLossBreakdown {
    pub multilabel: f64,
    pub distance: f64,
    pub top1: f64,
    pub total: f64,
}

/// Opaque run configuration; create, tweak, then hand to the pipeline.
pub struct RoadaffConfig {
    inner: PipelineConfig,
}

/// Opaque pinhole camera for ground-point projection.
pub struct RoadaffCamera {
    inner: CameraModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: RoadaffStatus, msg: &str) -> RoadaffStatus {
    let owned = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = owned);
    status
}

fn fail_with(err: &Error) -> RoadaffStatus {
    let status = match err {
        Error::InvalidConfig(_) => RoadaffStatus::Config,
        Error::Stage { .. } => RoadaffStatus::Stage,
        Error::InvalidLabel(_) => RoadaffStatus::Arg,
        _ => RoadaffStatus::Runtime,
    };
    fail(status, &err.to_string())
}

fn guard_status<F: FnOnce() -> RoadaffStatus>(f: F) -> RoadaffStatus {
    catch_unwind(AssertUnwindSafe(f))
        .unwrap_or_else(|_| fail(RoadaffStatus::Runtime, "internal panic"))
}

fn guard_ptr<T, F: FnOnce() -> *mut T>(f: F) -> *mut T {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| {
        fail(RoadaffStatus::Runtime, "internal panic");
        std::ptr::null_mut()
    })
}

/// Unwrap a converted argument or return its failure status.
macro_rules! try_arg {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

/// Borrow a NUL-terminated UTF-8 string from the caller.
unsafe fn c_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, RoadaffStatus> {
    if ptr.is_null() {
        return Err(fail(RoadaffStatus::Arg, &format!("{what} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(RoadaffStatus::Arg, &format!("{what} is not UTF-8")))
}

unsafe fn slice3<'a>(ptr: *const f64, what: &str) -> Result<&'a [f64; 3], RoadaffStatus> {
    if ptr.is_null() {
        return Err(fail(RoadaffStatus::Arg, &format!("{what} is null")));
    }
    Ok(&*(ptr as *const [f64; 3]))
}

unsafe fn labels3<'a>(ptr: *const i8, what: &str) -> Result<&'a [i8; 3], RoadaffStatus> {
    if ptr.is_null() {
        return Err(fail(RoadaffStatus::Arg, &format!("{what} is null")));
    }
    Ok(&*(ptr as *const [i8; 3]))
}

/// Library version as a static NUL-terminated string. Never null; do not
/// free.
#[no_mangle]
pub extern "C" fn roadaff_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message from the most recent failing call on this thread, empty if
/// none. The pointer stays valid until the next failing call on the same
/// thread; do not free.
#[no_mangle]
pub extern "C" fn roadaff_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Free a string returned by this library (currently only
/// `roadaff_config_to_toml`). Accepts null.
#[no_mangle]
pub unsafe extern "C" fn roadaff_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// New configuration holding the built-in defaults. Free with
/// `roadaff_config_free`.
#[no_mangle]
pub extern "C" fn roadaff_config_new() -> *mut RoadaffConfig {
    guard_ptr(|| {
        Box::into_raw(Box::new(RoadaffConfig {
            inner: PipelineConfig::default(),
        }))
    })
}

/// Load a configuration from a TOML file; missing keys keep their
/// defaults. Null on failure (see `roadaff_last_error`).
#[no_mangle]
pub unsafe extern "C" fn roadaff_config_load(path: *const c_char) -> *mut RoadaffConfig {
    guard_ptr(|| {
        let path = match c_str(path, "path") {
            Ok(p) => p,
            Err(_) => return std::ptr::null_mut(),
        };
        match PipelineConfig::load(Path::new(path)) {
            Ok(inner) => Box::into_raw(Box::new(RoadaffConfig { inner })),
            Err(e) => {
                fail_with(&e);
                std::ptr::null_mut()
            }
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn roadaff_config_free(cfg: *mut RoadaffConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Set one namespaced key, e.g. ("hdphmm.kappa", "30") or
/// ("net.lr", "1e-3"). Unknown keys and unparseable values fail.
#[no_mangle]
pub unsafe extern "C" fn roadaff_config_set(
    cfg: *mut RoadaffConfig,
    key: *const c_char,
    value: *const c_char,
) -> RoadaffStatus {
    guard_status(|| {
        let Some(cfg) = cfg.as_mut() else {
            return fail(RoadaffStatus::Arg, "config handle is null");
        };
        let key = try_arg!(c_str(key, "key"));
        let value = try_arg!(c_str(value, "value"));
        match apply_override(&mut cfg.inner, key, value) {
            Ok(()) => RoadaffStatus::Ok,
            Err(e) => fail_with(&e),
        }
    })
}

/// Set the global seed every stage derives its randomness from.
#[no_mangle]
pub unsafe extern "C" fn roadaff_config_set_seed(
    cfg: *mut RoadaffConfig,
    seed: u64,
) -> RoadaffStatus {
    guard_status(|| match cfg.as_mut() {
        Some(cfg) => {
            cfg.inner.seed = seed;
            RoadaffStatus::Ok
        }
        None => fail(RoadaffStatus::Arg, "config handle is null"),
    })
}

/// Set the directory artifacts are read from and written to.
#[no_mangle]
pub unsafe extern "C" fn roadaff_config_set_workspace(
    cfg: *mut RoadaffConfig,
    path: *const c_char,
) -> RoadaffStatus {
    guard_status(|| {
        let Some(cfg) = cfg.as_mut() else {
            return fail(RoadaffStatus::Arg, "config handle is null");
        };
        match c_str(path, "path") {
            Ok(p) => {
                cfg.inner.workspace = PathBuf::from(p);
                RoadaffStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// Check cross-field consistency (the same check the pipeline runs first).
#[no_mangle]
pub unsafe extern "C" fn roadaff_config_validate(cfg: *const RoadaffConfig) -> RoadaffStatus {
    guard_status(|| match cfg.as_ref() {
        Some(cfg) => match cfg.inner.validate() {
            Ok(()) => RoadaffStatus::Ok,
            Err(e) => fail_with(&e),
        },
        None => fail(RoadaffStatus::Arg, "config handle is null"),
    })
}

/// Serialize the configuration to TOML. Free the result with
/// `roadaff_string_free`. Null on failure.
#[no_mangle]
pub unsafe extern "C" fn roadaff_config_to_toml(cfg: *const RoadaffConfig) -> *mut c_char {
    guard_ptr(|| {
        let Some(cfg) = cfg.as_ref() else {
            fail(RoadaffStatus::Arg, "config handle is null");
            return std::ptr::null_mut();
        };
        let text = match toml::to_string(&cfg.inner) {
            Ok(t) => t,
            Err(e) => {
                fail(RoadaffStatus::Runtime, &e.to_string());
                return std::ptr::null_mut();
            }
        };
        match CString::new(text) {
            Ok(s) => s.into_raw(),
            Err(_) => {
                fail(RoadaffStatus::Runtime, "serialized config contains NUL");
                std::ptr::null_mut()
            }
        }
    })
}

/// New camera with the default mounting and intrinsics. Free with
/// `roadaff_camera_free`.
#[no_mangle]
pub extern "C" fn roadaff_camera_new() -> *mut RoadaffCamera {
    guard_ptr(|| {
        Box::into_raw(Box::new(RoadaffCamera {
            inner: CameraModel::default(),
        }))
    })
}

/// New camera copying the `[camera]` block of a configuration. Null on
/// failure.
#[no_mangle]
pub unsafe extern "C" fn roadaff_camera_from_config(
    cfg: *const RoadaffConfig,
) -> *mut RoadaffCamera {
    guard_ptr(|| match cfg.as_ref() {
        Some(cfg) => Box::into_raw(Box::new(RoadaffCamera {
            inner: cfg.inner.camera.clone(),
        })),
        None => {
            fail(RoadaffStatus::Arg, "config handle is null");
            std::ptr::null_mut()
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn roadaff_camera_free(cam: *mut RoadaffCamera) {
    if !cam.is_null() {
        drop(Box::from_raw(cam));
    }
}

/// Project a ground point given in the vehicle frame (meters forward,
/// meters to the left) into pixel coordinates. Fails with `Arg` when the
/// point is behind the camera or outside the image.
#[no_mangle]
pub unsafe extern "C" fn roadaff_camera_project(
    cam: *const RoadaffCamera,
    forward_m: f64,
    left_m: f64,
    out_u: *mut f64,
    out_v: *mut f64,
) -> RoadaffStatus {
    guard_status(|| {
        let Some(cam) = cam.as_ref() else {
            return fail(RoadaffStatus::Arg, "camera handle is null");
        };
        if out_u.is_null() || out_v.is_null() {
            return fail(RoadaffStatus::Arg, "output pointer is null");
        }
        let ego = Pose::new(0.0, 0.0, 0.0, 0.0);
        let target = Pose::new(forward_m, left_m, 0.0, 0.0);
        match project_pose(&cam.inner, &ego, &target) {
            Some((u, v)) => {
                *out_u = u;
                *out_v = v;
                RoadaffStatus::Ok
            }
            None => fail(RoadaffStatus::Arg, "point does not project into the image"),
        }
    })
}

/// Weighted training loss for one view's pooled outputs.
///
/// `scores` and `distances` are the three per-class head outputs;
/// `labels` holds -1 (absent), 0 (unknown), +1 (present) per class;
/// `top1` is all zeros (no forced choice) or one +1 with -1 elsewhere;
/// `dist_targets` are meters. Classes with label 0 contribute nothing to
/// the presence term.
#[no_mangle]
pub unsafe extern "C" fn roadaff_affordance_loss(
    scores: *const f64,
    distances: *const f64,
    labels: *const i8,
    top1: *const i8,
    dist_targets: *const f64,
    w_multilabel: f64,
    w_distance: f64,
    w_top1: f64,
    out: *mut RoadaffLossBreakdown,
) -> RoadaffStatus {
    guard_status(|| {
        if out.is_null() {
            return fail(RoadaffStatus::Arg, "output pointer is null");
        }
        let f = try_arg!(slice3(scores, "scores"));
        let d = try_arg!(slice3(distances, "distances"));
        let targets = ViewTargets {
            multilabel: *try_arg!(labels3(labels, "labels")),
            distance: *try_arg!(slice3(dist_targets, "dist_targets")),
            top1: *try_arg!(labels3(top1, "top1")),
        };
        match total_loss(f, d, &targets, (w_multilabel, w_distance, w_top1)) {
            Ok(b) => {
                *out = RoadaffLossBreakdown {
                    multilabel: b.multilabel,
                    distance: b.distance,
                    top1: b.top1,
                    total: b.total,
                };
                RoadaffStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Gradients of `roadaff_affordance_loss` with respect to the score and
/// distance heads; each output holds three values.
#[no_mangle]
pub unsafe extern "C" fn roadaff_affordance_loss_grads(
    scores: *const f64,
    distances: *const f64,
    labels: *const i8,
    top1: *const i8,
    dist_targets: *const f64,
    w_multilabel: f64,
    w_distance: f64,
    w_top1: f64,
    out_score_grad: *mut f64,
    out_dist_grad: *mut f64,
) -> RoadaffStatus {
    guard_status(|| {
        if out_score_grad.is_null() || out_dist_grad.is_null() {
            return fail(RoadaffStatus::Arg, "output pointer is null");
        }
        let f = try_arg!(slice3(scores, "scores"));
        let d = try_arg!(slice3(distances, "distances"));
        let targets = ViewTargets {
            multilabel: *try_arg!(labels3(labels, "labels")),
            distance: *try_arg!(slice3(dist_targets, "dist_targets")),
            top1: *try_arg!(labels3(top1, "top1")),
        };
        match total_loss_grads(f, d, &targets, (w_multilabel, w_distance, w_top1)) {
            Ok((gf, gd)) => {
                std::ptr::copy_nonoverlapping(gf.as_ptr(), out_score_grad, 3);
                std::ptr::copy_nonoverlapping(gd.as_ptr(), out_dist_grad, 3);
                RoadaffStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Run every pipeline stage with this configuration, writing artifacts
/// into its workspace. Blocks until done; `Stage` reports which artifacts
/// exist via the manifest either way.
#[no_mangle]
pub unsafe extern "C" fn roadaff_pipeline_run(cfg: *const RoadaffConfig) -> RoadaffStatus {
    guard_status(|| match cfg.as_ref() {
        Some(cfg) => match run_pipeline(&cfg.inner) {
            Ok(_) => RoadaffStatus::Ok,
            Err(e) => fail_with(&e),
        },
        None => fail(RoadaffStatus::Arg, "config handle is null"),
    })
}
