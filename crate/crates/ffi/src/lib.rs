//! C ABI over `svo-core`.
//!
//! Every fallible function returns an [`SvoStatus`]; on failure a
//! description is available from [`svo_last_error_message`] on the same
//! thread. Handles are opaque and must be released with their `_free`
//! function. Panics never cross the boundary; they surface as
//! `SVO_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use svo_core::correlation::TrackerProvider;
use svo_core::eval::{ate_rmse, AlignMode, Trajectory};
use svo_core::geometry::{Intrinsics, Pose};
use svo_core::image::Image;
use svo_core::saliency::{salient_score_map, select_salient_patches, SelectionConfig};
use svo_core::vo_pipeline::{OdometryState, PipelineConfig};
use svo_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SvoStatus {
    Ok = 0,
    NullPointer = 1,
    /// A size, count or enum argument is out of range.
    InvalidArgument = 2,
    InvalidConfig = 3,
    Io = 4,
    Format = 5,
    /// A numerical failure: singular system, degenerate geometry and the like.
    Numerical = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SvoAlign {
    Sim3 = 0,
    Se3 = 1,
    None = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SvoIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// A timestamped world-from-camera pose; the quaternion is Hamilton, xyzw.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SvoPose {
    pub timestamp: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    pub qw: f64,
}

/// Opaque odometry session fed one grayscale frame at a time.
pub struct SvoOdometry {
    state: OdometryState,
    iterations: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> SvoStatus {
    match e {
        Error::Config(_) | Error::InvalidIntrinsics(_) => SvoStatus::InvalidConfig,
        Error::Io { .. } => SvoStatus::Io,
        Error::Parse { .. } | Error::Format(_) | Error::MagicMismatch { .. } | Error::NonMonotoneTimestamps { .. } => {
            SvoStatus::Format
        }
        Error::AngleNearPi { .. }
        | Error::BehindCamera { .. }
        | Error::SingularSystem { .. }
        | Error::NoValidEdges
        | Error::DegenerateGeometry(_)
        | Error::DegenerateHomography { .. } => SvoStatus::Numerical,
        _ => SvoStatus::InvalidArgument,
    }
}

struct Failure(SvoStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SvoStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(SvoStatus::InvalidArgument, msg.into())
}

/// Runs `f`, recording any error or panic for `svo_last_error_message`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SvoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SvoStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            SvoStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be null or point to `len` readable elements.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

fn gray_image(pixels: &[f32], width: usize, height: usize) -> Result<Image, Failure> {
    let expected = width
        .checked_mul(height)
        .ok_or_else(|| invalid("image dimensions overflow"))?;
    if pixels.len() != expected {
        return Err(invalid(format!(
            "expected {expected} pixels for {width}x{height}, got {}",
            pixels.len()
        )));
    }
    Ok(Image::from_data(width, height, 1, pixels.to_vec())?)
}

fn to_svo_pose(t: f64, p: &Pose) -> SvoPose {
    let tr = p.translation();
    let q = p.rotation();
    SvoPose {
        timestamp: t,
        tx: tr.x,
        ty: tr.y,
        tz: tr.z,
        qx: q.i,
        qy: q.j,
        qz: q.k,
        qw: q.w,
    }
}

fn to_trajectory(poses: &[SvoPose]) -> Result<Trajectory, Failure> {
    let entries = poses
        .iter()
        .map(|p| Ok((p.timestamp, Pose::from_components([p.tx, p.ty, p.tz], [p.qx, p.qy, p.qz, p.qw])?)))
        .collect::<Result<Vec<_>, Failure>>()?;
    Ok(Trajectory::from_entries(entries)?)
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn svo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn svo_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Creates an odometry session using the correlation tracker.
///
/// `config_json` is a pipeline configuration object (null for defaults);
/// `seed` drives patch sampling.
///
/// # Safety
/// Pointers must be null or valid; `config_json` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn svo_odometry_new(
    config_json: *const c_char,
    seed: u64,
    intrinsics: *const SvoIntrinsics,
    width: usize,
    height: usize,
    out: *mut *mut SvoOdometry,
) -> SvoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let k = intrinsics.as_ref().ok_or_else(|| null("intrinsics"))?;
        if width == 0 || height == 0 {
            return Err(invalid(format!("image size {width}x{height} is empty")));
        }
        let mut config = if config_json.is_null() {
            PipelineConfig::default()
        } else {
            let text = CStr::from_ptr(config_json)
                .to_str()
                .map_err(|_| Failure(SvoStatus::InvalidConfig, "config is not UTF-8".into()))?;
            serde_json::from_str(text).map_err(|e| Failure(SvoStatus::InvalidConfig, e.to_string()))?
        };
        config.seed = seed;
        config.validate()?;
        let intrinsics = Intrinsics::new(k.fx, k.fy, k.cx, k.cy)?;
        let state = OdometryState::new(config, intrinsics, width, height, Arc::new(TrackerProvider))?;
        *out = Box::into_raw(Box::new(SvoOdometry {
            state,
            iterations: config.iterations,
        }));
        Ok(())
    })
}

/// Adds one grayscale frame (row-major, `width * height` intensities in
/// [0, 255]) and runs the configured number of update iterations.
///
/// # Safety
/// `handle` must come from `svo_odometry_new`; `pixels` must hold `len` floats.
#[no_mangle]
pub unsafe extern "C" fn svo_odometry_add_frame(handle: *mut SvoOdometry, pixels: *const f32, len: usize) -> SvoStatus {
    guard(|| {
        let odo = handle.as_mut().ok_or_else(|| null("handle"))?;
        let pixels = slice(pixels, len, "pixels")?;
        let (w, h) = odo.state.image_size();
        let image = gray_image(pixels, w, h)?;
        odo.state.add_frame(&image)?;
        if odo.state.frames().len() >= 2 {
            odo.state.iterate(odo.iterations)?;
        }
        odo.state.prune();
        Ok(())
    })
}

/// Number of frames added so far, 0 for a null handle.
///
/// # Safety
/// `handle` must be null or come from `svo_odometry_new`.
#[no_mangle]
pub unsafe extern "C" fn svo_odometry_frame_count(handle: *const SvoOdometry) -> usize {
    handle.as_ref().map_or(0, |o| o.state.frame_counter())
}

/// Copies the trajectory (one pose per frame, timestamps are frame
/// indices) into `out`. `written` receives the pose count; pass a null
/// `out` to query it. A too small `capacity` fails with
/// `SVO_STATUS_INVALID_ARGUMENT` and still reports the count.
///
/// # Safety
/// `out` must be null or hold `capacity` poses; `written` must be valid.
#[no_mangle]
pub unsafe extern "C" fn svo_odometry_trajectory(
    handle: *const SvoOdometry,
    out: *mut SvoPose,
    capacity: usize,
    written: *mut usize,
) -> SvoStatus {
    guard(|| {
        let odo = handle.as_ref().ok_or_else(|| null("handle"))?;
        let written = written.as_mut().ok_or_else(|| null("written"))?;
        let traj = odo.state.trajectory();
        *written = traj.len();
        if out.is_null() {
            return Ok(());
        }
        if capacity < traj.len() {
            return Err(invalid(format!("capacity {capacity} < {} poses", traj.len())));
        }
        for (i, (t, p)) in traj.entries().iter().enumerate() {
            *out.add(i) = to_svo_pose(*t, p);
        }
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or come from `svo_odometry_new`, and not be used after.
#[no_mangle]
pub unsafe extern "C" fn svo_odometry_free(handle: *mut SvoOdometry) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Absolute trajectory error (RMSE, metres) after alignment.
///
/// # Safety
/// `est` and `gt` must hold `n_est` and `n_gt` poses; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn svo_ate_rmse(
    est: *const SvoPose,
    n_est: usize,
    gt: *const SvoPose,
    n_gt: usize,
    align: SvoAlign,
    out: *mut f64,
) -> SvoStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let est = to_trajectory(slice(est, n_est, "est")?)?;
        let gt = to_trajectory(slice(gt, n_gt, "gt")?)?;
        let mode = match align {
            SvoAlign::Sim3 => AlignMode::Sim3,
            SvoAlign::Se3 => AlignMode::Se3,
            SvoAlign::None => AlignMode::None,
        };
        *out = ate_rmse(&est, &gt, mode)?;
        Ok(())
    })
}

/// Selects up to `count` salient patch centers in a grayscale image and
/// writes them as pixel `(x, y)` pairs into `out_xy` (room for `2 * count`
/// doubles), best first. `written` receives the number of centers.
///
/// # Safety
/// `pixels` must hold `width * height` floats, `out_xy` `2 * count` doubles.
#[no_mangle]
pub unsafe extern "C" fn svo_select_patches(
    pixels: *const f32,
    width: usize,
    height: usize,
    count: usize,
    out_xy: *mut f64,
    written: *mut usize,
) -> SvoStatus {
    guard(|| {
        let written = written.as_mut().ok_or_else(|| null("written"))?;
        *written = 0;
        if count == 0 {
            return Err(invalid("count must be positive"));
        }
        if out_xy.is_null() {
            return Err(null("out_xy"));
        }
        let n = width.checked_mul(height).ok_or_else(|| invalid("image dimensions overflow"))?;
        let image = gray_image(slice(pixels, n, "pixels")?, width, height)?;
        let config = PipelineConfig::default();
        let features = svo_core::correlation::extract_features(&image, &config.features)?;
        let scores = salient_score_map(&features)?;
        let selection = select_salient_patches(
            &scores,
            &SelectionConfig {
                count,
                ..SelectionConfig::default()
            },
        )?;
        let stride = features.stride() as f64;
        for (i, c) in selection.centers.iter().enumerate() {
            *out_xy.add(2 * i) = c.col as f64 * stride;
            *out_xy.add(2 * i + 1) = c.row as f64 * stride;
        }
        *written = selection.centers.len();
        Ok(())
    })
}
