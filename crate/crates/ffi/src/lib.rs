//! C ABI for loading a trained checkpoint and running detection.
//!
//! Every fallible function returns an [`SsdposeStatus`]. On failure, a
//! description is available from [`ssdpose_last_error`] on the same thread.
//! Models are opaque handles created by [`ssdpose_model_load`] and released
//! with [`ssdpose_model_free`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ssdpose::anchors::{iou, BoxGeom};
use ssdpose::inference::{detect, merge_bins, DetectConfig};
use ssdpose::io::Checkpoint;
use ssdpose::net::{Network, PoseSharing};
use ssdpose::raster::Raster;
use ssdpose::targets::pose_bin;
use ssdpose::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsdposeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Checkpoint = 4,
    Shape = 5,
    NonFinite = 6,
    /// The output buffer is too small; the required count was written.
    BufferTooSmall = 7,
    Panic = 8,
}

/// Axis-aligned box in normalized image coordinates.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsdposeBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsdposeDetection {
    /// Object class, starting at 0.
    pub class_id: u32,
    pub score: f64,
    pub box_: SsdposeBox,
    pub pose_bin: u32,
    pub pose_conf: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SsdposeModelInfo {
    pub input_size: u32,
    pub input_channels: u32,
    pub n_classes: u32,
    pub n_pose_bins: u32,
    /// 0 = one pose head shared by all classes, 1 = one per class.
    pub pose_separate: u32,
    pub n_default_boxes: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsdposeDetectParams {
    pub score_thresh: f64,
    pub nms_iou: f64,
    pub top_k: u32,
}

/// Opaque model handle.
pub struct SsdposeModel {
    net: Network<f32>,
    detect: DetectConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SsdposeStatus {
    match e {
        Error::Shape { .. } => SsdposeStatus::Shape,
        Error::InvalidArgument(_) | Error::Config(_) | Error::Data(_) => {
            SsdposeStatus::InvalidArgument
        }
        Error::NonFinite(_) => SsdposeStatus::NonFinite,
        Error::Checkpoint(_) => SsdposeStatus::Checkpoint,
        Error::Io { .. } | Error::Image { .. } => SsdposeStatus::Io,
        Error::AlreadyBackpropagated => SsdposeStatus::InvalidArgument,
    }
}

/// Run `f`, translating errors and panics into status codes.
fn guard<F>(f: F) -> SsdposeStatus
where
    F: FnOnce() -> Result<(), (SsdposeStatus, String)>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SsdposeStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SsdposeStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (SsdposeStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (SsdposeStatus, String) {
    (SsdposeStatus::NullPointer, format!("{name} is null"))
}

fn invalid(msg: String) -> (SsdposeStatus, String) {
    (SsdposeStatus::InvalidArgument, msg)
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ssdpose_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ssdpose_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Load a checkpoint file. On success `*out` owns a new handle.
#[no_mangle]
pub unsafe extern "C" fn ssdpose_model_load(
    path: *const c_char,
    out: *mut *mut SsdposeModel,
) -> SsdposeStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not UTF-8".into()))?;
        let ck = Checkpoint::load(Path::new(path)).map_err(lib_err)?;
        let model = Box::new(SsdposeModel {
            detect: ck.config.detect,
            net: ck.net,
        });
        *out = Box::into_raw(model);
        Ok(())
    })
}

/// Release a handle. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ssdpose_model_free(model: *mut SsdposeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[no_mangle]
pub unsafe extern "C" fn ssdpose_model_info(
    model: *const SsdposeModel,
    out: *mut SsdposeModelInfo,
) -> SsdposeStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let net = &m.net;
        *out = SsdposeModelInfo {
            input_size: net.spec.input_size as u32,
            input_channels: net.spec.input_channels as u32,
            n_classes: net.head.n_classes as u32,
            n_pose_bins: net.head.n_pose_bins as u32,
            pose_separate: (net.head.pose_sharing == PoseSharing::Separate) as u32,
            n_default_boxes: net.defaults().len() as u32,
        };
        Ok(())
    })
}

/// Detection thresholds stored in the checkpoint.
#[no_mangle]
pub unsafe extern "C" fn ssdpose_model_detect_params(
    model: *const SsdposeModel,
    out: *mut SsdposeDetectParams,
) -> SsdposeStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = SsdposeDetectParams {
            score_thresh: m.detect.score_thresh,
            nms_iou: m.detect.nms_iou,
            top_k: m.detect.top_k as u32,
        };
        Ok(())
    })
}

/// Detect objects in a planar (channel, row, column) float image with
/// values in `[0, 1]`. Its size must match the model input. `params` may
/// be null to use the checkpoint's thresholds.
///
/// Writes up to `capacity` detections to `out` and the total count to
/// `*out_count`. When the total exceeds `capacity`, nothing is written to
/// `out` and `BufferTooSmall` is returned.
#[no_mangle]
pub unsafe extern "C" fn ssdpose_detect(
    model: *const SsdposeModel,
    pixels: *const f32,
    channels: usize,
    height: usize,
    width: usize,
    params: *const SsdposeDetectParams,
    out: *mut SsdposeDetection,
    capacity: usize,
    out_count: *mut usize,
) -> SsdposeStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if pixels.is_null() {
            return Err(null("pixels"));
        }
        if out_count.is_null() {
            return Err(null("out_count"));
        }
        let n = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| invalid("image size overflows".into()))?;
        let data = std::slice::from_raw_parts(pixels, n).to_vec();
        let spec = &m.net.spec;
        let expected = [spec.input_channels, spec.input_size, spec.input_size];
        if [channels, height, width] != expected {
            return Err(lib_err(Error::shape("image", &[channels, height, width], &expected)));
        }
        let image = Raster::from_data(channels, height, width, data).map_err(lib_err)?;
        let cfg = match params.as_ref() {
            Some(p) => DetectConfig {
                score_thresh: p.score_thresh,
                nms_iou: p.nms_iou,
                top_k: p.top_k as usize,
            },
            None => m.detect,
        };
        let preds = m.net.predict(&image).map_err(lib_err)?;
        let dets = detect(&preds, m.net.defaults(), &m.net.head, &cfg).map_err(lib_err)?;
        *out_count = dets.len();
        if dets.len() > capacity {
            return Err((
                SsdposeStatus::BufferTooSmall,
                format!("{} detections do not fit in {capacity}", dets.len()),
            ));
        }
        if !dets.is_empty() && out.is_null() {
            return Err(null("out"));
        }
        for (i, d) in dets.iter().enumerate() {
            let [xmin, ymin, xmax, ymax] = d.box_.corners();
            *out.add(i) = SsdposeDetection {
                class_id: d.class_id as u32,
                score: d.score,
                box_: SsdposeBox {
                    xmin,
                    ymin,
                    xmax,
                    ymax,
                },
                pose_bin: d.pose_bin as u32,
                pose_conf: d.pose_conf,
            };
        }
        Ok(())
    })
}

/// Centered pose bin of an azimuth in degrees.
#[no_mangle]
pub unsafe extern "C" fn ssdpose_pose_bin(
    azimuth_deg: f64,
    n_bins: u32,
    out: *mut u32,
) -> SsdposeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if n_bins == 0 || !azimuth_deg.is_finite() {
            return Err(invalid(format!(
                "need a finite azimuth and n_bins > 0, got {azimuth_deg} and {n_bins}"
            )));
        }
        *out = pose_bin(azimuth_deg, n_bins as usize) as u32;
        Ok(())
    })
}

/// Coarse bin containing the center of a fine bin.
#[no_mangle]
pub unsafe extern "C" fn ssdpose_merge_bins(
    fine_bin: u32,
    n_fine: u32,
    n_coarse: u32,
    out: *mut u32,
) -> SsdposeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = merge_bins(fine_bin as usize, n_fine as usize, n_coarse as usize)
            .map_err(lib_err)? as u32;
        Ok(())
    })
}

/// Intersection over union; 0 when either box is degenerate or null.
#[no_mangle]
pub unsafe extern "C" fn ssdpose_iou(a: *const SsdposeBox, b: *const SsdposeBox) -> f64 {
    match (a.as_ref(), b.as_ref()) {
        (Some(a), Some(b)) => iou(
            &BoxGeom::from_corners(a.xmin, a.ymin, a.xmax, a.ymax),
            &BoxGeom::from_corners(b.xmin, b.ymin, b.xmax, b.ymax),
        ),
        _ => 0.0,
    }
}
