//! C interface to `depthwarp`.
//!
//! Rasters cross the boundary as opaque handles created by `dw_*_new` or
//! `dw_*_read` and released with the matching `dw_*_free`. Every fallible
//! function returns a [`DwStatus`]; on failure a description is available
//! from [`dw_last_error`] on the same thread. Output handles are written
//! only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use depthwarp::camera::{CameraIntrinsics, Pose};
use depthwarp::complete::{apply_displacement, nearest_valid_field, Completer};
use depthwarp::image::{DepthImage, DisplacementField, PixelMask};
use depthwarp::warp::{dual_warp, warp_depth, WarpConfig};
use depthwarp::{io, metrics, Error};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DwStatus {
    Ok = 0,
    InvalidArgument = 1,
    Format = 2,
    NoValidSource = 3,
    Io = 4,
    NullPointer = 5,
    Panic = 6,
}

/// Depth image in meters, `0` = unknown.
pub struct DwDepth(DepthImage);

/// Binary pixel mask.
pub struct DwMask(PixelMask);

/// Integer displacement field.
pub struct DwField(DisplacementField);

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct DwIntrinsics {
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Rigid transform: `m[0..9]` is the rotation, row-major, `m[9..12]` the
/// translation.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct DwPose {
    pub m: [f64; 12],
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct DwMaskedErrors {
    pub mean: f64,
    pub median: f64,
    pub count: usize,
    pub excluded_unknown_pred: usize,
    pub excluded_unknown_truth: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(DwStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::InvalidArgument(_) => DwStatus::InvalidArgument,
            Error::Format(_) => DwStatus::Format,
            Error::NoValidSource(_) => DwStatus::NoValidSource,
            Error::Io(_) => DwStatus::Io,
        };
        Fail(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DwStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            DwStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(DwStatus::NullPointer, format!("{what} is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut *mut T, what: &str) -> Result<&'a mut *mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<String, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Fail(DwStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

fn camera(k: &DwIntrinsics) -> Result<CameraIntrinsics, Fail> {
    Ok(CameraIntrinsics::new(k.f, k.cx, k.cy)?)
}

fn pose(p: &DwPose) -> Result<Pose, Fail> {
    Ok(Pose::from_row_major(&p.m)?)
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Copies `width * height` depths from `data`.
///
/// # Safety
/// `data` must point to `width * height` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dw_depth_new(width: usize, height: usize, data: *const f32, out: *mut *mut DwDepth) -> DwStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if data.is_null() {
            return Err(null("data"));
        }
        let n = width
            .checked_mul(height)
            .ok_or_else(|| Fail(DwStatus::InvalidArgument, "image too large".into()))?;
        let img = DepthImage::new(width, height, std::slice::from_raw_parts(data, n).to_vec())?;
        *out = boxed(DwDepth(img));
        Ok(())
    })
}

/// # Safety
/// `img` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dw_depth_free(img: *mut DwDepth) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

/// # Safety
/// `img` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dw_depth_width(img: *const DwDepth) -> usize {
    img.as_ref().map_or(0, |i| i.0.width())
}

/// # Safety
/// `img` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dw_depth_height(img: *const DwDepth) -> usize {
    img.as_ref().map_or(0, |i| i.0.height())
}

/// Row-major depths, valid while the handle lives.
///
/// # Safety
/// `img` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dw_depth_data(img: *const DwDepth) -> *const f32 {
    img.as_ref().map_or(ptr::null(), |i| i.0.data().as_ptr())
}

/// Reads a raw (`DPM1`) depth file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dw_depth_read(path: *const c_char, out: *mut *mut DwDepth) -> DwStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let img = io::read_depth_raw(path_arg(path)?)?;
        *out = boxed(DwDepth(img));
        Ok(())
    })
}

/// Writes a raw (`DPM1`) depth file.
///
/// # Safety
/// `img` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dw_depth_write(img: *const DwDepth, path: *const c_char) -> DwStatus {
    guard(|| {
        let img = borrow(img, "img")?;
        io::write_depth_raw(path_arg(path)?, &img.0)?;
        Ok(())
    })
}

/// Builds a mask from `width * height` bytes, nonzero = set.
///
/// # Safety
/// `bits` must point to `width * height` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dw_mask_new(width: usize, height: usize, bits: *const u8, out: *mut *mut DwMask) -> DwStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if bits.is_null() {
            return Err(null("bits"));
        }
        let n = width
            .checked_mul(height)
            .ok_or_else(|| Fail(DwStatus::InvalidArgument, "mask too large".into()))?;
        let bits = std::slice::from_raw_parts(bits, n).iter().map(|b| *b != 0).collect();
        *out = boxed(DwMask(PixelMask::new(width, height, bits)?));
        Ok(())
    })
}

/// # Safety
/// `mask` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dw_mask_free(mask: *mut DwMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// Number of set pixels.
///
/// # Safety
/// `mask` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dw_mask_count(mask: *const DwMask) -> usize {
    mask.as_ref().map_or(0, |m| m.0.count())
}

/// Copies the mask into `dst` as bytes `1`/`0`; `len` must equal
/// `width * height`.
///
/// # Safety
/// `mask` must be a live handle; `dst` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn dw_mask_copy(mask: *const DwMask, dst: *mut u8, len: usize) -> DwStatus {
    guard(|| {
        let mask = borrow(mask, "mask")?;
        if dst.is_null() {
            return Err(null("dst"));
        }
        let bits = mask.0.bits();
        if len != bits.len() {
            return Err(Fail(DwStatus::InvalidArgument, format!("buffer holds {len} pixels, mask has {}", bits.len())));
        }
        let dst = std::slice::from_raw_parts_mut(dst, len);
        for (d, b) in dst.iter_mut().zip(bits) {
            *d = *b as u8;
        }
        Ok(())
    })
}

/// Reads a displacement field (`DFL1`).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dw_field_read(path: *const c_char, out: *mut *mut DwField) -> DwStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = boxed(DwField(io::read_flow(path_arg(path)?)?));
        Ok(())
    })
}

/// # Safety
/// `field` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dw_field_free(field: *mut DwField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Forward warp with z-buffering at the given supersampling factor.
///
/// # Safety
/// Pointers must be live handles or valid structs; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dw_warp(
    src: *const DwDepth,
    k: *const DwIntrinsics,
    pose_: *const DwPose,
    supersample: usize,
    out: *mut *mut DwDepth,
) -> DwStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let img = warp_depth(
            &borrow(src, "src")?.0,
            &camera(borrow(k, "k")?)?,
            &pose(borrow(pose_, "pose")?)?,
            &WarpConfig::with_supersample(supersample),
        )?;
        *out = boxed(DwDepth(img));
        Ok(())
    })
}

/// Warps to `pose` and back; returns the occluded image and the mask of
/// pixels lost on the way.
///
/// # Safety
/// Pointers must be live handles or valid structs; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn dw_dual_warp(
    src: *const DwDepth,
    k: *const DwIntrinsics,
    pose_: *const DwPose,
    supersample: usize,
    out_occluded: *mut *mut DwDepth,
    out_mask: *mut *mut DwMask,
) -> DwStatus {
    guard(|| {
        let out_occluded = out_ptr(out_occluded, "out_occluded")?;
        let out_mask = out_ptr(out_mask, "out_mask")?;
        let dual = dual_warp(
            &borrow(src, "src")?.0,
            &camera(borrow(k, "k")?)?,
            &pose(borrow(pose_, "pose")?)?,
            &WarpConfig::with_supersample(supersample),
        )?;
        *out_occluded = boxed(DwDepth(dual.occluded));
        *out_mask = boxed(DwMask(dual.mask));
        Ok(())
    })
}

/// Fills unknown mask pixels from their nearest known pixel.
///
/// # Safety
/// Pointers must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dw_complete_nearest(
    occluded: *const DwDepth,
    mask: *const DwMask,
    out: *mut *mut DwDepth,
) -> DwStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let done = Completer::Nearest.complete(&borrow(occluded, "occluded")?.0, &borrow(mask, "mask")?.0)?;
        *out = boxed(DwDepth(done.depth));
        Ok(())
    })
}

/// Applies a displacement field. `unresolved` (optional) receives the number
/// of mask pixels whose source was unknown.
///
/// # Safety
/// Pointers must be live handles; `out` must be writable; `unresolved` may
/// be null.
#[no_mangle]
pub unsafe extern "C" fn dw_apply_displacement(
    occluded: *const DwDepth,
    mask: *const DwMask,
    field: *const DwField,
    out: *mut *mut DwDepth,
    unresolved: *mut usize,
) -> DwStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let done =
            apply_displacement(&borrow(occluded, "occluded")?.0, &borrow(mask, "mask")?.0, &borrow(field, "field")?.0)?;
        if let Some(u) = unresolved.as_mut() {
            *u = done.unresolved.count();
        }
        *out = boxed(DwDepth(done.depth));
        Ok(())
    })
}

/// Nearest-known-pixel displacement field for the mask.
///
/// # Safety
/// Pointers must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dw_nearest_field(
    occluded: *const DwDepth,
    mask: *const DwMask,
    out: *mut *mut DwField,
) -> DwStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let field = nearest_valid_field(&borrow(occluded, "occluded")?.0, &borrow(mask, "mask")?.0)?;
        *out = boxed(DwField(field));
        Ok(())
    })
}

/// Mean and median absolute error over the mask.
///
/// # Safety
/// Pointers must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dw_masked_errors(
    pred: *const DwDepth,
    truth: *const DwDepth,
    mask: *const DwMask,
    out: *mut DwMaskedErrors,
) -> DwStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let e = metrics::masked_errors(&borrow(pred, "pred")?.0, &borrow(truth, "truth")?.0, &borrow(mask, "mask")?.0)?;
        *out = DwMaskedErrors {
            mean: e.mean,
            median: e.median,
            count: e.count,
            excluded_unknown_pred: e.excluded_unknown_pred,
            excluded_unknown_truth: e.excluded_unknown_truth,
        };
        Ok(())
    })
}
