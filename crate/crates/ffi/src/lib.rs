//! C ABI over `poseforge`.
//!
//! Every function returns a [`PfStatus`]. On failure the message is kept
//! per thread and can be read with [`pf_last_error`]. Handles are opaque
//! and must be released with their matching `pf_*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::Matrix3;
use poseforge::camera::{fit_camera, CameraModel, FitConfig};
use poseforge::formats::PoseDocument;
use poseforge::layout::{build_plan, plan_to_json, LayoutDims, RotaryParams, TokenPlan};
use poseforge::motion::{motion_speed, SpeedNormalization};
use poseforge::renderer::{render_sequence, RasterFrame, RenderStyle};
use poseforge::skeleton::{KeypointKind, Keypoints2D, PoseFrame, SkeletonTopology, Vec2, Vec3};
use poseforge::Error;

/// Result of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PfStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Dimension = 3,
    Config = 4,
    Schema = 5,
    InvalidRoot = 6,
    BehindCamera = 7,
    Underdetermined = 8,
    Degenerate = 9,
    TooFewFrames = 10,
    Empty = 11,
    Io = 12,
    Json = 13,
    Png = 14,
    OutOfRange = 15,
    Panic = 16,
}

impl From<&Error> for PfStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Dimension(_) => PfStatus::Dimension,
            Error::Config(_) => PfStatus::Config,
            Error::Schema(_) => PfStatus::Schema,
            Error::InvalidRoot(_) => PfStatus::InvalidRoot,
            Error::BehindCamera(_) => PfStatus::BehindCamera,
            Error::Underdetermined { .. } => PfStatus::Underdetermined,
            Error::Degenerate(_) => PfStatus::Degenerate,
            Error::TooFewFrames(_) => PfStatus::TooFewFrames,
            Error::Empty(_) => PfStatus::Empty,
            Error::Io { .. } => PfStatus::Io,
            Error::Json(_) => PfStatus::Json,
            Error::Png(_) => PfStatus::Png,
        }
    }
}

/// General camera: `uv = (M p)_xy / (M p)_z + offset`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PfCamera {
    /// Row-major 3x3 matrix.
    pub matrix: [f64; 9],
    pub offset: [f64; 2],
    pub width: u32,
    pub height: u32,
}

impl From<&PfCamera> for CameraModel {
    fn from(c: &PfCamera) -> Self {
        CameraModel {
            matrix: Matrix3::from_row_slice(&c.matrix),
            pixel_offset: Vec2::new(c.offset[0], c.offset[1]),
            image_size: (c.width, c.height),
        }
    }
}

impl From<&CameraModel> for PfCamera {
    fn from(c: &CameraModel) -> Self {
        let mut matrix = [0.0; 9];
        for r in 0..3 {
            for col in 0..3 {
                matrix[3 * r + col] = c.matrix[(r, col)];
            }
        }
        PfCamera {
            matrix,
            offset: [c.pixel_offset.x, c.pixel_offset.y],
            width: c.image_size.0,
            height: c.image_size.1,
        }
    }
}

/// A parsed pose document with its resolved topology.
pub struct PfPose {
    doc: PoseDocument,
    topology: SkeletonTopology,
}

/// Rendered frames of one pose document.
pub struct PfRaster {
    frames: Vec<RasterFrame>,
}

/// A token layout plan.
pub struct PfPlan {
    plan: TokenPlan,
    positions: Vec<f64>,
    mask: Vec<u8>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

struct Failure(PfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(PfStatus::from(&e), format!("{}: {e}", e.code()))
    }
}

fn null(name: &str) -> Failure {
    Failure(PfStatus::NullArgument, format!("{name} is null"))
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> PfStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PfStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PfStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PfStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(PfStatus::Json, "output contains a NUL byte".into()))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn pf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn pf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Projects one 3D point (mm, camera frame) to pixels.
///
/// # Safety
/// `xyz` must point to 3 doubles and `uv` to 2 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pf_project(
    camera: *const PfCamera,
    xyz: *const f64,
    uv: *mut f64,
) -> PfStatus {
    guard(|| {
        let cam = CameraModel::from(handle(camera, "camera")?);
        if xyz.is_null() || uv.is_null() {
            return Err(null("xyz or uv"));
        }
        let p = std::slice::from_raw_parts(xyz, 3);
        let q = cam.project(&Vec3::new(p[0], p[1], p[2]))?;
        *uv = q.x;
        *uv.add(1) = q.y;
        Ok(())
    })
}

/// Fits a camera mapping `count` 3D joints onto 2D points. `valid` may be
/// null (all valid). Writes the camera and the mean pixel residual.
///
/// # Safety
/// `joints` holds `3 * count` doubles, `points` `2 * count`, `valid` (if not
/// null) `count` bytes.
#[no_mangle]
pub unsafe extern "C" fn pf_fit_camera(
    joints: *const f64,
    points: *const f64,
    valid: *const u8,
    count: usize,
    camera: *mut PfCamera,
    mean_residual: *mut f64,
) -> PfStatus {
    guard(|| {
        if joints.is_null() || points.is_null() {
            return Err(null("joints or points"));
        }
        let camera = out(camera, "camera")?;
        let j = std::slice::from_raw_parts(joints, 3 * count);
        let p = std::slice::from_raw_parts(points, 2 * count);
        let mask: Vec<bool> = if valid.is_null() {
            vec![true; count]
        } else {
            std::slice::from_raw_parts(valid, count)
                .iter()
                .map(|&v| v != 0)
                .collect()
        };
        let frame = PoseFrame::new(
            j.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect(),
            mask.clone(),
        );
        let target = Keypoints2D::new(
            KeypointKind::Body,
            p.chunks(2).map(|c| Vec2::new(c[0], c[1])).collect(),
            mask,
        );
        let (cam, report) = fit_camera(&frame, &target, &FitConfig::default())?;
        *camera = PfCamera::from(&cam);
        if let Some(m) = mean_residual.as_mut() {
            let used: Vec<f64> = report
                .per_joint_residual
                .iter()
                .flatten()
                .copied()
                .collect();
            *m = used.iter().sum::<f64>() / used.len().max(1) as f64;
        }
        Ok(())
    })
}

/// Parses a pose document (JSON text, built-in topologies only).
///
/// # Safety
/// `json` must be a NUL-terminated string; `pose` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pf_pose_from_json(
    json: *const c_char,
    pose: *mut *mut PfPose,
) -> PfStatus {
    guard(|| {
        let slot = out(pose, "pose")?;
        let doc = PoseDocument::from_json(text(json, "json")?)?;
        let topology = doc.check(None)?;
        *slot = Box::into_raw(Box::new(PfPose { doc, topology }));
        Ok(())
    })
}

/// # Safety
/// `pose` must be valid; `count` writable.
#[no_mangle]
pub unsafe extern "C" fn pf_pose_subject_count(pose: *const PfPose, count: *mut usize) -> PfStatus {
    guard(|| {
        *out(count, "count")? = handle(pose, "pose")?.doc.subjects.len();
        Ok(())
    })
}

/// Frame count of subject `index` in file order.
///
/// # Safety
/// `pose` must be valid; `count` writable.
#[no_mangle]
pub unsafe extern "C" fn pf_pose_frame_count(
    pose: *const PfPose,
    index: usize,
    count: *mut usize,
) -> PfStatus {
    guard(|| {
        let subject = subject(handle(pose, "pose")?, index)?;
        *out(count, "count")? = subject.frames.len();
        Ok(())
    })
}

fn subject(pose: &PfPose, index: usize) -> Result<&poseforge::skeleton::PoseSequence, Failure> {
    pose.doc.subjects.get(index).ok_or_else(|| {
        Failure(
            PfStatus::OutOfRange,
            format!("subject {index} of {}", pose.doc.subjects.len()),
        )
    })
}

/// # Safety
/// `pose` must come from [`pf_pose_from_json`] or be null.
#[no_mangle]
pub unsafe extern "C" fn pf_pose_free(pose: *mut PfPose) {
    if !pose.is_null() {
        drop(Box::from_raw(pose));
    }
}

/// Root-relative motion speed of subject `index`. `per_transition` selects
/// division by T-1 instead of T.
///
/// # Safety
/// `pose` must be valid; `speed` writable.
#[no_mangle]
pub unsafe extern "C" fn pf_motion_speed(
    pose: *const PfPose,
    index: usize,
    per_transition: bool,
    speed: *mut f64,
) -> PfStatus {
    guard(|| {
        let pose = handle(pose, "pose")?;
        let speed = out(speed, "speed")?;
        let normalization = if per_transition {
            SpeedNormalization::FramesMinusOne
        } else {
            SpeedNormalization::Frames
        };
        *speed = motion_speed(subject(pose, index)?, &pose.topology, normalization)?.motion_speed;
        Ok(())
    })
}

/// Renders every frame of `pose`. `style_json` may be null for defaults.
///
/// # Safety
/// Pointers must be valid; `raster` writable.
#[no_mangle]
pub unsafe extern "C" fn pf_render(
    pose: *const PfPose,
    camera: *const PfCamera,
    style_json: *const c_char,
    raster: *mut *mut PfRaster,
) -> PfStatus {
    guard(|| {
        let pose = handle(pose, "pose")?;
        let cam = CameraModel::from(handle(camera, "camera")?);
        let slot = out(raster, "raster")?;
        let mut style: RenderStyle = if style_json.is_null() {
            RenderStyle::default()
        } else {
            serde_json::from_str(text(style_json, "style_json")?).map_err(Error::from)?
        };
        if style.per_subject_palette.is_empty() {
            style = style.with_subjects(pose.doc.subjects.iter().map(|s| s.subject_id.as_str()));
        }
        let frames = render_sequence(&pose.doc.subjects, &cam, &pose.topology, &style)?;
        *slot = Box::into_raw(Box::new(PfRaster { frames }));
        Ok(())
    })
}

/// # Safety
/// `raster` must be valid; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn pf_raster_info(
    raster: *const PfRaster,
    frames: *mut usize,
    width: *mut u32,
    height: *mut u32,
) -> PfStatus {
    guard(|| {
        let raster = handle(raster, "raster")?;
        *out(frames, "frames")? = raster.frames.len();
        let (w, h) = raster
            .frames
            .first()
            .map_or((0, 0), |f| (f.width, f.height));
        *out(width, "width")? = w;
        *out(height, "height")? = h;
        Ok(())
    })
}

fn frame_of(raster: &PfRaster, index: usize) -> Result<&RasterFrame, Failure> {
    raster.frames.get(index).ok_or_else(|| {
        Failure(
            PfStatus::OutOfRange,
            format!("frame {index} of {}", raster.frames.len()),
        )
    })
}

/// Borrows the interleaved RGB8 bytes of one frame (`3 * width * height`).
/// The pointer lives as long as the raster.
///
/// # Safety
/// `raster` must be valid; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn pf_raster_rgb(
    raster: *const PfRaster,
    index: usize,
    data: *mut *const u8,
    len: *mut usize,
) -> PfStatus {
    guard(|| {
        let frame = frame_of(handle(raster, "raster")?, index)?;
        *out(data, "data")? = frame.rgb.as_ptr();
        *out(len, "len")? = frame.rgb.len();
        Ok(())
    })
}

/// Borrows per-pixel depth in mm (infinity where empty, 0 under overlays).
///
/// # Safety
/// `raster` must be valid; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn pf_raster_depth(
    raster: *const PfRaster,
    index: usize,
    data: *mut *const f32,
    len: *mut usize,
) -> PfStatus {
    guard(|| {
        let frame = frame_of(handle(raster, "raster")?, index)?;
        *out(data, "data")? = frame.depth.as_ptr();
        *out(len, "len")? = frame.depth.len();
        Ok(())
    })
}

/// # Safety
/// `raster` must come from [`pf_render`] or be null.
#[no_mangle]
pub unsafe extern "C" fn pf_raster_free(raster: *mut PfRaster) {
    if !raster.is_null() {
        drop(Box::from_raw(raster));
    }
}

/// Builds the standard layout for `frames` video frames of `height x width`
/// tokens pooled by `ratio`. `shift_w` of 0 keeps the default shift.
///
/// # Safety
/// `plan` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pf_plan_build(
    frames: usize,
    height: usize,
    width: usize,
    ratio: usize,
    with_pose: bool,
    shift_w: usize,
    plan: *mut *mut PfPlan,
) -> PfStatus {
    guard(|| {
        let slot = out(plan, "plan")?;
        let mut dims = LayoutDims::standard(frames, height, width, ratio);
        if !with_pose {
            dims.pose = None;
        }
        if shift_w > 0 {
            dims.shift_w = shift_w;
        }
        let plan = build_plan(&dims)?;
        let positions = plan.positions.iter().flatten().copied().collect();
        let mask = plan.mask.iter().map(|&m| m as u8).collect();
        *slot = Box::into_raw(Box::new(PfPlan {
            plan,
            positions,
            mask,
        }));
        Ok(())
    })
}

/// Borrows the flat `(t, h, w)` positions; `count` receives the token count.
///
/// # Safety
/// `plan` must be valid; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn pf_plan_positions(
    plan: *const PfPlan,
    data: *mut *const f64,
    count: *mut usize,
) -> PfStatus {
    guard(|| {
        let plan = handle(plan, "plan")?;
        *out(data, "data")? = plan.positions.as_ptr();
        *out(count, "count")? = plan.plan.total_tokens();
        Ok(())
    })
}

/// Borrows the conditioning mask, one byte (0 or 1) per token.
///
/// # Safety
/// `plan` must be valid; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn pf_plan_mask(
    plan: *const PfPlan,
    data: *mut *const u8,
    count: *mut usize,
) -> PfStatus {
    guard(|| {
        let plan = handle(plan, "plan")?;
        *out(data, "data")? = plan.mask.as_ptr();
        *out(count, "count")? = plan.mask.len();
        Ok(())
    })
}

/// Serializes the plan with rotary parameters for `head_dim`. Free the
/// result with [`pf_string_free`].
///
/// # Safety
/// `plan` must be valid; `json` writable.
#[no_mangle]
pub unsafe extern "C" fn pf_plan_to_json(
    plan: *const PfPlan,
    head_dim: usize,
    json: *mut *mut c_char,
) -> PfStatus {
    guard(|| {
        let plan = handle(plan, "plan")?;
        let slot = out(json, "json")?;
        let text = plan_to_json(&plan.plan, &RotaryParams::for_head_dim(head_dim))?;
        *slot = into_c_string(text)?;
        Ok(())
    })
}

/// # Safety
/// `plan` must come from [`pf_plan_build`] or be null.
#[no_mangle]
pub unsafe extern "C" fn pf_plan_free(plan: *mut PfPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}
