//! Camera models, frustum clipping, depth-tested alpha compositing and
//! rotation-only time warp.

mod rig;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::imaging::sample_bilinear;
use crate::mask::ProbMask;
use crate::tensor::ImageTensor;

pub use rig::{Camera, CameraRig};

/// Pinhole intrinsics in pixels plus clip distances in metres.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl Intrinsics {
    /// Centred principal point and square pixels from a horizontal FOV.
    pub fn from_hfov(width: usize, height: usize, hfov_deg: f64, near: f64, far: f64) -> Self {
        let fx = width as f64 / (2.0 * (hfov_deg.to_radians() / 2.0).tan());
        Self {
            fx,
            fy: fx,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            near,
            far,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.near, self.far]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Config(format!("focal lengths must be positive: {self:?}")));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::Config(format!(
                "clip planes need 0 < near < far, got {} and {}",
                self.near, self.far
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("sensor size must be nonzero".into()));
        }
        Ok(())
    }

    pub fn k(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn hfov(&self) -> f64 {
        2.0 * (self.width as f64 / (2.0 * self.fx)).atan()
    }

    pub fn vfov(&self) -> f64 {
        2.0 * (self.height as f64 / (2.0 * self.fy)).atan()
    }

    pub fn viewport(&self) -> Rect {
        Rect {
            x0: 0.0,
            y0: 0.0,
            x1: self.width as f64,
            y1: self.height as f64,
        }
    }
}

/// Rigid camera-to-world transform. Camera axes: x right, y down, z forward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        validate_rotation(&rotation)?;
        Ok(Self { rotation, translation })
    }

    pub fn validate(&self) -> Result<()> {
        validate_rotation(&self.rotation)
    }

    pub fn to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }
}

pub fn validate_rotation(r: &Matrix3<f64>) -> Result<()> {
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    let det = r.determinant();
    if !(ortho <= 1e-6 && (det - 1.0).abs() <= 1e-6) {
        return Err(Error::Invalid(format!(
            "not a rotation: |RᵀR − I| = {ortho:.2e}, det = {det:.6}"
        )));
    }
    Ok(())
}

/// Rotation about the camera's vertical (y) axis.
pub fn yaw(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Rotation about the camera's horizontal (x) axis.
pub fn pitch(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Normalized depth range written by [`projection`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DepthConvention {
    /// near → 0, far → 1.
    #[default]
    Standard,
    /// near → 1, far → 0.
    Reversed,
}

/// Camera-space point to clip space; after the perspective divide x and y
/// span `[−1, 1]` across the sensor and depth follows `conv`.
pub fn projection(intr: &Intrinsics, conv: DepthConvention) -> Result<Matrix4<f64>> {
    intr.validate()?;
    let (w, h) = (intr.width as f64, intr.height as f64);
    let (n, f) = (intr.near, intr.far);
    let (a, b) = match conv {
        DepthConvention::Standard => (f / (f - n), -f * n / (f - n)),
        DepthConvention::Reversed => (-n / (f - n), f * n / (f - n)),
    };
    Ok(Matrix4::new(
        2.0 * intr.fx / w,
        0.0,
        2.0 * intr.cx / w - 1.0,
        0.0,
        0.0,
        2.0 * intr.fy / h,
        2.0 * intr.cy / h - 1.0,
        0.0,
        0.0,
        0.0,
        a,
        b,
        0.0,
        0.0,
        1.0,
        0.0,
    ))
}

/// Pixel coordinates and normalized depth of a camera-space point, or
/// `None` behind the camera.
pub fn project(intr: &Intrinsics, conv: DepthConvention, p: &Vector3<f64>) -> Result<Option<(f64, f64, f64)>> {
    let m = projection(intr, conv)?;
    let clip = m * Vector4::new(p.x, p.y, p.z, 1.0);
    if clip.w <= 0.0 {
        return Ok(None);
    }
    let ndc = clip.xyz() / clip.w;
    let u = (ndc.x + 1.0) / 2.0 * intr.width as f64;
    let v = (ndc.y + 1.0) / 2.0 * intr.height as f64;
    Ok(Some((u, v, ndc.z)))
}

/// Inverse of [`project`].
pub fn unproject(intr: &Intrinsics, conv: DepthConvention, u: f64, v: f64, depth: f64) -> Result<Vector3<f64>> {
    let m = projection(intr, conv)?;
    let inv = m
        .try_inverse()
        .ok_or_else(|| Error::Invalid("projection matrix is singular".into()))?;
    let ndc = Vector4::new(
        2.0 * u / intr.width as f64 - 1.0,
        2.0 * v / intr.height as f64 - 1.0,
        depth,
        1.0,
    );
    let p = inv * ndc;
    Ok(p.xyz() / p.w)
}

/// Axis-aligned rectangle `[x0, x1) × [y0, y1)` in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub const EMPTY: Rect = Rect {
        x0: 0.0,
        y0: 0.0,
        x1: 0.0,
        y1: 0.0,
    };

    pub fn is_empty(&self) -> bool {
        !(self.x1 > self.x0 && self.y1 > self.y0)
    }

    pub fn width(&self) -> f64 {
        (self.x1 - self.x0).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y1 - self.y0).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersect(&self, o: &Rect) -> Rect {
        let r = Rect {
            x0: self.x0.max(o.x0),
            y0: self.y0.max(o.y0),
            x1: self.x1.min(o.x1),
            y1: self.y1.min(o.y1),
        };
        if r.is_empty() {
            Rect::EMPTY
        } else {
            r
        }
    }

    /// Whether the pixel centre `(x + 0.5, y + 0.5)` lies inside.
    pub fn contains_pixel(&self, x: usize, y: usize) -> bool {
        let (u, v) = (x as f64 + 0.5, y as f64 + 0.5);
        u >= self.x0 && u < self.x1 && v >= self.y0 && v < self.y1
    }
}

/// Distance in front of the zed camera at which the video plane sits.
pub const VIDEO_PLANE_DISTANCE: f64 = 1.0;

/// Bounding rectangle of the zed image corners on the video plane,
/// projected into the eye camera. Corners behind the eye are ignored.
fn zed_quad_in_eye(zed: &Camera, eye: &Camera, plane_distance: f64) -> Option<Rect> {
    let zi = &zed.intrinsics;
    let corners = [
        (0.0, 0.0),
        (zi.width as f64, 0.0),
        (0.0, zi.height as f64),
        (zi.width as f64, zi.height as f64),
    ];
    let mut r = Rect {
        x0: f64::INFINITY,
        y0: f64::INFINITY,
        x1: f64::NEG_INFINITY,
        y1: f64::NEG_INFINITY,
    };
    let mut any = false;
    for (u, v) in corners {
        let p_zed = Vector3::new((u - zi.cx) / zi.fx, (v - zi.cy) / zi.fy, 1.0) * plane_distance;
        let p_eye = eye.pose.to_camera(&zed.pose.to_world(&p_zed));
        if p_eye.z <= 0.0 {
            continue;
        }
        let ei = &eye.intrinsics;
        let eu = ei.fx * p_eye.x / p_eye.z + ei.cx;
        let ev = ei.fy * p_eye.y / p_eye.z + ei.cy;
        r.x0 = r.x0.min(eu);
        r.x1 = r.x1.max(eu);
        r.y0 = r.y0.min(ev);
        r.y1 = r.y1.max(ev);
        any = true;
    }
    any.then_some(r)
}

/// Region of the eye image where zed video can be shown.
pub fn frustum_overlap(zed: &Camera, eye: &Camera) -> Rect {
    frustum_overlap_at(zed, eye, VIDEO_PLANE_DISTANCE)
}

pub fn frustum_overlap_at(zed: &Camera, eye: &Camera, plane_distance: f64) -> Rect {
    match zed_quad_in_eye(zed, eye, plane_distance) {
        Some(r) => r.intersect(&eye.intrinsics.viewport()),
        None => Rect::EMPTY,
    }
}

/// Fraction of the reprojected zed image that lands inside the eye viewport.
pub fn zed_coverage(zed: &Camera, eye: &Camera) -> f64 {
    match zed_quad_in_eye(zed, eye, VIDEO_PLANE_DISTANCE) {
        Some(r) if r.area() > 0.0 => r.intersect(&eye.intrinsics.viewport()).area() / r.area(),
        _ => 0.0,
    }
}

/// Zed pixel hit by the ray through eye pixel `(u, v)` on the video plane.
pub fn eye_to_zed_pixel(zed: &Camera, eye: &Camera, u: f64, v: f64, plane_distance: f64) -> Option<(f64, f64)> {
    let ei = &eye.intrinsics;
    let zi = &zed.intrinsics;
    let dir_eye = Vector3::new((u - ei.cx) / ei.fx, (v - ei.cy) / ei.fy, 1.0);
    let origin = zed.pose.to_camera(&eye.pose.translation);
    let dir = zed.pose.rotation.transpose() * (eye.pose.rotation * dir_eye);
    if dir.z <= 1e-12 {
        return None;
    }
    let t = (plane_distance - origin.z) / dir.z;
    if t <= 0.0 {
        return None;
    }
    let p = origin + dir * t;
    Some((zi.fx * p.x / p.z + zi.cx, zi.fy * p.y / p.z + zi.cy))
}

/// Per-pixel depth in metres; non-finite or non-positive values are
/// invalid and treated as infinitely far.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(
                "DepthMap::new",
                format!("{} values for {height}x{width}", data.len()),
            ));
        }
        Ok(Self { height, width, data })
    }

    pub fn constant(height: usize, width: usize, depth: f32) -> Self {
        Self {
            height,
            width,
            data: vec![depth; height * width],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Depth with invalid samples mapped to `+∞`.
    #[inline]
    pub fn effective(&self, i: usize) -> f32 {
        let d = self.data[i];
        if d.is_finite() && d > 0.0 {
            d
        } else {
            f32::INFINITY
        }
    }
}

/// Registered layers for one eye.
#[derive(Clone, Copy, Debug)]
pub struct CompositeInputs<'a> {
    pub video: &'a ImageTensor,
    pub prob: &'a ProbMask,
    pub video_depth: &'a DepthMap,
    pub virtual_rgb: &'a ImageTensor,
    pub virtual_depth: &'a DepthMap,
}

/// Where the video is at least as close as the virtual scene, blend
/// `α·video + (1 − α)·virtual` with `α` the person probability; elsewhere
/// show the virtual scene.
pub fn alpha_composite(inputs: &CompositeInputs<'_>) -> Result<ImageTensor> {
    let (h, w) = inputs.prob.dims();
    let dims_ok = inputs.video.shape() == (3, h, w)
        && inputs.virtual_rgb.shape() == (3, h, w)
        && inputs.video_depth.dims() == (h, w)
        && inputs.virtual_depth.dims() == (h, w);
    if !dims_ok {
        return Err(Error::shape(
            "alpha_composite",
            format!(
                "video {:?}, prob {:?}, virtual {:?}, depths {:?}/{:?}",
                inputs.video.shape(),
                inputs.prob.dims(),
                inputs.virtual_rgb.shape(),
                inputs.video_depth.dims(),
                inputs.virtual_depth.dims()
            ),
        ));
    }
    let n = h * w;
    let mut out = inputs.virtual_rgb.clone();
    let prob = inputs.prob.data();
    for i in 0..n {
        if inputs.video_depth.effective(i) <= inputs.virtual_depth.effective(i) {
            let a = prob[i];
            for c in 0..3 {
                let v = inputs.video.data()[c * n + i];
                let r = inputs.virtual_rgb.data()[c * n + i];
                out.data_mut()[c * n + i] = a * v + (1.0 - a) * r;
            }
        }
    }
    Ok(out)
}

fn relative_rotation(r_capture: &Matrix3<f64>, r_display: &Matrix3<f64>) -> Matrix3<f64> {
    r_capture.transpose() * r_display
}

fn is_identity(r: &Matrix3<f64>) -> bool {
    (r - Matrix3::identity()).abs().max() <= 1e-12
}

/// Capture-frame pixel sampled by display pixel `(u, v)`, both in
/// pixel-centre coordinates. Rotations are camera-to-world orientations.
pub fn warp_source(
    intr: &Intrinsics,
    r_capture: &Matrix3<f64>,
    r_display: &Matrix3<f64>,
    u: f64,
    v: f64,
) -> Result<(f64, f64)> {
    let rel = relative_rotation(r_capture, r_display);
    if is_identity(&rel) {
        return Ok((u, v));
    }
    let k = intr.k();
    let k_inv = k
        .try_inverse()
        .ok_or_else(|| Error::Invalid("intrinsic matrix is singular".into()))?;
    let hm = k * rel * k_inv;
    let p = hm * Vector3::new(u, v, 1.0);
    Ok((p.x / p.z, p.y / p.z))
}

/// Re-renders a frame captured at orientation `r_capture` as seen from
/// `r_display` (rotation only, bilinear, black outside the capture).
pub fn time_warp(
    frame: &ImageTensor,
    intr: &Intrinsics,
    r_capture: &Matrix3<f64>,
    r_display: &Matrix3<f64>,
) -> Result<ImageTensor> {
    validate_rotation(r_capture)?;
    validate_rotation(r_display)?;
    if !(intr.fx > 0.0 && intr.fy > 0.0 && intr.fx.is_finite() && intr.fy.is_finite()) {
        return Err(Error::Invalid("intrinsic matrix is singular".into()));
    }
    let rel = relative_rotation(r_capture, r_display);
    if is_identity(&rel) {
        return Ok(frame.clone());
    }
    let hm = intr.k() * rel * intr.k().try_inverse().expect("checked focal lengths");
    let (c, h, w) = frame.shape();
    let mut out = ImageTensor::zeros(c, h, w);
    for y in 0..h {
        for x in 0..w {
            let p = hm * Vector3::new(x as f64, y as f64, 1.0);
            if p.z <= 0.0 {
                continue;
            }
            let (sx, sy) = (p.x / p.z, p.y / p.z);
            for ch in 0..c {
                out.set(ch, y, x, sample_bilinear(frame.plane(ch), w, h, sx, sy, 0.0));
            }
        }
    }
    Ok(out)
}

/// Capture-to-display delay: the stage times summed.
pub fn latency_budget(capture_ms: f64, prep_ms: f64, inference_ms: f64) -> Result<f64> {
    for (name, v) in [("capture", capture_ms), ("prep", prep_ms), ("inference", inference_ms)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Invalid(format!("{name} time must be non-negative, got {v}")));
        }
    }
    Ok(capture_ms + prep_ms + inference_ms)
}
