//! Homogeneous camera math.
//!
//! Frames used throughout the crate:
//!
//! * camera: x right, y down, z forward (optical axis);
//! * ego: x forward, y left, z up, attached to the vehicle at one timestamp;
//! * global: the world frame an [`EgoPose`] maps into.
//!
//! A [`CameraModel`] carries a pinhole intrinsic and an ego→camera extrinsic.
//! An [`EgoPose`] carries the ego→global transform of one frame.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A 3-D point in meters. The frame is implied by context.
pub type Point3 = nalgebra::Point3<f64>;

/// Points closer than this to the principal plane are treated as behind the camera.
pub const DEPTH_EPS: f64 = 1e-6;

/// Tolerance on `RᵀR = I` when validating rigid transforms.
pub const RIGID_TOL: f64 = 1e-9;

/// Smallest accepted `d_max - d_min` for depth anchors, in meters.
pub const MIN_DEPTH_RANGE: f64 = 1e-3;

/// Sub-pixel image coordinate: `u` along the width, `v` along the height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
}

impl PixelCoord {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &PixelCoord) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// A validated 4×4 rigid transform (proper rotation plus translation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform(Matrix4<f64>);

impl RigidTransform {
    pub fn identity() -> Self {
        Self(Matrix4::identity())
    }

    /// Validates `m`: finite, last row `(0,0,0,1)`, orthonormal rotation block
    /// with determinant `+1`.
    pub fn new(m: Matrix4<f64>) -> Result<Self> {
        if m.iter().any(|x| !x.is_finite()) {
            return invalid("transform has non-finite entries");
        }
        if m[(3, 0)] != 0.0 || m[(3, 1)] != 0.0 || m[(3, 2)] != 0.0 || m[(3, 3)] != 1.0 {
            return invalid("last row of a rigid transform must be (0, 0, 0, 1)");
        }
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > RIGID_TOL {
            return invalid(format!("rotation block is not orthonormal (|RᵀR - I| = {err:e})"));
        }
        if r.determinant() <= 0.0 {
            return invalid("rotation block is a reflection");
        }
        Ok(Self(m))
    }

    pub fn from_rotation_translation(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Self::new(m)
    }

    /// Parses 16 row-major numbers.
    pub fn from_row_slice(values: &[f64]) -> Result<Self> {
        if values.len() != 16 {
            return invalid(format!("expected 16 matrix entries, got {}", values.len()));
        }
        Self::new(Matrix4::from_row_slice(values))
    }

    pub fn translation(x: f64, y: f64, z: f64) -> Self {
        let mut m = Matrix4::identity();
        m[(0, 3)] = x;
        m[(1, 3)] = y;
        m[(2, 3)] = z;
        Self(m)
    }

    /// Rotation about the z axis by `yaw` radians followed by a translation.
    pub fn from_yaw_translation(yaw: f64, translation: Vector3<f64>) -> Self {
        let (s, c) = yaw.sin_cos();
        let mut m = Matrix4::identity();
        m[(0, 0)] = c;
        m[(0, 1)] = -s;
        m[(1, 0)] = s;
        m[(1, 1)] = c;
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation_vector(&self) -> Vector3<f64> {
        self.0.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Closed-form inverse `[Rᵀ | -Rᵀt]`.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation().transpose();
        let t = -(rt * self.translation_vector());
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Self(m)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self(self.0 * other.0)
    }

    pub fn is_identity(&self) -> bool {
        self.0 == Matrix4::identity()
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        let r = self.rotation();
        Point3::from(r * p.coords + self.translation_vector())
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * v
    }

    pub fn to_row_vec(&self) -> Vec<f64> {
        self.0.transpose().iter().copied().collect()
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Parses a row-major 3×3 matrix; skew must be zero.
    pub fn from_row_slice(values: &[f64]) -> Result<Self> {
        if values.len() != 9 {
            return Err(Error::InvalidCamera(format!("expected 9 intrinsic entries, got {}", values.len())));
        }
        if values[1] != 0.0 || values[3] != 0.0 || values[6] != 0.0 || values[7] != 0.0 || values[8] != 1.0 {
            return Err(Error::InvalidCamera(
                "intrinsic must have the form [fx 0 cx; 0 fy cy; 0 0 1]".into(),
            ));
        }
        Ok(Self { fx: values[0], fy: values[4], cx: values[2], cy: values[5] })
    }
}

/// A pinhole camera of a rig: intrinsics, ego→camera extrinsic and image size.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    intrinsics: Intrinsics,
    extrinsic: RigidTransform,
    width: u32,
    height: u32,
    view_id: String,
}

impl CameraModel {
    pub fn new(
        intrinsics: Intrinsics,
        extrinsic: RigidTransform,
        image_size: (u32, u32),
        view_id: impl Into<String>,
    ) -> Result<Self> {
        let (width, height) = image_size;
        let Intrinsics { fx, fy, cx, cy } = intrinsics;
        if width == 0 || height == 0 {
            return Err(Error::InvalidCamera("image size must be non-zero".into()));
        }
        if !(fx.is_finite() && fy.is_finite() && fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidCamera(format!("focal lengths must be positive (fx={fx}, fy={fy})")));
        }
        if !(cx >= 0.0 && cx < width as f64 && cy >= 0.0 && cy < height as f64) {
            return Err(Error::InvalidCamera(format!(
                "principal point ({cx}, {cy}) outside the {width}x{height} image"
            )));
        }
        Ok(Self { intrinsics, extrinsic, width, height, view_id: view_id.into() })
    }

    /// Builds a camera from a raw 4×4 extrinsic, reporting non-rigid input as an invalid camera.
    pub fn from_matrices(
        intrinsics: Intrinsics,
        extrinsic: Matrix4<f64>,
        image_size: (u32, u32),
        view_id: impl Into<String>,
    ) -> Result<Self> {
        let extrinsic = RigidTransform::new(extrinsic).map_err(|e| Error::InvalidCamera(e.to_string()))?;
        Self::new(intrinsics, extrinsic, image_size, view_id)
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn extrinsic(&self) -> &RigidTransform {
        &self.extrinsic
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn view_id(&self) -> &str {
        &self.view_id
    }

    /// The 3×3 intrinsic embedded in a 4×4 with identity fourth row and column.
    pub fn padded_intrinsic(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.intrinsics.matrix());
        m
    }

    /// Composed ego→image matrix `pad(K) · extrinsic`.
    pub fn projection_matrix(&self) -> Matrix4<f64> {
        self.padded_intrinsic() * self.extrinsic.matrix()
    }

    /// Camera center in ego coordinates.
    pub fn center(&self) -> Point3 {
        Point3::from(self.extrinsic.inverse().translation_vector())
    }

    /// Same camera observed at a `width × height` grid: intrinsics rescaled by
    /// `width / image_width` and `height / image_height`.
    pub fn scaled_to(&self, width: u32, height: u32) -> CameraModel {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        let k = &self.intrinsics;
        CameraModel {
            intrinsics: Intrinsics { fx: k.fx * sx, fy: k.fy * sy, cx: k.cx * sx, cy: k.cy * sy },
            extrinsic: self.extrinsic,
            width,
            height,
            view_id: self.view_id.clone(),
        }
    }

    pub fn contains(&self, p: &PixelCoord) -> bool {
        p.u >= 0.0 && p.u < self.width as f64 && p.v >= 0.0 && p.v < self.height as f64
    }

    /// Camera-frame point at depth `d` (z = d) along the ray of pixel `p`.
    pub fn unproject_camera(&self, p: &PixelCoord, d: f64) -> Point3 {
        let k = &self.intrinsics;
        Point3::new(d * (p.u - k.cx) / k.fx, d * (p.v - k.cy) / k.fy, d)
    }

    /// Perspective division of a camera-frame point. No validity check.
    pub fn project_camera(&self, pc: &Point3) -> PixelCoord {
        let k = &self.intrinsics;
        PixelCoord::new(k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy)
    }
}

/// Ego→global transform of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EgoPose {
    matrix: RigidTransform,
    frame_index: i64,
}

impl EgoPose {
    pub fn new(matrix: RigidTransform, frame_index: i64) -> Self {
        Self { matrix, frame_index }
    }

    pub fn from_matrix(matrix: Matrix4<f64>, frame_index: i64) -> Result<Self> {
        let matrix = RigidTransform::new(matrix).map_err(|e| Error::InvalidPose(e.to_string()))?;
        Ok(Self { matrix, frame_index })
    }

    pub fn identity(frame_index: i64) -> Self {
        Self::new(RigidTransform::identity(), frame_index)
    }

    pub fn transform(&self) -> &RigidTransform {
        &self.matrix
    }

    pub fn frame_index(&self) -> i64 {
        self.frame_index
    }
}

/// Ordered depth anchors used to lift a pixel into 3-D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthAnchors {
    values: Vec<f64>,
    d_min: f64,
    d_max: f64,
}

impl DepthAnchors {
    /// Accepts any positive, strictly increasing sequence whose gaps do not shrink.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return invalid("at least one depth anchor is required");
        }
        if values.iter().any(|d| !d.is_finite() || *d <= 0.0) {
            return invalid("depth anchors must be positive and finite");
        }
        for w in values.windows(2) {
            if w[1] <= w[0] {
                return invalid("depth anchors must be strictly increasing");
            }
        }
        for w in values.windows(3) {
            let (g0, g1) = (w[1] - w[0], w[2] - w[1]);
            if g1 < g0 - 1e-12 * w[2] {
                return invalid("depth anchor gaps must be non-decreasing");
            }
        }
        let d_min = values[0];
        let d_max = values[values.len() - 1];
        Ok(Self { values, d_min, d_max })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    /// Index of the anchor closest to `depth`; the lower anchor wins ties.
    pub fn nearest(&self, depth: f64) -> usize {
        let mut best = 0;
        for (i, d) in self.values.iter().enumerate() {
            if (d - depth).abs() < (self.values[best] - depth).abs() {
                best = i;
            }
        }
        best
    }
}

/// Linear-increasing depth discretization:
/// `d_i = d_min + (d_max - d_min) · i(i+1) / (D(D+1))` for `i = 1..=D`.
pub fn make_lid_anchors(d_min: f64, d_max: f64, count: usize) -> Result<DepthAnchors> {
    if !(d_min.is_finite() && d_min > 0.0) {
        return invalid(format!("d_min must be positive, got {d_min}"));
    }
    if count < 2 {
        return invalid(format!("at least 2 depth anchors are required, got {count}"));
    }
    if !(d_max.is_finite() && d_max - d_min >= MIN_DEPTH_RANGE) {
        return invalid(format!(
            "d_max must exceed d_min by at least {MIN_DEPTH_RANGE} m (d_min={d_min}, d_max={d_max})"
        ));
    }
    let denom = (count * (count + 1)) as f64;
    let mut values: Vec<f64> = (1..=count)
        .map(|i| d_min + (d_max - d_min) * (i * (i + 1)) as f64 / denom)
        .collect();
    values[count - 1] = d_max;
    Ok(DepthAnchors { values, d_min, d_max })
}

/// Result of projecting an ego-frame point into a camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Image position; meaningless (possibly non-finite) when the point is behind the camera.
    pub pixel: PixelCoord,
    /// Camera-frame z.
    pub depth: f64,
    pub valid: bool,
}

/// Lifts pixel `p` to the ego-frame point at camera depth `d`.
pub fn back_project(p: &PixelCoord, cam: &CameraModel, d: f64) -> Result<Point3> {
    if !(d.is_finite() && d > 0.0) {
        return invalid(format!("depth must be positive, got {d}"));
    }
    if !(p.u.is_finite() && p.v.is_finite()) {
        return invalid("pixel coordinates must be finite");
    }
    let k = cam.intrinsics();
    if k.fx * k.fy == 0.0 {
        return Err(Error::InvalidCamera("singular intrinsic".into()));
    }
    let pc = cam.unproject_camera(p, d);
    Ok(cam.extrinsic().inverse().transform_point(&pc))
}

/// Projects an ego-frame point; see [`Projection`] for the validity rule.
pub fn project(point: &Point3, cam: &CameraModel) -> Projection {
    let pc = cam.extrinsic().transform_point(point);
    let pixel = cam.project_camera(&pc);
    let valid = pc.z > DEPTH_EPS && cam.contains(&pixel);
    Projection { pixel, depth: pc.z, valid }
}

/// Ego(t)→ego(k) transform `E_k⁻¹ · E_t`; exactly the identity when the poses are equal.
pub fn relative_pose(e_t: &EgoPose, e_k: &EgoPose) -> RigidTransform {
    if e_t.transform() == e_k.transform() {
        RigidTransform::identity()
    } else {
        e_k.transform().inverse().compose(e_t.transform())
    }
}

/// Moves an ego point of frame `t` into the ego frame of frame `k`.
pub fn transfer_point(point: &Point3, e_t: &EgoPose, e_k: &EgoPose) -> Point3 {
    let rel = relative_pose(e_t, e_k);
    if rel.is_identity() {
        *point
    } else {
        rel.transform_point(point)
    }
}
