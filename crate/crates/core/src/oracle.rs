//! Analytic ray-cast renderer used as ground truth for correspondence checks.
//!
//! The scene is a checkered ground plane `z = 0` (global frame) with
//! optional yawed boxes of flat color. Each grid cell casts one ray through
//! its center; there is no antialiasing.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::Box3D;
use crate::correspondence::{CorrespondenceField, Grid};
use crate::error::{invalid, Result};
use crate::feature::{gather_bilinear, FeatureMap};
use crate::geometry::{
    back_project, project, transfer_point, CameraModel, EgoPose, Intrinsics, Point3, RigidTransform, DEPTH_EPS,
};

/// Rig image size `(width, height)`.
pub const RIG_IMAGE_SIZE: (u32, u32) = (400, 224);
/// Mounting height of every rig camera above the ego origin, meters.
pub const RIG_HEIGHT: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    /// Box in global coordinates.
    pub bbox: Box3D,
    pub albedo: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    /// Checker cell edge in meters.
    pub checker_cell: f64,
    pub checker_colors: [[f64; 3]; 2],
    pub sky: [f64; 3],
    pub objects: Vec<SceneObject>,
}

impl Default for SyntheticScene {
    fn default() -> Self {
        Self {
            checker_cell: 2.0,
            checker_colors: [[0.15, 0.15, 0.15], [0.85, 0.85, 0.85]],
            sky: [0.55, 0.7, 0.95],
            objects: Vec::new(),
        }
    }
}

impl SyntheticScene {
    pub fn validate(&self) -> Result<()> {
        if !(self.checker_cell.is_finite() && self.checker_cell > 0.0) {
            return invalid("checker cell must be positive");
        }
        let in_unit = |c: &[f64; 3]| c.iter().all(|v| (0.0..=1.0).contains(v));
        if !self.checker_colors.iter().all(in_unit) || !in_unit(&self.sky) {
            return invalid("colors must lie in [0, 1]");
        }
        for o in &self.objects {
            o.bbox.validate()?;
            if !in_unit(&o.albedo) {
                return invalid("object albedo must lie in [0, 1]");
            }
        }
        Ok(())
    }

    fn checker(&self, x: f64, y: f64) -> [f64; 3] {
        let i = (x / self.checker_cell).floor() as i64;
        let j = (y / self.checker_cell).floor() as i64;
        self.checker_colors[(i + j).rem_euclid(2) as usize]
    }
}

/// Color and camera-frame depth of one rendered view.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    /// `3 × H × W`.
    pub rgb: FeatureMap,
    /// Row-major `H × W`; `+∞` where the ray escapes to the sky.
    pub depth: Vec<f64>,
    pub view_id: String,
    pub frame_index: i64,
}

impl RenderedView {
    pub fn grid(&self) -> Grid {
        Grid::new(self.rgb.height(), self.rgb.width())
    }

    pub fn depth_at(&self, h: usize, w: usize) -> f64 {
        self.depth[h * self.rgb.width() + w]
    }
}

/// Ray parameter where the ray enters the yawed box, if it enters in front of the origin.
fn ray_box(origin: &Vector3<f64>, dir: &Vector3<f64>, b: &Box3D) -> Option<f64> {
    let (s, c) = b.yaw.sin_cos();
    // global -> box local: subtract center, rotate by -yaw
    let to_local = |v: Vector3<f64>| Vector3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z);
    let o = to_local(origin - Vector3::from(b.center));
    let d = to_local(*dir);
    let half = [b.size[0] / 2.0, b.size[1] / 2.0, b.size[2] / 2.0];
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if d[a] == 0.0 {
            if o[a].abs() > half[a] {
                return None;
            }
            continue;
        }
        let ta = (-half[a] - o[a]) / d[a];
        let tb = (half[a] - o[a]) / d[a];
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
    }
    if t1 < t0 || t0 <= DEPTH_EPS {
        return None;
    }
    Some(t0)
}

/// Renders `scene` from `cam` mounted on the ego vehicle at `pose`, at grid resolution.
pub fn render(scene: &SyntheticScene, cam: &CameraModel, pose: &EgoPose, grid: Grid) -> Result<RenderedView> {
    scene.validate()?;
    if grid.cells() == 0 {
        return invalid("grid dimensions must be >= 1");
    }
    let cam_l = cam.scaled_to(grid.width as u32, grid.height as u32);
    let cam_to_global = pose.transform().compose(&cam_l.extrinsic().inverse());
    let rot: Matrix3<f64> = cam_to_global.rotation();
    let origin = cam_to_global.translation_vector();
    let k = *cam_l.intrinsics();

    let cells: Vec<([f64; 3], f64)> = (0..grid.cells())
        .into_par_iter()
        .map(|cell| {
            let center = Grid::center(cell / grid.width, cell % grid.width);
            // camera-frame direction with unit z: the ray parameter is the camera depth
            let dir_c = Vector3::new((center.u - k.cx) / k.fx, (center.v - k.cy) / k.fy, 1.0);
            let dir = rot * dir_c;
            let mut best = f64::INFINITY;
            let mut color = scene.sky;
            if dir.z < 0.0 {
                let t = -origin.z / dir.z;
                if t > DEPTH_EPS {
                    best = t;
                    let p = origin + dir * t;
                    color = scene.checker(p.x, p.y);
                }
            }
            for obj in &scene.objects {
                if let Some(t) = ray_box(&origin, &dir, &obj.bbox) {
                    if t < best {
                        best = t;
                        color = obj.albedo;
                    }
                }
            }
            (color, best)
        })
        .collect();

    let plane = grid.cells();
    let mut rgb = vec![0.0; 3 * plane];
    let mut depth = Vec::with_capacity(plane);
    for (i, (c, d)) in cells.into_iter().enumerate() {
        for ch in 0..3 {
            rgb[ch * plane + i] = c[ch];
        }
        depth.push(d);
    }
    Ok(RenderedView {
        rgb: FeatureMap::from_vec(3, grid.height, grid.width, rgb)?.with_tag(format!("{}@{}", cam.view_id(), pose.frame_index())),
        depth,
        view_id: cam.view_id().to_string(),
        frame_index: pose.frame_index(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    /// Per-channel color difference below which two samples match.
    pub match_threshold: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { match_threshold: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    /// Matched / compared; zero when nothing was compared.
    pub match_rate: f64,
    /// Mean distance in latent pixels between the best-anchor target position and
    /// the true-depth transfer, over compared cells.
    pub mean_reprojection_error: f64,
    /// Compared / query cells with finite depth; zero when there are none.
    pub coverage: f64,
    pub compared: usize,
    pub matched: usize,
    pub finite_cells: usize,
}

/// Checks a correspondence field against rendered ground truth.
///
/// For every query cell with finite depth the anchor nearest the true depth
/// is used; if its target position is valid the query color is compared with
/// the bilinear target color there.
pub fn verify_correspondence(
    query: &RenderedView,
    target: &RenderedView,
    field: &CorrespondenceField,
    config: VerifyConfig,
) -> Result<VerifyReport> {
    let grid = field.grid();
    if query.grid() != grid || target.grid() != grid {
        return invalid(format!(
            "resolution mismatch: query {:?}, target {:?}, field {:?}",
            query.grid(),
            target.grid(),
            grid
        ));
    }
    let (gw, gh) = (grid.width as u32, grid.height as u32);
    let qcam = field.query().camera.scaled_to(gw, gh);
    let tcam = field.target().camera.scaled_to(gw, gh);
    let anchors = field.anchors();

    let (mut finite, mut compared, mut matched) = (0usize, 0usize, 0usize);
    let mut err_sum = 0.0;
    for h in 0..grid.height {
        for w in 0..grid.width {
            let depth = query.depth_at(h, w);
            if !depth.is_finite() {
                continue;
            }
            finite += 1;
            let i = anchors.nearest(depth);
            if !field.valid_at(h, w)[i] {
                continue;
            }
            compared += 1;
            let p = field.targets_at(h, w)[i];
            let sample = gather_bilinear(&target.rgb, &p);
            let q = query.rgb.pixel(h, w);
            if q.iter().zip(&sample).all(|(a, b)| (a - b).abs() < config.match_threshold) {
                matched += 1;
            }
            let ego = back_project(&Grid::center(h, w), &qcam, depth)?;
            let moved = transfer_point(&ego, &field.query().pose, &field.target().pose);
            let truth = project(&moved, &tcam);
            let e = p.distance(&truth.pixel);
            if e.is_finite() {
                err_sum += e;
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(VerifyReport {
        match_rate: ratio(matched, compared),
        mean_reprojection_error: if compared == 0 { 0.0 } else { err_sum / compared as f64 },
        coverage: ratio(compared, finite),
        compared,
        matched,
        finite_cells: finite,
    })
}

/// Pinhole camera at ego position `position`, looking along azimuth `yaw`
/// (counter-clockwise from ego +x) and tilted down by `pitch`, with
/// horizontal field of view `hfov` (radians) and square pixels.
pub fn rig_camera(
    view_id: &str,
    yaw: f64,
    pitch: f64,
    position: Vector3<f64>,
    hfov: f64,
    image_size: (u32, u32),
) -> Result<CameraModel> {
    let (w, h) = image_size;
    let f = (w as f64 / 2.0) / (hfov / 2.0).tan();
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let forward = Vector3::new(cy * cp, sy * cp, -sp);
    let right = Vector3::new(sy, -cy, 0.0);
    let down = forward.cross(&right);
    let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let extrinsic = RigidTransform::from_rotation_translation(r, -(r * position))?;
    CameraModel::new(
        Intrinsics { fx: f, fy: f, cx: w as f64 / 2.0, cy: h as f64 / 2.0 },
        extrinsic,
        image_size,
        view_id,
    )
}

/// `(view_id, yaw in degrees, horizontal FOV in degrees)` of the default rig.
pub const RIG_LAYOUT: [(&str, f64, f64); 6] = [
    ("front", 0.0, 70.0),
    ("front_left", 55.0, 70.0),
    ("front_right", -55.0, 70.0),
    ("back_left", 110.0, 70.0),
    ("back_right", -110.0, 70.0),
    ("back", 180.0, 110.0),
];

/// Six-camera surround rig, 400×224 images, all mounted at 1.5 m on the ego origin.
pub fn make_rig() -> Vec<CameraModel> {
    RIG_LAYOUT
        .iter()
        .map(|(id, yaw, fov)| {
            rig_camera(id, yaw.to_radians(), 0.0, Vector3::new(0.0, 0.0, RIG_HEIGHT), fov.to_radians(), RIG_IMAGE_SIZE)
                .expect("rig layout is valid")
        })
        .collect()
}

/// Horizontal coverage `(left, right)` of a level camera as ego azimuths in
/// degrees, `left > right`.
pub fn azimuth_interval(cam: &CameraModel) -> (f64, f64) {
    let r = cam.extrinsic().rotation();
    let yaw = r[(2, 1)].atan2(r[(2, 0)]).to_degrees();
    let k = cam.intrinsics();
    let left = (k.cx / k.fx).atan().to_degrees();
    let right = ((cam.width() as f64 - k.cx) / k.fx).atan().to_degrees();
    (yaw + left, yaw - right)
}

/// Shared azimuth span of two level cameras, degrees.
pub fn azimuthal_overlap_deg(a: &CameraModel, b: &CameraModel) -> f64 {
    let (al, ar) = azimuth_interval(a);
    let (mut bl, mut br) = azimuth_interval(b);
    let (ac, bc) = ((al + ar) / 2.0, (bl + br) / 2.0);
    let shift = ((ac - bc) / 360.0).round() * 360.0;
    bl += shift;
    br += shift;
    (al.min(bl) - ar.max(br)).max(0.0)
}

/// Pose of a vehicle displaced by `(x, y)` in the global frame with heading `yaw`.
pub fn planar_pose(x: f64, y: f64, yaw: f64, frame_index: i64) -> EgoPose {
    EgoPose::new(RigidTransform::from_yaw_translation(yaw, Vector3::new(x, y, 0.0)), frame_index)
}

/// The global-frame point hit by the ray through cell `(h, w)` at the rendered depth.
pub fn surface_point(view: &RenderedView, cam: &CameraModel, pose: &EgoPose, h: usize, w: usize) -> Option<Point3> {
    let d = view.depth_at(h, w);
    if !d.is_finite() {
        return None;
    }
    let cam_l = cam.scaled_to(view.rgb.width() as u32, view.rgb.height() as u32);
    let ego = back_project(&Grid::center(h, w), &cam_l, d).ok()?;
    Some(pose.transform().transform_point(&ego))
}
