//! JSON scene description: camera rig, per-frame ego poses, boxes and map elements.
//!
//! ```json
//! {
//!   "metadata": { "weather": "Sunny", "daytime": "Day" },
//!   "cameras": [ { "view_id": "front", "intrinsic": [9 numbers], "extrinsic": [16 numbers],
//!                  "width": 400, "height": 224 } ],
//!   "frames": [ { "index": 0, "kind": "historical", "ego_pose": [16 numbers],
//!                 "boxes": [ { "center": [x, y, z], "size": [l, w, h], "yaw": 0.0,
//!                              "class": "car", "track_id": 3 } ],
//!                 "map_elements": [ { "kind": "linestring", "class": "divider",
//!                                     "vertices": [[x, y], ...] } ],
//!                 "features": { "front": "front_0.ecmt" } } ]
//! }
//! ```
//!
//! Matrices are row-major. Cameras are shared by all frames. Frame indices
//! must be contiguous and ascending.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::control::{Box3D, MapElement, MapKind};
use crate::correspondence::{ViewKind, ViewRef};
use crate::error::{Error, Result};
use crate::geometry::{CameraModel, EgoPose, Intrinsics};
use crate::oracle::{make_rig, planar_pose, SceneObject, SyntheticScene};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneMetadata {
    #[serde(default)]
    pub weather: String,
    #[serde(default)]
    pub daytime: String,
}

impl SceneMetadata {
    /// Scene-level text prompt. Recorded only; no text encoder runs here.
    pub fn prompt(&self) -> String {
        format!("A driving scene image. {}. {}.", self.weather, self.daytime)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraEntry {
    pub view_id: String,
    pub intrinsic: Vec<f64>,
    pub extrinsic: Vec<f64>,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub index: i64,
    #[serde(default = "default_kind")]
    pub kind: ViewKind,
    pub ego_pose: Vec<f64>,
    #[serde(default)]
    pub boxes: Vec<Box3D>,
    #[serde(default)]
    pub map_elements: Vec<MapElement>,
    /// View id → feature tensor path, relative to the scene file.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub features: BTreeMap<String, PathBuf>,
}

fn default_kind() -> ViewKind {
    ViewKind::Historical
}

/// Serialized form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    #[serde(default)]
    pub metadata: SceneMetadata,
    pub cameras: Vec<CameraEntry>,
    pub frames: Vec<FrameEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub pose: EgoPose,
    pub kind: ViewKind,
    pub boxes: Vec<Box3D>,
    pub map_elements: Vec<MapElement>,
    pub features: BTreeMap<String, PathBuf>,
}

/// Validated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub metadata: SceneMetadata,
    pub cameras: Vec<CameraModel>,
    pub frames: Vec<Frame>,
}

fn bad<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

fn as_format(e: Error) -> Error {
    match e {
        Error::Io(_) | Error::Format(_) => e,
        other => Error::Format(other.to_string()),
    }
}

impl Scene {
    pub fn from_file_struct(file: SceneFile, base_dir: Option<&Path>) -> Result<Self> {
        let mut cameras = Vec::with_capacity(file.cameras.len());
        let mut ids = BTreeSet::new();
        for c in &file.cameras {
            if !ids.insert(c.view_id.clone()) {
                return bad(format!("camera `{}` defined twice", c.view_id));
            }
            if c.extrinsic.len() != 16 {
                return bad(format!("camera `{}`: extrinsic needs 16 numbers", c.view_id));
            }
            let k = Intrinsics::from_row_slice(&c.intrinsic).map_err(as_format)?;
            let cam = CameraModel::from_matrices(k, Matrix4::from_row_slice(&c.extrinsic), (c.width, c.height), &c.view_id)
                .map_err(as_format)?;
            cameras.push(cam);
        }
        if cameras.is_empty() {
            return bad("scene defines no cameras");
        }
        let mut frames = Vec::with_capacity(file.frames.len());
        for (i, f) in file.frames.into_iter().enumerate() {
            if i > 0 && f.index != frames_first(&frames) + i as i64 {
                return bad(format!("frame indices must be contiguous; frame #{i} has index {}", f.index));
            }
            if f.ego_pose.len() != 16 {
                return bad(format!("frame {}: ego_pose needs 16 numbers", f.index));
            }
            let pose = EgoPose::from_matrix(Matrix4::from_row_slice(&f.ego_pose), f.index).map_err(as_format)?;
            for b in &f.boxes {
                b.validate().map_err(as_format)?;
            }
            for m in &f.map_elements {
                m.validate().map_err(as_format)?;
            }
            let mut features = BTreeMap::new();
            for (view, path) in f.features {
                if !ids.contains(&view) {
                    return bad(format!("frame {} references undefined view `{view}`", f.index));
                }
                let path = match base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path,
                };
                features.insert(view, path);
            }
            frames.push(Frame { pose, kind: f.kind, boxes: f.boxes, map_elements: f.map_elements, features });
        }
        if frames.is_empty() {
            return bad("scene defines no frames");
        }
        Ok(Self { metadata: file.metadata, cameras, frames })
    }

    pub fn from_json(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let file: SceneFile = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        Self::from_file_struct(file, base_dir)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::from_json(&text, path.parent())
    }

    pub fn to_file_struct(&self) -> SceneFile {
        SceneFile {
            metadata: self.metadata.clone(),
            cameras: self
                .cameras
                .iter()
                .map(|c| CameraEntry {
                    view_id: c.view_id().to_string(),
                    intrinsic: c.intrinsics().matrix().transpose().iter().copied().collect(),
                    extrinsic: c.extrinsic().to_row_vec(),
                    width: c.width(),
                    height: c.height(),
                })
                .collect(),
            frames: self
                .frames
                .iter()
                .map(|f| FrameEntry {
                    index: f.pose.frame_index(),
                    kind: f.kind,
                    ego_pose: f.pose.transform().to_row_vec(),
                    boxes: f.boxes.clone(),
                    map_elements: f.map_elements.clone(),
                    features: f.features.clone(),
                })
                .collect(),
        }
    }

    pub fn first_frame(&self) -> i64 {
        self.frames[0].pose.frame_index()
    }

    pub fn frame(&self, index: i64) -> Option<&Frame> {
        let i = index.checked_sub(self.first_frame())?;
        usize::try_from(i).ok().and_then(|i| self.frames.get(i))
    }

    pub fn camera(&self, view_id: &str) -> Option<&CameraModel> {
        self.cameras.iter().find(|c| c.view_id() == view_id)
    }

    pub fn view_index(&self, view_id: &str) -> Option<usize> {
        self.cameras.iter().position(|c| c.view_id() == view_id)
    }

    pub fn view(&self, view_id: &str, frame: i64) -> Option<ViewRef> {
        let f = self.frame(frame)?;
        let cam = self.camera(view_id)?;
        Some(ViewRef::new(cam.clone(), f.pose.clone(), f.kind))
    }

    /// Renderable scene: checker ground plus the boxes of `frame` moved to global coordinates.
    pub fn render_scene(&self, frame: i64) -> Option<SyntheticScene> {
        let f = self.frame(frame)?;
        let mut scene = SyntheticScene::default();
        let yaw_offset = f.pose.transform().rotation();
        let heading = yaw_offset[(1, 0)].atan2(yaw_offset[(0, 0)]);
        for b in &f.boxes {
            let c = f.pose.transform().transform_point(&b.center_point());
            let mut g = b.clone();
            g.center = [c.x, c.y, c.z];
            g.yaw = crate::control::normalize_yaw(b.yaw + heading);
            scene.objects.push(SceneObject { bbox: g, albedo: class_color(&b.class) });
        }
        Some(scene)
    }
}

fn frames_first(frames: &[Frame]) -> i64 {
    frames[0].pose.frame_index()
}

/// Stable flat color per class label.
pub fn class_color(class: &str) -> [f64; 3] {
    let h = class.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    [
        0.2 + 0.6 * ((h & 0xff) as f64 / 255.0),
        0.2 + 0.6 * (((h >> 8) & 0xff) as f64 / 255.0),
        0.2 + 0.6 * (((h >> 16) & 0xff) as f64 / 255.0),
    ]
}

/// Built-in two-frame scene on the default rig.
///
/// Frame 0 is historical with the vehicle at the global origin; frame 1 is
/// current with the vehicle 0.5 m further along global +x. A tracked car sits
/// behind-left of the vehicle, outside the front camera's view, and a lane
/// divider runs alongside.
pub fn synthetic_scene() -> Scene {
    let cameras = make_rig();
    let car_global = Vector3::new(-9.0, 6.0, 0.8);
    let frames = [(0, 0.0, ViewKind::Historical), (1, 0.5, ViewKind::Current)]
        .into_iter()
        .map(|(index, x, kind)| {
            let pose = planar_pose(x, 0.0, 0.0, index);
            let c = car_global - Vector3::new(x, 0.0, 0.0);
            Frame {
                pose,
                kind,
                boxes: vec![Box3D::new([c.x, c.y, c.z], [4.5, 1.9, 1.6], 0.2, "car", Some(1)).expect("valid box")],
                map_elements: vec![MapElement::new(
                    vec![[-20.0 - x, 1.8], [0.0 - x, 1.8], [30.0 - x, 1.8]],
                    MapKind::Linestring,
                    "divider",
                )
                .expect("valid map element")],
                features: BTreeMap::new(),
            }
        })
        .collect();
    Scene { metadata: SceneMetadata { weather: "Sunny".into(), daytime: "Day".into() }, cameras, frames }
}
