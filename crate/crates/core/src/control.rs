//! Instance-level conditions: box and map-element encoding, identity-aware
//! appearance aggregation, and bilinear scatter of embeddings into latents.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::feature::{gather_bilinear_accumulate, scatter_bilinear, FeatureMap};
use crate::geometry::{project, transfer_point, CameraModel, EgoPose, Point3};
use crate::nn::{softmax_in_place, Linear, Mlp};

/// Box classes of the default vocabulary.
pub const BOX_CLASSES: [&str; 10] = [
    "car",
    "truck",
    "construction_vehicle",
    "bus",
    "trailer",
    "barrier",
    "motorcycle",
    "bicycle",
    "pedestrian",
    "traffic_cone",
];

/// Map element classes of the default vocabulary.
pub const MAP_CLASSES: [&str; 3] = ["divider", "ped_crossing", "boundary"];

/// Number of points every map element is resampled to.
pub const MAP_POINTS: usize = 20;

/// Length of the box parameter vector `(x, y, z, l, w, h, yaw)`.
pub const BOX_PARAMS: usize = 7;

/// Fixed keypoints available per box: center, 6 face centers, 8 corners.
pub const MAX_FIXED_KEYPOINTS: usize = 15;

/// Wraps an angle into `(-π, π]`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    let mut y = yaw % (2.0 * PI);
    if y <= -PI {
        y += 2.0 * PI;
    } else if y > PI {
        y -= 2.0 * PI;
    }
    y
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    /// Ego-frame center in meters.
    pub center: [f64; 3],
    /// `(length, width, height)` along the box's local x, y, z.
    pub size: [f64; 3],
    /// Rotation about ego z, in `(-π, π]`.
    pub yaw: f64,
    pub class: String,
    pub track_id: Option<u64>,
}

impl Box3D {
    pub fn new(center: [f64; 3], size: [f64; 3], yaw: f64, class: impl Into<String>, track_id: Option<u64>) -> Result<Self> {
        let b = Self { center, size, yaw, class: class.into(), track_id };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.center.iter().any(|v| !v.is_finite()) {
            return invalid("box center must be finite");
        }
        if self.size.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return invalid(format!("box size must be positive, got {:?}", self.size));
        }
        if !(self.yaw > -PI && self.yaw <= PI) {
            return invalid(format!("box yaw {} outside (-pi, pi]", self.yaw));
        }
        Ok(())
    }

    pub fn center_point(&self) -> Point3 {
        Point3::new(self.center[0], self.center[1], self.center[2])
    }

    /// Maps a point of the box's local frame into the box's ego frame.
    pub fn local_to_ego(&self, local: [f64; 3]) -> Point3 {
        let (s, c) = self.yaw.sin_cos();
        Point3::new(
            self.center[0] + c * local[0] - s * local[1],
            self.center[1] + s * local[0] + c * local[1],
            self.center[2] + local[2],
        )
    }

    pub fn params(&self) -> [f64; BOX_PARAMS] {
        let [x, y, z] = self.center;
        let [l, w, h] = self.size;
        [x, y, z, l, w, h, self.yaw]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Polygon,
    Linestring,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapElement {
    /// Ego-frame `(x, y)` vertices in meters.
    pub vertices: Vec<[f64; 2]>,
    pub kind: MapKind,
    pub class: String,
}

impl MapElement {
    pub fn new(vertices: Vec<[f64; 2]>, kind: MapKind, class: impl Into<String>) -> Result<Self> {
        let m = Self { vertices, kind, class: class.into() };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let min = match self.kind {
            MapKind::Polygon => 3,
            MapKind::Linestring => 2,
        };
        if self.vertices.len() < min {
            return invalid(format!("{:?} needs at least {min} vertices, got {}", self.kind, self.vertices.len()));
        }
        if self.vertices.iter().flatten().any(|v| !v.is_finite()) {
            return invalid("map vertices must be finite");
        }
        Ok(())
    }
}

/// Resamples a polyline to `n` points equally spaced in arc length.
///
/// Open lines keep both endpoints. Closed lines walk the perimeter including
/// the closing edge, start at the first vertex and do not repeat it.
pub fn resample_polyline(vertices: &[[f64; 2]], n: usize, closed: bool) -> Result<Vec<[f64; 2]>> {
    if vertices.len() < 2 {
        return invalid("a polyline needs at least 2 vertices");
    }
    if n < 2 {
        return invalid("resampling needs at least 2 output points");
    }
    let mut pts = vertices.to_vec();
    if closed {
        pts.push(vertices[0]);
    }
    let mut cum = Vec::with_capacity(pts.len());
    cum.push(0.0);
    for w in pts.windows(2) {
        let seg = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        cum.push(cum[cum.len() - 1] + seg);
    }
    let total = cum[cum.len() - 1];
    if total == 0.0 {
        return Ok(vec![vertices[0]; n]);
    }
    let steps = if closed { n } else { n - 1 };
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for k in 0..n {
        let s = total * k as f64 / steps as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 { ((s - cum[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        let (a, b) = (pts[seg], pts[seg + 1]);
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    if !closed {
        out[n - 1] = vertices[vertices.len() - 1];
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionSource {
    Box,
    Map,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub point: [f64; 3],
    pub weight: f64,
}

impl Keypoint {
    pub fn position(&self) -> Point3 {
        Point3::new(self.point[0], self.point[1], self.point[2])
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub track_id: Option<u64>,
    pub frame: Option<i64>,
}

/// Instance embedding plus the weighted keypoints used to place it in a view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionEmbedding {
    pub vector: Vec<f64>,
    pub source: ConditionSource,
    pub keypoints: Vec<Keypoint>,
    pub provenance: Provenance,
}

impl ConditionEmbedding {
    /// Keypoint weights must be non-negative and, when present, sum to one.
    pub fn validate(&self) -> Result<()> {
        if self.vector.iter().any(|v| !v.is_finite()) {
            return invalid("embedding must be finite");
        }
        if self.keypoints.iter().any(|k| k.weight.is_nan() || k.weight < 0.0) {
            return invalid("keypoint weights must be non-negative");
        }
        if !self.keypoints.is_empty() {
            let s: f64 = self.keypoints.iter().map(|k| k.weight).sum();
            if (s - 1.0).abs() > 1e-6 {
                return invalid(format!("keypoint weights sum to {s}, expected 1"));
            }
        }
        Ok(())
    }
}

/// Fixed per-label class vectors standing in for a text encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingProvider {
    dim: usize,
    table: BTreeMap<String, Vec<f64>>,
}

fn label_hash(label: &str) -> u64 {
    // FNV-1a
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl EmbeddingProvider {
    pub fn empty(dim: usize) -> Self {
        Self { dim, table: BTreeMap::new() }
    }

    /// Each label's vector depends only on `(label, dim, seed)`.
    pub fn seeded<S: AsRef<str>>(labels: &[S], dim: usize, seed: u64) -> Self {
        let mut p = Self::empty(dim);
        for label in labels {
            let label = label.as_ref();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ label_hash(label));
            let v = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            p.table.insert(label.to_string(), v);
        }
        p
    }

    /// Default box and map vocabularies.
    pub fn default_vocabulary(dim: usize, seed: u64) -> Self {
        let labels: Vec<&str> = BOX_CLASSES.iter().chain(MAP_CLASSES.iter()).copied().collect();
        Self::seeded(&labels, dim, seed)
    }

    pub fn insert(&mut self, label: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return invalid(format!("class vector has length {}, provider dim is {}", vector.len(), self.dim));
        }
        self.table.insert(label.into(), vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, label: &str) -> Result<&[f64]> {
        self.table.get(label).map(Vec::as_slice).ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }
}

fn add_class_term(mut v: Vec<f64>, provider: &EmbeddingProvider, class: &str) -> Result<Vec<f64>> {
    let c = provider.get(class)?;
    if v.len() != c.len() {
        return invalid(format!("encoder width {} differs from provider width {}", v.len(), c.len()));
    }
    v.iter_mut().zip(c).for_each(|(a, b)| *a += b);
    Ok(v)
}

/// `MLP(x, y, z, l, w, h, yaw) + class(b)`.
pub fn encode_box(b: &Box3D, provider: &EmbeddingProvider, mlp: &Mlp) -> Result<ConditionEmbedding> {
    b.validate()?;
    if mlp.in_dim() != BOX_PARAMS {
        return invalid(format!("box encoder takes {BOX_PARAMS} inputs, MLP has {}", mlp.in_dim()));
    }
    let vector = add_class_term(mlp.forward(&b.params())?, provider, &b.class)?;
    Ok(ConditionEmbedding {
        vector,
        source: ConditionSource::Box,
        keypoints: Vec::new(),
        provenance: Provenance { track_id: b.track_id, frame: None },
    })
}

/// `MLP(flattened resampled vertices) + class(m)`.
///
/// The embedding carries the [`MAP_POINTS`] resampled vertices on the ground
/// plane (z = 0) as keypoints with uniform weights.
pub fn encode_map(m: &MapElement, provider: &EmbeddingProvider, mlp: &Mlp) -> Result<ConditionEmbedding> {
    m.validate()?;
    if mlp.in_dim() != 2 * MAP_POINTS {
        return invalid(format!("map encoder takes {} inputs, MLP has {}", 2 * MAP_POINTS, mlp.in_dim()));
    }
    let pts = resample_polyline(&m.vertices, MAP_POINTS, m.kind == MapKind::Polygon)?;
    let flat: Vec<f64> = pts.iter().flatten().copied().collect();
    let vector = add_class_term(mlp.forward(&flat)?, provider, &m.class)?;
    let weight = 1.0 / MAP_POINTS as f64;
    let keypoints = pts.iter().map(|p| Keypoint { point: [p[0], p[1], 0.0], weight }).collect();
    Ok(ConditionEmbedding { vector, source: ConditionSource::Map, keypoints, provenance: Provenance::default() })
}

/// Predicts keypoint offsets and weights from a box embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointHead {
    n_fixed: usize,
    n_learned: usize,
    /// `C_e → 3·n_learned`, absent when `n_learned == 0`.
    offsets: Option<Linear>,
    /// `C_e → n_fixed + n_learned` logits.
    readout: Linear,
}

impl KeypointHead {
    pub fn new(n_fixed: usize, n_learned: usize, offsets: Option<Linear>, readout: Linear) -> Result<Self> {
        if n_fixed > MAX_FIXED_KEYPOINTS {
            return invalid(format!("at most {MAX_FIXED_KEYPOINTS} fixed keypoints, got {n_fixed}"));
        }
        if n_fixed + n_learned == 0 {
            return invalid("at least one keypoint is required");
        }
        if readout.out_dim() != n_fixed + n_learned {
            return invalid("readout width must equal the keypoint count");
        }
        match &offsets {
            Some(o) if o.out_dim() != 3 * n_learned || o.in_dim() != readout.in_dim() => {
                return invalid("offset layer must map the embedding to 3 values per learned keypoint")
            }
            None if n_learned > 0 => return invalid("learned keypoints need an offset layer"),
            _ => {}
        }
        Ok(Self { n_fixed, n_learned, offsets, readout })
    }

    pub fn seeded(embed_dim: usize, n_fixed: usize, n_learned: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let offsets = (n_learned > 0).then(|| Linear::seeded(embed_dim, 3 * n_learned, &mut rng));
        let readout = Linear::seeded(embed_dim, n_fixed + n_learned, &mut rng);
        Self::new(n_fixed, n_learned, offsets, readout)
    }

    pub fn zeros(embed_dim: usize, n_fixed: usize, n_learned: usize) -> Result<Self> {
        let offsets = (n_learned > 0).then(|| Linear::zeros(embed_dim, 3 * n_learned));
        Self::new(n_fixed, n_learned, offsets, Linear::zeros(embed_dim, n_fixed + n_learned))
    }

    pub fn n_fixed(&self) -> usize {
        self.n_fixed
    }

    pub fn n_learned(&self) -> usize {
        self.n_learned
    }

    pub fn embed_dim(&self) -> usize {
        self.readout.in_dim()
    }
}

/// Unit-box fixed keypoint pattern: center, ±x, ±y, ±z face centers, then corners.
fn fixed_pattern() -> [[f64; 3]; MAX_FIXED_KEYPOINTS] {
    let mut p = [[0.0; 3]; MAX_FIXED_KEYPOINTS];
    p[1] = [1.0, 0.0, 0.0];
    p[2] = [-1.0, 0.0, 0.0];
    p[3] = [0.0, 1.0, 0.0];
    p[4] = [0.0, -1.0, 0.0];
    p[5] = [0.0, 0.0, 1.0];
    p[6] = [0.0, 0.0, -1.0];
    let mut k = 7;
    for sx in [1.0, -1.0] {
        for sy in [1.0, -1.0] {
            for sz in [1.0, -1.0] {
                p[k] = [sx, sy, sz];
                k += 1;
            }
        }
    }
    p
}

/// Keypoints around `b` in the box's ego frame with softmax weights read out of `embedding`.
pub fn generate_keypoints(b: &Box3D, embedding: &[f64], head: &KeypointHead) -> Result<Vec<Keypoint>> {
    b.validate()?;
    if embedding.len() != head.embed_dim() {
        return invalid(format!("embedding has {} values, keypoint head expects {}", embedding.len(), head.embed_dim()));
    }
    let half = [b.size[0] / 2.0, b.size[1] / 2.0, b.size[2] / 2.0];
    let mut locals: Vec<[f64; 3]> = fixed_pattern()[..head.n_fixed]
        .iter()
        .map(|u| [u[0] * half[0], u[1] * half[1], u[2] * half[2]])
        .collect();
    if let Some(off) = &head.offsets {
        let raw = off.forward(embedding)?;
        locals.extend(raw.chunks_exact(3).map(|o| {
            [o[0].tanh() * half[0], o[1].tanh() * half[1], o[2].tanh() * half[2]]
        }));
    }
    let mut weights = head.readout.forward(embedding)?;
    softmax_in_place(&mut weights);
    Ok(locals
        .into_iter()
        .zip(weights)
        .map(|(l, weight)| {
            let p = b.local_to_ego(l);
            Keypoint { point: [p.x, p.y, p.z], weight }
        })
        .collect())
}

/// Ego frames a set of keypoints must be carried between before projection.
#[derive(Debug, Clone, Copy)]
pub struct PoseTransfer<'a> {
    /// Pose of the frame the keypoints are expressed in.
    pub from: &'a EgoPose,
    /// Pose of the frame the camera belongs to.
    pub to: &'a EgoPose,
}

/// `Σ_j w_j · gather(feat, project(P_j))`; keypoints projecting outside the
/// view contribute nothing and the remaining weights are not renormalised.
///
/// `cam` is given at image resolution and rescaled to the feature grid.
pub fn aggregate_appearance(
    feat: &FeatureMap,
    cam: &CameraModel,
    keypoints: &[Keypoint],
    transfer: Option<PoseTransfer<'_>>,
) -> Vec<f64> {
    let cam = cam.scaled_to(feat.width() as u32, feat.height() as u32);
    let mut out = vec![0.0; feat.channels()];
    for kp in keypoints {
        let mut p = kp.position();
        if let Some(t) = transfer {
            p = transfer_point(&p, t.from, t.to);
        }
        let pr = project(&p, &cam);
        if pr.valid {
            gather_bilinear_accumulate(feat, &pr.pixel, kp.weight, &mut out);
        }
    }
    out
}

/// Adds appearance vectors gathered for the same track to the embedding and,
/// when a box and head are given, regenerates its keypoints.
pub fn update_embedding_identity(
    e: &ConditionEmbedding,
    appearances: &[Vec<f64>],
    regenerate: Option<(&Box3D, &KeypointHead)>,
) -> Result<ConditionEmbedding> {
    if appearances.is_empty() {
        return Ok(e.clone());
    }
    let mut out = e.clone();
    for a in appearances {
        if a.len() != out.vector.len() {
            return invalid(format!("appearance has {} channels, embedding has {}", a.len(), out.vector.len()));
        }
        out.vector.iter_mut().zip(a).for_each(|(v, x)| *v += x);
    }
    if let Some((b, head)) = regenerate {
        out.keypoints = generate_keypoints(b, &out.vector, head)?;
    }
    Ok(out)
}

/// Boxes carrying `track_id`, in input order.
pub fn boxes_for_track(boxes: &[Box3D], track_id: u64) -> impl Iterator<Item = &Box3D> {
    boxes.iter().filter(move |b| b.track_id == Some(track_id))
}

/// Seeded `C_e → C` linear map applied when embedding and latent widths differ.
pub fn channel_adapter(embed_dim: usize, channels: usize, seed: u64) -> Linear {
    Linear::seeded(embed_dim, channels, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn injected_vector(e: &ConditionEmbedding, channels: usize, adapter: Option<&Linear>) -> Result<Vec<f64>> {
    if e.vector.len() == channels {
        return Ok(e.vector.clone());
    }
    match adapter {
        Some(a) if a.in_dim() == e.vector.len() && a.out_dim() == channels => a.forward(&e.vector),
        Some(_) => invalid("channel adapter does not map the embedding width to the latent width"),
        None => invalid(format!(
            "embedding width {} differs from latent channels {channels} and no adapter was given",
            e.vector.len()
        )),
    }
}

/// Scatters `w_m · E` onto the latent at every keypoint projecting into the view.
///
/// Returns a new map; `latent` is untouched. `cam` is rescaled to the latent grid.
pub fn scatter_inject(
    latent: &FeatureMap,
    e: &ConditionEmbedding,
    cam: &CameraModel,
    adapter: Option<&Linear>,
) -> Result<FeatureMap> {
    scatter_inject_all(latent, std::slice::from_ref(e), cam, adapter)
}

/// Injects several embeddings, accumulating in embedding then keypoint order.
pub fn scatter_inject_all(
    latent: &FeatureMap,
    embeddings: &[ConditionEmbedding],
    cam: &CameraModel,
    adapter: Option<&Linear>,
) -> Result<FeatureMap> {
    let mut out = latent.clone();
    let cam = cam.scaled_to(latent.width() as u32, latent.height() as u32);
    for e in embeddings {
        if e.keypoints.is_empty() {
            continue;
        }
        let v = injected_vector(e, latent.channels(), adapter)?;
        let mut scaled = vec![0.0; v.len()];
        for kp in &e.keypoints {
            let pr = project(&kp.position(), &cam);
            if !pr.valid {
                continue;
            }
            scaled.iter_mut().zip(&v).for_each(|(s, x)| *s = kp.weight * x);
            scatter_bilinear(&mut out, &pr.pixel, &scaled)?;
        }
    }
    Ok(out)
}
