//! Test-side reference implementations written without the library's kernels.
#![allow(dead_code)]

use ecm_core::attention::DepthWeightHead;
use ecm_core::correspondence::CorrespondenceField;
use ecm_core::feature::FeatureMap;
use ecm_core::geometry::{CameraModel, Intrinsics, PixelCoord, RigidTransform};
use nalgebra::{Matrix3, Vector3};
use rand::Rng;

/// Tent-kernel read: every pixel contributes `max(0, 1-|dx|)·max(0, 1-|dy|)`.
pub fn tent_sample(map: &FeatureMap, p: &PixelCoord) -> Vec<f64> {
    let (c, h, w) = map.dims();
    let mut out = vec![0.0; c];
    if !(p.u.is_finite() && p.v.is_finite()) {
        return out;
    }
    for y in 0..h {
        let wy = (1.0 - (p.v - (y as f64 + 0.5)).abs()).max(0.0);
        if wy == 0.0 {
            continue;
        }
        for x in 0..w {
            let wx = (1.0 - (p.u - (x as f64 + 0.5)).abs()).max(0.0);
            if wx == 0.0 {
                continue;
            }
            for (ch, o) in out.iter_mut().enumerate() {
                *o += wy * wx * map.get(ch, y, x);
            }
        }
    }
    out
}

/// Two-layer perceptron with SiLU, then softmax, evaluated from the raw parameters.
pub fn naive_depth_weights(head: &DepthWeightHead, f: &[f64]) -> Vec<f64> {
    let layers = head.mlp().layers();
    let mut x = f.to_vec();
    for (li, layer) in layers.iter().enumerate() {
        let (n_in, n_out) = (layer.in_dim(), layer.out_dim());
        let mut y = vec![0.0; n_out];
        for o in 0..n_out {
            let mut acc = layer.bias()[o];
            for i in 0..n_in {
                acc += layer.weight()[o * n_in + i] * x[i];
            }
            y[o] = if li + 1 < layers.len() { acc / (1.0 + (-acc).exp()) } else { acc };
        }
        x = y;
    }
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Per-pixel loop: `q + (1/V or 1) Σ_v Σ_i valid·w_i·sample(target_v, p_vi)`.
pub fn naive_aggregate(
    query: &FeatureMap,
    targets: &[(&FeatureMap, &CorrespondenceField)],
    head: &DepthWeightHead,
    mean: bool,
) -> FeatureMap {
    let (c, h, w) = query.dims();
    let mut out = query.clone();
    let scale = if mean { 1.0 / targets.len() as f64 } else { 1.0 };
    for y in 0..h {
        for x in 0..w {
            let f: Vec<f64> = (0..c).map(|ch| query.get(ch, y, x)).collect();
            let wts = naive_depth_weights(head, &f);
            let mut acc = vec![0.0; c];
            for (map, field) in targets {
                for i in 0..wts.len() {
                    if field.valid_at(y, x)[i] {
                        let s = tent_sample(map, &field.targets_at(y, x)[i]);
                        for ch in 0..c {
                            acc[ch] += wts[i] * s[ch];
                        }
                    }
                }
            }
            for ch in 0..c {
                out.set(ch, y, x, query.get(ch, y, x) + scale * acc[ch]);
            }
        }
    }
    out
}

/// Level pinhole camera on the rig described by yaw, FOV and image size.
#[derive(Debug, Clone, Copy)]
pub struct LevelCam {
    pub yaw_deg: f64,
    pub hfov_deg: f64,
    pub width: f64,
    pub height: f64,
    pub mount_height: f64,
}

impl LevelCam {
    fn focal(&self) -> f64 {
        (self.width / 2.0) / (self.hfov_deg.to_radians() / 2.0).tan()
    }

    fn axes(&self) -> ([f64; 3], [f64; 3], [f64; 3]) {
        let (s, c) = self.yaw_deg.to_radians().sin_cos();
        ([c, s, 0.0], [s, -c, 0.0], [0.0, 0.0, -1.0])
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Counts anchored projections of every grid cell of `q` that land inside `t`,
/// working directly from the camera axes instead of 4×4 matrices.
pub fn level_overlap(q: &LevelCam, t: &LevelCam, grid_h: usize, grid_w: usize, anchors: &[f64]) -> (usize, usize) {
    let sx_q = grid_w as f64 / q.width;
    let sy_q = grid_h as f64 / q.height;
    let (fq_x, fq_y) = (q.focal() * sx_q, q.focal() * sy_q);
    let (cq_x, cq_y) = (q.width / 2.0 * sx_q, q.height / 2.0 * sy_q);
    let sx_t = grid_w as f64 / t.width;
    let sy_t = grid_h as f64 / t.height;
    let (ft_x, ft_y) = (t.focal() * sx_t, t.focal() * sy_t);
    let (ct_x, ct_y) = (t.width / 2.0 * sx_t, t.height / 2.0 * sy_t);
    let (qf, qr, qd) = q.axes();
    let (tf, tr, td) = t.axes();
    let mut hits = 0;
    for h in 0..grid_h {
        for w in 0..grid_w {
            let a = (w as f64 + 0.5 - cq_x) / fq_x;
            let b = (h as f64 + 0.5 - cq_y) / fq_y;
            for &d in anchors {
                // world point relative to the shared mount position
                let rel = [
                    d * (qf[0] + a * qr[0] + b * qd[0]),
                    d * (qf[1] + a * qr[1] + b * qd[1]),
                    d * (qf[2] + a * qr[2] + b * qd[2]) + q.mount_height - t.mount_height,
                ];
                let z = dot(rel, tf);
                if z <= 1e-6 {
                    continue;
                }
                let u = ft_x * dot(rel, tr) / z + ct_x;
                let v = ft_y * dot(rel, td) / z + ct_y;
                if (0.0..grid_w as f64).contains(&u) && (0.0..grid_h as f64).contains(&v) {
                    hits += 1;
                }
            }
        }
    }
    (hits, grid_h * grid_w * anchors.len())
}

/// Closed-form LID anchors, summing the bin widths one by one.
pub fn lid_by_accumulation(d_min: f64, d_max: f64, n: usize) -> Vec<f64> {
    let unit = (d_max - d_min) / (n * (n + 1) / 2) as f64;
    let mut out = Vec::with_capacity(n);
    let mut d = d_min;
    for i in 1..=n {
        d += unit * i as f64;
        out.push(d);
    }
    out
}

pub fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let axis = if axis.norm() < 1e-3 { Vector3::z() } else { axis.normalize() };
    let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    *nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).matrix()
}

pub fn random_rigid(rng: &mut impl Rng, max_t: f64) -> RigidTransform {
    let t = Vector3::new(rng.random_range(-max_t..max_t), rng.random_range(-max_t..max_t), rng.random_range(-max_t..max_t));
    RigidTransform::from_rotation_translation(random_rotation(rng), t).unwrap()
}

pub fn random_camera(rng: &mut impl Rng, id: &str) -> CameraModel {
    let w = rng.random_range(32..1600u32);
    let h = rng.random_range(32..1000u32);
    let intr = Intrinsics {
        fx: rng.random_range(50.0..2000.0),
        fy: rng.random_range(50.0..2000.0),
        cx: rng.random_range(0.0..w as f64),
        cy: rng.random_range(0.0..h as f64),
    };
    CameraModel::new(intr, random_rigid(rng, 3.0), (w, h), id).unwrap()
}

pub fn random_map(rng: &mut impl Rng, c: usize, h: usize, w: usize) -> FeatureMap {
    FeatureMap::from_fn(c, h, w, |_, _, _| rng.random_range(-1.0..1.0)).unwrap()
}

/// Overlap hits out of 28·50·10 = 14000 anchored samples on the default rig,
/// produced once by [`level_overlap`] and frozen. Rows are queries, columns
/// targets, in rig order (front, front_left, front_right, back_left,
/// back_right, back).
pub const GOLDEN_RIG_HITS: [[usize; 6]; 6] = [
    [14000, 3260, 3260, 0, 0, 0],
    [3260, 14000, 0, 3260, 0, 0],
    [3260, 0, 14000, 0, 3260, 0],
    [0, 3260, 0, 14000, 0, 4200],
    [0, 0, 3260, 0, 14000, 4200],
    [0, 0, 0, 2380, 2380, 14000],
];

pub struct AggInstance {
    pub query: FeatureMap,
    pub maps: Vec<FeatureMap>,
    pub fields: Vec<CorrespondenceField>,
    pub head: DepthWeightHead,
}

impl AggInstance {
    pub fn pairs(&self) -> Vec<(&FeatureMap, &CorrespondenceField)> {
        self.maps.iter().zip(&self.fields).collect()
    }
}

/// Random maps (≤ 8 channels, 4..16 cells per side), D = 10 anchors and
/// target cameras perturbed from the query so that many anchors land in view.
pub fn agg_instance(seed: u64, views: usize) -> AggInstance {
    use ecm_core::correspondence::{build_field, Grid, ViewKind, ViewRef};
    use ecm_core::geometry::{make_lid_anchors, EgoPose};
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let c = rng.random_range(1..=8);
    let h = rng.random_range(4..=16);
    let w = rng.random_range(4..=16);
    let anchors = make_lid_anchors(1.0, 60.0, 10).unwrap();
    let qcam = random_camera(&mut rng, "q");
    let qpose = EgoPose::new(random_rigid(&mut rng, 2.0), 5);
    let q = ViewRef::new(qcam, qpose, ViewKind::Current);
    let mut maps = Vec::new();
    let mut fields = Vec::new();
    for v in 0..views {
        let tcam = CameraModel::new(
            *q.camera.intrinsics(),
            random_rigid(&mut rng, 0.3).compose(q.camera.extrinsic()),
            (q.camera.width(), q.camera.height()),
            format!("t{v}"),
        )
        .unwrap();
        let t = ViewRef::new(tcam, q.pose.clone(), ViewKind::Current);
        fields.push(build_field(&q, &t, &anchors, Grid::new(h, w)).unwrap());
        maps.push(random_map(&mut rng, c, h, w));
    }
    AggInstance {
        query: random_map(&mut rng, c, h, w),
        maps,
        fields,
        head: DepthWeightHead::seeded(c, 10, rng.random()).unwrap(),
    }
}

pub fn max_abs_diff(a: &FeatureMap, b: &FeatureMap) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn bits(m: &FeatureMap) -> Vec<u64> {
    m.data().iter().map(|v| v.to_bits()).collect()
}

/// Box placed in front of the rig's front camera, fully inside its frustum.
pub fn front_box(rng: &mut impl Rng) -> ecm_core::control::Box3D {
    use ecm_core::control::{Box3D, BOX_CLASSES};
    let x = rng.random_range(8.0..40.0);
    let y = rng.random_range(-0.2..0.2) * x;
    Box3D::new(
        [x, y, rng.random_range(0.3..2.0)],
        [rng.random_range(1.0..5.0), rng.random_range(0.5..2.5), rng.random_range(0.8..3.0)],
        rng.random_range(-3.0..3.0),
        BOX_CLASSES[rng.random_range(0..BOX_CLASSES.len())],
        Some(rng.random_range(0..100)),
    )
    .unwrap()
}

pub struct ScatterSetup {
    pub embedding: ecm_core::control::ConditionEmbedding,
    pub cam: CameraModel,
    pub latent_dims: (usize, usize, usize),
}

/// Encoded box with generated keypoints, seen by the front rig camera.
pub fn scatter_setup(seed: u64) -> ScatterSetup {
    use ecm_core::control::*;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let c = rng.random_range(1..=8);
    let b = front_box(&mut rng);
    let provider = EmbeddingProvider::default_vocabulary(c, 1);
    let mlp = ecm_core::nn::Mlp::seeded(&[BOX_PARAMS, 16, c], 2).unwrap();
    let mut e = encode_box(&b, &provider, &mlp).unwrap();
    let head = KeypointHead::seeded(c, rng.random_range(0..=15), rng.random_range(1..6), rng.random()).unwrap();
    e.keypoints = generate_keypoints(&b, &e.vector, &head).unwrap();
    ScatterSetup {
        embedding: e,
        cam: ecm_core::oracle::make_rig()[0].clone(),
        latent_dims: (c, rng.random_range(14..40), rng.random_range(25..60)),
    }
}

/// Projected keypoints with weights, or `None` if any keypoint leaves the
/// interior (the region where all four bilinear taps exist).
pub fn interior_projections(s: &ScatterSetup) -> Option<Vec<(PixelCoord, f64)>> {
    use ecm_core::geometry::project;
    let (_, h, w) = s.latent_dims;
    let cam = s.cam.scaled_to(w as u32, h as u32);
    s.embedding
        .keypoints
        .iter()
        .map(|k| {
            let p = project(&k.position(), &cam);
            let inside = p.valid && p.pixel.u >= 0.5 && p.pixel.v >= 0.5 && p.pixel.u <= w as f64 - 0.5 && p.pixel.v <= h as f64 - 0.5;
            inside.then_some((p.pixel, k.weight))
        })
        .collect()
}

/// `(⟨scatter(e), F⟩, Σ_m w_m ⟨e, tent_sample(F, p_m)⟩)` for one setup, or
/// `None` when keypoints leave the interior.
pub fn adjoint_pair(seed: u64) -> Option<(f64, f64)> {
    use rand::SeedableRng;
    let s = scatter_setup(seed);
    let proj = interior_projections(&s)?;
    let (c, h, w) = s.latent_dims;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31));
    let f = random_map(&mut rng, c, h, w);
    let zero = FeatureMap::zeros(c, h, w).unwrap();
    let injected = ecm_core::control::scatter_inject(&zero, &s.embedding, &s.cam, None).unwrap();
    let lhs = injected.dot(&f).unwrap();
    let rhs = proj
        .iter()
        .map(|(p, wt)| wt * tent_sample(&f, p).iter().zip(&s.embedding.vector).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    Some((lhs, rhs))
}
