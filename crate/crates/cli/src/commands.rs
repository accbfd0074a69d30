use std::fmt;
use std::io::Write;
use std::path::Path;

use ecm_core::control::{
    aggregate_appearance, encode_box, encode_map, generate_keypoints, scatter_inject_all, update_embedding_identity,
    ConditionEmbedding, EmbeddingProvider, KeypointHead, BOX_PARAMS, MAP_POINTS,
};
use ecm_core::correspondence::{build_field, match_target_views, Grid, ViewRef};
use ecm_core::geometry::{make_lid_anchors, DepthAnchors};
use ecm_core::nn::Mlp;
use ecm_core::oracle::{render as render_view, verify_correspondence, VerifyConfig, VerifyReport};
use ecm_core::sampling::{build_inference_schedule, build_reference_schedule, sample_training_frames, ScheduleMode};
use ecm_core::scene_file::{synthetic_scene, Scene};
use ecm_core::tensor_io::Tensor;
use ecm_core::{Error, FeatureMap};
use serde::Serialize;

use crate::{LatentArgs, ModeArg, SceneArgs};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or arguments; exit code 2.
    Usage(String),
    /// Unreadable or malformed input file; exit code 3.
    Input(String),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Input(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Input(m) => write!(f, "malformed input: {m}"),
            CliError::Other(m) => write!(f, "{m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::InvalidCamera(_) | Error::InvalidPose(_) => CliError::Usage(e.to_string()),
            Error::Format(_) | Error::UnknownLabel(_) | Error::Io(_) => CliError::Input(e.to_string()),
        }
    }
}

fn input_err(context: &Path) -> impl Fn(Error) -> CliError + '_ {
    move |e| CliError::Input(format!("{}: {e}", context.display()))
}

pub fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let h: usize = h.parse().map_err(|_| format!("bad grid height `{h}`"))?;
    let w: usize = w.parse().map_err(|_| format!("bad grid width `{w}`"))?;
    if h == 0 || w == 0 {
        return Err("grid dimensions must be >= 1".into());
    }
    Ok((h, w))
}

pub fn parse_anchors(s: &str) -> Result<(f64, f64, usize), String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, n] = parts[..] else {
        return Err(format!("expected DMIN:DMAX:D, got `{s}`"));
    };
    let lo: f64 = lo.parse().map_err(|_| format!("bad DMIN `{lo}`"))?;
    let hi: f64 = hi.parse().map_err(|_| format!("bad DMAX `{hi}`"))?;
    let n: usize = n.parse().map_err(|_| format!("bad D `{n}`"))?;
    make_lid_anchors(lo, hi, n).map_err(|e| e.to_string())?;
    Ok((lo, hi, n))
}

fn anchors(l: &LatentArgs) -> Result<DepthAnchors, CliError> {
    Ok(make_lid_anchors(l.anchors.0, l.anchors.1, l.anchors.2)?)
}

fn grid(l: &LatentArgs) -> Grid {
    Grid::new(l.grid.0, l.grid.1)
}

fn load_scene(args: &SceneArgs) -> Result<Scene, CliError> {
    if args.scene == "synthetic" {
        return Ok(synthetic_scene());
    }
    let path = Path::new(&args.scene);
    Scene::load(path).map_err(input_err(path))
}

/// `ID` (at `default_frame`) or `ID@FRAME`.
fn parse_view_spec(s: &str, default_frame: Option<i64>) -> Result<(String, i64), CliError> {
    match s.rsplit_once('@') {
        Some((id, f)) => {
            let frame = f.parse().map_err(|_| CliError::Usage(format!("bad frame in view `{s}`")))?;
            Ok((id.to_string(), frame))
        }
        None => default_frame
            .map(|f| (s.to_string(), f))
            .ok_or_else(|| CliError::Usage(format!("view `{s}` needs a frame: ID@FRAME"))),
    }
}

fn lookup(scene: &Scene, id: &str, frame: i64) -> Result<ViewRef, CliError> {
    if scene.camera(id).is_none() {
        return Err(CliError::Usage(format!("unknown view `{id}`")));
    }
    scene.view(id, frame).ok_or_else(|| CliError::Usage(format!("frame {frame} is not in the scene")))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let fail = |e: std::io::Error| CliError::Other(format!("writing {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(bytes).map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match out {
        Some(p) => write_atomic(p, bytes),
        None => std::io::stdout().write_all(bytes).map_err(|e| CliError::Other(e.to_string())),
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut v = serde_json::to_vec_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    v.push(b'\n');
    Ok(v)
}

pub fn overlap(
    scene_args: &SceneArgs,
    frame: i64,
    query_view: &str,
    candidates: &[String],
    k: usize,
    latent: &LatentArgs,
    out: Option<&Path>,
) -> Result<(), CliError> {
    if k == 0 {
        return Err(CliError::Usage("k must be >= 1".into()));
    }
    let scene = load_scene(scene_args)?;
    let query = lookup(&scene, query_view, frame)?;
    let cands = if candidates.is_empty() {
        scene.cameras.iter().filter(|c| c.view_id() != query_view).map(|c| lookup(&scene, c.view_id(), frame)).collect()
    } else {
        candidates
            .iter()
            .map(|s| {
                let (id, f) = parse_view_spec(s, Some(frame))?;
                lookup(&scene, &id, f)
            })
            .collect::<Result<Vec<_>, _>>()
    }?;
    let ranked = match_target_views(&query, &cands, k, &anchors(latent)?, grid(latent))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Other(e.to_string());
    w.write_record(["target_view", "frame", "fraction", "hits", "total"]).map_err(csv_err)?;
    for r in &ranked {
        w.write_record([
            r.view.view_id().to_string(),
            r.view.frame_index.to_string(),
            r.score.fraction.to_string(),
            r.score.hits.to_string(),
            r.score.total.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Other(e.to_string()))?;
    emit(out, &bytes)
}

#[derive(Serialize)]
struct PairReport {
    query: String,
    target: String,
    #[serde(flatten)]
    report: VerifyReport,
}

#[derive(Serialize)]
struct VerifyOutput {
    grid: [usize; 2],
    anchors: Vec<f64>,
    threshold: f64,
    checker_cell: f64,
    pairs: Vec<PairReport>,
}

pub fn verify(
    scene_args: &SceneArgs,
    pairs: &[String],
    latent: &LatentArgs,
    threshold: f64,
    checker: f64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(CliError::Usage("threshold must be positive".into()));
    }
    let scene = load_scene(scene_args)?;
    let a = anchors(latent)?;
    let g = grid(latent);
    let config = VerifyConfig { match_threshold: threshold };
    let mut reports = Vec::new();
    for pair in pairs {
        let (qs, ts) = pair.split_once(':').ok_or_else(|| CliError::Usage(format!("pair `{pair}` is not QUERY:TARGET")))?;
        let (qid, qf) = parse_view_spec(qs, None)?;
        let (tid, tf) = parse_view_spec(ts, None)?;
        let q = lookup(&scene, &qid, qf)?;
        let t = lookup(&scene, &tid, tf)?;
        // static world: the query frame's boxes, placed globally, are rendered in both views
        let mut world = scene.render_scene(qf).expect("frame checked above");
        world.checker_cell = checker;
        let qv = render_view(&world, &q.camera, &q.pose, g)?;
        let tv = render_view(&world, &t.camera, &t.pose, g)?;
        let field = build_field(&q, &t, &a, g)?;
        let report = verify_correspondence(&qv, &tv, &field, config)?;
        reports.push(PairReport { query: format!("{qid}@{qf}"), target: format!("{tid}@{tf}"), report });
    }
    let body = VerifyOutput { grid: [g.height, g.width], anchors: a.values().to_vec(), threshold, checker_cell: checker, pairs: reports };
    emit(out, &to_json(&body)?)
}

#[allow(clippy::too_many_arguments)]
pub fn sample(
    window_start: i64,
    window_len: usize,
    n_context: usize,
    seed: u64,
    mode: Option<ModeArg>,
    total: usize,
    stride: usize,
    n_hist: usize,
    references: &[i64],
    out: Option<&Path>,
) -> Result<(), CliError> {
    let bytes = match mode {
        None => to_json(&sample_training_frames(window_start, window_len, n_context, seed)?)?,
        Some(ModeArg::Custom) => to_json(&build_reference_schedule(total, n_hist, references)?)?,
        Some(m) => {
            let mode = match m {
                ModeArg::Chrono => ScheduleMode::Chronological,
                ModeArg::Reverse => ScheduleMode::Reverse,
                _ => ScheduleMode::Stride,
            };
            to_json(&build_inference_schedule(total, mode, stride, n_hist)?)?
        }
    };
    emit(out, &bytes)
}

pub struct InjectOptions {
    pub seed: u64,
    pub n_fixed: usize,
    pub n_learned: usize,
    pub maps: bool,
    pub identity: bool,
}

fn read_feature_map(path: &Path) -> Result<FeatureMap, CliError> {
    Tensor::read(path).and_then(|t| t.to_feature_map()).map_err(input_err(path))
}

pub fn inject(
    scene_args: &SceneArgs,
    frame: i64,
    view: &str,
    latent_in: &Path,
    out: &Path,
    opts: &InjectOptions,
) -> Result<(), CliError> {
    let scene = load_scene(scene_args)?;
    let v = lookup(&scene, view, frame)?;
    let latent = read_feature_map(latent_in)?;
    let c = latent.channels();
    let s = opts.seed;
    let provider = EmbeddingProvider::default_vocabulary(c, s);
    let box_mlp = Mlp::seeded(&[BOX_PARAMS, c, c], s.wrapping_add(1))?;
    let head = KeypointHead::seeded(c, opts.n_fixed, opts.n_learned, s.wrapping_add(2))?;
    let map_mlp = Mlp::seeded(&[2 * MAP_POINTS, c, c], s.wrapping_add(3))?;
    let f = scene.frame(frame).expect("frame checked above");

    let mut embeddings: Vec<ConditionEmbedding> = Vec::new();
    for b in &f.boxes {
        let mut e = encode_box(b, &provider, &box_mlp)?;
        if opts.identity {
            let mut appearances = Vec::new();
            if let Some(track) = b.track_id {
                for other in scene.frames.iter().filter(|o| o.pose.frame_index() != frame) {
                    let Some(path) = other.features.get(view) else { continue };
                    let feat = read_feature_map(path)?;
                    if feat.channels() != c {
                        return Err(CliError::Input(format!(
                            "{}: {} channels, latent has {c}",
                            path.display(),
                            feat.channels()
                        )));
                    }
                    for ob in ecm_core::control::boxes_for_track(&other.boxes, track) {
                        let oe = encode_box(ob, &provider, &box_mlp)?;
                        let kps = generate_keypoints(ob, &oe.vector, &head)?;
                        appearances.push(aggregate_appearance(&feat, &v.camera, &kps, None));
                    }
                }
            }
            e = update_embedding_identity(&e, &appearances, None)?;
        }
        e.keypoints = generate_keypoints(b, &e.vector, &head)?;
        e.provenance.frame = Some(frame);
        embeddings.push(e);
    }
    if opts.maps {
        for m in &f.map_elements {
            embeddings.push(encode_map(m, &provider, &map_mlp)?);
        }
    }
    let injected = scatter_inject_all(&latent, &embeddings, &v.camera, None)?;
    write_atomic(out, &Tensor::from_feature_map(&injected).encode())
}

pub fn render(
    scene_args: &SceneArgs,
    frame: i64,
    view: &str,
    grid: (usize, usize),
    checker: f64,
    out: &Path,
    depth_out: Option<&Path>,
) -> Result<(), CliError> {
    let scene = load_scene(scene_args)?;
    let v = lookup(&scene, view, frame)?;
    let mut world = scene.render_scene(frame).expect("frame checked above");
    world.checker_cell = checker;
    let r = render_view(&world, &v.camera, &v.pose, Grid::new(grid.0, grid.1))?;
    let (h, w) = grid;
    let mut ppm = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                ppm.push((r.rgb.get(ch, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    write_atomic(out, &ppm)?;
    if let Some(p) = depth_out {
        let t = Tensor::new(vec![h as u32, w as u32], r.depth.iter().map(|d| *d as f32).collect())?;
        write_atomic(p, &t.encode())?;
    }
    Ok(())
}

pub fn field(scene_args: &SceneArgs, query: &str, target: &str, latent: &LatentArgs, out: &Path) -> Result<(), CliError> {
    let scene = load_scene(scene_args)?;
    let (qid, qf) = parse_view_spec(query, None)?;
    let (tid, tf) = parse_view_spec(target, None)?;
    let f = build_field(&lookup(&scene, &qid, qf)?, &lookup(&scene, &tid, tf)?, &anchors(latent)?, grid(latent))?;
    write_atomic(out, &Tensor::from_field(&f).encode())
}

pub fn make_scene(out: Option<&Path>) -> Result<(), CliError> {
    emit(out, &to_json(&synthetic_scene().to_file_struct())?)
}
