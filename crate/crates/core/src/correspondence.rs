//! Depth-anchored pixel correspondence between a query view and target views,
//! the overlap statistic derived from it, and overlap-ranked target selection.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{relative_pose, CameraModel, DepthAnchors, EgoPose, PixelCoord, DEPTH_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewKind {
    Current,
    Historical,
    Reference,
}

/// One camera of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewRef {
    pub frame_index: i64,
    pub camera: CameraModel,
    pub pose: EgoPose,
    pub kind: ViewKind,
}

impl ViewRef {
    pub fn new(camera: CameraModel, pose: EgoPose, kind: ViewKind) -> Self {
        Self { frame_index: pose.frame_index(), camera, pose, kind }
    }

    pub fn view_id(&self) -> &str {
        self.camera.view_id()
    }

    /// A `current` view must sit on the generation frame.
    pub fn check_generation_frame(&self, generation_frame: i64) -> Result<()> {
        if self.kind == ViewKind::Current && self.frame_index != generation_frame {
            return invalid(format!(
                "view {} is tagged current but belongs to frame {} (generation frame {generation_frame})",
                self.view_id(),
                self.frame_index
            ));
        }
        Ok(())
    }

    fn same_view(&self, other: &ViewRef) -> bool {
        self.view_id() == other.view_id() && self.frame_index == other.frame_index
    }
}

/// Latent grid size `(height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
}

impl Grid {
    pub const fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    /// Center of latent cell `(h, w)`.
    pub fn center(h: usize, w: usize) -> PixelCoord {
        PixelCoord::new(w as f64 + 0.5, h as f64 + 0.5)
    }
}

/// For every query cell and anchor, where the anchored 3-D point lands in the
/// target view (latent coordinates) and whether it lands in front of the
/// target camera and inside its grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceField {
    query: ViewRef,
    target: ViewRef,
    grid: Grid,
    anchors: DepthAnchors,
    targets: Vec<PixelCoord>,
    valid: Vec<bool>,
}

impl CorrespondenceField {
    /// Assembles a field from precomputed arrays laid out `[h][w][i]`.
    pub fn from_parts(
        query: ViewRef,
        target: ViewRef,
        grid: Grid,
        anchors: DepthAnchors,
        targets: Vec<PixelCoord>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let n = grid.cells() * anchors.len();
        if grid.cells() == 0 {
            return invalid("grid dimensions must be >= 1");
        }
        if targets.len() != n || valid.len() != n {
            return invalid(format!("field arrays must hold {n} entries"));
        }
        Ok(Self { query, target, grid, anchors, targets, valid })
    }

    pub fn query(&self) -> &ViewRef {
        &self.query
    }

    pub fn target(&self) -> &ViewRef {
        &self.target
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn anchors(&self) -> &DepthAnchors {
        &self.anchors
    }

    pub fn depth_count(&self) -> usize {
        self.anchors.len()
    }

    #[inline]
    pub fn offset(&self, h: usize, w: usize) -> usize {
        (h * self.grid.width + w) * self.anchors.len()
    }

    /// Target positions of cell `(h, w)`, one per anchor.
    pub fn targets_at(&self, h: usize, w: usize) -> &[PixelCoord] {
        let o = self.offset(h, w);
        &self.targets[o..o + self.anchors.len()]
    }

    pub fn valid_at(&self, h: usize, w: usize) -> &[bool] {
        let o = self.offset(h, w);
        &self.valid[o..o + self.anchors.len()]
    }

    pub fn targets(&self) -> &[PixelCoord] {
        &self.targets
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    /// Clears every validity flag.
    pub fn invalidate_all(&mut self) {
        self.valid.iter_mut().for_each(|v| *v = false);
    }
}

/// Builds the correspondence field of `query` into `target` at latent resolution `grid`.
pub fn build_field(
    query: &ViewRef,
    target: &ViewRef,
    anchors: &DepthAnchors,
    grid: Grid,
) -> Result<CorrespondenceField> {
    if grid.height == 0 || grid.width == 0 {
        return invalid("grid dimensions must be >= 1");
    }
    let (gh, gw) = (grid.height as u32, grid.width as u32);
    let qcam = query.camera.scaled_to(gw, gh);
    let tcam = target.camera.scaled_to(gw, gh);
    let depths = anchors.values();
    let d = depths.len();
    let n = grid.cells() * d;
    let mut targets = vec![PixelCoord::new(0.0, 0.0); n];
    let mut valid = vec![false; n];

    let ego = relative_pose(&query.pose, &target.pose);
    let same_rig_pose = ego.is_identity() && qcam.extrinsic() == tcam.extrinsic();

    if same_rig_pose && qcam.intrinsics() == tcam.intrinsics() {
        // Identical camera in identical pose: every anchor maps back to its own cell center.
        for (cell, (t, v)) in targets.chunks_mut(d).zip(valid.chunks_mut(d)).enumerate() {
            let c = Grid::center(cell / grid.width, cell % grid.width);
            t.fill(c);
            v.fill(true);
        }
    } else {
        // query camera -> query ego -> target ego -> target camera
        let cam_to_cam = if same_rig_pose {
            None
        } else {
            Some(tcam.extrinsic().compose(&ego).compose(&qcam.extrinsic().inverse()))
        };
        let row = grid.width * d;
        targets
            .par_chunks_mut(row)
            .zip(valid.par_chunks_mut(row))
            .enumerate()
            .for_each(|(h, (trow, vrow))| {
                for w in 0..grid.width {
                    let center = Grid::center(h, w);
                    for (i, &depth) in depths.iter().enumerate() {
                        let pq = qcam.unproject_camera(&center, depth);
                        let pt = match &cam_to_cam {
                            Some(t) => t.transform_point(&pq),
                            None => pq,
                        };
                        let pixel = tcam.project_camera(&pt);
                        trow[w * d + i] = pixel;
                        vrow[w * d + i] = pt.z > DEPTH_EPS && tcam.contains(&pixel);
                    }
                }
            });
    }

    Ok(CorrespondenceField { query: query.clone(), target: target.clone(), grid, anchors: anchors.clone(), targets, valid })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapScore {
    pub fraction: f64,
    pub hits: usize,
    pub total: usize,
}

/// Share of anchored projections that hit the target view.
pub fn overlap(field: &CorrespondenceField) -> OverlapScore {
    let hits = field.valid.iter().filter(|v| **v).count();
    let total = field.valid.len();
    OverlapScore { fraction: hits as f64 / total as f64, hits, total }
}

/// Number of target views for cross-view attention.
pub const CROSS_VIEW_TARGETS: usize = 2;

/// Number of target views for reference/temporal attention over `n_frames` context frames.
pub fn temporal_target_count(n_frames: usize) -> usize {
    2 * n_frames
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedView {
    pub view: ViewRef,
    pub score: OverlapScore,
    /// Position of the view in the candidate list handed to [`match_target_views`].
    pub candidate_index: usize,
}

/// Ranks candidates by overlap with `query` and keeps the best `k`.
///
/// Ties are broken by the smaller absolute frame gap to the query, then by the
/// lower candidate index. Candidates that are the query itself (same view id
/// and frame) are skipped.
pub fn match_target_views(
    query: &ViewRef,
    candidates: &[ViewRef],
    k: usize,
    anchors: &DepthAnchors,
    grid: Grid,
) -> Result<Vec<RankedView>> {
    if k == 0 {
        return invalid("k must be >= 1");
    }
    let mut ranked = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.same_view(query))
        .map(|(i, c)| {
            let field = build_field(query, c, anchors, grid)?;
            Ok(RankedView { view: c.clone(), score: overlap(&field), candidate_index: i })
        })
        .collect::<Result<Vec<_>>>()?;
    if ranked.is_empty() {
        return invalid("no candidate views to match against");
    }
    ranked.sort_by(|a, b| rank_order(query, a, b));
    ranked.truncate(k);
    Ok(ranked)
}

fn rank_order(query: &ViewRef, a: &RankedView, b: &RankedView) -> Ordering {
    let gap = |r: &RankedView| (r.view.frame_index - query.frame_index).unsigned_abs();
    b.score
        .fraction
        .total_cmp(&a.score.fraction)
        .then_with(|| gap(a).cmp(&gap(b)))
        .then_with(|| a.candidate_index.cmp(&b.candidate_index))
}
