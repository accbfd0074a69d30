//! Feature aggregation along correspondence fields.
//!
//! For each query cell a small head predicts a distribution over the depth
//! anchors; target features are read at the anchored positions and added
//! to the query feature weighted by that distribution. Anchors whose
//! projection misses the target view get weight zero, and the remaining
//! weights are not renormalised.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correspondence::CorrespondenceField;
use crate::error::{invalid, Result};
use crate::feature::{gather_bilinear_accumulate, FeatureMap};
use crate::nn::{softmax_in_place, Linear, Mlp};

pub use crate::feature::gather_bilinear;

/// `C → C → D` perceptron (SiLU hidden activation) followed by a softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthWeightHead {
    mlp: Mlp,
}

impl DepthWeightHead {
    pub fn seeded(channels: usize, depths: usize, seed: u64) -> Result<Self> {
        Ok(Self { mlp: Mlp::seeded(&[channels, channels, depths], seed)? })
    }

    /// All parameters zero: uniform weights for every input.
    pub fn zeros(channels: usize, depths: usize) -> Result<Self> {
        Ok(Self { mlp: Mlp::zeros(&[channels, channels, depths])? })
    }

    pub fn from_layers(hidden: Linear, output: Linear) -> Result<Self> {
        Ok(Self { mlp: Mlp::new(vec![hidden, output])? })
    }

    pub fn channels(&self) -> usize {
        self.mlp.in_dim()
    }

    pub fn depths(&self) -> usize {
        self.mlp.out_dim()
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }
}

/// Softmax depth distribution for one query feature vector.
pub fn depth_weights(feature: &[f64], head: &DepthWeightHead) -> Result<Vec<f64>> {
    if feature.len() != head.channels() {
        return invalid(format!("feature has {} channels, head expects {}", feature.len(), head.channels()));
    }
    if feature.iter().any(|v| !v.is_finite()) {
        return invalid("feature must be finite");
    }
    let mut logits = head.mlp.forward(feature)?;
    softmax_in_place(&mut logits);
    Ok(logits)
}

/// How per-view contributions are combined when several target views are used.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combine {
    #[default]
    Mean,
    Sum,
}

/// `query + combine_v Σ_i w_i · gather(target_v, p_vi)`, per query cell.
pub fn aggregate(
    query: &FeatureMap,
    targets: &[(&FeatureMap, &CorrespondenceField)],
    head: &DepthWeightHead,
    combine: Combine,
) -> Result<FeatureMap> {
    let (channels, height, width) = query.dims();
    if head.channels() != channels {
        return invalid(format!("head expects {} channels, query has {channels}", head.channels()));
    }
    let Some((_, first)) = targets.first() else {
        return Ok(query.clone());
    };
    let anchors = first.anchors();
    for (map, field) in targets {
        let g = field.grid();
        if g.height != height || g.width != width {
            return invalid(format!(
                "field grid {}x{} does not match query grid {height}x{width}",
                g.height, g.width
            ));
        }
        if field.anchors() != anchors {
            return invalid("all fields must share the same depth anchors");
        }
        if map.dims() != query.dims() {
            return invalid(format!("target map {:?} does not match query {:?}", map.dims(), query.dims()));
        }
    }
    let depths = anchors.len();
    if head.depths() != depths {
        return invalid(format!("head predicts {} depths, fields carry {depths}", head.depths()));
    }

    let scale = match combine {
        Combine::Mean => 1.0 / targets.len() as f64,
        Combine::Sum => 1.0,
    };

    // Depth distributions of every cell, cell-major.
    let cells = height * width;
    let plane = cells;
    let qdata = query.data();
    let mut weights = vec![0.0; cells * depths];
    weights.par_chunks_mut(depths).enumerate().try_for_each(|(cell, wout)| -> Result<()> {
        let f: Vec<f64> = (0..channels).map(|c| qdata[c * plane + cell]).collect();
        wout.copy_from_slice(&depth_weights(&f, head)?);
        Ok(())
    })?;

    // Per-cell update, row-parallel. Each cell is independent so the result
    // does not depend on how rows are split across workers.
    let updates: Vec<Option<Vec<f64>>> = (0..cells)
        .into_par_iter()
        .map(|cell| {
            let (h, w) = (cell / width, cell % width);
            let wq = &weights[cell * depths..(cell + 1) * depths];
            let mut combined = vec![0.0; channels];
            let mut touched = false;
            for (map, field) in targets {
                let pts = field.targets_at(h, w);
                let ok = field.valid_at(h, w);
                let mut per_view = vec![0.0; channels];
                for i in 0..depths {
                    if ok[i] {
                        touched = true;
                        gather_bilinear_accumulate(map, &pts[i], wq[i], &mut per_view);
                    }
                }
                for (c, v) in combined.iter_mut().zip(&per_view) {
                    *c += v;
                }
            }
            touched.then(|| {
                combined.iter_mut().for_each(|v| *v *= scale);
                combined
            })
        })
        .collect();

    let mut out = query.clone();
    let data = out.data_mut();
    for (cell, upd) in updates.into_iter().enumerate() {
        if let Some(delta) = upd {
            for (c, d) in delta.into_iter().enumerate() {
                data[c * plane + cell] += d;
            }
        }
    }
    Ok(out)
}

/// Per-cell masked depth weights (invalid anchors zeroed), laid out `[h][w][i]`.
pub fn masked_weights(query: &FeatureMap, field: &CorrespondenceField, head: &DepthWeightHead) -> Result<Vec<f64>> {
    let (channels, height, width) = query.dims();
    let g = field.grid();
    if g.height != height || g.width != width {
        return invalid("field grid does not match query grid");
    }
    let mut out = Vec::with_capacity(height * width * field.depth_count());
    for h in 0..height {
        for w in 0..width {
            let f: Vec<f64> = (0..channels).map(|c| query.get(c, h, w)).collect();
            let wq = depth_weights(&f, head)?;
            out.extend(wq.iter().zip(field.valid_at(h, w)).map(|(w, ok)| if *ok { *w } else { 0.0 }));
        }
    }
    Ok(out)
}
