//! Training frame sampling and inference generation schedules.

use std::collections::BTreeSet;

use rand::{seq::index, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Default training window length in frames.
pub const DEFAULT_WINDOW: usize = 12;
/// Default number of context (reference + historical) frames per training sample.
pub const DEFAULT_CONTEXT: usize = 3;
/// Default number of historical frames at inference.
pub const DEFAULT_HISTORY: usize = 3;

/// Frames drawn for one training sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPlan {
    /// Ascending frame indices.
    pub context_frames: Vec<i64>,
    pub generation_frame: i64,
    /// `(start, length)` of the window the frames were drawn from.
    pub window: (i64, usize),
}

impl SamplingPlan {
    pub fn validate(&self) -> Result<()> {
        let (start, len) = self.window;
        let inside = |f: i64| f >= start && f < start + len as i64;
        if !inside(self.generation_frame) || !self.context_frames.iter().all(|f| inside(*f)) {
            return invalid("sampled frame outside the window");
        }
        if self.context_frames.contains(&self.generation_frame) {
            return invalid("generation frame repeated among context frames");
        }
        let distinct: BTreeSet<_> = self.context_frames.iter().collect();
        if distinct.len() != self.context_frames.len() {
            return invalid("context frames must be distinct");
        }
        Ok(())
    }

    /// All sampled frames, generation frame included, ascending.
    pub fn frames(&self) -> Vec<i64> {
        let mut f = self.context_frames.clone();
        f.push(self.generation_frame);
        f.sort_unstable();
        f
    }
}

/// Draws `n_context + 1` distinct frames uniformly from the window and makes
/// one of them, uniformly chosen, the generation frame. Any position in the
/// window may be the generation frame.
pub fn sample_training_frames(window_start: i64, window_len: usize, n_context: usize, seed: u64) -> Result<SamplingPlan> {
    if window_len < n_context + 1 {
        return invalid(format!(
            "window of {window_len} frames cannot hold {} distinct frames",
            n_context + 1
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = index::sample(&mut rng, window_len, n_context + 1).into_vec();
    let gen_slot = rng.random_range(0..picked.len());
    let generation_frame = window_start + picked[gen_slot] as i64;
    let mut context_frames: Vec<i64> = picked
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != gen_slot)
        .map(|(_, f)| window_start + *f as i64)
        .collect();
    context_frames.sort_unstable();
    Ok(SamplingPlan { context_frames, generation_frame, window: (window_start, window_len) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    /// Forward in time, one frame at a time.
    Chronological,
    /// Forward in time, every `stride`-th frame.
    Stride,
    /// Backward in time from the last frame.
    Reverse,
    /// Forward with extra provided reference frames in every step.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleStep {
    pub generation_frame: i64,
    /// Historical frames nearest first, followed by reference frames.
    pub context_frames: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceSchedule {
    pub mode: ScheduleMode,
    pub stride: usize,
    /// Frames available from the start (logged imagery), never generated.
    pub reference_frames: Vec<i64>,
    pub steps: Vec<ScheduleStep>,
}

impl InferenceSchedule {
    /// Every context frame is a reference frame or was generated by an earlier step,
    /// and no frame is generated twice.
    pub fn is_topologically_valid(&self) -> bool {
        let mut available: BTreeSet<i64> = self.reference_frames.iter().copied().collect();
        let mut generated = BTreeSet::new();
        for step in &self.steps {
            if !step.context_frames.iter().all(|f| available.contains(f)) {
                return false;
            }
            if step.context_frames.contains(&step.generation_frame) || !generated.insert(step.generation_frame) {
                return false;
            }
            available.insert(step.generation_frame);
        }
        true
    }

    pub fn step_for(&self, frame: i64) -> Option<&ScheduleStep> {
        self.steps.iter().find(|s| s.generation_frame == frame)
    }
}

/// Builds a generation order over `0..total_frames`.
///
/// Each step's historical contexts are the up to `n_hist` previously generated
/// frames at `stride` spacing in the direction of generation, nearest first.
/// The first step has no context. `Chronological` requires `stride == 1`;
/// use `Stride` for other spacings. `Custom` is built with
/// [`build_reference_schedule`].
pub fn build_inference_schedule(total_frames: usize, mode: ScheduleMode, stride: usize, n_hist: usize) -> Result<InferenceSchedule> {
    if stride == 0 {
        return invalid("stride must be >= 1");
    }
    if total_frames == 0 {
        return invalid("schedule needs at least one frame");
    }
    let forward = match mode {
        ScheduleMode::Chronological if stride != 1 => {
            return invalid("chronological mode uses stride 1; use stride mode for other spacings")
        }
        ScheduleMode::Chronological | ScheduleMode::Stride => true,
        ScheduleMode::Reverse => false,
        ScheduleMode::Custom => return invalid("custom schedules need explicit reference frames"),
    };
    let last = total_frames as i64 - 1;
    let s = stride as i64;
    let order: Vec<i64> = if forward {
        (0..=last).step_by(stride).collect()
    } else {
        (0..=last).rev().step_by(stride).collect()
    };
    let steps = order
        .iter()
        .map(|&t| {
            let context_frames = (1..=n_hist as i64)
                .map(|j| if forward { t - j * s } else { t + j * s })
                .filter(|f| (0..=last).contains(f))
                .collect();
            ScheduleStep { generation_frame: t, context_frames }
        })
        .collect();
    Ok(InferenceSchedule { mode, stride, reference_frames: Vec::new(), steps })
}

/// Forward schedule where every step sees `n_hist` historical frames plus the
/// given reference frames. Reference frames are not generated.
pub fn build_reference_schedule(total_frames: usize, n_hist: usize, references: &[i64]) -> Result<InferenceSchedule> {
    let base = build_inference_schedule(total_frames, ScheduleMode::Chronological, 1, n_hist)?;
    let refs: BTreeSet<i64> = references.iter().copied().collect();
    if refs.len() != references.len() {
        return invalid("reference frames must be distinct");
    }
    let mut steps = Vec::new();
    let mut generated: Vec<i64> = Vec::new();
    for step in base.steps {
        if refs.contains(&step.generation_frame) {
            continue;
        }
        let mut ctx: Vec<i64> = generated.iter().rev().take(n_hist).copied().collect();
        ctx.extend(references.iter().copied());
        generated.push(step.generation_frame);
        steps.push(ScheduleStep { generation_frame: step.generation_frame, context_frames: ctx });
    }
    Ok(InferenceSchedule { mode: ScheduleMode::Custom, stride: 1, reference_frames: references.to_vec(), steps })
}

/// Mirrors a schedule under `i ↦ total_frames - 1 - i`.
pub fn reflect_schedule(s: &InferenceSchedule, total_frames: usize) -> InferenceSchedule {
    let last = total_frames as i64 - 1;
    let mode = match s.mode {
        ScheduleMode::Reverse if s.stride == 1 => ScheduleMode::Chronological,
        ScheduleMode::Reverse => ScheduleMode::Stride,
        ScheduleMode::Chronological | ScheduleMode::Stride => ScheduleMode::Reverse,
        ScheduleMode::Custom => ScheduleMode::Custom,
    };
    InferenceSchedule {
        mode,
        stride: s.stride,
        reference_frames: s.reference_frames.iter().map(|f| last - f).collect(),
        steps: s
            .steps
            .iter()
            .map(|st| ScheduleStep {
                generation_frame: last - st.generation_frame,
                context_frames: st.context_frames.iter().map(|f| last - f).collect(),
            })
            .collect(),
    }
}
