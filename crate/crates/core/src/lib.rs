//! Explicit camera modeling kernels for multi-view, multi-frame driving scene
//! generation.
//!
//! * [`geometry`]: pinhole cameras, rigid poses, projection and depth-anchored back-projection.
//! * [`correspondence`]: per-pixel correspondence fields, overlap scores and target view matching.
//! * [`attention`]: depth-weighted feature aggregation along correspondence fields.
//! * [`control`]: box/map condition encoding, appearance aggregation and scatter injection.
//! * [`sampling`]: training frame sampling and inference schedules.
//! * [`oracle`]: analytic ray-cast renderer used as ground truth.
//! * [`tensor_io`], [`scene_file`]: on-disk formats.

pub mod attention;
pub mod control;
pub mod correspondence;
pub mod error;
pub mod feature;
pub mod geometry;
pub mod nn;
pub mod oracle;
pub mod sampling;
pub mod scene_file;
pub mod tensor_io;

pub use error::{Error, Result};
pub use feature::FeatureMap;
pub use geometry::{CameraModel, DepthAnchors, EgoPose, PixelCoord, Point3};
