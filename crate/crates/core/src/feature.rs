//! Dense `C × H × W` feature grids and the bilinear gather/scatter pair.
//!
//! Pixel `(w, h)` has its center at continuous coordinate `(w + 0.5, h + 0.5)`.
//! Taps falling outside the grid read as zero and are dropped on scatter, so
//! [`gather_bilinear`] and [`scatter_bilinear`] are exact adjoints.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::PixelCoord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
    /// Free-form frame/view tag.
    pub tag: String,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        check_dims(channels, height, width)?;
        Ok(Self { channels, height, width, data: vec![0.0; channels * height * width], tag: String::new() })
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(channels, height, width)?;
        if data.len() != channels * height * width {
            return invalid(format!(
                "feature map {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return invalid("feature values must be finite");
        }
        Ok(Self { channels, height, width, data, tag: String::new() })
    }

    /// Builds a map by evaluating `f(c, h, w)` on every cell.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for h in 0..height {
                for w in 0..width {
                    data.push(f(c, h, w));
                }
            }
        }
        Self::from_vec(channels, height, width, data)
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = tag.into();
        self
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(C, H, W)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, h: usize, w: usize) -> usize {
        (c * self.height + h) * self.width + w
    }

    #[inline]
    pub fn get(&self, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.index(c, h, w)]
    }

    pub fn set(&mut self, c: usize, h: usize, w: usize, value: f64) {
        let i = self.index(c, h, w);
        self.data[i] = value;
    }

    /// The `C`-vector at pixel `(h, w)`.
    pub fn pixel(&self, h: usize, w: usize) -> Vec<f64> {
        (0..self.channels).map(|c| self.get(c, h, w)).collect()
    }

    /// Sum over all cells of `self * other`.
    pub fn dot(&self, other: &FeatureMap) -> Result<f64> {
        if self.dims() != other.dims() {
            return invalid("feature map shapes differ");
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }
}

fn check_dims(c: usize, h: usize, w: usize) -> Result<()> {
    if c == 0 || h == 0 || w == 0 {
        return invalid(format!("feature map dimensions must be >= 1, got {c}x{h}x{w}"));
    }
    Ok(())
}

/// Up to four in-grid `(h, w, weight)` taps around a sub-pixel position.
pub(crate) fn bilinear_taps(p: &PixelCoord, height: usize, width: usize) -> [Option<(usize, usize, f64)>; 4] {
    let mut taps = [None; 4];
    if !(p.u.is_finite() && p.v.is_finite()) {
        return taps;
    }
    let x = p.u - 0.5;
    let y = p.v - 0.5;
    let x0 = x.floor();
    let y0 = y.floor();
    let ax = x - x0;
    let ay = y - y0;
    let corners = [
        (y0, x0, (1.0 - ay) * (1.0 - ax)),
        (y0, x0 + 1.0, (1.0 - ay) * ax),
        (y0 + 1.0, x0, ay * (1.0 - ax)),
        (y0 + 1.0, x0 + 1.0, ay * ax),
    ];
    for (slot, (yy, xx, wt)) in taps.iter_mut().zip(corners) {
        if wt != 0.0 && yy >= 0.0 && xx >= 0.0 && yy < height as f64 && xx < width as f64 {
            *slot = Some((yy as usize, xx as usize, wt));
        }
    }
    taps
}

/// Adds `scale · gather_bilinear(map, p)` to `out`.
pub(crate) fn gather_bilinear_accumulate(map: &FeatureMap, p: &PixelCoord, scale: f64, out: &mut [f64]) {
    debug_assert_eq!(out.len(), map.channels);
    let plane = map.height * map.width;
    for (h, w, wt) in bilinear_taps(p, map.height, map.width).into_iter().flatten() {
        let k = scale * wt;
        let base = h * map.width + w;
        for (c, o) in out.iter_mut().enumerate() {
            *o += k * map.data[c * plane + base];
        }
    }
}

/// Bilinear read at a sub-pixel position with zero padding outside the grid.
pub fn gather_bilinear(map: &FeatureMap, p: &PixelCoord) -> Vec<f64> {
    let mut out = vec![0.0; map.channels];
    for (h, w, wt) in bilinear_taps(p, map.height, map.width).into_iter().flatten() {
        for (c, o) in out.iter_mut().enumerate() {
            *o += wt * map.get(c, h, w);
        }
    }
    out
}

/// Distributes `value` onto the four pixels around `p` with bilinear weights,
/// dropping taps outside the grid.
pub fn scatter_bilinear(map: &mut FeatureMap, p: &PixelCoord, value: &[f64]) -> Result<()> {
    if value.len() != map.channels {
        return invalid(format!("scatter value has {} channels, map has {}", value.len(), map.channels));
    }
    for (h, w, wt) in bilinear_taps(p, map.height, map.width).into_iter().flatten() {
        for (c, v) in value.iter().enumerate() {
            let i = map.index(c, h, w);
            map.data[i] += wt * v;
        }
    }
    Ok(())
}
