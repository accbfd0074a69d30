//! Small dense layers used by the weight heads and condition encoders.
//!
//! Parameters are plain `f64` row-major matrices drawn from a seeded uniform
//! initialisation; there is no training in this crate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};

/// `y = W x + b` with `W` stored row-major as `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    weight: Vec<f64>,
    bias: Vec<f64>,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    pub fn new(weight: Vec<f64>, bias: Vec<f64>, in_dim: usize, out_dim: usize) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return invalid("linear layer dimensions must be non-zero");
        }
        if weight.len() != in_dim * out_dim || bias.len() != out_dim {
            return invalid(format!(
                "linear layer {in_dim}->{out_dim} needs {} weights and {out_dim} biases, got {} and {}",
                in_dim * out_dim,
                weight.len(),
                bias.len()
            ));
        }
        if weight.iter().chain(&bias).any(|x| !x.is_finite()) {
            return invalid("linear layer parameters must be finite");
        }
        Ok(Self { weight, bias, in_dim, out_dim })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { weight: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim], in_dim, out_dim }
    }

    /// Uniform init in `±1/sqrt(in_dim)` for both weights and biases.
    pub fn seeded(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = (0..in_dim * out_dim).map(|_| rng.random_range(-bound..bound)).collect();
        let bias = (0..out_dim).map(|_| rng.random_range(-bound..bound)).collect();
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Writes `W x + b` into `out`. Panics on dimension mismatch.
    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.in_dim);
        assert_eq!(out.len(), self.out_dim);
        for (o, (row, b)) in out.iter_mut().zip(self.weight.chunks_exact(self.in_dim).zip(&self.bias)) {
            *o = row.iter().zip(x).fold(*b, |acc, (w, xi)| acc + w * xi);
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return invalid(format!("expected input of length {}, got {}", self.in_dim, x.len()));
        }
        let mut out = vec![0.0; self.out_dim];
        self.forward_into(x, &mut out);
        Ok(out)
    }
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// Stack of [`Linear`] layers with SiLU between them (none after the last).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(layers: Vec<Linear>) -> Result<Self> {
        if layers.is_empty() {
            return invalid("an MLP needs at least one layer");
        }
        for w in layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return invalid(format!("layer widths do not chain ({} -> {})", w[0].out_dim, w[1].in_dim));
            }
        }
        Ok(Self { layers })
    }

    /// `dims = [in, hidden.., out]`.
    pub fn seeded(dims: &[usize], seed: u64) -> Result<Self> {
        check_dims(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::new(dims.windows(2).map(|w| Linear::seeded(w[0], w[1], &mut rng)).collect())
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        Self::new(dims.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect())
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim() {
            return invalid(format!("expected input of length {}, got {}", self.in_dim(), x.len()));
        }
        let mut cur = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.out_dim];
            layer.forward_into(&cur, &mut next);
            if i + 1 < self.layers.len() {
                next.iter_mut().for_each(|v| *v = silu(*v));
            }
            cur = next;
        }
        Ok(cur)
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.contains(&0) {
        return invalid(format!("bad MLP dimensions {dims:?}"));
    }
    Ok(())
}

/// Numerically stable softmax, in place.
pub fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}
