//! Hand-rolled MLP with manual backpropagation.
//!
//! Rectifier hidden layers; the output is either tanh (policies, so actions
//! saturate into `[-1, 1]`) or linear (critics). Forward and backward are
//! plain nested loops with a fixed summation order, which is what makes a
//! parameter update bitwise reproducible wherever it runs.

use serde::{Deserialize, Serialize};

use super::MaddpgError;
use crate::rng::DetRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Tanh,
    Linear,
}

/// Fully connected layer: `z = W x + b` with `W` stored row-major
/// (`out_dim x in_dim`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            w: vec![0.0; out_dim * in_dim],
            b: vec![0.0; out_dim],
        }
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let mut acc = self.b[o];
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            for (wi, xi) in row.iter().zip(x.iter()) {
                acc += wi * xi;
            }
            out.push(acc);
        }
    }
}

/// Multi-layer perceptron; `dims` = [input, hidden..., output].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub out_act: OutputActivation,
}

/// Per-layer intermediates kept from a forward pass for backprop: the input
/// to each layer and the post-activation output of the net.
pub struct ForwardCache {
    /// `inputs[l]` is the input vector fed to layer `l`; one extra slot at
    /// the end holds the final activated output.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation values per layer.
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.inputs.last().expect("cache holds output")
    }
}

/// Gradients matching an [`Mlp`]'s layer shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Grads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
                .collect(),
        }
    }

    pub fn accumulate(&mut self, other: &Grads) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in w.iter_mut().zip(ow) {
                *x += y;
            }
            for (x, y) in b.iter_mut().zip(ob) {
                *x += y;
            }
        }
    }
}

impl Mlp {
    pub fn zeros(dims: &[usize], out_act: OutputActivation) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let layers = dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Self { layers, out_act }
    }

    /// Scaled-uniform fan-in initialization: every weight and bias of a
    /// layer with `in_dim` inputs is drawn from `U(-1/sqrt(in_dim),
    /// 1/sqrt(in_dim))`, in a fixed order.
    pub fn init(dims: &[usize], out_act: OutputActivation, seed: u64) -> Self {
        let mut net = Self::zeros(dims, out_act);
        let mut rng = DetRng::new(seed);
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.in_dim as f64).sqrt();
            for w in layer.w.iter_mut() {
                *w = rng.range_f64(-bound, bound);
            }
            for b in layer.b.iter_mut() {
                *b = rng.range_f64(-bound, bound);
            }
        }
        net
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().expect("non-empty").in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, MaddpgError> {
        Ok(self.forward_cached(x)?.output().to_vec())
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache, MaddpgError> {
        if x.len() != self.in_dim() {
            return Err(MaddpgError::DimMismatch(format!(
                "input has {} entries, net expects {}",
                x.len(),
                self.in_dim()
            )));
        }
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n + 1);
        let mut pre = Vec::with_capacity(n);
        inputs.push(x.to_vec());
        let mut z = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.affine(inputs.last().expect("input"), &mut z);
            pre.push(z.clone());
            let activated: Vec<f64> = if l + 1 < n {
                z.iter().map(|&v| v.max(0.0)).collect()
            } else {
                match self.out_act {
                    OutputActivation::Tanh => z.iter().map(|&v| v.tanh()).collect(),
                    OutputActivation::Linear => z.clone(),
                }
            };
            inputs.push(activated);
        }
        Ok(ForwardCache { inputs, pre })
    }

    /// Backprop of `upstream` (dL/d output) through the cached forward
    /// pass. Returns the parameter gradients and dL/d input.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> (Grads, Vec<f64>) {
        let n = self.layers.len();
        assert_eq!(upstream.len(), self.out_dim());
        let mut grads = Grads::zeros_like(self);

        // Delta at the output layer: apply the output activation's local
        // derivative.
        let mut delta: Vec<f64> = match self.out_act {
            OutputActivation::Tanh => {
                let y = cache.output();
                upstream
                    .iter()
                    .zip(y)
                    .map(|(u, &yv)| u * (1.0 - yv * yv))
                    .collect()
            }
            OutputActivation::Linear => upstream.to_vec(),
        };

        for l in (0..n).rev() {
            let layer = &self.layers[l];
            if l < n - 1 {
                // Hidden layers use the rectifier mask.
                for (d, &z) in delta.iter_mut().zip(&cache.pre[l]) {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &cache.inputs[l];
            let (gw, gb) = &mut grads.layers[l];
            for o in 0..layer.out_dim {
                let d = delta[o];
                gb[o] += d;
                let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (g, &xi) in row.iter_mut().zip(input.iter()) {
                    *g += d * xi;
                }
            }
            // dL/d input of this layer becomes the next delta.
            let mut prev = vec![0.0; layer.in_dim];
            for (o, &d) in delta.iter().enumerate().take(layer.out_dim) {
                let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (p, &wi) in prev.iter_mut().zip(row.iter()) {
                    *p += d * wi;
                }
            }
            delta = prev;
        }
        (grads, delta)
    }

    /// `p <- p - step * g` over every parameter (pass a negative step for
    /// ascent).
    pub fn apply_grads(&mut self, grads: &Grads, step: f64) {
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, g) in layer.w.iter_mut().zip(gw) {
                *w -= step * g;
            }
            for (b, g) in layer.b.iter_mut().zip(gb) {
                *b -= step * g;
            }
        }
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            out.extend_from_slice(&layer.w);
            out.extend_from_slice(&layer.b);
        }
    }

    /// Loads parameters from a flat slice; returns how many were consumed.
    pub fn read_from(&mut self, data: &[f64]) -> Result<usize, MaddpgError> {
        if data.len() < self.n_params() {
            return Err(MaddpgError::DimMismatch(format!(
                "flat block has {} values, net needs {}",
                data.len(),
                self.n_params()
            )));
        }
        let mut off = 0;
        for layer in &mut self.layers {
            let wn = layer.w.len();
            layer.w.copy_from_slice(&data[off..off + wn]);
            off += wn;
            let bn = layer.b.len();
            layer.b.copy_from_slice(&data[off..off + bn]);
            off += bn;
        }
        Ok(off)
    }
}
