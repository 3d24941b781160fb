use serde::{Deserialize, Serialize};

use crate::error::{CldError, Result};
use crate::rng::{self, stream_rng};

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// Fully connected network with SiLU hidden activations and a linear
/// output layer. Parameters live in one flat vector, layer by layer,
/// weights (row-major `out × in`) followed by biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub widths: Vec<usize>,
    pub params: Vec<f64>,
}

/// Per-row activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    /// Layer inputs; `acts[0]` is the network input.
    pub acts: Vec<Vec<f64>>,
    /// Pre-activations of every layer.
    pub pre: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn n_params_for(widths: &[usize]) -> usize {
        widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn zeros(widths: &[usize]) -> Self {
        Self {
            widths: widths.to_vec(),
            params: vec![0.0; Self::n_params_for(widths)],
        }
    }

    /// LeCun-normal hidden weights; the output layer is scaled by `out_scale`
    /// (zero gives a network that starts at the zero function).
    pub fn init(widths: &[usize], seed: u64, out_scale: f64) -> Self {
        let mut net = Self::zeros(widths);
        let mut r = stream_rng(seed, rng::tag::INIT, 0);
        let n_layers = widths.len() - 1;
        let mut off = 0;
        for l in 0..n_layers {
            let (fi, fo) = (widths[l], widths[l + 1]);
            let scale = (1.0 / fi as f64).sqrt() * if l + 1 == n_layers { out_scale } else { 1.0 };
            for w in &mut net.params[off..off + fi * fo] {
                *w = scale * rng::normal(&mut r);
            }
            off += fi * fo + fo;
        }
        net
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// `(weight offset, bias offset)` of layer `l`.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for k in 0..l {
            off += self.widths[k] * self.widths[k + 1] + self.widths[k + 1];
        }
        (off, off + self.widths[l] * self.widths[l + 1])
    }

    pub fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(CldError::InvalidArgument(format!(
                "input width {} != {}",
                input.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Forward one row, filling `cache`, and return the output.
    pub fn forward_cached(&self, input: &[f64], cache: &mut MlpCache) -> Vec<f64> {
        let n_layers = self.widths.len() - 1;
        cache.acts.clear();
        cache.pre.clear();
        cache.acts.push(input.to_vec());
        let mut off = 0;
        for l in 0..n_layers {
            let (fi, fo) = (self.widths[l], self.widths[l + 1]);
            let w = &self.params[off..off + fi * fo];
            let b = &self.params[off + fi * fo..off + fi * fo + fo];
            let a = cache.acts.last().unwrap();
            let z: Vec<f64> = (0..fo)
                .map(|o| {
                    let row = &w[o * fi..(o + 1) * fi];
                    b[o] + row.iter().zip(a).map(|(p, q)| p * q).sum::<f64>()
                })
                .collect();
            off += fi * fo + fo;
            if l + 1 < n_layers {
                cache.acts.push(z.iter().map(|&q| silu(q)).collect());
            }
            cache.pre.push(z);
        }
        cache.pre.last().unwrap().clone()
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut c = MlpCache::default();
        self.forward_cached(input, &mut c)
    }

    /// Reverse pass for one row. Accumulates `∂(upstream·out)/∂θ` into
    /// `grad` (if given) and returns the gradient with respect to the input.
    pub fn backward(&self, cache: &MlpCache, upstream: &[f64], mut grad: Option<&mut [f64]>) -> Vec<f64> {
        let n_layers = self.widths.len() - 1;
        let mut delta = upstream.to_vec();
        for l in (0..n_layers).rev() {
            let (fi, fo) = (self.widths[l], self.widths[l + 1]);
            let (wo, bo) = self.layer_offsets(l);
            if l + 1 < n_layers {
                for (dz, &z) in delta.iter_mut().zip(&cache.pre[l]) {
                    *dz *= silu_grad(z);
                }
            }
            let a = &cache.acts[l];
            if let Some(g) = grad.as_deref_mut() {
                for o in 0..fo {
                    let d = delta[o];
                    if d != 0.0 {
                        let row = &mut g[wo + o * fi..wo + (o + 1) * fi];
                        for (gi, ai) in row.iter_mut().zip(a) {
                            *gi += d * ai;
                        }
                    }
                    g[bo + o] += d;
                }
            }
            let w = &self.params[wo..wo + fi * fo];
            let mut prev = vec![0.0; fi];
            for o in 0..fo {
                let d = delta[o];
                if d != 0.0 {
                    for (pi, wi) in prev.iter_mut().zip(&w[o * fi..(o + 1) * fi]) {
                        *pi += d * wi;
                    }
                }
            }
            delta = prev;
        }
        delta
    }

    /// Jacobian `∂out/∂input` as `out × in`, one reverse pass per output.
    pub fn input_jacobian(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut c = MlpCache::default();
        self.forward_cached(input, &mut c);
        let m = self.output_dim();
        (0..m)
            .map(|j| {
                let mut e = vec![0.0; m];
                e[j] = 1.0;
                self.backward(&c, &e, None)
            })
            .collect()
    }
}
