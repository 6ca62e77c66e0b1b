//! Parameterized building blocks shared by the codecs.

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::rng::RngStream;
use super::tensor::Tensor;
use crate::error::Result;

pub const LN_EPS: f64 = 1e-5;

/// Xavier/Glorot-uniform initialization.
pub fn xavier(rng: &mut RngStream, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| (2.0 * rng.uniform() - 1.0) * a).collect();
    Tensor::from_raw(vec![fan_in, fan_out], data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn init(store: &mut ParamStore, name: &str, din: usize, dout: usize, rng: &mut RngStream) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), xavier(rng, din, dout)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros([dout])),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.linear(x, w, Some(b))
    }

    pub fn ids(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn init(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::ones([d])),
            bias: store.add(format!("{name}.bias"), Tensor::zeros([d])),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, gain, bias, LN_EPS)
    }

    pub fn ids(&self) -> [ParamId; 2] {
        [self.gain, self.bias]
    }
}

/// Multi-head self-attention with learned Q/K/V and output projections.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn init(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut RngStream) -> Self {
        Self {
            query: Linear::init(store, &format!("{name}.q"), d, d, rng),
            key: Linear::init(store, &format!("{name}.k"), d, d, rng),
            value: Linear::init(store, &format!("{name}.v"), d, d, rng),
            out: Linear::init(store, &format!("{name}.o"), d, d, rng),
            heads,
        }
    }

    /// Projects the inputs, attends per head, concatenates heads and applies
    /// the output projection.
    pub fn forward(&self, g: &mut Graph, q_in: Var, k_in: Var, v_in: Var) -> Result<Var> {
        let q = self.query.forward(g, q_in)?;
        let k = self.key.forward(g, k_in)?;
        let v = self.value.forward(g, v_in)?;
        let o = g.attention(q, k, v, self.heads)?;
        self.out.forward(g, o)
    }

    pub fn ids(&self) -> Vec<ParamId> {
        [self.query, self.key, self.value, self.out]
            .iter()
            .flat_map(Linear::ids)
            .collect()
    }
}

/// Attention weights `softmax(q_h k_hᵀ/√dh)` per head as `heads` matrices of
/// shape `Lq × Lk`, for already-projected inputs.
pub fn attention_weights(q: &Tensor, k: &Tensor, heads: usize) -> Result<Vec<Tensor>> {
    let (lq, d) = q.dims2()?;
    let (lk, dk) = k.dims2()?;
    if dk != d {
        return Err(crate::Error::Dimension(format!("q width {d} vs k width {dk}")));
    }
    if heads == 0 || d % heads != 0 {
        return Err(crate::Error::Config(format!(
            "model width {d} is not divisible into {heads} heads"
        )));
    }
    // Values are irrelevant for the weights; reuse k.
    let (_, probs) = super::graph::attention_forward(q.data(), k.data(), k.data(), lq, lk, d, heads);
    Ok(probs
        .chunks_exact(lq * lk)
        .map(|p| Tensor::from_raw(vec![lq, lk], p.to_vec()))
        .collect())
}
