//! Masked-autoencoder semantic codec: patch embedding, a pre-norm
//! transformer encoder over kept patches, zero-filled masked slots and a
//! shallower decoder that projects back to pixels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::layers::{LayerNorm, Linear, MultiHeadAttention};
use crate::numeric::{Graph, ParamId, ParamStore, RngStream, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub d_s: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub num_heads: usize,
    pub patch_dim: usize,
    pub num_patches: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            d_s: 64,
            enc_layers: 4,
            dec_layers: 2,
            num_heads: 4,
            patch_dim: 48,
            num_patches: 64,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.d_s == 0 || !self.d_s.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "d_s = {} is not divisible into {} heads",
                self.d_s, self.num_heads
            )));
        }
        if self.enc_layers == 0 || self.dec_layers == 0 {
            return Err(Error::Config("encoder and decoder need at least one layer each".into()));
        }
        if self.patch_dim == 0 || self.num_patches == 0 {
            return Err(Error::Config("patch_dim and num_patches must be positive".into()));
        }
        Ok(())
    }
}

/// Encoder output: one `d_s` row per kept patch, in ascending patch order.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticTensor {
    values: Tensor,
    indices: Vec<usize>,
    num_patches: usize,
}

impl SemanticTensor {
    pub fn new(values: Tensor, indices: Vec<usize>, num_patches: usize) -> Result<Self> {
        let (rows, _) = values.dims2()?;
        if rows != indices.len() {
            return Err(Error::Dimension(format!(
                "{rows} semantic rows but {} indices",
                indices.len()
            )));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Contract("semantic indices must be strictly increasing".into()));
        }
        if indices.last().is_some_and(|&i| i >= num_patches) {
            return Err(Error::Contract(format!("semantic index outside {num_patches} patches")));
        }
        Ok(Self {
            values,
            indices,
            num_patches,
        })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn num_patches(&self) -> usize {
        self.num_patches
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn with_values(&self, values: Tensor) -> Result<Self> {
        if values.shape() != self.values.shape() {
            return Err(Error::Dimension(format!(
                "replacement values {:?} vs {:?}",
                values.shape(),
                self.values.shape()
            )));
        }
        Ok(Self { values, ..self.clone() })
    }
}

/// Sinusoidal encoding of position `index`: `sin(i/10000^(2j/d))` on even
/// columns, `cos` of the same angle on odd columns.
pub fn positional_encoding(index: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|c| {
            let pair = (c / 2) as f64;
            let angle = index as f64 / 10000f64.powf(2.0 * pair / d as f64);
            if c % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

pub fn positional_table(indices: &[usize], d: usize) -> Tensor {
    let data = indices.iter().flat_map(|&i| positional_encoding(i, d)).collect();
    Tensor::from_raw(vec![indices.len(), d], data)
}

/// `m = x + MSA(LN(x))`, `out = m + GELU(LN(m)·W + b)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ff: Linear,
}

impl Block {
    fn init(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut RngStream) -> Self {
        Self {
            norm1: LayerNorm::init(store, &format!("{name}.ln1"), d),
            attn: MultiHeadAttention::init(store, &format!("{name}.msa"), d, heads, rng),
            norm2: LayerNorm::init(store, &format!("{name}.ln2"), d),
            ff: Linear::init(store, &format!("{name}.ff"), d, d, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.norm1.forward(g, x)?;
        let a = self.attn.forward(g, h, h, h)?;
        let m = g.add(x, a)?;
        let h = self.norm2.forward(g, m)?;
        let f = self.ff.forward(g, h)?;
        let f = g.gelu(f);
        g.add(m, f)
    }

    fn ids(&self) -> Vec<ParamId> {
        let mut ids = self.norm1.ids().to_vec();
        ids.extend(self.attn.ids());
        ids.extend(self.norm2.ids());
        ids.extend(self.ff.ids());
        ids
    }

    /// Parameters of the attention and feed-forward branches (not the norms).
    pub fn branch_ids(&self) -> Vec<ParamId> {
        let mut ids = self.attn.ids();
        ids.extend(self.ff.ids());
        ids
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EscCodec {
    pub cfg: CodecConfig,
    pub embed: Linear,
    pub encoder: Vec<Block>,
    pub enc_norm: LayerNorm,
    pub decoder: Vec<Block>,
    pub dec_norm: LayerNorm,
    pub head: Linear,
}

impl EscCodec {
    pub fn init(store: &mut ParamStore, cfg: CodecConfig, rng: &mut RngStream) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_s;
        let embed = Linear::init(store, "esc.embed", cfg.patch_dim, d, rng);
        let encoder = (0..cfg.enc_layers)
            .map(|i| Block::init(store, &format!("esc.enc{i}"), d, cfg.num_heads, rng))
            .collect();
        let enc_norm = LayerNorm::init(store, "esc.enc_norm", d);
        let decoder = (0..cfg.dec_layers)
            .map(|i| Block::init(store, &format!("esc.dec{i}"), d, cfg.num_heads, rng))
            .collect();
        let dec_norm = LayerNorm::init(store, "esc.dec_norm", d);
        let head = Linear::init(store, "esc.head", d, cfg.patch_dim, rng);
        Ok(Self {
            cfg,
            embed,
            encoder,
            enc_norm,
            decoder,
            dec_norm,
            head,
        })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = self.embed.ids().to_vec();
        self.encoder.iter().for_each(|b| ids.extend(b.ids()));
        ids.extend(self.enc_norm.ids());
        self.decoder.iter().for_each(|b| ids.extend(b.ids()));
        ids.extend(self.dec_norm.ids());
        ids.extend(self.head.ids());
        ids
    }

    fn check_indices(&self, indices: &[usize]) -> Result<()> {
        let n = self.cfg.num_patches;
        let mut seen = vec![false; n];
        for &i in indices {
            if i >= n {
                return Err(Error::Contract(format!("patch index {i} outside {n} patches")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Contract(format!("duplicate patch index {i}")));
            }
        }
        Ok(())
    }

    /// Linear patch projection plus the positional encoding of each row's
    /// original patch index.
    pub fn embed_var(&self, g: &mut Graph, patches: Var, indices: &[usize]) -> Result<Var> {
        self.check_indices(indices)?;
        let rows = g.shape(patches)[0];
        if rows != indices.len() {
            return Err(Error::Dimension(format!(
                "{rows} patches but {} indices",
                indices.len()
            )));
        }
        let x = self.embed.forward(g, patches)?;
        let pe = g.constant(positional_table(indices, self.cfg.d_s));
        g.add(x, pe)
    }

    /// Encoder over kept patches, in whatever row order they are given.
    pub fn encode_var(&self, g: &mut Graph, patches: Var, indices: &[usize]) -> Result<Var> {
        if indices.is_empty() {
            return Err(Error::Contract("encoder needs at least one kept patch".into()));
        }
        let mut x = self.embed_var(g, patches, indices)?;
        for b in &self.encoder {
            x = b.forward(g, x)?;
        }
        self.enc_norm.forward(g, x)
    }

    /// Scatters semantic rows to their patch slots; masked slots stay zero.
    pub fn zero_fill_var(&self, g: &mut Graph, z: Var, indices: &[usize]) -> Result<Var> {
        g.scatter_rows(z, indices, self.cfg.num_patches)
    }

    /// Full-length sequence to `num_patches × patch_dim` pixels; positional
    /// encodings are added to every row first.
    pub fn decode_var(&self, g: &mut Graph, z_full: Var) -> Result<Var> {
        let n = self.cfg.num_patches;
        if g.shape(z_full) != [n, self.cfg.d_s] {
            return Err(Error::Dimension(format!(
                "decoder expects {n}x{}, got {:?}",
                self.cfg.d_s,
                g.shape(z_full)
            )));
        }
        let all: Vec<usize> = (0..n).collect();
        let pe = g.constant(positional_table(&all, self.cfg.d_s));
        let mut x = g.add(z_full, pe)?;
        for b in &self.decoder {
            x = b.forward(g, x)?;
        }
        let x = self.dec_norm.forward(g, x)?;
        self.head.forward(g, x)
    }

    pub fn embed(&self, store: &ParamStore, patches: &Tensor, indices: &[usize]) -> Result<Tensor> {
        let mut g = Graph::with_params(store, |_| false);
        let p = g.constant(patches.clone());
        let out = self.embed_var(&mut g, p, indices)?;
        Ok(g.value(out).clone())
    }

    /// Encoder output rows for arbitrary (unique) index order.
    pub fn encode_rows(&self, store: &ParamStore, patches: &Tensor, indices: &[usize]) -> Result<Tensor> {
        let mut g = Graph::with_params(store, |_| false);
        let p = g.constant(patches.clone());
        let out = self.encode_var(&mut g, p, indices)?;
        Ok(g.value(out).clone())
    }

    /// `kept` rows must be in ascending patch order.
    pub fn encode(&self, store: &ParamStore, kept: &Tensor, indices: &[usize]) -> Result<SemanticTensor> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Contract("kept indices must be strictly increasing".into()));
        }
        let values = self.encode_rows(store, kept, indices)?;
        SemanticTensor::new(values, indices.to_vec(), self.cfg.num_patches)
    }

    pub fn decode(&self, store: &ParamStore, z_full: &Tensor) -> Result<Tensor> {
        let mut g = Graph::with_params(store, |_| false);
        let z = g.constant(z_full.clone());
        let out = self.decode_var(&mut g, z)?;
        Ok(g.value(out).clone())
    }
}

/// Rows of `z` at their original patch positions, zero vectors elsewhere.
pub fn zero_fill(z: &SemanticTensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let v = g.constant(z.values().clone());
    let out = g.scatter_rows(v, z.indices(), z.num_patches())?;
    Ok(g.value(out).clone())
}
