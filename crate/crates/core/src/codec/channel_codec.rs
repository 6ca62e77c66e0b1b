//! Linear channel encoder/decoder between semantic rows and complex symbols.
//!
//! Complex symbols use the interleaved real view: column `2j` is the real
//! part of symbol `j`, column `2j + 1` its imaginary part.

use crate::error::{Error, Result};
use crate::numeric::layers::Linear;
use crate::numeric::{ComplexTensor, Graph, ParamId, ParamStore, RngStream, Tensor, Var};

/// Plain-tensor parameters of one encoder/decoder pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ChanCodecParams {
    /// `d_s × 2·d_c`
    pub enc_weight: Tensor,
    pub enc_bias: Tensor,
    /// `2·d_c × d_s`
    pub dec_weight: Tensor,
    pub dec_bias: Tensor,
}

impl ChanCodecParams {
    pub fn new(enc_weight: Tensor, enc_bias: Tensor, dec_weight: Tensor, dec_bias: Tensor) -> Result<Self> {
        let (d_s, two_dc) = enc_weight.dims2()?;
        if two_dc == 0 || two_dc % 2 != 0 {
            return Err(Error::Dimension(format!(
                "encoder output width {two_dc} is not a positive even number"
            )));
        }
        if enc_bias.shape() != [two_dc] || dec_weight.shape() != [two_dc, d_s] || dec_bias.shape() != [d_s] {
            return Err(Error::Dimension(format!(
                "inconsistent channel codec shapes: enc {:?}+{:?}, dec {:?}+{:?}",
                enc_weight.shape(),
                enc_bias.shape(),
                dec_weight.shape(),
                dec_bias.shape()
            )));
        }
        Ok(Self {
            enc_weight,
            enc_bias,
            dec_weight,
            dec_bias,
        })
    }

    pub fn d_s(&self) -> usize {
        self.enc_weight.shape()[0]
    }

    pub fn d_c(&self) -> usize {
        self.enc_weight.shape()[1] / 2
    }

    /// Pair with all-zero weights and biases.
    pub fn zeros(d_s: usize, d_c: usize) -> Self {
        Self {
            enc_weight: Tensor::zeros([d_s, 2 * d_c]),
            enc_bias: Tensor::zeros([2 * d_c]),
            dec_weight: Tensor::zeros([2 * d_c, d_s]),
            dec_bias: Tensor::zeros([d_s]),
        }
    }

    /// Encoder `[I 0]ᵀ`-style selection of the first `2·d_c` features and the
    /// matching zero-padding decoder; an exact inverse pair when
    /// `d_s == 2·d_c`.
    pub fn identity(d_s: usize, d_c: usize) -> Self {
        let mut e = vec![0.0; d_s * 2 * d_c];
        let mut d = vec![0.0; 2 * d_c * d_s];
        for i in 0..d_s.min(2 * d_c) {
            e[i * 2 * d_c + i] = 1.0;
            d[i * d_s + i] = 1.0;
        }
        Self {
            enc_weight: Tensor::from_raw(vec![d_s, 2 * d_c], e),
            enc_bias: Tensor::zeros([2 * d_c]),
            dec_weight: Tensor::from_raw(vec![2 * d_c, d_s], d),
            dec_bias: Tensor::zeros([d_s]),
        }
    }

    fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let (x, w, b) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        let y = g.linear(x, w, Some(b))?;
        Ok(g.value(y).clone())
    }
}

/// Row-wise affine map to `2·d_c` reals read as `d_c` complex symbols.
pub fn chan_encode(z: &Tensor, p: &ChanCodecParams) -> Result<ComplexTensor> {
    let y = ChanCodecParams::affine(z, &p.enc_weight, &p.enc_bias)?;
    ComplexTensor::from_real_view(&y)
}

/// De-interleaves symbols to reals and maps back to `d_s` features.
pub fn chan_decode(x_hat: &ComplexTensor, p: &ChanCodecParams) -> Result<Tensor> {
    let (_, d_c) = x_hat.dims2()?;
    if d_c != p.d_c() {
        return Err(Error::Dimension(format!(
            "received {d_c} symbols per row, decoder expects {}",
            p.d_c()
        )));
    }
    ChanCodecParams::affine(&x_hat.to_real_view(), &p.dec_weight, &p.dec_bias)
}

/// Trainable channel codec living in a parameter store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelCodec {
    pub encoder: Linear,
    pub decoder: Linear,
    pub d_c: usize,
}

impl ChannelCodec {
    pub fn init(store: &mut ParamStore, name: &str, d_s: usize, d_c: usize, rng: &mut RngStream) -> Result<Self> {
        if d_c == 0 {
            return Err(Error::Config("channel symbols per row d_c must be at least 1".into()));
        }
        Ok(Self {
            encoder: Linear::init(store, &format!("{name}.enc"), d_s, 2 * d_c, rng),
            decoder: Linear::init(store, &format!("{name}.dec"), 2 * d_c, d_s, rng),
            d_c,
        })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.encoder.ids().into_iter().chain(self.decoder.ids()).collect()
    }

    /// Semantic rows to the `L × 2·d_c` real view of the symbols.
    pub fn encode_var(&self, g: &mut Graph, z: Var) -> Result<Var> {
        self.encoder.forward(g, z)
    }

    pub fn decode_var(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.decoder.forward(g, x)
    }

    pub fn params(&self, store: &ParamStore) -> ChanCodecParams {
        ChanCodecParams {
            enc_weight: store.get(self.encoder.weight).clone(),
            enc_bias: store.get(self.encoder.bias).clone(),
            dec_weight: store.get(self.decoder.weight).clone(),
            dec_bias: store.get(self.decoder.bias).clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn zero_weights_give_zero_symbols() {
        let p = ChanCodecParams::zeros(8, 2);
        let z = RngStream::new(1, 0).gaussian(24, 0.0, 1.0).reshape([3, 8]).unwrap();
        let x = chan_encode(&z, &p).unwrap();
        assert_eq!(x.shape(), &[3, 2]);
        assert!(x.data().iter().all(|s| *s == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn identity_block_interleaves() {
        let p = ChanCodecParams::identity(4, 2);
        let z = Tensor::from_rows(&[&[1.0, 2.0, 3.0, 4.0]]).unwrap();
        let x = chan_encode(&z, &p).unwrap();
        assert_eq!(x.data(), &[Complex64::new(1.0, 2.0), Complex64::new(3.0, 4.0)]);
        assert_eq!(chan_decode(&x, &p).unwrap(), z);
    }

    #[test]
    fn zero_input_decodes_to_bias() {
        let mut p = ChanCodecParams::identity(4, 2);
        p.dec_bias = Tensor::new([4], vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        let out = chan_decode(&ComplexTensor::zeros([2, 2]), &p).unwrap();
        assert_eq!(out.row(0), p.dec_bias.data());
        assert_eq!(out.row(1), p.dec_bias.data());
    }

    #[test]
    fn decoder_width_mismatch() {
        let p = ChanCodecParams::zeros(4, 2);
        assert!(matches!(
            chan_decode(&ComplexTensor::zeros([1, 3]), &p),
            Err(Error::Dimension(_))
        ));
    }
}
