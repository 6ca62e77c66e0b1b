//! Downlink physical layer: power normalization, AWGN / Rayleigh / Rician
//! MIMO block fading with imperfect CSI, L-MMSE detection, SNR calibration
//! and the differentiable surrogate used during training.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::linalg::invert;
use crate::numeric::{ComplexTensor, Graph, RngStream, Tensor, Var};

/// Draws used to estimate the expected channel gain at calibration time.
pub const CALIBRATION_DRAWS: usize = 10_000;

/// Lower bound on the noise variance inside the L-MMSE inverse.
pub const NOISE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Awgn,
    Rayleigh,
    Rician,
}

impl ChannelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelKind::Awgn => "awgn",
            ChannelKind::Rayleigh => "rayleigh",
            ChannelKind::Rician => "rician",
        }
    }
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "awgn" => Ok(Self::Awgn),
            "rayleigh" => Ok(Self::Rayleigh),
            "rician" => Ok(Self::Rician),
            other => Err(Error::Config(format!("unknown channel kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub kind: ChannelKind,
    /// Rician K-factor (line-of-sight to scattered power).
    pub rician_r: f64,
    pub n_t: usize,
    pub n_r: usize,
    pub snr_db: f64,
    /// Variance of the CSI estimation error ΔH.
    pub csi_error_var: f64,
    /// Average power per transmitted symbol after normalization.
    pub p_s: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            kind: ChannelKind::Awgn,
            rician_r: 1.0,
            n_t: 1,
            n_r: 1,
            snr_db: 10.0,
            csi_error_var: 0.0,
            p_s: 1.0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_t == 0 || self.n_r == 0 {
            return Err(Error::Config("antenna counts must be at least 1".into()));
        }
        if !(self.p_s > 0.0 && self.p_s.is_finite()) {
            return Err(Error::Config(format!("p_s must be positive, got {}", self.p_s)));
        }
        if self.rician_r.is_nan() || self.rician_r < 0.0 || self.csi_error_var.is_nan() || self.csi_error_var < 0.0 {
            return Err(Error::Config("rician_r and csi_error_var must be non-negative".into()));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::Config("snr_db must be finite".into()));
        }
        Ok(())
    }

    /// Line-of-sight mean and scattered standard deviation of Rician entries.
    pub fn rician_params(&self) -> (f64, f64) {
        let r = self.rician_r;
        ((r / (r + 1.0)).sqrt(), (1.0 / (r + 1.0)).sqrt())
    }
}

/// One block-fading realization with its CSI estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelFrame {
    pub h: ComplexTensor,
    pub h_hat: ComplexTensor,
    pub noise_var: f64,
}

/// Scales `x` so its mean power per symbol equals `p_s`; returns the scaled
/// symbols and the scale factor.
pub fn normalize_power(x: &ComplexTensor, p_s: f64) -> Result<(ComplexTensor, f64)> {
    if x.is_empty() {
        return Err(Error::Contract("cannot normalize an empty symbol block".into()));
    }
    let mean = x.energy() / x.len() as f64;
    if mean == 0.0 {
        return Err(Error::Contract("cannot normalize an all-zero symbol block".into()));
    }
    let s = (p_s / mean).sqrt();
    let data = x.data().iter().map(|z| z * s).collect();
    Ok((ComplexTensor::new(x.shape().to_vec(), data)?, s))
}

fn draw_entry(cfg: &ChannelConfig, rng: &mut RngStream) -> Complex64 {
    match cfg.kind {
        ChannelKind::Awgn => unreachable!("awgn has a deterministic channel"),
        ChannelKind::Rayleigh => rng.complex_normal(1.0),
        ChannelKind::Rician => {
            let (mu, sigma) = cfg.rician_params();
            Complex64::new(mu, 0.0) + rng.complex_normal(sigma * sigma)
        }
    }
}

/// `n_r × n_t` channel matrix; the identity for AWGN.
pub fn draw_matrix(cfg: &ChannelConfig, rng: &mut RngStream) -> ComplexTensor {
    match cfg.kind {
        ChannelKind::Awgn => ComplexTensor::eye(cfg.n_r, cfg.n_t),
        _ => {
            let data = (0..cfg.n_r * cfg.n_t).map(|_| draw_entry(cfg, rng)).collect();
            ComplexTensor::from_raw(vec![cfg.n_r, cfg.n_t], data)
        }
    }
}

/// Expected received signal power per receive antenna per unit transmit
/// power, `E‖H‖²_F / n_r`; exact for AWGN, Monte Carlo otherwise.
pub fn expected_gain(cfg: &ChannelConfig) -> f64 {
    if cfg.kind == ChannelKind::Awgn {
        return cfg.n_t.min(cfg.n_r) as f64 / cfg.n_r as f64;
    }
    type GainKey = (ChannelKind, u64, usize, usize);
    static CACHE: OnceLock<Mutex<HashMap<GainKey, f64>>> = OnceLock::new();
    let key = (cfg.kind, cfg.rician_r.to_bits(), cfg.n_t, cfg.n_r);
    let cache = CACHE.get_or_init(Default::default);
    if let Some(&g) = cache.lock().expect("gain cache").get(&key) {
        return g;
    }
    let mut rng = RngStream::new(0xca1b, cfg.n_t as u64 * 1_000 + cfg.n_r as u64);
    let total: f64 = (0..CALIBRATION_DRAWS)
        .map(|_| draw_matrix(cfg, &mut rng).energy())
        .sum();
    let g = total / CALIBRATION_DRAWS as f64 / cfg.n_r as f64;
    cache.lock().expect("gain cache").insert(key, g);
    g
}

/// Noise variance per complex receive sample such that the expected
/// per-sample SNR equals `snr_db`, for symbols of average power `p_s`.
pub fn calibrate_noise(cfg: &ChannelConfig) -> f64 {
    cfg.p_s * expected_gain(cfg) / 10f64.powf(cfg.snr_db / 10.0)
}

/// A configured channel with its calibrated noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub cfg: ChannelConfig,
    pub noise_var: f64,
}

impl Channel {
    pub fn new(cfg: ChannelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            noise_var: calibrate_noise(&cfg),
            cfg,
        })
    }

    /// Fresh `H` and `Ĥ = H + ΔH`, `ΔH ~ CN(0, σ_e²)`.
    pub fn draw_frame(&self, rng: &mut RngStream) -> ChannelFrame {
        let h = draw_matrix(&self.cfg, rng);
        let h_hat = if self.cfg.csi_error_var > 0.0 {
            let data = h
                .data()
                .iter()
                .map(|z| z + rng.complex_normal(self.cfg.csi_error_var))
                .collect();
            ComplexTensor::from_raw(h.shape().to_vec(), data)
        } else {
            h.clone()
        };
        ChannelFrame {
            h,
            h_hat,
            noise_var: self.noise_var,
        }
    }
}

/// Calibrates and draws in one step.
pub fn draw_channel(cfg: &ChannelConfig, rng: &mut RngStream) -> Result<ChannelFrame> {
    Ok(Channel::new(*cfg)?.draw_frame(rng))
}

/// Received block `Y = H X + N` plus what the receiver needs to restore the
/// original symbol layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Received {
    pub y: ComplexTensor,
    pub rows: usize,
    pub cols: usize,
}

impl Received {
    pub fn symbols(&self) -> usize {
        self.rows * self.cols
    }
}

/// Serializes `x` row-major and fills `n_t`-row blocks column by column,
/// zero-padding the last column.
fn to_blocks(x: &ComplexTensor, n_t: usize) -> ComplexTensor {
    let n = x.len();
    let b = n.div_ceil(n_t);
    let mut data = vec![Complex64::new(0.0, 0.0); n_t * b];
    for (k, &s) in x.data().iter().enumerate() {
        let (col, row) = (k / n_t, k % n_t);
        data[row * b + col] = s;
    }
    ComplexTensor::from_raw(vec![n_t, b], data)
}

fn from_blocks(blocks: &ComplexTensor, rows: usize, cols: usize) -> Result<ComplexTensor> {
    let (n_t, b) = blocks.dims2()?;
    let n = rows * cols;
    if n_t * b < n {
        return Err(Error::Dimension(format!(
            "{n_t}x{b} block cannot hold {rows}x{cols} symbols"
        )));
    }
    let data = (0..n).map(|k| blocks.get(k % n_t, k / n_t)).collect();
    ComplexTensor::new([rows, cols], data)
}

pub fn transmit(x: &ComplexTensor, frame: &ChannelFrame, rng: &mut RngStream) -> Result<Received> {
    let (rows, cols) = x.dims2()?;
    let (n_r, n_t) = frame.h.dims2()?;
    let blocks = to_blocks(x, n_t);
    let mut y = frame.h.matmul(&blocks)?;
    if frame.noise_var > 0.0 {
        let data = y
            .data()
            .iter()
            .map(|s| s + rng.complex_normal(frame.noise_var))
            .collect();
        y = ComplexTensor::from_raw(vec![n_r, blocks.shape()[1]], data);
    }
    Ok(Received { y, rows, cols })
}

/// `X̂ = Ĥᴴ(ĤĤᴴ + σ²I)⁻¹ Y`, padding stripped.
pub fn lmmse_detect(rx: &Received, frame: &ChannelFrame) -> Result<ComplexTensor> {
    let (n_r, _) = frame.h_hat.dims2()?;
    let (y_rows, _) = rx.y.dims2()?;
    if y_rows != n_r {
        return Err(Error::Dimension(format!(
            "received {y_rows} antenna rows, channel has {n_r}"
        )));
    }
    let hh = frame.h_hat.hermitian()?;
    let gram = frame.h_hat.matmul(&hh)?;
    let reg = frame.noise_var.max(NOISE_FLOOR);
    let data = gram
        .data()
        .iter()
        .enumerate()
        .map(|(k, z)| if k / n_r == k % n_r { z + reg } else { *z })
        .collect();
    let inv = invert(&ComplexTensor::from_raw(vec![n_r, n_r], data))?;
    let w = hh.matmul(&inv)?;
    let x_blocks = w.matmul(&rx.y)?;
    from_blocks(&x_blocks, rx.rows, rx.cols)
}

/// One surrogate realization: per-frame gain `w = |h|` broadcast over the
/// real view, additive Gaussian bias of variance `σ²/2` per real component.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateDraw {
    pub gain: f64,
    pub bias: Tensor,
    pub noise_var: f64,
}

/// Surrogate draw for a real-view block of `shape`, calibrated for a
/// single-antenna link of `cfg.kind` at `snr_db`.
pub fn draw_surrogate(cfg: &ChannelConfig, snr_db: f64, shape: &[usize], rng: &mut RngStream) -> SurrogateDraw {
    let scalar = ChannelConfig {
        n_t: 1,
        n_r: 1,
        snr_db,
        ..*cfg
    };
    let noise_var = calibrate_noise(&scalar);
    let gain = draw_matrix(&scalar, rng).data()[0].norm();
    let n = shape.iter().product();
    let bias = rng
        .gaussian(n, 0.0, (noise_var / 2.0).sqrt())
        .reshape(shape.to_vec())
        .expect("sizes agree");
    SurrogateDraw { gain, bias, noise_var }
}

/// `y = w ⊙ x + b`; gradients reach `x` only.
pub fn surrogate_channel(g: &mut Graph, x: Var, draw: &SurrogateDraw) -> Result<Var> {
    let y = g.scale(x, draw.gain);
    let b = g.constant(draw.bias.clone());
    g.add(y, b)
}

/// Scalar L-MMSE equalization of the surrogate output, `w·y / (w² + σ²)`.
pub fn surrogate_detect(g: &mut Graph, y: Var, draw: &SurrogateDraw) -> Var {
    let w = draw.gain;
    g.scale(y, w / (w * w + draw.noise_var.max(NOISE_FLOOR)))
}
