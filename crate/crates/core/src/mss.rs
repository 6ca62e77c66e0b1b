//! Multi-user semantic sharing: the variance comparator, shared/private
//! partition, public/private transport and bandwidth accounting.

use std::str::FromStr;

use serde::Serialize;

use crate::channel::{lmmse_detect, normalize_power, transmit, Channel};
use crate::codec::{chan_decode, chan_encode, gather, ChanCodecParams};
use crate::error::{Error, Result};
use crate::numeric::{ComplexTensor, RngStream, Tensor};

/// Which user pairs enter the divergence average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairMode {
    /// `(1,2), (2,3), …, (K−1,K)`
    #[default]
    Consecutive,
    AllPairs,
}

impl FromStr for PairMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "consecutive" => Ok(Self::Consecutive),
            "all-pairs" => Ok(Self::AllPairs),
            other => Err(Error::Config(format!("unknown pair mode `{other}`"))),
        }
    }
}

/// Per-user semantic tensors of identical shape `L_s × d_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiUserSemantics {
    users: Vec<Tensor>,
}

impl MultiUserSemantics {
    pub fn new(users: Vec<Tensor>) -> Result<Self> {
        if users.len() < 2 {
            return Err(Error::Contract(format!("need K >= 2 users, got {}", users.len())));
        }
        let shape = users[0].dims2()?;
        for u in &users {
            if u.dims2()? != shape {
                return Err(Error::Dimension(format!(
                    "user semantics differ in shape: {:?} vs {:?}",
                    u.shape(),
                    users[0].shape()
                )));
            }
        }
        Ok(Self { users })
    }

    pub fn k(&self) -> usize {
        self.users.len()
    }

    pub fn seq_len(&self) -> usize {
        self.users[0].shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.users[0].shape()[1]
    }

    pub fn user(&self, k: usize) -> &Tensor {
        &self.users[k]
    }

    pub fn users(&self) -> &[Tensor] {
        &self.users
    }
}

/// Population variance of each row: `K × L_s`.
pub fn variance_profile(z: &MultiUserSemantics) -> Result<Tensor> {
    let d = z.dim();
    if d < 2 {
        return Err(Error::Contract("variance profile needs d_s >= 2".into()));
    }
    let mut out = Vec::with_capacity(z.k() * z.seq_len());
    for u in z.users() {
        for i in 0..z.seq_len() {
            let row = u.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            out.push(row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64);
        }
    }
    Tensor::new([z.k(), z.seq_len()], out)
}

/// Mean absolute variance difference per sequence position.
pub fn divergence(sigma2: &Tensor, mode: PairMode) -> Result<Tensor> {
    let (k, l) = sigma2.dims2()?;
    if k < 2 {
        return Err(Error::Contract(format!("divergence needs K >= 2, got {k}")));
    }
    let s = |j: usize, i: usize| sigma2.data()[j * l + i];
    let pairs: Vec<(usize, usize)> = match mode {
        PairMode::Consecutive => (0..k - 1).map(|j| (j, j + 1)).collect(),
        PairMode::AllPairs => (0..k).flat_map(|a| (a + 1..k).map(move |b| (a, b))).collect(),
    };
    let d = (0..l)
        .map(|i| pairs.iter().map(|&(a, b)| (s(a, i) - s(b, i)).abs()).sum::<f64>() / pairs.len() as f64)
        .collect();
    Tensor::new([l], d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharePartition {
    pub shared_idx: Vec<usize>,
    pub private_idx: Vec<usize>,
    /// `L_pub × d_s`, user mean of each shared row.
    pub z_pub: Tensor,
    /// Per user `L_pri × d_s`.
    pub z_pri: Vec<Tensor>,
    pub epsilon: f64,
    pub seq_len: usize,
}

impl SharePartition {
    pub fn k(&self) -> usize {
        self.z_pri.len()
    }

    pub fn l_pub(&self) -> usize {
        self.shared_idx.len()
    }

    pub fn l_pri(&self) -> usize {
        self.private_idx.len()
    }
}

/// Position `i` is shared iff its divergence is below `epsilon`.
pub fn partition(z: &MultiUserSemantics, epsilon: f64, mode: PairMode) -> Result<SharePartition> {
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(Error::Config(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let d = divergence(&variance_profile(z)?, mode)?;
    let (shared_idx, private_idx): (Vec<usize>, Vec<usize>) = (0..z.seq_len()).partition(|&i| d.data()[i] < epsilon);
    let dim = z.dim();
    let mut pub_data = Vec::with_capacity(shared_idx.len() * dim);
    for &i in &shared_idx {
        for c in 0..dim {
            let sum: f64 = z.users().iter().map(|u| u.row(i)[c]).sum();
            pub_data.push(sum / z.k() as f64);
        }
    }
    let z_pub = Tensor::new([shared_idx.len(), dim], pub_data)?;
    let z_pri = z
        .users()
        .iter()
        .map(|u| gather(u, &private_idx))
        .collect::<Result<Vec<_>>>()?;
    Ok(SharePartition {
        shared_idx,
        private_idx,
        z_pub,
        z_pri,
        epsilon,
        seq_len: z.seq_len(),
    })
}

/// Symbol bookkeeping for the savings ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Accounting {
    /// Charge one symbol per shared index for the reassembly map.
    pub count_side_info: bool,
    pub d_c: usize,
}

/// `((K−1)·L_pub) / (K·L_s)`: fraction of the `K·L_s` baseline rows saved by
/// broadcasting shared rows once.
pub fn bandwidth_savings(p: &SharePartition, k: usize) -> f64 {
    if p.seq_len == 0 || k == 0 {
        return 0.0;
    }
    ((k - 1) * p.l_pub()) as f64 / (k * p.seq_len) as f64
}

/// Savings in symbols; with `count_side_info` the shared index list is
/// charged against the transmitted total.
pub fn bandwidth_savings_with(p: &SharePartition, k: usize, acc: Accounting) -> f64 {
    if !acc.count_side_info {
        return bandwidth_savings(p, k);
    }
    let baseline = (k * p.seq_len * acc.d_c) as f64;
    let sent = ((p.l_pub() + k * p.l_pri()) * acc.d_c + p.l_pub()) as f64;
    (baseline - sent) / baseline
}

/// Channel-use instrumentation for [`transport`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SymbolCounter {
    pub channel_uses: usize,
    /// Semantic rows put on air.
    pub rows: usize,
    /// Complex symbols put on air, excluding antenna padding.
    pub symbols: usize,
}

/// Normalizes power, transmits once and returns what each receiver detects,
/// rescaled by the (side-information) power scale.
fn broadcast_once(
    x: &ComplexTensor,
    channel: &Channel,
    rng: &mut RngStream,
    counter: &mut SymbolCounter,
) -> Result<ComplexTensor> {
    let (rows, cols) = x.dims2()?;
    if rows == 0 {
        return Ok(ComplexTensor::zeros([0, cols]));
    }
    let (xn, scale) = normalize_power(x, channel.cfg.p_s)?;
    let frame = channel.draw_frame(rng);
    let rx = transmit(&xn, &frame, rng)?;
    counter.channel_uses += 1;
    counter.rows += rows;
    counter.symbols += rows * cols;
    let det = lmmse_detect(&rx, &frame)?;
    let data = det.data().iter().map(|z| z / scale).collect();
    ComplexTensor::new([rows, cols], data)
}

fn concat_rows(a: &ComplexTensor, b: &ComplexTensor) -> Result<ComplexTensor> {
    let (ra, ca) = a.dims2()?;
    let (rb, cb) = b.dims2()?;
    if ca != cb {
        return Err(Error::Dimension(format!("cannot stack {ca}- and {cb}-symbol rows")));
    }
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    ComplexTensor::new([ra + rb, ca], data)
}

/// Broadcasts `Z_pub` once over a shared realization and each `Z_pri,k` over
/// user `k`'s own channel; receiver `k` stacks public and private detections,
/// channel-decodes with its own decoder and restores the original row order.
pub fn transport(
    p: &SharePartition,
    user_codecs: &[ChanCodecParams],
    pub_codec: &ChanCodecParams,
    broadcast: &Channel,
    private: &Channel,
    rng: &mut RngStream,
    counter: &mut SymbolCounter,
) -> Result<Vec<Tensor>> {
    let k = p.k();
    if user_codecs.len() != k {
        return Err(Error::Contract(format!(
            "{} user codecs for {k} users",
            user_codecs.len()
        )));
    }
    let d_c = pub_codec.d_c();
    if user_codecs.iter().any(|c| c.d_c() != d_c) {
        return Err(Error::Dimension("all codecs must share d_c".into()));
    }
    let mut pub_rng = rng.substream(0);
    let x_pub = if p.l_pub() > 0 {
        chan_encode(&p.z_pub, pub_codec)?
    } else {
        ComplexTensor::zeros([0, d_c])
    };
    let x_pub_hat = broadcast_once(&x_pub, broadcast, &mut pub_rng, counter)?;

    let mut order = p.shared_idx.clone();
    order.extend_from_slice(&p.private_idx);

    let mut out = Vec::with_capacity(k);
    for (user, codec) in user_codecs.iter().enumerate() {
        let mut r = rng.substream(1 + user as u64);
        let x_pri = if p.l_pri() > 0 {
            chan_encode(&p.z_pri[user], codec)?
        } else {
            ComplexTensor::zeros([0, d_c])
        };
        let x_pri_hat = broadcast_once(&x_pri, private, &mut r, counter)?;
        let stacked = concat_rows(&x_pub_hat, &x_pri_hat)?;
        let z_rows = chan_decode(&stacked, codec)?;
        let d_s = z_rows.shape()[1];
        let mut z = vec![f64::NAN; p.seq_len * d_s];
        for (row, &pos) in order.iter().enumerate() {
            z[pos * d_s..(pos + 1) * d_s].copy_from_slice(z_rows.row(row));
        }
        out.push(Tensor::new([p.seq_len, d_s], z)?);
    }
    Ok(out)
}
