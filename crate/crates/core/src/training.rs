//! Three-phase training: semantic codec, channel codec over the surrogate
//! channel, then the whole network.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{draw_surrogate, surrogate_channel, surrogate_detect, ChannelConfig};
use crate::codec::{gather, SemanticModel};
use crate::error::{Error, Result};
use crate::mask::{sample_mask, MaskPlan, PatchGrid};
use crate::numeric::{Adam, AdamConfig, Graph, ParamId, RngStream, Tensor, Var};
use crate::scene::{generate_scene, locate, Loc, Scene, SceneConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Codec,
    Channel,
    Whole,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Codec, Phase::Channel, Phase::Whole];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Codec => "codec",
            Phase::Channel => "channel",
            Phase::Whole => "whole",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Phase::Codec => 1,
            Phase::Channel => 2,
            Phase::Whole => 3,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "codec" => Ok(Self::Codec),
            "channel" => Ok(Self::Channel),
            "whole" => Ok(Self::Whole),
            other => Err(Error::Config(format!("unknown training phase `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub p_r: f64,
    /// Surrogate SNR is drawn uniformly from this range per batch.
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    /// Fading family and power budget for the surrogate channel.
    pub channel: ChannelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            epochs: 10,
            batch_size: 8,
            seed: 0,
            p_r: 0.3,
            snr_min_db: 0.0,
            snr_max_db: 20.0,
            channel: ChannelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.p_r) {
            return Err(Error::Config(format!("p_r must lie in [0, 1], got {}", self.p_r)));
        }
        if self.snr_min_db.is_nan() || self.snr_max_db.is_nan() || self.snr_min_db > self.snr_max_db {
            return Err(Error::Config("snr_min_db exceeds snr_max_db".into()));
        }
        self.channel.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
}

/// Scenes with their patch tensors and object locations.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub grid: PatchGrid,
    pub scenes: Vec<Scene>,
    pub patches: Vec<Tensor>,
    pub locs: Vec<Loc>,
}

impl Dataset {
    /// Locations come from each scene's first annotated object.
    pub fn from_scenes(scenes: Vec<Scene>, grid: PatchGrid) -> Result<Self> {
        let patches = scenes
            .iter()
            .map(|s| grid.patchify(&s.image))
            .collect::<Result<Vec<_>>>()?;
        let locs = scenes
            .iter()
            .map(|s| match s.primary_label() {
                Some(label) => locate(s, label, &grid),
                None => Ok(Loc::default()),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid,
            scenes,
            patches,
            locs,
        })
    }

    /// `n` scenes on streams `stream_base..stream_base + n` of `seed`.
    pub fn synthetic(n: usize, cfg: &SceneConfig, seed: u64, stream_base: u64) -> Result<Self> {
        let scenes = (0..n as u64)
            .into_par_iter()
            .map(|i| generate_scene(&RngStream::new(seed, stream_base + i), cfg))
            .collect::<Result<Vec<_>>>()?;
        Self::from_scenes(scenes, cfg.grid()?)
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }
}

/// Mean squared pixel error, `E‖Q − P‖²` per element.
pub fn loss_codec(p: &Tensor, q: &Tensor) -> Result<f64> {
    if p.shape() != q.shape() {
        return Err(Error::Dimension(format!(
            "loss inputs {:?} vs {:?}",
            p.shape(),
            q.shape()
        )));
    }
    let n = p.len().max(1) as f64;
    Ok(p.data()
        .iter()
        .zip(q.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Mean squared semantic error, `E‖Ẑ − Z‖²` per element.
pub fn loss_channel(z: &Tensor, z_hat: &Tensor) -> Result<f64> {
    loss_codec(z, z_hat)
}

pub fn loss_whole(p: &Tensor, q: &Tensor, z: &Tensor, z_hat: &Tensor) -> Result<f64> {
    Ok(loss_codec(p, q)? + loss_channel(z, z_hat)?)
}

/// Adaptive plan with at least one kept patch; redraws on an empty keep set.
pub fn training_mask(grid: &PatchGrid, loc: &Loc, p_r: f64, rng: &mut RngStream) -> Result<MaskPlan> {
    loop {
        let plan = sample_mask(grid, loc, p_r, rng)?;
        if !plan.keep.is_empty() {
            return Ok(plan);
        }
    }
}

/// Builds one sample's loss for `phase` on `g`. Channel phases pass through
/// power normalization, the surrogate channel, scalar equalization and
/// de-normalization.
#[allow(clippy::too_many_arguments)]
pub fn sample_loss(
    g: &mut Graph,
    model: &SemanticModel,
    phase: Phase,
    patches: &Tensor,
    plan: &MaskPlan,
    snr_db: f64,
    channel: &ChannelConfig,
    rng: &mut RngStream,
) -> Result<Var> {
    let esc = &model.esc;
    let kept = g.constant(gather(patches, &plan.keep)?);
    let z = esc.encode_var(g, kept, &plan.keep)?;
    let target = g.constant(patches.clone());
    if phase == Phase::Codec {
        let full = esc.zero_fill_var(g, z, &plan.keep)?;
        let q = esc.decode_var(g, full)?;
        return g.mse(q, target);
    }
    let x = model.chan.encode_var(g, z)?;
    let s = g.power_scale(x, channel.p_s)?;
    let xs = g.mul_scalar(x, s)?;
    let draw = draw_surrogate(channel, snr_db, g.shape(x), rng);
    let y = surrogate_channel(g, xs, &draw)?;
    let xh = surrogate_detect(g, y, &draw);
    let xd = g.div_scalar(xh, s)?;
    let z_hat = model.chan.decode_var(g, xd)?;
    let l_ch = g.mse(z_hat, z)?;
    if phase == Phase::Channel {
        return Ok(l_ch);
    }
    let full = esc.zero_fill_var(g, z_hat, &plan.keep)?;
    let q = esc.decode_var(g, full)?;
    let l_codec = g.mse(q, target)?;
    g.add(l_codec, l_ch)
}

/// Parameters updated in `phase`.
pub fn trainable_mask(model: &SemanticModel, phase: Phase) -> Vec<bool> {
    match phase {
        Phase::Codec => model.esc_mask(),
        Phase::Channel => model.chan_mask(),
        Phase::Whole => vec![true; model.store.len()],
    }
}

struct SampleOut {
    loss: f64,
    grads: Vec<(ParamId, Tensor)>,
}

#[allow(clippy::too_many_arguments)]
fn run_sample(
    model: &SemanticModel,
    phase: Phase,
    trainable: &[bool],
    data: &Dataset,
    index: usize,
    snr_db: f64,
    cfg: &TrainConfig,
    mut rng: RngStream,
) -> Result<SampleOut> {
    let plan = training_mask(&data.grid, &data.locs[index], cfg.p_r, &mut rng)?;
    let mut g = Graph::with_params(&model.store, |id| trainable[id.index()]);
    let loss = sample_loss(
        &mut g,
        model,
        phase,
        &data.patches[index],
        &plan,
        snr_db,
        &cfg.channel,
        &mut rng,
    )?;
    let value = g.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::Numeric(format!("non-finite {phase} loss on sample {index}")));
    }
    g.backward(loss)?;
    Ok(SampleOut {
        loss: value,
        grads: g.param_grads(),
    })
}

fn batch_snr(cfg: &TrainConfig, rng: &mut RngStream) -> f64 {
    cfg.snr_min_db + (cfg.snr_max_db - cfg.snr_min_db) * rng.uniform()
}

/// Runs `cfg.epochs` epochs of `phase`; parameters outside the phase stay
/// bit-identical. With `checkpoint`, the model is saved after every epoch.
pub fn train_phase(
    model: &mut SemanticModel,
    phase: Phase,
    data: &Dataset,
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Contract("training needs at least one scene".into()));
    }
    let trainable = trainable_mask(model, phase);
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), &model.store);
    let base = RngStream::new(cfg.seed, 0x7a11 + phase.tag());
    let mut records = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut erng = base.substream(epoch as u64);
        let mut order: Vec<usize> = (0..data.len()).collect();
        erng.shuffle(&mut order);
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let snr_db = batch_snr(cfg, &mut erng);
            let outs = chunk
                .par_iter()
                .map(|&i| {
                    let rng = erng.substream(0x5000_0000 + i as u64);
                    run_sample(model, phase, &trainable, data, i, snr_db, cfg, rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let inv = 1.0 / chunk.len() as f64;
            let mut acc: Vec<Option<Vec<f64>>> = vec![None; model.store.len()];
            let mut loss = 0.0;
            for out in &outs {
                loss += out.loss;
                for (id, gr) in &out.grads {
                    let slot = acc[id.index()].get_or_insert_with(|| vec![0.0; gr.len()]);
                    slot.iter_mut().zip(gr.data()).for_each(|(a, b)| *a += b * inv);
                }
            }
            let grads: Vec<(ParamId, Tensor)> = model
                .store
                .ids()
                .filter_map(|id| {
                    let d = acc[id.index()].take()?;
                    Some((id, Tensor::new(model.store.get(id).shape().to_vec(), d).ok()?))
                })
                .collect();
            adam.step(&mut model.store, &grads);
            records.push(LossRecord {
                phase,
                epoch,
                batch,
                loss: loss * inv,
            });
        }
        if let Some(path) = checkpoint {
            model.save(path)?;
        }
    }
    Ok(records)
}

/// Mean loss of `phase` over `data` with masks and channel draws fixed by
/// `seed`; the SNR is the midpoint of the training range.
pub fn evaluate_loss(model: &SemanticModel, phase: Phase, data: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<f64> {
    let snr_db = 0.5 * (cfg.snr_min_db + cfg.snr_max_db);
    let base = RngStream::new(seed, 0xe7a1 + phase.tag());
    let losses = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = base.substream(i as u64);
            let plan = training_mask(&data.grid, &data.locs[i], cfg.p_r, &mut rng)?;
            let mut g = Graph::with_params(&model.store, |_| false);
            let l = sample_loss(
                &mut g,
                model,
                phase,
                &data.patches[i],
                &plan,
                snr_db,
                &cfg.channel,
                &mut rng,
            )?;
            Ok(g.value(l).data()[0])
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Mean loss per epoch, in epoch order.
pub fn epoch_means(records: &[LossRecord]) -> Vec<f64> {
    let epochs = records.iter().map(|r| r.epoch + 1).max().unwrap_or(0);
    (0..epochs)
        .map(|e| {
            let rs: Vec<f64> = records.iter().filter(|r| r.epoch == e).map(|r| r.loss).collect();
            rs.iter().sum::<f64>() / rs.len().max(1) as f64
        })
        .collect()
}
