//! End-to-end single-user link: mask, encode, channel-code, transmit over
//! the statistical channel, detect, decode and score.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::channel::{lmmse_detect, normalize_power, transmit, Channel};
use crate::codec::{chan_decode, chan_encode, gather, zero_fill, SemanticModel, SemanticTensor};
use crate::error::{Error, Result};
use crate::mask::{random_mask, MaskPlan, PatchGrid};
use crate::metrics::{nmse, psnr, region_metric, ssim, Metric, MetricReport};
use crate::numeric::{ComplexTensor, RngStream, Tensor};
use crate::scene::{Loc, Scene};
use crate::training::training_mask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Masking {
    Adaptive,
    Random,
}

impl Masking {
    pub fn as_str(self) -> &'static str {
        match self {
            Masking::Adaptive => "adaptive",
            Masking::Random => "random",
        }
    }
}

impl fmt::Display for Masking {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Masking {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(Self::Adaptive),
            "random" => Ok(Self::Random),
            other => Err(Error::Config(format!("unknown masking `{other}`"))),
        }
    }
}

/// Everything one transmission produced.
#[derive(Debug, Clone)]
pub struct LinkOutcome {
    pub plan: MaskPlan,
    pub image: Tensor,
    pub z: SemanticTensor,
    pub z_hat: Tensor,
    pub symbols: ComplexTensor,
    pub detected: ComplexTensor,
}

/// Sends one scene's kept patches through `channel` and reconstructs it.
pub fn run_link(
    model: &SemanticModel,
    grid: &PatchGrid,
    patches: &Tensor,
    plan: MaskPlan,
    channel: &Channel,
    rng: &mut RngStream,
) -> Result<LinkOutcome> {
    let kept = gather(patches, &plan.keep)?;
    let z = model.esc.encode(&model.store, &kept, &plan.keep)?;
    let params = model.chan_params();
    let x = chan_encode(z.values(), &params)?;
    let (xn, scale) = normalize_power(&x, channel.cfg.p_s)?;
    let frame = channel.draw_frame(rng);
    let rx = transmit(&xn, &frame, rng)?;
    let det = lmmse_detect(&rx, &frame)?;
    let detected = ComplexTensor::new(det.shape().to_vec(), det.data().iter().map(|s| s / scale).collect())?;
    let z_hat = chan_decode(&detected, &params)?;
    let full = zero_fill(&z.with_values(z_hat.clone())?)?;
    let q = model.esc.decode(&model.store, &full)?;
    Ok(LinkOutcome {
        plan,
        image: grid.unpatchify(&q)?,
        z,
        z_hat,
        symbols: x,
        detected,
    })
}

/// Global and region scores of a reconstruction against its source scene.
pub fn score(scene: &Scene, out: &LinkOutcome, loc: &Loc, grid: &PatchGrid) -> Result<MetricReport> {
    let (region_psnr_db, region_ssim) = if loc.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (
            region_metric(&scene.image, &out.image, loc, grid, Metric::Psnr, 1.0)?,
            region_metric(&scene.image, &out.image, loc, grid, Metric::Ssim, 1.0)?,
        )
    };
    Ok(MetricReport {
        psnr_db: psnr(&scene.image, &out.image, 1.0)?,
        ssim: ssim(&scene.image, &out.image, 1.0)?,
        region_psnr_db,
        region_ssim,
        nmse: nmse(&out.symbols, &out.detected)?,
    })
}

/// Adaptive plan and a uniform random plan with the same keep budget.
pub fn paired_plans(grid: &PatchGrid, loc: &Loc, p_r: f64, rng: &mut RngStream) -> Result<(MaskPlan, MaskPlan)> {
    let adaptive = training_mask(grid, loc, p_r, rng)?;
    let random = random_mask(grid, adaptive.keep_count(), rng)?;
    Ok((adaptive, random))
}

/// Runs both maskings on one scene with common channel randomness.
pub fn paired_trial(
    model: &SemanticModel,
    scene: &Scene,
    loc: &Loc,
    grid: &PatchGrid,
    p_r: f64,
    channel: &Channel,
    rng: &RngStream,
) -> Result<(LinkOutcome, LinkOutcome)> {
    let patches = grid.patchify(&scene.image)?;
    let mut mask_rng = rng.substream(0);
    let (a, r) = paired_plans(grid, loc, p_r, &mut mask_rng)?;
    let chan_rng = rng.substream(1);
    let adaptive = run_link(model, grid, &patches, a, channel, &mut chan_rng.clone())?;
    let random = run_link(model, grid, &patches, r, channel, &mut chan_rng.clone())?;
    Ok((adaptive, random))
}
