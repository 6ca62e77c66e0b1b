//! Patch grids and location-informed masking plans.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{RngStream, Tensor};
use crate::scene::{BBox, Loc};

/// Non-overlapping square patches over a `C×H×W` image, indexed row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    channels: usize,
    patch: usize,
    grid_h: usize,
    grid_w: usize,
}

impl PatchGrid {
    pub fn new(channels: usize, height: usize, width: usize, patch: usize) -> Result<Self> {
        if channels == 0 || patch == 0 || height == 0 || width == 0 {
            return Err(Error::Config("patch grid dimensions must be positive".into()));
        }
        if !height.is_multiple_of(patch) || !width.is_multiple_of(patch) {
            return Err(Error::Config(format!(
                "patch size {patch} does not divide image {width}x{height}"
            )));
        }
        Ok(Self {
            channels,
            patch,
            grid_h: height / patch,
            grid_w: width / patch,
        })
    }

    /// Grid for an existing `C×H×W` image.
    pub fn for_image(image: &Tensor, patch: usize) -> Result<Self> {
        let [c, h, w] = image.shape()[..] else {
            return Err(Error::Dimension(format!(
                "expected C×H×W image, got {:?}",
                image.shape()
            )));
        };
        Self::new(c, h, w, patch)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn patch_size(&self) -> usize {
        self.patch
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn height(&self) -> usize {
        self.grid_h * self.patch
    }

    pub fn width(&self) -> usize {
        self.grid_w * self.patch
    }

    pub fn num_patches(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch * self.patch
    }

    /// Patch containing pixel `(x, y)`.
    pub fn patch_at(&self, x: usize, y: usize) -> usize {
        (y / self.patch) * self.grid_w + x / self.patch
    }

    pub fn patch_rect(&self, i: usize) -> BBox {
        BBox {
            x: (i % self.grid_w) * self.patch,
            y: (i / self.grid_w) * self.patch,
            w: self.patch,
            h: self.patch,
        }
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        if image.shape() != [self.channels, self.height(), self.width()] {
            return Err(Error::Dimension(format!(
                "image {:?} does not match grid {}x{}x{}",
                image.shape(),
                self.channels,
                self.height(),
                self.width()
            )));
        }
        Ok(())
    }

    /// `num_patches × patch_dim`; each row is channel-first, then row-major
    /// within the patch.
    pub fn patchify(&self, image: &Tensor) -> Result<Tensor> {
        self.check_image(image)?;
        let (h, w, p) = (self.height(), self.width(), self.patch);
        let src = image.data();
        let mut out = Vec::with_capacity(self.num_patches() * self.patch_dim());
        for i in 0..self.num_patches() {
            let r = self.patch_rect(i);
            for c in 0..self.channels {
                for dy in 0..p {
                    let start = (c * h + r.y + dy) * w + r.x;
                    out.extend_from_slice(&src[start..start + p]);
                }
            }
        }
        Tensor::new([self.num_patches(), self.patch_dim()], out)
    }

    pub fn unpatchify(&self, patches: &Tensor) -> Result<Tensor> {
        if patches.shape() != [self.num_patches(), self.patch_dim()] {
            return Err(Error::Dimension(format!(
                "patch tensor {:?} does not match grid {}x{}",
                patches.shape(),
                self.num_patches(),
                self.patch_dim()
            )));
        }
        let (h, w, p) = (self.height(), self.width(), self.patch);
        let mut out = vec![0.0; self.channels * h * w];
        for i in 0..self.num_patches() {
            let r = self.patch_rect(i);
            let row = patches.row(i);
            for c in 0..self.channels {
                for dy in 0..p {
                    let dst = (c * h + r.y + dy) * w + r.x;
                    let s = (c * p + dy) * p;
                    out[dst..dst + p].copy_from_slice(&row[s..s + p]);
                }
            }
        }
        Tensor::new([self.channels, h, w], out)
    }
}

/// Per-patch keep/mask decisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub p_r: f64,
    /// Kept patch indices, ascending.
    pub keep: Vec<usize>,
    /// Object-region patch indices `R`.
    pub object: Vec<usize>,
    #[serde(skip)]
    masked: Vec<bool>,
}

impl MaskPlan {
    fn from_keep(num_patches: usize, p_r: f64, mut keep: Vec<usize>, object: Vec<usize>) -> Self {
        keep.sort_unstable();
        let mut masked = vec![true; num_patches];
        for &i in &keep {
            masked[i] = false;
        }
        Self {
            p_r,
            keep,
            object,
            masked,
        }
    }

    pub fn masked(&self) -> &[bool] {
        &self.masked
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.masked[i]
    }

    pub fn num_patches(&self) -> usize {
        self.masked.len()
    }

    pub fn keep_count(&self) -> usize {
        self.keep.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("mask plan serializes")
    }

    pub fn from_json(text: &str, grid: &PatchGrid) -> Result<Self> {
        let raw: MaskPlan =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("bad mask plan JSON: {e}")))?;
        let n = grid.num_patches();
        if raw.keep.iter().chain(&raw.object).any(|&i| i >= n) {
            return Err(Error::Contract(format!("mask plan index outside grid of {n}")));
        }
        check_p_r(raw.p_r)?;
        Ok(Self::from_keep(n, raw.p_r, raw.keep, raw.object))
    }
}

fn check_p_r(p_r: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p_r) {
        return Err(Error::Config(format!("p_r must lie in [0, 1], got {p_r}")));
    }
    Ok(())
}

fn object_flags(grid: &PatchGrid, loc: &Loc) -> Result<Vec<bool>> {
    let mut flags = vec![false; grid.num_patches()];
    for &i in &loc.patch_indices {
        if i >= flags.len() {
            return Err(Error::Contract(format!(
                "loc index {i} outside grid of {}",
                flags.len()
            )));
        }
        flags[i] = true;
    }
    Ok(flags)
}

/// Independent Bernoulli masking: object patches are masked with probability
/// `p_r`, background patches with `1 − p_r`.
pub fn sample_mask(grid: &PatchGrid, loc: &Loc, p_r: f64, rng: &mut RngStream) -> Result<MaskPlan> {
    check_p_r(p_r)?;
    let obj = object_flags(grid, loc)?;
    let keep = (0..grid.num_patches())
        .filter(|&i| {
            let p_mask = if obj[i] { p_r } else { 1.0 - p_r };
            !rng.bernoulli(p_mask)
        })
        .collect();
    Ok(MaskPlan::from_keep(
        grid.num_patches(),
        p_r,
        keep,
        loc.patch_indices.clone(),
    ))
}

/// Exactly `keep_count` kept patches, drawn sequentially without replacement
/// with keep weight `1 − p_r` on object patches and `p_r` on background.
/// Once only zero-weight patches remain they are drawn uniformly.
pub fn sample_mask_fixed_count(
    grid: &PatchGrid,
    loc: &Loc,
    p_r: f64,
    keep_count: usize,
    rng: &mut RngStream,
) -> Result<MaskPlan> {
    check_p_r(p_r)?;
    let n = grid.num_patches();
    if keep_count > n {
        return Err(Error::Contract(format!("keep_count {keep_count} exceeds {n} patches")));
    }
    let obj = object_flags(grid, loc)?;
    let mut pool: Vec<(usize, f64)> = (0..n).map(|i| (i, if obj[i] { 1.0 - p_r } else { p_r })).collect();
    let mut keep = Vec::with_capacity(keep_count);
    for _ in 0..keep_count {
        let total: f64 = pool.iter().map(|&(_, w)| w).sum();
        let pick = if total > 0.0 {
            let mut u = rng.uniform() * total;
            let mut chosen = pool.len() - 1;
            for (j, &(_, w)) in pool.iter().enumerate() {
                if w > 0.0 && u < w {
                    chosen = j;
                    break;
                }
                u -= w;
            }
            // Guard against rounding landing on a trailing zero-weight entry.
            if pool[chosen].1 == 0.0 {
                chosen = pool.iter().rposition(|&(_, w)| w > 0.0).expect("positive total");
            }
            chosen
        } else {
            rng.below(pool.len())
        };
        keep.push(pool.swap_remove(pick).0);
    }
    Ok(MaskPlan::from_keep(n, p_r, keep, loc.patch_indices.clone()))
}

/// Uniform sampling of `keep_count` patches without replacement.
pub fn random_mask(grid: &PatchGrid, keep_count: usize, rng: &mut RngStream) -> Result<MaskPlan> {
    let n = grid.num_patches();
    if keep_count > n {
        return Err(Error::Contract(format!("keep_count {keep_count} exceeds {n} patches")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.truncate(keep_count);
    Ok(MaskPlan::from_keep(n, 0.0, order, Vec::new()))
}
