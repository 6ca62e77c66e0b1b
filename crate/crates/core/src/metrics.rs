//! Image and link quality metrics: PSNR, SSIM, their object-region variants
//! and detection NMSE.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mask::PatchGrid;
use crate::numeric::{ComplexTensor, Tensor};
use crate::scene::Loc;

/// Reported PSNR when the error vanishes.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 8;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Psnr,
    Ssim,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub region_psnr_db: f64,
    pub region_ssim: f64,
    pub nmse: f64,
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "metric inputs differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn image_dims(a: &Tensor) -> Result<(usize, usize, usize)> {
    match a.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        [h, w] => Ok((1, *h, *w)),
        s => Err(Error::Dimension(format!("expected an image tensor, got {s:?}"))),
    }
}

fn psnr_from_mse(mse: f64, max_val: f64) -> f64 {
    if mse < max_val * max_val * 1e-10 {
        PSNR_CAP_DB
    } else {
        10.0 * (max_val * max_val / mse).log10()
    }
}

fn check_max(max_val: f64) -> Result<()> {
    if max_val.is_nan() || max_val <= 0.0 {
        return Err(Error::Contract(format!("max_val must be positive, got {max_val}")));
    }
    Ok(())
}

/// `10·log10(max²/MSE)`, capped at 100 dB.
pub fn psnr(a: &Tensor, b: &Tensor, max_val: f64) -> Result<f64> {
    same_shape(a, b)?;
    check_max(max_val)?;
    if a.is_empty() {
        return Err(Error::Contract("PSNR of empty images".into()));
    }
    let sse: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(psnr_from_mse(sse / a.len() as f64, max_val))
}

/// Mean SSIM over 8×8 stride-1 windows per channel, averaged over channels;
/// images smaller than the window use global statistics.
pub fn ssim(a: &Tensor, b: &Tensor, max_val: f64) -> Result<f64> {
    same_shape(a, b)?;
    let (_, h, w) = image_dims(a)?;
    ssim_over(a, b, max_val, &vec![true; h * w])
}

fn ssim_stats(xa: &[f64], xb: &[f64], c1: f64, c2: f64) -> f64 {
    let n = xa.len() as f64;
    let ma = xa.iter().sum::<f64>() / n;
    let mb = xb.iter().sum::<f64>() / n;
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for (x, y) in xa.iter().zip(xb) {
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
        cov += (x - ma) * (y - mb);
    }
    let (va, vb, cov) = (va / n, vb / n, cov / n);
    ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

/// SSIM restricted to pixels flagged in `valid` (H×W): windows must lie
/// entirely inside the valid set; without any such window the valid pixels
/// are pooled into global statistics.
fn ssim_over(a: &Tensor, b: &Tensor, max_val: f64, valid: &[bool]) -> Result<f64> {
    check_max(max_val)?;
    let (c, h, w) = image_dims(a)?;
    if !valid.iter().any(|&v| v) {
        return Err(Error::Contract("SSIM over an empty region".into()));
    }
    let c1 = (SSIM_K1 * max_val).powi(2);
    let c2 = (SSIM_K2 * max_val).powi(2);
    let k = SSIM_WINDOW;

    let mut windows = Vec::new();
    if h >= k && w >= k {
        for y in 0..=h - k {
            for x in 0..=w - k {
                if (0..k).all(|dy| (0..k).all(|dx| valid[(y + dy) * w + x + dx])) {
                    windows.push((x, y));
                }
            }
        }
    }

    let (da, db) = (a.data(), b.data());
    let mut total = 0.0;
    let mut xa = Vec::with_capacity(h * w);
    let mut xb = Vec::with_capacity(h * w);
    for ch in 0..c {
        let base = ch * h * w;
        let score = if windows.is_empty() {
            xa.clear();
            xb.clear();
            for (i, _) in valid.iter().enumerate().filter(|(_, &v)| v) {
                xa.push(da[base + i]);
                xb.push(db[base + i]);
            }
            ssim_stats(&xa, &xb, c1, c2)
        } else {
            let mut acc = 0.0;
            for &(x, y) in &windows {
                xa.clear();
                xb.clear();
                for dy in 0..k {
                    let row = base + (y + dy) * w + x;
                    xa.extend_from_slice(&da[row..row + k]);
                    xb.extend_from_slice(&db[row..row + k]);
                }
                acc += ssim_stats(&xa, &xb, c1, c2);
            }
            acc / windows.len() as f64
        };
        total += score;
    }
    Ok(total / c as f64)
}

fn region_pixels(loc: &Loc, grid: &PatchGrid) -> Result<Vec<bool>> {
    if loc.is_empty() {
        return Err(Error::Contract("region metric needs a non-empty loc".into()));
    }
    let (h, w) = (grid.height(), grid.width());
    let mut valid = vec![false; h * w];
    for &i in &loc.patch_indices {
        if i >= grid.num_patches() {
            return Err(Error::Contract(format!("loc index {i} outside the grid")));
        }
        let r = grid.patch_rect(i);
        for y in r.y..r.y + r.h {
            valid[y * w + r.x..y * w + r.x + r.w].iter_mut().for_each(|v| *v = true);
        }
    }
    Ok(valid)
}

/// PSNR or SSIM over the pixels of the patches in `loc`.
pub fn region_metric(a: &Tensor, b: &Tensor, loc: &Loc, grid: &PatchGrid, which: Metric, max_val: f64) -> Result<f64> {
    same_shape(a, b)?;
    let (c, h, w) = image_dims(a)?;
    if h != grid.height() || w != grid.width() {
        return Err(Error::Dimension(format!(
            "image {w}x{h} does not match grid {}x{}",
            grid.width(),
            grid.height()
        )));
    }
    let valid = region_pixels(loc, grid)?;
    match which {
        Metric::Psnr => {
            check_max(max_val)?;
            let (da, db) = (a.data(), b.data());
            let mut sse = 0.0;
            let mut count = 0usize;
            for ch in 0..c {
                for (i, _) in valid.iter().enumerate().filter(|(_, &v)| v) {
                    let d = da[ch * h * w + i] - db[ch * h * w + i];
                    sse += d * d;
                    count += 1;
                }
            }
            Ok(psnr_from_mse(sse / count as f64, max_val))
        }
        Metric::Ssim => ssim_over(a, b, max_val, &valid),
    }
}

/// `‖x̂ − x‖² / ‖x‖²`.
pub fn nmse(x: &ComplexTensor, x_hat: &ComplexTensor) -> Result<f64> {
    if x.shape() != x_hat.shape() {
        return Err(Error::Dimension(format!(
            "NMSE inputs differ in shape: {:?} vs {:?}",
            x.shape(),
            x_hat.shape()
        )));
    }
    let reference = x.energy();
    if reference == 0.0 {
        return Err(Error::Contract("NMSE against an all-zero reference".into()));
    }
    let err: f64 = x.data().iter().zip(x_hat.data()).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(err / reference)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::RngStream;
    use num_complex::Complex64;

    fn rand_img(seed: u64, shape: [usize; 3]) -> Tensor {
        let n = shape.iter().product();
        let data = {
            let mut r = RngStream::new(seed, 0);
            (0..n).map(|_| r.uniform()).collect()
        };
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn psnr_values() {
        let a = rand_img(1, [1, 4, 4]);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        let z = Tensor::zeros([1, 2, 2]);
        let one = Tensor::ones([1, 2, 2]);
        assert!((psnr(&z, &one, 255.0).unwrap() - 48.130_803_608_679_1).abs() < 1e-9);
        assert_eq!(psnr(&z, &one, 1.0).unwrap(), 0.0);
        assert!(psnr(&z, &Tensor::zeros([1, 2, 3]), 1.0).is_err());
    }

    #[test]
    fn ssim_identity_and_constants() {
        let a = rand_img(2, [3, 16, 16]);
        assert_eq!(ssim(&a, &a, 1.0).unwrap(), 1.0);
        let (c1, c2) = (0.2, 0.7);
        let x = Tensor::full([1, 4, 4], c1);
        let y = Tensor::full([1, 4, 4], c2);
        let k1 = (0.01f64).powi(2);
        let expect = (2.0 * c1 * c2 + k1) / (c1 * c1 + c2 * c2 + k1);
        assert!((ssim(&x, &y, 1.0).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn region_full_equals_global() {
        let grid = PatchGrid::new(3, 16, 16, 4).unwrap();
        let (a, b) = (rand_img(3, [3, 16, 16]), rand_img(4, [3, 16, 16]));
        let full = Loc::full(&grid);
        assert_eq!(
            region_metric(&a, &b, &full, &grid, Metric::Psnr, 1.0).unwrap(),
            psnr(&a, &b, 1.0).unwrap()
        );
        assert_eq!(
            region_metric(&a, &b, &full, &grid, Metric::Ssim, 1.0).unwrap(),
            ssim(&a, &b, 1.0).unwrap()
        );
        let empty = Loc::default();
        assert!(matches!(
            region_metric(&a, &b, &empty, &grid, Metric::Psnr, 1.0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn region_ignores_outside() {
        let grid = PatchGrid::new(1, 8, 8, 4).unwrap();
        let a = rand_img(5, [1, 8, 8]);
        let mut d = a.data().to_vec();
        d[7] = 0.0; // pixel (7, 0) lies in patch 1
        let b = Tensor::new([1, 8, 8], d).unwrap();
        let loc = Loc::from_indices(&grid, [0, 2, 3]).unwrap();
        assert_eq!(
            region_metric(&a, &b, &loc, &grid, Metric::Psnr, 1.0).unwrap(),
            PSNR_CAP_DB
        );
    }

    #[test]
    fn nmse_values() {
        let x = ComplexTensor::new([1, 2], vec![Complex64::new(1.0, 2.0), Complex64::new(-3.0, 0.5)]).unwrap();
        assert_eq!(nmse(&x, &x).unwrap(), 0.0);
        assert_eq!(nmse(&x, &ComplexTensor::zeros([1, 2])).unwrap(), 1.0);
        let twice = ComplexTensor::new([1, 2], x.data().iter().map(|z| z * 2.0).collect()).unwrap();
        assert!((nmse(&x, &twice).unwrap() - 1.0).abs() < 1e-15);
        assert!(nmse(&ComplexTensor::zeros([1, 2]), &x).is_err());
    }
}
