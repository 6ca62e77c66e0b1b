//! PSNR, SSIM and their region variants against direct-formula oracles.

mod common;

use common::oracles::{direct_psnr, direct_ssim};
use semlink::mask::PatchGrid;
use semlink::metrics::{psnr, region_metric, ssim, Metric, PSNR_CAP_DB};
use semlink::numeric::{RngStream, Tensor};
use semlink::scene::Loc;

fn pair(rng: &mut RngStream, c: usize, h: usize, w: usize, noise: f64) -> (Tensor, Tensor) {
    let a: Vec<f64> = (0..c * h * w).map(|_| rng.uniform()).collect();
    let b: Vec<f64> = a.iter().map(|x| (x + noise * rng.normal()).clamp(0.0, 1.0)).collect();
    (Tensor::new([c, h, w], a).unwrap(), Tensor::new([c, h, w], b).unwrap())
}

#[test]
fn psnr_and_ssim_match_direct_formulas() {
    let mut rng = RngStream::new(1, 0);
    for t in 0..200 {
        let (c, h, w) = ([1, 3][t % 2], 4 + rng.below(20), 4 + rng.below(20));
        let noise = 0.02 + 0.3 * rng.uniform();
        let (a, b) = pair(&mut rng, c, h, w, noise);
        let p = psnr(&a, &b, 1.0).unwrap();
        assert!((p - direct_psnr(a.data(), b.data(), 1.0)).abs() < 1e-10);
        let s = ssim(&a, &b, 1.0).unwrap();
        assert!((s - direct_ssim(&a, &b, 1.0)).abs() < 1e-10, "{c}x{h}x{w}");
    }
}

#[test]
fn psnr_closed_values() {
    let a = Tensor::zeros([1, 4, 4]);
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
    let b = Tensor::full([1, 4, 4], 1.0);
    assert!((psnr(&a, &b, 255.0).unwrap() - 20.0 * 255f64.log10()).abs() < 1e-12);
    let c = Tensor::full([1, 4, 4], 255.0);
    assert!(psnr(&a, &c, 255.0).unwrap().abs() < 1e-12);
}

#[test]
fn ssim_of_constant_images() {
    let (c1v, c2v) = (0.2, 0.7);
    let a = Tensor::full([3, 16, 16], c1v);
    let b = Tensor::full([3, 16, 16], c2v);
    let k1 = (0.01f64).powi(2);
    let want = (2.0 * c1v * c2v + k1) / (c1v * c1v + c2v * c2v + k1);
    assert!((ssim(&a, &b, 1.0).unwrap() - want).abs() < 1e-12);
}

#[test]
fn full_loc_equals_global() {
    let grid = PatchGrid::new(3, 32, 32, 4).unwrap();
    let mut rng = RngStream::new(2, 0);
    for _ in 0..20 {
        let (a, b) = pair(&mut rng, 3, 32, 32, 0.1);
        let all = Loc::full(&grid);
        let rp = region_metric(&a, &b, &all, &grid, Metric::Psnr, 1.0).unwrap();
        let rs = region_metric(&a, &b, &all, &grid, Metric::Ssim, 1.0).unwrap();
        assert!((rp - psnr(&a, &b, 1.0).unwrap()).abs() < 1e-12);
        assert!((rs - ssim(&a, &b, 1.0).unwrap()).abs() < 1e-12);
    }
}

fn crop(t: &Tensor, x0: usize, y0: usize, s: usize) -> Tensor {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let mut out = Vec::new();
    for ch in 0..c {
        for y in y0..y0 + s {
            for x in x0..x0 + s {
                out.push(t.data()[(ch * h + y) * w + x]);
            }
        }
    }
    Tensor::new([c, s, s], out).unwrap()
}

#[test]
fn single_patch_region_equals_cropped_metric() {
    let grid = PatchGrid::new(3, 32, 32, 4).unwrap();
    let mut rng = RngStream::new(3, 0);
    for _ in 0..50 {
        let (a, b) = pair(&mut rng, 3, 32, 32, 0.1);
        let i = rng.below(64);
        let r = grid.patch_rect(i);
        let (ca, cb) = (crop(&a, r.x, r.y, 4), crop(&b, r.x, r.y, 4));
        let loc = Loc::from_indices(&grid, [i]).unwrap();
        let rp = region_metric(&a, &b, &loc, &grid, Metric::Psnr, 1.0).unwrap();
        let rs = region_metric(&a, &b, &loc, &grid, Metric::Ssim, 1.0).unwrap();
        assert!((rp - direct_psnr(ca.data(), cb.data(), 1.0)).abs() < 1e-10);
        assert!((rs - direct_ssim(&ca, &cb, 1.0)).abs() < 1e-10);
    }
}

#[test]
fn region_ignores_pixels_outside() {
    let grid = PatchGrid::new(3, 32, 32, 8).unwrap();
    let mut rng = RngStream::new(4, 0);
    let (a, _) = pair(&mut rng, 3, 32, 32, 0.0);
    let loc = Loc::from_indices(&grid, [5, 6]).unwrap();
    let mut b = a.data().to_vec();
    for ch in 0..3 {
        for y in 0..32 {
            for x in 0..32 {
                let inside = grid.patch_at(x, y) == 5 || grid.patch_at(x, y) == 6;
                if !inside {
                    b[(ch * 32 + y) * 32 + x] = rng.uniform();
                }
            }
        }
    }
    let b = Tensor::new([3, 32, 32], b).unwrap();
    assert_eq!(
        region_metric(&a, &b, &loc, &grid, Metric::Psnr, 1.0).unwrap(),
        PSNR_CAP_DB
    );
    assert!((region_metric(&a, &b, &loc, &grid, Metric::Ssim, 1.0).unwrap() - 1.0).abs() < 1e-12);
}
