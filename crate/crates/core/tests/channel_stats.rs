//! Statistical behaviour of the fading channel, noise calibration and
//! L-MMSE detection.

mod common;

use common::links::{mean_nmse, nmse_trends, rayleigh_detection_mse, scalar_closed_form_error};
use num_complex::Complex64;
use semlink::channel::{
    calibrate_noise, draw_matrix, draw_surrogate, lmmse_detect, normalize_power, transmit, Channel, ChannelConfig,
    ChannelFrame, ChannelKind,
};
use semlink::numeric::{ComplexTensor, RngStream};

const N: usize = 100_000;

fn moments(samples: &[Complex64]) -> (Complex64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<Complex64>() / n;
    let var = samples.iter().map(|z| (z - mean).norm_sqr()).sum::<f64>() / n;
    (mean, var)
}

fn entries(cfg: &ChannelConfig, n: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = RngStream::new(seed, 0);
    (0..n).map(|_| draw_matrix(cfg, &mut rng).data()[0]).collect()
}

#[test]
fn rician_limits() {
    let base = ChannelConfig {
        kind: ChannelKind::Rician,
        ..ChannelConfig::default()
    };
    let (m, v) = moments(&entries(&ChannelConfig { rician_r: 0.0, ..base }, N, 1));
    let sd = (1.0 / N as f64).sqrt();
    assert!(m.norm() < 5.0 * sd, "mean {m}");
    assert!((v - 1.0).abs() < 0.02, "variance {v}");
    // Real and imaginary parts each carry half the power.
    let s = entries(&ChannelConfig { rician_r: 0.0, ..base }, N, 2);
    let re = s.iter().map(|z| z.re * z.re).sum::<f64>() / N as f64;
    assert!((re - 0.5).abs() < 0.01);

    let (m, v) = moments(&entries(&ChannelConfig { rician_r: 1e9, ..base }, 1000, 3));
    assert!((m - Complex64::new(1.0, 0.0)).norm() < 1e-4);
    assert!(v < 1e-8);
}

#[test]
fn received_noise_power_matches_calibration() {
    let ch = Channel::new(ChannelConfig {
        kind: ChannelKind::Rayleigh,
        n_t: 2,
        n_r: 2,
        snr_db: 3.0,
        ..ChannelConfig::default()
    })
    .unwrap();
    let mut rng = RngStream::new(4, 0);
    let x = ComplexTensor::new([N / 2, 1], (0..N / 2).map(|_| rng.complex_normal(1.0)).collect()).unwrap();
    let frame = ch.draw_frame(&mut rng);
    let rx = transmit(&x, &frame, &mut rng).unwrap();
    let clean = transmit(
        &x,
        &ChannelFrame {
            noise_var: 0.0,
            ..frame.clone()
        },
        &mut rng,
    )
    .unwrap();
    let resid: f64 =
        rx.y.data()
            .iter()
            .zip(clean.y.data())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
    let per = resid / rx.y.len() as f64;
    assert!((per / ch.noise_var - 1.0).abs() < 0.02, "{per} vs {}", ch.noise_var);
}

#[test]
fn hand_two_by_two_product() {
    let c = |re, im| Complex64::new(re, im);
    let h = ComplexTensor::new([2, 2], vec![c(1.0, 1.0), c(0.0, 2.0), c(-1.0, 0.0), c(3.0, -1.0)]).unwrap();
    let frame = ChannelFrame {
        h: h.clone(),
        h_hat: h,
        noise_var: 0.0,
    };
    // Row-major serialization fills antenna rows first: block columns are
    // (x0, x1) and (x2, x3).
    let x = ComplexTensor::new([2, 2], vec![c(1.0, 0.0), c(0.0, 1.0), c(2.0, 0.0), c(1.0, -1.0)]).unwrap();
    let rx = transmit(&x, &frame, &mut RngStream::new(0, 0)).unwrap();
    let want = [
        c(1.0, 1.0) * c(1.0, 0.0) + c(0.0, 2.0) * c(0.0, 1.0),
        c(1.0, 1.0) * c(2.0, 0.0) + c(0.0, 2.0) * c(1.0, -1.0),
        c(-1.0, 0.0) * c(1.0, 0.0) + c(3.0, -1.0) * c(0.0, 1.0),
        c(-1.0, 0.0) * c(2.0, 0.0) + c(3.0, -1.0) * c(1.0, -1.0),
    ];
    assert_eq!(rx.y.data(), &want);
}

#[test]
fn scalar_detection_matches_closed_form() {
    assert!(scalar_closed_form_error(10_000, 5) < 1e-12);
}

#[test]
fn scalar_rayleigh_mse_matches_integral() {
    for snr in [0.0, 10.0] {
        let (emp, analytic) = rayleigh_detection_mse(N, snr, 6);
        assert!((emp / analytic - 1.0).abs() < 0.05, "{snr} dB: {emp} vs {analytic}");
    }
}

#[test]
fn calibration_reproduces_target_snr() {
    let cfg = ChannelConfig {
        kind: ChannelKind::Rayleigh,
        n_t: 2,
        n_r: 2,
        snr_db: 10.0,
        ..ChannelConfig::default()
    };
    let nv = calibrate_noise(&cfg);
    let mut rng = RngStream::new(7, 0);
    let mut signal = 0.0;
    let draws = 20_000;
    for _ in 0..draws {
        let h = draw_matrix(&cfg, &mut rng);
        let x = ComplexTensor::new([2, 1], vec![rng.complex_normal(1.0), rng.complex_normal(1.0)]).unwrap();
        signal += h.matmul(&x).unwrap().energy() / 2.0;
    }
    let snr = signal / draws as f64 / nv;
    assert!((snr / 10.0 - 1.0).abs() < 0.03, "measured linear SNR {snr}");
}

#[test]
fn noise_variance_definition() {
    let at = |snr_db| {
        calibrate_noise(&ChannelConfig {
            snr_db,
            ..ChannelConfig::default()
        })
    };
    assert!((at(0.0) - 1.0).abs() < 1e-15);
    assert!((at(10.0) - at(0.0) / 10.0).abs() < 1e-15);
}

#[test]
fn nmse_trends_in_snr_and_csi_error() {
    for kind in [ChannelKind::Awgn, ChannelKind::Rayleigh, ChannelKind::Rician] {
        let (snr, csi) = nmse_trends(kind, 2, 500);
        assert!(snr.windows(2).all(|w| w[1] < w[0]), "{kind}: {snr:?}");
        assert!(csi.windows(2).all(|w| w[1] >= w[0]), "{kind}: {csi:?}");
    }
}

#[test]
fn near_noiseless_awgn() {
    let cfg = ChannelConfig {
        snr_db: 40.0,
        ..ChannelConfig::default()
    };
    assert!(mean_nmse(cfg, 200, 64, 8) < 1e-3);
}

#[test]
fn perfect_csi_approaches_zero_forcing() {
    let mut rng = RngStream::new(9, 0);
    for n in [1, 2, 4] {
        for _ in 0..50 {
            let cfg = ChannelConfig {
                kind: ChannelKind::Rayleigh,
                n_t: n,
                n_r: n,
                ..ChannelConfig::default()
            };
            let h = draw_matrix(&cfg, &mut rng);
            let frame = ChannelFrame {
                h: h.clone(),
                h_hat: h,
                noise_var: 1e-12,
            };
            let x = ComplexTensor::new([8, 3], (0..24).map(|_| rng.complex_normal(1.0)).collect()).unwrap();
            let rx = transmit(&x, &frame, &mut rng).unwrap();
            let xh = lmmse_detect(&rx, &frame).unwrap();
            let err = semlink::metrics::nmse(&x, &xh).unwrap().sqrt();
            assert!(err < 1e-4, "n = {n}: {err:e}");
        }
    }
}

#[test]
fn normalization_hits_target_power() {
    let mut rng = RngStream::new(10, 0);
    for _ in 0..100 {
        let n = 1 + rng.below(50);
        let scale = 0.01 + 10.0 * rng.uniform();
        let x = ComplexTensor::new([n, 1], (0..n).map(|_| rng.complex_normal(scale)).collect()).unwrap();
        let p_s = 0.1 + rng.uniform();
        let (y, _) = normalize_power(&x, p_s).unwrap();
        assert!((y.energy() / n as f64 - p_s).abs() < 1e-10);
        let (z, s) = normalize_power(&y, p_s).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(z.data().iter().zip(y.data()).all(|(a, b)| (a - b).norm() < 1e-12));
    }
}

#[test]
fn surrogate_gain_follows_channel_marginal() {
    for kind in [ChannelKind::Rayleigh, ChannelKind::Rician] {
        let cfg = ChannelConfig {
            kind,
            ..ChannelConfig::default()
        };
        let mut rng = RngStream::new(11, 0);
        let gains: Vec<f64> = (0..N)
            .map(|_| draw_surrogate(&cfg, 10.0, &[1, 2], &mut rng).gain)
            .collect();
        let direct: Vec<f64> = entries(&cfg, N, 12).iter().map(|z| z.norm()).collect();
        for p in [1, 2, 4] {
            let m = |v: &[f64]| v.iter().map(|x| x.powi(p)).sum::<f64>() / v.len() as f64;
            let (a, b) = (m(&gains), m(&direct));
            assert!((a / b - 1.0).abs() < 0.03, "{kind} moment {p}: {a} vs {b}");
        }
    }
}
