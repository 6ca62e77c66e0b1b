//! Monte Carlo link measurements shared by the channel suite and the
//! acceptance harness.

use num_complex::Complex64;
use semlink::channel::{lmmse_detect, normalize_power, transmit, Channel, ChannelConfig, ChannelFrame, ChannelKind};
use semlink::numeric::{ComplexTensor, RngStream};

use super::oracles::rayleigh_mmse;

/// Empirical scalar-Rayleigh detection MSE for unit-power symbols and the
/// numerically integrated expectation at the same noise variance.
pub fn rayleigh_detection_mse(trials: usize, snr_db: f64, seed: u64) -> (f64, f64) {
    let ch = Channel::new(ChannelConfig {
        kind: ChannelKind::Rayleigh,
        snr_db,
        ..ChannelConfig::default()
    })
    .unwrap();
    let mut rng = RngStream::new(seed, 0);
    let mut acc = 0.0;
    for _ in 0..trials {
        let x = rng.complex_normal(1.0);
        let frame = ch.draw_frame(&mut rng);
        let rx = transmit(&ComplexTensor::new([1, 1], vec![x]).unwrap(), &frame, &mut rng).unwrap();
        let xh = lmmse_detect(&rx, &frame).unwrap().data()[0];
        acc += (xh - x).norm_sqr();
    }
    (acc / trials as f64, rayleigh_mmse(ch.noise_var))
}

/// Largest deviation of scalar L-MMSE from `h*·y/(|h|²+σ²)` over random
/// draws of `h`, `y` and `σ²`.
pub fn scalar_closed_form_error(trials: usize, seed: u64) -> f64 {
    let mut rng = RngStream::new(seed, 1);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let h = rng.complex_normal(1.0);
        let y = rng.complex_normal(2.0);
        let nv = 0.01 + rng.uniform();
        let h_m = ComplexTensor::new([1, 1], vec![h]).unwrap();
        let frame = ChannelFrame {
            h: h_m.clone(),
            h_hat: h_m,
            noise_var: nv,
        };
        let rx = semlink::channel::Received {
            y: ComplexTensor::new([1, 1], vec![y]).unwrap(),
            rows: 1,
            cols: 1,
        };
        let got = lmmse_detect(&rx, &frame).unwrap().data()[0];
        let want = h.conj() * y / (h.norm_sqr() + nv);
        worst = worst.max((got - want).norm() / want.norm().max(1e-300));
    }
    worst
}

/// Mean detection NMSE of unit-power Gaussian symbols.
pub fn mean_nmse(cfg: ChannelConfig, trials: usize, symbols: usize, seed: u64) -> f64 {
    let ch = Channel::new(cfg).unwrap();
    let mut rng = RngStream::new(seed, 2);
    let mut acc = 0.0;
    for _ in 0..trials {
        let data: Vec<Complex64> = (0..symbols).map(|_| rng.complex_normal(1.0)).collect();
        let (x, _) = normalize_power(&ComplexTensor::new([symbols, 1], data).unwrap(), cfg.p_s).unwrap();
        let frame = ch.draw_frame(&mut rng);
        let rx = transmit(&x, &frame, &mut rng).unwrap();
        acc += semlink::metrics::nmse(&x, &lmmse_detect(&rx, &frame).unwrap()).unwrap();
    }
    acc / trials as f64
}

/// NMSE over an SNR ladder and over a CSI-error ladder (at 20 dB) for a
/// `kind` link with `n` antennas on each side, using common random numbers.
pub fn nmse_trends(kind: ChannelKind, n: usize, trials: usize) -> (Vec<f64>, Vec<f64>) {
    let base = ChannelConfig {
        kind,
        n_t: n,
        n_r: n,
        ..ChannelConfig::default()
    };
    let by_snr = [0.0, 10.0, 20.0, 30.0]
        .iter()
        .map(|&snr_db| mean_nmse(ChannelConfig { snr_db, ..base }, trials, 64, 9))
        .collect();
    let by_csi = [0.0, 0.01, 0.05, 0.1]
        .iter()
        .map(|&csi_error_var| {
            mean_nmse(
                ChannelConfig {
                    snr_db: 20.0,
                    csi_error_var,
                    ..base
                },
                trials,
                64,
                9,
            )
        })
        .collect();
    (by_snr, by_csi)
}
