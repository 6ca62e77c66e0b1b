//! Second implementations written straight from the formulas, used to pin
//! the library's results.

use semlink::numeric::Tensor;

/// `(shared indices, Z_pub rows)` by explicit loops over users and pairs.
pub fn brute_partition(users: &[Vec<Vec<f64>>], eps: f64, all_pairs: bool) -> (Vec<usize>, Vec<Vec<f64>>) {
    let k = users.len();
    let l = users[0].len();
    let d = users[0][0].len();
    let mut var = vec![vec![0.0; l]; k];
    for u in 0..k {
        for i in 0..l {
            let row = &users[u][i];
            let mut m = 0.0;
            for x in row {
                m += x;
            }
            m /= d as f64;
            let mut v = 0.0;
            for x in row {
                v += (x - m).powi(2);
            }
            var[u][i] = v / d as f64;
        }
    }
    let mut pairs = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            if all_pairs || b == a + 1 {
                pairs.push((a, b));
            }
        }
    }
    let mut shared = Vec::new();
    let mut z_pub = Vec::new();
    for i in 0..l {
        let mut div = 0.0;
        for &(a, b) in &pairs {
            div += (var[a][i] - var[b][i]).abs();
        }
        div /= pairs.len() as f64;
        if div < eps {
            shared.push(i);
            let mut row = vec![0.0; d];
            for user in users {
                for c in 0..d {
                    row[c] += user[i][c];
                }
            }
            z_pub.push(row.into_iter().map(|x| x / k as f64).collect());
        }
    }
    (shared, z_pub)
}

pub fn direct_psnr(a: &[f64], b: &[f64], max_val: f64) -> f64 {
    let mut sse = 0.0;
    for i in 0..a.len() {
        sse += (a[i] - b[i]) * (a[i] - b[i]);
    }
    let mse = sse / a.len() as f64;
    20.0 * max_val.log10() - 10.0 * mse.log10()
}

fn window_ssim(xa: &[f64], xb: &[f64], max_val: f64) -> f64 {
    let n = xa.len() as f64;
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..xa.len() {
        sa += xa[i];
        sb += xb[i];
        saa += xa[i] * xa[i];
        sbb += xb[i] * xb[i];
        sab += xa[i] * xb[i];
    }
    let (ma, mb) = (sa / n, sb / n);
    let va = saa / n - ma * ma;
    let vb = sbb / n - mb * mb;
    let cov = sab / n - ma * mb;
    let c1 = (0.01 * max_val).powi(2);
    let c2 = (0.03 * max_val).powi(2);
    (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

/// Channel-averaged mean SSIM over all 8×8 windows (global statistics when
/// the image is smaller than a window).
pub fn direct_ssim(a: &Tensor, b: &Tensor, max_val: f64) -> f64 {
    let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let at = |t: &Tensor, ch: usize, y: usize, x: usize| t.data()[(ch * h + y) * w + x];
    let mut total = 0.0;
    for ch in 0..c {
        if h < 8 || w < 8 {
            let xa: Vec<f64> = (0..h * w).map(|i| at(a, ch, i / w, i % w)).collect();
            let xb: Vec<f64> = (0..h * w).map(|i| at(b, ch, i / w, i % w)).collect();
            total += window_ssim(&xa, &xb, max_val);
            continue;
        }
        let mut acc = 0.0;
        let mut count = 0;
        for y0 in 0..=h - 8 {
            for x0 in 0..=w - 8 {
                let mut xa = Vec::new();
                let mut xb = Vec::new();
                for y in y0..y0 + 8 {
                    for x in x0..x0 + 8 {
                        xa.push(at(a, ch, y, x));
                        xb.push(at(b, ch, y, x));
                    }
                }
                acc += window_ssim(&xa, &xb, max_val);
                count += 1;
            }
        }
        total += acc / count as f64;
    }
    total / c as f64
}

/// `E[σ²/(|h|²+σ²)]` for `|h|² ~ Exp(1)`, by composite Simpson on
/// `t = u/(1−u)`.
pub fn rayleigh_mmse(noise_var: f64) -> f64 {
    let f = |u: f64| {
        if u >= 1.0 {
            return 0.0;
        }
        let t = u / (1.0 - u);
        noise_var / (t + noise_var) * (-t).exp() / ((1.0 - u) * (1.0 - u))
    };
    let n = 200_000;
    let h = 1.0 / n as f64;
    let mut s = f(0.0) + f(1.0);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// One-sided sign-test p-value: `P(X ≥ wins)` for `X ~ Bin(n, 1/2)`.
pub fn sign_test_p(wins: usize, n: usize) -> f64 {
    let mut log_c = 0.0f64;
    let mut p = 0.0;
    for k in 0..=n {
        if k > 0 {
            log_c += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        if k >= wins {
            p += (log_c - n as f64 * 2f64.ln()).exp();
        }
    }
    p
}
