//! Small dense complex linear algebra for the detector.

use num_complex::Complex64;

use super::tensor::ComplexTensor;
use crate::error::{Error, Result};

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn invert(a: &ComplexTensor) -> Result<ComplexTensor> {
    let (n, m) = a.dims2()?;
    if n != m {
        return Err(Error::Dimension(format!("cannot invert a {n}x{m} matrix")));
    }
    let scale = a.data().iter().map(|z| z.norm()).fold(0.0, f64::max);
    let tol = scale * n as f64 * f64::EPSILON;
    let mut w = a.data().to_vec();
    let mut inv = ComplexTensor::eye(n, n).data().to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| w[i * n + col].norm().total_cmp(&w[j * n + col].norm()))
            .expect("non-empty range");
        if w[pivot * n + col].norm() <= tol {
            return Err(Error::Numeric(format!("singular {n}x{n} system")));
        }
        if pivot != col {
            for j in 0..n {
                w.swap(pivot * n + j, col * n + j);
                inv.swap(pivot * n + j, col * n + j);
            }
        }
        let p = Complex64::new(1.0, 0.0) / w[col * n + col];
        for j in 0..n {
            w[col * n + j] *= p;
            inv[col * n + j] *= p;
        }
        for i in 0..n {
            if i == col {
                continue;
            }
            let f = w[i * n + col];
            if f == Complex64::new(0.0, 0.0) {
                continue;
            }
            for j in 0..n {
                let (wc, ic) = (w[col * n + j], inv[col * n + j]);
                w[i * n + j] -= f * wc;
                inv[i * n + j] -= f * ic;
            }
        }
    }
    ComplexTensor::new([n, n], inv)
}
