//! Stick-breaking bijection between R^(K−1) and the interior of the
//! K-simplex, centred so that the zero vector maps to the uniform point.

use crate::error::{invalid, Result};

#[inline]
fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Maps `y` (length K−1) to a simplex point of length K.
pub fn simplex_forward(y: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; y.len() + 1];
    simplex_forward_into(y, &mut x);
    x
}

/// Writes the simplex point into `x` and returns the log-Jacobian.
pub fn simplex_forward_into(y: &[f64], x: &mut [f64]) -> f64 {
    let k = y.len() + 1;
    debug_assert_eq!(x.len(), k);
    let mut stick: f64 = 1.0;
    let mut ln_stick = 0.0;
    let mut log_j = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let u = yi - ((k - 1 - i) as f64).ln();
        let e = (-u.abs()).exp();
        let l = e.ln_1p();
        let (z, ln_z, ln_1mz) = if u >= 0.0 {
            (1.0 / (1.0 + e), -l, -u - l)
        } else {
            (e / (1.0 + e), u - l, -l)
        };
        log_j += ln_z + ln_1mz + ln_stick;
        ln_stick += ln_1mz;
        x[i] = stick * z;
        stick -= x[i];
    }
    x[k - 1] = stick;
    log_j
}

/// Log-Jacobian of [`simplex_forward`] at `y`.
pub fn simplex_log_jacobian(y: &[f64]) -> f64 {
    let mut x = vec![0.0; y.len() + 1];
    simplex_forward_into(y, &mut x)
}

/// Exact inverse of [`simplex_forward`] plus the forward log-Jacobian.
pub fn simplex_inverse(x: &[f64]) -> Result<(Vec<f64>, f64)> {
    let k = x.len();
    if k < 1 {
        return Err(invalid("empty simplex"));
    }
    if x.iter().any(|&v| !(v > 0.0 && v < 1.0)) && k > 1 {
        return Err(invalid("simplex point must be strictly interior"));
    }
    let mut y = Vec::with_capacity(k - 1);
    let mut stick = 1.0;
    let mut log_j = 0.0;
    for (i, &xi) in x[..k - 1].iter().enumerate() {
        let z = xi / stick;
        if !(z > 0.0 && z < 1.0) {
            return Err(invalid("simplex point must be strictly interior"));
        }
        y.push((z / (1.0 - z)).ln() + ((k - 1 - i) as f64).ln());
        log_j += z.ln() + (1.0 - z).ln() + stick.ln();
        stick -= xi;
    }
    Ok((y, log_j))
}

/// Reverse-mode pass: given `gx = ∂L/∂x`, accumulates
/// `∂(L + log J)/∂y` into `gy`.
pub fn simplex_backward(y: &[f64], gx: &[f64], gy: &mut [f64]) {
    let km1 = y.len();
    if km1 == 0 {
        return;
    }
    let k = km1 + 1;
    let mut z = vec![0.0; km1];
    let mut s = vec![0.0; k];
    s[0] = 1.0;
    for i in 0..km1 {
        z[i] = logistic(y[i] - ((k - 1 - i) as f64).ln());
        s[i + 1] = s[i] * (1.0 - z[i]);
    }
    let mut s_bar = gx[k - 1];
    for i in (0..km1).rev() {
        let zi = z[i];
        gy[i] += (gx[i] - s_bar) * s[i] * zi * (1.0 - zi) + (1.0 - 2.0 * zi);
        s_bar = gx[i] * zi + s_bar * (1.0 - zi) + 1.0 / s[i];
    }
}
