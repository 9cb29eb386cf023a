//! Normal distribution truncated to `[0, ∞)`, with numerically stable
//! log-normaliser and derivatives.

use std::f64::consts::FRAC_1_SQRT_2;

use errorfunctions::RealErrorFunctions;

use rand::Rng as _;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::rng::Rng;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `√(π/2)`.
const SQRT_HALF_PI: f64 = 1.253_314_137_315_500_3;

/// `ln Φ(z)` and the inverse Mills ratio `φ(z)/Φ(z)`, both through the
/// scaled complementary error function so that neither underflows.
pub fn log_ndtr_and_mills(z: f64) -> (f64, f64) {
    if z < 0.0 {
        // Φ(z) = ½·exp(−z²/2)·erfcx(−z/√2)
        let e = (-z * FRAC_1_SQRT_2).erfcx();
        ((0.5 * e).ln() - 0.5 * z * z, 1.0 / (SQRT_HALF_PI * e))
    } else if z > 37.0 {
        // φ(z) < 1e-298: both terms vanish, and staying clear of subnormals
        // keeps this branch fast.
        (0.0, 0.0)
    } else {
        let pdf = (-0.5 * z * z - LN_SQRT_2PI).exp();
        let tail = pdf * SQRT_HALF_PI * (z * FRAC_1_SQRT_2).erfcx();
        let lcdf = if tail < 1e-3 {
            -tail * (1.0 + tail * (0.5 + tail * (1.0 / 3.0 + tail * (0.25 + tail * (0.2 + tail / 6.0)))))
        } else {
            (-tail).ln_1p()
        };
        (lcdf, pdf / (1.0 - tail))
    }
}

pub fn log_ndtr(z: f64) -> f64 {
    log_ndtr_and_mills(z).0
}

/// `ln N⁺(y | μ, σ)` for `y ≥ 0`.
pub fn ln_pdf(y: f64, mu: f64, sigma: f64) -> f64 {
    let r = (y - mu) / sigma;
    -0.5 * r * r - sigma.ln() - LN_SQRT_2PI - log_ndtr(mu / sigma)
}

/// Log-density and its partial derivatives in `μ` and `σ`.
#[inline]
pub fn ln_pdf_grad(y: f64, mu: f64, sigma: f64) -> (f64, f64, f64) {
    let (lp, d_mu, d_sigma) = ln_pdf_grad_scaled(y, mu, 1.0 / sigma);
    (lp - sigma.ln(), d_mu, d_sigma)
}

/// [`ln_pdf_grad`] given `1/σ`, leaving out the `−ln σ` term so callers can
/// add it once per scale.
#[inline]
pub fn ln_pdf_grad_scaled(y: f64, mu: f64, inv_sigma: f64) -> (f64, f64, f64) {
    let inv = inv_sigma;
    let r = (y - mu) * inv;
    let z = mu * inv;
    let (lcdf, m) = log_ndtr_and_mills(z);
    let lp = -0.5 * r * r - LN_SQRT_2PI - lcdf;
    let d_mu = (r - m) * inv;
    let d_sigma = (r * r + m * z - 1.0) * inv;
    (lp, d_mu, d_sigma)
}

/// Mean of N⁺(μ, σ).
pub fn mean(mu: f64, sigma: f64) -> f64 {
    mu + sigma * log_ndtr_and_mills(mu / sigma).1
}

/// Exact draw from N⁺(μ, σ): plain rejection when the truncation point is
/// at most one scale above the mean, exponential rejection otherwise.
pub fn sample(mu: f64, sigma: f64, rng: &mut Rng) -> f64 {
    let a = -mu / sigma;
    if a <= 1.0 {
        loop {
            let z: f64 = StandardNormal.sample(rng);
            if z >= a {
                return (mu + sigma * z).max(0.0);
            }
        }
    }
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    let exp = Exp::new(lambda).expect("positive rate");
    loop {
        let z = a + exp.sample(rng);
        let u: f64 = rng.random();
        if u <= (-0.5 * (z - lambda) * (z - lambda)).exp() {
            return (mu + sigma * z).max(0.0);
        }
    }
}
