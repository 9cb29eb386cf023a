//! Entry-count series: a seasonal trend and an INGARCH count process.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::netgen::sampling::sample_negbin;
use crate::rng::Rng;

/// Coefficients of the doubly differenced seasonal trend
/// `(1 − ar·B)(1 − sar·Bᵐ) ∇∇ₘ x_t = (1 + ma·B)(1 + sma·Bᵐ) ε_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrendParams {
    pub ar: f64,
    pub ma: f64,
    pub seasonal_ar: f64,
    pub seasonal_ma: f64,
    /// Seasonal period; the number of departure bins when absent.
    pub period: Option<usize>,
    pub noise_sd: f64,
}

impl Default for TrendParams {
    fn default() -> Self {
        Self {
            ar: 0.8,
            ma: 0.9,
            seasonal_ar: 0.5,
            seasonal_ma: -0.5,
            period: None,
            noise_sd: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngarchParams {
    pub nu0: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub xi1: f64,
    pub xi2: f64,
}

impl Default for IngarchParams {
    fn default() -> Self {
        Self {
            nu0: 1.0,
            nu1: 0.1,
            nu2: 0.05,
            xi1: 0.1,
            xi2: 0.05,
        }
    }
}

impl IngarchParams {
    pub fn validate(&self) -> Result<()> {
        let w = [self.nu1, self.nu2, self.xi1, self.xi2];
        if w.iter().any(|v| !(*v >= 0.0)) || !(self.nu0 > 0.0) {
            return Err(invalid("INGARCH weights must be non-negative and nu0 positive"));
        }
        if w.iter().sum::<f64>() >= 1.0 {
            return Err(invalid("INGARCH weights must sum to less than 1"));
        }
        Ok(())
    }

    /// Long-run mean under a constant trend `f`.
    pub fn stationary_mean(&self, f: f64) -> f64 {
        (self.nu0 + f) / (1.0 - self.nu1 - self.nu2 - self.xi1 - self.xi2)
    }
}

/// Simulates the raw seasonal trend of length `len` from a zero start.
pub fn simulate_seasonal_arima(len: usize, p: &TrendParams, period: usize, rng: &mut Rng) -> Vec<f64> {
    let m = period.max(1);
    let noise = Normal::new(0.0, p.noise_sd).expect("finite noise sd");
    let eps: Vec<f64> = (0..len).map(|_| noise.sample(rng)).collect();
    let at = |v: &[f64], t: usize, lag: usize| if t >= lag { v[t - lag] } else { 0.0 };
    let mut w = vec![0.0; len];
    for t in 0..len {
        w[t] = p.ar * at(&w, t, 1) + p.seasonal_ar * at(&w, t, m)
            - p.ar * p.seasonal_ar * at(&w, t, m + 1)
            + eps[t]
            + p.ma * at(&eps, t, 1)
            + p.seasonal_ma * at(&eps, t, m)
            + p.ma * p.seasonal_ma * at(&eps, t, m + 1);
    }
    let mut x = vec![0.0; len];
    for t in 0..len {
        x[t] = at(&x, t, 1) + at(&x, t, m) - at(&x, t, m + 1) + w[t];
    }
    x
}

/// Shifts a series to a zero minimum and blends it with its mean:
/// `F = η·H + (1 − η)·mean(H)`.
pub fn scale_trend(raw: &[f64], eta: f64) -> Vec<f64> {
    let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let h: Vec<f64> = raw.iter().map(|v| v - min).collect();
    let mean = h.iter().sum::<f64>() / h.len().max(1) as f64;
    h.iter().map(|v| eta * v + (1.0 - eta) * mean).collect()
}

/// Non-negative trend of length `len` with trend scale `eta`.
pub fn generate_trend(len: usize, eta: f64, p: &TrendParams, rng: &mut Rng) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(invalid(format!("trend scale must lie in [0, 1], got {eta}")));
    }
    let raw = simulate_seasonal_arima(len, p, p.period.unwrap_or(len), rng);
    Ok(scale_trend(&raw, eta))
}

/// Runs the INGARCH recursion over all of `trend` and drops the first bin,
/// returning `trend.len() − 1` counts. The initial spike is
/// `ω₀ = mean(F)·(1 − η)`.
pub fn simulate_ingarch(
    trend: &[f64],
    p: &IngarchParams,
    phi: f64,
    eta: f64,
    rng: &mut Rng,
) -> Result<Vec<u64>> {
    let len = trend.len();
    if len < 2 {
        return Err(invalid("INGARCH needs at least two trend values"));
    }
    let omega0 = trend.iter().sum::<f64>() / len as f64 * (1.0 - eta);
    let mut x = vec![0u64; len];
    let mut lambda = vec![0.0; len];
    for t in 0..len {
        let back = |v: &[f64], k: usize| if t >= k { v[t - k] } else { 0.0 };
        let xb = |k: usize| if t >= k { x[t - k] as f64 } else { 0.0 };
        let l = p.nu0 + p.nu1 * xb(1) + p.nu2 * xb(2) + p.xi1 * back(&lambda, 1) + p.xi2 * back(&lambda, 2)
            + if t == 0 { omega0 } else { 0.0 }
            + trend[t];
        if !(l > 0.0) {
            return Err(invalid(format!("non-positive conditional mean {l} at bin {t}")));
        }
        lambda[t] = l;
        x[t] = sample_negbin(l, phi, rng);
    }
    Ok(x[1..].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn trend_scale_extremes() {
        let mut rng = rng_from(1, &[]);
        let raw = simulate_seasonal_arima(25, &TrendParams::default(), 24, &mut rng);
        let f0 = scale_trend(&raw, 0.0);
        let f1 = scale_trend(&raw, 1.0);
        let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(f0.windows(2).all(|w| w[0] == w[1]));
        for (a, r) in f1.iter().zip(&raw) {
            assert_eq!(*a, r - min);
        }
    }

    #[test]
    fn trend_mean_is_independent_of_scale() {
        let mut rng = rng_from(2, &[]);
        let raw = simulate_seasonal_arima(25, &TrendParams::default(), 24, &mut rng);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let m0 = mean(&scale_trend(&raw, 0.0));
        for eta in [0.25, 0.5, 1.0] {
            assert!((mean(&scale_trend(&raw, eta)) - m0).abs() < 1e-12);
        }
        assert!(scale_trend(&raw, 0.5).iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn collapsed_recursion_gives_iid_unit_mean() {
        let p = IngarchParams {
            nu0: 1.0,
            nu1: 0.0,
            nu2: 0.0,
            xi1: 0.0,
            xi2: 0.0,
        };
        let mut rng = rng_from(3, &[]);
        let f = vec![0.0; 200_001];
        let x = simulate_ingarch(&f, &p, 10.0, 1.0, &mut rng).unwrap();
        let m = x.iter().sum::<u64>() as f64 / x.len() as f64;
        assert!((m - 1.0).abs() < 0.01, "mean {m}");
    }

    #[test]
    fn long_run_mean_matches_fixed_point() {
        let p = IngarchParams::default();
        let f = 20.0;
        let target = p.stationary_mean(f);
        assert!((target - 21.0 / 0.7).abs() < 1e-12);
        let mut rng = rng_from(4, &[]);
        let mut total = 0.0;
        let mut count = 0.0;
        for _ in 0..200 {
            let x = simulate_ingarch(&vec![f; 1001], &p, 10.0, 1.0, &mut rng).unwrap();
            total += x[100..].iter().sum::<u64>() as f64;
            count += (x.len() - 100) as f64;
        }
        let m = total / count;
        assert!((m - target).abs() / target < 0.03, "mean {m} vs {target}");
    }
}
