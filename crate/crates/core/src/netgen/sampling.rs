use rand::Rng as _;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Retries allowed for a Dirichlet draw that collapsed onto one coordinate.
pub const DIRICHLET_RETRIES: usize = 10;

/// Negative-Binomial draw with mean `mu` and dispersion `phi` as a
/// Gamma(φ, scale μ/φ)-mixed Poisson. Non-positive means give 0.
pub fn sample_negbin(mu: f64, phi: f64, rng: &mut Rng) -> u64 {
    if !(mu > 0.0) {
        return 0;
    }
    let lambda = Gamma::new(phi, mu / phi)
        .expect("positive gamma parameters")
        .sample(rng);
    sample_poisson(lambda, rng)
}

pub fn sample_poisson(lambda: f64, rng: &mut Rng) -> u64 {
    if !(lambda > 0.0) {
        return 0;
    }
    Poisson::new(lambda).expect("finite rate").sample(rng) as u64
}

/// Multinomial draw of `n` trials over `probs` by sequential binomials.
pub fn sample_multinomial(n: u64, probs: &[f64], rng: &mut Rng, out: &mut [u64]) {
    let mut left = n;
    let mut mass = 1.0;
    let last = probs.iter().rposition(|&p| p > 0.0);
    for (k, (&p, o)) in probs.iter().zip(out.iter_mut()).enumerate() {
        *o = 0;
        if left == 0 || p <= 0.0 {
            continue;
        }
        if Some(k) == last || p >= mass {
            *o = left;
            left = 0;
            continue;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let draw = Binomial::new(left, q).expect("probability in [0, 1]").sample(rng);
        *o = draw;
        left -= draw;
        mass -= p;
    }
}

/// Index drawn from a categorical distribution with probabilities `probs`.
pub fn sample_categorical(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = k;
        if u < acc {
            return k;
        }
    }
    last
}

/// One Dirichlet draw computed in log space so that small concentrations do
/// not underflow to an all-zero vector. `None` when the mass collapsed onto a
/// single coordinate.
pub fn try_dirichlet(conc: &[f64], rng: &mut Rng) -> Option<Vec<f64>> {
    if conc.len() == 1 {
        return Some(vec![1.0]);
    }
    // Gamma(a) = Gamma(a + 1) * U^(1/a)
    let logs: Vec<f64> = conc
        .iter()
        .map(|&a| {
            let g: f64 = Gamma::new(a + 1.0, 1.0).expect("positive shape").sample(rng);
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            g.ln() + u.ln() / a
        })
        .collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    let x: Vec<f64> = logs.iter().map(|l| (l - lse).exp()).collect();
    let nonzero = x.iter().filter(|&&v| v > 0.0).count();
    if !x.iter().all(|v| v.is_finite()) || nonzero < 2 {
        return None;
    }
    let s: f64 = x.iter().sum();
    Some(x.into_iter().map(|v| v / s).collect())
}

/// [`try_dirichlet`] with up to [`DIRICHLET_RETRIES`] attempts.
pub fn sample_dirichlet(conc: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
    (0..DIRICHLET_RETRIES)
        .find_map(|_| try_dirichlet(conc, rng))
        .ok_or(Error::DegenerateDirichlet {
            attempts: DIRICHLET_RETRIES,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn negbin_variance_matches_dispersion_formula() {
        let mut rng = rng_from(11, &[]);
        for (mu, phi) in [(600.0, 10.0), (10.0, 10.0)] {
            let xs: Vec<f64> = (0..1_000_000).map(|_| sample_negbin(mu, phi, &mut rng) as f64).collect();
            let (m, v) = moments(&xs);
            let target = mu + mu * mu / phi;
            assert!((m - mu).abs() / mu < 0.01, "mean {m} vs {mu}");
            assert!((v - target).abs() / target < 0.05, "variance {v} vs {target}");
        }
    }

    #[test]
    fn negbin_equidispersed_limit() {
        let mut rng = rng_from(12, &[]);
        let xs: Vec<f64> = (0..200_000).map(|_| sample_negbin(50.0, 1e9, &mut rng) as f64).collect();
        let (_, v) = moments(&xs);
        assert!((v - 50.0).abs() / 50.0 < 0.05, "variance {v}");
    }

    #[test]
    fn multinomial_conserves_trials() {
        let mut rng = rng_from(13, &[]);
        let p = [0.2, 0.0, 0.5, 0.3];
        let mut out = [0u64; 4];
        for n in [0u64, 1, 17, 10_000] {
            sample_multinomial(n, &p, &mut rng, &mut out);
            assert_eq!(out.iter().sum::<u64>(), n);
            assert_eq!(out[1], 0);
        }
    }

    #[test]
    fn dirichlet_with_tiny_concentration_stays_on_simplex() {
        let mut rng = rng_from(14, &[]);
        for _ in 0..1000 {
            let x = sample_dirichlet(&[0.01; 14], &mut rng).unwrap();
            assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
