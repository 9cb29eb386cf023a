//! Test network A: a known OD matrix, Negative-Binomial entry counts and
//! categorical destination choice with instantaneous balance.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sampling::{sample_multinomial, sample_negbin, try_dirichlet, DIRICHLET_RETRIES};
use crate::domain::{Matrix, ObservationSet, OdMatrix};
use crate::error::{invalid, Error, Result};
use crate::rng::{rng_from, sub_seed};

/// Mean entry counts of the 15-station reference network.
pub const REFERENCE_MEAN_ENTRIES: [f64; 15] = [
    600.0, 900.0, 1400.0, 400.0, 550.0, 650.0, 900.0, 1000.0, 750.0, 450.0, 200.0, 650.0, 750.0,
    1000.0, 1300.0,
];

const TAG_OD: u64 = 0xA0;
const TAG_OBS: u64 = 0xA1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenAConfig {
    pub stations: usize,
    pub observations: usize,
    pub mu_x: Vec<f64>,
    pub phi: f64,
    pub seed: u64,
}

impl GenAConfig {
    /// Reference setting: 15 stations, 30 observations, φ = 10.
    pub fn reference(seed: u64) -> Self {
        Self {
            stations: 15,
            observations: 30,
            mu_x: REFERENCE_MEAN_ENTRIES.to_vec(),
            phi: 10.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stations < 2 {
            return Err(invalid("generator A needs at least 2 stations"));
        }
        if self.mu_x.len() != self.stations {
            return Err(invalid(format!(
                "mu_x has {} entries for {} stations",
                self.mu_x.len(),
                self.stations
            )));
        }
        if let Some(m) = self.mu_x.iter().find(|m| !(**m > 0.0)) {
            return Err(invalid(format!("mean entry count must be positive, got {m}")));
        }
        if !(self.phi > 0.0) {
            return Err(invalid("dispersion phi must be positive"));
        }
        Ok(())
    }
}

/// Embeds an (S−1)-vector into row `i` of an S×S matrix, skipping the diagonal.
pub(crate) fn embed_row(i: usize, reduced: &[f64], row: &mut [f64]) {
    let mut k = 0;
    for (j, v) in row.iter_mut().enumerate() {
        if j == i {
            *v = 0.0;
        } else {
            *v = reduced[k];
            k += 1;
        }
    }
}

/// Each row is a symmetric Dirichlet draw with concentration c_i ~ U(0, 2).
pub fn sample_od_matrix_a(stations: usize, seed: u64) -> Result<OdMatrix> {
    if stations < 2 {
        return Err(invalid("OD matrix needs at least 2 stations"));
    }
    let mut rng = rng_from(seed, &[TAG_OD]);
    let mut alpha = Matrix::zeros(stations, stations);
    for i in 0..stations {
        // A collapsed draw is retried with a fresh concentration as well.
        let row = (0..DIRICHLET_RETRIES)
            .find_map(|_| {
                let c = rng.random_range(0.0..2.0f64).max(f64::MIN_POSITIVE);
                try_dirichlet(&vec![c; stations - 1], &mut rng)
            })
            .ok_or(Error::DegenerateDirichlet {
                attempts: DIRICHLET_RETRIES,
            })?;
        embed_row(i, &row, alpha.row_mut(i));
    }
    OdMatrix::new(alpha, None)
}

/// Entry and exit counts for a given OD matrix. Observation `n` draws from its
/// own stream derived from `(seed, n)`.
pub fn simulate_counts_a(cfg: &GenAConfig, a: &OdMatrix) -> Result<ObservationSet> {
    cfg.validate()?;
    let s = cfg.stations;
    if a.size() != s {
        return Err(invalid(format!("OD matrix has {} stations, config {}", a.size(), s)));
    }
    let base = sub_seed(cfg.seed, &[TAG_OBS]);
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..cfg.observations)
        .into_par_iter()
        .map(|n| {
            let mut rng = rng_from(base, &[n as u64]);
            let mut x = vec![0.0; s];
            let mut y = vec![0u64; s];
            let mut split = vec![0u64; s];
            for i in 0..s {
                let xi = sample_negbin(cfg.mu_x[i], cfg.phi, &mut rng);
                x[i] = xi as f64;
                sample_multinomial(xi, a.row(i), &mut rng, &mut split);
                for (yj, c) in y.iter_mut().zip(&split) {
                    *yj += c;
                }
            }
            (x, y.into_iter().map(|v| v as f64).collect())
        })
        .collect();
    let (xs, ys): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    ObservationSet::new(Matrix::from_rows(&xs)?, Matrix::from_rows(&ys)?, None)
}

/// Draws the OD matrix from `cfg.seed` and simulates counts from it.
pub fn generate_network_a(cfg: &GenAConfig) -> Result<(OdMatrix, ObservationSet)> {
    cfg.validate()?;
    let a = sample_od_matrix_a(cfg.stations, cfg.seed)?;
    let obs = simulate_counts_a(cfg, &a)?;
    Ok((a, obs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_stations_force_the_swap() {
        let a = sample_od_matrix_a(2, 5).unwrap();
        assert_eq!(a.to_rows(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn fifteen_station_rows_sum_to_one() {
        for seed in 0..20 {
            let a = sample_od_matrix_a(15, seed).unwrap();
            for i in 0..15 {
                assert!((a.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert_eq!(a.get(i, i), 0.0);
            }
        }
    }

    #[test]
    fn symmetric_dirichlet_rows_average_to_uniform() {
        let mut sums = [0.0; 5];
        let draws = 100_000 / 5;
        for seed in 0..draws {
            let a = sample_od_matrix_a(5, seed as u64).unwrap();
            for i in 0..5 {
                for j in 0..5 {
                    if i != j {
                        let k = if j < i { j } else { j - 1 };
                        sums[k] += a.get(i, j);
                    }
                }
            }
        }
        for s in &sums[..4] {
            let mean = s / (draws * 5) as f64;
            assert!((mean - 0.25).abs() < 0.01, "coordinate mean {mean}");
        }
    }

    #[test]
    fn swap_matrix_mirrors_entries() {
        let cfg = GenAConfig {
            stations: 2,
            observations: 20,
            mu_x: vec![30.0, 70.0],
            phi: 10.0,
            seed: 3,
        };
        let a = OdMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let obs = simulate_counts_a(&cfg, &a).unwrap();
        for n in 0..20 {
            assert_eq!(obs.y().get(n, 0), obs.x().get(n, 1));
            assert_eq!(obs.y().get(n, 1), obs.x().get(n, 0));
        }
    }

    #[test]
    fn per_observation_mass_is_exact_and_reproducible() {
        let cfg = GenAConfig::reference(42);
        let (a, obs) = generate_network_a(&cfg).unwrap();
        for n in 0..cfg.observations {
            let sx: f64 = obs.x().row(n).iter().sum();
            let sy: f64 = obs.y().row(n).iter().sum();
            assert_eq!(sx, sy);
        }
        let (a2, obs2) = generate_network_a(&cfg).unwrap();
        assert_eq!(a, a2);
        assert_eq!(obs, obs2);
    }

    #[test]
    fn exit_means_converge_to_flow_prediction() {
        let a = OdMatrix::from_rows(&[
            vec![0.0, 0.3, 0.7],
            vec![0.5, 0.0, 0.5],
            vec![0.9, 0.1, 0.0],
        ])
        .unwrap();
        let cfg = GenAConfig {
            stations: 3,
            observations: 1000,
            mu_x: vec![400.0, 250.0, 600.0],
            phi: 10.0,
            seed: 8,
        };
        let obs = simulate_counts_a(&cfg, &a).unwrap();
        let predicted = a.alpha().vec_mul(&obs.x().column_means());
        let observed = obs.y().column_means();
        for j in 0..3 {
            assert!((observed[j] - predicted[j]).abs() / predicted[j] < 0.02);
        }
    }
}
