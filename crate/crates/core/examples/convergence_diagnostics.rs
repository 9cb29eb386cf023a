//! R-hat and effective sample size on synthetic chains: an AR(1) process and
//! two chains stuck in different places.

use odest::diagnostics::{effective_sample_size, r_hat};
use odest::rng::rng_from;
use rand::Rng;
use rand_distr::StandardNormal;

fn ar1(n: usize, rho: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng_from(seed, &[]);
    let mut x = 0.0;
    (0..n)
        .map(|_| {
            x = rho * x + rng.sample::<f64, _>(StandardNormal);
            x
        })
        .collect()
}

fn main() -> odest::Result<()> {
    let chains: Vec<Vec<f64>> = (0..4).map(|c| ar1(5000, 0.5, c)).collect();
    let total = 4.0 * 5000.0;
    println!("AR(1) rho=0.5: ESS/N = {:.3} (analytic 1/3)", effective_sample_size(&chains)? / total);
    println!("AR(1) rho=0.5: R-hat = {:.4}", r_hat(&chains)?);

    let apart = vec![ar1(1000, 0.0, 10), ar1(1000, 0.0, 11).iter().map(|v| v + 5.0).collect()];
    println!("separated chains: R-hat = {:.2}", r_hat(&apart)?);
    Ok(())
}
