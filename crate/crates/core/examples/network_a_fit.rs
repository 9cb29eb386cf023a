//! Simulates the 15-station reference network, fits the instantaneous-balance
//! model and compares the posterior mean with the truth and the QP estimate.

use odest::diagnostics::diagnose;
use odest::model::IbModel;
use odest::netgen::a::{generate_network_a, GenAConfig};
use odest::qp::{solve_qp, QpOptions};
use odest::sampler::{nuts_sample, SamplerConfig};

fn main() -> odest::Result<()> {
    let cfg = GenAConfig::reference(2024);
    let (truth, obs) = generate_network_a(&cfg)?;
    let sampler = SamplerConfig {
        seed: 1,
        ..SamplerConfig::default()
    };
    let draws = nuts_sample(&IbModel::new(obs.clone(), None)?, None, &sampler)?;
    let qp = solve_qp(&obs, None, true, &QpOptions::default())?;
    let r = diagnose(&draws, Some(&truth), Some(&qp.a_hat))?;

    println!("{} chains x {} draws", r.chains, r.draws_per_chain);
    println!("divergences     {}", r.divergences);
    println!("R-hat max       {:.4}", r.r_hat_max.unwrap_or(f64::NAN));
    println!("ESS ratio min   {:.3}", r.ess_ratio_min.unwrap_or(f64::NAN));
    println!("MSE (MCMC)      {:.3e}", r.mse_mcmc.unwrap_or(f64::NAN));
    println!("MSE (QP)        {:.3e}", r.mse_qp.unwrap_or(f64::NAN));
    println!("mean 95% HPD    {:.4}", r.mean_hpd.unwrap_or(f64::NAN));
    Ok(())
}
