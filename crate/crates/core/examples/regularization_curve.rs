//! Out-of-sample error of regularized and unregularized Bayesian and QP fits
//! as the number of training observations grows.

use odest::netgen::a::GenAConfig;
use odest::sampler::SamplerConfig;
use odest::sensitivity::regularization_study;

fn main() -> odest::Result<()> {
    let cfg = GenAConfig::reference(11);
    let sampler = SamplerConfig {
        chains: 2,
        warmup: 400,
        draws: 400,
        seed: 4,
        ..SamplerConfig::default()
    };
    let rows = regularization_study(&cfg, &[5, 10, 30], 200, &sampler)?;
    for r in rows {
        println!("N={:<4} {:<12} {:.1}", r.observations, r.method.as_str(), r.validation_mse);
    }
    Ok(())
}
