//! Fits the average-delay and instantaneous-balance models to the same
//! trending one-hour network-B scenario and prints their accuracy.

use odest::netgen::b::{default_graph, generate_scenario_b};
use odest::sampler::SamplerConfig;
use odest::sensitivity::{fit_scenario, preset_experiments, score, ModelKind};

fn main() -> odest::Result<()> {
    let preset = preset_experiments("best_ad")?;
    let cfg = preset.generator_config(50, 3)?;
    let scenario = generate_scenario_b(&cfg, &default_graph())?;
    let sampler = SamplerConfig {
        chains: 2,
        warmup: 300,
        draws: 300,
        seed: 9,
        ..SamplerConfig::default()
    };
    for model in [ModelKind::Ib, ModelKind::Ad] {
        let draws = fit_scenario(model, &scenario, &sampler)?;
        let (mse, hpd) = score(&draws, &scenario.truth)?;
        println!(
            "{}: MSE {mse:.3e}, mean HPD {hpd:.4}, divergences {}",
            model.as_str(),
            draws.divergences()
        );
    }
    Ok(())
}
