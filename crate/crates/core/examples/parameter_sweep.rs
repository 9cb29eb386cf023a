//! A two-cell sweep over window width for both models, written as CSV.

use odest::netgen::b::default_graph;
use odest::sensitivity::{reduced_sampler, run_sweep, write_sweep_csv, ModelKind, SweepGrid};

fn main() -> odest::Result<()> {
    let grid = SweepGrid {
        models: vec![ModelKind::Ib, ModelKind::Ad],
        windows: vec![5, 30],
        etas: vec![1.0],
        phis: vec![10.0],
        replicates: 1,
        observations: 30,
        seed: 8,
        sampler: odest::sampler::SamplerConfig {
            warmup: 200,
            draws: 200,
            ..reduced_sampler()
        },
    };
    let res = run_sweep(&grid, &default_graph())?;
    for (c, t) in res.cells.iter().zip(&res.runtimes) {
        println!(
            "{} w={:<3} mse {:.3e} hpd {:.4} ({t:.1} s)",
            c.model.as_str(),
            c.window,
            c.mse.unwrap_or(f64::NAN),
            c.mean_hpd.unwrap_or(f64::NAN)
        );
    }
    let out = std::env::temp_dir().join("odest_sweep_example.csv");
    write_sweep_csv(&out, &res)?;
    println!("wrote {}", out.display());
    Ok(())
}
