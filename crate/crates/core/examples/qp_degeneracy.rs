//! Least-squares estimates of a 60-station network from 40 observations: far
//! more unknowns than data. Prints how many coefficients the QP drives to zero.

use odest::diagnostics::sparsity;
use odest::netgen::a::{generate_network_a, GenAConfig};
use odest::qp::{solve_qp, QpOptions};

fn main() -> odest::Result<()> {
    let cfg = GenAConfig {
        stations: 60,
        observations: 40,
        mu_x: vec![400.0; 60],
        phi: 10.0,
        seed: 5,
    };
    let (truth, obs) = generate_network_a(&cfg)?;
    for regularized in [true, false] {
        let sol = solve_qp(&obs, None, regularized, &QpOptions::default())?;
        let sp = sparsity(&sol.a_hat);
        let mean_max = sp.row_max.iter().sum::<f64>() / sp.row_max.len() as f64;
        println!(
            "regularized={regularized:<5} iterations {:6}  zero fraction {:.3}  mean row max {:.3}",
            sol.iterations, sp.fraction_zero, mean_max
        );
    }
    let t = sparsity(&truth);
    println!("truth: zero fraction {:.3}", t.fraction_zero);
    Ok(())
}
