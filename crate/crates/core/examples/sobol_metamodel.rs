//! Fits the linear metamodel to a synthetic response over the three design
//! factors and decomposes its variance with Sobol indices.

use odest::sensitivity::{fit_linear_metamodel, sobol_indices, FACTOR_NAMES};

fn main() -> odest::Result<()> {
    let mut factors = Vec::new();
    let mut q = Vec::new();
    for w in [5.0, 15.0, 30.0, 60.0] {
        for eta in [0.0, 0.5, 1.0] {
            for phi in [10.0, 100.0, 1000.0] {
                factors.push([w, eta, phi]);
                q.push(0.01 - 0.005 * (w - 5.0) / 55.0 + 0.002 * eta + 0.001 * (phi - 10.0) / 990.0);
            }
        }
    }
    let fit = fit_linear_metamodel(&factors, &q)?;
    let sobol = sobol_indices(&fit, 20_000, 100, 1)?;
    for k in 0..3 {
        println!(
            "{:>6}: beta {:+.4}  S1 {:.3} [{:.3}, {:.3}]  ST {:.3}",
            FACTOR_NAMES[k], fit.beta[k + 1], sobol.first[k], sobol.first_ci[k][0], sobol.first_ci[k][1], sobol.total[k]
        );
    }
    Ok(())
}
