//! Accuracy, precision and convergence summaries of posterior draws.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::domain::{Matrix, OdMatrix, PosteriorDraws};
use crate::error::{Error, Result};

/// Version tag written into every diagnostics report.
pub const REPORT_SCHEMA: &str = "odest.diagnostics/1";
/// Smallest sample accepted by [`hpd_interval`].
pub const MIN_HPD_SAMPLES: usize = 50;
/// Smallest chain length accepted by [`r_hat`] and [`effective_sample_size`].
pub const MIN_CHAIN_DRAWS: usize = 10;
/// Threshold used when counting stations with acceptable prediction error.
pub const PREDICTIVE_ERROR_THRESHOLD: f64 = 0.1;

/// Mean squared error over all S² cells, the zero diagonal included.
pub fn mse_vs_truth(estimate: &Matrix, truth: &OdMatrix) -> Result<f64> {
    let t = truth.alpha();
    if estimate.rows() != t.rows() || estimate.cols() != t.cols() {
        return Err(Error::Shape(format!(
            "estimate is {}x{}, truth is {}x{}",
            estimate.rows(),
            estimate.cols(),
            t.rows(),
            t.cols()
        )));
    }
    let sq: f64 = estimate
        .as_slice()
        .iter()
        .zip(t.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sq / t.as_slice().len() as f64)
}

/// Narrowest interval covering `⌈prob·n⌉` of the sorted samples.
pub fn hpd_interval(samples: &[f64], prob: f64) -> Result<(f64, f64)> {
    if samples.len() < MIN_HPD_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_HPD_SAMPLES,
            got: samples.len(),
        });
    }
    if !(prob > 0.0 && prob <= 1.0) {
        return Err(Error::InvalidInput(format!("HPD mass must lie in (0, 1], got {prob}")));
    }
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len();
    let k = ((prob * n as f64).ceil() as usize).clamp(1, n);
    let mut best = (x[0], x[k - 1]);
    for i in 1..=n - k {
        if x[i + k - 1] - x[i] < best.1 - best.0 {
            best = (x[i], x[i + k - 1]);
        }
    }
    Ok(best)
}

/// Average 95 % HPD width over every coefficient cell.
pub fn mean_hpd(draws: &PosteriorDraws) -> Result<f64> {
    let s = od_stations(draws)?;
    let widths: Vec<f64> = (0..s * s)
        .into_par_iter()
        .map(|k| hpd_interval(&draws.pooled(k), 0.95).map(|(lo, hi)| hi - lo))
        .collect::<Result<_>>()?;
    Ok(widths.iter().sum::<f64>() / (s * s) as f64)
}

fn od_stations(draws: &PosteriorDraws) -> Result<usize> {
    draws
        .layout()
        .stations()
        .ok_or_else(|| Error::InvalidInput("draws do not hold an OD matrix".into()))
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, v)
}

fn check_chains(chains: &[Vec<f64>], min_chains: usize) -> Result<usize> {
    if chains.len() < min_chains {
        return Err(Error::TooFewSamples {
            needed: min_chains,
            got: chains.len(),
        });
    }
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n < MIN_CHAIN_DRAWS {
        return Err(Error::TooFewSamples {
            needed: MIN_CHAIN_DRAWS,
            got: n,
        });
    }
    Ok(n)
}

/// Halves every chain (the middle draw of odd chains is dropped).
fn split(chains: &[Vec<f64>], n: usize) -> Vec<&[f64]> {
    let h = n / 2;
    chains
        .iter()
        .flat_map(|c| [&c[..h], &c[n - h..n]])
        .collect()
}

/// Split-chain potential scale reduction factor.
///
/// Needs at least two chains of ten draws. Returns 1 when every chain is
/// constant at the same value and ∞ when chains are constant at different
/// values.
pub fn r_hat(chains: &[Vec<f64>]) -> Result<f64> {
    let n = check_chains(chains, 2)?;
    let parts = split(chains, n);
    let len = parts[0].len() as f64;
    let stats: Vec<(f64, f64)> = parts.iter().map(|p| mean_var(p)).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / stats.len() as f64;
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let b = len * mean_var(&means).1;
    if w == 0.0 {
        return Ok(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    let var_plus = (len - 1.0) / len * w + b / len;
    Ok((var_plus / w).sqrt())
}

/// Biased autocovariance of `x` at every lag, via FFT.
fn autocovariance(x: &[f64], planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = x.len();
    let m = x.iter().sum::<f64>() / n as f64;
    let len = 2 * n;
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .map(|v| Complex::new(v - m, 0.0))
        .chain(std::iter::repeat_n(Complex::new(0.0, 0.0), len - n))
        .collect();
    planner.plan_fft_forward(len).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    buf.iter().take(n).map(|c| c.re / (len as f64 * n as f64)).collect()
}

/// Multi-chain effective sample size on split chains with Geyer's initial
/// monotone positive-pair truncation. A single chain is accepted (it is
/// split into two halves).
pub fn effective_sample_size(chains: &[Vec<f64>]) -> Result<f64> {
    let n = check_chains(chains, 1)?;
    let parts = split(chains, n);
    let m = parts.len();
    let len = parts[0].len();
    let total = (m * len) as f64;
    let mut planner = FftPlanner::new();
    let acov: Vec<Vec<f64>> = parts.iter().map(|p| autocovariance(p, &mut planner)).collect();
    let means: Vec<f64> = parts.iter().map(|p| p.iter().sum::<f64>() / len as f64).collect();
    let chain_var: Vec<f64> = acov.iter().map(|a| a[0] * len as f64 / (len as f64 - 1.0)).collect();
    let mean_var = chain_var.iter().sum::<f64>() / m as f64;
    let mut var_plus = mean_var * (len as f64 - 1.0) / len as f64;
    if m > 1 {
        var_plus += mean_var_of(&means);
    }
    if var_plus == 0.0 {
        return Ok(total);
    }
    let mean_acov = |t: usize| acov.iter().map(|a| a[t]).sum::<f64>() / m as f64;
    let mut rho = vec![0.0; len];
    rho[0] = 1.0;
    let mut rho_even = 1.0;
    let mut rho_odd = 1.0 - (mean_var - mean_acov(1)) / var_plus;
    rho[1] = rho_odd;
    let mut t = 1;
    while t + 4 < len && rho_even + rho_odd > 0.0 {
        rho_even = 1.0 - (mean_var - mean_acov(t + 1)) / var_plus;
        rho_odd = 1.0 - (mean_var - mean_acov(t + 2)) / var_plus;
        if rho_even + rho_odd >= 0.0 {
            rho[t + 1] = rho_even;
            rho[t + 2] = rho_odd;
        }
        t += 2;
    }
    let max_t = t;
    if rho_even > 0.0 && max_t + 1 < len {
        rho[max_t + 1] = rho_even;
    }
    // Pairs must be non-increasing.
    let mut t = 1;
    while t + 2 <= max_t {
        let prev = rho[t - 1] + rho[t];
        if rho[t + 1] + rho[t + 2] > prev {
            rho[t + 1] = prev / 2.0;
            rho[t + 2] = prev / 2.0;
        }
        t += 2;
    }
    let tail = if max_t + 1 < len { rho[max_t + 1] } else { 0.0 };
    let tau = (-1.0 + 2.0 * rho[..=max_t.min(len - 1)].iter().sum::<f64>() + tail).max(1.0 / total.log10());
    Ok(total / tau)
}

fn mean_var_of(x: &[f64]) -> f64 {
    mean_var(x).1
}

/// Per-cell posterior mean of the OD coefficients.
pub fn posterior_mean_matrix(draws: &PosteriorDraws) -> Result<OdMatrix> {
    let s = od_stations(draws)?;
    let total = draws.total_draws() as f64;
    let mut m = Matrix::zeros(s, s);
    for ch in draws.chains() {
        for v in &ch.values {
            for (o, x) in m.as_mut_slice().iter_mut().zip(&v[..s * s]) {
                *o += x;
            }
        }
    }
    m.as_mut_slice().iter_mut().for_each(|v| *v /= total);
    Ok(OdMatrix::new_unchecked(m, None))
}

/// Posterior means of every recorded parameter, in layout order.
pub fn posterior_means(draws: &PosteriorDraws) -> Vec<f64> {
    (0..draws.n_params())
        .map(|p| {
            let x = draws.pooled(p);
            x.iter().sum::<f64>() / x.len() as f64
        })
        .collect()
}

/// Absolute flows `X·Ā` per observation (N×S).
pub fn absolute_od_flow(a_mean: &OdMatrix, x: &Matrix) -> Result<Matrix> {
    x.matmul(a_mean.alpha())
}

/// Aggregate S×S flow matrix `diag(Σ_n x_n) · Ā`.
pub fn aggregate_od_flow(a_mean: &OdMatrix, x: &Matrix) -> Matrix {
    let s = a_mean.size();
    let totals: Vec<f64> = (0..s).map(|i| (0..x.rows()).map(|n| x.get(n, i)).sum()).collect();
    let mut out = Matrix::zeros(s, s);
    for i in 0..s {
        for j in 0..s {
            out.set(i, j, totals[i] * a_mean.get(i, j));
        }
    }
    out
}

/// `|predicted − observed| / observed` per station (NaN for a zero mean).
pub fn predictive_relative_errors(predicted: &[f64], observed: &[f64]) -> Vec<f64> {
    predicted
        .iter()
        .zip(observed)
        .map(|(p, o)| if *o == 0.0 { f64::NAN } else { (p - o).abs() / o })
        .collect()
}

/// Threshold below which a coefficient counts as zero in sparsity summaries.
pub const SPARSITY_THRESHOLD: f64 = 1e-9;

/// How concentrated the rows of an OD matrix are.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsitySummary {
    /// Share of admissible off-diagonal coefficients below
    /// [`SPARSITY_THRESHOLD`].
    pub fraction_zero: f64,
    /// Largest coefficient of each row.
    pub row_max: Vec<f64>,
}

pub fn sparsity(m: &OdMatrix) -> SparsitySummary {
    let s = m.size();
    let zeros = m.zeros_or_none();
    let (mut small, mut total) = (0usize, 0usize);
    for i in 0..s {
        for j in zeros.free_destinations(i) {
            total += 1;
            if m.get(i, j) < SPARSITY_THRESHOLD {
                small += 1;
            }
        }
    }
    SparsitySummary {
        fraction_zero: if total == 0 { 0.0 } else { small as f64 / total as f64 },
        row_max: (0..s).map(|i| m.row(i).iter().copied().fold(0.0, f64::max)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    pub name: String,
    pub mean: f64,
    pub r_hat: Option<f64>,
    pub ess_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub schema: String,
    pub chains: usize,
    pub draws_per_chain: usize,
    pub mse_mcmc: Option<f64>,
    pub mse_qp: Option<f64>,
    pub mean_hpd: Option<f64>,
    pub r_hat_max: Option<f64>,
    pub ess_ratio_min: Option<f64>,
    pub divergences: usize,
    pub saturated: usize,
    pub params: Vec<ParamDiagnostics>,
    pub predictive_relative_errors: Option<Vec<f64>>,
    pub warnings: Vec<String>,
}

fn finite_max(v: impl Iterator<Item = f64>) -> Option<f64> {
    v.filter(|x| !x.is_nan()).fold(None, |m, x| Some(m.map_or(x, |m: f64| m.max(x))))
}

fn finite_min(v: impl Iterator<Item = f64>) -> Option<f64> {
    v.filter(|x| !x.is_nan()).fold(None, |m, x| Some(m.map_or(x, |m: f64| m.min(x))))
}

/// Collects the standard diagnostics of a fit. Convergence statistics skip
/// cells that are fixed at zero (diagonal and structural zeros) and are
/// omitted entirely for a single chain.
pub fn diagnose(
    draws: &PosteriorDraws,
    truth: Option<&OdMatrix>,
    qp_estimate: Option<&OdMatrix>,
) -> Result<DiagnosticsReport> {
    let mut warnings = Vec::new();
    let names = draws.names();
    let multi = draws.n_chains() >= 2;
    if !multi {
        warnings.push("single chain: R-hat is undefined and omitted".to_string());
    }
    let params: Vec<ParamDiagnostics> = (0..draws.n_params())
        .into_par_iter()
        .map(|p| {
            let series = draws.chain_series(p);
            let pooled: Vec<f64> = series.iter().flatten().copied().collect();
            let mean = pooled.iter().sum::<f64>() / pooled.len() as f64;
            let fixed = pooled.iter().all(|v| *v == pooled[0]);
            let r = if multi && !fixed { r_hat(&series).ok() } else { None };
            let ess = if fixed {
                None
            } else {
                effective_sample_size(&series).ok().map(|e| e / pooled.len() as f64)
            };
            ParamDiagnostics {
                name: names[p].clone(),
                mean,
                r_hat: r,
                ess_ratio: ess,
            }
        })
        .collect();
    let od = draws.layout().stations().is_some();
    let mean = if od { Some(posterior_mean_matrix(draws)?) } else { None };
    let mse_mcmc = match (truth, &mean) {
        (Some(t), Some(m)) => Some(mse_vs_truth(m.alpha(), t)?),
        _ => None,
    };
    let mse_qp = match (truth, qp_estimate) {
        (Some(t), Some(q)) => Some(mse_vs_truth(q.alpha(), t)?),
        _ => None,
    };
    let mean_hpd = if od && draws.total_draws() >= MIN_HPD_SAMPLES {
        Some(mean_hpd(draws)?)
    } else {
        if od {
            warnings.push(format!("fewer than {MIN_HPD_SAMPLES} draws: mean HPD omitted"));
        }
        None
    };
    let divergences = draws.divergences();
    if divergences > 0 {
        warnings.push(format!("{divergences} divergent transitions"));
    }
    Ok(DiagnosticsReport {
        schema: REPORT_SCHEMA.to_string(),
        chains: draws.n_chains(),
        draws_per_chain: draws.n_draws(),
        mse_mcmc,
        mse_qp,
        mean_hpd,
        r_hat_max: finite_max(params.iter().filter_map(|p| p.r_hat)),
        ess_ratio_min: finite_min(params.iter().filter_map(|p| p.ess_ratio)),
        divergences,
        saturated: draws.saturated(),
        params,
        predictive_relative_errors: None,
        warnings,
    })
}
