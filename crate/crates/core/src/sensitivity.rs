//! Experiment sweeps over the network-B test parameters, the linear
//! metamodel fitted to their outcomes, Sobol indices, the regularization
//! study on network A and the named parameter presets.

use std::path::Path;
use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::diagnostics::{mean_hpd, mse_vs_truth, posterior_mean_matrix};
use crate::domain::io::{format_real, schema_csv_reader, schema_csv_writer};
use crate::domain::{aggregate_observation_window, Matrix, ObservationSet, OdMatrix, PosteriorDraws};
use crate::error::{invalid, Error, Result};
use crate::model::{build_assignment, IbModel};
use crate::netgen::a::{sample_od_matrix_a, simulate_counts_a, GenAConfig};
use crate::netgen::b::{
    expected_delay_table, footpath_zeros, generate_network_b, sample_od_matrix_b, GenBConfig, ScenarioB,
    TimetableGraph,
};
use crate::qp::{solve_qp, QpOptions};
use crate::rng::{rng_from, sub_seed};
use crate::sampler::{nuts_sample, SamplerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ib,
    Ad,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Ib => "ib",
            ModelKind::Ad => "ad",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ib" => Ok(ModelKind::Ib),
            "ad" => Ok(ModelKind::Ad),
            _ => Err(invalid(format!("unknown model '{s}', expected ib or ad"))),
        }
    }
}

/// Settings used for every sweep fit unless overridden: two chains of 500
/// draws after 300 warmup iterations.
pub fn reduced_sampler() -> SamplerConfig {
    SamplerConfig {
        chains: 2,
        warmup: 300,
        draws: 500,
        ..SamplerConfig::default()
    }
}

fn default_replicates() -> usize {
    1
}
fn default_observations() -> usize {
    100
}
fn default_sampler() -> SamplerConfig {
    reduced_sampler()
}

/// Cartesian grid of sweep cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub models: Vec<ModelKind>,
    /// Observation window widths in minutes.
    pub windows: Vec<u32>,
    pub etas: Vec<f64>,
    pub phis: Vec<f64>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_observations")]
    pub observations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_sampler")]
    pub sampler: SamplerConfig,
}

impl SweepGrid {
    /// The full 2 · 4 · 3 · 3 grid.
    pub fn full(seed: u64) -> Self {
        Self {
            models: vec![ModelKind::Ib, ModelKind::Ad],
            windows: vec![5, 15, 30, 60],
            etas: vec![0.0, 0.5, 1.0],
            phis: vec![10.0, 100.0, 1000.0],
            replicates: 1,
            observations: 100,
            seed,
            sampler: reduced_sampler(),
        }
    }

    /// Two levels per factor.
    pub fn reduced(seed: u64) -> Self {
        Self {
            models: vec![ModelKind::Ib, ModelKind::Ad],
            windows: vec![5, 60],
            etas: vec![0.0, 1.0],
            phis: vec![10.0, 1000.0],
            ..Self::full(seed)
        }
    }

    pub fn cells_per_replicate(&self) -> usize {
        self.models.len() * self.windows.len() * self.etas.len() * self.phis.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 || self.observations == 0 {
            return Err(invalid("replicates and observations must be at least 1"));
        }
        for &w in &self.windows {
            GenBConfig::for_window(w, 0.0, 1.0, 1, 0)?;
        }
        if let Some(e) = self.etas.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return Err(invalid(format!("eta must lie in [0, 1], got {e}")));
        }
        if let Some(p) = self.phis.iter().find(|p| !(**p > 0.0)) {
            return Err(invalid(format!("phi must be positive, got {p}")));
        }
        self.sampler.validate()
    }

    /// Cells in replicate-major, then model, window, eta, phi order.
    pub fn cells(&self) -> Vec<CellSpec> {
        let mut out = Vec::with_capacity(self.replicates * self.cells_per_replicate());
        for r in 0..self.replicates {
            for &model in &self.models {
                for &window in &self.windows {
                    for &eta in &self.etas {
                        for &phi in &self.phis {
                            out.push(CellSpec {
                                replicate: r,
                                model,
                                window,
                                eta,
                                phi,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSpec {
    pub replicate: usize,
    pub model: ModelKind,
    pub window: u32,
    pub eta: f64,
    pub phi: f64,
}

impl CellSpec {
    /// Data seed; independent of the model so both models see the same counts.
    pub fn data_seed(&self, master: u64) -> u64 {
        sub_seed(
            master,
            &[self.replicate as u64, self.window as u64, self.eta.to_bits(), self.phi.to_bits()],
        )
    }

    pub fn sampler_seed(&self, master: u64) -> u64 {
        sub_seed(self.data_seed(master), &[self.model as u64 + 1])
    }
}

/// Seed of the OD matrix shared by every cell of a replicate.
pub fn truth_seed(master: u64, replicate: usize) -> u64 {
    sub_seed(master, &[0x7_2u64, replicate as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub replicate: usize,
    pub model: ModelKind,
    pub window: u32,
    pub eta: f64,
    pub phi: f64,
    pub data_seed: u64,
    pub sampler_seed: u64,
    pub mse: Option<f64>,
    pub mean_hpd: Option<f64>,
    pub divergences: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    /// Wall-clock seconds per cell, in cell order.
    pub runtimes: Vec<f64>,
}

impl SweepResult {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }
}

/// Fits one model to a network-B scenario.
pub fn fit_scenario(model: ModelKind, scenario: &ScenarioB, sampler: &SamplerConfig) -> Result<PosteriorDraws> {
    let zeros = scenario.truth.structural_zeros().cloned();
    match model {
        ModelKind::Ib => {
            let obs = aggregate_observation_window(&scenario.data);
            nuts_sample(&IbModel::new(obs, zeros)?, None, sampler)
        }
        ModelKind::Ad => {
            let m = build_assignment(scenario.data.clone(), scenario.delays.clone(), zeros)?;
            nuts_sample(&m, None, sampler)
        }
    }
}

/// Accuracy and precision of a fit against the known truth.
pub fn score(draws: &PosteriorDraws, truth: &OdMatrix) -> Result<(f64, f64)> {
    let mean = posterior_mean_matrix(draws)?;
    Ok((mse_vs_truth(mean.alpha(), truth)?, mean_hpd(draws)?))
}

/// Builds the network-B scenario of one cell.
pub fn cell_scenario(grid: &SweepGrid, cell: &CellSpec, g: &TimetableGraph) -> Result<ScenarioB> {
    let cfg = GenBConfig::for_window(cell.window, cell.eta, cell.phi, grid.observations, cell.data_seed(grid.seed))?;
    let zeros = footpath_zeros(g);
    let truth = sample_od_matrix_b(g.access().len(), truth_seed(grid.seed, cell.replicate), Some(&zeros))?;
    let delays = expected_delay_table(g, g.access(), cfg.departure_time, cfg.arrival_margin, cfg.bin_width)?;
    let data = generate_network_b(&cfg, g, &truth)?;
    Ok(ScenarioB { truth, data, delays })
}

fn run_cell(grid: &SweepGrid, cell: &CellSpec, g: &TimetableGraph) -> Result<(f64, f64, usize)> {
    let scenario = cell_scenario(grid, cell, g)?;
    let sampler = SamplerConfig {
        seed: cell.sampler_seed(grid.seed),
        ..grid.sampler.clone()
    };
    let draws = fit_scenario(cell.model, &scenario, &sampler)?;
    let (mse, hpd) = score(&draws, &scenario.truth)?;
    Ok((mse, hpd, draws.divergences()))
}

/// Generates data and fits the designated model for every grid cell. A
/// failing cell is recorded with its error and the sweep carries on.
pub fn run_sweep(grid: &SweepGrid, g: &TimetableGraph) -> Result<SweepResult> {
    grid.validate()?;
    let specs = grid.cells();
    let done: Vec<(SweepCell, f64)> = specs
        .par_iter()
        .map(|c| {
            let start = Instant::now();
            let outcome = run_cell(grid, c, g);
            let (mse, mean_hpd, divergences, error) = match outcome {
                Ok((m, h, d)) => (Some(m), Some(h), Some(d), None),
                Err(e) => (None, None, None, Some(e.to_string())),
            };
            let cell = SweepCell {
                replicate: c.replicate,
                model: c.model,
                window: c.window,
                eta: c.eta,
                phi: c.phi,
                data_seed: c.data_seed(grid.seed),
                sampler_seed: c.sampler_seed(grid.seed),
                mse,
                mean_hpd,
                divergences,
                error,
            };
            (cell, start.elapsed().as_secs_f64())
        })
        .collect();
    let (cells, runtimes) = done.into_iter().unzip();
    Ok(SweepResult { cells, runtimes })
}

pub const SWEEP_HEADER: [&str; 11] = [
    "replicate",
    "model",
    "window",
    "eta",
    "phi",
    "data_seed",
    "sampler_seed",
    "mse",
    "mean_hpd",
    "divergences",
    "error",
];

fn opt_real(v: Option<f64>) -> String {
    v.map(format_real).unwrap_or_default()
}

pub const SWEEP_SCHEMA: &str = "odest.sweep/1";
pub const REGULARIZATION_SCHEMA: &str = "odest.regularization/1";

/// Writes one row per cell; runtimes are not part of the file.
pub fn write_sweep_csv(path: &Path, sweep: &SweepResult) -> Result<()> {
    let mut w = schema_csv_writer(path, SWEEP_SCHEMA)?;
    w.write_record(SWEEP_HEADER)?;
    for c in &sweep.cells {
        w.write_record([
            c.replicate.to_string(),
            c.model.as_str().to_string(),
            c.window.to_string(),
            format_real(c.eta),
            format_real(c.phi),
            c.data_seed.to_string(),
            c.sampler_seed.to_string(),
            opt_real(c.mse),
            opt_real(c.mean_hpd),
            c.divergences.map(|d| d.to_string()).unwrap_or_default(),
            c.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv(path: &Path) -> Result<SweepResult> {
    let parse = |m: String| Error::Parse {
        path: path.to_path_buf(),
        message: m,
    };
    let mut r = schema_csv_reader(path, SWEEP_SCHEMA)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != SWEEP_HEADER {
        return Err(parse(format!("unexpected sweep header {header:?}")));
    }
    let mut cells = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let num = |i: usize| -> Result<Option<f64>> {
            let s = field(i);
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>()
                .map(Some)
                .map_err(|_| parse(format!("row {k}: bad number '{s}' in {}", SWEEP_HEADER[i])))
        };
        let int = |i: usize| -> Result<u64> {
            field(i)
                .parse::<u64>()
                .map_err(|_| parse(format!("row {k}: bad integer in {}", SWEEP_HEADER[i])))
        };
        let error = Some(field(10).to_string()).filter(|s| !s.is_empty());
        cells.push(SweepCell {
            replicate: int(0)? as usize,
            model: ModelKind::parse(field(1))?,
            window: int(2)? as u32,
            eta: num(3)?.ok_or_else(|| parse(format!("row {k}: missing eta")))?,
            phi: num(4)?.ok_or_else(|| parse(format!("row {k}: missing phi")))?,
            data_seed: int(5)?,
            sampler_seed: int(6)?,
            mse: num(7)?,
            mean_hpd: num(8)?,
            divergences: num(9)?.map(|d| d as usize),
            error,
        });
    }
    let runtimes = vec![0.0; cells.len()];
    Ok(SweepResult { cells, runtimes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Response {
    Mse,
    Hpd,
}

impl Response {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Response::Mse),
            "hpd" => Ok(Response::Hpd),
            _ => Err(invalid(format!("unknown response '{s}', expected mse or hpd"))),
        }
    }
}

pub const FACTOR_NAMES: [&str; 3] = ["window", "eta", "phi"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolIndices {
    pub first: Vec<f64>,
    pub total: Vec<f64>,
    pub first_ci: Vec<[f64; 2]>,
    pub total_ci: Vec<[f64; 2]>,
}

/// Linear metamodel `q = β0 + β1·w + β2·η + β3·φ` on MinMax-normalized
/// regressors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetamodelFit {
    pub cells: usize,
    /// Intercept followed by the window, eta and phi coefficients.
    pub beta: [f64; 4],
    pub std_errors: [f64; 4],
    pub p_values: [f64; 4],
    /// Pearson correlation of each raw factor with the response.
    pub correlations: [f64; 3],
    pub r_squared: f64,
    /// Raw (min, max) of each factor used for normalization.
    pub ranges: [[f64; 2]; 3],
    pub residuals: Vec<f64>,
    pub sobol: Option<SobolIndices>,
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Cholesky factor of a symmetric positive definite 4×4 matrix.
fn cholesky4(a: &[[f64; 4]; 4]) -> Result<[[f64; 4]; 4]> {
    let mut l = [[0.0; 4]; 4];
    let scale = (0..4).map(|i| a[i][i]).fold(0.0f64, f64::max);
    for i in 0..4 {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > 1e-12 * scale) {
                    return Err(Error::RankDeficient);
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Ok(l)
}

fn chol_solve(l: &[[f64; 4]; 4], b: [f64; 4]) -> [f64; 4] {
    let mut z = [0.0; 4];
    for i in 0..4 {
        let s: f64 = (0..i).map(|k| l[i][k] * z[k]).sum();
        z[i] = (b[i] - s) / l[i][i];
    }
    let mut x = [0.0; 4];
    for i in (0..4).rev() {
        let s: f64 = (i + 1..4).map(|k| l[k][i] * x[k]).sum();
        x[i] = (z[i] - s) / l[i][i];
    }
    x
}

/// Ordinary least squares of `q` on MinMax-normalized `factors` (one row of
/// three raw values per cell) with two-sided t-test p-values.
pub fn fit_linear_metamodel(factors: &[[f64; 3]], q: &[f64]) -> Result<MetamodelFit> {
    let n = q.len();
    if factors.len() != n {
        return Err(Error::Shape(format!("{} factor rows for {n} responses", factors.len())));
    }
    if n < 5 {
        return Err(Error::TooFewSamples { needed: 5, got: n });
    }
    if let Some(v) = q.iter().chain(factors.iter().flatten()).find(|v| !v.is_finite()) {
        return Err(invalid(format!("non-finite metamodel input {v}")));
    }
    let mut ranges = [[0.0; 2]; 3];
    for (k, r) in ranges.iter_mut().enumerate() {
        let lo = factors.iter().map(|f| f[k]).fold(f64::INFINITY, f64::min);
        let hi = factors.iter().map(|f| f[k]).fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            return Err(Error::RankDeficient);
        }
        *r = [lo, hi];
    }
    let design: Vec<[f64; 4]> = factors
        .iter()
        .map(|f| {
            let mut row = [1.0; 4];
            for k in 0..3 {
                row[k + 1] = (f[k] - ranges[k][0]) / (ranges[k][1] - ranges[k][0]);
            }
            row
        })
        .collect();
    let mut xtx = [[0.0; 4]; 4];
    let mut xty = [0.0; 4];
    for (row, y) in design.iter().zip(q) {
        for i in 0..4 {
            xty[i] += row[i] * y;
            for j in 0..4 {
                xtx[i][j] += row[i] * row[j];
            }
        }
    }
    let l = cholesky4(&xtx)?;
    let mut beta = chol_solve(&l, xty);
    // One step of iterative refinement tightens the normal equations.
    let resid = |beta: &[f64; 4]| -> Vec<f64> {
        design
            .iter()
            .zip(q)
            .map(|(row, y)| y - (0..4).map(|k| row[k] * beta[k]).sum::<f64>())
            .collect()
    };
    let r0 = resid(&beta);
    let mut xtr = [0.0; 4];
    for (row, e) in design.iter().zip(&r0) {
        for k in 0..4 {
            xtr[k] += row[k] * e;
        }
    }
    let delta = chol_solve(&l, xtr);
    for k in 0..4 {
        beta[k] += delta[k];
    }
    let residuals = resid(&beta);
    let rss: f64 = residuals.iter().map(|e| e * e).sum();
    let df = (n - 4) as f64;
    let sigma2 = if df > 0.0 { rss / df } else { 0.0 };
    let mut std_errors = [0.0; 4];
    let mut p_values = [1.0; 4];
    let t_dist = (df > 0.0).then(|| StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom"));
    for k in 0..4 {
        let mut e = [0.0; 4];
        e[k] = 1.0;
        let inv_kk = chol_solve(&l, e)[k];
        std_errors[k] = (sigma2 * inv_kk).sqrt();
        p_values[k] = if std_errors[k] > 0.0 {
            let t = beta[k] / std_errors[k];
            t_dist.as_ref().map_or(1.0, |d| (2.0 * d.sf(t.abs())).min(1.0))
        } else if beta[k] == 0.0 {
            1.0
        } else {
            0.0
        };
    }
    let mean_q = q.iter().sum::<f64>() / n as f64;
    let tss: f64 = q.iter().map(|v| (v - mean_q) * (v - mean_q)).sum();
    let r_squared = if tss > 0.0 { 1.0 - rss / tss } else { 1.0 };
    let mut correlations = [0.0; 3];
    for (k, c) in correlations.iter_mut().enumerate() {
        let raw: Vec<f64> = factors.iter().map(|f| f[k]).collect();
        *c = pearson(&raw, q);
    }
    Ok(MetamodelFit {
        cells: n,
        beta,
        std_errors,
        p_values,
        correlations,
        r_squared,
        ranges,
        residuals,
        sobol: None,
    })
}

/// Fits the metamodel to the successful cells of one model in a sweep.
pub fn fit_metamodel(sweep: &SweepResult, model: ModelKind, response: Response) -> Result<MetamodelFit> {
    let mut factors = Vec::new();
    let mut q = Vec::new();
    for c in sweep.cells.iter().filter(|c| c.model == model) {
        let v = match response {
            Response::Mse => c.mse,
            Response::Hpd => c.mean_hpd,
        };
        if let Some(v) = v {
            factors.push([c.window as f64, c.eta, c.phi]);
            q.push(v);
        }
    }
    fit_linear_metamodel(&factors, &q)
}

fn mean_over(idx: &[usize], f: impl Fn(usize) -> f64) -> f64 {
    idx.iter().map(|&r| f(r)).sum::<f64>() / idx.len() as f64
}

/// First-order indices by the Saltelli estimator on mean-centred outputs and
/// total indices by Jansen's formula.
fn saltelli(fa: &[f64], fb: &[f64], fab: &[Vec<f64>], idx: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let m0 = mean_over(idx, |r| 0.5 * (fa[r] + fb[r]));
    let var = mean_over(idx, |r| 0.5 * ((fa[r] - m0).powi(2) + (fb[r] - m0).powi(2)));
    let d = fab.len();
    if var <= 0.0 {
        return (vec![0.0; d], vec![0.0; d]);
    }
    let first = fab
        .iter()
        .map(|f| mean_over(idx, |r| (fb[r] - m0) * (f[r] - fa[r])) / var)
        .collect();
    let total = fab
        .iter()
        .map(|f| mean_over(idx, |r| (fa[r] - f[r]).powi(2)) / (2.0 * var))
        .collect();
    (first, total)
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// First-order and total Sobol indices of `f` over independent U(0, 1)
/// inputs from the Saltelli `A`, `B`, `A_B` design, with 95 % bootstrap
/// percentile intervals.
pub fn sobol_indices_of<F>(f: F, dim: usize, n_samples: usize, bootstrap: usize, seed: u64) -> Result<SobolIndices>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if n_samples < 2 || dim == 0 {
        return Err(invalid("Sobol estimation needs at least two samples and one input"));
    }
    let mut rng = rng_from(seed, &[0x50B0]);
    let a: Vec<Vec<f64>> = (0..n_samples).map(|_| (0..dim).map(|_| rng.random()).collect()).collect();
    let b: Vec<Vec<f64>> = (0..n_samples).map(|_| (0..dim).map(|_| rng.random()).collect()).collect();
    let fa: Vec<f64> = a.iter().map(|x| f(x)).collect();
    let fb: Vec<f64> = b.iter().map(|x| f(x)).collect();
    let fab: Vec<Vec<f64>> = (0..dim)
        .map(|i| {
            a.iter()
                .zip(&b)
                .map(|(ra, rb)| {
                    let mut x = ra.clone();
                    x[i] = rb[i];
                    f(&x)
                })
                .collect()
        })
        .collect();
    let all: Vec<usize> = (0..n_samples).collect();
    let (first, total) = saltelli(&fa, &fb, &fab, &all);
    let boots: Vec<(Vec<f64>, Vec<f64>)> = (0..bootstrap)
        .into_par_iter()
        .map(|k| {
            let mut r = rng_from(seed, &[0x50B1, k as u64]);
            let idx: Vec<usize> = (0..n_samples).map(|_| r.random_range(0..n_samples)).collect();
            saltelli(&fa, &fb, &fab, &idx)
        })
        .collect();
    let ci = |pick: &dyn Fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>, i: usize, point: f64| -> [f64; 2] {
        if boots.is_empty() {
            return [point, point];
        }
        let mut v: Vec<f64> = boots.iter().map(|b| pick(b)[i]).collect();
        v.sort_by(f64::total_cmp);
        [percentile(&v, 0.025), percentile(&v, 0.975)]
    };
    let first_ci = (0..dim).map(|i| ci(&|b| &b.0, i, first[i])).collect();
    let total_ci = (0..dim).map(|i| ci(&|b| &b.1, i, total[i])).collect();
    Ok(SobolIndices {
        first,
        total,
        first_ci,
        total_ci,
    })
}

/// Sobol indices of a fitted metamodel over its normalized factor ranges.
pub fn sobol_indices(fit: &MetamodelFit, n_samples: usize, bootstrap: usize, seed: u64) -> Result<SobolIndices> {
    let beta = fit.beta;
    sobol_indices_of(
        |x| beta[0] + beta[1] * x[0] + beta[2] * x[1] + beta[3] * x[2],
        3,
        n_samples,
        bootstrap,
        seed,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegMethod {
    #[serde(rename = "bayes_reg")]
    BayesReg,
    #[serde(rename = "bayes_unreg")]
    BayesUnreg,
    #[serde(rename = "qp_reg")]
    QpReg,
    #[serde(rename = "qp_unreg")]
    QpUnreg,
}

impl RegMethod {
    pub const ALL: [RegMethod; 4] = [RegMethod::BayesReg, RegMethod::BayesUnreg, RegMethod::QpReg, RegMethod::QpUnreg];

    pub fn as_str(self) -> &'static str {
        match self {
            RegMethod::BayesReg => "bayes_reg",
            RegMethod::BayesUnreg => "bayes_unreg",
            RegMethod::QpReg => "qp_reg",
            RegMethod::QpUnreg => "qp_unreg",
        }
    }

    pub fn regularized(self) -> bool {
        matches!(self, RegMethod::BayesReg | RegMethod::QpReg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizationRow {
    pub observations: usize,
    pub method: RegMethod,
    pub validation_mse: f64,
}

pub fn write_regularization_csv(path: &Path, rows: &[RegularizationRow]) -> Result<()> {
    let mut w = schema_csv_writer(path, REGULARIZATION_SCHEMA)?;
    w.write_record(["observations", "method", "validation_mse"])?;
    for r in rows {
        w.write_record([r.observations.to_string(), r.method.as_str().to_string(), format_real(r.validation_mse)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_regularization_csv(path: &Path) -> Result<Vec<RegularizationRow>> {
    let mut r = schema_csv_reader(path, REGULARIZATION_SCHEMA)?;
    let bad = |m: String| Error::Parse {
        path: path.to_path_buf(),
        message: m,
    };
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let method = RegMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == rec.get(1).unwrap_or(""))
            .ok_or_else(|| bad(format!("row {k}: unknown method")))?;
        rows.push(RegularizationRow {
            observations: rec.get(0).unwrap_or("").parse().map_err(|_| bad(format!("row {k}: bad observations")))?,
            method,
            validation_mse: rec.get(2).unwrap_or("").parse().map_err(|_| bad(format!("row {k}: bad mse")))?,
        });
    }
    Ok(rows)
}

/// Mean squared error of `Y ≈ X·A` over every cell of a validation set.
pub fn validation_mse(a: &OdMatrix, validation: &ObservationSet) -> Result<f64> {
    let pred: Matrix = validation.x().matmul(a.alpha())?;
    let n = pred.as_slice().len() as f64;
    Ok(pred
        .as_slice()
        .iter()
        .zip(validation.y().as_slice())
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / n)
}

/// Fits each method on the first `N` training observations for every `N`
/// in `n_list` and scores `Y = X·A` predictions on separately simulated
/// validation data. Training and validation counts share the OD matrix drawn
/// from `cfg.seed` but use disjoint random streams.
pub fn regularization_study(
    cfg: &GenAConfig,
    n_list: &[usize],
    validation_n: usize,
    sampler: &SamplerConfig,
) -> Result<Vec<RegularizationRow>> {
    cfg.validate()?;
    let n_max = n_list.iter().copied().max().ok_or_else(|| invalid("empty observation list"))?;
    if n_list.contains(&0) || validation_n == 0 {
        return Err(invalid("observation counts must be positive"));
    }
    let truth = sample_od_matrix_a(cfg.stations, cfg.seed)?;
    let train_all = simulate_counts_a(
        &GenAConfig {
            observations: n_max,
            seed: sub_seed(cfg.seed, &[1]),
            ..cfg.clone()
        },
        &truth,
    )?;
    let validation = simulate_counts_a(
        &GenAConfig {
            observations: validation_n,
            seed: sub_seed(cfg.seed, &[2]),
            ..cfg.clone()
        },
        &truth,
    )?;
    let jobs: Vec<(usize, RegMethod)> = n_list
        .iter()
        .flat_map(|&n| RegMethod::ALL.iter().map(move |&m| (n, m)))
        .collect();
    jobs.par_iter()
        .map(|&(n, method)| {
            let train = train_all.head(n)?;
            let estimate = match method {
                RegMethod::BayesReg | RegMethod::BayesUnreg => {
                    let model = IbModel::new(train, None)?.with_regularization(method.regularized());
                    let sc = SamplerConfig {
                        seed: sub_seed(sampler.seed, &[n as u64, method as u64]),
                        ..sampler.clone()
                    };
                    posterior_mean_matrix(&nuts_sample(&model, None, &sc)?)?
                }
                RegMethod::QpReg | RegMethod::QpUnreg => {
                    solve_qp(&train, None, method.regularized(), &QpOptions::default())?.a_hat
                }
            };
            Ok(RegularizationRow {
                observations: n,
                method,
                validation_mse: validation_mse(&estimate, &validation)?,
            })
        })
        .collect()
}

/// A named combination of window width, trend scale and dispersion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: &'static str,
    pub window: u32,
    pub eta: f64,
    pub phi: f64,
}

pub const PRESETS: [Preset; 3] = [
    Preset {
        name: "worst",
        window: 5,
        eta: 1.0,
        phi: 1000.0,
    },
    Preset {
        name: "best_ib",
        window: 60,
        eta: 0.0,
        phi: 10.0,
    },
    Preset {
        name: "best_ad",
        window: 60,
        eta: 1.0,
        phi: 10.0,
    },
];

pub fn preset_experiments(name: &str) -> Result<Preset> {
    PRESETS
        .iter()
        .find(|p| p.name == name)
        .copied()
        .ok_or_else(|| Error::UnknownPreset(name.to_string()))
}

impl Preset {
    pub fn generator_config(&self, observations: usize, seed: u64) -> Result<GenBConfig> {
        GenBConfig::for_window(self.window, self.eta, self.phi, observations, seed)
    }
}
