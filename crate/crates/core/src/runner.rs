//! Command implementations behind the `odest` binary.
//!
//! Each command validates every input before touching the output location,
//! writes its artifacts and then exactly one run manifest. Randomness comes
//! from the config seed or the `--seed` override, never from the environment.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{diagnose, hpd_interval, posterior_mean_matrix, sparsity, DiagnosticsReport, SPARSITY_THRESHOLD};
use crate::domain::io::{
    format_real, read_binned, read_count_table, read_draws, read_json, read_observations, read_od_matrix,
    read_travel_times, require_file, schema_csv_writer, write_binned, write_count_table, write_draws, write_json,
    write_observations, write_od_matrix_csv, write_od_matrix_json, write_travel_times, CountTable,
};
use crate::domain::{
    aggregate_observation_window, default_thin_stride, Matrix, ObservationSet, OdMatrix, PosteriorDraws,
    StructuralZeros,
};
use crate::error::{invalid, Error, Result};
use crate::model::{build_assignment, IbModel};
use crate::netgen::a::{generate_network_a, GenAConfig};
use crate::netgen::b::{default_graph, footpath_zeros, generate_scenario_b, GenBConfig, GraphSpec, TimetableGraph};
use crate::preprocess::{balance_counts, impute_gaps, upsample_counts};
use crate::qp::{solve_qp, QpOptions, QpSolution};
use crate::sampler::{nuts_sample, SamplerConfig};
use crate::sensitivity::{
    fit_metamodel, preset_experiments, read_regularization_csv, read_sweep_csv, regularization_study, run_sweep,
    sobol_indices, write_regularization_csv, write_sweep_csv, ModelKind, Preset, RegMethod, Response, SweepGrid,
    SweepResult, FACTOR_NAMES, PRESETS,
};

pub const MANIFEST_SCHEMA: &str = "odest.manifest/1";
pub const METAMODEL_SCHEMA: &str = "odest.metamodel/1";
pub const ZEROS_SCHEMA: &str = "odest.zeros/1";
pub const COEFFICIENTS_SCHEMA: &str = "odest.report.coefficients/1";
pub const DISPERSION_SCHEMA: &str = "odest.report.dispersion/1";
pub const SCATTER_SCHEMA: &str = "odest.report.scatter/1";
pub const VALIDATION_SCHEMA: &str = "odest.report.validation/1";
pub const SPARSITY_SCHEMA: &str = "odest.report.sparsity/1";
pub const MANIFEST_FILE: &str = "manifest.json";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NOT_FOUND: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;
pub const EXIT_SAMPLER: i32 = 5;
pub const EXIT_SCHEMA: i32 = 6;

/// Process exit status for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NotFound(_) => EXIT_NOT_FOUND,
        Error::Schema { .. } => EXIT_SCHEMA,
        Error::Sampler(_) => EXIT_SAMPLER,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::DegenerateDirichlet { .. } => EXIT_FAILURE,
        _ => EXIT_VALIDATION,
    }
}

/// Short machine-readable name of an error variant.
pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidInput(_) => "invalid_input",
        Error::Shape(_) => "shape",
        Error::InvalidOdMatrix { .. } => "invalid_od_matrix",
        Error::NonMonotone { .. } => "non_monotone",
        Error::DegenerateDirichlet { .. } => "degenerate_dirichlet",
        Error::NoPath { .. } => "no_path",
        Error::DelayExceedsGap { .. } => "delay_exceeds_gap",
        Error::NonPositiveScale(_) => "non_positive_scale",
        Error::NegativeObservation(_) => "negative_observation",
        Error::ZeroTotal(_) => "zero_total",
        Error::GapTooWide { .. } => "gap_too_wide",
        Error::TooFewSamples { .. } => "too_few_samples",
        Error::Sampler(_) => "sampler",
        Error::RankDeficient => "rank_deficient",
        Error::UnknownPreset(_) => "unknown_preset",
        Error::Schema { .. } => "schema",
        Error::NotFound(_) => "not_found",
        Error::Parse { .. } => "parse",
        Error::Io(_) => "io",
        Error::Csv(_) => "csv",
        Error::Json(_) => "json",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

pub fn hash_file(path: &Path) -> Result<FileHash> {
    let bytes = fs::read(path)?;
    Ok(FileHash {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Provenance record written once per command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    pub started: String,
    pub finished: String,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtimes: Option<Vec<f64>>,
}

struct Recorder {
    command: String,
    config: serde_json::Value,
    seed: Option<u64>,
    started: String,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    warnings: Vec<String>,
    runtimes: Option<Vec<f64>>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl Recorder {
    fn new(command: &str, config: &impl Serialize, seed: Option<u64>, inputs: &[&Path]) -> Result<Self> {
        for p in inputs {
            if !p.exists() {
                return Err(Error::NotFound(p.to_path_buf()));
            }
        }
        Ok(Self {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            seed,
            started: now(),
            inputs: inputs.iter().map(|p| p.to_path_buf()).collect(),
            outputs: Vec::new(),
            warnings: Vec::new(),
            runtimes: None,
        })
    }

    fn output(&mut self, p: PathBuf) {
        self.outputs.push(p);
    }

    fn finish(self, manifest_path: &Path) -> Result<RunManifest> {
        let hash_all = |paths: &[PathBuf]| -> Result<Vec<FileHash>> {
            let mut files = Vec::new();
            for p in paths {
                if p.is_dir() {
                    let mut entries: Vec<PathBuf> = fs::read_dir(p)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
                    entries.sort();
                    for e in entries.iter().filter(|e| e.is_file()) {
                        files.push(hash_file(e)?);
                    }
                } else {
                    files.push(hash_file(p)?);
                }
            }
            Ok(files)
        };
        let m = RunManifest {
            schema: MANIFEST_SCHEMA.to_string(),
            command: self.command,
            config: self.config,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started: self.started,
            finished: now(),
            inputs: hash_all(&self.inputs)?,
            outputs: hash_all(&self.outputs)?,
            warnings: self.warnings,
            runtimes: self.runtimes,
        };
        write_json(manifest_path, &m)?;
        Ok(m)
    }
}

/// Manifest path for a command whose single output is a file:
/// `solution.json` gets `solution.manifest.json`.
pub fn sibling_manifest(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.manifest.json"))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => Ok(fs::create_dir_all(p)?),
        _ => Ok(()),
    }
}

/// Parses a TOML config file into `T`.
pub fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    require_file(path)?;
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Structural zeros as written next to generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZerosFile {
    pub schema: String,
    pub stations: usize,
    pub pairs: Vec<[usize; 2]>,
}

impl ZerosFile {
    pub fn from_zeros(z: &StructuralZeros) -> Self {
        let s = z.size();
        let pairs = (0..s)
            .flat_map(|i| (0..s).map(move |j| (i, j)))
            .filter(|&(i, j)| z.is_zero(i, j))
            .map(|(i, j)| [i, j])
            .collect();
        Self {
            schema: ZEROS_SCHEMA.to_string(),
            stations: s,
            pairs,
        }
    }

    pub fn to_zeros(&self) -> Result<StructuralZeros> {
        let pairs: Vec<(usize, usize)> = self.pairs.iter().map(|p| (p[0], p[1])).collect();
        StructuralZeros::from_pairs(self.stations, &pairs)
    }
}

pub fn read_zeros(path: &Path) -> Result<StructuralZeros> {
    let z: ZerosFile = read_json(path)?;
    if z.schema != ZEROS_SCHEMA {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            expected: ZEROS_SCHEMA.into(),
            found: z.schema,
        });
    }
    z.to_zeros()
}

fn opt_zeros(path: Option<&Path>, stations: usize) -> Result<Option<StructuralZeros>> {
    let Some(p) = path else { return Ok(None) };
    let z = read_zeros(p)?;
    if z.size() != stations {
        return Err(Error::Shape(format!(
            "structural zeros cover {} stations, data has {stations}",
            z.size()
        )));
    }
    Ok(Some(z))
}

fn inputs<'a>(required: &[&'a Path], optional: &[Option<&'a Path>]) -> Vec<&'a Path> {
    required.iter().copied().chain(optional.iter().flatten().copied()).collect()
}

/// `generate-a`: writes `odmatrix.csv`, `X.csv`, `Y.csv` and the manifest.
pub fn generate_a(config: &Path, out_dir: &Path, seed: Option<u64>) -> Result<RunManifest> {
    let mut cfg: GenAConfig = load_toml(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let mut rec = Recorder::new("generate-a", &cfg, Some(cfg.seed), &[config])?;
    let (a, obs) = generate_network_a(&cfg)?;
    fs::create_dir_all(out_dir)?;
    let (od, x, y) = (out_dir.join("odmatrix.csv"), out_dir.join("X.csv"), out_dir.join("Y.csv"));
    write_od_matrix_csv(&od, &a)?;
    write_observations(&x, &y, &obs)?;
    for p in [od, x, y] {
        rec.output(p);
    }
    rec.finish(&out_dir.join(MANIFEST_FILE))
}

fn load_graph(path: Option<&Path>) -> Result<TimetableGraph> {
    match path {
        Some(p) => {
            let spec: GraphSpec = read_json(p)?;
            TimetableGraph::from_spec(&spec)
        }
        None => Ok(default_graph()),
    }
}

/// `generate-b`: binned counts (`Xb.csv`, `Yb.csv`, `window.json`), their
/// observation-window totals (`X.csv`, `Y.csv`), the delay table
/// `delays.csv`, the truth `odmatrix.json` and `zeros.json`.
pub fn generate_b(config: &Path, graph: Option<&Path>, out_dir: &Path, seed: Option<u64>) -> Result<RunManifest> {
    let mut cfg: GenBConfig = load_toml(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let mut rec = Recorder::new("generate-b", &cfg, Some(cfg.seed), &inputs(&[config], &[graph]))?;
    let g = load_graph(graph)?;
    let sc = generate_scenario_b(&cfg, &g)?;
    fs::create_dir_all(out_dir)?;
    write_binned(out_dir, &sc.data)?;
    let window = aggregate_observation_window(&sc.data);
    let names = ["Xb.csv", "Yb.csv", "window.json", "X.csv", "Y.csv", "delays.csv", "odmatrix.json", "zeros.json"];
    write_observations(&out_dir.join("X.csv"), &out_dir.join("Y.csv"), &window)?;
    write_travel_times(&out_dir.join("delays.csv"), &sc.delays)?;
    write_od_matrix_json(&out_dir.join("odmatrix.json"), &sc.truth)?;
    write_json(&out_dir.join("zeros.json"), &ZerosFile::from_zeros(&footpath_zeros(&g)))?;
    for n in names {
        rec.output(out_dir.join(n));
    }
    rec.finish(&out_dir.join(MANIFEST_FILE))
}

/// Options of `preprocess`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    /// Target interval in minutes.
    pub interval: u64,
    /// `(radius, z)` for gap and outlier repair of the raw increments.
    pub impute: Option<(usize, f64)>,
    pub balance: bool,
}

/// Parses `radius=K,z=Z`.
pub fn parse_impute(spec: &str) -> Result<(usize, f64)> {
    let (mut radius, mut z) = (None, None);
    for part in spec.split(',') {
        match part.trim().split_once('=') {
            Some(("radius", v)) => radius = v.trim().parse::<usize>().ok(),
            Some(("z", v)) => z = v.trim().parse::<f64>().ok().filter(|z| *z > 0.0),
            _ => return Err(invalid(format!("bad impute option '{part}', expected radius=K,z=Z"))),
        }
    }
    match (radius, z) {
        (Some(r), Some(z)) if r > 0 => Ok((r, z)),
        _ => Err(invalid(format!("bad impute option '{spec}', expected radius=K,z=Z with K ≥ 1, Z > 0"))),
    }
}

/// Repairs, up-samples and optionally balances one cumulative table. Returns
/// the per-interval table and the number of imputed increments.
fn preprocess_table(path: &Path, opts: &PreprocessOptions) -> Result<(CountTable, usize)> {
    let t = read_count_table(path)?;
    if t.index_names != ["time"] {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: "cumulative tables need a single `time` index column (minutes)".into(),
        });
    }
    let times: Vec<f64> = t.index.iter().map(|r| r[0] as f64).collect();
    let s = t.labels.len();
    let mut edits = 0;
    let mut columns = Vec::with_capacity(s);
    for c in 0..s {
        let raw: Vec<Option<f64>> = t.values.iter().map(|r| r[c]).collect();
        let cumulative = match opts.impute {
            Some((radius, z)) => {
                let inc: Vec<Option<f64>> = raw
                    .windows(2)
                    .map(|w| match (w[0], w[1]) {
                        (Some(a), Some(b)) => Some(b - a),
                        _ => None,
                    })
                    .collect();
                let (filled, mask) = impute_gaps(&inc, radius, z)?;
                edits += mask.iter().filter(|&&m| m).count();
                let mut cum = vec![raw[0].unwrap_or(0.0)];
                for d in filled {
                    cum.push(cum.last().copied().unwrap_or(0.0) + d);
                }
                cum
            }
            None => raw
                .iter()
                .enumerate()
                .map(|(r, v)| {
                    v.ok_or_else(|| Error::Parse {
                        path: path.to_path_buf(),
                        message: format!("missing value at row {r}, column {} (use --impute)", t.labels[c]),
                    })
                })
                .collect::<Result<Vec<_>>>()?,
        };
        columns.push(upsample_counts(&times, &cumulative, opts.interval as f64)?);
    }
    let rows = columns.first().map_or(0, Vec::len);
    let start = t.index.first().map_or(0, |r| r[0]);
    Ok((
        CountTable {
            index_names: vec!["time".into()],
            labels: t.labels.clone(),
            index: (0..rows as u64).map(|k| vec![start + k * opts.interval]).collect(),
            values: (0..rows).map(|k| columns.iter().map(|c| Some(c[k])).collect()).collect(),
        },
        edits,
    ))
}

fn dense(t: &CountTable) -> Result<Matrix> {
    Matrix::from_rows(&t.values.iter().map(|r| r.iter().map(|v| v.unwrap_or(0.0)).collect()).collect::<Vec<_>>())
}

fn with_values(t: &CountTable, m: &Matrix) -> CountTable {
    CountTable {
        values: (0..m.rows()).map(|r| m.row(r).iter().map(|&v| Some(v)).collect()).collect(),
        ..t.clone()
    }
}

/// `preprocess`: cumulative entry counts (and optionally exit counts) in,
/// per-interval counts out. Balancing pairs rows of the two tables.
pub fn preprocess(
    input: &Path,
    exits: Option<&Path>,
    opts: &PreprocessOptions,
    out: &Path,
    out_exits: Option<&Path>,
) -> Result<RunManifest> {
    if opts.interval == 0 {
        return Err(invalid("interval must be positive"));
    }
    if exits.is_some() != out_exits.is_some() {
        return Err(invalid("--exits and --out-exits go together"));
    }
    if opts.balance && exits.is_none() {
        return Err(invalid("--balance needs --exits"));
    }
    let mut rec = Recorder::new("preprocess", opts, None, &inputs(&[input], &[exits]))?;
    let (mut entries, edits) = preprocess_table(input, opts)?;
    let mut exit_table = match exits {
        Some(p) => Some(preprocess_table(p, opts)?),
        None => None,
    };
    let mut total_edits = edits;
    if let Some((y, e)) = &mut exit_table {
        total_edits += *e;
        if y.labels != entries.labels || y.index != entries.index {
            return Err(Error::Shape("entry and exit tables differ in stations or time span".into()));
        }
        if opts.balance {
            let obs = balance_counts(&ObservationSet::new(dense(&entries)?, dense(y)?, Some(entries.labels.clone()))?)?;
            entries = with_values(&entries, obs.x());
            *y = with_values(y, obs.y());
        }
    }
    if total_edits > 0 {
        rec.warnings.push(format!("{total_edits} increments imputed"));
    }
    ensure_parent(out)?;
    write_count_table(out, &entries)?;
    rec.output(out.to_path_buf());
    if let (Some((y, _)), Some(p)) = (&exit_table, out_exits) {
        ensure_parent(p)?;
        write_count_table(p, y)?;
        rec.output(p.to_path_buf());
    }
    rec.finish(&sibling_manifest(out))
}

/// Options shared by the two Bayesian fit commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub sampler: SamplerConfig,
    /// Dirichlet concentration; `None` keeps the model default.
    pub concentration: Option<f64>,
    /// Stride for the stored draws; `None` keeps about 1000 draws.
    pub thin: Option<usize>,
}

/// Sampler settings from an optional TOML file.
pub fn load_sampler(path: Option<&Path>) -> Result<SamplerConfig> {
    match path {
        Some(p) => load_toml(p),
        None => Ok(SamplerConfig::default()),
    }
}

fn write_fit(
    mut rec: Recorder,
    draws: &PosteriorDraws,
    truth: Option<&OdMatrix>,
    thin: Option<usize>,
    out_dir: &Path,
) -> Result<(RunManifest, DiagnosticsReport)> {
    let report = diagnose(draws, truth, None)?;
    rec.warnings.extend(report.warnings.iter().cloned());
    let mean = posterior_mean_matrix(draws)?;
    let stride = thin.unwrap_or_else(|| default_thin_stride(draws.total_draws()));
    fs::create_dir_all(out_dir)?;
    let draws_dir = out_dir.join("draws");
    write_draws(&draws_dir, &draws.thin(stride))?;
    write_od_matrix_csv(&out_dir.join("odmatrix.csv"), &mean)?;
    write_json(&out_dir.join("report.json"), &report)?;
    rec.output(draws_dir);
    rec.output(out_dir.join("odmatrix.csv"));
    rec.output(out_dir.join("report.json"));
    Ok((rec.finish(&out_dir.join(MANIFEST_FILE))?, report))
}

fn read_truth(path: Option<&Path>) -> Result<Option<OdMatrix>> {
    path.map(read_od_matrix).transpose()
}

#[derive(Serialize)]
struct FitEcho<'a> {
    model: &'a str,
    options: &'a FitOptions,
    regularized: bool,
}

/// `fit-ib`: instantaneous-balance fit of window totals.
pub fn fit_ib(
    x: &Path,
    y: &Path,
    zeros: Option<&Path>,
    truth: Option<&Path>,
    regularized: bool,
    opts: &FitOptions,
    out_dir: &Path,
) -> Result<(RunManifest, DiagnosticsReport)> {
    opts.sampler.validate()?;
    let echo = FitEcho {
        model: "ib",
        options: opts,
        regularized,
    };
    let rec = Recorder::new("fit-ib", &echo, Some(opts.sampler.seed), &inputs(&[x, y], &[zeros, truth]))?;
    let obs = read_observations(x, y)?;
    let zeros = opt_zeros(zeros, obs.stations())?;
    let truth = read_truth(truth)?;
    let mut model = IbModel::new(obs, zeros)?.with_regularization(regularized);
    if let Some(c) = opts.concentration {
        model = model.with_concentration(c)?;
    }
    let draws = nuts_sample(&model, None, &opts.sampler)?;
    write_fit(rec, &draws, truth.as_ref(), opts.thin, out_dir)
}

/// `fit-ad`: average-delay fit of binned counts.
pub fn fit_ad(
    binned_dir: &Path,
    delays: &Path,
    zeros: Option<&Path>,
    truth: Option<&Path>,
    opts: &FitOptions,
    out_dir: &Path,
) -> Result<(RunManifest, DiagnosticsReport)> {
    opts.sampler.validate()?;
    let echo = FitEcho {
        model: "ad",
        options: opts,
        regularized: true,
    };
    let rec = Recorder::new("fit-ad", &echo, Some(opts.sampler.seed), &inputs(&[binned_dir, delays], &[zeros, truth]))?;
    let binned = read_binned(binned_dir)?;
    let zeros = opt_zeros(zeros, binned.stations())?;
    let truth = read_truth(truth)?;
    let mut model = build_assignment(binned, read_travel_times(delays)?, zeros)?;
    if let Some(c) = opts.concentration {
        model = model.with_concentration(c)?;
    }
    let draws = nuts_sample(&model, None, &opts.sampler)?;
    write_fit(rec, &draws, truth.as_ref(), opts.thin, out_dir)
}

/// `fit-qp`: constrained least-squares point estimate.
pub fn fit_qp(
    x: &Path,
    y: &Path,
    zeros: Option<&Path>,
    regularized: bool,
    opts: &QpOptions,
    out: &Path,
) -> Result<(RunManifest, QpSolution)> {
    #[derive(Serialize)]
    struct Echo<'a> {
        regularized: bool,
        options: &'a QpOptions,
    }
    let mut rec = Recorder::new("fit-qp", &Echo { regularized, options: opts }, None, &inputs(&[x, y], &[zeros]))?;
    let obs = read_observations(x, y)?;
    let zeros = opt_zeros(zeros, obs.stations())?;
    let sol = solve_qp(&obs, zeros.as_ref(), regularized, opts)?;
    if !sol.converged {
        rec.warnings.push(format!("QP stopped after {} iterations without converging", sol.iterations));
    }
    ensure_parent(out)?;
    write_json(out, &sol)?;
    rec.output(out.to_path_buf());
    Ok((rec.finish(&sibling_manifest(out))?, sol))
}

/// `diagnose`: diagnostics of stored draws.
pub fn diagnose_cmd(
    draws_dir: &Path,
    truth: Option<&Path>,
    qp: Option<&Path>,
    out: &Path,
) -> Result<(RunManifest, DiagnosticsReport)> {
    let mut rec = Recorder::new("diagnose", &serde_json::Value::Null, None, &inputs(&[draws_dir], &[truth, qp]))?;
    let draws = read_draws(draws_dir)?;
    let truth = read_truth(truth)?;
    let qp: Option<QpSolution> = qp.map(read_json).transpose()?;
    let report = diagnose(&draws, truth.as_ref(), qp.as_ref().map(|q| &q.a_hat))?;
    rec.warnings.extend(report.warnings.iter().cloned());
    ensure_parent(out)?;
    write_json(out, &report)?;
    rec.output(out.to_path_buf());
    Ok((rec.finish(&sibling_manifest(out))?, report))
}

/// `sweep --grid`: the network-B factorial design.
pub fn sweep(grid: &Path, graph: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<(RunManifest, SweepResult)> {
    let mut g: SweepGrid = load_toml(grid)?;
    if let Some(s) = seed {
        g.seed = s;
    }
    g.validate()?;
    let mut rec = Recorder::new("sweep", &g, Some(g.seed), &inputs(&[grid], &[graph]))?;
    let result = run_sweep(&g, &load_graph(graph)?)?;
    if result.failures() > 0 {
        rec.warnings.push(format!("{} cells failed", result.failures()));
    }
    ensure_parent(out)?;
    write_sweep_csv(out, &result)?;
    rec.output(out.to_path_buf());
    rec.runtimes = Some(result.runtimes.clone());
    Ok((rec.finish(&sibling_manifest(out))?, result))
}

/// Settings of the regularization study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizationConfig {
    pub generator: GenAConfig,
    pub observations: Vec<usize>,
    pub validation_observations: usize,
    #[serde(default)]
    pub sampler: SamplerConfig,
}

/// `sweep --regularization`: validation error against training size.
pub fn regularization_sweep(config: &Path, out: &Path, seed: Option<u64>) -> Result<RunManifest> {
    let mut cfg: RegularizationConfig = load_toml(config)?;
    if let Some(s) = seed {
        cfg.generator.seed = s;
        cfg.sampler.seed = s;
    }
    let mut rec = Recorder::new("sweep", &cfg, Some(cfg.generator.seed), &[config])?;
    let rows = regularization_study(&cfg.generator, &cfg.observations, cfg.validation_observations, &cfg.sampler)?;
    ensure_parent(out)?;
    write_regularization_csv(out, &rows)?;
    rec.output(out.to_path_buf());
    rec.finish(&sibling_manifest(out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetamodel {
    pub model: ModelKind,
    pub fit: crate::sensitivity::MetamodelFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetamodelReport {
    pub schema: String,
    pub response: String,
    pub factors: Vec<String>,
    pub models: Vec<ModelMetamodel>,
}

/// Options of `sensitivity`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityOptions {
    pub response: String,
    pub sobol_samples: usize,
    pub bootstrap: usize,
    pub seed: u64,
}

/// `sensitivity`: metamodel and Sobol indices per model found in the sweep.
pub fn sensitivity(sweep_csv: &Path, opts: &SensitivityOptions, out: &Path) -> Result<(RunManifest, MetamodelReport)> {
    let response = Response::parse(&opts.response)?;
    let mut rec = Recorder::new("sensitivity", opts, Some(opts.seed), &[sweep_csv])?;
    let sweep = read_sweep_csv(sweep_csv)?;
    let mut models = Vec::new();
    for model in [ModelKind::Ib, ModelKind::Ad] {
        if !sweep.cells.iter().any(|c| c.model == model) {
            continue;
        }
        let mut fit = fit_metamodel(&sweep, model, response)?;
        fit.sobol = Some(sobol_indices(&fit, opts.sobol_samples, opts.bootstrap, opts.seed)?);
        models.push(ModelMetamodel { model, fit });
    }
    if models.is_empty() {
        return Err(Error::TooFewSamples { needed: 5, got: 0 });
    }
    let report = MetamodelReport {
        schema: METAMODEL_SCHEMA.to_string(),
        response: opts.response.clone(),
        factors: FACTOR_NAMES.iter().map(|s| s.to_string()).collect(),
        models,
    };
    ensure_parent(out)?;
    write_json(out, &report)?;
    rec.output(out.to_path_buf());
    Ok((rec.finish(&sibling_manifest(out))?, report))
}

/// Which table `report` builds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportKind {
    /// Per-coefficient truth, QP estimate, posterior mean and 95% HPD.
    Coefficients,
    /// Mean accuracy and precision per sweep setting.
    Dispersion,
    /// Paired IB and AD scores per sweep cell.
    Scatter,
    /// Validation error per training size and method.
    Validation,
    /// Zero fraction and row maxima of QP and posterior-mean matrices.
    Sparsity,
}

/// Inputs of `report`; which are required depends on the kind.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportInputs {
    pub draws: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub qp: Option<PathBuf>,
    pub sweep: Option<PathBuf>,
    pub regularization: Option<PathBuf>,
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| invalid(format!("this report needs {flag}")))
}

fn cell(v: Option<f64>) -> String {
    v.map(format_real).unwrap_or_default()
}

fn coefficients_table(inp: &ReportInputs, out: &Path) -> Result<()> {
    let draws = read_draws(need(&inp.draws, "--draws")?)?;
    let s = draws
        .layout()
        .stations()
        .ok_or_else(|| invalid("draws do not hold an OD matrix"))?;
    let truth = read_truth(inp.truth.as_deref())?;
    let qp: Option<QpSolution> = inp.qp.as_deref().map(read_json).transpose()?;
    for (what, n) in [("truth", truth.as_ref().map(OdMatrix::size)), ("qp", qp.as_ref().map(|q| q.a_hat.size()))] {
        if n.is_some_and(|n| n != s) {
            return Err(Error::Shape(format!("{what} size differs from the draws ({s} stations)")));
        }
    }
    let mean = posterior_mean_matrix(&draws)?;
    let mut w = schema_csv_writer(out, COEFFICIENTS_SCHEMA)?;
    w.write_record(["origin", "destination", "true", "qp", "posterior_mean", "hpd_lo", "hpd_hi"])?;
    for i in 0..s {
        for j in (0..s).filter(|&j| j != i) {
            let (lo, hi) = hpd_interval(&draws.pooled(i * s + j), 0.95)?;
            w.write_record([
                i.to_string(),
                j.to_string(),
                cell(truth.as_ref().map(|t| t.get(i, j))),
                cell(qp.as_ref().map(|q| q.a_hat.get(i, j))),
                format_real(mean.get(i, j)),
                format_real(lo),
                format_real(hi),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn mean_of(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn dispersion_table(inp: &ReportInputs, out: &Path) -> Result<()> {
    let sweep = read_sweep_csv(need(&inp.sweep, "--sweep")?)?;
    type Key = (&'static str, u32, u64, u64);
    let mut groups: BTreeMap<Key, (Vec<f64>, Vec<f64>, usize)> = BTreeMap::new();
    for c in &sweep.cells {
        let g = groups
            .entry((c.model.as_str(), c.window, c.eta.to_bits(), c.phi.to_bits()))
            .or_default();
        g.2 += 1;
        if let (Some(m), Some(h)) = (c.mse, c.mean_hpd) {
            g.0.push(m);
            g.1.push(h);
        }
    }
    let mut w = schema_csv_writer(out, DISPERSION_SCHEMA)?;
    w.write_record(["model", "window", "eta", "phi", "cells", "succeeded", "mse_mean", "hpd_mean"])?;
    for ((model, window, eta, phi), (mse, hpd, n)) in &groups {
        w.write_record([
            model.to_string(),
            window.to_string(),
            format_real(f64::from_bits(*eta)),
            format_real(f64::from_bits(*phi)),
            n.to_string(),
            mse.len().to_string(),
            cell(mean_of(mse)),
            cell(mean_of(hpd)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn scatter_table(inp: &ReportInputs, out: &Path) -> Result<()> {
    let sweep = read_sweep_csv(need(&inp.sweep, "--sweep")?)?;
    type Key = (usize, u32, u64, u64);
    let mut pairs: BTreeMap<Key, [Option<(Option<f64>, Option<f64>)>; 2]> = BTreeMap::new();
    for c in &sweep.cells {
        let slot = pairs
            .entry((c.replicate, c.window, c.eta.to_bits(), c.phi.to_bits()))
            .or_default();
        slot[(c.model == ModelKind::Ad) as usize] = Some((c.mse, c.mean_hpd));
    }
    let mut w = schema_csv_writer(out, SCATTER_SCHEMA)?;
    w.write_record(["replicate", "window", "eta", "phi", "mse_ib", "mse_ad", "hpd_ib", "hpd_ad"])?;
    for ((rep, window, eta, phi), [ib, ad]) in &pairs {
        let ib = ib.unwrap_or((None, None));
        let ad = ad.unwrap_or((None, None));
        w.write_record([
            rep.to_string(),
            window.to_string(),
            format_real(f64::from_bits(*eta)),
            format_real(f64::from_bits(*phi)),
            cell(ib.0),
            cell(ad.0),
            cell(ib.1),
            cell(ad.1),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn validation_table(inp: &ReportInputs, out: &Path) -> Result<()> {
    let rows = read_regularization_csv(need(&inp.regularization, "--regularization")?)?;
    let mut by_n: BTreeMap<usize, [Option<f64>; 4]> = BTreeMap::new();
    for r in &rows {
        let k = RegMethod::ALL.iter().position(|m| *m == r.method).unwrap_or(0);
        by_n.entry(r.observations).or_default()[k] = Some(r.validation_mse);
    }
    let mut w = schema_csv_writer(out, VALIDATION_SCHEMA)?;
    w.write_record(
        std::iter::once("observations").chain(RegMethod::ALL.iter().map(|m| m.as_str())),
    )?;
    for (n, vals) in &by_n {
        w.write_record(std::iter::once(n.to_string()).chain(vals.iter().map(|v| cell(*v))))?;
    }
    w.flush()?;
    Ok(())
}

fn sparsity_table(inp: &ReportInputs, out: &Path) -> Result<()> {
    let mut rows: Vec<(&str, OdMatrix)> = Vec::new();
    if let Some(q) = inp.qp.as_deref() {
        rows.push(("qp", read_json::<QpSolution>(q)?.a_hat));
    }
    if let Some(d) = inp.draws.as_deref() {
        rows.push(("posterior_mean", posterior_mean_matrix(&read_draws(d)?)?));
    }
    if rows.is_empty() {
        return Err(invalid("this report needs --qp and/or --draws"));
    }
    let mut w = schema_csv_writer(out, SPARSITY_SCHEMA)?;
    w.write_record(["estimate", "threshold", "fraction_zero", "row_max_min", "row_max_median", "row_max_max"])?;
    for (name, m) in rows {
        let sp = sparsity(&m);
        let mut rm = sp.row_max.clone();
        rm.sort_by(f64::total_cmp);
        let median = if rm.len() % 2 == 1 {
            rm[rm.len() / 2]
        } else {
            0.5 * (rm[rm.len() / 2 - 1] + rm[rm.len() / 2])
        };
        w.write_record([
            name.to_string(),
            format_real(SPARSITY_THRESHOLD),
            format_real(sp.fraction_zero),
            format_real(rm[0]),
            format_real(median),
            format_real(rm[rm.len() - 1]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `report`: one deterministic CSV table built from earlier artifacts.
pub fn report(kind: ReportKind, inp: &ReportInputs, out: &Path) -> Result<RunManifest> {
    #[derive(Serialize)]
    struct Echo<'a> {
        kind: ReportKind,
        inputs: &'a ReportInputs,
    }
    let given: Vec<&Path> = [&inp.draws, &inp.truth, &inp.qp, &inp.sweep, &inp.regularization]
        .into_iter()
        .flatten()
        .map(PathBuf::as_path)
        .collect();
    let mut rec = Recorder::new("report", &Echo { kind, inputs: inp }, None, &given)?;
    ensure_parent(out)?;
    let tmp = out.with_extension("partial");
    let built = match kind {
        ReportKind::Coefficients => coefficients_table(inp, &tmp),
        ReportKind::Dispersion => dispersion_table(inp, &tmp),
        ReportKind::Scatter => scatter_table(inp, &tmp),
        ReportKind::Validation => validation_table(inp, &tmp),
        ReportKind::Sparsity => sparsity_table(inp, &tmp),
    };
    if let Err(e) = built {
        let _ = fs::remove_file(&tmp);
        return Err(e);
    }
    fs::rename(&tmp, out)?;
    rec.output(out.to_path_buf());
    rec.finish(&sibling_manifest(out))
}

/// `presets --name`: writes the generator config of a named preset.
pub fn write_preset_config(name: &str, observations: usize, seed: u64, out: &Path) -> Result<RunManifest> {
    let preset: Preset = preset_experiments(name)?;
    let cfg = preset.generator_config(observations, seed)?;
    let mut rec = Recorder::new("presets", &preset, Some(seed), &[])?;
    let text = toml::to_string(&cfg).map_err(|e| invalid(e.to_string()))?;
    ensure_parent(out)?;
    fs::write(out, text)?;
    rec.output(out.to_path_buf());
    rec.finish(&sibling_manifest(out))
}

/// Listing printed by `presets` without `--name`.
pub fn preset_listing() -> String {
    let mut s = String::from("name      window_min  eta  phi\n");
    for p in PRESETS {
        s.push_str(&format!("{:<9} {:>10}  {:>3}  {}\n", p.name, p.window, p.eta, p.phi));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn impute_spec_parsing() {
        assert_eq!(parse_impute("radius=3,z=5").unwrap(), (3, 5.0));
        assert_eq!(parse_impute(" z=2.5 , radius=1").unwrap(), (1, 2.5));
        for bad in ["radius=0,z=5", "radius=3", "r=3,z=5", "radius=3,z=-1"] {
            assert!(parse_impute(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn exit_codes_are_distinct_by_class() {
        assert_eq!(exit_code(&Error::NotFound("x".into())), EXIT_NOT_FOUND);
        assert_eq!(exit_code(&Error::Sampler("x".into())), EXIT_SAMPLER);
        assert_eq!(exit_code(&Error::NonMonotone { index: 1 }), EXIT_VALIDATION);
        assert_eq!(
            exit_code(&Error::Schema {
                path: "x".into(),
                expected: "a".into(),
                found: "b".into()
            }),
            EXIT_SCHEMA
        );
    }

    #[test]
    fn sibling_manifest_names() {
        assert_eq!(sibling_manifest(Path::new("out/solution.json")), PathBuf::from("out/solution.manifest.json"));
        assert_eq!(sibling_manifest(Path::new("sweep.csv")), PathBuf::from("sweep.manifest.json"));
    }

    #[test]
    fn zeros_file_round_trip() {
        let z = StructuralZeros::from_pairs(4, &[(0, 3), (2, 1)]).unwrap();
        let f = ZerosFile::from_zeros(&z);
        assert_eq!(f.pairs, vec![[0, 3], [2, 1]]);
        assert_eq!(f.to_zeros().unwrap(), z);
    }
}
