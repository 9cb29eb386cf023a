//! Argument parsing and dispatch for the `odest` binary.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::qp::QpOptions;
use crate::runner::{self, FitOptions, PreprocessOptions, ReportInputs, ReportKind, SensitivityOptions};
use crate::sampler::SamplerConfig;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  other failure (I/O, serialization)
  2  usage error
  3  input file not found
  4  validation failure (bad data, config or arguments)
  5  sampler failure
  6  schema-version mismatch

On failure a JSON error record is printed to stderr.";

#[derive(Debug, Parser)]
#[command(name = "odest", version, about = "Bayesian OD-matrix estimation from entry/exit counts", after_help = EXIT_CODES)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate network-A counts and OD matrix.
    GenerateA {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Simulate binned network-B counts on a timetable graph.
    GenerateB {
        #[arg(long)]
        config: PathBuf,
        /// Graph JSON; the bundled 20-station graph when omitted.
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Up-sample cumulative counts, optionally repairing gaps and balancing.
    Preprocess {
        /// Cumulative entry counts with a `time` column in minutes.
        #[arg(long = "in")]
        input: PathBuf,
        /// Target interval in minutes.
        #[arg(long)]
        interval: u64,
        /// Cumulative exit counts on the same time grid.
        #[arg(long, requires = "out_exits")]
        exits: Option<PathBuf>,
        #[arg(long, requires = "exits")]
        balance: bool,
        /// Gap and outlier repair, e.g. `radius=3,z=5`.
        #[arg(long)]
        impute: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, requires = "exits")]
        out_exits: Option<PathBuf>,
    },
    /// Fit the instantaneous-balance model.
    FitIb {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
        #[arg(long)]
        no_regularization: bool,
        #[command(flatten)]
        common: FitArgs,
    },
    /// Fit the average-delay model.
    FitAd {
        /// Directory holding Xb.csv, Yb.csv and window.json.
        #[arg(long)]
        binned: PathBuf,
        #[arg(long)]
        delays: PathBuf,
        #[command(flatten)]
        common: FitArgs,
    },
    /// Constrained least-squares point estimate.
    FitQp {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
        #[arg(long)]
        zeros: Option<PathBuf>,
        #[arg(long)]
        no_regularization: bool,
        #[arg(long, default_value_t = QpOptions::default().tolerance)]
        tolerance: f64,
        #[arg(long, default_value_t = QpOptions::default().max_iter)]
        max_iter: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convergence and accuracy diagnostics of stored draws.
    Diagnose {
        #[arg(long)]
        draws: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// QP solution JSON.
        #[arg(long)]
        qp: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the network-B factorial sweep or the regularization study.
    Sweep {
        /// Sweep grid TOML.
        #[arg(long, required_unless_present = "regularization", conflicts_with = "regularization")]
        grid: Option<PathBuf>,
        /// Regularization study TOML.
        #[arg(long)]
        regularization: Option<PathBuf>,
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Linear metamodel and Sobol indices from a sweep.
    Sensitivity {
        #[arg(long)]
        sweep: PathBuf,
        /// `mse` or `hpd`.
        #[arg(long, default_value = "mse")]
        response: String,
        #[arg(long, default_value_t = 10_000)]
        sobol_samples: usize,
        #[arg(long, default_value_t = 200)]
        bootstrap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a CSV table for external plotting.
    Report {
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        draws: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        qp: Option<PathBuf>,
        #[arg(long)]
        sweep: Option<PathBuf>,
        #[arg(long)]
        regularization: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// List named experiment presets or write one as a generate-b config.
    Presets {
        #[arg(long, requires = "out")]
        name: Option<String>,
        #[arg(long, default_value_t = 100)]
        observations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, requires = "name")]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Coefficients,
    Dispersion,
    Scatter,
    Validation,
    Sparsity,
}

impl From<KindArg> for ReportKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Coefficients => ReportKind::Coefficients,
            KindArg::Dispersion => ReportKind::Dispersion,
            KindArg::Scatter => ReportKind::Scatter,
            KindArg::Validation => ReportKind::Validation,
            KindArg::Sparsity => ReportKind::Sparsity,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Structural zeros JSON.
    #[arg(long)]
    zeros: Option<PathBuf>,
    /// True OD matrix (CSV or JSON) for accuracy diagnostics.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Sampler TOML; flags below override it.
    #[arg(long)]
    sampler: Option<PathBuf>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    max_tree_depth: Option<u32>,
    #[arg(long)]
    target_accept: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    concentration: Option<f64>,
    /// Stride for stored draws [default: ceil(total/1000)].
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

impl FitArgs {
    fn options(&self) -> Result<FitOptions> {
        let base = runner::load_sampler(self.sampler.as_deref())?;
        let sampler = SamplerConfig {
            chains: self.chains.unwrap_or(base.chains),
            warmup: self.warmup.unwrap_or(base.warmup),
            draws: self.draws.unwrap_or(base.draws),
            max_tree_depth: self.max_tree_depth.unwrap_or(base.max_tree_depth),
            target_accept: self.target_accept.unwrap_or(base.target_accept),
            seed: self.seed.unwrap_or(base.seed),
        };
        if self.thin == Some(0) {
            return Err(Error::InvalidInput("--thin must be at least 1".into()));
        }
        Ok(FitOptions {
            sampler,
            concentration: self.concentration,
            thin: self.thin,
        })
    }
}

fn warn_single_chain(opts: &FitOptions) {
    if opts.sampler.chains == 1 {
        eprintln!("warning: a single chain leaves R-hat undefined; it is omitted from the report");
    }
}

/// Runs one parsed command. Human-readable summaries go to stdout.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateA { config, out_dir, seed } => {
            runner::generate_a(&config, &out_dir, seed)?;
            println!("wrote {}", out_dir.display());
        }
        Command::GenerateB {
            config,
            graph,
            out_dir,
            seed,
        } => {
            runner::generate_b(&config, graph.as_deref(), &out_dir, seed)?;
            println!("wrote {}", out_dir.display());
        }
        Command::Preprocess {
            input,
            interval,
            exits,
            balance,
            impute,
            out,
            out_exits,
        } => {
            let opts = PreprocessOptions {
                interval,
                impute: impute.as_deref().map(runner::parse_impute).transpose()?,
                balance,
            };
            let m = runner::preprocess(&input, exits.as_deref(), &opts, &out, out_exits.as_deref())?;
            for w in &m.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::FitIb {
            x,
            y,
            no_regularization,
            common,
        } => {
            let opts = common.options()?;
            warn_single_chain(&opts);
            let (_, r) = runner::fit_ib(
                &x,
                &y,
                common.zeros.as_deref(),
                common.truth.as_deref(),
                !no_regularization,
                &opts,
                &common.out_dir,
            )?;
            print_fit_summary(&r);
        }
        Command::FitAd { binned, delays, common } => {
            let opts = common.options()?;
            warn_single_chain(&opts);
            let (_, r) = runner::fit_ad(
                &binned,
                &delays,
                common.zeros.as_deref(),
                common.truth.as_deref(),
                &opts,
                &common.out_dir,
            )?;
            print_fit_summary(&r);
        }
        Command::FitQp {
            x,
            y,
            zeros,
            no_regularization,
            tolerance,
            max_iter,
            out,
        } => {
            let opts = QpOptions {
                tolerance,
                max_iter,
                ..QpOptions::default()
            };
            let (_, sol) = runner::fit_qp(&x, &y, zeros.as_deref(), !no_regularization, &opts, &out)?;
            println!(
                "objective {:.6e} after {} iterations (converged: {})",
                sol.objective, sol.iterations, sol.converged
            );
        }
        Command::Diagnose { draws, truth, qp, out } => {
            let (_, r) = runner::diagnose_cmd(&draws, truth.as_deref(), qp.as_deref(), &out)?;
            print_fit_summary(&r);
        }
        Command::Sweep {
            grid,
            regularization,
            graph,
            seed,
            out,
        } => match (grid, regularization) {
            (Some(g), _) => {
                let (_, res) = runner::sweep(&g, graph.as_deref(), &out, seed)?;
                println!("{} cells, {} failed", res.cells.len(), res.failures());
            }
            (None, Some(r)) => {
                runner::regularization_sweep(&r, &out, seed)?;
                println!("wrote {}", out.display());
            }
            (None, None) => unreachable!("clap requires one of --grid and --regularization"),
        },
        Command::Sensitivity {
            sweep,
            response,
            sobol_samples,
            bootstrap,
            seed,
            out,
        } => {
            let opts = SensitivityOptions {
                response,
                sobol_samples,
                bootstrap,
                seed,
            };
            let (_, rep) = runner::sensitivity(&sweep, &opts, &out)?;
            for m in &rep.models {
                println!(
                    "{}: beta = {:?}, R² = {:.3}",
                    m.model.as_str(),
                    m.fit.beta,
                    m.fit.r_squared
                );
            }
        }
        Command::Report {
            kind,
            draws,
            truth,
            qp,
            sweep,
            regularization,
            out,
        } => {
            let inputs = ReportInputs {
                draws,
                truth,
                qp,
                sweep,
                regularization,
            };
            runner::report(kind.into(), &inputs, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Presets {
            name,
            observations,
            seed,
            out,
        } => match (name, out) {
            (Some(n), Some(o)) => {
                runner::write_preset_config(&n, observations, seed, &o)?;
                println!("wrote {}", o.display());
            }
            _ => print!("{}", runner::preset_listing()),
        },
    }
    Ok(())
}

fn print_fit_summary(r: &crate::diagnostics::DiagnosticsReport) {
    let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "chains {} x {} draws, divergences {}, R-hat max {}, ESS ratio min {}, MSE {}, mean HPD {}",
        r.chains,
        r.draws_per_chain,
        r.divergences,
        opt(r.r_hat_max),
        opt(r.ess_ratio_min),
        opt(r.mse_mcmc),
        opt(r.mean_hpd)
    );
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { runner::EXIT_USAGE } else { runner::EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => runner::EXIT_OK,
        Err(e) => {
            let code = runner::exit_code(&e);
            let record = serde_json::json!({
                "error": runner::error_kind(&e),
                "message": e.to_string(),
                "exit_code": code,
            });
            eprintln!("{record}");
            code
        }
    }
}
