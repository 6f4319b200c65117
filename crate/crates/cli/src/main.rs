//! `cocluster`: fit, sparsify, rank indicators, predict and evaluate from the
//! command line. Every subcommand writes into a run directory that records
//! the resolved settings and the content hashes of its inputs.

mod commands;
mod config;
mod io;
mod rundir;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "cocluster", version, about = "Co-clustering of sparse species count matrices")]
struct Cli {
    /// Settings file with `key = value` lines; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for every parallel section.
    #[arg(long, global = true, env = "COCLUSTER_THREADS")]
    threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

/// Model and run settings shared by the subcommands. Anything not listed
/// here can be given with `--set key=value`.
#[derive(Args, Debug, Default, Clone)]
struct Settings {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tau2: Option<f64>,
    #[arg(long)]
    sigma2_beta: Option<f64>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    min_prevalence: Option<u64>,
    /// Run every parallel section sequentially.
    #[arg(long)]
    sequential: bool,
    /// Any other setting, e.g. `--set a0=2 --set inner_iterations=400`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// MAP initialization followed by the Gibbs sampler.
    Fit {
        #[arg(long)]
        counts: PathBuf,
        #[arg(long)]
        covariates: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Stop after the MAP estimate.
        #[arg(long)]
        map_only: bool,
        #[command(flatten)]
        settings: Settings,
    },
    /// Sparse species loadings from posterior summaries.
    Decouple {
        #[arg(long)]
        summaries: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `auto` or a comma-separated decreasing list of penalties.
        #[arg(long, default_value = "auto")]
        lambda_grid: String,
        /// Sample-to-site table for the cluster consistency summary.
        #[arg(long)]
        sites: Option<PathBuf>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Rank model-based indicator species.
    Indicators {
        #[arg(long)]
        summaries: PathBuf,
        #[arg(long)]
        attributes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// all, named, charismatic or large.
        #[arg(long, default_value = "all")]
        filter: String,
        #[arg(long, default_value_t = 15)]
        top: usize,
        #[command(flatten)]
        settings: Settings,
    },
    /// Occurrence probabilities for new samples.
    Predict {
        #[arg(long)]
        summaries: PathBuf,
        /// Covariates of the new samples.
        #[arg(long)]
        covariates: PathBuf,
        /// Indicator species: a table with a `species_id` column (e.g. the
        /// output of `indicators`).
        #[arg(long)]
        indicators: Option<PathBuf>,
        /// Observed counts of the new samples as `sample_id,species_id,count`.
        #[arg(long)]
        indicator_counts: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        settings: Settings,
    },
    /// Cross-validated AUC, WAIC and posterior predictive checks.
    Evaluate {
        #[arg(long)]
        counts: PathBuf,
        #[arg(long)]
        covariates: Option<PathBuf>,
        #[arg(long)]
        sites: Option<PathBuf>,
        #[arg(long)]
        attributes: Option<PathBuf>,
        /// Reuse a full-data fit for WAIC and the predictive check.
        #[arg(long)]
        summaries: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        folds: Option<usize>,
        /// Indicators per factor.
        #[arg(long)]
        indicators: Option<usize>,
        /// Comma-separated candidate filters.
        #[arg(long)]
        strategies: Option<String>,
        /// Skip cross-validation; only WAIC and the predictive check.
        #[arg(long)]
        no_cv: bool,
        #[command(flatten)]
        settings: Settings,
    },
    /// Render the CSV outputs of a run directory to SVG figures.
    Report {
        #[arg(long)]
        run: PathBuf,
        /// Defaults to `<run>/figures`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a dataset with planted structure.
    Simulate {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 500)]
        p: usize,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 20)]
        sites: usize,
        #[arg(long, default_value_t = 0.7)]
        single_factor_fraction: f64,
        #[arg(long, default_value_t = 1.0)]
        mean_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Errors that exit with status 2: bad usage, missing inputs.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn resolve(file: Option<&PathBuf>, s: &Settings) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = file {
        io::require(path)?;
        cfg.apply_file(path)?;
    }
    let pairs: [(&str, Option<String>); 9] = [
        ("k", s.k.map(|v| v.to_string())),
        ("iterations", s.iterations.map(|v| v.to_string())),
        ("burn_in", s.burn_in.map(|v| v.to_string())),
        ("thin", s.thin.map(|v| v.to_string())),
        ("seed", s.seed.map(|v| v.to_string())),
        ("tau2", s.tau2.map(|v| v.to_string())),
        ("sigma2_beta", s.sigma2_beta.map(|v| v.to_string())),
        ("replicates", s.replicates.map(|v| v.to_string())),
        ("min_prevalence", s.min_prevalence.map(|v| v.to_string())),
    ];
    for (k, v) in pairs {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    for kv in &s.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| UsageError(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k, v).map_err(|e| UsageError(format!("{e:#}")))?;
    }
    if s.sequential {
        cfg.sequential = true;
    }
    cfg.validate().map_err(|e| UsageError(format!("{e:#}")))?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(UsageError("--threads must be at least 1".into()).into());
        }
        #[cfg(feature = "parallel")]
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    let file = cli.config.as_ref();
    match cli.command {
        Command::Fit {
            counts,
            covariates,
            out,
            map_only,
            settings,
        } => {
            let cfg = resolve(file, &settings)?;
            commands::fit(&cfg, &counts, covariates.as_deref(), &out, map_only)
        }
        Command::Decouple {
            summaries,
            out,
            lambda_grid,
            sites,
            settings,
        } => {
            let cfg = resolve(file, &settings)?;
            commands::decouple(&cfg, &summaries, &out, &lambda_grid, sites.as_deref())
        }
        Command::Indicators {
            summaries,
            attributes,
            out,
            filter,
            top,
            settings,
        } => {
            let cfg = resolve(file, &settings)?;
            commands::indicators(&cfg, &summaries, &attributes, &out, &filter, top)
        }
        Command::Predict {
            summaries,
            covariates,
            indicators,
            indicator_counts,
            out,
            settings,
        } => {
            let cfg = resolve(file, &settings)?;
            commands::predict(
                &cfg,
                &summaries,
                &covariates,
                indicators.as_deref(),
                indicator_counts.as_deref(),
                &out,
            )
        }
        Command::Evaluate {
            counts,
            covariates,
            sites,
            attributes,
            summaries,
            out,
            folds,
            indicators,
            strategies,
            no_cv,
            settings,
        } => {
            let mut s = settings;
            if let Some(f) = folds {
                s.set.push(format!("folds={f}"));
            }
            if let Some(m) = indicators {
                s.set.push(format!("indicators={m}"));
            }
            if let Some(st) = strategies {
                s.set.push(format!("strategies={st}"));
            }
            let cfg = resolve(file, &s)?;
            commands::evaluate(
                &cfg,
                commands::EvalInputs {
                    counts: &counts,
                    covariates: covariates.as_deref(),
                    sites: sites.as_deref(),
                    attributes: attributes.as_deref(),
                    summaries: summaries.as_deref(),
                },
                &out,
                !no_cv,
            )
        }
        Command::Report { run, out } => {
            let out = out.unwrap_or_else(|| run.join("figures"));
            commands::report(&run, &out)
        }
        Command::Simulate {
            n,
            p,
            k,
            d,
            sites,
            single_factor_fraction,
            mean_rate,
            seed,
            out,
        } => commands::simulate(
            &cocluster_core::simulate::SimConfig {
                n,
                p,
                k,
                d,
                sites,
                single_factor_fraction,
                mean_rate,
                seed,
                ..Default::default()
            },
            &out,
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
