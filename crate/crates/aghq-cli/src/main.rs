//! Command-line front end for the quadrature inference library.
//!
//! Exit codes: 0 ok, 2 optimiser failure, 3 non-positive-definite curvature,
//! 4 missing artifact, 5 configuration error, 1 anything else.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use aghq::Error;
use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "aghq", version, about = "Adaptive Gauss-Hermite quadrature inference")]
struct Cli {
    /// Worker pool size for parallel sections; 1 gives the reproducible
    /// baseline and is the default.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// JSON configuration file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    /// JSON object with model-specific settings.
    #[arg(long)]
    model_config: Option<String>,
    /// One of eb, aghq, pca-aghq, mcmc.
    #[arg(long)]
    method: Option<String>,
    /// Nodes per quadrature dimension.
    #[arg(long)]
    k: Option<usize>,
    /// Retained rank for pca-aghq (mutually exclusive with --pca-threshold).
    #[arg(long)]
    s: Option<usize>,
    /// Scree threshold for pca-aghq (mutually exclusive with --s).
    #[arg(long)]
    pca_threshold: Option<f64>,
    /// cholesky or spectral.
    #[arg(long)]
    decomposition: Option<String>,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    n_chains: Option<usize>,
    #[arg(long)]
    n_iter: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Cap on model log-joint evaluations for one fit.
    #[arg(long)]
    max_log_joint_calls: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Emit an unadapted Gauss-Hermite product grid as CSV.
    Nodes {
        /// Comma-separated per-dimension node counts, e.g. 3,3.
        #[arg(long)]
        levels: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a model: optimise, adapt, and normalise; write artifacts.
    Fit(ConfigArgs),
    /// Draw from a fitted posterior's mixture representation.
    Sample {
        /// Directory holding fit artifacts.
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the adaptive random-walk Metropolis reference sampler.
    Mcmc(ConfigArgs),
    /// Compare two persisted sample sets.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Cap on the subsample used for the kernel distance.
        #[arg(long, default_value_t = 2000)]
        mmd_samples: usize,
        /// Extra exceedance checks, repeatable, as column=threshold.
        #[arg(long = "exceedance")]
        exceedance: Vec<String>,
    },
    /// Emit scree and node-coverage diagnostics for a fit.
    Diagnose {
        #[arg(long)]
        fit: PathBuf,
        /// Reference samples CSV (for example from the mcmc command).
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a model's analytic derivatives against finite differences.
    Validate {
        #[arg(long)]
        model: String,
        #[arg(long)]
        model_config: Option<String>,
    },
}

fn overrides_from_args(args: &ConfigArgs) -> aghq::Result<RunConfig> {
    let model_config = match &args.model_config {
        Some(text) => serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("bad --model-config: {e}")))?,
        None => serde_json::Value::Null,
    };
    Ok(RunConfig {
        model: args.model.clone(),
        model_config,
        method: args.method.clone(),
        k: args.k,
        s: args.s,
        pca_threshold: args.pca_threshold,
        decomposition: args.decomposition.clone(),
        n_samples: args.n_samples,
        n_chains: args.n_chains,
        n_iter: args.n_iter,
        seed: args.seed,
        output: args.out.as_ref().map(|p| p.display().to_string()),
        threads: None,
        max_log_joint_calls: args.max_log_joint_calls,
    })
}

fn effective_config(args: &ConfigArgs, threads: usize) -> aghq::Result<config::EffectiveConfig> {
    let base = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    let mut merged = base.merge(overrides_from_args(args)?);
    merged.threads = Some(threads);
    merged.validate()
}

fn parse_exceedance(specs: &[String]) -> aghq::Result<Vec<(String, f64)>> {
    specs
        .iter()
        .map(|spec| {
            let (column, threshold) = spec
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad --exceedance {spec:?}, use col=thr")))?;
            let threshold: f64 = threshold
                .parse()
                .map_err(|_| Error::Config(format!("bad threshold in --exceedance {spec:?}")))?;
            Ok((column.to_string(), threshold))
        })
        .collect()
}

fn run(cli: Cli) -> aghq::Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    match cli.command {
        Command::Nodes { levels, out } => commands::cmd_nodes(&levels, out.as_deref()),
        Command::Fit(args) => {
            let config = effective_config(&args, cli.threads)?;
            let out_dir = commands::resolve_out_dir(&config, args.out.clone())?;
            commands::cmd_fit(&config, &out_dir)
        }
        Command::Sample { fit, n, seed, out } => {
            commands::cmd_sample(&fit, n, seed, out.as_deref())
        }
        Command::Mcmc(args) => {
            let config = effective_config(&args, cli.threads)?;
            let out_dir = commands::resolve_out_dir(&config, args.out.clone())?;
            commands::cmd_mcmc(&config, &out_dir)
        }
        Command::Compare { a, b, report, mmd_samples, exceedance } => {
            let extra = parse_exceedance(&exceedance)?;
            commands::cmd_compare(&a, &b, &report, mmd_samples, &extra)
        }
        Command::Diagnose { fit, reference, out } => {
            commands::cmd_diagnose(&fit, &reference, out.as_deref())
        }
        Command::Validate { model, model_config } => {
            let value = match model_config {
                Some(text) => serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("bad --model-config: {e}")))?,
                None => serde_json::Value::Null,
            };
            if commands::cmd_validate(&model, &value)? {
                Ok(())
            } else {
                Err(Error::InvalidArgument("derivative validation failed".into()))
            }
        }
    }
}

fn exit_code_for(error: &Error) -> u8 {
    match error {
        Error::OuterNotConverged { .. } | Error::BudgetExhausted { .. } => 2,
        Error::NotPositiveDefinite { .. } => 3,
        Error::MissingArtifact(_) => 4,
        Error::Config(_) => 5,
        Error::NodeFit { source, .. } => exit_code_for(source),
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(exit_code_for(&error))
        }
    }
}
