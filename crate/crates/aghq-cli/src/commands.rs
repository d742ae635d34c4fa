//! Implementations of the subcommands. Every output file uses dot decimals,
//! 17 significant digits, and LF line endings, so reruns with the same
//! configuration and seed are byte-identical.

use std::path::{Path, PathBuf};

use aghq::diagnostics::{self, CoverageScore};
use aghq::ghq::{product_grid_with_budget, GridSpec};
use aghq::io::{fmt_f64, read_provenance, read_sample_csv, write_provenance, write_sample_csv};
use aghq::laplace::log_laplace;
use aghq::mcmc;
use aghq::model::EvaluationBudget;
use aghq::models::registry::build_model;
use aghq::pipeline::{run_fit, FitArtifacts, FitOptions};
use aghq::posterior::{
    GaussianComponent, MethodTag, MixturePosterior, Provenance, SampleSet,
};
use aghq::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{point_budget_from_env, EffectiveConfig, MethodKind};

/// `nodes --levels k1,k2,...`: unadapted product grid as CSV.
pub fn cmd_nodes(levels: &str, out: Option<&Path>) -> Result<()> {
    let levels: Vec<usize> = levels
        .split(',')
        .map(|cell| {
            cell.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad level {cell:?} in --levels")))
        })
        .collect::<Result<_>>()?;
    let spec = GridSpec::new(levels)?;
    let grid = product_grid_with_budget(&spec, point_budget_from_env()?)?;

    let mut text = String::new();
    for j in 0..grid.dim() {
        text.push_str(&format!("dim{},", j + 1));
    }
    text.push_str("weight\n");
    for row in 0..grid.len() {
        for j in 0..grid.dim() {
            text.push_str(&fmt_f64(grid.points()[(row, j)]));
            text.push(',');
        }
        text.push_str(&fmt_f64(grid.weights()[row]));
        text.push('\n');
    }
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModeSummary {
    pub method: String,
    pub k: usize,
    pub s: Option<usize>,
    pub theta_hat: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub variance_explained: f64,
    pub log_normconst: f64,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn scree_csv(eigenvalues: &[f64]) -> String {
    let total: f64 = eigenvalues.iter().sum();
    let mut text = String::from("rank,eigenvalue,cumulative_proportion\n");
    let mut acc = 0.0;
    for (rank, &lambda) in eigenvalues.iter().enumerate() {
        acc += lambda;
        text.push_str(&format!("{},{},{}\n", rank + 1, fmt_f64(lambda), fmt_f64(acc / total)));
    }
    text
}

fn nodes_csv(hyper_names: &[String], theta_points: &DMatrix<f64>, weights: &[f64]) -> String {
    let mut text = String::new();
    text.push_str(&hyper_names.join(","));
    text.push_str(",lambda\n");
    for row in 0..theta_points.nrows() {
        for j in 0..theta_points.ncols() {
            text.push_str(&fmt_f64(theta_points[(row, j)]));
            text.push(',');
        }
        text.push_str(&fmt_f64(weights[row]));
        text.push('\n');
    }
    text
}

fn config_digest(lock_text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(lock_text.as_bytes());
    format!("{:x}", hasher.finalize())
}

/// `fit`: outer optimisation, curvature, grid, normalisation; artifacts on
/// disk under the output directory.
pub fn cmd_fit(config: &EffectiveConfig, out_dir: &Path) -> Result<()> {
    let method = match &config.kind {
        MethodKind::Quadrature(method) => *method,
        MethodKind::Mcmc => {
            return Err(Error::Config("use the mcmc command for method = mcmc".into()))
        }
    };
    let model = build_model(config.model_name(), &config.locked.model_config)?;
    let budget = match config.locked.max_log_joint_calls {
        Some(max) => Some(EvaluationBudget::new(max, None)?),
        None => None,
    };
    let options = FitOptions {
        decomposition: config.decomposition,
        point_budget: point_budget_from_env()?,
        budget,
    };
    let artifacts = run_fit(model.as_ref(), method, &options)?;

    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.lock.json"), config.lock_text())?;
    write_json(&out_dir.join("mode.json"), &mode_summary(&artifacts))?;
    std::fs::write(out_dir.join("scree.csv"), scree_csv(&artifacts.mode.eigenvalues))?;
    std::fs::write(
        out_dir.join("nodes.csv"),
        nodes_csv(
            model.space().hyper_names(),
            &artifacts.quad.grid.theta_points,
            &artifacts.quad.node_weights,
        ),
    )?;
    eprintln!(
        "fit: {} nodes, log normalising constant {:.6}, {} log-joint calls",
        artifacts.quad.grid.len(),
        artifacts.quad.log_normconst,
        artifacts.log_joint_calls
    );
    Ok(())
}

fn mode_summary(artifacts: &FitArtifacts) -> ModeSummary {
    let m = artifacts.mode.dim();
    ModeSummary {
        method: artifacts.method_tag.to_string(),
        k: artifacts.k,
        s: artifacts.selection.as_ref().map(|sel| sel.s),
        theta_hat: artifacts.mode.theta_hat.iter().copied().collect(),
        eigenvalues: artifacts.mode.eigenvalues.clone(),
        variance_explained: artifacts
            .selection
            .as_ref()
            .map(|sel| sel.variance_explained)
            .unwrap_or_else(|| artifacts.mode.variance_explained(m)),
        log_normconst: artifacts.quad.log_normconst,
    }
}

fn read_nodes_csv(path: &Path, hyper_dim: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let (names, table) = read_sample_csv(path)?;
    if names.len() != hyper_dim + 1 || names.last().map(String::as_str) != Some("lambda") {
        return Err(Error::Parse(format!(
            "{}: expected {} hyperparameter columns plus lambda",
            path.display(),
            hyper_dim
        )));
    }
    let theta = table.columns(0, hyper_dim).clone_owned();
    let lambda: Vec<f64> = table.column(hyper_dim).iter().copied().collect();
    Ok((theta, lambda))
}

/// `sample`: rebuild the mixture from fit artifacts and draw from it.
pub fn cmd_sample(fit_dir: &Path, n: usize, seed: u64, out_dir: Option<&Path>) -> Result<()> {
    let lock_path = fit_dir.join("config.lock.json");
    if !lock_path.exists() {
        return Err(Error::MissingArtifact(lock_path));
    }
    let lock_text = std::fs::read_to_string(&lock_path)?;
    let config: crate::config::RunConfig = serde_json::from_str(&lock_text)
        .map_err(|e| Error::Config(format!("{}: {e}", lock_path.display())))?;
    let config = config.validate()?;

    let mode_path = fit_dir.join("mode.json");
    if !mode_path.exists() {
        return Err(Error::MissingArtifact(mode_path));
    }
    let mode: ModeSummary = serde_json::from_str(&std::fs::read_to_string(&mode_path)?)?;

    let model = build_model(config.model_name(), &config.locked.model_config)?;
    let space = model.space();
    let (theta_points, lambda) = read_nodes_csv(&fit_dir.join("nodes.csv"), space.hyper_dim())?;

    // Refit the conditional Gaussians at the stored nodes, warm-started from
    // the mode, exactly as normalisation did.
    let center = DVector::from_vec(mode.theta_hat.clone());
    let warm = if space.latent_dim() > 0 {
        Some(log_laplace(model.as_ref(), &center, None)?.x_hat)
    } else {
        None
    };
    let mut components = Vec::with_capacity(theta_points.nrows());
    for node in 0..theta_points.nrows() {
        let theta = theta_points.row(node).transpose();
        let fit = log_laplace(model.as_ref(), &theta, warm.as_ref())
            .map_err(|e| Error::NodeFit { node, source: Box::new(e) })?;
        components.push(GaussianComponent {
            theta: fit.theta,
            mean: fit.x_hat,
            precision_factor: fit.hessian_factor,
        });
    }
    let tag = match mode.method.as_str() {
        "EB" => MethodTag::Eb,
        "PCA-AGHQ" => MethodTag::PcaAghq,
        _ => MethodTag::AghqDense,
    };
    let mixture = MixturePosterior { components, mixture_weights: lambda, method_tag: tag };

    let provenance = Provenance {
        method: mode.method.clone(),
        model: config.model_name().to_string(),
        config_digest: config_digest(&lock_text),
        k: Some(mode.k),
        s: mode.s,
        seed,
        log_normconst: Some(mode.log_normconst),
        output_names: model.output_names(),
    };
    let set = aghq::posterior::sample(&mixture, model.as_ref(), n, seed, provenance)?;

    let out_dir = out_dir.unwrap_or(fit_dir);
    std::fs::create_dir_all(out_dir)?;
    write_sample_csv(&out_dir.join("samples.csv"), &set)?;
    write_provenance(&out_dir.join("provenance.json"), &set.provenance)?;
    eprintln!("sample: {n} draws over {} columns", set.names.len());
    Ok(())
}

/// `mcmc`: the reference sampler with convergence diagnostics.
pub fn cmd_mcmc(config: &EffectiveConfig, out_dir: &Path) -> Result<()> {
    if !matches!(config.kind, MethodKind::Mcmc) {
        return Err(Error::Config("the mcmc command needs method = mcmc".into()));
    }
    let model = build_model(config.model_name(), &config.locked.model_config)?;
    let n_chains = config.locked.n_chains.expect("validated");
    let n_iter = config.locked.n_iter.expect("validated");
    let chains = mcmc::run_chains(model.as_ref(), n_chains, n_iter, config.seed())?;
    let report = mcmc::convergence_report(&chains);

    // Pooled draws with derived outputs appended per draw.
    let pooled = chains.pooled();
    let space = model.space();
    let latent_dim = space.latent_dim();
    let output_names = model.output_names();
    let mut names = space.joint_names();
    names.extend(output_names.iter().cloned());
    let mut draws = DMatrix::zeros(pooled.nrows(), names.len());
    for row in 0..pooled.nrows() {
        for col in 0..pooled.ncols() {
            draws[(row, col)] = pooled[(row, col)];
        }
        if !output_names.is_empty() {
            let x = DVector::from_fn(latent_dim, |i, _| pooled[(row, i)]);
            let theta = DVector::from_fn(pooled.ncols() - latent_dim, |i, _| {
                pooled[(row, latent_dim + i)]
            });
            for (j, value) in model.output_map(&x, &theta).into_iter().enumerate() {
                draws[(row, pooled.ncols() + j)] = value;
            }
        }
    }

    let lock_text = config.lock_text();
    let provenance = Provenance {
        method: "mcmc".into(),
        model: config.model_name().to_string(),
        config_digest: config_digest(&lock_text),
        k: None,
        s: None,
        seed: config.seed(),
        log_normconst: None,
        output_names,
    };
    let set = SampleSet { names, draws, seed: config.seed(), provenance };

    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.lock.json"), lock_text)?;
    write_sample_csv(&out_dir.join("samples.csv"), &set)?;
    write_provenance(&out_dir.join("provenance.json"), &set.provenance)?;
    write_json(&out_dir.join("convergence.json"), &report)?;
    let rates: Vec<String> =
        chains.acceptance_rates.iter().map(|r| format!("{r:.3}")).collect();
    eprintln!(
        "mcmc: {} chains x {} iterations, min ESS {:.0}, max Rhat {}, acceptance [{}]",
        n_chains,
        n_iter,
        report.ess_min,
        report
            .rhat_max
            .map(|r| format!("{r:.4}"))
            .unwrap_or_else(|| "undefined".into()),
        rates.join(", ")
    );
    Ok(())
}

fn sibling_provenance_method(samples_path: &Path) -> String {
    samples_path
        .parent()
        .map(|dir| dir.join("provenance.json"))
        .and_then(|p| read_provenance(&p).ok())
        .map(|p| p.method)
        .unwrap_or_else(|| "unknown".into())
}

/// `compare`: distance metrics between two persisted sample sets.
pub fn cmd_compare(
    a_path: &Path,
    b_path: &Path,
    report_path: &Path,
    mmd_samples: usize,
    exceedance: &[(String, f64)],
) -> Result<()> {
    let (names_a, draws_a) = read_sample_csv(a_path)?;
    let (names_b, draws_b) = read_sample_csv(b_path)?;

    // Shared columns, in the first set's order.
    let shared: Vec<(usize, usize)> = names_a
        .iter()
        .enumerate()
        .filter_map(|(ia, name)| names_b.iter().position(|nb| nb == name).map(|ib| (ia, ib)))
        .collect();
    if shared.is_empty() {
        return Err(Error::Config("the two sample sets share no columns".into()));
    }
    let names: Vec<String> = shared.iter().map(|&(ia, _)| names_a[ia].clone()).collect();
    let mut a = DMatrix::zeros(draws_a.nrows(), shared.len());
    let mut b = DMatrix::zeros(draws_b.nrows(), shared.len());
    for (col, &(ia, ib)) in shared.iter().enumerate() {
        a.set_column(col, &draws_a.column(ia));
        b.set_column(col, &draws_b.column(ib));
    }

    let report = diagnostics::compare_samples(
        &names,
        &a,
        &b,
        &sibling_provenance_method(a_path),
        &sibling_provenance_method(b_path),
        mmd_samples,
        exceedance,
    )?;
    write_json(report_path, &report)?;
    eprintln!(
        "compare: {} columns, mmd {:.6}, mean-RMSE {:.6}",
        names.len(),
        report.mmd,
        report.rmse_mean
    );
    Ok(())
}

/// `diagnose`: scree plot data and per-hyperparameter node coverage against
/// a reference sample.
pub fn cmd_diagnose(fit_dir: &Path, reference: &Path, out_dir: Option<&Path>) -> Result<()> {
    let mode_path = fit_dir.join("mode.json");
    if !mode_path.exists() {
        return Err(Error::MissingArtifact(mode_path));
    }
    let mode: ModeSummary = serde_json::from_str(&std::fs::read_to_string(&mode_path)?)?;
    let lock_path = fit_dir.join("config.lock.json");
    let config: crate::config::RunConfig = serde_json::from_str(
        &std::fs::read_to_string(&lock_path)
            .map_err(|_| Error::MissingArtifact(lock_path.clone()))?,
    )
    .map_err(|e| Error::Config(format!("{}: {e}", lock_path.display())))?;
    let config = config.validate()?;
    let model = build_model(config.model_name(), &config.locked.model_config)?;
    let hyper_names = model.space().hyper_names().to_vec();

    let (theta_points, _lambda) = read_nodes_csv(&fit_dir.join("nodes.csv"), hyper_names.len())?;
    let (ref_names, ref_draws) = read_sample_csv(reference)?;

    let out_dir = out_dir.unwrap_or(fit_dir);
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("scree.csv"), scree_csv(&mode.eigenvalues))?;

    let mut text = String::from("param,coverage_sd,target,degenerate\n");
    for (j, name) in hyper_names.iter().enumerate() {
        let refs: Vec<f64> = match ref_names.iter().position(|n| n == name) {
            Some(col) => ref_draws.column(col).iter().copied().collect(),
            None => {
                return Err(Error::Config(format!(
                    "reference samples lack a column for hyperparameter {name}"
                )))
            }
        };
        let projections: Vec<f64> = theta_points.column(j).iter().copied().collect();
        let CoverageScore { sd, degenerate } = diagnostics::node_coverage(&projections, &refs);
        text.push_str(&format!(
            "{name},{},{},{degenerate}\n",
            fmt_f64(sd),
            fmt_f64(diagnostics::NODE_COVERAGE_TARGET)
        ));
    }
    std::fs::write(out_dir.join("coverage.csv"), text)?;
    eprintln!("diagnose: wrote scree.csv and coverage.csv");
    Ok(())
}

/// A model validation helper behind the fit path, used for the derivative
/// acceptance gate.
pub fn cmd_validate(model_name: &str, model_config: &serde_json::Value) -> Result<bool> {
    let model = build_model(model_name, model_config)?;
    let report = aghq::model::validate_model(model.as_ref(), 5, 2024);
    println!(
        "validate {model_name}: max gradient error {:.3e}, max Hessian error {:.3e}, tolerance {:.0e}",
        report.max_gradient_error, report.max_hessian_error, report.tolerance
    );
    for block in &report.per_block {
        println!(
            "  block {:>10}: gradient {:.3e}, Hessian {:.3e}",
            block.block, block.max_gradient_error, block.max_hessian_error
        );
    }
    for failure in &report.failures {
        eprintln!("  failure: {failure}");
    }
    Ok(report.passed)
}

pub fn resolve_out_dir(config: &EffectiveConfig, flag: Option<PathBuf>) -> Result<PathBuf> {
    flag.or_else(|| config.locked.output.clone().map(PathBuf::from))
        .ok_or_else(|| Error::Config("an output directory is required (--out)".into()))
}
