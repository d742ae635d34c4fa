//! End-to-end fit orchestration shared by the command line and the
//! acceptance tests: outer optimisation, curvature, grid construction,
//! normalisation, and the latent mixture.

use nalgebra::DVector;

use crate::adapt::{
    build_adapted_grid_with_budget, outer_curvature, outer_optimize, Decomposition, ModeCurvature,
    OuterSettings, PcaSelection,
};
use crate::error::{Error, Result};
use crate::ghq::{GridSpec, DEFAULT_POINT_BUDGET};
use crate::laplace::log_laplace;
use crate::model::{CountedModel, EvaluationBudget, LogJointModel};
use crate::posterior::{
    laplace_log_normconst, latent_mixture, MethodTag, MixturePosterior, QuadPosterior,
};

/// Inference method of a fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Eb,
    Aghq { k: usize },
    PcaAghq { k: usize, rank: RankChoice },
}

/// Retained-rank choice for the truncated grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankChoice {
    Fixed(usize),
    Threshold(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub decomposition: Decomposition,
    pub point_budget: u64,
    pub budget: Option<EvaluationBudget>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            decomposition: Decomposition::Spectral,
            point_budget: DEFAULT_POINT_BUDGET,
            budget: None,
        }
    }
}

/// Everything a fit produces, ready for persistence or sampling.
pub struct FitArtifacts {
    pub method_tag: MethodTag,
    pub mode: ModeCurvature,
    pub selection: Option<PcaSelection>,
    pub k: usize,
    pub quad: QuadPosterior,
    /// Present when the model has a latent field.
    pub mixture: Option<MixturePosterior>,
    pub log_joint_calls: u64,
}

pub fn run_fit(model: &dyn LogJointModel, method: Method, options: &FitOptions) -> Result<FitArtifacts> {
    let counted = CountedModel::new(model);
    let m = model.space().hyper_dim();
    let theta0 = DVector::zeros(m);

    let theta_hat = outer_optimize(&counted, &theta0, &OuterSettings::default())?;
    if let Some(budget) = &options.budget {
        counted.check_budget(budget)?;
    }
    let mode = outer_curvature(&counted, &theta_hat)?;
    if let Some(budget) = &options.budget {
        counted.check_budget(budget)?;
    }

    let (tag, k, spec, selection) = match method {
        Method::Eb => (MethodTag::Eb, 1, GridSpec::uniform(m, 1)?, None),
        Method::Aghq { k } => (MethodTag::AghqDense, k, GridSpec::uniform(m, k)?, None),
        Method::PcaAghq { k, rank } => {
            if options.decomposition != Decomposition::Spectral {
                return Err(Error::Config(
                    "pca-aghq requires the spectral decomposition".into(),
                ));
            }
            let selection = match rank {
                RankChoice::Fixed(s) => {
                    if s == 0 || s > m {
                        return Err(Error::Config(format!(
                            "retained rank must lie in 1..={m}, got {s}"
                        )));
                    }
                    PcaSelection {
                        s,
                        variance_explained: mode.variance_explained(s),
                        threshold: f64::NAN,
                    }
                }
                RankChoice::Threshold(threshold) => {
                    crate::adapt::select_rank(&mode, threshold)?
                }
            };
            (
                MethodTag::PcaAghq,
                k,
                GridSpec::truncated(m, selection.s, k)?,
                Some(selection),
            )
        }
    };

    let grid =
        build_adapted_grid_with_budget(&mode, &spec, options.decomposition, options.point_budget)?;
    let quad = crate::posterior::normalize(grid, &counted)?;
    if let Some(budget) = &options.budget {
        counted.check_budget(budget)?;
    }

    let mixture = if model.space().latent_dim() > 0 {
        Some(latent_mixture(&quad, &counted, tag)?)
    } else {
        None
    };

    Ok(FitArtifacts {
        method_tag: tag,
        mode,
        selection,
        k,
        quad,
        mixture,
        log_joint_calls: counted.calls(),
    })
}

/// Normalising constant of the plain Laplace approximation at the fitted
/// mode, for the k = 1 identity checks.
pub fn laplace_normconst_at_mode(model: &dyn LogJointModel, mode: &ModeCurvature) -> Result<f64> {
    let at_mode = log_laplace(model, &mode.theta_hat, None)?.log_laplace;
    Ok(laplace_log_normconst(mode, at_mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Fig2Model, GaussConjugateModel, MiniElgmConfig, MiniElgmModel};

    #[test]
    fn eb_fit_has_single_unit_weight_node() {
        let model = GaussConjugateModel::with_default_data();
        let fit = run_fit(&model, Method::Eb, &FitOptions::default()).unwrap();
        assert_eq!(fit.quad.node_weights, vec![1.0]);
        assert_eq!(fit.method_tag, MethodTag::Eb);
        let mixture = fit.mixture.unwrap();
        assert_eq!(mixture.components.len(), 1);
        // The EB normalising constant is the Laplace one.
        let laplace = laplace_normconst_at_mode(&model, &fit.mode).unwrap();
        assert!((fit.quad.log_normconst - laplace).abs() < 1e-12);
    }

    #[test]
    fn pca_full_rank_equals_dense_spectral() {
        let model =
            MiniElgmModel::from_config(&MiniElgmConfig { age_effect: false, ..Default::default() })
                .unwrap();
        let dense = run_fit(&model, Method::Aghq { k: 3 }, &FitOptions::default()).unwrap();
        let pca = run_fit(
            &model,
            Method::PcaAghq { k: 3, rank: RankChoice::Fixed(2) },
            &FitOptions::default(),
        )
        .unwrap();
        assert!((dense.quad.log_normconst - pca.quad.log_normconst).abs() < 1e-12);
    }

    #[test]
    fn pca_requires_spectral() {
        let model = Fig2Model::new();
        let options = FitOptions { decomposition: Decomposition::Cholesky, ..Default::default() };
        let result = run_fit(
            &model,
            Method::PcaAghq { k: 3, rank: RankChoice::Threshold(0.9) },
            &options,
        );
        assert!(matches!(result.err(), Some(Error::Config(_))));
    }

    #[test]
    fn budget_is_enforced() {
        let model = GaussConjugateModel::with_default_data();
        let options = FitOptions {
            budget: Some(EvaluationBudget::new(5, None).unwrap()),
            ..Default::default()
        };
        let result = run_fit(&model, Method::Aghq { k: 3 }, &options);
        assert!(matches!(result.err(), Some(Error::BudgetExhausted { .. })));
    }
}
