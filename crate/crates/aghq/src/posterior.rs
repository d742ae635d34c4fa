//! Combine adapted grids and per-node Laplace fits into normalising
//! constants, normalised node weights, latent mixture-of-Gaussians
//! posteriors, and samples. The empirical Bayes baseline is the single-node
//! special case.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::{
    build_adapted_grid, outer_curvature, outer_optimize, AdaptedGrid, Decomposition,
    OuterSettings,
};
use crate::error::{Error, Result};
use crate::ghq::GridSpec;
use crate::laplace::{log_laplace, InnerFit};
use crate::model::LogJointModel;

const LN_2PI: f64 = 1.8378770664093453;

/// Log-sum-exp in fixed index order.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Which posterior construction produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MethodTag {
    #[serde(rename = "EB")]
    Eb,
    #[serde(rename = "AGHQ-dense")]
    AghqDense,
    #[serde(rename = "PCA-AGHQ")]
    PcaAghq,
}

impl std::fmt::Display for MethodTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MethodTag::Eb => write!(f, "EB"),
            MethodTag::AghqDense => write!(f, "AGHQ-dense"),
            MethodTag::PcaAghq => write!(f, "PCA-AGHQ"),
        }
    }
}

/// Normalised quadrature posterior over the hyperparameters.
pub struct QuadPosterior {
    pub grid: AdaptedGrid,
    pub node_log_laplace: Vec<f64>,
    pub log_normconst: f64,
    /// Normalised node weights `lambda(z)`.
    pub node_weights: Vec<f64>,
    /// Per-node inner fits, reused for the latent mixture.
    pub fits: Vec<InnerFit>,
}

/// Evaluate the Laplace value at every grid node (in parallel, collected in
/// node order), form the log normalising constant by log-sum-exp, and the
/// multinomial node weights.
pub fn normalize(grid: AdaptedGrid, model: &dyn LogJointModel) -> Result<QuadPosterior> {
    // All node fits warm-start from the mode at the grid centre, a fixed
    // snapshot, so results do not depend on evaluation order.
    let center_fit = log_laplace(model, &grid.center, None)
        .map_err(|e| Error::NodeFit { node: usize::MAX, source: Box::new(e) })?;
    let warm = center_fit.x_hat.clone();

    let fits: Vec<InnerFit> = (0..grid.len())
        .into_par_iter()
        .map(|node| {
            log_laplace(model, &grid.theta_row(node), Some(&warm))
                .map_err(|e| Error::NodeFit { node, source: Box::new(e) })
        })
        .collect::<Result<_>>()?;

    let node_log_laplace: Vec<f64> = fits.iter().map(|f| f.log_laplace).collect();
    let unnormalised: Vec<f64> = node_log_laplace
        .iter()
        .zip(grid.base.log_weights())
        .map(|(ll, lw)| ll + lw)
        .collect();
    let lse = log_sum_exp(&unnormalised);
    if !lse.is_finite() {
        return Err(Error::InvalidArgument(
            "all node contributions vanished; the grid does not cover the target".into(),
        ));
    }
    let log_normconst = grid.log_abs_det_transform + lse;
    let mut node_weights: Vec<f64> = unnormalised.iter().map(|v| (v - lse).exp()).collect();
    let total: f64 = node_weights.iter().sum();
    for w in node_weights.iter_mut() {
        *w /= total;
    }

    Ok(QuadPosterior { grid, node_log_laplace, log_normconst, node_weights, fits })
}

/// One Gaussian component of the latent mixture.
#[derive(Clone)]
pub struct GaussianComponent {
    pub theta: DVector<f64>,
    pub mean: DVector<f64>,
    /// Cholesky of the precision; absent for empty latent fields.
    pub precision_factor: Option<Cholesky<f64, Dyn>>,
}

/// Mixture of per-node conditional Gaussians with the node weights.
pub struct MixturePosterior {
    pub components: Vec<GaussianComponent>,
    pub mixture_weights: Vec<f64>,
    pub method_tag: MethodTag,
}

impl MixturePosterior {
    pub fn latent_dim(&self) -> usize {
        self.components.first().map(|c| c.mean.len()).unwrap_or(0)
    }

    pub fn hyper_dim(&self) -> usize {
        self.components.first().map(|c| c.theta.len()).unwrap_or(0)
    }

    /// Mixture mean `sum_z lambda(z) x_hat(theta_z)`.
    pub fn latent_mean(&self) -> DVector<f64> {
        let n = self.latent_dim();
        let mut mean = DVector::zeros(n);
        for (component, &weight) in self.components.iter().zip(&self.mixture_weights) {
            mean += &component.mean * weight;
        }
        mean
    }

    /// Exact mixture mean and standard deviation per latent coordinate via
    /// the law of total variance.
    pub fn latent_moments(&self) -> (DVector<f64>, DVector<f64>) {
        let n = self.latent_dim();
        let mean = self.latent_mean();
        let mut variance = DVector::zeros(n);
        for (component, &weight) in self.components.iter().zip(&self.mixture_weights) {
            let marginal = match &component.precision_factor {
                Some(chol) => chol.inverse().diagonal(),
                None => DVector::zeros(n),
            };
            for i in 0..n {
                let centred = component.mean[i] - mean[i];
                variance[i] += weight * (marginal[i] + centred * centred);
            }
        }
        (mean, variance.map(|v: f64| v.max(0.0).sqrt()))
    }
}

/// Latent mixture over the quadrature nodes, reusing the stored fits.
pub fn latent_mixture(
    quad: &QuadPosterior,
    model: &dyn LogJointModel,
    tag: MethodTag,
) -> Result<MixturePosterior> {
    if model.space().latent_dim() == 0 {
        return Err(Error::InvalidArgument(
            "latent mixture needs a model with a latent field".into(),
        ));
    }
    let components = quad
        .fits
        .iter()
        .map(|fit| GaussianComponent {
            theta: fit.theta.clone(),
            mean: fit.x_hat.clone(),
            precision_factor: fit.hessian_factor.clone(),
        })
        .collect();
    Ok(MixturePosterior {
        components,
        mixture_weights: quad.node_weights.clone(),
        method_tag: tag,
    })
}

/// Empirical Bayes: hyperparameters fixed at the mode of the Laplace
/// objective, latent field from the single conditional Gaussian there.
pub fn eb_posterior(model: &dyn LogJointModel) -> Result<MixturePosterior> {
    let theta0 = DVector::zeros(model.space().hyper_dim());
    let theta_hat = outer_optimize(model, &theta0, &OuterSettings::default())?;
    eb_posterior_at(model, &theta_hat)
}

pub fn eb_posterior_at(
    model: &dyn LogJointModel,
    theta_hat: &DVector<f64>,
) -> Result<MixturePosterior> {
    let fit = log_laplace(model, theta_hat, None)?;
    Ok(MixturePosterior {
        components: vec![GaussianComponent {
            theta: fit.theta.clone(),
            mean: fit.x_hat.clone(),
            precision_factor: fit.hessian_factor.clone(),
        }],
        mixture_weights: vec![1.0],
        method_tag: MethodTag::Eb,
    })
}

/// Provenance carried alongside persisted draws.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    pub model: String,
    pub config_digest: String,
    pub k: Option<usize>,
    pub s: Option<usize>,
    pub seed: u64,
    pub log_normconst: Option<f64>,
    #[serde(default)]
    pub output_names: Vec<String>,
}

/// Named draws with provenance.
pub struct SampleSet {
    pub names: Vec<String>,
    /// One row per draw.
    pub draws: DMatrix<f64>,
    pub seed: u64,
    pub provenance: Provenance,
}

/// Sample the mixture: per draw, a node index from the multinomial weights,
/// then the latent vector from that node's Gaussian via a triangular solve
/// against standard normal deviates. The hyper columns record the node's
/// theta point; model outputs are appended per draw. Deterministic given the
/// seed, sequential in a single stream.
pub fn sample(
    mixture: &MixturePosterior,
    model: &dyn LogJointModel,
    n: usize,
    seed: u64,
    provenance: Provenance,
) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one draw".into()));
    }
    let space = model.space();
    let latent_dim = space.latent_dim();
    let hyper_dim = space.hyper_dim();
    if mixture.latent_dim() != latent_dim {
        return Err(Error::DimensionMismatch {
            left: mixture.latent_dim(),
            right: latent_dim,
        });
    }
    let output_names = model.output_names();
    let mut names = space.joint_names();
    names.extend(output_names.iter().cloned());

    let cumulative: Vec<f64> = mixture
        .mixture_weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect();

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut draws = DMatrix::zeros(n, latent_dim + hyper_dim + output_names.len());
    let mut eps = DVector::zeros(latent_dim);
    for row in 0..n {
        let u: f64 = rng.gen();
        let node = cumulative
            .iter()
            .position(|&c| u <= c)
            .unwrap_or(mixture.components.len() - 1);
        let component = &mixture.components[node];

        for i in 0..latent_dim {
            eps[i] = rng.sample(StandardNormal);
        }
        let x = match &component.precision_factor {
            Some(chol) => {
                // Precision H = L L^T, so x = mean + L^{-T} eps.
                let solved = chol
                    .l()
                    .transpose()
                    .solve_upper_triangular(&eps)
                    .ok_or_else(|| Error::InvalidArgument(
                        "triangular solve failed during sampling".into(),
                    ))?;
                &component.mean + solved
            }
            None => component.mean.clone(),
        };

        for i in 0..latent_dim {
            draws[(row, i)] = x[i];
        }
        for j in 0..hyper_dim {
            draws[(row, latent_dim + j)] = component.theta[j];
        }
        if !output_names.is_empty() {
            let outputs = model.output_map(&x, &component.theta);
            debug_assert_eq!(outputs.len(), output_names.len());
            for (j, value) in outputs.into_iter().enumerate() {
                draws[(row, latent_dim + hyper_dim + j)] = value;
            }
        }
    }

    Ok(SampleSet { names, draws, seed, provenance })
}

/// Weighted moments and marginal node projections of one hyperparameter.
#[derive(Debug, Clone, Serialize)]
pub struct HyperSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    /// Single distinct projected value: the sd is reported as zero and the
    /// marginal carries no spread information.
    pub degenerate: bool,
    /// `(value, aggregated weight)` pairs, ascending in value.
    pub projections: Vec<(f64, f64)>,
}

/// Per-hyperparameter mean, sd, and node projections of the quadrature
/// posterior. Moments are weights-based; no density smoothing is applied.
pub fn hyper_summaries(quad: &QuadPosterior, names: &[String]) -> Vec<HyperSummary> {
    let m = quad.grid.theta_points.ncols();
    assert_eq!(names.len(), m, "one name per hyperparameter");
    (0..m)
        .map(|j| {
            let mut mean = 0.0;
            let mut second = 0.0;
            let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(quad.grid.len());
            for node in 0..quad.grid.len() {
                let value = quad.grid.theta_points[(node, j)];
                let weight = quad.node_weights[node];
                mean += weight * value;
                second += weight * value * value;
                pairs.push((value, weight));
            }
            pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let mut projections: Vec<(f64, f64)> = Vec::new();
            for (value, weight) in pairs {
                match projections.last_mut() {
                    Some((last, acc)) if *last == value => *acc += weight,
                    _ => projections.push((value, weight)),
                }
            }
            let degenerate = projections.len() < 2;
            let sd = if degenerate { 0.0 } else { (second - mean * mean).max(0.0).sqrt() };
            HyperSummary { name: names[j].clone(), mean, sd, degenerate, projections }
        })
        .collect()
}

/// Normalising constant of the plain Laplace approximation (the k = 1
/// reduction): `log_laplace(theta_hat) + (m/2) log 2 pi + sum_j log(lambda_j)/2`.
pub fn laplace_log_normconst(
    curvature: &crate::adapt::ModeCurvature,
    log_laplace_at_mode: f64,
) -> f64 {
    let m = curvature.dim() as f64;
    log_laplace_at_mode
        + 0.5 * m * LN_2PI
        + 0.5 * curvature.eigenvalues.iter().map(|l| l.ln()).sum::<f64>()
}

/// Convenience: optimise, adapt, and normalise a dense spectral grid.
pub fn fit_dense(
    model: &dyn LogJointModel,
    k: usize,
    decomposition: Decomposition,
) -> Result<QuadPosterior> {
    let theta0 = DVector::zeros(model.space().hyper_dim());
    let theta_hat = outer_optimize(model, &theta0, &OuterSettings::default())?;
    let mc = outer_curvature(model, &theta_hat)?;
    let spec = GridSpec::uniform(mc.dim(), k)?;
    let grid = build_adapted_grid(&mc, &spec, decomposition)?;
    normalize(grid, model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapt::{outer_curvature, outer_optimize};
    use crate::model::ParameterSpace;
    use crate::models::{Fig2Model, GaussConjugateModel};
    use approx::assert_relative_eq;

    /// Gaussian over theta with known mass, N = 0.
    struct GaussianTarget {
        space: ParameterSpace,
        precision: DMatrix<f64>,
        mean: DVector<f64>,
        log_mass: f64,
    }

    impl GaussianTarget {
        fn new(precision: DMatrix<f64>, mean: DVector<f64>, log_mass: f64) -> Self {
            let m = mean.len();
            let space = ParameterSpace::single_block(
                "theta",
                vec![],
                (0..m).map(|j| format!("t[{j}]")).collect(),
            )
            .unwrap();
            GaussianTarget { space, precision, mean, log_mass }
        }

        fn true_log_integral(&self) -> f64 {
            let m = self.mean.len() as f64;
            let chol = Cholesky::new(self.precision.clone()).unwrap();
            let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            self.log_mass + 0.5 * m * LN_2PI - 0.5 * log_det
        }
    }

    impl LogJointModel for GaussianTarget {
        fn space(&self) -> &ParameterSpace {
            &self.space
        }

        fn log_joint(&self, _x: &DVector<f64>, theta: &DVector<f64>) -> f64 {
            let d = theta - &self.mean;
            self.log_mass - 0.5 * d.dot(&(&self.precision * &d))
        }

        fn latent_gradient(&self, _x: &DVector<f64>, _theta: &DVector<f64>) -> DVector<f64> {
            DVector::zeros(0)
        }

        fn latent_hessian(&self, _x: &DVector<f64>, _theta: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::zeros(0, 0)
        }
    }

    fn gaussian_target() -> GaussianTarget {
        GaussianTarget::new(
            DMatrix::from_row_slice(2, 2, &[1.4, -0.5, -0.5, 2.2]),
            DVector::from_vec(vec![0.8, -0.6]),
            0.7,
        )
    }

    #[test]
    fn log_sum_exp_basics() {
        assert_relative_eq!(log_sum_exp(&[0.0, 0.0]), 2f64.ln(), epsilon = 1e-14);
        assert_relative_eq!(
            log_sum_exp(&[-1000.0, -1001.0]),
            -1000.0 + (1.0 + (-1.0f64).exp()).ln(),
            epsilon = 1e-12
        );
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn gaussian_target_is_integrated_exactly_for_every_k() {
        // Exactness holds when the adaptation matches the target curvature,
        // so adapt with the analytic precision; finite-difference curvature
        // carries its own noise floor and is checked separately below.
        let model = gaussian_target();
        let truth = model.true_log_integral().exp();
        let mc = crate::adapt::ModeCurvature::from_curvature(
            model.mean.clone(),
            model.precision.clone(),
        )
        .unwrap();
        for k in [1usize, 2, 3, 5, 8] {
            for decomposition in [Decomposition::Spectral, Decomposition::Cholesky] {
                let grid =
                    build_adapted_grid(&mc, &GridSpec::uniform(2, k).unwrap(), decomposition)
                        .unwrap();
                let quad = normalize(grid, &model).unwrap();
                let rel = (quad.log_normconst.exp() - truth).abs() / truth;
                assert!(rel < 1e-10, "k={k} {decomposition} relative error {rel}");
                let total: f64 = quad.node_weights.iter().sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_target_end_to_end_matches_at_fd_noise_level() {
        let model = gaussian_target();
        let truth = model.true_log_integral().exp();
        for k in [1usize, 3] {
            let quad = fit_dense(&model, k, Decomposition::Spectral).unwrap();
            let rel = (quad.log_normconst.exp() - truth).abs() / truth;
            assert!(rel < 1e-5, "k={k} relative error {rel}");
        }
    }

    #[test]
    fn single_node_grid_reduces_to_laplace() {
        let model = Fig2Model::new();
        let theta_hat = outer_optimize(&model, &DVector::zeros(2), &Default::default()).unwrap();
        let mc = outer_curvature(&model, &theta_hat).unwrap();
        let grid =
            build_adapted_grid(&mc, &GridSpec::uniform(2, 1).unwrap(), Decomposition::Spectral)
                .unwrap();
        let quad = normalize(grid, &model).unwrap();
        let at_mode = log_laplace(&model, &theta_hat, None).unwrap().log_laplace;
        assert_relative_eq!(
            quad.log_normconst,
            laplace_log_normconst(&mc, at_mode),
            epsilon = 1e-12
        );
    }

    #[test]
    fn fig2_dense_k7_matches_analytic_integral() {
        let model = Fig2Model::new();
        let quad = fit_dense(&model, 7, Decomposition::Spectral).unwrap();
        let estimate = quad.log_normconst.exp();
        assert!((estimate - 4.0).abs() < 0.02, "estimate {estimate}");
    }

    #[test]
    fn fig2_error_is_nonincreasing_in_k() {
        let model = Fig2Model::new();
        let mut previous = f64::INFINITY;
        for k in [1usize, 3, 5, 7] {
            let quad = fit_dense(&model, k, Decomposition::Spectral).unwrap();
            let err = (quad.log_normconst.exp() - 4.0).abs();
            assert!(err <= previous + 1e-12, "k={k}: {err} after {previous}");
            previous = err;
        }
    }

    #[test]
    fn dense_spectral_and_full_rank_truncation_agree() {
        let model = GaussConjugateModel::with_default_data();
        let theta_hat = outer_optimize(&model, &DVector::zeros(1), &Default::default()).unwrap();
        let mc = outer_curvature(&model, &theta_hat).unwrap();
        let dense = normalize(
            build_adapted_grid(&mc, &GridSpec::uniform(1, 5).unwrap(), Decomposition::Spectral)
                .unwrap(),
            &model,
        )
        .unwrap();
        let truncated = normalize(
            build_adapted_grid(&mc, &GridSpec::truncated(1, 1, 5).unwrap(), Decomposition::Spectral)
                .unwrap(),
            &model,
        )
        .unwrap();
        assert!((dense.log_normconst - truncated.log_normconst).abs() < 1e-12);
    }

    #[test]
    fn eb_equals_single_node_mixture() {
        let model = GaussConjugateModel::with_default_data();
        let theta_hat = outer_optimize(&model, &DVector::zeros(1), &Default::default()).unwrap();
        let mc = outer_curvature(&model, &theta_hat).unwrap();
        let grid =
            build_adapted_grid(&mc, &GridSpec::uniform(1, 1).unwrap(), Decomposition::Spectral)
                .unwrap();
        let quad = normalize(grid, &model).unwrap();
        let from_grid = latent_mixture(&quad, &model, MethodTag::Eb).unwrap();
        let eb = eb_posterior(&model).unwrap();

        assert_eq!(eb.method_tag, MethodTag::Eb);
        assert_eq!(eb.components.len(), 1);
        assert_eq!(eb.mixture_weights, vec![1.0]);
        assert_eq!(from_grid.components.len(), 1);
        assert!((eb.components[0].mean[0] - from_grid.components[0].mean[0]).abs() < 1e-9);
        assert!((eb.components[0].theta[0] - from_grid.components[0].theta[0]).abs() < 1e-9);
    }

    #[test]
    fn eb_component_mean_is_conditional_posterior_mean() {
        let model = GaussConjugateModel::with_default_data();
        let eb = eb_posterior(&model).unwrap();
        let theta = eb.components[0].theta[0];
        assert_relative_eq!(
            eb.components[0].mean[0],
            model.conditional_posterior_mean(theta),
            epsilon = 1e-8
        );
    }

    fn dummy_provenance() -> Provenance {
        Provenance {
            method: "test".into(),
            model: "test".into(),
            config_digest: "0".into(),
            k: None,
            s: None,
            seed: 0,
            log_normconst: None,
            output_names: vec![],
        }
    }

    #[test]
    fn sampling_is_deterministic_given_seed() {
        let model = GaussConjugateModel::with_default_data();
        let quad = fit_dense(&model, 3, Decomposition::Spectral).unwrap();
        let mixture = latent_mixture(&quad, &model, MethodTag::AghqDense).unwrap();
        let a = sample(&mixture, &model, 50, 123, dummy_provenance()).unwrap();
        let b = sample(&mixture, &model, 50, 123, dummy_provenance()).unwrap();
        assert_eq!(a.draws, b.draws);
        let c = sample(&mixture, &model, 50, 124, dummy_provenance()).unwrap();
        assert_ne!(a.draws, c.draws);
    }

    /// Hand-built one- and two-component mixtures for the moment checks.
    fn unit_component(mean: f64) -> GaussianComponent {
        GaussianComponent {
            theta: DVector::from_vec(vec![0.0]),
            mean: DVector::from_vec(vec![mean]),
            precision_factor: Some(Cholesky::new(DMatrix::identity(1, 1)).unwrap()),
        }
    }

    struct OneDimModel {
        space: ParameterSpace,
    }

    impl OneDimModel {
        fn new() -> Self {
            OneDimModel {
                space: ParameterSpace::single_block("x", vec!["x".into()], vec!["t".into()])
                    .unwrap(),
            }
        }
    }

    impl LogJointModel for OneDimModel {
        fn space(&self) -> &ParameterSpace {
            &self.space
        }

        fn log_joint(&self, x: &DVector<f64>, _t: &DVector<f64>) -> f64 {
            -0.5 * x.norm_squared()
        }

        fn latent_gradient(&self, x: &DVector<f64>, _t: &DVector<f64>) -> DVector<f64> {
            -x
        }

        fn latent_hessian(&self, _x: &DVector<f64>, _t: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::identity(1, 1)
        }
    }

    #[test]
    fn standard_gaussian_sample_mean_within_clt_bound() {
        let mixture = MixturePosterior {
            components: vec![unit_component(0.0)],
            mixture_weights: vec![1.0],
            method_tag: MethodTag::Eb,
        };
        let model = OneDimModel::new();
        let n = 100_000;
        let set = sample(&mixture, &model, n, 7, dummy_provenance()).unwrap();
        let mean: f64 = set.draws.column(0).iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean = {mean}");
    }

    #[test]
    fn two_component_mixture_matches_law_of_total_variance() {
        let mixture = MixturePosterior {
            components: vec![unit_component(-1.0), unit_component(1.0)],
            mixture_weights: vec![0.3, 0.7],
            method_tag: MethodTag::AghqDense,
        };
        let model = OneDimModel::new();
        let n = 100_000;
        let set = sample(&mixture, &model, n, 99, dummy_provenance()).unwrap();
        let column = set.draws.column(0);
        let mean: f64 = column.iter().sum::<f64>() / n as f64;
        let variance: f64 =
            column.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        // E[within] + Var[means] = 1 + 0.3 * 0.7 * 2^2 = 1.84.
        assert!((variance - 1.84).abs() < 0.05, "variance = {variance}");

        let (analytic_mean, analytic_sd) = mixture.latent_moments();
        assert_relative_eq!(analytic_mean[0], 0.4, epsilon = 1e-12);
        assert_relative_eq!(analytic_sd[0], 1.84f64.sqrt(), epsilon = 1e-12);
        // Sample moments agree with the analytic ones within Monte Carlo error.
        assert!((mean - analytic_mean[0]).abs() < 5.0 * analytic_sd[0] / (n as f64).sqrt());
    }

    #[test]
    fn hyper_summaries_on_symmetric_target() {
        let model = gaussian_target();
        let quad = fit_dense(&model, 7, Decomposition::Spectral).unwrap();
        let names = vec!["t[0]".to_string(), "t[1]".to_string()];
        let summaries = hyper_summaries(&quad, &names);
        for (j, summary) in summaries.iter().enumerate() {
            assert!(
                (summary.mean - model.mean[j]).abs() < 1e-10,
                "dim {j} mean {} vs {}",
                summary.mean,
                model.mean[j]
            );
            assert!(!summary.degenerate);
            let total: f64 = summary.projections.iter().map(|(_, w)| w).sum();
            assert!((total - 1.0).abs() < 1e-10);
        }
        // Marginal sds of the inverse precision.
        let cov = model.precision.clone().try_inverse().unwrap();
        assert!((summaries[0].sd - cov[(0, 0)].sqrt()).abs() < 1e-6);
    }

    #[test]
    fn hyper_summaries_single_node_is_degenerate() {
        let model = gaussian_target();
        let quad = fit_dense(&model, 1, Decomposition::Spectral).unwrap();
        let names = vec!["t[0]".to_string(), "t[1]".to_string()];
        let summaries = hyper_summaries(&quad, &names);
        for summary in summaries {
            assert!(summary.degenerate);
            assert_eq!(summary.sd, 0.0);
        }
    }
}
