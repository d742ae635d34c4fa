//! Outer step of the nested scheme: optimise the Laplace objective over the
//! hyperparameters, estimate its curvature at the mode by finite differences,
//! decompose the inverse curvature, select a retained rank by cumulative
//! eigenvalue proportion, and emit adapted quadrature grids.

use std::cell::RefCell;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::ghq::{product_grid_with_budget, GridSpec, QuadratureGrid, DEFAULT_POINT_BUDGET};
use crate::laplace::log_laplace;
use crate::model::{LogJointModel, StepRule};

/// Quasi-Newton controls for the outer maximisation.
#[derive(Debug, Clone, Copy)]
pub struct OuterSettings {
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for OuterSettings {
    fn default() -> Self {
        OuterSettings { gradient_tolerance: 1e-6, step_tolerance: 1e-8, max_iterations: 500 }
    }
}

/// Mode and curvature of the Laplace objective, with the decompositions of
/// the inverse curvature used for grid adaptation.
#[derive(Debug, Clone)]
pub struct ModeCurvature {
    pub theta_hat: DVector<f64>,
    /// Negated Hessian of the log Laplace objective at the mode.
    pub curvature: DMatrix<f64>,
    pub inverse_curvature: DMatrix<f64>,
    /// Eigenvalues of the inverse curvature, descending.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvector columns aligned with `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
    /// Lower-triangular Cholesky factor of the inverse curvature.
    pub cholesky_factor: DMatrix<f64>,
}

impl ModeCurvature {
    pub fn dim(&self) -> usize {
        self.theta_hat.len()
    }

    /// `sum_{j<=s} lambda_j / sum_j lambda_j`.
    pub fn variance_explained(&self, s: usize) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        self.eigenvalues.iter().take(s).sum::<f64>() / total
    }
}

/// Retained rank choice from the scree rule.
#[derive(Debug, Clone, Copy)]
pub struct PcaSelection {
    pub s: usize,
    pub variance_explained: f64,
    pub threshold: f64,
}

/// An objective wrapper that evaluates the Laplace value with warm starts
/// carried between calls of the outer loop. Warm starts only advance at
/// accepted central points, so finite-difference batches see a fixed start.
struct LaplaceObjective<'a> {
    model: &'a dyn LogJointModel,
    warm: RefCell<Option<DVector<f64>>>,
}

impl<'a> LaplaceObjective<'a> {
    fn new(model: &'a dyn LogJointModel) -> Self {
        LaplaceObjective { model, warm: RefCell::new(None) }
    }

    fn value(&self, theta: &DVector<f64>) -> Result<f64> {
        let warm = self.warm.borrow().clone();
        Ok(log_laplace(self.model, theta, warm.as_ref())?.log_laplace)
    }

    /// Evaluate and advance the warm start to the new mode.
    fn value_and_advance(&self, theta: &DVector<f64>) -> Result<f64> {
        let warm = self.warm.borrow().clone();
        let fit = log_laplace(self.model, theta, warm.as_ref())?;
        *self.warm.borrow_mut() = Some(fit.x_hat.clone());
        Ok(fit.log_laplace)
    }

    fn gradient(&self, theta: &DVector<f64>, step: StepRule) -> Result<DVector<f64>> {
        let m = theta.len();
        let mut grad = DVector::zeros(m);
        let mut work = theta.clone();
        for j in 0..m {
            let h = step.step(theta[j]);
            work[j] = theta[j] + h;
            let up = self.value(&work)?;
            work[j] = theta[j] - h;
            let down = self.value(&work)?;
            work[j] = theta[j];
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFiniteEvaluation { coordinate: j });
            }
            grad[j] = (up - down) / (2.0 * h);
        }
        Ok(grad)
    }
}

/// BFGS maximisation of the Laplace objective with finite-difference
/// gradients and inner warm starts.
pub fn outer_optimize(
    model: &dyn LogJointModel,
    theta0: &DVector<f64>,
    settings: &OuterSettings,
) -> Result<DVector<f64>> {
    let m = theta0.len();
    if m != model.space().hyper_dim() {
        return Err(Error::DimensionMismatch { left: m, right: model.space().hyper_dim() });
    }
    let objective = LaplaceObjective::new(model);
    let step_rule = StepRule::default();

    let mut theta = theta0.clone();
    let mut value = objective.value_and_advance(&theta)?;
    if !value.is_finite() {
        return Err(Error::InvalidArgument(
            "Laplace objective is not finite at the starting point".into(),
        ));
    }
    let mut gradient = objective.gradient(&theta, step_rule)?;
    // Inverse Hessian approximation of the negated (minimised) objective.
    let mut inv_hessian = DMatrix::<f64>::identity(m, m);
    let mut trace: Vec<(Vec<f64>, f64)> = vec![(theta.iter().copied().collect(), value)];

    for _iteration in 0..settings.max_iterations {
        if gradient.amax() < settings.gradient_tolerance {
            return Ok(theta);
        }

        // Ascent direction; reset to the gradient if the approximation
        // has lost positive definiteness against it.
        let mut direction = &inv_hessian * &gradient;
        let mut slope = gradient.dot(&direction);
        if !(slope > 0.0) {
            inv_hessian = DMatrix::identity(m, m);
            direction = gradient.clone();
            slope = gradient.dot(&direction);
        }

        // Sufficient decrease with a rounding slack, as in the inner search.
        let slack = 4.0 * f64::EPSILON * (1.0 + value.abs());
        let mut step = 1.0;
        let mut next_theta;
        let mut next_value;
        loop {
            next_theta = &theta + &direction * step;
            next_value = objective.value_and_advance(&next_theta).unwrap_or(f64::NEG_INFINITY);
            if next_value.is_finite() && next_value >= value + 1e-4 * step * slope - slack {
                break;
            }
            step *= 0.5;
            if step < 1e-14 {
                // Gradient noise floor reached; treat as converged if the
                // parameter step has collapsed.
                return Ok(theta);
            }
        }

        let delta = &next_theta - &theta;
        let next_gradient = objective.gradient(&next_theta, step_rule)?;
        let grad_change = &next_gradient - &gradient;

        // BFGS update in minimisation convention: s = delta, y = -grad_change.
        let y = -&grad_change;
        let sy = delta.dot(&y);
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let identity = DMatrix::<f64>::identity(m, m);
            let left = &identity - &delta * y.transpose() * rho;
            let right = &identity - &y * delta.transpose() * rho;
            inv_hessian = &left * &inv_hessian * &right + &delta * delta.transpose() * rho;
        }

        let step_size = delta.amax();
        theta = next_theta;
        value = next_value;
        gradient = next_gradient;
        trace.push((theta.iter().copied().collect(), value));

        if step_size < settings.step_tolerance {
            return Ok(theta);
        }
    }

    let tail: Vec<String> = trace
        .iter()
        .rev()
        .take(5)
        .rev()
        .map(|(t, v)| format!("theta={t:?} value={v:.6}"))
        .collect();
    Err(Error::OuterNotConverged {
        iterations: settings.max_iterations,
        trace: tail.join("; "),
    })
}

impl ModeCurvature {
    /// Decompose a known curvature matrix: eigenvalues of the inverse sorted
    /// descending, eigenvector signs fixed, and the Cholesky factor of the
    /// inverse. Any non-positive curvature eigenvalue is a hard error.
    pub fn from_curvature(theta_hat: DVector<f64>, curvature: DMatrix<f64>) -> Result<Self> {
        let m = theta_hat.len();
        let eigen = SymmetricEigen::new(curvature.clone());
        let mut order: Vec<usize> = (0..m).collect();
        // Ascending curvature eigenvalues give descending inverse eigenvalues.
        order.sort_by(|&a, &b| eigen.eigenvalues[a].partial_cmp(&eigen.eigenvalues[b]).unwrap());
        for &idx in &order {
            let lambda = eigen.eigenvalues[idx];
            if !(lambda > 0.0) {
                return Err(Error::NotPositiveDefinite {
                    context: "curvature of the Laplace objective at the mode".into(),
                    theta: theta_hat.iter().copied().collect(),
                    hint: format!(
                        "eigenvalue {lambda:e} <= 0; check model identifiability before refitting"
                    ),
                });
            }
        }

        let mut eigenvalues = Vec::with_capacity(m);
        let mut eigenvectors = DMatrix::zeros(m, m);
        for (col, &idx) in order.iter().enumerate() {
            eigenvalues.push(1.0 / eigen.eigenvalues[idx]);
            let mut vector = eigen.eigenvectors.column(idx).clone_owned();
            // Sign convention: the largest-magnitude entry is positive, so
            // grids are reproducible across runs and backends.
            let lead = vector.iter().enumerate().max_by(|(_, a), (_, b)| {
                a.abs().partial_cmp(&b.abs()).unwrap()
            });
            if let Some((_, &lead_value)) = lead {
                if lead_value < 0.0 {
                    vector = -vector;
                }
            }
            eigenvectors.set_column(col, &vector);
        }

        // Rebuild the inverse from the decomposition, so E Lambda E^T
        // reproduces it exactly.
        let lambda = DMatrix::from_diagonal(&DVector::from_vec(eigenvalues.clone()));
        let inverse_curvature = &eigenvectors * lambda * eigenvectors.transpose();
        let inverse_curvature = 0.5 * (&inverse_curvature + inverse_curvature.transpose());

        let cholesky_factor = Cholesky::new(inverse_curvature.clone())
            .ok_or_else(|| Error::NotPositiveDefinite {
                context: "inverse curvature factorisation".into(),
                theta: theta_hat.iter().copied().collect(),
                hint: "curvature is near-singular; check model identifiability".into(),
            })?
            .l()
            .clone_owned();

        Ok(ModeCurvature {
            theta_hat,
            curvature,
            inverse_curvature,
            eigenvalues,
            eigenvectors,
            cholesky_factor,
        })
    }
}

/// Curvature of the Laplace objective at its mode via central finite
/// differences of the value, symmetrised, then decomposed.
pub fn outer_curvature(model: &dyn LogJointModel, theta_hat: &DVector<f64>) -> Result<ModeCurvature> {
    let objective = LaplaceObjective::new(model);
    // Prime the warm start at the mode so the finite-difference cloud
    // reuses it.
    objective.value_and_advance(theta_hat)?;

    let value = |theta: &DVector<f64>| -> f64 {
        objective.value(theta).unwrap_or(f64::NAN)
    };
    let hessian_of_log = crate::model::fd_hessian(value, theta_hat, StepRule::for_hessian())?;
    ModeCurvature::from_curvature(theta_hat.clone(), -hessian_of_log)
}

/// Smallest retained rank whose cumulative eigenvalue proportion reaches the
/// threshold.
pub fn select_rank(curvature: &ModeCurvature, threshold: f64) -> Result<PcaSelection> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "scree threshold must lie in (0, 1], got {threshold}"
        )));
    }
    let m = curvature.dim();
    let mut s = m;
    for candidate in 1..=m {
        if curvature.variance_explained(candidate) >= threshold {
            s = candidate;
            break;
        }
    }
    Ok(PcaSelection { s, variance_explained: curvature.variance_explained(s), threshold })
}

/// Which factor of the inverse curvature repositions the nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decomposition {
    Cholesky,
    Spectral,
}

impl std::fmt::Display for Decomposition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Decomposition::Cholesky => write!(f, "cholesky"),
            Decomposition::Spectral => write!(f, "spectral"),
        }
    }
}

/// A z-space grid mapped into hyperparameter space through
/// `theta = P z + theta_hat`.
#[derive(Debug, Clone)]
pub struct AdaptedGrid {
    pub base: QuadratureGrid,
    pub transform: DMatrix<f64>,
    pub center: DVector<f64>,
    /// One row per node, in the base grid's order.
    pub theta_points: DMatrix<f64>,
    /// Log absolute determinant of the full-dimension transform, i.e.
    /// `sum_j log(lambda_j) / 2` over all dimensions even when trailing
    /// dimensions hold a single node.
    pub log_abs_det_transform: f64,
}

impl AdaptedGrid {
    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn theta_row(&self, node: usize) -> DVector<f64> {
        self.theta_points.row(node).transpose()
    }
}

/// Build the adapted grid. Variable-level specs require the spectral
/// decomposition: a Cholesky factor mixes mode coordinates into truncated
/// dimensions, so levels must be uniform to use it.
pub fn build_adapted_grid(
    curvature: &ModeCurvature,
    spec: &GridSpec,
    decomposition: Decomposition,
) -> Result<AdaptedGrid> {
    build_adapted_grid_with_budget(curvature, spec, decomposition, DEFAULT_POINT_BUDGET)
}

pub fn build_adapted_grid_with_budget(
    curvature: &ModeCurvature,
    spec: &GridSpec,
    decomposition: Decomposition,
    budget: u64,
) -> Result<AdaptedGrid> {
    let m = curvature.dim();
    if spec.dim() != m {
        return Err(Error::DimensionMismatch { left: spec.dim(), right: m });
    }
    if decomposition == Decomposition::Cholesky && !spec.is_uniform() {
        return Err(Error::InvalidArgument(
            "variable-level grids require the spectral decomposition".into(),
        ));
    }

    let base = product_grid_with_budget(spec, budget)?;
    let (transform, log_abs_det) = match decomposition {
        Decomposition::Cholesky => {
            let l = curvature.cholesky_factor.clone();
            let ld: f64 = l.diagonal().iter().map(|v| v.ln()).sum();
            (l, ld)
        }
        Decomposition::Spectral => {
            let sqrt_lambda = DMatrix::from_diagonal(&DVector::from_iterator(
                m,
                curvature.eigenvalues.iter().map(|l| l.sqrt()),
            ));
            let p = &curvature.eigenvectors * sqrt_lambda;
            let ld: f64 = 0.5 * curvature.eigenvalues.iter().map(|l| l.ln()).sum::<f64>();
            (p, ld)
        }
    };

    let n_points = base.len();
    let mut theta_points = DMatrix::zeros(n_points, m);
    for row in 0..n_points {
        let z = base.points().row(row).transpose();
        let theta = &transform * z + &curvature.theta_hat;
        theta_points.set_row(row, &theta.transpose());
    }

    Ok(AdaptedGrid {
        base,
        transform,
        center: curvature.theta_hat.clone(),
        theta_points,
        log_abs_det_transform: log_abs_det,
    })
}
