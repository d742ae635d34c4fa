//! Evaluation contract for inference targets: a log joint density over a
//! partitioned parameter vector (latent field `x`, hyperparameters `theta`)
//! with latent-field derivatives, plus finite-difference fallbacks and a
//! derivative validation harness.

use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

/// Names and index layout of a model's parameter vector.
#[derive(Debug, Clone)]
pub struct ParameterSpace {
    latent_dim: usize,
    hyper_dim: usize,
    latent_names: Vec<String>,
    hyper_names: Vec<String>,
    latent_blocks: Vec<(String, Range<usize>)>,
}

impl ParameterSpace {
    pub fn new(
        latent_names: Vec<String>,
        hyper_names: Vec<String>,
        latent_blocks: Vec<(String, Range<usize>)>,
    ) -> Result<Self> {
        let latent_dim = latent_names.len();
        let hyper_dim = hyper_names.len();
        if hyper_dim == 0 {
            return Err(Error::InvalidArgument("at least one hyperparameter required".into()));
        }
        let mut all: Vec<&String> = latent_names.iter().chain(hyper_names.iter()).collect();
        all.sort();
        if all.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("parameter names must be unique".into()));
        }
        // Blocks must partition [0, latent_dim) contiguously.
        let mut cursor = 0usize;
        for (name, range) in &latent_blocks {
            if range.start != cursor || range.end < range.start || range.end > latent_dim {
                return Err(Error::InvalidArgument(format!(
                    "block {name} ({range:?}) does not partition the latent field"
                )));
            }
            cursor = range.end;
        }
        if cursor != latent_dim {
            return Err(Error::InvalidArgument(format!(
                "blocks cover {cursor} of {latent_dim} latent indices"
            )));
        }
        Ok(ParameterSpace { latent_dim, hyper_dim, latent_names, hyper_names, latent_blocks })
    }

    /// A space with a single anonymous block covering the whole latent field.
    pub fn single_block(
        block_name: &str,
        latent_names: Vec<String>,
        hyper_names: Vec<String>,
    ) -> Result<Self> {
        let n = latent_names.len();
        let blocks =
            if n == 0 { vec![] } else { vec![(block_name.to_string(), 0..n)] };
        Self::new(latent_names, hyper_names, blocks)
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn hyper_dim(&self) -> usize {
        self.hyper_dim
    }

    pub fn latent_names(&self) -> &[String] {
        &self.latent_names
    }

    pub fn hyper_names(&self) -> &[String] {
        &self.hyper_names
    }

    pub fn latent_blocks(&self) -> &[(String, Range<usize>)] {
        &self.latent_blocks
    }

    /// Latent names followed by hyperparameter names.
    pub fn joint_names(&self) -> Vec<String> {
        self.latent_names.iter().chain(self.hyper_names.iter()).cloned().collect()
    }

    /// Block containing latent index `i`.
    pub fn block_of(&self, i: usize) -> Option<&str> {
        self.latent_blocks
            .iter()
            .find(|(_, r)| r.contains(&i))
            .map(|(name, _)| name.as_str())
    }
}

/// Evaluation contract every inference target satisfies.
///
/// `latent_hessian` returns the curvature `-d^2 log p / dx dx^T`, which is
/// positive definite near a conditional mode. Models with an empty latent
/// field return zero-sized vectors and matrices. Implementations must be
/// evaluable concurrently with no shared mutable state.
pub trait LogJointModel: Send + Sync {
    fn space(&self) -> &ParameterSpace;

    fn log_joint(&self, x: &DVector<f64>, theta: &DVector<f64>) -> f64;

    fn latent_gradient(&self, x: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64>;

    fn latent_hessian(&self, x: &DVector<f64>, theta: &DVector<f64>) -> DMatrix<f64>;

    /// Derived output quantities (for example prevalence per stratum through
    /// inverse links), computed per draw.
    fn output_map(&self, _x: &DVector<f64>, _theta: &DVector<f64>) -> Vec<f64> {
        Vec::new()
    }

    fn output_names(&self) -> Vec<String> {
        Vec::new()
    }
}

/// Cap on model evaluations for one fit.
#[derive(Debug, Clone, Copy)]
pub struct EvaluationBudget {
    max_log_joint_calls: u64,
    wall_clock_hint_secs: Option<f64>,
}

impl EvaluationBudget {
    pub fn new(max_log_joint_calls: u64, wall_clock_hint_secs: Option<f64>) -> Result<Self> {
        if max_log_joint_calls == 0 {
            return Err(Error::InvalidArgument("evaluation budget must be positive".into()));
        }
        if let Some(h) = wall_clock_hint_secs {
            if !(h > 0.0) {
                return Err(Error::InvalidArgument("wall-clock hint must be positive".into()));
            }
        }
        Ok(EvaluationBudget { max_log_joint_calls, wall_clock_hint_secs })
    }

    pub fn max_log_joint_calls(&self) -> u64 {
        self.max_log_joint_calls
    }

    pub fn wall_clock_hint_secs(&self) -> Option<f64> {
        self.wall_clock_hint_secs
    }
}

/// Wrapper that counts `log_joint` calls so a budget can be enforced at safe
/// points of an outer loop.
pub struct CountedModel<'a> {
    inner: &'a dyn LogJointModel,
    calls: AtomicU64,
}

impl<'a> CountedModel<'a> {
    pub fn new(inner: &'a dyn LogJointModel) -> Self {
        CountedModel { inner, calls: AtomicU64::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn check_budget(&self, budget: &EvaluationBudget) -> Result<()> {
        let calls = self.calls();
        if calls > budget.max_log_joint_calls() {
            return Err(Error::BudgetExhausted { calls, max: budget.max_log_joint_calls() });
        }
        Ok(())
    }
}

impl LogJointModel for CountedModel<'_> {
    fn space(&self) -> &ParameterSpace {
        self.inner.space()
    }

    fn log_joint(&self, x: &DVector<f64>, theta: &DVector<f64>) -> f64 {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.log_joint(x, theta)
    }

    fn latent_gradient(&self, x: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
        self.inner.latent_gradient(x, theta)
    }

    fn latent_hessian(&self, x: &DVector<f64>, theta: &DVector<f64>) -> DMatrix<f64> {
        self.inner.latent_hessian(x, theta)
    }

    fn output_map(&self, x: &DVector<f64>, theta: &DVector<f64>) -> Vec<f64> {
        self.inner.output_map(x, theta)
    }

    fn output_names(&self) -> Vec<String> {
        self.inner.output_names()
    }
}

/// Per-coordinate finite-difference step `h_j = relative * max(1, |x_j|)`.
#[derive(Debug, Clone, Copy)]
pub struct StepRule {
    pub relative: f64,
}

impl Default for StepRule {
    fn default() -> Self {
        Self::for_gradient()
    }
}

impl StepRule {
    /// Cube-root-of-epsilon step, balanced for central first differences.
    pub fn for_gradient() -> Self {
        StepRule { relative: f64::EPSILON.cbrt() }
    }

    /// Fourth-root-of-epsilon step. Central second differences lose
    /// `eps * |f| / h^2` to cancellation, so the gradient step is far too
    /// small for them.
    pub fn for_hessian() -> Self {
        StepRule { relative: f64::EPSILON.powf(0.25) }
    }

    pub fn step(&self, coordinate: f64) -> f64 {
        self.relative * coordinate.abs().max(1.0)
    }
}

/// Central-difference gradient of `f` at `point`.
pub fn fd_gradient<F>(f: F, point: &DVector<f64>, step: StepRule) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let d = point.len();
    let mut grad = DVector::zeros(d);
    let mut work = point.clone();
    for j in 0..d {
        let h = step.step(point[j]);
        work[j] = point[j] + h;
        let up = f(&work);
        work[j] = point[j] - h;
        let down = f(&work);
        work[j] = point[j];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFiniteEvaluation { coordinate: j });
        }
        grad[j] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Central second differences, symmetrised as `(H + H^T) / 2`.
pub fn fd_hessian<F>(f: F, point: &DVector<f64>, step: StepRule) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let d = point.len();
    let center = f(point);
    if !center.is_finite() {
        return Err(Error::NonFiniteEvaluation { coordinate: 0 });
    }
    let mut hess = DMatrix::zeros(d, d);
    let mut work = point.clone();
    for i in 0..d {
        let hi = step.step(point[i]);
        work[i] = point[i] + hi;
        let up = f(&work);
        work[i] = point[i] - hi;
        let down = f(&work);
        work[i] = point[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFiniteEvaluation { coordinate: i });
        }
        hess[(i, i)] = (up - 2.0 * center + down) / (hi * hi);
        for j in (i + 1)..d {
            let hj = step.step(point[j]);
            let mut corner = |si: f64, sj: f64| {
                work[i] = point[i] + si * hi;
                work[j] = point[j] + sj * hj;
                let v = f(&work);
                work[i] = point[i];
                work[j] = point[j];
                v
            };
            let pp = corner(1.0, 1.0);
            let pm = corner(1.0, -1.0);
            let mp = corner(-1.0, 1.0);
            let mm = corner(-1.0, -1.0);
            if ![pp, pm, mp, mm].iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteEvaluation { coordinate: i });
            }
            let v = (pp - pm - mp + mm) / (4.0 * hi * hj);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    // Already symmetric by construction, but average explicitly so the
    // contract holds regardless of future edits.
    let ht = hess.transpose();
    Ok((hess + ht) * 0.5)
}

/// Central first differences of the model's analytic latent gradient,
/// symmetrised: an estimate of `d^2 log p / dx dx^T`.
pub fn fd_jacobian_of_gradient(
    model: &dyn LogJointModel,
    x: &DVector<f64>,
    theta: &DVector<f64>,
    step: StepRule,
) -> Result<DMatrix<f64>> {
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut work = x.clone();
    for j in 0..n {
        let h = step.step(x[j]);
        work[j] = x[j] + h;
        let up = model.latent_gradient(&work, theta);
        work[j] = x[j] - h;
        let down = model.latent_gradient(&work, theta);
        work[j] = x[j];
        for i in 0..n {
            if !up[i].is_finite() || !down[i].is_finite() {
                return Err(Error::NonFiniteEvaluation { coordinate: j });
            }
            jac[(i, j)] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    let jt = jac.transpose();
    Ok((jac + jt) * 0.5)
}

/// One derivative check at a random point.
#[derive(Debug, Clone)]
pub struct BlockCheck {
    pub block: String,
    pub max_gradient_error: f64,
    pub max_hessian_error: f64,
}

/// Result of comparing a model's analytic derivatives against central
/// finite differences at random test points.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub per_block: Vec<BlockCheck>,
    pub max_gradient_error: f64,
    pub max_hessian_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub failures: Vec<String>,
}

fn scaled_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Check gradient and Hessian against finite differences at `n_points`
/// random points. Disagreement beyond the tolerance is reported, not fatal.
pub fn validate_model(model: &dyn LogJointModel, n_points: usize, seed: u64) -> ValidationReport {
    let tolerance = 1e-4;
    let space = model.space();
    let n = space.latent_dim();
    let m = space.hyper_dim();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    let mut per_block: Vec<BlockCheck> = space
        .latent_blocks()
        .iter()
        .map(|(name, _)| BlockCheck {
            block: name.clone(),
            max_gradient_error: 0.0,
            max_hessian_error: 0.0,
        })
        .collect();
    let mut failures = Vec::new();
    let mut max_grad = 0.0f64;
    let mut max_hess = 0.0f64;

    for point_idx in 0..n_points {
        let x = DVector::from_fn(n, |_, _| rng.gen_range(-0.5..0.5));
        let theta = DVector::from_fn(m, |_, _| rng.gen_range(-0.5..0.5));
        if n == 0 {
            continue;
        }

        let analytic_grad = model.latent_gradient(&x, &theta);
        let analytic_hess = model.latent_hessian(&x, &theta);
        let f = |v: &DVector<f64>| model.log_joint(v, &theta);
        let fd_grad = match fd_gradient(f, &x, StepRule::default()) {
            Ok(g) => g,
            Err(e) => {
                failures.push(format!("point {point_idx}: {e}"));
                continue;
            }
        };
        // The curvature is checked as the differenced analytic gradient.
        // Second differences of the value would drown in cancellation noise
        // once |log p| is large, while first differences of the gradient
        // stay accurate.
        let fd_hess = match fd_jacobian_of_gradient(model, &x, &theta, StepRule::default()) {
            Ok(h) => h,
            Err(e) => {
                failures.push(format!("point {point_idx}: {e}"));
                continue;
            }
        };

        let asym = (&analytic_hess - analytic_hess.transpose()).abs().max();
        if asym > 1e-12 {
            failures.push(format!("point {point_idx}: latent_hessian asymmetric by {asym:e}"));
        }

        for i in 0..n {
            let ge = scaled_error(analytic_grad[i], fd_grad[i]);
            max_grad = max_grad.max(ge);
            let block_idx = per_block
                .iter()
                .position(|b| space.block_of(i) == Some(b.block.as_str()))
                .unwrap_or(0);
            per_block[block_idx].max_gradient_error =
                per_block[block_idx].max_gradient_error.max(ge);
            for j in 0..n {
                // latent_hessian is the negated second derivative.
                let he = scaled_error(analytic_hess[(i, j)], -fd_hess[(i, j)]);
                max_hess = max_hess.max(he);
                per_block[block_idx].max_hessian_error =
                    per_block[block_idx].max_hessian_error.max(he);
            }
        }
    }

    if max_grad > tolerance {
        failures.push(format!("gradient disagrees with finite differences: {max_grad:e}"));
    }
    if max_hess > tolerance {
        failures.push(format!("Hessian disagrees with finite differences: {max_hess:e}"));
    }

    ValidationReport {
        per_block,
        max_gradient_error: max_grad,
        max_hessian_error: max_hess,
        tolerance,
        passed: failures.is_empty(),
        failures,
    }
}

/// Empirical check that the log joint decays along random latent rays, so the
/// inner optimum exists.
pub fn ray_decay_check(model: &dyn LogJointModel, n_rays: usize, seed: u64) -> bool {
    let space = model.space();
    let n = space.latent_dim();
    if n == 0 {
        return true;
    }
    let m = space.hyper_dim();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let theta = DVector::zeros(m);
    let origin = DVector::zeros(n);
    let at_origin = model.log_joint(&origin, &theta);
    for _ in 0..n_rays {
        let mut dir = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0f64));
        let norm = dir.norm();
        if norm == 0.0 {
            continue;
        }
        dir /= norm;
        let mut previous = at_origin;
        for t in [10.0, 40.0, 160.0] {
            let value = model.log_joint(&(&dir * t), &theta);
            if !(value < previous) {
                return false;
            }
            previous = value;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fd_gradient_examples() {
        let square = |v: &DVector<f64>| v[0] * v[0];
        let g = fd_gradient(square, &DVector::from_vec(vec![3.0]), StepRule::default()).unwrap();
        assert_relative_eq!(g[0], 6.0, epsilon = 1e-6);

        let constant = |_: &DVector<f64>| 4.2;
        let g = fd_gradient(constant, &DVector::from_vec(vec![1.0, -2.0]), StepRule::default())
            .unwrap();
        assert_eq!(g[0], 0.0);
        assert_eq!(g[1], 0.0);

        let expf = |v: &DVector<f64>| (v[0] + 2.0 * v[1]).exp();
        let g = fd_gradient(expf, &DVector::zeros(2), StepRule::default()).unwrap();
        assert_relative_eq!(g[0], 1.0, epsilon = 1e-5);
        assert_relative_eq!(g[1], 2.0, epsilon = 1e-5);
    }

    #[test]
    fn fd_gradient_reports_offending_coordinate() {
        let partial = |v: &DVector<f64>| if v[1] > 0.5 { f64::NAN } else { v[0] };
        let err = fd_gradient(partial, &DVector::from_vec(vec![0.0, 0.5]), StepRule::default())
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteEvaluation { coordinate: 1 }));
    }

    #[test]
    fn fd_hessian_examples() {
        let half_square = |v: &DVector<f64>| 0.5 * v[0] * v[0];
        let h = fd_hessian(half_square, &DVector::from_vec(vec![0.3]), StepRule::for_hessian())
            .unwrap();
        assert_relative_eq!(h[(0, 0)], 1.0, epsilon = 1e-4);

        let bilinear = |v: &DVector<f64>| v[0] * v[1];
        let h = fd_hessian(bilinear, &DVector::zeros(2), StepRule::for_hessian()).unwrap();
        assert_relative_eq!(h[(0, 1)], 1.0, epsilon = 1e-4);
        assert_relative_eq!(h[(1, 0)], 1.0, epsilon = 1e-4);

        let linear = |v: &DVector<f64>| 2.0 * v[0] - v[1];
        let h = fd_hessian(linear, &DVector::zeros(2), StepRule::for_hessian()).unwrap();
        assert!(h.abs().max() < 1e-6);
    }

    struct GaussianToy {
        space: ParameterSpace,
        wrong_gradient_sign: bool,
    }

    impl GaussianToy {
        fn new(wrong: bool) -> Self {
            let space = ParameterSpace::single_block(
                "x",
                vec!["x[0]".into(), "x[1]".into()],
                vec!["theta".into()],
            )
            .unwrap();
            GaussianToy { space, wrong_gradient_sign: wrong }
        }
    }

    impl LogJointModel for GaussianToy {
        fn space(&self) -> &ParameterSpace {
            &self.space
        }

        fn log_joint(&self, x: &DVector<f64>, theta: &DVector<f64>) -> f64 {
            -0.5 * x.norm_squared() - 0.5 * theta.norm_squared()
        }

        fn latent_gradient(&self, x: &DVector<f64>, _theta: &DVector<f64>) -> DVector<f64> {
            if self.wrong_gradient_sign {
                x.clone()
            } else {
                -x
            }
        }

        fn latent_hessian(&self, x: &DVector<f64>, _theta: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::identity(x.len(), x.len())
        }
    }

    #[test]
    fn validate_model_passes_gaussian_toy() {
        let report = validate_model(&GaussianToy::new(false), 5, 7);
        assert!(report.passed, "{:?}", report.failures);
        assert!(report.max_gradient_error < 1e-6);
        assert!(report.max_hessian_error < 1e-4);
    }

    #[test]
    fn validate_model_flags_wrong_gradient() {
        let report = validate_model(&GaussianToy::new(true), 5, 7);
        assert!(!report.passed);
        assert!(report.max_gradient_error > 1e-2);
    }

    #[test]
    fn ray_decay_holds_for_gaussian_toy() {
        assert!(ray_decay_check(&GaussianToy::new(false), 10, 3));
    }

    #[test]
    fn parameter_space_validation() {
        assert!(ParameterSpace::new(
            vec!["a".into(), "a".into()],
            vec!["t".into()],
            vec![("b".into(), 0..2)],
        )
        .is_err());
        assert!(ParameterSpace::new(
            vec!["a".into(), "b".into()],
            vec!["t".into()],
            vec![("b1".into(), 0..1)],
        )
        .is_err());
        let sp = ParameterSpace::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec!["t".into()],
            vec![("first".into(), 0..1), ("rest".into(), 1..3)],
        )
        .unwrap();
        assert_eq!(sp.block_of(2), Some("rest"));
    }

    #[test]
    fn evaluation_budget_positive() {
        assert!(EvaluationBudget::new(0, None).is_err());
        assert!(EvaluationBudget::new(10, Some(-1.0)).is_err());
        let b = EvaluationBudget::new(10, Some(5.0)).unwrap();
        assert_eq!(b.max_log_joint_calls(), 10);
    }

    #[test]
    fn counted_model_enforces_budget() {
        let inner = GaussianToy::new(false);
        let counted = CountedModel::new(&inner);
        let budget = EvaluationBudget::new(3, None).unwrap();
        let x = DVector::zeros(2);
        let t = DVector::zeros(1);
        for _ in 0..3 {
            counted.log_joint(&x, &t);
        }
        assert!(counted.check_budget(&budget).is_ok());
        counted.log_joint(&x, &t);
        assert!(counted.check_budget(&budget).is_err());
    }
}
