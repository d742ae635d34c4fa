//! Conjugate Gaussian oracle model: `y_i | x ~ N(x, 1)`, `x ~ N(0, exp(theta)^2)`,
//! `theta ~ N(0, 1)`. Everything about it is available in closed form, which
//! makes it the reference target for Laplace and quadrature checks.

use nalgebra::{DMatrix, DVector};

use crate::model::{LogJointModel, ParameterSpace};

const LN_2PI: f64 = 1.8378770664093453;

pub struct GaussConjugateModel {
    space: ParameterSpace,
    data: Vec<f64>,
    sum_y: f64,
    sum_y_sq: f64,
}

impl GaussConjugateModel {
    pub fn new(data: Vec<f64>) -> Self {
        let space = ParameterSpace::single_block(
            "x",
            vec!["x".into()],
            vec!["theta".into()],
        )
        .expect("static space is valid");
        let sum_y = data.iter().sum();
        let sum_y_sq = data.iter().map(|y| y * y).sum();
        GaussConjugateModel { space, data, sum_y, sum_y_sq }
    }

    /// Fixed default dataset used by the registry.
    pub fn with_default_data() -> Self {
        Self::new(vec![0.6, -0.3, 1.1, 0.2, -0.8])
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn prior_variance(theta: f64) -> f64 {
        (2.0 * theta).exp()
    }

    /// Closed-form `log p(y | theta)`: the data are jointly Gaussian with
    /// covariance `I + exp(2 theta) * ones`.
    pub fn log_evidence_given_theta(&self, theta: f64) -> f64 {
        let n = self.data.len() as f64;
        let v = Self::prior_variance(theta);
        let quad = self.sum_y_sq - v / (1.0 + n * v) * self.sum_y * self.sum_y;
        -0.5 * n * LN_2PI - 0.5 * (1.0 + n * v).ln() - 0.5 * quad
    }

    /// Closed-form `log p(y, theta) = log p(y | theta) + log p(theta)`,
    /// which the Laplace approximation reproduces exactly.
    pub fn log_joint_marginal(&self, theta: f64) -> f64 {
        self.log_evidence_given_theta(theta) - 0.5 * theta * theta - 0.5 * LN_2PI
    }

    /// Conditional posterior mean of the latent `x` given `theta`.
    pub fn conditional_posterior_mean(&self, theta: f64) -> f64 {
        let n = self.data.len() as f64;
        let prior_precision = 1.0 / Self::prior_variance(theta);
        self.sum_y / (n + prior_precision)
    }

    /// Conditional posterior variance of `x` given `theta`.
    pub fn conditional_posterior_variance(&self, theta: f64) -> f64 {
        let n = self.data.len() as f64;
        1.0 / (n + 1.0 / Self::prior_variance(theta))
    }
}

impl LogJointModel for GaussConjugateModel {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn log_joint(&self, x: &DVector<f64>, theta: &DVector<f64>) -> f64 {
        let xv = x[0];
        let t = theta[0];
        let n = self.data.len() as f64;
        let lik = -0.5 * n * LN_2PI
            - 0.5 * (self.sum_y_sq - 2.0 * xv * self.sum_y + n * xv * xv);
        let prior_var = Self::prior_variance(t);
        let prior = -0.5 * LN_2PI - 0.5 * prior_var.ln() - 0.5 * xv * xv / prior_var;
        let hyper = -0.5 * LN_2PI - 0.5 * t * t;
        lik + prior + hyper
    }

    fn latent_gradient(&self, x: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
        let xv = x[0];
        let n = self.data.len() as f64;
        let g = self.sum_y - n * xv - xv / Self::prior_variance(theta[0]);
        DVector::from_vec(vec![g])
    }

    fn latent_hessian(&self, _x: &DVector<f64>, theta: &DVector<f64>) -> DMatrix<f64> {
        let n = self.data.len() as f64;
        DMatrix::from_vec(1, 1, vec![n + 1.0 / Self::prior_variance(theta[0])])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn evidence_single_zero_observation_unit_variances() {
        // One observation y = 0 at theta = 0: marginal y ~ N(0, 2), so the
        // evidence factor is log N(0; 0, 2) = -1.2655121234846454.
        let model = GaussConjugateModel::new(vec![0.0]);
        assert_relative_eq!(
            model.log_evidence_given_theta(0.0),
            -1.2655121234846454,
            epsilon = 1e-12
        );
        // The joint marginal adds the hyperprior density at zero.
        assert_relative_eq!(
            model.log_joint_marginal(0.0),
            -1.2655121234846454 - 0.9189385332046727,
            epsilon = 1e-12
        );
    }

    #[test]
    fn evidence_matches_direct_quadrature_over_x() {
        // Brute-force the x-integral of exp(log_joint) minus the hyperprior.
        let model = GaussConjugateModel::new(vec![0.4, -0.9, 1.3]);
        let theta = DVector::from_vec(vec![0.3]);
        let mut acc = 0.0;
        let n_steps = 400_000;
        let (lo, hi) = (-12.0, 12.0);
        let h = (hi - lo) / n_steps as f64;
        for i in 0..=n_steps {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == n_steps { 0.5 } else { 1.0 };
            acc += w * (model.log_joint(&DVector::from_vec(vec![x]), &theta)).exp();
        }
        let brute = (acc * h).ln() + 0.5 * LN_2PI + 0.5 * theta[0] * theta[0];
        assert_relative_eq!(brute, model.log_evidence_given_theta(0.3), epsilon = 1e-8);
    }

    #[test]
    fn conditional_mean_is_shrunk_data_mean() {
        let model = GaussConjugateModel::new(vec![1.0, 2.0, 3.0]);
        // theta = 0: prior variance 1, posterior mean = n ybar / (n + 1).
        assert_relative_eq!(model.conditional_posterior_mean(0.0), 6.0 / 4.0, epsilon = 1e-14);
    }

    #[test]
    fn gradient_and_hessian_are_consistent() {
        let model = GaussConjugateModel::with_default_data();
        let report = crate::model::validate_model(&model, 5, 11);
        assert!(report.passed, "{:?}", report.failures);
    }
}
