//! A pure two-dimensional integrand built from skew-normal factors, exposed
//! as a model with an empty latent field. Its integral over the plane is
//! exactly 4 by the change of variables u = 0.5 t1, v = 0.8 t1 - 0.5 t2.

use nalgebra::{DMatrix, DVector};

use crate::model::{LogJointModel, ParameterSpace};
use crate::models::stats::{skewnormal_density, skewnormal_log_density};

/// `f(theta) = sn(0.5 t1; 2) * sn(0.8 t1 - 0.5 t2; -2)`.
pub fn skewnormal_integrand(theta: &[f64; 2]) -> f64 {
    skewnormal_density(0.5 * theta[0], 2.0) * skewnormal_density(0.8 * theta[0] - 0.5 * theta[1], -2.0)
}

pub struct Fig2Model {
    space: ParameterSpace,
}

impl Fig2Model {
    pub fn new() -> Self {
        let space = ParameterSpace::single_block(
            "theta",
            vec![],
            vec!["theta1".into(), "theta2".into()],
        )
        .expect("static space is valid");
        Fig2Model { space }
    }

    /// Exact value of the integral over the whole plane.
    pub const TRUE_INTEGRAL: f64 = 4.0;
}

impl Default for Fig2Model {
    fn default() -> Self {
        Self::new()
    }
}

impl LogJointModel for Fig2Model {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn log_joint(&self, _x: &DVector<f64>, theta: &DVector<f64>) -> f64 {
        skewnormal_log_density(0.5 * theta[0], 2.0)
            + skewnormal_log_density(0.8 * theta[0] - 0.5 * theta[1], -2.0)
    }

    fn latent_gradient(&self, _x: &DVector<f64>, _theta: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }

    fn latent_hessian(&self, _x: &DVector<f64>, _theta: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(0, 0)
    }
}
