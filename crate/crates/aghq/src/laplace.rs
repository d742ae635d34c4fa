//! Inner step of the nested scheme: for a fixed hyperparameter value, find
//! the latent conditional mode by Newton ascent, factor the curvature there,
//! and evaluate the log marginal Laplace value
//! `log p(y, x_hat, theta) + (N/2) log 2 pi - log det(H_hat) / 2`.

use nalgebra::{Cholesky, DVector, Dyn};

use crate::error::{Error, Result};
use crate::model::LogJointModel;

const LN_2PI: f64 = 1.8378770664093453;

/// Newton ascent controls. The gradient tolerance is on the infinity norm.
#[derive(Debug, Clone, Copy)]
pub struct InnerSettings {
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
    pub armijo_constant: f64,
}

impl Default for InnerSettings {
    fn default() -> Self {
        InnerSettings { gradient_tolerance: 1e-8, max_iterations: 100, armijo_constant: 1e-4 }
    }
}

/// Outcome of the latent mode search; non-convergence is reported through the
/// flag with the best iterate retained.
#[derive(Debug, Clone)]
pub struct ModeSearch {
    pub x_hat: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
}

/// A per-theta fit: latent mode, curvature factorisation, and Laplace value.
#[derive(Clone)]
pub struct InnerFit {
    pub theta: DVector<f64>,
    pub x_hat: DVector<f64>,
    /// Triangular factorisation of the curvature; absent for empty latent fields.
    pub hessian_factor: Option<Cholesky<f64, Dyn>>,
    pub log_det_hessian: f64,
    pub log_laplace: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl std::fmt::Debug for InnerFit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InnerFit")
            .field("theta", &self.theta)
            .field("log_laplace", &self.log_laplace)
            .field("iterations", &self.iterations)
            .field("converged", &self.converged)
            .finish()
    }
}

/// Newton ascent with backtracking line search on `x -> log p(y, x, theta)`.
/// A non-positive-definite Newton system falls back to a gradient step for
/// that iteration.
pub fn inner_mode(
    model: &dyn LogJointModel,
    theta: &DVector<f64>,
    x0: Option<&DVector<f64>>,
    settings: &InnerSettings,
) -> ModeSearch {
    let n = model.space().latent_dim();
    let mut x = match x0 {
        Some(start) => start.clone(),
        None => DVector::zeros(n),
    };
    if n == 0 {
        return ModeSearch { x_hat: x, iterations: 0, converged: true, gradient_norm: 0.0 };
    }

    let mut value = model.log_joint(&x, theta);
    if !value.is_finite() {
        // Outside the model's finite region (saturated hyperparameters or a
        // bad warm start); derivatives are not defined here.
        return ModeSearch {
            x_hat: x,
            iterations: 0,
            converged: false,
            gradient_norm: f64::INFINITY,
        };
    }
    let mut gradient = model.latent_gradient(&x, theta);
    let mut grad_norm = gradient.amax();
    if grad_norm < settings.gradient_tolerance {
        return ModeSearch { x_hat: x, iterations: 0, converged: true, gradient_norm: grad_norm };
    }

    for iteration in 1..=settings.max_iterations {
        let curvature = model.latent_hessian(&x, theta);
        let direction = match Cholesky::new(curvature) {
            Some(chol) => chol.solve(&gradient),
            None => gradient.clone(),
        };
        let slope = gradient.dot(&direction);
        let direction = if slope > 0.0 { direction } else { gradient.clone() };
        let slope = gradient.dot(&direction);

        // Once the predicted improvement falls below the floating-point
        // noise of the objective, sufficient decrease is unverifiable and a
        // strict Armijo test would reject the (safe, contractive) endgame
        // Newton steps. Take the unit step in that regime.
        let noise_floor = 256.0 * f64::EPSILON * (1.0 + value.abs());
        let mut candidate;
        let mut candidate_value;
        if slope < noise_floor {
            candidate = &x + &direction;
            candidate_value = model.log_joint(&candidate, theta);
            if !candidate_value.is_finite() {
                return ModeSearch {
                    x_hat: x,
                    iterations: iteration,
                    converged: false,
                    gradient_norm: grad_norm,
                };
            }
        } else {
            let mut step = 1.0;
            loop {
                candidate = &x + &direction * step;
                candidate_value = model.log_joint(&candidate, theta);
                if candidate_value.is_finite()
                    && candidate_value
                        >= value + settings.armijo_constant * step * slope - noise_floor
                {
                    break;
                }
                step *= 0.5;
                if step < 1e-12 {
                    // No acceptable step; keep the best iterate.
                    return ModeSearch {
                        x_hat: x,
                        iterations: iteration,
                        converged: false,
                        gradient_norm: grad_norm,
                    };
                }
            }
        }

        x = candidate;
        value = candidate_value;
        gradient = model.latent_gradient(&x, theta);
        grad_norm = gradient.amax();
        if grad_norm < settings.gradient_tolerance {
            return ModeSearch {
                x_hat: x,
                iterations: iteration,
                converged: true,
                gradient_norm: grad_norm,
            };
        }
    }

    ModeSearch {
        x_hat: x,
        iterations: settings.max_iterations,
        converged: false,
        gradient_norm: grad_norm,
    }
}

/// Laplace value at `theta`. Models with an empty latent field evaluate the
/// log joint directly.
pub fn log_laplace(
    model: &dyn LogJointModel,
    theta: &DVector<f64>,
    warm_start: Option<&DVector<f64>>,
) -> Result<InnerFit> {
    log_laplace_with(model, theta, warm_start, &InnerSettings::default())
}

pub fn log_laplace_with(
    model: &dyn LogJointModel,
    theta: &DVector<f64>,
    warm_start: Option<&DVector<f64>>,
    settings: &InnerSettings,
) -> Result<InnerFit> {
    let n = model.space().latent_dim();
    if n == 0 {
        let value = model.log_joint(&DVector::zeros(0), theta);
        return Ok(InnerFit {
            theta: theta.clone(),
            x_hat: DVector::zeros(0),
            hessian_factor: None,
            log_det_hessian: 0.0,
            log_laplace: value,
            iterations: 0,
            converged: true,
        });
    }

    let search = inner_mode(model, theta, warm_start, settings);
    if !search.converged {
        return Err(Error::InnerNotConverged {
            iterations: search.iterations,
            grad_norm: search.gradient_norm,
        });
    }

    let curvature = model.latent_hessian(&search.x_hat, theta);
    let chol = Cholesky::new(curvature).ok_or_else(|| Error::NotPositiveDefinite {
        context: "latent curvature at the conditional mode".into(),
        theta: theta.iter().copied().collect(),
        hint: "the conditional posterior may be flat or improper here".into(),
    })?;
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let value = model.log_joint(&search.x_hat, theta) + 0.5 * n as f64 * LN_2PI - 0.5 * log_det;

    Ok(InnerFit {
        theta: theta.clone(),
        x_hat: search.x_hat,
        hessian_factor: Some(chol),
        log_det_hessian: log_det,
        log_laplace: value,
        iterations: search.iterations,
        converged: true,
    })
}
