//! Scalar statistical formulas shared by the built-in models: survey
//! aggregation, the generalised binomial likelihood, the recent-infection
//! link, and the skew-normal density.

use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.8378770664093453;

/// Mean duration of recent infection for PHIA surveys, converted from 130
/// days to years so the product with an annual rate is dimensionless.
pub const PHIA_OMEGA_T_YEARS: f64 = 130.0 / 365.25;

/// False recent ratio for PHIA surveys.
pub const PHIA_BETA_T: f64 = 0.0;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn std_normal_logpdf(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * LN_2PI
}

/// Standard normal CDF.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Log of the standard normal CDF with an asymptotic series in the far left
/// tail, where the direct CDF underflows.
pub fn std_normal_log_cdf(z: f64) -> f64 {
    if z > -10.0 {
        std_normal_cdf(z).ln()
    } else {
        let z2 = z * z;
        -0.5 * z2 - (-z).ln() - 0.5 * LN_2PI + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
    }
}

/// Kish effective sample size `(sum w)^2 / sum w^2`.
pub fn kish_ess(weights: &[f64]) -> Result<f64> {
    if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
        return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
    }
    let sum: f64 = weights.iter().sum();
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    if sum_sq == 0.0 {
        return Err(Error::InvalidArgument("at least one positive weight required".into()));
    }
    Ok(sum * sum / sum_sq)
}

/// `sum(w * v) / sum(w)`. Also serves population-weighted aggregates.
pub fn weighted_mean(values: &[f64], weights: &[f64]) -> Result<f64> {
    if values.len() != weights.len() {
        return Err(Error::DimensionMismatch { left: values.len(), right: weights.len() });
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("total weight must be positive".into()));
    }
    let dot: f64 = values.iter().zip(weights).map(|(v, w)| v * w).sum();
    Ok(dot / total)
}

/// Log density of the generalised binomial, defined on real-valued counts
/// `0 <= y <= m` through the gamma function.
pub fn xbin_log_density(y: f64, m: f64, p: f64) -> Result<f64> {
    if !(y >= 0.0 && m >= y) {
        return Err(Error::InvalidArgument(format!(
            "generalised binomial requires 0 <= y <= m, got y={y}, m={m}"
        )));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "probability must lie strictly inside (0, 1), got {p}"
        )));
    }
    Ok(ln_gamma(m + 1.0) - ln_gamma(y + 1.0) - ln_gamma(m - y + 1.0)
        + y * p.ln()
        + (m - y) * (1.0 - p).ln())
}

/// Proportion recently infected among positives implied by an annual
/// incidence rate, via the reformulated biomarker incidence estimator.
/// `omega_t` and `beta_t` are in years.
pub fn kappa_recent(lambda: f64, rho: f64, omega_t: f64, beta_t: f64) -> Result<f64> {
    if lambda < 0.0 {
        return Err(Error::InvalidArgument("incidence rate must be non-negative".into()));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidArgument(
            "prevalence must lie strictly inside (0, 1)".into(),
        ));
    }
    if !(omega_t >= beta_t && beta_t >= 0.0) {
        return Err(Error::InvalidArgument("need omega_t >= beta_t >= 0".into()));
    }
    Ok(1.0 - (-lambda * ((1.0 - rho) / rho) * (omega_t - beta_t) - beta_t).exp())
}

/// Standard skew-normal density `2 phi(z) Phi(alpha z)`.
pub fn skewnormal_density(z: f64, alpha: f64) -> f64 {
    2.0 * std_normal_logpdf(z).exp() * std_normal_cdf(alpha * z)
}

/// Log of the skew-normal density, stable in the tails.
pub fn skewnormal_log_density(z: f64, alpha: f64) -> f64 {
    std::f64::consts::LN_2 + std_normal_logpdf(z) + std_normal_log_cdf(alpha * z)
}

/// A weighted aggregate survey observation with its working probability.
#[derive(Debug, Clone, Copy)]
pub struct SurveyAggregate {
    pub y: f64,
    pub m_eff: f64,
    pub p: f64,
}

impl SurveyAggregate {
    pub fn new(y: f64, m_eff: f64, p: f64) -> Result<Self> {
        if !(0.0 <= y && y <= m_eff) {
            return Err(Error::InvalidArgument(format!(
                "survey aggregate requires 0 <= y <= m_eff, got y={y}, m_eff={m_eff}"
            )));
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidArgument("probability must lie in (0, 1)".into()));
        }
        Ok(SurveyAggregate { y, m_eff, p })
    }

    pub fn log_density(&self) -> f64 {
        xbin_log_density(self.y, self.m_eff, self.p).expect("validated on construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn kish_examples() {
        assert_relative_eq!(kish_ess(&[2.0; 5]).unwrap(), 5.0, epsilon = 1e-12);
        assert_relative_eq!(kish_ess(&[1.0, 1.0, 2.0]).unwrap(), 16.0 / 6.0, epsilon = 1e-12);
        assert_relative_eq!(kish_ess(&[1.0, 0.0, 0.0]).unwrap(), 1.0, epsilon = 1e-12);
        assert!(kish_ess(&[0.0, 0.0]).is_err());
        assert!(kish_ess(&[1.0, -1.0]).is_err());
    }

    #[test]
    fn weighted_mean_examples() {
        assert_relative_eq!(
            weighted_mean(&[1.0, 2.0, 6.0], &[1.0, 1.0, 1.0]).unwrap(),
            3.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            weighted_mean(&[0.0, 1.0], &[1.0, 3.0]).unwrap(),
            0.75,
            epsilon = 1e-12
        );
        assert_relative_eq!(weighted_mean(&[4.2], &[0.7]).unwrap(), 4.2, epsilon = 1e-12);
        assert!(weighted_mean(&[1.0], &[0.0]).is_err());
        assert!(weighted_mean(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn xbin_matches_integer_binomial() {
        // Oracle value from a high-precision log-gamma evaluation.
        assert_relative_eq!(
            xbin_log_density(3.0, 10.0, 0.4).unwrap(),
            -1.5371598192023535,
            epsilon = 1e-6
        );
        // y = m collapses to m log p.
        assert_relative_eq!(
            xbin_log_density(7.0, 7.0, 0.3).unwrap(),
            7.0 * 0.3f64.ln(),
            epsilon = 1e-12
        );
        // Real-valued arguments stay finite; oracle value from log-gamma.
        assert_relative_eq!(
            xbin_log_density(2.5, 7.2, 0.3).unwrap(),
            -1.2403163987951893,
            epsilon = 1e-10
        );
        assert!(xbin_log_density(8.0, 7.0, 0.3).is_err());
        assert!(xbin_log_density(1.0, 7.0, 0.0).is_err());
        assert!(xbin_log_density(1.0, 7.0, 1.0).is_err());
    }

    #[test]
    fn xbin_equals_binomial_pmf_on_integers() {
        fn binom_log_pmf(y: u64, m: u64, p: f64) -> f64 {
            let mut log_choose = 0.0;
            for i in 0..y {
                log_choose += ((m - i) as f64).ln() - ((i + 1) as f64).ln();
            }
            log_choose + y as f64 * p.ln() + (m - y) as f64 * (1.0 - p).ln()
        }
        for p in [0.1, 0.5, 0.9] {
            for m in 1..=30u64 {
                for y in 0..=m {
                    let a = xbin_log_density(y as f64, m as f64, p).unwrap();
                    let b = binom_log_pmf(y, m, p);
                    assert!((a - b).abs() < 1e-10, "y={y} m={m} p={p}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn kappa_examples() {
        assert_relative_eq!(kappa_recent(0.0, 0.2, 0.5, 0.0).unwrap(), 0.0, epsilon = 1e-15);
        // PHIA preset, oracle value
        assert_relative_eq!(
            kappa_recent(0.01, 0.1, PHIA_OMEGA_T_YEARS, PHIA_BETA_T).unwrap(),
            0.03152523691620268,
            epsilon = 1e-12
        );
        let k1 = kappa_recent(0.01, 0.1, PHIA_OMEGA_T_YEARS, 0.0).unwrap();
        let k2 = kappa_recent(0.05, 0.1, PHIA_OMEGA_T_YEARS, 0.0).unwrap();
        let k3 = kappa_recent(0.25, 0.1, PHIA_OMEGA_T_YEARS, 0.0).unwrap();
        assert!(k1 < k2 && k2 < k3);
        assert!(kappa_recent(0.01, 0.0, 0.5, 0.0).is_err());
    }

    #[test]
    fn skewnormal_density_at_origin() {
        // sn(0; alpha) = 2 phi(0) Phi(0) = phi(0)
        assert_relative_eq!(
            skewnormal_density(0.0, 2.0),
            (2.0 * std::f64::consts::PI).sqrt().recip(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn log_cdf_tail_is_continuous() {
        let a = std_normal_log_cdf(-9.999999);
        let b = std_normal_log_cdf(-10.000001);
        assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    }

    #[test]
    fn survey_aggregate_validation() {
        assert!(SurveyAggregate::new(5.0, 4.0, 0.5).is_err());
        assert!(SurveyAggregate::new(2.0, 4.0, 1.0).is_err());
        let s = SurveyAggregate::new(3.0, 10.0, 0.4).unwrap();
        assert_relative_eq!(s.log_density(), -1.5371598192023535, epsilon = 1e-6);
    }
}
