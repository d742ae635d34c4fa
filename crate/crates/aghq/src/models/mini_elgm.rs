//! Binomial counts on a small district graph with a logit link: intercept
//! plus a BYM2 spatial effect, optionally extended with an AR1 age effect.
//! Hyperparameters live on log/logit scales with half-normal, beta, and
//! uniform hyperpriors. Synthetic observations are shipped as a fixture
//! generated once from a fixed seed, so every run sees identical data.
//!
//! The spatial effect keeps the standardised BYM2 components as the latent
//! field: `v ~ N(0, I)` and `w` against the scaled ICAR, combined in the
//! predictor as `sigma (sqrt(1 - phi) v + sqrt(phi) w)`. In these
//! coordinates the iid-versus-structured decomposition poles are connected
//! by a likelihood-flat path, which keeps the joint posterior unimodal for
//! the reference sampler.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::Deserialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{LogJointModel, ParameterSpace};
use crate::models::stats::sigmoid;
use crate::models::structures::{ar1_log_det, precision_ar1, precision_icar, Adjacency};

const LN_2PI: f64 = 1.8378770664093453;
const INTERCEPT_SD: f64 = 5.0;
const HALF_NORMAL_SD: f64 = 2.5;
/// Soft sum-to-zero: Gaussian on the structured component's sum with this
/// standard deviation per node count.
const SUM_CONSTRAINT_SD_PER_NODE: f64 = 0.05;

const FIXTURE_DATA: &str = include_str!("../../fixtures/mini_elgm_data.csv");
const FIXTURE_ADJACENCY: &str = include_str!("../../fixtures/mini_elgm_adjacency.csv");

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MiniElgmConfig {
    /// Add an AR1 age effect, raising the hyperparameter count from 2 to 4.
    #[serde(default)]
    pub age_effect: bool,
    /// Override the built-in observation fixture (CSV `area_id,age_group,sex,y,m_eff`).
    #[serde(default)]
    pub data_path: Option<String>,
    /// Override the built-in adjacency fixture (edge list CSV `a,b`).
    #[serde(default)]
    pub adjacency_path: Option<String>,
}

#[derive(Debug, Clone)]
struct Observation {
    area: usize,
    age: usize,
    y: f64,
    m_eff: f64,
}

/// Hyperparameters mapped from the unconstrained scale; `None` when a value
/// saturates in floating point, in which case the log joint is `-inf`.
struct HyperValues {
    sigma_x: f64,
    phi_x: f64,
    age: Option<(f64, f64)>,
}

pub struct MiniElgmModel {
    space: ParameterSpace,
    obs: Vec<Observation>,
    n_areas: usize,
    n_ages: usize,
    age_effect: bool,
    /// Scaled ICAR precision plus the soft sum-to-zero term: the prior
    /// precision of the standardised structured component.
    q_struct: DMatrix<f64>,
    log_det_q_struct: f64,
    /// Sum of the per-observation log-gamma terms of the likelihood.
    lgamma_const: f64,
}

impl MiniElgmModel {
    pub fn from_config(config: &MiniElgmConfig) -> Result<Self> {
        let data_text = match &config.data_path {
            Some(path) => std::fs::read_to_string(path)?,
            None => FIXTURE_DATA.to_string(),
        };
        let adjacency_text = match &config.adjacency_path {
            Some(path) => std::fs::read_to_string(path)?,
            None => FIXTURE_ADJACENCY.to_string(),
        };
        let adjacency = Adjacency::from_edge_csv(&adjacency_text)?;
        Self::new(&data_text, &adjacency, config.age_effect)
    }

    pub fn new(data_csv: &str, adjacency: &Adjacency, age_effect: bool) -> Result<Self> {
        let (obs, n_ages) = parse_data(data_csv, adjacency.len())?;
        let n_areas = adjacency.len();
        if age_effect && n_ages < 2 {
            return Err(Error::InvalidArgument(
                "the age variant needs at least two age groups in the data".into(),
            ));
        }

        let icar = precision_icar(adjacency, true)?;
        let constraint_sd = SUM_CONSTRAINT_SD_PER_NODE * n_areas as f64;
        let constraint_precision = 1.0 / (constraint_sd * constraint_sd);
        let mut q_struct = icar.matrix;
        for i in 0..n_areas {
            for j in 0..n_areas {
                q_struct[(i, j)] += constraint_precision;
            }
        }
        let chol =
            Cholesky::new(q_struct.clone()).ok_or_else(|| Error::NotPositiveDefinite {
                context: "constrained structured spatial precision".into(),
                theta: vec![],
                hint: "check the adjacency graph".into(),
            })?;
        let log_det_q_struct =
            2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();

        let lgamma_const = obs
            .iter()
            .map(|o| ln_gamma(o.m_eff + 1.0) - ln_gamma(o.y + 1.0) - ln_gamma(o.m_eff - o.y + 1.0))
            .sum();

        let mut latent_names = vec!["beta0".to_string()];
        let mut blocks = vec![("beta0".to_string(), 0..1)];
        for i in 0..n_areas {
            latent_names.push(format!("v[{i}]"));
        }
        blocks.push(("v".to_string(), 1..1 + n_areas));
        for i in 0..n_areas {
            latent_names.push(format!("w[{i}]"));
        }
        blocks.push(("w".to_string(), 1 + n_areas..1 + 2 * n_areas));
        let mut hyper_names = vec!["log_sigma_x".to_string(), "logit_phi_x".to_string()];
        if age_effect {
            for a in 0..n_ages {
                latent_names.push(format!("u_age[{a}]"));
            }
            blocks.push(("u_age".to_string(), 1 + 2 * n_areas..1 + 2 * n_areas + n_ages));
            hyper_names.push("log_sigma_a".to_string());
            hyper_names.push("logit_phi_a".to_string());
        }
        let space = ParameterSpace::new(latent_names, hyper_names, blocks)?;

        Ok(MiniElgmModel {
            space,
            obs,
            n_areas,
            n_ages,
            age_effect,
            q_struct,
            log_det_q_struct,
            lgamma_const,
        })
    }

    pub fn n_areas(&self) -> usize {
        self.n_areas
    }

    pub fn n_ages(&self) -> usize {
        self.n_ages
    }

    fn split_hyper(&self, theta: &DVector<f64>) -> Option<HyperValues> {
        let sigma_x = theta[0].exp();
        let phi_x = sigmoid(theta[1]);
        if !(sigma_x.is_finite() && sigma_x > 0.0 && phi_x > 0.0 && phi_x < 1.0) {
            return None;
        }
        let age = if self.age_effect {
            let sigma_a = theta[2].exp();
            // AR1 correlation mapped from the real line onto (-1, 1).
            let phi_a = 2.0 * sigmoid(theta[3]) - 1.0;
            if !(sigma_a.is_finite() && sigma_a > 0.0 && phi_a.abs() < 1.0) {
                return None;
            }
            Some((sigma_a, phi_a))
        } else {
            None
        };
        Some(HyperValues { sigma_x, phi_x, age })
    }

    /// Linear predictor per observation: intercept plus the combined
    /// spatial effect, plus the age effect when present.
    fn predictors(&self, x: &DVector<f64>, c_v: f64, c_w: f64) -> Vec<f64> {
        let beta0 = x[0];
        self.obs
            .iter()
            .map(|o| {
                let mut eta =
                    beta0 + c_v * x[1 + o.area] + c_w * x[1 + self.n_areas + o.area];
                if self.age_effect {
                    eta += x[1 + 2 * self.n_areas + o.age];
                }
                eta
            })
            .collect()
    }

    /// Prevalence outputs: one per area at the age-reference level, plus the
    /// unweighted overall mean.
    fn area_prevalence(&self, x: &DVector<f64>, theta: &DVector<f64>) -> Vec<f64> {
        let hyper = self.split_hyper(theta).expect("outputs need valid hyperparameters");
        let c_v = hyper.sigma_x * (1.0 - hyper.phi_x).sqrt();
        let c_w = hyper.sigma_x * hyper.phi_x.sqrt();
        (0..self.n_areas)
            .map(|i| sigmoid(x[0] + c_v * x[1 + i] + c_w * x[1 + self.n_areas + i]))
            .collect()
    }
}

/// `ln(1 + exp(t))` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn half_normal_log_density_on_log_scale(log_sigma: f64) -> f64 {
    // sigma ~ N+(0, HALF_NORMAL_SD), evaluated in log_sigma with Jacobian.
    let sigma = log_sigma.exp();
    0.5 * (2.0f64.ln() - std::f64::consts::PI.ln()) - HALF_NORMAL_SD.ln()
        - 0.5 * sigma * sigma / (HALF_NORMAL_SD * HALF_NORMAL_SD)
        + log_sigma
}

fn beta_half_log_density_on_logit_scale(logit_phi: f64) -> f64 {
    // phi ~ Beta(1/2, 1/2), evaluated in logit_phi with Jacobian phi (1 - phi).
    let phi = sigmoid(logit_phi);
    0.5 * phi.ln() + 0.5 * (1.0 - phi).ln() - std::f64::consts::PI.ln()
}

fn uniform_ar1_log_density_on_real_scale(t: f64) -> f64 {
    // phi = 2 sigmoid(t) - 1 ~ U(-1, 1); density times Jacobian is s (1 - s).
    let s = sigmoid(t);
    s.ln() + (1.0 - s).ln()
}

impl LogJointModel for MiniElgmModel {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn log_joint(&self, x: &DVector<f64>, theta: &DVector<f64>) -> f64 {
        let Some(hyper) = self.split_hyper(theta) else {
            return f64::NEG_INFINITY;
        };
        let c_v = hyper.sigma_x * (1.0 - hyper.phi_x).sqrt();
        let c_w = hyper.sigma_x * hyper.phi_x.sqrt();
        let etas = self.predictors(x, c_v, c_w);

        // Generalised binomial with p = sigmoid(eta), written through
        // softplus so extreme predictors stay finite.
        let mut value = self.lgamma_const;
        for (o, &eta) in self.obs.iter().zip(&etas) {
            value += -o.y * softplus(-eta) - (o.m_eff - o.y) * softplus(eta);
        }

        let beta0 = x[0];
        value += -0.5 * LN_2PI - INTERCEPT_SD.ln()
            - 0.5 * beta0 * beta0 / (INTERCEPT_SD * INTERCEPT_SD);

        let na = self.n_areas;
        let v = x.rows(1, na);
        value += -0.5 * na as f64 * LN_2PI - 0.5 * v.norm_squared();

        let w = x.rows(1 + na, na);
        let qw = &self.q_struct * w;
        value += 0.5 * self.log_det_q_struct
            - 0.5 * na as f64 * LN_2PI
            - 0.5 * w.dot(&qw);

        value += half_normal_log_density_on_log_scale(theta[0]);
        value += beta_half_log_density_on_logit_scale(theta[1]);

        if let Some((sigma_a, phi_a)) = hyper.age {
            let u = x.rows(1 + 2 * na, self.n_ages);
            let q_age = precision_ar1(self.n_ages, sigma_a, phi_a)
                .expect("saturation guarded in split_hyper")
                .matrix;
            let qu = &q_age * u;
            value += 0.5 * ar1_log_det(self.n_ages, sigma_a, phi_a)
                - 0.5 * self.n_ages as f64 * LN_2PI
                - 0.5 * u.dot(&qu);
            value += half_normal_log_density_on_log_scale(theta[2]);
            value += uniform_ar1_log_density_on_real_scale(theta[3]);
        }

        value
    }

    fn latent_gradient(&self, x: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
        let hyper = self.split_hyper(theta).expect("gradient needs valid hyperparameters");
        let c_v = hyper.sigma_x * (1.0 - hyper.phi_x).sqrt();
        let c_w = hyper.sigma_x * hyper.phi_x.sqrt();
        let etas = self.predictors(x, c_v, c_w);
        let na = self.n_areas;
        let n = self.space.latent_dim();
        let mut grad = DVector::zeros(n);

        for (o, &eta) in self.obs.iter().zip(&etas) {
            let residual = o.y - o.m_eff * sigmoid(eta);
            grad[0] += residual;
            grad[1 + o.area] += c_v * residual;
            grad[1 + na + o.area] += c_w * residual;
            if self.age_effect {
                grad[1 + 2 * na + o.age] += residual;
            }
        }

        grad[0] -= x[0] / (INTERCEPT_SD * INTERCEPT_SD);
        for i in 0..na {
            grad[1 + i] -= x[1 + i];
        }
        let w = x.rows(1 + na, na);
        let qw = &self.q_struct * w;
        for i in 0..na {
            grad[1 + na + i] -= qw[i];
        }
        if let Some((sigma_a, phi_a)) = hyper.age {
            let q_age = precision_ar1(self.n_ages, sigma_a, phi_a)
                .expect("saturation guarded in split_hyper")
                .matrix;
            let u = x.rows(1 + 2 * na, self.n_ages);
            let qu = &q_age * u;
            for a in 0..self.n_ages {
                grad[1 + 2 * na + a] -= qu[a];
            }
        }
        grad
    }

    fn latent_hessian(&self, x: &DVector<f64>, theta: &DVector<f64>) -> DMatrix<f64> {
        let hyper = self.split_hyper(theta).expect("Hessian needs valid hyperparameters");
        let c_v = hyper.sigma_x * (1.0 - hyper.phi_x).sqrt();
        let c_w = hyper.sigma_x * hyper.phi_x.sqrt();
        let etas = self.predictors(x, c_v, c_w);
        let na = self.n_areas;
        let n = self.space.latent_dim();
        let mut hess = DMatrix::zeros(n, n);

        for (o, &eta) in self.obs.iter().zip(&etas) {
            let p = sigmoid(eta);
            let weight = o.m_eff * p * (1.0 - p);
            // Non-zero design entries of this observation.
            let mut entries = [(0usize, 1.0), (1 + o.area, c_v), (1 + na + o.area, c_w), (0, 0.0)];
            let mut count = 3;
            if self.age_effect {
                entries[3] = (1 + 2 * na + o.age, 1.0);
                count = 4;
            }
            for a in 0..count {
                for b in 0..count {
                    let (ia, ca) = entries[a];
                    let (ib, cb) = entries[b];
                    hess[(ia, ib)] += weight * ca * cb;
                }
            }
        }

        hess[(0, 0)] += 1.0 / (INTERCEPT_SD * INTERCEPT_SD);
        for i in 0..na {
            hess[(1 + i, 1 + i)] += 1.0;
        }
        for i in 0..na {
            for j in 0..na {
                hess[(1 + na + i, 1 + na + j)] += self.q_struct[(i, j)];
            }
        }
        if let Some((sigma_a, phi_a)) = hyper.age {
            let q_age = precision_ar1(self.n_ages, sigma_a, phi_a)
                .expect("saturation guarded in split_hyper")
                .matrix;
            for a in 0..self.n_ages {
                for b in 0..self.n_ages {
                    hess[(1 + 2 * na + a, 1 + 2 * na + b)] += q_age[(a, b)];
                }
            }
        }
        hess
    }

    fn output_map(&self, x: &DVector<f64>, theta: &DVector<f64>) -> Vec<f64> {
        let mut out = self.area_prevalence(x, theta);
        let overall = out.iter().sum::<f64>() / out.len() as f64;
        out.push(overall);
        out
    }

    fn output_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.n_areas).map(|i| format!("rho[{i}]")).collect();
        names.push("rho_overall".to_string());
        names
    }
}

fn parse_data(text: &str, n_areas: usize) -> Result<(Vec<Observation>, usize)> {
    let mut obs = Vec::new();
    let mut age_labels: Vec<String> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("area_id") {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 5 {
            return Err(Error::Parse(format!("data row {} needs 5 columns", idx + 1)));
        }
        let area: usize = cells[0]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad area_id in row {}", idx + 1)))?;
        if area >= n_areas {
            return Err(Error::Parse(format!(
                "area_id {area} outside the adjacency graph (n = {n_areas})"
            )));
        }
        let age_label = cells[1].trim().to_string();
        let age = match age_labels.iter().position(|l| *l == age_label) {
            Some(i) => i,
            None => {
                age_labels.push(age_label);
                age_labels.len() - 1
            }
        };
        let y: f64 = cells[3]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad y in row {}", idx + 1)))?;
        let m_eff: f64 = cells[4]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad m_eff in row {}", idx + 1)))?;
        if !(0.0 <= y && y <= m_eff) {
            return Err(Error::Parse(format!("row {}: need 0 <= y <= m_eff", idx + 1)));
        }
        obs.push(Observation { area, age, y, m_eff });
    }
    if obs.is_empty() {
        return Err(Error::Parse("no observations in data file".into()));
    }
    Ok((obs, age_labels.len()))
}

/// Ground-truth parameters behind the shipped fixture.
pub mod fixture {
    use super::*;

    /// One fixed seed; the shipped files were generated from it exactly once.
    pub const SEED: u64 = 20240101;
    pub const N_ROWS: usize = 3;
    pub const N_COLS: usize = 4;
    pub const N_AGES: usize = 3;
    pub const TRUE_BETA0: f64 = -2.0;
    pub const TRUE_SIGMA_X: f64 = 0.5;
    pub const TRUE_PHI_X: f64 = 0.5;
    pub const TRUE_SIGMA_A: f64 = 0.3;
    pub const TRUE_PHI_A: f64 = 0.7;

    /// Deterministic uniform stream independent of external RNG crates, so
    /// the shipped fixture can be regenerated bit-for-bit.
    struct Stream(rand_chacha::ChaCha20Rng);

    impl Stream {
        fn new(seed: u64) -> Self {
            use rand::SeedableRng;
            Stream(rand_chacha::ChaCha20Rng::seed_from_u64(seed))
        }

        fn uniform(&mut self) -> f64 {
            use rand::RngCore;
            // 53-bit mantissa uniform in [0, 1).
            (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
        }

        fn normal(&mut self) -> f64 {
            // Box-Muller; consumes exactly two uniforms.
            let u1 = self.uniform().max(1e-300);
            let u2 = self.uniform();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        }
    }

    pub fn adjacency_csv() -> String {
        let adj = Adjacency::grid(N_ROWS, N_COLS);
        let mut out = String::from("a,b\n");
        for (a, b) in adj.edges() {
            out.push_str(&format!("{a},{b}\n"));
        }
        out
    }

    /// Draw latent effects from their priors and observations from the
    /// generalised binomial working likelihood at the ground truth.
    pub fn data_csv(seed: u64) -> String {
        let n_areas = N_ROWS * N_COLS;
        let adj = Adjacency::grid(N_ROWS, N_COLS);
        let icar = precision_icar(&adj, true).expect("grid adjacency is valid");
        let constraint_sd = SUM_CONSTRAINT_SD_PER_NODE * n_areas as f64;
        let mut q_struct = icar.matrix;
        for i in 0..n_areas {
            for j in 0..n_areas {
                q_struct[(i, j)] += 1.0 / (constraint_sd * constraint_sd);
            }
        }
        let chol_struct: Cholesky<f64, Dyn> =
            Cholesky::new(q_struct).expect("constrained precision is positive definite");
        let q_age = precision_ar1(N_AGES, TRUE_SIGMA_A, TRUE_PHI_A)
            .expect("ground truth is stationary")
            .matrix;
        let chol_age: Cholesky<f64, Dyn> =
            Cholesky::new(q_age).expect("AR1 precision is positive definite");

        let mut stream = Stream::new(seed);
        let v: Vec<f64> = (0..n_areas).map(|_| stream.normal()).collect();
        let eps_w = DVector::from_fn(n_areas, |_, _| stream.normal());
        let w = chol_struct
            .l()
            .transpose()
            .solve_upper_triangular(&eps_w)
            .expect("triangular solve succeeds");
        let eps_u = DVector::from_fn(N_AGES, |_, _| stream.normal());
        let u = chol_age
            .l()
            .transpose()
            .solve_upper_triangular(&eps_u)
            .expect("triangular solve succeeds");

        let c_v = TRUE_SIGMA_X * (1.0 - TRUE_PHI_X).sqrt();
        let c_w = TRUE_SIGMA_X * TRUE_PHI_X.sqrt();

        let mut out = String::from("area_id,age_group,sex,y,m_eff\n");
        for area in 0..n_areas {
            for age in 0..N_AGES {
                let eta = TRUE_BETA0 + c_v * v[area] + c_w * w[area] + u[age];
                let p = sigmoid(eta);
                let m_eff = ((1.0 + 5.0 * stream.uniform()) * 10.0).round() / 10.0;
                // Weighted-survey flavour: integer trials at an inflated raw
                // size, scaled back to the effective size.
                let n_raw = (1.5 * m_eff).round() as usize;
                let mut successes = 0usize;
                for _ in 0..n_raw {
                    if stream.uniform() < p {
                        successes += 1;
                    }
                }
                let mut y = successes as f64 * m_eff / n_raw as f64;
                y = (y * 1000.0).round() / 1000.0;
                y = y.min(m_eff);
                out.push_str(&format!("{area},a{age},all,{y:.3},{m_eff:.1}\n"));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_model() -> MiniElgmModel {
        MiniElgmModel::from_config(&MiniElgmConfig::default()).unwrap()
    }

    fn age_model() -> MiniElgmModel {
        MiniElgmModel::from_config(&MiniElgmConfig {
            age_effect: true,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn dimensions_match_design() {
        let model = base_model();
        assert_eq!(model.space().latent_dim(), 1 + 2 * 12);
        assert_eq!(model.space().hyper_dim(), 2);
        let model = age_model();
        assert_eq!(model.space().latent_dim(), 1 + 2 * 12 + 4);
        assert_eq!(model.space().hyper_dim(), 4);
    }

    #[test]
    fn shipped_fixture_matches_generator() {
        assert_eq!(FIXTURE_DATA, fixture::data_csv(fixture::SEED));
        assert_eq!(FIXTURE_ADJACENCY, fixture::adjacency_csv());
    }

    #[test]
    fn analytic_derivatives_pass_validation() {
        for model in [base_model(), age_model()] {
            let report = crate::model::validate_model(&model, 4, 99);
            assert!(report.passed, "{:?}", report.failures);
            assert!(report.max_gradient_error < 1e-4);
            assert!(report.max_hessian_error < 1e-4);
        }
    }

    #[test]
    fn log_joint_decays_along_latent_rays() {
        assert!(crate::model::ray_decay_check(&base_model(), 10, 5));
    }

    #[test]
    fn saturated_hyperparameters_are_rejected_not_fatal() {
        let model = age_model();
        let n = model.space().latent_dim();
        let x = DVector::zeros(n);
        // Values where the constrained-scale map saturates in floating point.
        for bad in [
            vec![0.0, 40.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 40.0],
            vec![0.0, 0.0, 0.0, -800.0],
            vec![800.0, 0.0, 0.0, 0.0],
        ] {
            let value = model.log_joint(&x, &DVector::from_vec(bad.clone()));
            assert_eq!(value, f64::NEG_INFINITY, "theta = {bad:?}");
        }
        // A merely extreme proportion is still inside the open interval.
        let extreme = model.log_joint(&x, &DVector::from_vec(vec![0.0, -40.0, 0.0, 0.0]));
        assert!(extreme.is_finite());
    }

    #[test]
    fn likelihood_matches_xbin_for_moderate_predictors() {
        use crate::models::stats::xbin_log_density;
        let model = base_model();
        let n = model.space().latent_dim();
        let x = DVector::from_element(n, 0.05);
        let etas = model.predictors(&x, 0.3, 0.4);
        let direct: f64 = model
            .obs
            .iter()
            .zip(&etas)
            .map(|(o, &eta)| xbin_log_density(o.y, o.m_eff, sigmoid(eta)).unwrap())
            .sum();
        let stable: f64 = model.lgamma_const
            + model
                .obs
                .iter()
                .zip(&etas)
                .map(|(o, &eta)| -o.y * softplus(-eta) - (o.m_eff - o.y) * softplus(eta))
                .sum::<f64>();
        assert!((direct - stable).abs() < 1e-10);
    }

    #[test]
    fn outputs_are_probabilities() {
        let model = base_model();
        let x = DVector::from_element(model.space().latent_dim(), 0.1);
        let theta = DVector::from_vec(vec![0.0, 0.0]);
        let out = model.output_map(&x, &theta);
        assert_eq!(out.len(), model.output_names().len());
        assert!(out.iter().all(|p| (0.0..1.0).contains(p)));
    }

    #[test]
    fn rejects_bad_data() {
        let adj = Adjacency::grid(3, 4);
        assert!(MiniElgmModel::new("area_id,age_group,sex,y,m_eff\n", &adj, false).is_err());
        assert!(MiniElgmModel::new(
            "area_id,age_group,sex,y,m_eff\n99,a0,all,1.0,10.0\n",
            &adj,
            false
        )
        .is_err());
        assert!(MiniElgmModel::new(
            "area_id,age_group,sex,y,m_eff\n0,a0,all,11.0,10.0\n",
            &adj,
            false
        )
        .is_err());
        // Age variant needs at least two age groups.
        assert!(MiniElgmModel::new(
            "area_id,age_group,sex,y,m_eff\n0,a0,all,1.0,10.0\n",
            &adj,
            true
        )
        .is_err());
    }
}
