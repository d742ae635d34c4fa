//! Gauss-Hermite rules for the standard Gaussian weight and their product grids.
//!
//! Nodes are the zeros of the probabilists' Hermite polynomial `He_k`. Weights
//! are stored in Lebesgue form `omega_k(z) = k! / (He_{k+1}(z)^2 phi(z))`, so
//! that `sum_z omega_k(z) f(z)` approximates the plain integral of `f` and
//! `sum_z omega_k(z) phi(z)` is exactly one. Multivariate grids are Cartesian
//! products with per-dimension levels and product weights.

use nalgebra::{DMatrix, SymmetricEigen};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Largest supported number of nodes per dimension. Beyond this the weight
/// formula overflows even in log space intermediates we rely on.
pub const MAX_LEVEL: usize = 25;

/// Default cap on the total number of product-grid points.
pub const DEFAULT_POINT_BUDGET: u64 = 1_000_000;

const LN_2PI: f64 = 1.8378770664093453;

/// Evaluate the probabilists' Hermite polynomial `He_k` at `z` using the
/// three-term recurrence `He_0 = 1`, `He_1 = z`, `He_{j+1} = z He_j - j He_{j-1}`.
pub fn hermite_eval(k: usize, z: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let mut prev = 1.0;
    let mut cur = z;
    for j in 1..k {
        let next = z * cur - j as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// A univariate Gauss-Hermite rule for the standard Gaussian weight.
#[derive(Debug, Clone)]
pub struct UnivariateRule {
    level: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
}

impl UnivariateRule {
    pub fn level(&self) -> usize {
        self.level
    }

    /// Nodes in ascending order, symmetric about zero.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Lebesgue-form weights `omega_k(z)`, aligned with `nodes`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }
}

/// Construct the `k`-node rule: nodes from the eigenvalues of the symmetric
/// tridiagonal Jacobi matrix of the `He` recurrence, one Newton polish step,
/// then exact symmetrisation. Weights are computed in log space from
/// `omega_k(z) = k! / (He_{k+1}(z)^2 phi(z))`.
pub fn univariate_rule(k: usize) -> Result<UnivariateRule> {
    if k == 0 {
        return Err(Error::InvalidArgument("quadrature level must be >= 1".into()));
    }
    if k > MAX_LEVEL {
        return Err(Error::LevelTooLarge { level: k, max: MAX_LEVEL });
    }

    // Jacobi matrix: zero diagonal, off-diagonal sqrt(j) for j = 1..k-1.
    let mut jacobi = DMatrix::<f64>::zeros(k, k);
    for j in 1..k {
        let b = (j as f64).sqrt();
        jacobi[(j, j - 1)] = b;
        jacobi[(j - 1, j)] = b;
    }
    let eigen = SymmetricEigen::new(jacobi);
    let mut nodes: Vec<f64> = eigen.eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // One Newton step: He_k'(z) = k He_{k-1}(z).
    for z in nodes.iter_mut() {
        let deriv = k as f64 * hermite_eval(k - 1, *z);
        if deriv != 0.0 {
            *z -= hermite_eval(k, *z) / deriv;
        }
    }

    // Symmetrise node pairs exactly; the middle node of an odd rule is 0.
    for i in 0..k / 2 {
        let t = 0.5 * (nodes[k - 1 - i] - nodes[i]);
        nodes[i] = -t;
        nodes[k - 1 - i] = t;
    }
    if k % 2 == 1 {
        nodes[k / 2] = 0.0;
    }

    // Positional convergence check, scaled because |He_k| near an outer root
    // of a high-order rule is dominated by the derivative magnitude.
    for &z in &nodes {
        let residual = hermite_eval(k, z);
        let deriv = k as f64 * hermite_eval(k - 1, z);
        let step = if deriv != 0.0 { (residual / deriv).abs() } else { residual.abs() };
        if !step.is_finite() || step > 1e-12 * z.abs().max(1.0) {
            return Err(Error::RootFinding { level: k, residual: step });
        }
    }

    let ln_factorial = ln_gamma(k as f64 + 1.0);
    let mut log_weights = vec![0.0; k];
    for i in 0..(k + 1) / 2 {
        // Compute on the non-negative representative and mirror, so paired
        // weights are bit-identical.
        let z = nodes[k - 1 - i];
        let lw = ln_factorial - 2.0 * hermite_eval(k + 1, z).abs().ln() + 0.5 * z * z
            + 0.5 * LN_2PI;
        log_weights[k - 1 - i] = lw;
        log_weights[i] = lw;
    }
    let weights: Vec<f64> = log_weights.iter().map(|lw| lw.exp()).collect();

    Ok(UnivariateRule { level: k, nodes, weights, log_weights })
}

/// Per-dimension node counts for a product grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridSpec {
    levels: Vec<usize>,
}

impl GridSpec {
    pub fn new(levels: Vec<usize>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidArgument("grid spec needs at least one dimension".into()));
        }
        for &k in &levels {
            if k == 0 {
                return Err(Error::InvalidArgument("all grid levels must be >= 1".into()));
            }
            if k > MAX_LEVEL {
                return Err(Error::LevelTooLarge { level: k, max: MAX_LEVEL });
            }
        }
        Ok(GridSpec { levels })
    }

    /// `k` nodes in every one of `m` dimensions.
    pub fn uniform(m: usize, k: usize) -> Result<Self> {
        Self::new(vec![k; m])
    }

    /// `k` nodes in the first `s` dimensions, one node in the rest.
    pub fn truncated(m: usize, s: usize, k: usize) -> Result<Self> {
        if s > m {
            return Err(Error::InvalidArgument(format!(
                "retained rank {s} exceeds dimension {m}"
            )));
        }
        let mut levels = vec![1usize; m];
        levels[..s].fill(k);
        Self::new(levels)
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn dim(&self) -> usize {
        self.levels.len()
    }

    pub fn is_uniform(&self) -> bool {
        self.levels.iter().all(|&k| k == self.levels[0])
    }

    pub fn total_points(&self) -> u128 {
        self.levels.iter().map(|&k| k as u128).product()
    }
}

/// An unadapted multivariate product rule in z-space.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    dim: usize,
    /// One row per point, `dim` columns.
    points: DMatrix<f64>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    /// Product weight `omega~(z)` of each point.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }
}

/// Cartesian product of per-dimension rules with the default point budget.
pub fn product_grid(spec: &GridSpec) -> Result<QuadratureGrid> {
    product_grid_with_budget(spec, DEFAULT_POINT_BUDGET)
}

/// Enumeration is lexicographic with dimension 1 slowest, so downstream sums
/// over nodes are reproducible.
pub fn product_grid_with_budget(spec: &GridSpec, budget: u64) -> Result<QuadratureGrid> {
    let total = spec.total_points();
    if total > budget as u128 {
        return Err(Error::PointBudgetExceeded { points: total, budget });
    }
    let total = total as usize;
    let m = spec.dim();

    let rules: Vec<UnivariateRule> =
        spec.levels().iter().map(|&k| univariate_rule(k)).collect::<Result<_>>()?;

    let mut points = DMatrix::<f64>::zeros(total, m);
    let mut weights = vec![0.0; total];
    let mut log_weights = vec![0.0; total];
    let mut index = vec![0usize; m];
    for row in 0..total {
        let mut w = 1.0;
        let mut lw = 0.0;
        for j in 0..m {
            points[(row, j)] = rules[j].nodes()[index[j]];
            w *= rules[j].weights()[index[j]];
            lw += rules[j].log_weights()[index[j]];
        }
        weights[row] = w;
        log_weights[row] = lw;
        // Odometer step, last dimension fastest.
        for j in (0..m).rev() {
            index[j] += 1;
            if index[j] < rules[j].level() {
                break;
            }
            index[j] = 0;
        }
    }

    Ok(QuadratureGrid { dim: m, points, weights, log_weights })
}

/// Standard Gaussian density.
pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z - 0.5 * LN_2PI).exp()
}

/// Quadrature estimate of the Gaussian moment `E[Z^p]`, summed over
/// symmetric node pairs so odd-moment cancellation is exact rather than
/// drowned by the magnitude of the individual terms.
pub fn monomial_moment(rule: &UnivariateRule, p: u32) -> f64 {
    let k = rule.level();
    let term = |i: usize| -> f64 {
        let z = rule.nodes()[i];
        z.powi(p as i32) * rule.weights()[i] * std_normal_pdf(z)
    };
    let mut acc = 0.0;
    for i in 0..k / 2 {
        acc += term(i) + term(k - 1 - i);
    }
    if k % 2 == 1 {
        acc += term(k / 2);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hermite_recurrence_examples() {
        assert_eq!(hermite_eval(0, 7.3), 1.0);
        assert_eq!(hermite_eval(2, 0.0), -1.0);
        assert_eq!(hermite_eval(3, 2.0), 2.0);
        // He_4(z) = z^4 - 6 z^2 + 3
        assert_relative_eq!(hermite_eval(4, 1.5), 1.5f64.powi(4) - 6.0 * 2.25 + 3.0);
    }

    #[test]
    fn single_node_rule_is_laplace_weight() {
        let rule = univariate_rule(1).unwrap();
        assert_eq!(rule.nodes(), &[0.0]);
        // omega_1(0) = 1 / phi(0) = sqrt(2 pi)
        assert_relative_eq!(
            rule.weights()[0],
            (2.0 * std::f64::consts::PI).sqrt(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn two_node_rule() {
        let rule = univariate_rule(2).unwrap();
        assert_relative_eq!(rule.nodes()[0], -1.0, epsilon = 1e-13);
        assert_relative_eq!(rule.nodes()[1], 1.0, epsilon = 1e-13);
        // 0.5 / phi(1), high-precision oracle value
        assert_relative_eq!(rule.weights()[0], 2.06636567706125, epsilon = 1e-10);
        assert_relative_eq!(rule.weights()[1], 2.06636567706125, epsilon = 1e-10);
    }

    #[test]
    fn three_node_rule() {
        let rule = univariate_rule(3).unwrap();
        let s3 = 3f64.sqrt();
        assert_relative_eq!(rule.nodes()[0], -s3, epsilon = 1e-13);
        assert_relative_eq!(rule.nodes()[1], 0.0, epsilon = 1e-13);
        assert_relative_eq!(rule.nodes()[2], s3, epsilon = 1e-13);
        // Golub-Welsch weights divided by phi, oracle values
        assert_relative_eq!(rule.weights()[0], 1.87232142363569, epsilon = 1e-10);
        assert_relative_eq!(rule.weights()[1], 1.67108551642067, epsilon = 1e-10);
        assert_relative_eq!(rule.weights()[2], 1.87232142363569, epsilon = 1e-10);
    }

    #[test]
    fn gaussian_mass_is_one_for_all_levels() {
        for k in 1..=MAX_LEVEL {
            let rule = univariate_rule(k).unwrap();
            let mass: f64 =
                rule.nodes().iter().zip(rule.weights()).map(|(&z, &w)| w * std_normal_pdf(z)).sum();
            assert!((mass - 1.0).abs() < 1e-12, "k={k} mass={mass}");
        }
    }

    #[test]
    fn nodes_symmetric_weights_positive() {
        for k in 1..=MAX_LEVEL {
            let rule = univariate_rule(k).unwrap();
            for i in 0..k {
                assert_eq!(rule.nodes()[i], -rule.nodes()[k - 1 - i], "k={k}");
                assert_eq!(rule.weights()[i], rule.weights()[k - 1 - i], "k={k}");
                assert!(rule.weights()[i] > 0.0);
            }
        }
    }

    fn gaussian_moment(p: u32) -> f64 {
        // E[Z^p] for standard normal: 0 for odd p, (p-1)!! for even p.
        if p % 2 == 1 {
            0.0
        } else {
            let mut acc = 1.0;
            let mut j = p as i64 - 1;
            while j > 1 {
                acc *= j as f64;
                j -= 2;
            }
            acc
        }
    }

    #[test]
    fn polynomial_exactness_up_to_2k_minus_1() {
        for k in 1..=MAX_LEVEL {
            let rule = univariate_rule(k).unwrap();
            for p in 0..=(2 * k as u32 - 1) {
                let approx = monomial_moment(&rule, p);
                let exact = gaussian_moment(p);
                let scale = approx.abs().max(exact.abs()).max(1.0);
                assert!(
                    (approx - exact).abs() / scale < 1e-10,
                    "k={k} p={p} approx={approx} exact={exact}"
                );
            }
        }
    }

    #[test]
    fn level_bounds_rejected() {
        assert!(univariate_rule(0).is_err());
        assert!(matches!(univariate_rule(26), Err(Error::LevelTooLarge { .. })));
    }

    #[test]
    fn product_grid_counts_and_structure() {
        let g = product_grid(&GridSpec::new(vec![3, 3]).unwrap()).unwrap();
        assert_eq!(g.len(), 9);

        let g = product_grid(&GridSpec::new(vec![3, 1]).unwrap()).unwrap();
        assert_eq!(g.len(), 3);
        for row in 0..3 {
            assert_eq!(g.points()[(row, 1)], 0.0);
        }

        let g = product_grid(&GridSpec::new(vec![1, 1, 1]).unwrap()).unwrap();
        assert_eq!(g.len(), 1);
        let two_pi = 2.0 * std::f64::consts::PI;
        assert_relative_eq!(g.weights()[0], two_pi.powf(1.5), epsilon = 1e-12);
    }

    #[test]
    fn product_grid_enumeration_is_dimension_one_slowest() {
        let g = product_grid(&GridSpec::new(vec![2, 3]).unwrap()).unwrap();
        let r2 = univariate_rule(2).unwrap();
        let r3 = univariate_rule(3).unwrap();
        let mut row = 0;
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(g.points()[(row, 0)], r2.nodes()[i]);
                assert_eq!(g.points()[(row, 1)], r3.nodes()[j]);
                row += 1;
            }
        }
    }

    #[test]
    fn multivariate_gaussian_mass_is_one() {
        for levels in [vec![3, 5], vec![2, 1, 4], vec![7, 7, 1, 3]] {
            let g = product_grid(&GridSpec::new(levels.clone()).unwrap()).unwrap();
            let mass: f64 = (0..g.len())
                .map(|r| {
                    let phi: f64 =
                        (0..g.dim()).map(|j| std_normal_pdf(g.points()[(r, j)])).product();
                    g.weights()[r] * phi
                })
                .sum();
            assert!((mass - 1.0).abs() < 1e-10, "levels={levels:?} mass={mass}");
        }
    }

    #[test]
    fn budget_enforced() {
        let spec = GridSpec::new(vec![10, 10, 10]).unwrap();
        assert!(matches!(
            product_grid_with_budget(&spec, 999),
            Err(Error::PointBudgetExceeded { points: 1000, .. })
        ));
        assert!(product_grid_with_budget(&spec, 1000).is_ok());
    }
}
