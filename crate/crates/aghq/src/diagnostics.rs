//! Comparison metrics between two posteriors (KS, MMD, point-estimate
//! errors, exceedance probabilities, posterior contraction) and the
//! node-coverage diagnostic for quadrature grids.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Policy threshold for ART coverage: the "second 90", 0.9^2.
pub const SECOND_90_THRESHOLD: f64 = 0.81;

/// Policy threshold for high annual HIV incidence.
pub const HIGH_INCIDENCE_THRESHOLD: f64 = 0.01;

/// Standard deviation of uniformly spread quantiles, `1 / sqrt(12)`.
pub const NODE_COVERAGE_TARGET: f64 = 0.28867513459481287;

/// Two-sample Kolmogorov-Smirnov statistic: the supremum over pooled points
/// of the absolute difference of the right-continuous ECDFs.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "samples must be nonempty");
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let na = sa.len() as f64;
    let nb = sb.len() as f64;

    let mut i = 0usize;
    let mut j = 0usize;
    let mut sup = 0.0f64;
    while i < sa.len() || j < sb.len() {
        let point = match (sa.get(i), sb.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => break,
        };
        while i < sa.len() && sa[i] <= point {
            i += 1;
        }
        while j < sb.len() && sb[j] <= point {
            j += 1;
        }
        sup = sup.max((i as f64 / na - j as f64 / nb).abs());
    }
    sup
}

/// Result of an MMD evaluation, carrying the bandwidth actually used.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MmdResult {
    pub value: f64,
    pub bandwidth: f64,
}

/// Median-heuristic kernel bandwidth: `sigma = 1 / (2 median^2)` of the
/// pairwise Euclidean distances over the pooled rows.
pub fn median_heuristic_bandwidth(pooled: &DMatrix<f64>) -> f64 {
    let n = pooled.nrows();
    let mut distances = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut d2 = 0.0;
            for c in 0..pooled.ncols() {
                let diff = pooled[(i, c)] - pooled[(j, c)];
                d2 += diff * diff;
            }
            distances.push(d2.sqrt());
        }
    }
    distances.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let median = if distances.is_empty() {
        1.0
    } else {
        let mid = distances.len() / 2;
        if distances.len() % 2 == 0 {
            0.5 * (distances[mid - 1] + distances[mid])
        } else {
            distances[mid]
        }
    };
    if median > 0.0 {
        1.0 / (2.0 * median * median)
    } else {
        1.0
    }
}

/// Maximum mean discrepancy between two joint sample sets with the Gaussian
/// kernel `k(a, b) = exp(-sigma |a - b|^2)`, as the biased V-statistic with
/// diagonal terms included. Sample counts are equalised by deterministic
/// evenly-spaced subsampling of the larger set. The inner value is clamped
/// at zero before the square root.
pub fn mmd(a: &DMatrix<f64>, b: &DMatrix<f64>, bandwidth: Option<f64>) -> Result<MmdResult> {
    mmd_with_order(a, b, bandwidth, 1)
}

/// MMD on draws raised elementwise to `moment_order` before kernel
/// evaluation; order one is the plain statistic.
pub fn mmd_with_order(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    bandwidth: Option<f64>,
    moment_order: u32,
) -> Result<MmdResult> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch { left: a.ncols(), right: b.ncols() });
    }
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::InvalidArgument("MMD needs nonempty samples".into()));
    }
    let s = a.nrows().min(b.nrows());
    let a = subsample(a, s);
    let b = subsample(b, s);
    let a = power_transform(&a, moment_order);
    let b = power_transform(&b, moment_order);

    let sigma = match bandwidth {
        Some(value) => {
            if !(value > 0.0) {
                return Err(Error::InvalidArgument("bandwidth must be positive".into()));
            }
            value
        }
        None => {
            let mut pooled = DMatrix::zeros(2 * s, a.ncols());
            pooled.rows_mut(0, s).copy_from(&a);
            pooled.rows_mut(s, s).copy_from(&b);
            median_heuristic_bandwidth(&pooled)
        }
    };

    let kernel_sum = |x: &DMatrix<f64>, y: &DMatrix<f64>| -> f64 {
        let mut acc = 0.0;
        for i in 0..x.nrows() {
            for j in 0..y.nrows() {
                let mut d2 = 0.0;
                for c in 0..x.ncols() {
                    let diff = x[(i, c)] - y[(j, c)];
                    d2 += diff * diff;
                }
                acc += (-sigma * d2).exp();
            }
        }
        acc
    };

    let s2 = (s * s) as f64;
    let value2 =
        kernel_sum(&a, &a) / s2 - 2.0 * kernel_sum(&a, &b) / s2 + kernel_sum(&b, &b) / s2;
    Ok(MmdResult { value: value2.max(0.0).sqrt(), bandwidth: sigma })
}

fn subsample(x: &DMatrix<f64>, s: usize) -> DMatrix<f64> {
    let n = x.nrows();
    if n == s {
        return x.clone();
    }
    let mut out = DMatrix::zeros(s, x.ncols());
    for i in 0..s {
        let row = i * n / s;
        for c in 0..x.ncols() {
            out[(i, c)] = x[(row, c)];
        }
    }
    out
}

fn power_transform(x: &DMatrix<f64>, order: u32) -> DMatrix<f64> {
    if order == 1 {
        x.clone()
    } else {
        x.map(|v| v.powi(order as i32))
    }
}

/// RMSE and MAE over aligned per-parameter values.
pub fn point_error(estimate: &[f64], reference: &[f64]) -> Result<(f64, f64)> {
    if estimate.len() != reference.len() {
        return Err(Error::DimensionMismatch { left: estimate.len(), right: reference.len() });
    }
    if estimate.is_empty() {
        return Err(Error::InvalidArgument("point_error needs at least one value".into()));
    }
    let n = estimate.len() as f64;
    let mut sq = 0.0;
    let mut abs = 0.0;
    for (e, r) in estimate.iter().zip(reference) {
        let d = e - r;
        sq += d * d;
        abs += d.abs();
    }
    Ok(((sq / n).sqrt(), abs / n))
}

/// Fraction of draws strictly above the threshold.
pub fn exceedance(samples: &[f64], threshold: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("exceedance needs at least one draw".into()));
    }
    let above = samples.iter().filter(|&&v| v > threshold).count();
    Ok(above as f64 / samples.len() as f64)
}

/// Posterior contraction `1 - post_var / prior_var`: zero when the data are
/// uninformative, one when the posterior concentrates on a point.
pub fn contraction(prior_var: f64, post_var: f64) -> Result<f64> {
    if !(prior_var > 0.0) {
        return Err(Error::InvalidArgument("prior variance must be positive".into()));
    }
    if post_var < 0.0 {
        return Err(Error::InvalidArgument("posterior variance must be non-negative".into()));
    }
    Ok(1.0 - post_var / prior_var)
}

/// Node coverage of one marginal.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CoverageScore {
    /// Population standard deviation of the reference quantiles of the
    /// distinct projected node values; evenly spread nodes score 1/sqrt(12).
    pub sd: f64,
    pub degenerate: bool,
}

/// Map each distinct projected node value through the reference ECDF and
/// report the spread of the resulting quantiles.
pub fn node_coverage(node_projections: &[f64], reference: &[f64]) -> CoverageScore {
    assert!(!reference.is_empty(), "reference sample must be nonempty");
    let mut distinct = node_projections.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < 2 {
        return CoverageScore { sd: 0.0, degenerate: true };
    }
    let mut sorted_ref = reference.to_vec();
    sorted_ref.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted_ref.len() as f64;
    let quantiles: Vec<f64> = distinct
        .iter()
        .map(|&v| {
            let count = sorted_ref.partition_point(|&r| r <= v);
            count as f64 / n
        })
        .collect();
    let mean = quantiles.iter().sum::<f64>() / quantiles.len() as f64;
    let variance =
        quantiles.iter().map(|q| (q - mean) * (q - mean)).sum::<f64>() / quantiles.len() as f64;
    CoverageScore { sd: variance.sqrt(), degenerate: false }
}

/// Block label of a parameter name: the part before an index bracket.
pub fn block_label(name: &str) -> &str {
    match name.find('[') {
        Some(pos) => &name[..pos],
        None => name,
    }
}

/// Average per-parameter KS within each block, in first-appearance order.
pub fn grouped_ks(per_parameter: &[(String, f64)]) -> Vec<(String, f64)> {
    let mut order: Vec<String> = Vec::new();
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for (name, value) in per_parameter {
        let label = block_label(name).to_string();
        match order.iter().position(|l| *l == label) {
            Some(idx) => {
                sums[idx].0 += value;
                sums[idx].1 += 1;
            }
            None => {
                order.push(label);
                sums.push((*value, 1));
            }
        }
    }
    order
        .into_iter()
        .zip(sums)
        .map(|(label, (sum, count))| (label, sum / count as f64))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedValue {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExceedanceEntry {
    pub column: String,
    pub threshold: f64,
    pub p_a: f64,
    pub p_b: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonMetadata {
    pub method_a: String,
    pub method_b: String,
    pub n_a: usize,
    pub n_b: usize,
    pub columns: usize,
    pub mmd_subsample: usize,
}

/// Full comparison between two aligned sample sets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub ks: Vec<NamedValue>,
    pub ks_by_block: Vec<NamedValue>,
    pub mmd: f64,
    pub mmd_bandwidth: f64,
    pub mmd_order3: f64,
    pub rmse_mean: f64,
    pub mae_mean: f64,
    pub rmse_sd: f64,
    pub mae_sd: f64,
    pub exceedance: Vec<ExceedanceEntry>,
    pub metadata: ComparisonMetadata,
}

fn column_mean_sd(x: &DMatrix<f64>, c: usize) -> (f64, f64) {
    let n = x.nrows() as f64;
    let mean = x.column(c).iter().sum::<f64>() / n;
    let variance = x.column(c).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, variance.max(0.0).sqrt())
}

/// Compare two sample sets sharing a column layout. `mmd_subsample` caps the
/// pairwise kernel cost; `extra_exceedance` adds `(column, threshold)` pairs
/// beyond the presets, which are applied to every probability-valued column.
pub fn compare_samples(
    names: &[String],
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    method_a: &str,
    method_b: &str,
    mmd_subsample: usize,
    extra_exceedance: &[(String, f64)],
) -> Result<ComparisonReport> {
    if a.ncols() != names.len() || b.ncols() != names.len() {
        return Err(Error::DimensionMismatch { left: a.ncols(), right: names.len() });
    }
    if a.nrows() < 2 || b.nrows() < 2 {
        return Err(Error::InvalidArgument("need at least two draws per side".into()));
    }

    let mut ks = Vec::with_capacity(names.len());
    let mut means_a = Vec::with_capacity(names.len());
    let mut means_b = Vec::with_capacity(names.len());
    let mut sds_a = Vec::with_capacity(names.len());
    let mut sds_b = Vec::with_capacity(names.len());
    for (c, name) in names.iter().enumerate() {
        let col_a: Vec<f64> = a.column(c).iter().copied().collect();
        let col_b: Vec<f64> = b.column(c).iter().copied().collect();
        ks.push(NamedValue { name: name.clone(), value: ks_statistic(&col_a, &col_b) });
        let (ma, sa) = column_mean_sd(a, c);
        let (mb, sb) = column_mean_sd(b, c);
        means_a.push(ma);
        means_b.push(mb);
        sds_a.push(sa);
        sds_b.push(sb);
    }

    let per_parameter: Vec<(String, f64)> =
        ks.iter().map(|nv| (nv.name.clone(), nv.value)).collect();
    let ks_by_block = grouped_ks(&per_parameter)
        .into_iter()
        .map(|(name, value)| NamedValue { name, value })
        .collect();

    let (rmse_mean, mae_mean) = point_error(&means_a, &means_b)?;
    let (rmse_sd, mae_sd) = point_error(&sds_a, &sds_b)?;

    let s = a.nrows().min(b.nrows()).min(mmd_subsample.max(2));
    let a_sub = subsample(a, s);
    let b_sub = subsample(b, s);
    let mmd1 = mmd_with_order(&a_sub, &b_sub, None, 1)?;
    let mmd3 = mmd_with_order(&a_sub, &b_sub, None, 3)?;

    // Exceedance presets apply to columns whose draws look like
    // probabilities on both sides.
    let mut entries = Vec::new();
    for (c, name) in names.iter().enumerate() {
        let col_a: Vec<f64> = a.column(c).iter().copied().collect();
        let col_b: Vec<f64> = b.column(c).iter().copied().collect();
        let is_probability = col_a.iter().chain(col_b.iter()).all(|&v| (0.0..=1.0).contains(&v));
        let mut thresholds: Vec<f64> = Vec::new();
        if is_probability {
            thresholds.push(SECOND_90_THRESHOLD);
            thresholds.push(HIGH_INCIDENCE_THRESHOLD);
        }
        for (column, threshold) in extra_exceedance {
            if column == name {
                thresholds.push(*threshold);
            }
        }
        for threshold in thresholds {
            let p_a = exceedance(&col_a, threshold)?;
            let p_b = exceedance(&col_b, threshold)?;
            entries.push(ExceedanceEntry {
                column: name.clone(),
                threshold,
                p_a,
                p_b,
                abs_error: (p_a - p_b).abs(),
            });
        }
    }

    Ok(ComparisonReport {
        ks,
        ks_by_block,
        mmd: mmd1.value,
        mmd_bandwidth: mmd1.bandwidth,
        mmd_order3: mmd3.value,
        rmse_mean,
        mae_mean,
        rmse_sd,
        mae_sd,
        exceedance: entries,
        metadata: ComparisonMetadata {
            method_a: method_a.to_string(),
            method_b: method_b.to_string(),
            n_a: a.nrows(),
            n_b: b.nrows(),
            columns: names.len(),
            mmd_subsample: s,
        },
    })
}
