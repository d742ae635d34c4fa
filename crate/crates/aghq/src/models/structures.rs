//! Precision-matrix builders for the random-effect priors: IID, stationary
//! AR1, (scaled) ICAR on an adjacency graph, and the reparameterised BYM2
//! combination of an IID and a structured component.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecisionKind {
    Iid,
    Ar1,
    Icar,
    Bym2,
}

/// A symmetric positive-semidefinite precision matrix with its provenance.
#[derive(Debug, Clone)]
pub struct PrecisionStructure {
    pub kind: PrecisionKind,
    pub size: usize,
    pub sigma: f64,
    pub phi: Option<f64>,
    pub matrix: DMatrix<f64>,
    pub rank_deficiency: usize,
}

/// Precision of independent effects with marginal standard deviation `sigma`.
pub fn precision_iid(n: usize, sigma: f64) -> Result<PrecisionStructure> {
    if n == 0 || !(sigma > 0.0) {
        return Err(Error::InvalidArgument("need n >= 1 and sigma > 0".into()));
    }
    Ok(PrecisionStructure {
        kind: PrecisionKind::Iid,
        size: n,
        sigma,
        phi: None,
        matrix: DMatrix::identity(n, n) / (sigma * sigma),
        rank_deficiency: 0,
    })
}

/// Tridiagonal precision of a stationary AR1 process with marginal variance
/// `sigma^2` and lag-one correlation `phi`.
pub fn precision_ar1(n: usize, sigma: f64, phi: f64) -> Result<PrecisionStructure> {
    if n < 2 {
        return Err(Error::InvalidArgument("AR1 needs n >= 2".into()));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument("AR1 needs sigma > 0".into()));
    }
    if !(phi.abs() < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "AR1 correlation must satisfy |phi| < 1, got {phi}"
        )));
    }
    let scale = 1.0 / (sigma * sigma * (1.0 - phi * phi));
    let mut q = DMatrix::zeros(n, n);
    for i in 0..n {
        let diag = if i == 0 || i == n - 1 { 1.0 } else { 1.0 + phi * phi };
        q[(i, i)] = diag * scale;
        if i + 1 < n {
            q[(i, i + 1)] = -phi * scale;
            q[(i + 1, i)] = -phi * scale;
        }
    }
    Ok(PrecisionStructure {
        kind: PrecisionKind::Ar1,
        size: n,
        sigma,
        phi: Some(phi),
        matrix: q,
        rank_deficiency: 0,
    })
}

/// Closed-form log determinant of the AR1 precision above: the correlation
/// matrix has determinant `(1 - phi^2)^{n-1}`.
pub fn ar1_log_det(n: usize, sigma: f64, phi: f64) -> f64 {
    -2.0 * n as f64 * sigma.ln() - (n as f64 - 1.0) * (1.0 - phi * phi).ln()
}

/// Symmetric undirected adjacency on `n` nodes.
#[derive(Debug, Clone)]
pub struct Adjacency {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl Adjacency {
    pub fn new(n: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut normalized = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            if a == b {
                return Err(Error::InvalidArgument(format!("self-loop at node {a}")));
            }
            if a >= n || b >= n {
                return Err(Error::InvalidArgument(format!(
                    "edge ({a}, {b}) outside node range 0..{n}"
                )));
            }
            normalized.push((a.min(b), a.max(b)));
        }
        normalized.sort_unstable();
        normalized.dedup();
        Ok(Adjacency { n, edges: normalized })
    }

    /// Rook adjacency of a `rows x cols` lattice, nodes in row-major order.
    pub fn grid(rows: usize, cols: usize) -> Self {
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let id = r * cols + c;
                if c + 1 < cols {
                    edges.push((id, id + 1));
                }
                if r + 1 < rows {
                    edges.push((id, id + cols));
                }
            }
        }
        Adjacency::new(rows * cols, edges).expect("lattice edges are valid")
    }

    /// Parse an edge-list CSV with header `a,b`.
    pub fn from_edge_csv(text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        let mut max_node = 0usize;
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (idx == 0 && line.starts_with(|c: char| c.is_alphabetic())) {
                continue;
            }
            let mut cells = line.split(',');
            let a: usize = cells
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad adjacency row {}", idx + 1)))?;
            let b: usize = cells
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad adjacency row {}", idx + 1)))?;
            max_node = max_node.max(a).max(b);
            edges.push((a, b));
        }
        if edges.is_empty() {
            return Err(Error::Parse("adjacency file has no edges".into()));
        }
        Adjacency::new(max_node + 1, edges)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Number of connected components (isolated nodes count).
    pub fn components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for &(a, b) in &self.edges {
            let ra = find(&mut parent, a);
            let rb = find(&mut parent, b);
            if ra != rb {
                parent[ra] = rb;
            }
        }
        (0..self.n).filter(|&i| find(&mut parent, i) == i).count()
    }
}

/// Graph-Laplacian ICAR precision. With `scale`, the matrix is multiplied by
/// the geometric mean of the marginal variances of its sum-to-zero
/// constrained generalised inverse, so the typical marginal variance is one
/// (as the BYM2 combination requires).
pub fn precision_icar(adj: &Adjacency, scale: bool) -> Result<PrecisionStructure> {
    if adj.edges().is_empty() {
        return Err(Error::InvalidArgument("ICAR needs a non-empty edge set".into()));
    }
    let n = adj.len();
    let mut q = DMatrix::zeros(n, n);
    for &(a, b) in adj.edges() {
        q[(a, a)] += 1.0;
        q[(b, b)] += 1.0;
        q[(a, b)] -= 1.0;
        q[(b, a)] -= 1.0;
    }
    let deficiency = adj.components();

    if scale {
        let eigen = SymmetricEigen::new(q.clone());
        let max_eig = eigen.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        let cut = 1e-10 * max_eig.max(1.0);
        let mut marginal = vec![0.0f64; n];
        let mut dropped = 0usize;
        for (j, &lambda) in eigen.eigenvalues.iter().enumerate() {
            if lambda <= cut {
                dropped += 1;
                continue;
            }
            let col = eigen.eigenvectors.column(j);
            for i in 0..n {
                marginal[i] += col[i] * col[i] / lambda;
            }
        }
        if dropped != deficiency {
            return Err(Error::InvalidArgument(format!(
                "ICAR null space {dropped} does not match {deficiency} graph components"
            )));
        }
        let geo_mean =
            (marginal.iter().map(|v| v.ln()).sum::<f64>() / n as f64).exp();
        q *= geo_mean;
    }

    Ok(PrecisionStructure {
        kind: PrecisionKind::Icar,
        size: n,
        sigma: 1.0,
        phi: None,
        matrix: q,
        rank_deficiency: deficiency,
    })
}

/// Combined spatial effect `sigma (sqrt(1 - phi) v + sqrt(phi) w)` from an
/// IID component `v` and a variance-scaled structured component `w`.
pub fn bym2_effect(v: &[f64], w: &[f64], sigma: f64, phi: f64) -> Vec<f64> {
    assert_eq!(v.len(), w.len(), "components must have equal length");
    assert!(sigma > 0.0, "sigma must be positive");
    assert!((0.0..=1.0).contains(&phi), "phi must lie in [0, 1]");
    let iid_scale = (1.0 - phi).sqrt();
    let struct_scale = phi.sqrt();
    v.iter()
        .zip(w)
        .map(|(&vi, &wi)| sigma * (iid_scale * vi + struct_scale * wi))
        .collect()
}
