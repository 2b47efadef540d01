//! Finite structure families and the transformations defined on their
//! marginal polytope `conv(Z)`.
//!
//! | unstructured | structured |
//! |--------------|------------|
//! | argmax       | [`StructureFamily::map_decode`] |
//! | softmax      | [`StructureFamily::gibbs_marginals`] |
//! | sparsemax    | [`StructureFamily::sparsemap`] |
//!
//! Every family here is small enough to materialize, so all three maps are
//! computed by explicit vertex enumeration.

mod active_set;
mod enumerate;
pub mod simplex;

pub use enumerate::{arc_index, arc_of_index, enumerate_vertices, FamilyKind, MAX_DIM, MAX_VERTICES};
pub use simplex::{log_sum_exp, project_simplex, softmax};

use crate::Result;

/// A finite set of binary part-indicator vectors with its vertex list
/// materialized in canonical order.
#[derive(Debug, Clone)]
pub struct StructureFamily {
    kind: FamilyKind,
    dim: usize,
    vertices: Vec<Vec<f64>>,
    /// Positions of the ones in each vertex.
    supports: Vec<Vec<usize>>,
}

impl StructureFamily {
    pub fn new(kind: FamilyKind) -> Result<Self> {
        let supports = enumerate::enumerate_supports(&kind)?;
        let dim = kind.dim();
        let vertices = supports
            .iter()
            .map(|ones| {
                let mut z = vec![0.0; dim];
                for &i in ones {
                    z[i] = 1.0;
                }
                z
            })
            .collect();
        Ok(StructureFamily { kind, dim, vertices, supports })
    }

    pub fn categorical(k: usize) -> Result<Self> {
        Self::new(FamilyKind::Categorical { k })
    }

    pub fn ksubset(k: usize, size: usize) -> Result<Self> {
        Self::new(FamilyKind::KSubset { k, size })
    }

    pub fn arborescence(len: usize) -> Result<Self> {
        Self::new(FamilyKind::Arborescence { len })
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    /// Part dimension `K`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of vertices `|Z|`.
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn vertex(&self, index: usize) -> &[f64] {
        &self.vertices[index]
    }

    /// Part indices set to one in vertex `index`.
    pub fn vertex_support(&self, index: usize) -> &[usize] {
        &self.supports[index]
    }

    /// Position of `z` in the canonical order, if it is a vertex.
    pub fn index_of(&self, z: &[f64]) -> Option<usize> {
        self.vertices.iter().position(|v| v.as_slice() == z)
    }

    /// `sᵀz` for every vertex, in canonical order.
    pub fn vertex_scores(&self, s: &[f64]) -> Vec<f64> {
        assert_eq!(s.len(), self.dim, "score length must equal part dimension");
        self.supports.iter().map(|ones| ones.iter().map(|&i| s[i]).sum()).collect()
    }

    /// Index of `argmax_z sᵀz`. Ties go to the lowest canonical index.
    pub fn map_decode(&self, s: &[f64]) -> usize {
        let scores = self.vertex_scores(s);
        let mut best = 0;
        for (i, &v) in scores.iter().enumerate().skip(1) {
            if v > scores[best] {
                best = i;
            }
        }
        best
    }

    /// Gibbs distribution `p_z ∝ exp(sᵀz)` and its mean.
    pub fn gibbs_marginals(&self, s: &[f64]) -> (VertexDistribution, MeanPoint) {
        let probs = softmax(&self.vertex_scores(s));
        let mean = MeanPoint::from_weights(self, probs.iter().copied().enumerate().filter(|&(_, p)| p > 0.0).collect());
        (VertexDistribution { probs }, mean)
    }

    /// Euclidean projection of `v` onto `conv(Z)` with a sparse
    /// convex-combination certificate.
    pub fn project_polytope(&self, v: &[f64]) -> Result<MeanPoint> {
        active_set::project(self, v)
    }

    /// `argmax_{μ ∈ conv(Z)} sᵀμ - ½‖μ‖²`, which is the projection of `s`.
    pub fn sparsemap(&self, s: &[f64]) -> Result<MeanPoint> {
        self.project_polytope(s)
    }

    /// `Σ_z p_z z` for an arbitrary distribution over the vertices.
    pub fn expectation(&self, probs: &[f64]) -> Vec<f64> {
        assert_eq!(probs.len(), self.len());
        let mut mu = vec![0.0; self.dim];
        for (ones, &p) in self.supports.iter().zip(probs) {
            for &i in ones {
                mu[i] += p;
            }
        }
        mu
    }
}

/// A point of `conv(Z)` carried with the vertices that certify membership.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanPoint {
    pub mu: Vec<f64>,
    /// `(vertex index, weight)` pairs; weights are positive and sum to one.
    pub support: Vec<(usize, f64)>,
}

impl MeanPoint {
    /// The vertex `index` itself, with weight one.
    pub fn vertex(family: &StructureFamily, index: usize) -> Self {
        MeanPoint { mu: family.vertex(index).to_vec(), support: vec![(index, 1.0)] }
    }

    /// Builds the mean of a weighted vertex set. Zero weights are dropped and
    /// the rest renormalised.
    pub fn from_weights(family: &StructureFamily, support: Vec<(usize, f64)>) -> Self {
        let mut support: Vec<(usize, f64)> = support.into_iter().filter(|&(_, w)| w > 0.0).collect();
        let total: f64 = support.iter().map(|&(_, w)| w).sum();
        for (_, w) in &mut support {
            *w /= total;
        }
        let mut mu = vec![0.0; family.dim()];
        for &(i, w) in &support {
            for &part in family.vertex_support(i) {
                mu[part] += w;
            }
        }
        MeanPoint { mu, support }
    }

    /// Checks the certificate: positive weights summing to one that
    /// reconstruct `mu` coordinate-wise within `tol`.
    pub fn certificate_error(&self, family: &StructureFamily) -> f64 {
        if self.support.iter().any(|&(i, w)| w.is_nan() || w <= 0.0 || i >= family.len()) {
            return f64::INFINITY;
        }
        let total: f64 = self.support.iter().map(|&(_, w)| w).sum();
        let mut recon = vec![0.0; family.dim()];
        for &(i, w) in &self.support {
            for &part in family.vertex_support(i) {
                recon[part] += w;
            }
        }
        recon.iter().zip(&self.mu).map(|(a, b)| (a - b).abs()).fold((total - 1.0).abs(), f64::max)
    }
}

/// A probability vector over the vertices of a family.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexDistribution {
    pub probs: Vec<f64>,
}
