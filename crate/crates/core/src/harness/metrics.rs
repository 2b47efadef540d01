//! Latent recovery metrics.
//!
//! A jointly learned decoder can absorb any relabeling of the latent parts
//! that maps the family onto itself, so raw match rates between predicted
//! and true structures say little on their own. [`PartAlignment`] finds the
//! best such relabeling (part permutations for categorical and subset
//! families, word permutations for arborescences) and the metrics can be
//! computed before or after applying it.

use itertools::Itertools;
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;

use crate::polytope::{arc_index, arc_of_index, FamilyKind, StructureFamily};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentScore {
    /// Fraction of samples whose predicted structure equals the true one.
    pub exact: f64,
    /// Micro-averaged F1 of predicted one-parts against true one-parts.
    pub f1: f64,
}

/// Exact match rate and part F1 of predicted against true vertex indices,
/// with no relabeling.
pub fn evaluate_latent(family: &StructureFamily, predicted: &[usize], truth: &[usize]) -> LatentScore {
    assert_eq!(predicted.len(), truth.len(), "predicted and true sequences must have equal length");
    let pairs =
        predicted.iter().zip(truth).map(|(&p, &t)| (family.vertex_support(p).to_vec(), family.vertex_support(t)));
    score_supports(pairs)
}

fn score_supports<'a, I>(pairs: I) -> LatentScore
where
    I: Iterator<Item = (Vec<usize>, &'a [usize])>,
{
    let (mut n, mut same, mut hits, mut n_pred, mut n_true) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for (mut pred, truth) in pairs {
        pred.sort_unstable();
        n += 1;
        if pred == truth {
            same += 1;
        }
        hits += pred.iter().filter(|p| truth.contains(p)).count();
        n_pred += pred.len();
        n_true += truth.len();
    }
    if n == 0 {
        return LatentScore { exact: 0.0, f1: 0.0 };
    }
    let f1 = if hits == 0 { 0.0 } else { 2.0 * hits as f64 / (n_pred + n_true) as f64 };
    LatentScore { exact: same as f64 / n as f64, f1 }
}

/// A permutation of part coordinates that maps the family onto itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartAlignment {
    /// Predicted part `a` is read as true part `map[a]`.
    pub map: Vec<usize>,
}

impl PartAlignment {
    pub fn identity(family: &StructureFamily) -> Self {
        PartAlignment { map: (0..family.dim()).collect() }
    }

    /// The family symmetry maximizing the number of shared one-parts between
    /// relabeled predictions and truth.
    pub fn fit(family: &StructureFamily, predicted: &[usize], truth: &[usize]) -> Self {
        assert_eq!(predicted.len(), truth.len());
        let k = family.dim();
        let mut counts = vec![vec![0i64; k]; k];
        for (&p, &t) in predicted.iter().zip(truth) {
            for &a in family.vertex_support(p) {
                for &b in family.vertex_support(t) {
                    counts[a][b] += 1;
                }
            }
        }
        match family.kind() {
            FamilyKind::Categorical { .. } | FamilyKind::KSubset { .. } => {
                let weights = Matrix::from_rows(counts).expect("square count matrix");
                let (_, map) = kuhn_munkres(&weights);
                PartAlignment { map }
            }
            FamilyKind::Arborescence { len } => {
                let mut best: Option<(i64, Vec<usize>)> = None;
                // Words are relabeled; the root stays put.
                for perm in (1..=len).permutations(len) {
                    let word = |node: usize| if node == 0 { 0 } else { perm[node - 1] };
                    let map: Vec<usize> = (0..k)
                        .map(|a| {
                            let (h, m) = arc_of_index(len, a);
                            arc_index(len, word(h), word(m))
                        })
                        .collect();
                    let total: i64 = map.iter().enumerate().map(|(a, &b)| counts[a][b]).sum();
                    if best.as_ref().is_none_or(|(t, _)| total > *t) {
                        best = Some((total, map));
                    }
                }
                PartAlignment { map: best.expect("at least one permutation").1 }
            }
        }
    }

    pub fn apply(&self, parts: &[usize]) -> Vec<usize> {
        let mut out: Vec<usize> = parts.iter().map(|&a| self.map[a]).collect();
        out.sort_unstable();
        out
    }

    /// [`evaluate_latent`] after relabeling the predictions.
    pub fn evaluate(&self, family: &StructureFamily, predicted: &[usize], truth: &[usize]) -> LatentScore {
        assert_eq!(predicted.len(), truth.len(), "predicted and true sequences must have equal length");
        let pairs = predicted
            .iter()
            .zip(truth)
            .map(|(&p, &t)| (self.apply(family.vertex_support(p)), family.vertex_support(t)));
        score_supports(pairs)
    }
}
