//! Primal active-set solver for `min_{μ ∈ conv(Z)} ½‖μ - v‖²`.
//!
//! The working set holds affinely independent vertices. Each round solves
//! the least-squares problem over their affine hull (weights summing to one,
//! sign unconstrained). A negative weight triggers a step back toward
//! feasibility that drops the first vertex to hit zero. When the weights are
//! feasible, the vertex minimising the linearised objective `(μ - v)ᵀz` is
//! found by MAP decoding, and either proves optimality or joins the set.

use nalgebra::{DMatrix, DVector};

use super::{MeanPoint, StructureFamily};
use crate::{Error, Result};

/// Frank-Wolfe gap below which the current point is accepted.
const GAP_TOL: f64 = 1e-12;
/// Affine weights this close to zero count as feasible.
const WEIGHT_TOL: f64 = 1e-14;

pub(super) fn project(family: &StructureFamily, v: &[f64]) -> Result<MeanPoint> {
    assert_eq!(v.len(), family.dim(), "point length must equal part dimension");
    let max_iter = 10 * family.len().max(1);

    let mut active = vec![family.map_decode(v)];
    let mut weights = vec![1.0];

    for _ in 0..max_iter {
        let target = affine_minimizer(family, &active, v);

        if target.iter().all(|&w| w >= -WEIGHT_TOL) {
            weights = target.into_iter().map(|w| w.max(0.0)).collect();
            let mu = combine(family, &active, &weights);
            let grad: Vec<f64> = mu.iter().zip(v).map(|(m, x)| m - x).collect();
            let neg_grad: Vec<f64> = grad.iter().map(|g| -g).collect();
            let candidate = family.map_decode(&neg_grad);
            let gap: f64 = grad.iter().zip(&mu).zip(family.vertex(candidate)).map(|((g, m), z)| g * (m - z)).sum();
            if gap <= GAP_TOL || active.contains(&candidate) {
                let support = active.into_iter().zip(weights).collect();
                return Ok(MeanPoint::from_weights(family, support));
            }
            active.push(candidate);
            weights.push(0.0);
        } else {
            // Move from the feasible weights toward the affine minimizer until
            // the first weight reaches zero.
            let mut step = 1.0;
            let mut blocking = 0;
            for (i, (&w, &t)) in weights.iter().zip(&target).enumerate() {
                if t < -WEIGHT_TOL {
                    let ratio = w / (w - t);
                    if ratio < step {
                        step = ratio;
                        blocking = i;
                    }
                }
            }
            for (w, t) in weights.iter_mut().zip(&target) {
                *w += step * (t - *w);
            }
            weights[blocking] = 0.0;
            let keep: Vec<bool> = weights.iter().map(|&w| w > 0.0).collect();
            active = active.iter().zip(&keep).filter(|(_, &k)| k).map(|(&a, _)| a).collect();
            weights = weights.iter().zip(&keep).filter(|(_, &k)| k).map(|(&w, _)| w).collect();
        }
    }
    Err(Error::NoConvergence { iterations: max_iter })
}

fn combine(family: &StructureFamily, active: &[usize], weights: &[f64]) -> Vec<f64> {
    let mut mu = vec![0.0; family.dim()];
    for (&i, &w) in active.iter().zip(weights) {
        for &part in family.vertex_support(i) {
            mu[part] += w;
        }
    }
    mu
}

/// Solves `min ½‖Σ_j w_j z_j - v‖²` subject to `Σ_j w_j = 1` through the
/// bordered KKT system `[G 1; 1ᵀ 0] [w; λ] = [Zᵀv; 1]`.
fn affine_minimizer(family: &StructureFamily, active: &[usize], v: &[f64]) -> Vec<f64> {
    let n = active.len();
    if n == 1 {
        return vec![1.0];
    }
    let mut kkt = DMatrix::<f64>::zeros(n + 1, n + 1);
    let mut rhs = DVector::<f64>::zeros(n + 1);
    for (a, &i) in active.iter().enumerate() {
        let zi = family.vertex(i);
        for (b, &j) in active.iter().enumerate().skip(a) {
            let zj = family.vertex(j);
            let g: f64 = zi.iter().zip(zj).map(|(x, y)| x * y).sum();
            kkt[(a, b)] = g;
            kkt[(b, a)] = g;
        }
        kkt[(a, n)] = 1.0;
        kkt[(n, a)] = 1.0;
        rhs[a] = family.vertex_support(i).iter().map(|&p| v[p]).sum();
    }
    rhs[n] = 1.0;

    let solution = match kkt.clone().lu().solve(&rhs) {
        Some(x) if x.iter().all(|w| w.is_finite()) => x,
        // Only reachable through round-off on a near-degenerate working set.
        _ => kkt.svd(true, true).solve(&rhs, 1e-12).expect("SVD with both factors always solves"),
    };
    solution.iter().take(n).copied().collect()
}
