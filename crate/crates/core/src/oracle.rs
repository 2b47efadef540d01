//! Reference computations that share no code with the implementations they
//! check. They are slow and only meant for small inputs.

/// Euclidean projection onto the simplex by trying every support set and
/// keeping the one that satisfies the KKT conditions.
///
/// For a support `S` the stationary point is `p_i = v_i - τ` on `S` with
/// `τ = (Σ_S v_i - 1)/|S|`; it is optimal iff `p_i ≥ 0` on `S` and
/// `v_i - τ ≤ 0` off `S`. Exponential in `v.len()`.
pub fn kkt_simplex_projection(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    assert!((1..=20).contains(&n), "exhaustive KKT oracle is limited to 20 coordinates");
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1u32 << n) {
        let members = |i: usize| mask & (1 << i) != 0;
        let size = mask.count_ones() as f64;
        let tau = ((0..n).filter(|&i| members(i)).map(|i| v[i]).sum::<f64>() - 1.0) / size;
        let primal = (0..n).filter(|&i| members(i)).all(|i| v[i] - tau >= -1e-12);
        let dual = (0..n).filter(|&i| !members(i)).all(|i| v[i] - tau <= 1e-12);
        if !(primal && dual) {
            continue;
        }
        let p: Vec<f64> = (0..n).map(|i| if members(i) { (v[i] - tau).max(0.0) } else { 0.0 }).collect();
        let dist: f64 = p.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
        // Degenerate ties admit several KKT supports; they give the same point
        // up to round-off, so keep the closest one.
        if best.as_ref().is_none_or(|(d, _)| dist < *d) {
            best = Some((dist, p));
        }
    }
    best.expect("some support always satisfies the KKT conditions").1
}

/// Simplex projection by Michelot's finite algorithm: repeatedly compute the
/// threshold over the surviving coordinates and discard those below it.
pub fn michelot_simplex_projection(v: &[f64]) -> Vec<f64> {
    let mut alive: Vec<usize> = (0..v.len()).collect();
    loop {
        let tau = (alive.iter().map(|&i| v[i]).sum::<f64>() - 1.0) / alive.len() as f64;
        let next: Vec<usize> = alive.iter().copied().filter(|&i| v[i] > tau).collect();
        if next.len() == alive.len() {
            let mut p = vec![0.0; v.len()];
            for i in alive {
                p[i] = v[i] - tau;
            }
            return p;
        }
        alive = next;
    }
}

/// Result of [`projected_gradient_polytope`].
#[derive(Debug, Clone)]
pub struct PolytopeOracle {
    pub weights: Vec<f64>,
    pub mu: Vec<f64>,
    /// `‖μ - v‖²`.
    pub objective: f64,
}

/// Minimizes `‖Mp - v‖²` over `p ∈ Δ^{|Z|}` (columns of `M` are the
/// vertices) by projected gradient with a constant `1/L` step.
pub fn projected_gradient_polytope(vertices: &[Vec<f64>], v: &[f64], iterations: usize) -> PolytopeOracle {
    let n = vertices.len();
    let gram: Vec<Vec<f64>> =
        vertices.iter().map(|a| vertices.iter().map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum()).collect()).collect();
    let lin: Vec<f64> = vertices.iter().map(|z| z.iter().zip(v).map(|(x, y)| x * y).sum()).collect();

    // Largest eigenvalue of the Gram matrix by power iteration.
    let mut u = vec![1.0; n];
    let mut lambda = 0.0;
    for _ in 0..500 {
        let w: Vec<f64> = gram.iter().map(|row| row.iter().zip(&u).map(|(g, x)| g * x).sum()).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        lambda = norm / u.iter().map(|x| x * x).sum::<f64>().sqrt();
        u = w.into_iter().map(|x| x / norm).collect();
    }
    let step = 1.0 / (lambda * 1.01).max(1e-12);

    let mut p = vec![1.0 / n as f64; n];
    let mut moved = vec![0.0; n];
    for _ in 0..iterations {
        for i in 0..n {
            let g: f64 = gram[i].iter().zip(&p).map(|(a, b)| a * b).sum::<f64>() - lin[i];
            moved[i] = p[i] - step * g;
        }
        p = michelot_simplex_projection(&moved);
    }

    let dim = v.len();
    let mut mu = vec![0.0; dim];
    for (z, &w) in vertices.iter().zip(&p) {
        for k in 0..dim {
            mu[k] += w * z[k];
        }
    }
    let objective = mu.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    PolytopeOracle { weights: p, mu, objective }
}

/// `Σ_z exp(sᵀz) z / Σ_z exp(sᵀz)` evaluated literally, without
/// max-subtraction. Use only with moderate scores.
pub fn brute_force_gibbs_mean(vertices: &[Vec<f64>], s: &[f64]) -> Vec<f64> {
    let mut num = vec![0.0; s.len()];
    let mut den = 0.0;
    for z in vertices {
        let w = z.iter().zip(s).map(|(a, b)| a * b).sum::<f64>().exp();
        den += w;
        for (n, zi) in num.iter_mut().zip(z) {
            *n += w * zi;
        }
    }
    num.into_iter().map(|x| x / den).collect()
}

/// Spanning arborescences of the complete digraph on `{0 (root), 1..L}`,
/// found by testing every `L`-subset of the `L²` arcs for a unique head per
/// word and reachability from the root. Arcs are given as `(head, modifier)`
/// pairs and the result as sorted arc lists.
pub fn brute_force_arborescences(len: usize) -> Vec<Vec<(usize, usize)>> {
    let arcs: Vec<(usize, usize)> =
        (0..=len).flat_map(|h| (1..=len).filter(move |&m| m != h).map(move |m| (h, m))).collect();
    let mut out = Vec::new();
    let total = arcs.len();
    let mut chosen: Vec<usize> = (0..len).collect();
    loop {
        let picked: Vec<(usize, usize)> = chosen.iter().map(|&i| arcs[i]).collect();
        if is_arborescence(&picked, len) {
            let mut sorted = picked.clone();
            sorted.sort_unstable();
            out.push(sorted);
        }
        let Some(i) = (0..len).rev().find(|&i| chosen[i] != i + total - len) else {
            break;
        };
        chosen[i] += 1;
        for j in i + 1..len {
            chosen[j] = chosen[j - 1] + 1;
        }
    }
    out
}

fn is_arborescence(arcs: &[(usize, usize)], len: usize) -> bool {
    let mut indegree = vec![0; len + 1];
    for &(_, m) in arcs {
        indegree[m] += 1;
    }
    if indegree[1..].iter().any(|&d| d != 1) {
        return false;
    }
    let mut seen = vec![false; len + 1];
    seen[0] = true;
    let mut queue = vec![0];
    while let Some(node) = queue.pop() {
        for &(h, m) in arcs {
            if h == node && !seen[m] {
                seen[m] = true;
                queue.push(m);
            }
        }
    }
    seen.into_iter().all(|x| x)
}

/// Central finite-difference gradient of `f` at `x`.
pub fn central_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `max_i |a_i - b_i| / max(1, |b_i|)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs() / n.abs().max(1.0)).fold(0.0, f64::max)
}
