//! Maps from scores onto the probability simplex: softmax (entropic) and
//! sparsemax (Euclidean projection).

/// Numerically stable softmax. Output is strictly positive unless the score
/// gap exceeds the `f64` exponent range.
pub fn softmax(s: &[f64]) -> Vec<f64> {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = s.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// `log Σ exp(s_i)` with max-subtraction.
pub fn log_sum_exp(s: &[f64]) -> f64 {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + s.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Euclidean projection onto the probability simplex (sparsemax).
///
/// Sort-and-threshold: find the largest `ρ` such that
/// `u_ρ - (Σ_{j≤ρ} u_j - 1)/ρ > 0` on the descending sort `u` of `v`, then
/// clip `v - τ` at zero.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    assert!(!v.is_empty(), "cannot project an empty vector");
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));

    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - 1.0) / (i + 1) as f64;
        if u - candidate > 0.0 {
            tau = candidate;
        } else {
            break;
        }
    }

    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}
