//! Surrogate gradients for the argmax node.
//!
//! The forward pass outputs `ẑ = argmax_z sᵀz`, whose derivative in `s` is
//! zero almost everywhere. Each rule here replaces `∇_s L` by a surrogate
//! built from `γ = ∇_μ L(ŷ(μ), y*)`, the decoder gradient with respect to
//! its latent input.
//!
//! Most rules share one recipe: pull the downstream loss back onto the
//! latent space, take a few descent steps on it to manufacture a target
//! `μ̃`, then return the gradient of an intermediate loss between the
//! encoder's prediction and `μ̃`:
//!
//! | rule        | descent on the pulled-back loss        | intermediate loss | surrogate          |
//! |-------------|----------------------------------------|-------------------|--------------------|
//! | `Spigot`    | projected gradient on `conv(Z)`        | perceptron        | `ẑ - μ̃`            |
//! | `Ste`       | plain gradient on `ℝ^K`                | perceptron        | `ẑ - μ̃ = ηγ(ẑ)`    |
//! | `SpigotCe`  | projected gradient on `conv(Z)`        | cross-entropy     | `μ(s) - μ̃`         |
//! | `ExpGrad`   | exponentiated gradient (KL mirror map) | cross-entropy     | `μ(s) - μ(s - ηγ)` |
//!
//! `Relaxed` and `MinRisk` are exact gradients of a relaxed network and of
//! the expected loss under the Gibbs distribution; they serve as baselines.
//!
//! The point at which `γ` must be evaluated differs per rule: `Spigot` and
//! `Ste` use the MAP vertex `ẑ`, while `SpigotCe` and `ExpGrad` use the Gibbs
//! mean `μ(s)` (softmax in the categorical case).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::polytope::{project_simplex, softmax, MeanPoint, StructureFamily};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rule {
    #[serde(rename = "spigot")]
    Spigot,
    #[serde(rename = "ste")]
    Ste,
    #[serde(rename = "spigot_ce")]
    SpigotCe,
    #[serde(rename = "exp_grad")]
    ExpGrad,
    #[serde(rename = "relaxed")]
    Relaxed,
    #[serde(rename = "minrisk")]
    MinRisk,
    /// No surrogate: the encoder receives exactly the (zero) gradient of
    /// the argmax.
    #[serde(rename = "zero")]
    Zero,
}

impl Rule {
    pub fn name(&self) -> &'static str {
        match self {
            Rule::Spigot => "spigot",
            Rule::Ste => "ste",
            Rule::SpigotCe => "spigot_ce",
            Rule::ExpGrad => "exp_grad",
            Rule::Relaxed => "relaxed",
            Rule::MinRisk => "minrisk",
            Rule::Zero => "zero",
        }
    }

    /// Starting point of the pullback descent when the config leaves it open.
    pub fn default_init(&self) -> Init {
        match self {
            Rule::SpigotCe | Rule::ExpGrad | Rule::Relaxed | Rule::MinRisk => Init::Marginal,
            Rule::Spigot | Rule::Ste | Rule::Zero => Init::MapVertex,
        }
    }
}

/// Starting point `μ⁽⁰⁾` of the pullback descent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// The forward-pass MAP vertex `ẑ`.
    MapVertex,
    /// The Gibbs mean `μ(s)`.
    Marginal,
    /// `Π_conv(Z)(0)`, the feasible point closest to the origin.
    ZeroProjected,
}

impl Init {
    pub fn name(&self) -> &'static str {
        match self {
            Init::MapVertex => "map_vertex",
            Init::Marginal => "marginal",
            Init::ZeroProjected => "zero_projected",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// `η_t = η`.
    #[default]
    Constant,
    /// `η_t = η / √(t+1)`.
    InvSqrt,
}

impl Schedule {
    pub fn step_sizes(&self, eta: f64, steps: usize) -> Vec<f64> {
        (0..steps)
            .map(|t| match self {
                Schedule::Constant => eta,
                Schedule::InvSqrt => eta / ((t + 1) as f64).sqrt(),
            })
            .collect()
    }
}

fn default_steps() -> usize {
    1
}

fn default_temperature() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub rule: Rule,
    pub eta: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// `None` selects [`Rule::default_init`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Init>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub schedule: Schedule,
}

impl EstimatorConfig {
    pub fn new(rule: Rule, eta: f64) -> Self {
        EstimatorConfig { rule, eta, steps: 1, init: None, temperature: 1.0, schedule: Schedule::Constant }
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = Some(init);
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    /// The initialization actually used. `Ste` always starts from `ẑ` and
    /// `ExpGrad` from `μ(s)`, whatever the config says: the former has no
    /// feasible set to start inside and the latter needs a strictly positive
    /// distribution.
    pub fn resolved_init(&self) -> Init {
        match self.rule {
            Rule::Ste => Init::MapVertex,
            Rule::ExpGrad => Init::Marginal,
            _ => self.init.unwrap_or_else(|| self.rule.default_init()),
        }
    }

    pub fn step_sizes(&self) -> Vec<f64> {
        self.schedule.step_sizes(self.eta, self.steps)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be positive and finite, got {}", self.eta)));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive and finite, got {}", self.temperature)));
        }
        Ok(())
    }
}

/// SPIGOT: `ẑ - Π_conv(Z)(ẑ - η γ(ẑ))`.
pub fn spigot_grad(family: &StructureFamily, z_hat: usize, gamma: &[f64], eta: f64) -> Result<Vec<f64>> {
    let z = family.vertex(z_hat);
    let moved: Vec<f64> = z.iter().zip(gamma).map(|(zi, g)| zi - eta * g).collect();
    let target = family.sparsemap(&moved)?;
    Ok(z.iter().zip(&target.mu).map(|(a, b)| a - b).collect())
}

/// Identity straight-through: `η γ(ẑ)`.
pub fn ste_grad(gamma: &[f64], eta: f64) -> Vec<f64> {
    gamma.iter().map(|g| eta * g).collect()
}

/// Projected gradient descent on the pulled-back loss over `conv(Z)`:
/// `μ⁽ᵗ⁺¹⁾ = Π(μ⁽ᵗ⁾ - η_t γ(μ⁽ᵗ⁾))`, one step per entry of `step_sizes`.
///
/// `gamma_fn` must be a pure function of the point it is given.
pub fn pullback_descend<F>(
    family: &StructureFamily,
    init: &MeanPoint,
    gamma_fn: F,
    step_sizes: &[f64],
) -> Result<MeanPoint>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut point = init.clone();
    for (t, &eta) in step_sizes.iter().enumerate() {
        let gamma = gamma_fn(&point.mu);
        if gamma.iter().any(|g| !g.is_finite()) {
            return Err(Error::DivergedGradient { step: t });
        }
        let moved: Vec<f64> = point.mu.iter().zip(&gamma).map(|(m, g)| m - eta * g).collect();
        point = family.project_polytope(&moved)?;
    }
    Ok(point)
}

/// Unconstrained gradient descent on the pulled-back loss over `ℝ^K`.
pub fn unconstrained_descend<F>(init: &[f64], gamma_fn: F, step_sizes: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut point = init.to_vec();
    for (t, &eta) in step_sizes.iter().enumerate() {
        let gamma = gamma_fn(&point);
        if gamma.iter().any(|g| !g.is_finite()) {
            return Err(Error::DivergedGradient { step: t });
        }
        for (p, g) in point.iter_mut().zip(&gamma) {
            *p -= eta * g;
        }
    }
    Ok(point)
}

/// Exponentiated-gradient (KL mirror) descent over the vertex simplex,
/// starting from the Gibbs distribution of `s`. Each step multiplies
/// `p_z` by `exp(-η_t γᵀz)`, which keeps the iterate a Gibbs distribution
/// with scores `s - Σ_t η_t γ_t`; those scores are returned together with
/// the final mean.
pub fn mirror_descend<F>(
    family: &StructureFamily,
    s: &[f64],
    gamma_fn: F,
    step_sizes: &[f64],
) -> Result<(Vec<f64>, MeanPoint)>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut scores = s.to_vec();
    let mut mean = family.gibbs_marginals(&scores).1;
    for (t, &eta) in step_sizes.iter().enumerate() {
        let gamma = gamma_fn(&mean.mu);
        if gamma.iter().any(|g| !g.is_finite()) {
            return Err(Error::DivergedGradient { step: t });
        }
        for (sc, g) in scores.iter_mut().zip(&gamma) {
            *sc -= eta * g;
        }
        mean = family.gibbs_marginals(&scores).1;
    }
    Ok((scores, mean))
}

/// Gradient of the perceptron loss `max_z sᵀz - sᵀμ̃`: `ẑ(s) - μ̃`.
pub fn perceptron_grad(family: &StructureFamily, s: &[f64], mu_tilde: &MeanPoint) -> Vec<f64> {
    let z = family.vertex(family.map_decode(s));
    z.iter().zip(&mu_tilde.mu).map(|(a, b)| a - b).collect()
}

/// Cross-entropy variant, unstructured:
/// `softmax(s) - sparsemax(softmax(s) - η γ)`, with `γ` evaluated at
/// `softmax(s)`.
pub fn ce_grad_unstructured(s: &[f64], gamma_at_p: &[f64], eta: f64) -> Vec<f64> {
    let p = softmax(s);
    let moved: Vec<f64> = p.iter().zip(gamma_at_p).map(|(pi, g)| pi - eta * g).collect();
    let target = project_simplex(&moved);
    p.iter().zip(&target).map(|(a, b)| a - b).collect()
}

/// Exponentiated-gradient variant, unstructured:
/// `softmax(s) - softmax(s - η γ)`, with `γ` evaluated at `softmax(s)`.
pub fn eg_grad_unstructured(s: &[f64], gamma_at_p: &[f64], eta: f64) -> Vec<f64> {
    let p = softmax(s);
    let shifted: Vec<f64> = s.iter().zip(gamma_at_p).map(|(si, g)| si - eta * g).collect();
    let q = softmax(&shifted);
    p.iter().zip(&q).map(|(a, b)| a - b).collect()
}

/// Jacobian of `s ↦ softmax(s/τ)`: `(diag(p) - ppᵀ)/τ`.
pub fn softmax_jacobian(s: &[f64], temperature: f64) -> DMatrix<f64> {
    let scaled: Vec<f64> = s.iter().map(|x| x / temperature).collect();
    let p = softmax(&scaled);
    let k = p.len();
    DMatrix::from_fn(k, k, |i, j| {
        let diag = if i == j { p[i] } else { 0.0 };
        (diag - p[i] * p[j]) / temperature
    })
}

/// Jacobian of the Gibbs mean `s ↦ E_{p ∝ exp(sᵀz/τ)}[z]`, i.e. the
/// covariance of `z` divided by `τ`.
pub fn gibbs_jacobian(family: &StructureFamily, s: &[f64], temperature: f64) -> DMatrix<f64> {
    let scaled: Vec<f64> = s.iter().map(|x| x / temperature).collect();
    let (dist, mean) = family.gibbs_marginals(&scaled);
    let k = family.dim();
    let mut second = DMatrix::<f64>::zeros(k, k);
    for (i, &p) in dist.probs.iter().enumerate() {
        let ones = family.vertex_support(i);
        for &a in ones {
            for &b in ones {
                second[(a, b)] += p;
            }
        }
    }
    DMatrix::from_fn(k, k, |a, b| (second[(a, b)] - mean.mu[a] * mean.mu[b]) / temperature)
}

/// Exact gradient through a softmax relaxation of the argmax (categorical):
/// `J_softmax(s/τ) γ`, with `γ` evaluated at `softmax(s/τ)`.
pub fn relaxed_grad(s: &[f64], gamma_at_p: &[f64], temperature: f64) -> Vec<f64> {
    let jac = softmax_jacobian(s, temperature);
    matvec(&jac, gamma_at_p)
}

/// Structured version of [`relaxed_grad`]: the argmax is replaced by the
/// Gibbs mean at temperature `τ`, and `γ` must be evaluated there.
pub fn relaxed_grad_structured(
    family: &StructureFamily,
    s: &[f64],
    gamma_at_mean: &[f64],
    temperature: f64,
) -> Vec<f64> {
    let jac = gibbs_jacobian(family, s, temperature);
    matvec(&jac, gamma_at_mean)
}

/// Gradient of the risk `Σ_z p_z(s) L_z` with `p ∝ exp(sᵀz/τ)`, computed as
/// `J ℓ` where column `z` of `J` is `∇_s p_z = p_z (z - μ)/τ`.
pub fn minrisk_grad(family: &StructureFamily, s: &[f64], losses: &[f64], temperature: f64) -> Vec<f64> {
    assert_eq!(losses.len(), family.len(), "one loss per vertex");
    let scaled: Vec<f64> = s.iter().map(|x| x / temperature).collect();
    let (dist, mean) = family.gibbs_marginals(&scaled);
    let k = family.dim();
    let jac =
        DMatrix::from_fn(k, family.len(), |a, z| dist.probs[z] * (family.vertex(z)[a] - mean.mu[a]) / temperature);
    matvec(&jac, losses)
}

/// The same risk gradient in score-function form, `E_p[L_z ∇_s log p_z]`,
/// accumulated as `(E[L z] - E[L] E[z])/τ`.
pub fn minrisk_grad_score_function(family: &StructureFamily, s: &[f64], losses: &[f64], temperature: f64) -> Vec<f64> {
    assert_eq!(losses.len(), family.len(), "one loss per vertex");
    let scaled: Vec<f64> = s.iter().map(|x| x / temperature).collect();
    let (dist, mean) = family.gibbs_marginals(&scaled);
    let mut weighted = vec![0.0; family.dim()];
    let mut expected_loss = 0.0;
    for (z, (&p, &loss)) in dist.probs.iter().zip(losses).enumerate() {
        expected_loss += p * loss;
        for &a in family.vertex_support(z) {
            weighted[a] += p * loss;
        }
    }
    weighted.iter().zip(&mean.mu).map(|(w, m)| (w - expected_loss * m) / temperature).collect()
}

fn matvec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    assert_eq!(m.ncols(), v.len());
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)] * v[j]).sum()).collect()
}

/// Starting point of the pullback descent.
pub fn initial_point(family: &StructureFamily, s: &[f64], z_hat: usize, init: Init) -> Result<MeanPoint> {
    match init {
        Init::MapVertex => Ok(MeanPoint::vertex(family, z_hat)),
        Init::Marginal => Ok(family.gibbs_marginals(s).1),
        Init::ZeroProjected => family.project_polytope(&vec![0.0; family.dim()]),
    }
}

/// Surrogate `∇̃_s L` for the rules that only need `γ` along a descent path
/// (`Spigot`, `Ste`, `SpigotCe`, `ExpGrad`, `Zero`).
///
/// `z_hat` must be `family.map_decode(s)`. `gamma_fn(μ)` returns the decoder
/// gradient with the latent input set to `μ`.
pub fn pullback_surrogate<F>(
    config: &EstimatorConfig,
    family: &StructureFamily,
    s: &[f64],
    z_hat: usize,
    gamma_fn: F,
) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let steps = config.step_sizes();
    match config.rule {
        Rule::Zero => Ok(vec![0.0; family.dim()]),
        Rule::Spigot => {
            let init = initial_point(family, s, z_hat, config.resolved_init())?;
            let target = pullback_descend(family, &init, &gamma_fn, &steps)?;
            Ok(perceptron_grad(family, s, &target))
        }
        Rule::Ste => {
            let z = family.vertex(z_hat);
            if steps.len() == 1 {
                let gamma = gamma_fn(z);
                if gamma.iter().any(|g| !g.is_finite()) {
                    return Err(Error::DivergedGradient { step: 0 });
                }
                return Ok(ste_grad(&gamma, steps[0]));
            }
            let target = unconstrained_descend(z, &gamma_fn, &steps)?;
            Ok(z.iter().zip(&target).map(|(a, b)| a - b).collect())
        }
        Rule::SpigotCe => {
            let prediction = family.gibbs_marginals(s).1;
            let init = initial_point(family, s, z_hat, config.resolved_init())?;
            let target = pullback_descend(family, &init, &gamma_fn, &steps)?;
            Ok(prediction.mu.iter().zip(&target.mu).map(|(a, b)| a - b).collect())
        }
        Rule::ExpGrad => {
            let prediction = family.gibbs_marginals(s).1;
            let (_, target) = mirror_descend(family, s, &gamma_fn, &steps)?;
            Ok(prediction.mu.iter().zip(&target.mu).map(|(a, b)| a - b).collect())
        }
        Rule::Relaxed | Rule::MinRisk => {
            Err(Error::Config(format!("{} is an exact gradient, not a pullback surrogate", config.rule.name())))
        }
    }
}
