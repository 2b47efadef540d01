//! Randomized comparisons of the implementation against the independent
//! references in [`crate::oracle`], grouped into named suites.
//!
//! Every suite draws its instances from a fixed ChaCha8 seed, so a failure
//! is reproducible and the failing inputs are printed in full.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::estimators::{
    ce_grad_unstructured, eg_grad_unstructured, minrisk_grad, minrisk_grad_score_function, perceptron_grad,
    pullback_descend, relaxed_grad_structured, spigot_grad, ste_grad,
};
use crate::model::{finite_diff_check, Activation, LatentModel, LossKind, ModelShape, Target};
use crate::oracle::{
    brute_force_gibbs_mean, central_difference, kkt_simplex_projection, max_relative_error, projected_gradient_polytope,
};
use crate::polytope::{project_simplex, softmax, MeanPoint, StructureFamily};
use crate::{Error, Result};

pub const SUITES: [&str; 6] = ["simplex", "polytope", "categorical", "identities", "gradients", "pullback"];

/// Failures printed per suite; the rest are only counted.
const SHOWN_FAILURES: usize = 5;

/// Functions under test that a caller may swap out, e.g. for a
/// deliberately broken projection in a negative control.
#[derive(Debug, Clone, Copy)]
pub struct Implementations {
    pub project_simplex: fn(&[f64]) -> Vec<f64>,
}

impl Default for Implementations {
    fn default() -> Self {
        Implementations { project_simplex }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: usize,
    pub failures: Vec<String>,
}

impl SuiteReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

struct Cases {
    name: &'static str,
    passed: usize,
    failures: Vec<String>,
}

impl Cases {
    fn new(name: &'static str) -> Self {
        Cases { name, passed: 0, failures: Vec::new() }
    }

    fn record(&mut self, outcome: std::result::Result<(), String>) {
        match outcome {
            Ok(()) => self.passed += 1,
            Err(msg) => {
                let case = self.passed + self.failures.len();
                self.failures.push(format!("case {case}: {msg}"));
            }
        }
    }

    fn finish(self) -> SuiteReport {
        SuiteReport { name: self.name, passed: self.passed, failures: self.failures }
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn families() -> Vec<StructureFamily> {
    vec![
        StructureFamily::categorical(5).expect("small family"),
        StructureFamily::ksubset(6, 3).expect("small family"),
        StructureFamily::arborescence(3).expect("small family"),
    ]
}

/// Runs the named suite, or all suites when `filter` is `None`, writing one
/// summary line per suite and the inputs of the first failures to `out`.
pub fn run_suites<W: Write>(filter: Option<&str>, imp: &Implementations, out: &mut W) -> Result<Vec<SuiteReport>> {
    let names: Vec<&str> = match filter {
        None => SUITES.to_vec(),
        Some(name) if SUITES.contains(&name) => vec![name],
        Some(name) => {
            return Err(Error::Config(format!("unknown suite '{name}'; expected one of {}", SUITES.join(", "))));
        }
    };
    let mut reports = Vec::new();
    for name in names {
        let report = match name {
            "simplex" => simplex_suite(imp),
            "polytope" => polytope_suite()?,
            "categorical" => categorical_suite(imp)?,
            "identities" => identities_suite()?,
            "gradients" => gradients_suite()?,
            "pullback" => pullback_suite()?,
            _ => unreachable!("suite list is closed"),
        };
        writeln!(
            out,
            "{:<12} {} passed, {} failed  {}",
            report.name,
            report.passed,
            report.failures.len(),
            if report.ok() { "ok" } else { "FAIL" }
        )?;
        for f in report.failures.iter().take(SHOWN_FAILURES) {
            writeln!(out, "    {f}")?;
        }
        if report.failures.len() > SHOWN_FAILURES {
            writeln!(out, "    ... {} more", report.failures.len() - SHOWN_FAILURES)?;
        }
        reports.push(report);
    }
    Ok(reports)
}

/// Simplex projection against exhaustive KKT enumeration.
pub fn simplex_suite(imp: &Implementations) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut cases = Cases::new("simplex");
    for _ in 0..1000 {
        let k = rng.random_range(2..=8);
        let scale = [0.1, 1.0, 10.0][rng.random_range(0..3)];
        let v = normal_vec(&mut rng, k, scale);
        let got = (imp.project_simplex)(&v);
        let want = kkt_simplex_projection(&v);
        let err = max_abs_diff(&got, &want);
        cases.record(if err <= 1e-10 {
            Ok(())
        } else {
            Err(format!("v = {v:?}: got {got:?}, oracle {want:?}, error {err:e}"))
        });
    }
    cases.finish()
}

/// Polytope projection against projected gradient over the vertex simplex.
pub fn polytope_suite() -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut cases = Cases::new("polytope");
    for family in [StructureFamily::arborescence(3)?, StructureFamily::ksubset(6, 3)?] {
        for _ in 0..100 {
            let v = normal_vec(&mut rng, family.dim(), 1.0);
            let got = family.project_polytope(&v)?;
            let objective: f64 = got.mu.iter().zip(&v).map(|(m, x)| (m - x) * (m - x)).sum();
            let oracle = projected_gradient_polytope(family.vertices(), &v, 20_000);
            let gap = (objective - oracle.objective).abs();
            let cert = got.certificate_error(&family);
            cases.record(if gap <= 1e-6 && cert <= 1e-9 {
                Ok(())
            } else {
                Err(format!(
                    "{} v = {v:?}: objective {objective:e} vs oracle {:e} (gap {gap:e}), certificate error {cert:e}",
                    family.kind(),
                    oracle.objective
                ))
            });
        }
    }
    Ok(cases.finish())
}

/// On the categorical family the structured operations reduce to their
/// simplex counterparts.
pub fn categorical_suite(imp: &Implementations) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut cases = Cases::new("categorical");
    for _ in 0..500 {
        let k = rng.random_range(2..=10);
        let family = StructureFamily::categorical(k)?;
        let scale = [0.1, 1.0, 10.0][rng.random_range(0..3)];
        let s = normal_vec(&mut rng, k, scale);

        let sparse = family.sparsemap(&s)?;
        let e_sparse = max_abs_diff(&sparse.mu, &(imp.project_simplex)(&s));
        let e_gibbs = max_abs_diff(&family.gibbs_marginals(&s).1.mu, &softmax(&s));
        let argmax = s.iter().enumerate().fold(0, |best, (i, &x)| if x > s[best] { i } else { best });
        let map = family.map_decode(&s);
        cases.record(if e_sparse <= 1e-10 && e_gibbs <= 1e-10 && map == argmax {
            Ok(())
        } else {
            Err(format!(
                "s = {s:?}: sparsemap error {e_sparse:e}, gibbs error {e_gibbs:e}, map {map} vs argmax {argmax}"
            ))
        });
    }
    Ok(cases.finish())
}

/// Algebraic identities between the closed-form rules and their
/// descent-based definitions.
pub fn identities_suite() -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut cases = Cases::new("identities");
    let families = families();
    for i in 0..200 {
        let family = &families[i % families.len()];
        let k = family.dim();
        let s = normal_vec(&mut rng, k, 1.0);
        let gamma = normal_vec(&mut rng, k, 1.0);
        let eta = rng.random_range(0.01..2.0);
        let z_hat = family.map_decode(&s);
        let z = family.vertex(z_hat);

        // One projected step from the argmax vertex, then the perceptron gradient.
        let closed = spigot_grad(family, z_hat, &gamma, eta)?;
        let target = pullback_descend(family, &MeanPoint::vertex(family, z_hat), |_| gamma.clone(), &[eta])?;
        let via_descent = perceptron_grad(family, &s, &target);
        let e_spigot = max_abs_diff(&closed, &via_descent);

        let ste = ste_grad(&gamma, eta);
        let ste_exact = ste.iter().zip(&gamma).all(|(a, g)| *a == eta * g);
        let unconstrained: Vec<f64> = z.iter().zip(&gamma).map(|(zi, g)| zi - (zi - eta * g)).collect();
        let e_ste = ste.iter().zip(&unconstrained).map(|(a, b)| (a - b).abs() / a.abs().max(1.0)).fold(0.0, f64::max);

        let cat = StructureFamily::categorical(k)?;
        let p = brute_force_gibbs_mean(cat.vertices(), &s);
        let shifted: Vec<f64> = s.iter().zip(&gamma).map(|(a, g)| a - eta * g).collect();
        let q = brute_force_gibbs_mean(cat.vertices(), &shifted);
        let eg_ref: Vec<f64> = p.iter().zip(&q).map(|(a, b)| a - b).collect();
        let eg = eg_grad_unstructured(&s, &gamma, eta);
        let e_eg = max_abs_diff(&eg, &eg_ref);
        let eg_sum = eg.iter().sum::<f64>().abs();

        let moved: Vec<f64> = p.iter().zip(&gamma).map(|(a, g)| a - eta * g).collect();
        let ce_ref: Vec<f64> = p.iter().zip(kkt_simplex_projection(&moved)).map(|(a, b)| a - b).collect();
        let e_ce = max_abs_diff(&ce_grad_unstructured(&s, &gamma, eta), &ce_ref);

        let ok = e_spigot <= 1e-12 && ste_exact && e_ste <= 1e-14 && e_eg <= 1e-12 && eg_sum <= 1e-12 && e_ce <= 1e-12;
        cases.record(if ok {
            Ok(())
        } else {
            Err(format!(
                "{} s = {s:?}, gamma = {gamma:?}, eta = {eta}: spigot {e_spigot:e}, ste exact {ste_exact} \
                 / unconstrained {e_ste:e}, eg {e_eg:e} (sum {eg_sum:e}), ce {e_ce:e}",
                family.kind()
            ))
        });
    }
    Ok(cases.finish())
}

fn random_model(rng: &mut ChaCha8Rng, k: usize, activation: Activation) -> (LatentModel, Vec<f64>, Target) {
    let shape = ModelShape { dx: 3, k, hidden: 6, dy: 2 };
    let model = LatentModel::init(shape, LossKind::SquaredError, activation, false, rng);
    let x = normal_vec(rng, 3, 1.0);
    let y = Target::Values(normal_vec(rng, 2, 1.0));
    (model, x, y)
}

/// Exact gradients against central finite differences.
pub fn gradients_suite() -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut cases = Cases::new("gradients");
    let families = families();
    const STEP: f64 = 1e-5;
    for i in 0..300 {
        let family = &families[i % families.len()];
        let k = family.dim();
        let s = normal_vec(&mut rng, k, 1.0);
        let tau = rng.random_range(0.5..2.0);
        let (model, x, y) = random_model(&mut rng, k, Activation::Tanh);
        let latent_loss = |mu: &[f64]| model.forward(&x, mu, &y).map(|t| t.loss).unwrap_or(f64::NAN);
        let relaxed_mean = |s: &[f64]| {
            let scaled: Vec<f64> = s.iter().map(|v| v / tau).collect();
            family.gibbs_marginals(&scaled).1.mu
        };

        let outcome = match i / families.len() % 3 {
            0 => {
                let mu = relaxed_mean(&s);
                let gamma = model.latent_gradient(&x, &mu, &y)?;
                let analytic = relaxed_grad_structured(family, &s, &gamma, tau);
                let err = finite_diff_check(|s| latent_loss(&relaxed_mean(s)), &s, &analytic, STEP);
                (err <= 1e-6).then_some(()).ok_or(format!("relaxed, tau = {tau}: error {err:e}"))
            }
            1 => {
                let losses: Vec<f64> = (0..family.len()).map(|_| rng.random_range(0.0..3.0)).collect();
                let analytic = minrisk_grad(family, &s, &losses, tau);
                let score_form = minrisk_grad_score_function(family, &s, &losses, tau);
                let risk = |s: &[f64]| {
                    let scaled: Vec<f64> = s.iter().map(|v| v / tau).collect();
                    let (dist, _) = family.gibbs_marginals(&scaled);
                    dist.probs.iter().zip(&losses).map(|(p, l)| p * l).sum::<f64>()
                };
                let err = finite_diff_check(risk, &s, &analytic, STEP);
                let forms = max_abs_diff(&analytic, &score_form);
                (err <= 1e-6 && forms <= 1e-12)
                    .then_some(())
                    .ok_or(format!("minrisk, tau = {tau}: error {err:e}, score-function mismatch {forms:e}"))
            }
            _ => {
                let mu: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
                let gamma = model.latent_gradient(&x, &mu, &y)?;
                let numeric = central_difference(latent_loss, &mu, STEP);
                let err = max_relative_error(&gamma, &numeric);
                (err <= 1e-6).then_some(()).ok_or(format!("decoder latent gradient at mu = {mu:?}: error {err:e}"))
            }
        };
        cases.record(outcome.map_err(|m| format!("{} s = {s:?}: {m}", family.kind())));
    }
    Ok(cases.finish())
}

/// Projected descent on a convex pulled-back loss never increases it.
pub fn pullback_suite() -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut cases = Cases::new("pullback");
    let families = families();
    for i in 0..100 {
        let family = &families[i % families.len()];
        let (model, x, y) = random_model(&mut rng, family.dim(), Activation::Identity);
        let loss = |mu: &[f64]| model.forward(&x, mu, &y).map(|t| t.loss).unwrap_or(f64::NAN);
        let gamma_fn = |mu: &[f64]| model.latent_gradient(&x, mu, &y).unwrap_or_else(|_| vec![f64::NAN; mu.len()]);
        let start = rng.random_range(0..family.len());
        let mut point = MeanPoint::vertex(family, start);
        let mut history = vec![loss(&point.mu)];
        for _ in 0..25 {
            point = pullback_descend(family, &point, gamma_fn, &[0.01])?;
            history.push(loss(&point.mu));
        }
        let worst = history.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
        cases.record(if worst <= 1e-12 {
            Ok(())
        } else {
            Err(format!("{} from vertex {start}: loss rose by {worst:e}; history {history:?}", family.kind()))
        });
    }
    Ok(cases.finish())
}
