//! Training loop: plain minibatch SGD where the decoder follows its exact
//! gradient and the encoder follows whatever the estimator supplies.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate_latent, LatentScore, PartAlignment};
use super::task::{Sample, Task, TaskKind};
use crate::estimators::{minrisk_grad, pullback_surrogate, relaxed_grad_structured, EstimatorConfig, Rule};
use crate::model::{Activation, DecoderGrad, EncoderGrad, LatentModel, ModelShape};
use crate::polytope::StructureFamily;
use crate::{Error, Result};

fn default_hidden() -> usize {
    32
}

fn default_batch() -> usize {
    10
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default)]
    pub activation: Activation,
    /// Feed `x` to the decoder alongside the latent point.
    #[serde(default)]
    pub decoder_uses_x: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { hidden: default_hidden(), activation: Activation::Tanh, decoder_uses_x: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Defaults to 0.1 on categorical tasks and 0.05 on structured ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
}

impl OptimizerConfig {
    pub fn new(epochs: usize) -> Self {
        OptimizerConfig { lr: None, epochs, batch: default_batch() }
    }

    pub fn learning_rate(&self, kind: TaskKind) -> f64 {
        self.lr.unwrap_or(match kind {
            TaskKind::CategoricalBottleneck => 0.1,
            TaskKind::SubsetRegression | TaskKind::TreeRegression => 0.05,
        })
    }
}

/// Everything shared by the runs of one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    #[serde(default)]
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    /// Report latent metrics after relabeling predictions by the family
    /// symmetry that best matches the training set.
    #[serde(default = "default_true")]
    pub align_latents: bool,
}

impl TrainSettings {
    pub fn new(optimizer: OptimizerConfig) -> Self {
        TrainSettings { model: ModelConfig::default(), optimizer, align_latents: true }
    }

    pub fn validate(&self, kind: TaskKind) -> Result<()> {
        if self.model.hidden == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        if self.optimizer.batch == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let lr = self.optimizer.learning_rate(kind);
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive and finite, got {lr}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_loss: f64,
    pub latent_exact: f64,
    pub latent_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: usize,
    pub estimator: EstimatorConfig,
    pub seed: u64,
    /// Epoch 0 is the untrained model; entries are contiguous.
    pub epochs: Vec<EpochMetrics>,
    /// First epoch whose training produced a non-finite loss, gradient or
    /// parameter. No metrics are recorded from that epoch on.
    pub diverged_at: Option<usize>,
    pub wall_ms: u64,
}

impl RunRecord {
    /// Metrics after the last epoch, or the epoch at which the run diverged.
    pub fn final_metrics(&self) -> Result<&EpochMetrics> {
        match self.diverged_at {
            Some(epoch) => Err(Error::DivergedRun { epoch }),
            None => Ok(self.epochs.last().expect("epoch 0 is always recorded")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub model: LatentModel,
}

pub fn init_model(task: &Task, config: &ModelConfig, seed: u64) -> LatentModel {
    let shape = ModelShape { dx: task.spec.dx, k: task.family.dim(), hidden: config.hidden, dy: task.spec.dy };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LatentModel::init(shape, task.spec.loss_kind(), config.activation, config.decoder_uses_x, &mut rng)
}

struct SampleGrad {
    decoder: DecoderGrad,
    encoder: EncoderGrad,
}

/// Parameter gradients for one sample under the estimator's rule.
fn sample_grad(
    model: &LatentModel,
    family: &StructureFamily,
    estimator: &EstimatorConfig,
    sample: &Sample,
) -> Result<SampleGrad> {
    let s = model.scores(&sample.x)?;
    let k = family.dim();
    let gamma_fn =
        |mu: &[f64]| model.latent_gradient(&sample.x, mu, &sample.target).unwrap_or_else(|_| vec![f64::NAN; k]);
    let tau = estimator.temperature;

    let (trace, decoder, surrogate, loss) = match estimator.rule {
        Rule::Spigot | Rule::Ste | Rule::Zero => {
            let z_hat = family.map_decode(&s);
            let trace = model.forward(&sample.x, family.vertex(z_hat), &sample.target)?;
            let (decoder, _) = model.decoder_backward(&trace);
            let surrogate = pullback_surrogate(estimator, family, &s, z_hat, gamma_fn)?;
            let loss = trace.loss;
            (trace, decoder, surrogate, loss)
        }
        Rule::SpigotCe | Rule::ExpGrad => {
            let z_hat = family.map_decode(&s);
            let mean = family.gibbs_marginals(&s).1;
            let trace = model.forward(&sample.x, &mean.mu, &sample.target)?;
            let (decoder, _) = model.decoder_backward(&trace);
            let surrogate = pullback_surrogate(estimator, family, &s, z_hat, gamma_fn)?;
            let loss = trace.loss;
            (trace, decoder, surrogate, loss)
        }
        Rule::Relaxed => {
            let scaled: Vec<f64> = s.iter().map(|v| v / tau).collect();
            let mean = family.gibbs_marginals(&scaled).1;
            let trace = model.forward(&sample.x, &mean.mu, &sample.target)?;
            let (decoder, gamma) = model.decoder_backward(&trace);
            let surrogate = relaxed_grad_structured(family, &s, &gamma, tau);
            let loss = trace.loss;
            (trace, decoder, surrogate, loss)
        }
        Rule::MinRisk => {
            let scaled: Vec<f64> = s.iter().map(|v| v / tau).collect();
            let (dist, _) = family.gibbs_marginals(&scaled);
            let mut decoder = DecoderGrad::zeros(model);
            let mut losses = Vec::with_capacity(family.len());
            let mut first = None;
            for (z, &p) in dist.probs.iter().enumerate() {
                let trace = model.forward(&sample.x, family.vertex(z), &sample.target)?;
                losses.push(trace.loss);
                if p > 0.0 {
                    decoder.add_scaled(&model.decoder_backward(&trace).0, p);
                }
                first.get_or_insert(trace);
            }
            let loss = dist.probs.iter().zip(&losses).map(|(p, l)| p * l).sum();
            let surrogate = minrisk_grad(family, &s, &losses, tau);
            (first.expect("families are non-empty"), decoder, surrogate, loss)
        }
    };
    if !loss.is_finite() || surrogate.iter().any(|g| !g.is_finite()) {
        return Err(Error::DivergedGradient { step: 0 });
    }
    let encoder = model.encoder_backward(&trace, &surrogate)?;
    Ok(SampleGrad { decoder, encoder })
}

/// Mean loss with the MAP vertex fed to the decoder, plus the decoded
/// vertices. This is the evaluation protocol for every rule.
fn evaluate_map(model: &LatentModel, family: &StructureFamily, samples: &[Sample]) -> Result<(f64, Vec<usize>)> {
    let mut total = 0.0;
    let mut preds = Vec::with_capacity(samples.len());
    for sample in samples {
        let s = model.scores(&sample.x)?;
        let z_hat = family.map_decode(&s);
        total += model.forward(&sample.x, family.vertex(z_hat), &sample.target)?.loss;
        preds.push(z_hat);
    }
    Ok((total / samples.len() as f64, preds))
}

fn epoch_metrics(model: &LatentModel, task: &Task, epoch: usize, align: bool) -> Result<EpochMetrics> {
    let (train_loss, train_preds) = evaluate_map(model, &task.family, &task.train)?;
    let (eval_loss, eval_preds) = evaluate_map(model, &task.family, &task.eval)?;
    let eval_truth: Vec<usize> = task.eval.iter().map(|s| s.z_star).collect();
    let LatentScore { exact, f1 } = if align {
        let train_truth: Vec<usize> = task.train.iter().map(|s| s.z_star).collect();
        PartAlignment::fit(&task.family, &train_preds, &train_truth).evaluate(&task.family, &eval_preds, &eval_truth)
    } else {
        evaluate_latent(&task.family, &eval_preds, &eval_truth)
    };
    Ok(EpochMetrics { epoch, train_loss, eval_loss, latent_exact: exact, latent_f1: f1 })
}

fn is_numerical_failure(err: &Error) -> bool {
    matches!(err, Error::DivergedGradient { .. } | Error::NoConvergence { .. })
}

/// Trains one model from `seed` on `task` and records per-epoch metrics.
///
/// Numerical blow-ups end the run early and are reported through
/// [`RunRecord::diverged_at`]; only configuration and shape problems are
/// returned as errors.
pub fn train_run(
    task: &Task,
    estimator: &EstimatorConfig,
    seed: u64,
    settings: &TrainSettings,
    run_id: usize,
) -> Result<RunOutcome> {
    estimator.validate()?;
    settings.validate(task.spec.kind)?;
    let started = Instant::now();
    let lr = settings.optimizer.learning_rate(task.spec.kind);
    let batch = settings.optimizer.batch;

    let mut model = init_model(task, &settings.model, seed);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle_rng.set_stream(1);

    let mut epochs = vec![epoch_metrics(&model, task, 0, settings.align_latents)?];
    let mut diverged_at = None;
    let mut order: Vec<usize> = (0..task.train.len()).collect();

    'training: for epoch in 1..=settings.optimizer.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(batch) {
            let mut decoder = DecoderGrad::zeros(&model);
            let mut encoder = EncoderGrad::zeros(&model);
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                match sample_grad(&model, &task.family, estimator, &task.train[i]) {
                    Ok(g) => {
                        decoder.add_scaled(&g.decoder, scale);
                        encoder.add_scaled(&g.encoder, scale);
                    }
                    Err(e) if is_numerical_failure(&e) => {
                        diverged_at = Some(epoch);
                        break 'training;
                    }
                    Err(e) => return Err(e),
                }
            }
            model.step_decoder(&decoder, lr);
            model.step_encoder(&encoder, lr);
            if !model.is_finite() {
                diverged_at = Some(epoch);
                break 'training;
            }
        }
        let metrics = epoch_metrics(&model, task, epoch, settings.align_latents)?;
        if !(metrics.train_loss.is_finite() && metrics.eval_loss.is_finite()) {
            diverged_at = Some(epoch);
            break;
        }
        epochs.push(metrics);
    }

    let record = RunRecord {
        run_id,
        estimator: *estimator,
        seed,
        epochs,
        diverged_at,
        wall_ms: started.elapsed().as_millis() as u64,
    };
    Ok(RunOutcome { record, model })
}

/// One entry of a batch of runs over a shared task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunPlan {
    pub run_id: usize,
    pub estimator: EstimatorConfig,
    pub seed: u64,
}

/// Runs every plan, possibly in parallel on the current rayon pool. Results
/// come back in plan order.
pub fn run_all(task: &Task, plans: &[RunPlan], settings: &TrainSettings) -> Result<Vec<RunOutcome>> {
    plans.par_iter().map(|p| train_run(task, &p.estimator, p.seed, settings, p.run_id)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::task::{generate_task, TaskSpec};
    use crate::polytope::FamilyKind;

    fn small_task() -> Task {
        generate_task(&TaskSpec {
            kind: TaskKind::CategoricalBottleneck,
            family: FamilyKind::Categorical { k: 3 },
            dx: 4,
            dy: 3,
            noise_sigma: 0.0,
            n_train: 30,
            n_eval: 15,
            seed: 1,
        })
        .unwrap()
    }

    #[test]
    fn zero_rule_leaves_the_encoder_alone() {
        let task = small_task();
        let settings = TrainSettings::new(OptimizerConfig::new(5));
        let out = train_run(&task, &EstimatorConfig::new(Rule::Zero, 1.0), 7, &settings, 0).unwrap();
        let init = init_model(&task, &settings.model, 7);
        assert_eq!(out.model.encoder, init.encoder);
        assert_ne!(out.model.decoder, init.decoder);
        assert_eq!(out.record.epochs.len(), 6);
    }

    #[test]
    fn every_rule_trains_without_error() {
        let task = small_task();
        let settings = TrainSettings::new(OptimizerConfig::new(2));
        for rule in [Rule::Spigot, Rule::Ste, Rule::SpigotCe, Rule::ExpGrad, Rule::Relaxed, Rule::MinRisk] {
            let out = train_run(&task, &EstimatorConfig::new(rule, 0.5), 3, &settings, 0).unwrap();
            assert_eq!(out.record.diverged_at, None, "{rule:?}");
            assert_eq!(out.record.epochs.len(), 3);
        }
    }

    #[test]
    fn huge_learning_rate_is_recorded_as_divergence() {
        let task = generate_task(&TaskSpec {
            kind: TaskKind::SubsetRegression,
            family: FamilyKind::KSubset { k: 4, size: 2 },
            dx: 5,
            dy: 3,
            noise_sigma: 0.0,
            n_train: 20,
            n_eval: 5,
            seed: 2,
        })
        .unwrap();
        let mut settings = TrainSettings::new(OptimizerConfig::new(50));
        settings.optimizer.lr = Some(1e6);
        settings.model.activation = Activation::Identity;
        let out = train_run(&task, &EstimatorConfig::new(Rule::Ste, 1.0), 0, &settings, 0).unwrap();
        let at = out.record.diverged_at.expect("run should diverge");
        assert_eq!(out.record.epochs.len(), at);
    }

    #[test]
    fn runs_are_reproducible() {
        let task = small_task();
        let settings = TrainSettings::new(OptimizerConfig::new(3));
        let est = EstimatorConfig::new(Rule::Spigot, 1.0);
        let a = train_run(&task, &est, 11, &settings, 0).unwrap();
        let b = train_run(&task, &est, 11, &settings, 0).unwrap();
        assert_eq!(a.record.epochs, b.record.epochs);
        assert_eq!(a.model, b.model);
    }
}
