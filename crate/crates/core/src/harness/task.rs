//! Synthetic tasks with a known latent structure.
//!
//! All randomness comes from a ChaCha8 stream seeded with `TaskSpec::seed`,
//! drawn in a fixed order: task parameters first, then training samples,
//! then evaluation samples.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::model::{LossKind, Target};
use crate::polytope::{FamilyKind, StructureFamily};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// `x = c_k + noise` for a hidden class `k`, `y = π(k)`.
    CategoricalBottleneck,
    /// `x = A z + noise`, `y = B z + noise` for a hidden k-subset `z`.
    SubsetRegression,
    /// As [`TaskKind::SubsetRegression`] with a hidden arborescence.
    TreeRegression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub family: FamilyKind,
    pub dx: usize,
    pub dy: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    pub n_train: usize,
    pub n_eval: usize,
    pub seed: u64,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let family_ok = matches!(
            (self.kind, self.family),
            (TaskKind::CategoricalBottleneck, FamilyKind::Categorical { .. })
                | (TaskKind::SubsetRegression, FamilyKind::KSubset { .. })
                | (TaskKind::TreeRegression, FamilyKind::Arborescence { .. })
        );
        if !family_ok {
            return Err(Error::Config(format!("task {:?} cannot use family {}", self.kind, self.family)));
        }
        if self.dx == 0 || self.dy == 0 || self.n_train == 0 || self.n_eval == 0 {
            return Err(Error::Config("task sizes must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn loss_kind(&self) -> LossKind {
        match self.kind {
            TaskKind::CategoricalBottleneck => LossKind::SoftmaxCrossEntropy,
            TaskKind::SubsetRegression | TaskKind::TreeRegression => LossKind::SquaredError,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub target: Target,
    /// Index of the true latent vertex. Only used for evaluation.
    pub z_star: usize,
}

#[derive(Debug, Clone)]
pub struct Task {
    pub spec: TaskSpec,
    pub family: StructureFamily,
    pub train: Vec<Sample>,
    pub eval: Vec<Sample>,
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

fn add_noise(v: &mut [f64], sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma > 0.0 {
        for x in v {
            *x += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

fn apply(matrix: &[Vec<f64>], family: &StructureFamily, z: usize) -> Vec<f64> {
    let ones = family.vertex_support(z);
    matrix.iter().map(|row| ones.iter().map(|&j| row[j]).sum()).collect()
}

pub fn generate_task(spec: &TaskSpec) -> Result<Task> {
    spec.validate()?;
    let family = StructureFamily::new(spec.family)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sigma = spec.noise_sigma;

    let (train, eval) = match spec.kind {
        TaskKind::CategoricalBottleneck => {
            let k = family.dim();
            let centers = gaussian_matrix(k, spec.dx, &mut rng);
            // Injective when there are enough output classes.
            let class_map: Vec<usize> = if spec.dy >= k {
                let mut classes: Vec<usize> = (0..spec.dy).collect();
                classes.shuffle(&mut rng);
                classes.truncate(k);
                classes
            } else {
                (0..k).map(|_| rng.random_range(0..spec.dy)).collect()
            };
            let draw = |rng: &mut ChaCha8Rng| {
                let z_star = rng.random_range(0..k);
                let mut x = centers[z_star].clone();
                add_noise(&mut x, sigma, rng);
                Sample { x, target: Target::Class(class_map[z_star]), z_star }
            };
            let train = (0..spec.n_train).map(|_| draw(&mut rng)).collect();
            let eval = (0..spec.n_eval).map(|_| draw(&mut rng)).collect();
            (train, eval)
        }
        TaskKind::SubsetRegression | TaskKind::TreeRegression => {
            let k = family.dim();
            let a = gaussian_matrix(spec.dx, k, &mut rng);
            let b = gaussian_matrix(spec.dy, k, &mut rng);
            let n = family.len();
            let draw = |rng: &mut ChaCha8Rng| {
                let z_star = rng.random_range(0..n);
                let mut x = apply(&a, &family, z_star);
                add_noise(&mut x, sigma, rng);
                let mut y = apply(&b, &family, z_star);
                add_noise(&mut y, sigma, rng);
                Sample { x, target: Target::Values(y), z_star }
            };
            let train = (0..spec.n_train).map(|_| draw(&mut rng)).collect();
            let eval = (0..spec.n_eval).map(|_| draw(&mut rng)).collect();
            (train, eval)
        }
    };
    Ok(Task { spec: spec.clone(), family, train, eval })
}
