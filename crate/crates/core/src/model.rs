//! Encoder → argmax → decoder network with analytic gradients.
//!
//! The encoder is affine, `s = W x + b`. The decoder is a one-hidden-layer
//! network on the concatenation `[x; μ]`, where `μ` is either a vertex (the
//! argmax output) or any point of the cube `[0,1]^K`. Because the decoder is
//! defined off the vertices, `γ = ∇_μ L` exists and is what every surrogate
//! rule consumes.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::oracle::{central_difference, max_relative_error};
use crate::polytope::{log_sum_exp, softmax};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    /// Makes the decoder affine in `μ`; used for convexity checks.
    Identity,
}

impl Activation {
    fn name(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `½‖ŷ - y‖²`.
    SquaredError,
    /// `-log softmax(ŷ)_y`.
    SoftmaxCrossEntropy,
}

impl LossKind {
    fn name(&self) -> &'static str {
        match self {
            LossKind::SquaredError => "squared_error",
            LossKind::SoftmaxCrossEntropy => "softmax_cross_entropy",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    Values(Vec<f64>),
}

/// Layer sizes: input `dx`, latent parts `k`, hidden width, output `dy`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub dx: usize,
    pub k: usize,
    pub hidden: usize,
    pub dy: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    /// `k × dx`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    /// `hidden × (dx + k)`; columns `0..dx` read `x`, the rest read `μ`.
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    /// `dy × hidden`.
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentModel {
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub loss: LossKind,
    /// When false the decoder is fed zeros in place of `x` and the `x`
    /// block of `w1` never receives gradient, so `ŷ` depends on `μ` only.
    pub decoder_uses_x: bool,
}

/// Everything the backward passes need from one forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    /// Latent point fed to the decoder.
    pub latent: Vec<f64>,
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
    pub target: Target,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrad {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderGrad {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

impl EncoderGrad {
    pub fn zeros(model: &LatentModel) -> Self {
        let w = &model.encoder.weight;
        EncoderGrad { weight: DMatrix::zeros(w.nrows(), w.ncols()), bias: DVector::zeros(w.nrows()) }
    }

    pub fn add_scaled(&mut self, other: &EncoderGrad, scale: f64) {
        self.weight += &other.weight * scale;
        self.bias += &other.bias * scale;
    }
}

impl DecoderGrad {
    pub fn zeros(model: &LatentModel) -> Self {
        let d = &model.decoder;
        DecoderGrad {
            w1: DMatrix::zeros(d.w1.nrows(), d.w1.ncols()),
            b1: DVector::zeros(d.b1.len()),
            w2: DMatrix::zeros(d.w2.nrows(), d.w2.ncols()),
            b2: DVector::zeros(d.b2.len()),
        }
    }

    pub fn add_scaled(&mut self, other: &DecoderGrad, scale: f64) {
        self.w1 += &other.w1 * scale;
        self.b1 += &other.b1 * scale;
        self.w2 += &other.w2 * scale;
        self.b2 += &other.b2 * scale;
    }
}

fn xavier<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    // Row-major fill so the draw order does not depend on nalgebra's layout.
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = rng.random_range(-a..a);
        }
    }
    m
}

impl LatentModel {
    /// Uniform Glorot initialization of all weights, zero biases.
    pub fn init<R: Rng>(
        shape: ModelShape,
        loss: LossKind,
        activation: Activation,
        decoder_uses_x: bool,
        rng: &mut R,
    ) -> Self {
        let ModelShape { dx, k, hidden, dy } = shape;
        let encoder = Encoder { weight: xavier(k, dx, rng), bias: DVector::zeros(k) };
        let mut w1 = xavier(hidden, dx + k, rng);
        if !decoder_uses_x {
            w1.columns_mut(0, dx).fill(0.0);
        }
        let decoder =
            Decoder { w1, b1: DVector::zeros(hidden), w2: xavier(dy, hidden, rng), b2: DVector::zeros(dy), activation };
        LatentModel { encoder, decoder, loss, decoder_uses_x }
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            dx: self.encoder.weight.ncols(),
            k: self.encoder.weight.nrows(),
            hidden: self.decoder.w1.nrows(),
            dy: self.decoder.w2.nrows(),
        }
    }

    fn check_shapes(&self) -> Result<()> {
        let ModelShape { dx, k, hidden, dy } = self.shape();
        let d = &self.decoder;
        let ok = self.encoder.bias.len() == k
            && d.w1.ncols() == dx + k
            && d.b1.len() == hidden
            && d.w2.ncols() == hidden
            && d.b2.len() == dy;
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("inconsistent parameter shapes".into()))
        }
    }

    /// Encoder scores `s = W x + b`.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.encoder.weight.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "input has length {}, encoder expects {}",
                x.len(),
                self.encoder.weight.ncols()
            )));
        }
        let s = &self.encoder.weight * DVector::from_column_slice(x) + &self.encoder.bias;
        Ok(s.iter().copied().collect())
    }

    /// Runs the encoder on `x` and the decoder on `[x; latent]`.
    pub fn forward(&self, x: &[f64], latent: &[f64], target: &Target) -> Result<ForwardTrace> {
        let ModelShape { dx, k, dy, .. } = self.shape();
        if latent.len() != k {
            return Err(Error::ShapeMismatch(format!("latent has length {}, expected {k}", latent.len())));
        }
        match target {
            Target::Class(c) if *c >= dy || self.loss != LossKind::SoftmaxCrossEntropy => {
                return Err(Error::ShapeMismatch(format!("class target {c} incompatible with output/loss")));
            }
            Target::Values(v) if v.len() != dy || self.loss != LossKind::SquaredError => {
                return Err(Error::ShapeMismatch("regression target incompatible with output/loss".into()));
            }
            _ => {}
        }
        let s = self.scores(x)?;

        let d = &self.decoder;
        let mut input = DVector::zeros(dx + k);
        if self.decoder_uses_x {
            input.rows_mut(0, dx).copy_from_slice(x);
        }
        input.rows_mut(dx, k).copy_from_slice(latent);
        let pre = &d.w1 * &input + &d.b1;
        let hidden = match d.activation {
            Activation::Tanh => pre.map(f64::tanh),
            Activation::Identity => pre,
        };
        let output = &d.w2 * &hidden + &d.b2;
        let output: Vec<f64> = output.iter().copied().collect();
        let loss = loss_value(self.loss, &output, target);

        Ok(ForwardTrace {
            x: x.to_vec(),
            s,
            latent: latent.to_vec(),
            hidden: hidden.iter().copied().collect(),
            output,
            target: target.clone(),
            loss,
        })
    }

    /// Exact gradients of the loss with respect to the decoder parameters
    /// and to the latent input (`γ`).
    pub fn decoder_backward(&self, trace: &ForwardTrace) -> (DecoderGrad, Vec<f64>) {
        let ModelShape { dx, k, .. } = self.shape();
        let d = &self.decoder;
        let d_out = DVector::from_vec(loss_gradient(self.loss, &trace.output, &trace.target));
        let hidden = DVector::from_column_slice(&trace.hidden);

        let w2 = &d_out * hidden.transpose();
        let d_hidden = d.w2.transpose() * &d_out;
        let d_pre = match d.activation {
            Activation::Tanh => d_hidden.zip_map(&hidden, |g, h| g * (1.0 - h * h)),
            Activation::Identity => d_hidden,
        };

        let mut input = DVector::zeros(dx + k);
        if self.decoder_uses_x {
            input.rows_mut(0, dx).copy_from_slice(&trace.x);
        }
        input.rows_mut(dx, k).copy_from_slice(&trace.latent);
        let w1 = &d_pre * input.transpose();
        let d_input = d.w1.transpose() * &d_pre;
        let gamma = d_input.rows(dx, k).iter().copied().collect();

        (DecoderGrad { w1, b1: d_pre, w2, b2: d_out }, gamma)
    }

    /// `γ(μ)`: the latent gradient with the decoder fed `μ`.
    pub fn latent_gradient(&self, x: &[f64], latent: &[f64], target: &Target) -> Result<Vec<f64>> {
        let trace = self.forward(x, latent, target)?;
        Ok(self.decoder_backward(&trace).1)
    }

    /// Chains a replacement gradient `∇̃_s` through the affine encoder:
    /// `∂/∂W = ∇̃_s xᵀ`, `∂/∂b = ∇̃_s`.
    pub fn encoder_backward(&self, trace: &ForwardTrace, surrogate: &[f64]) -> Result<EncoderGrad> {
        let k = self.encoder.bias.len();
        if surrogate.len() != k {
            return Err(Error::ShapeMismatch(format!("surrogate has length {}, expected {k}", surrogate.len())));
        }
        let g = DVector::from_column_slice(surrogate);
        let x = DVector::from_column_slice(&trace.x);
        Ok(EncoderGrad { weight: &g * x.transpose(), bias: g })
    }

    /// `θ ← θ - lr · grad` on the decoder.
    pub fn step_decoder(&mut self, grad: &DecoderGrad, lr: f64) {
        let d = &mut self.decoder;
        d.w1 -= &grad.w1 * lr;
        if !self.decoder_uses_x {
            let dx = self.encoder.weight.ncols();
            d.w1.columns_mut(0, dx).fill(0.0);
        }
        d.b1 -= &grad.b1 * lr;
        d.w2 -= &grad.w2 * lr;
        d.b2 -= &grad.b2 * lr;
    }

    /// `φ ← φ - lr · grad` on the encoder.
    pub fn step_encoder(&mut self, grad: &EncoderGrad, lr: f64) {
        self.encoder.weight -= &grad.weight * lr;
        self.encoder.bias -= &grad.bias * lr;
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, m)| m.iter().all(|v| v.is_finite()))
    }

    fn named_tensors(&self) -> Vec<(&'static str, DMatrix<f64>)> {
        let as_col = |v: &DVector<f64>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        vec![
            ("encoder.weight", self.encoder.weight.clone()),
            ("encoder.bias", as_col(&self.encoder.bias)),
            ("decoder.w1", self.decoder.w1.clone()),
            ("decoder.b1", as_col(&self.decoder.b1)),
            ("decoder.w2", self.decoder.w2.clone()),
            ("decoder.b2", as_col(&self.decoder.b2)),
        ]
    }

    /// Serializes the model to the text checkpoint format:
    ///
    /// ```text
    /// LGL-CHECKPOINT 1
    /// loss <squared_error|softmax_cross_entropy>
    /// activation <tanh|identity>
    /// decoder_uses_x <true|false>
    /// tensor <name> <rows> <cols>
    /// <one line per row, space-separated values>
    /// ...
    /// end
    /// ```
    ///
    /// Tensors appear in the order `encoder.weight`, `encoder.bias`,
    /// `decoder.w1`, `decoder.b1`, `decoder.w2`, `decoder.b2`; biases are
    /// single-column. Values use the shortest representation that parses
    /// back to the same `f64`.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::from("LGL-CHECKPOINT 1\n");
        out.push_str(&format!("loss {}\n", self.loss.name()));
        out.push_str(&format!("activation {}\n", self.decoder.activation.name()));
        out.push_str(&format!("decoder_uses_x {}\n", self.decoder_uses_x));
        for (name, m) in self.named_tensors() {
            out.push_str(&format!("tensor {name} {} {}\n", m.nrows(), m.ncols()));
            for row in m.row_iter() {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        let mut lines = text.lines();
        if lines.next() != Some("LGL-CHECKPOINT 1") {
            return Err(bad("missing or unsupported header"));
        }
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad("truncated header"))?;
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| Error::Checkpoint(format!("expected `{key}`, found `{line}`")))
        };
        let loss = match field("loss")?.as_str() {
            "squared_error" => LossKind::SquaredError,
            "softmax_cross_entropy" => LossKind::SoftmaxCrossEntropy,
            other => return Err(Error::Checkpoint(format!("unknown loss `{other}`"))),
        };
        let activation = match field("activation")?.as_str() {
            "tanh" => Activation::Tanh,
            "identity" => Activation::Identity,
            other => return Err(Error::Checkpoint(format!("unknown activation `{other}`"))),
        };
        let decoder_uses_x = match field("decoder_uses_x")?.as_str() {
            "true" => true,
            "false" => false,
            other => return Err(Error::Checkpoint(format!("bad flag `{other}`"))),
        };

        let names = ["encoder.weight", "encoder.bias", "decoder.w1", "decoder.b1", "decoder.w2", "decoder.b2"];
        let mut tensors = Vec::with_capacity(names.len());
        for name in names {
            let header = lines.next().ok_or_else(|| bad("truncated tensor list"))?;
            let parts: Vec<&str> = header.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "tensor" || parts[1] != name {
                return Err(Error::Checkpoint(format!("expected tensor `{name}`, found `{header}`")));
            }
            let rows: usize = parts[2].parse().map_err(|_| bad("bad row count"))?;
            let cols: usize = parts[3].parse().map_err(|_| bad("bad column count"))?;
            let mut m = DMatrix::zeros(rows, cols);
            for i in 0..rows {
                let line = lines.next().ok_or_else(|| bad("truncated tensor"))?;
                let values: Vec<f64> = line
                    .split_whitespace()
                    .map(|v| v.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Checkpoint(format!("bad value in `{name}`")))?;
                if values.len() != cols {
                    return Err(Error::Checkpoint(format!("row {i} of `{name}` has {} values", values.len())));
                }
                for (j, v) in values.into_iter().enumerate() {
                    m[(i, j)] = v;
                }
            }
            tensors.push(m);
        }
        if lines.next() != Some("end") {
            return Err(bad("missing `end` marker"));
        }

        let col = |m: &DMatrix<f64>| -> Result<DVector<f64>> {
            if m.ncols() != 1 {
                return Err(bad("bias tensors must have one column"));
            }
            Ok(DVector::from_column_slice(m.as_slice()))
        };
        let model = LatentModel {
            encoder: Encoder { weight: tensors[0].clone(), bias: col(&tensors[1])? },
            decoder: Decoder {
                w1: tensors[2].clone(),
                b1: col(&tensors[3])?,
                w2: tensors[4].clone(),
                b2: col(&tensors[5])?,
                activation,
            },
            loss,
            decoder_uses_x,
        };
        model.check_shapes().map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(model)
    }
}

pub fn loss_value(kind: LossKind, output: &[f64], target: &Target) -> f64 {
    match (kind, target) {
        (LossKind::SquaredError, Target::Values(y)) => {
            0.5 * output.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        }
        (LossKind::SoftmaxCrossEntropy, Target::Class(c)) => log_sum_exp(output) - output[*c],
        _ => panic!("loss kind and target kind disagree"),
    }
}

/// `∂L/∂ŷ`.
pub fn loss_gradient(kind: LossKind, output: &[f64], target: &Target) -> Vec<f64> {
    match (kind, target) {
        (LossKind::SquaredError, Target::Values(y)) => output.iter().zip(y).map(|(a, b)| a - b).collect(),
        (LossKind::SoftmaxCrossEntropy, Target::Class(c)) => {
            let mut p = softmax(output);
            p[*c] -= 1.0;
            p
        }
        _ => panic!("loss kind and target kind disagree"),
    }
}

/// Compares `analytic` with central differences of `f` at `point`, returning
/// `max_i |analytic_i - numeric_i| / max(1, |numeric_i|)`.
pub fn finite_diff_check<F: Fn(&[f64]) -> f64>(f: F, point: &[f64], analytic: &[f64], step: f64) -> f64 {
    let numeric = central_difference(f, point, step);
    max_relative_error(analytic, &numeric)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const SHAPE: ModelShape = ModelShape { dx: 3, k: 4, hidden: 5, dy: 2 };

    fn model(loss: LossKind, activation: Activation, uses_x: bool, seed: u64) -> LatentModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = LatentModel::init(SHAPE, loss, activation, uses_x, &mut rng);
        m.decoder.b1 = DVector::from_fn(SHAPE.hidden, |i, _| 0.1 * i as f64 - 0.2);
        m.decoder.b2 = DVector::from_fn(SHAPE.dy, |i, _| 0.3 - 0.5 * i as f64);
        m
    }

    #[test]
    fn zero_weights_output_the_bias() {
        let mut m = model(LossKind::SquaredError, Activation::Tanh, true, 1);
        m.decoder.w1.fill(0.0);
        m.decoder.w2.fill(0.0);
        let target = Target::Values(vec![1.0, -1.0]);
        let trace = m.forward(&[0.3, 0.2, 0.1], &[1.0, 0.0, 0.0, 0.0], &target).unwrap();
        assert_eq!(trace.output, vec![0.3, -0.2]);
        assert!((trace.loss - 0.5 * (0.49 + 0.64)).abs() < 1e-15);
    }

    #[test]
    fn blind_decoder_ignores_x() {
        let m = model(LossKind::SquaredError, Activation::Tanh, false, 2);
        let t = Target::Values(vec![0.0, 0.0]);
        let mu = [0.2, 0.3, 0.1, 0.4];
        let a = m.forward(&[1.0, 2.0, 3.0], &mu, &t).unwrap();
        let b = m.forward(&[-5.0, 0.0, 9.0], &mu, &t).unwrap();
        assert_eq!(a.output, b.output);
        assert_ne!(a.s, b.s);
    }

    #[test]
    fn perfect_prediction_has_zero_gradients() {
        let m = model(LossKind::SquaredError, Activation::Tanh, true, 3);
        let x = [0.5, -0.5, 0.25];
        let mu = [0.0, 1.0, 0.0, 0.0];
        let probe = m.forward(&x, &mu, &Target::Values(vec![0.0, 0.0])).unwrap();
        let trace = m.forward(&x, &mu, &Target::Values(probe.output.clone())).unwrap();
        let (grad, gamma) = m.decoder_backward(&trace);
        assert_eq!(trace.loss, 0.0);
        assert!(gamma.iter().all(|g| *g == 0.0));
        assert!(grad.w1.iter().chain(grad.w2.iter()).all(|g| *g == 0.0));
    }

    #[test]
    fn linear_decoder_gamma_closed_form() {
        let m = model(LossKind::SquaredError, Activation::Identity, true, 4);
        let x = [0.1, 0.7, -0.3];
        let mu = [0.25, 0.25, 0.5, 0.0];
        let target = Target::Values(vec![0.4, -0.9]);
        let trace = m.forward(&x, &mu, &target).unwrap();
        let (_, gamma) = m.decoder_backward(&trace);
        let residual = DVector::from_vec(vec![trace.output[0] - 0.4, trace.output[1] + 0.9]);
        let w1_mu = m.decoder.w1.columns(SHAPE.dx, SHAPE.k);
        let expected = w1_mu.transpose() * m.decoder.w2.transpose() * residual;
        for (a, b) in gamma.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
        let numeric = finite_diff_check(|v| m.forward(&x, v, &target).unwrap().loss, &mu, &gamma, 1e-5);
        assert!(numeric < 1e-8);
    }

    #[test]
    fn gamma_matches_finite_differences() {
        for seed in 0..20 {
            for (loss, target) in [
                (LossKind::SquaredError, Target::Values(vec![0.3, -0.6])),
                (LossKind::SoftmaxCrossEntropy, Target::Class((seed % 2) as usize)),
            ] {
                let m = model(loss, Activation::Tanh, true, seed);
                let x = [0.4, -0.2, 0.9];
                let mu = [0.1, 0.6, 0.2, 0.1];
                let trace = m.forward(&x, &mu, &target).unwrap();
                let (_, gamma) = m.decoder_backward(&trace);
                let err = finite_diff_check(|v| m.forward(&x, v, &target).unwrap().loss, &mu, &gamma, 1e-5);
                assert!(err < 1e-6, "seed {seed}: {err}");
            }
        }
    }

    #[test]
    fn decoder_parameter_gradients_match_finite_differences() {
        let m = model(LossKind::SoftmaxCrossEntropy, Activation::Tanh, true, 11);
        let x = [0.4, -0.2, 0.9];
        let mu = [0.0, 0.0, 1.0, 0.0];
        let target = Target::Class(1);
        let (grad, _) = m.decoder_backward(&m.forward(&x, &mu, &target).unwrap());

        let w2 = m.decoder.w2.as_slice().to_vec();
        let err = finite_diff_check(
            |v| {
                let mut p = m.clone();
                p.decoder.w2.copy_from_slice(v);
                p.forward(&x, &mu, &target).unwrap().loss
            },
            &w2,
            grad.w2.as_slice(),
            1e-5,
        );
        assert!(err < 1e-6);

        let w1 = m.decoder.w1.as_slice().to_vec();
        let err = finite_diff_check(
            |v| {
                let mut p = m.clone();
                p.decoder.w1.copy_from_slice(v);
                p.forward(&x, &mu, &target).unwrap().loss
            },
            &w1,
            grad.w1.as_slice(),
            1e-5,
        );
        assert!(err < 1e-6);
    }

    #[test]
    fn encoder_backward_is_affine_chain_rule() {
        let m = model(LossKind::SquaredError, Activation::Tanh, false, 5);
        let target = Target::Values(vec![0.0, 0.0]);
        let trace = m.forward(&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 0.0], &target).unwrap();
        let g = m.encoder_backward(&trace, &[0.5, -1.0, 0.0, 2.0]).unwrap();
        assert!(g.weight.iter().all(|v| *v == 0.0));
        assert_eq!(g.bias.as_slice(), &[0.5, -1.0, 0.0, 2.0]);

        let zero = m.encoder_backward(&trace, &[0.0; 4]).unwrap();
        assert!(zero.weight.iter().chain(zero.bias.iter()).all(|v| *v == 0.0));

        // Linearised objective sᵀ∇̃ as a function of the encoder weights.
        let x = [0.3, -1.2, 0.8];
        let surrogate = [0.2, -0.4, 0.9, 0.05];
        let trace = m.forward(&x, &[0.0, 1.0, 0.0, 0.0], &target).unwrap();
        let g = m.encoder_backward(&trace, &surrogate).unwrap();
        let w = m.encoder.weight.as_slice().to_vec();
        let err = finite_diff_check(
            |v| {
                let mut p = m.clone();
                p.encoder.weight.copy_from_slice(v);
                p.scores(&x).unwrap().iter().zip(&surrogate).map(|(a, b)| a * b).sum()
            },
            &w,
            g.weight.as_slice(),
            1e-5,
        );
        assert!(err < 1e-8);
    }

    #[test]
    fn losses_are_nonnegative() {
        assert!(loss_value(LossKind::SoftmaxCrossEntropy, &[1000.0, 0.0], &Target::Class(0)) < 1e-12);
        assert!(loss_value(LossKind::SoftmaxCrossEntropy, &[0.0, 0.0], &Target::Class(0)) > 0.69);
        assert_eq!(loss_value(LossKind::SquaredError, &[1.0], &Target::Values(vec![1.0])), 0.0);
    }

    #[test]
    fn argmax_pipeline_fails_the_gradient_check() {
        // Feeding the argmax onward makes L piecewise constant in s: the true
        // derivative is zero almost everywhere, so any useful surrogate fails
        // this check by construction.
        let m = model(LossKind::SquaredError, Activation::Tanh, false, 6);
        let x = [0.4, -0.2, 0.9];
        let target = Target::Values(vec![1.0, 1.0]);
        let f = |s: &[f64]| {
            let k = s.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            let mut z = vec![0.0; 4];
            z[k] = 1.0;
            m.forward(&x, &z, &target).unwrap().loss
        };
        let tied = [0.5, 0.5 + 1e-7, 0.1, 0.0];
        let trace = m.forward(&x, &[0.0, 1.0, 0.0, 0.0], &target).unwrap();
        let (_, gamma) = m.decoder_backward(&trace);
        assert!(finite_diff_check(f, &tied, &gamma, 1e-5) > 0.5);
    }

    #[test]
    fn shape_errors() {
        let m = model(LossKind::SquaredError, Activation::Tanh, true, 7);
        let t = Target::Values(vec![0.0, 0.0]);
        assert!(matches!(m.forward(&[0.0; 2], &[0.0; 4], &t), Err(Error::ShapeMismatch(_))));
        assert!(matches!(m.forward(&[0.0; 3], &[0.0; 3], &t), Err(Error::ShapeMismatch(_))));
        assert!(m.forward(&[0.0; 3], &[0.0; 4], &Target::Class(0)).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_and_rejections() {
        let m = model(LossKind::SoftmaxCrossEntropy, Activation::Identity, false, 8);
        let text = m.to_checkpoint();
        assert!(text.starts_with("LGL-CHECKPOINT 1\n"));
        assert_eq!(LatentModel::from_checkpoint(&text).unwrap(), m);
        assert!(LatentModel::from_checkpoint(&text.replace("LGL-CHECKPOINT 1", "LGL-CHECKPOINT 2")).is_err());
        assert!(LatentModel::from_checkpoint(&text.replace("\nend\n", "\n")).is_err());
        assert!(LatentModel::from_checkpoint(&text.replace("tensor decoder.b2 2 1", "tensor decoder.b2 3 1")).is_err());
    }
}
