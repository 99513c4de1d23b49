//! Desk-scale loss landscapes and models with hand-derived gradients.
//!
//! Every model reports the mean per-sample loss plus a coupled L2 term
//! `(weight_decay / 2) * |theta|^2`; gradients include the matching
//! `weight_decay * theta`. Central finite differences ([`finite_diff_grad`])
//! are the correctness oracle for the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::vector::{axpy, norm_sq, GradVector, ParamVector};

/// A minibatch: `m` rows of width `d`, stored row-major, plus one target per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    inputs: Vec<f64>,
    width: usize,
    targets: Vec<f64>,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, width: usize, targets: Vec<f64>) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::InvalidArgument("batch must hold at least one sample".into()));
        }
        ensure_len("batch inputs", targets.len() * width, inputs.len())?;
        Ok(Self {
            inputs,
            width,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.width..(i + 1) * self.width]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `a = f(z)`.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    /// `1/2 sum_i c_i (theta_i - center_i)^2`; ignores the batch contents.
    QuadraticBowl { curvature: Vec<f64>, center: Vec<f64> },
    /// Chained Rosenbrock `sum_i 100 (theta_{i+1} - theta_i^2)^2 + (1 - theta_i)^2`.
    Rosenbrock { dim: usize },
    /// Binary logistic regression; parameters are `[w_1..w_d, b]`, labels in {0, 1}.
    LogisticRegression { features: usize },
    /// Fully connected net with softmax cross-entropy on the last layer.
    /// Per layer the parameters are `W` (out x in, row-major) then `b`.
    Mlp {
        widths: Vec<usize>,
        activation: Activation,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub kind: ModelKind,
    pub weight_decay: f64,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, weight_decay: f64) -> Result<Self> {
        let spec = Self { kind, weight_decay };
        spec.validate()?;
        Ok(spec)
    }

    pub fn quadratic_bowl(curvature: Vec<f64>, center: Vec<f64>) -> Result<Self> {
        Self::new(ModelKind::QuadraticBowl { curvature, center }, 0.0)
    }

    pub fn rosenbrock(dim: usize) -> Result<Self> {
        Self::new(ModelKind::Rosenbrock { dim }, 0.0)
    }

    pub fn logistic_regression(features: usize) -> Result<Self> {
        Self::new(ModelKind::LogisticRegression { features }, 0.0)
    }

    pub fn mlp(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        Self::new(ModelKind::Mlp { widths, activation }, 0.0)
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Result<Self> {
        self.weight_decay = weight_decay;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "weight_decay must be finite and >= 0, got {}",
                self.weight_decay
            )));
        }
        match &self.kind {
            ModelKind::QuadraticBowl { curvature, center } => {
                ensure_len("bowl center", curvature.len(), center.len())?;
                if curvature.is_empty() {
                    return Err(Error::InvalidArgument("bowl needs at least one dimension".into()));
                }
                if curvature.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
                    return Err(Error::InvalidArgument("bowl curvature must be positive".into()));
                }
            }
            ModelKind::Rosenbrock { dim } if *dim < 2 => {
                return Err(Error::InvalidArgument("rosenbrock needs dim >= 2".into()));
            }
            ModelKind::LogisticRegression { features } if *features == 0 => {
                return Err(Error::InvalidArgument("logistic regression needs features >= 1".into()));
            }
            ModelKind::Mlp { widths, .. } => {
                if widths.len() < 2 || widths.contains(&0) {
                    return Err(Error::InvalidArgument(format!(
                        "mlp widths must have >= 2 nonzero entries, got {widths:?}"
                    )));
                }
                if widths[widths.len() - 1] < 2 {
                    return Err(Error::InvalidArgument("mlp needs >= 2 output classes".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        match &self.kind {
            ModelKind::QuadraticBowl { curvature, .. } => format!("quadratic_bowl[{}]", curvature.len()),
            ModelKind::Rosenbrock { dim } => format!("rosenbrock[{dim}]"),
            ModelKind::LogisticRegression { features } => format!("logistic_regression[{features}]"),
            ModelKind::Mlp { widths, activation } => {
                let w: Vec<String> = widths.iter().map(|w| w.to_string()).collect();
                format!("mlp[{}:{:?}]", w.join("-"), activation).to_lowercase()
            }
        }
    }

    pub fn param_count(&self) -> usize {
        match &self.kind {
            ModelKind::QuadraticBowl { curvature, .. } => curvature.len(),
            ModelKind::Rosenbrock { dim } => *dim,
            ModelKind::LogisticRegression { features } => features + 1,
            ModelKind::Mlp { widths, .. } => widths.windows(2).map(|w| w[1] * (w[0] + 1)).sum(),
        }
    }

    /// Input width the model expects, when it reads the batch at all.
    pub fn input_width(&self) -> Option<usize> {
        match &self.kind {
            ModelKind::LogisticRegression { features } => Some(*features),
            ModelKind::Mlp { widths, .. } => Some(widths[0]),
            _ => None,
        }
    }

    /// Number of classes for classifiers, `None` for pure loss landscapes.
    pub fn num_classes(&self) -> Option<usize> {
        match &self.kind {
            ModelKind::LogisticRegression { .. } => Some(2),
            ModelKind::Mlp { widths, .. } => widths.last().copied(),
            _ => None,
        }
    }

    /// Deterministic starting point for a run.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = match &self.kind {
            ModelKind::QuadraticBowl { curvature, .. } => {
                (0..curvature.len()).map(|_| rng.sample(StandardNormal)).collect()
            }
            ModelKind::Rosenbrock { dim } => (0..*dim).map(|_| rng.sample(StandardNormal)).collect(),
            ModelKind::LogisticRegression { features } => vec![0.0; features + 1],
            ModelKind::Mlp { widths, .. } => {
                let mut v = Vec::with_capacity(self.param_count());
                for w in widths.windows(2) {
                    let (fan_in, fan_out) = (w[0], w[1]);
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    v.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)));
                    v.extend(std::iter::repeat_n(0.0, fan_out));
                }
                v
            }
        };
        ParamVector::new(values)
    }

    fn check_inputs(&self, theta: &[f64], batch: &Batch) -> Result<()> {
        ensure_len("parameter vector", self.param_count(), theta.len())?;
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if let Some(width) = self.input_width() {
            ensure_len("batch width", width, batch.width())?;
        }
        if let Some(classes) = self.num_classes() {
            for &y in batch.targets() {
                if !(y >= 0.0 && y.fract() == 0.0 && (y as usize) < classes) {
                    return Err(Error::InvalidArgument(format!(
                        "label {y} is not a class index below {classes}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Regularised minibatch loss and its gradient in one pass.
    pub fn loss_and_grad(&self, theta: &[f64], batch: &Batch) -> Result<(f64, GradVector)> {
        self.check_inputs(theta, batch)?;
        let mut grad = vec![0.0; theta.len()];
        let data_loss = match &self.kind {
            ModelKind::QuadraticBowl { curvature, center } => bowl(curvature, center, theta, Some(&mut grad)),
            ModelKind::Rosenbrock { .. } => rosenbrock(theta, Some(&mut grad)),
            ModelKind::LogisticRegression { .. } => logistic(theta, batch, Some(&mut grad)),
            ModelKind::Mlp { widths, activation } => mlp(widths, *activation, theta, batch, Some(&mut grad)),
        };
        let loss = self.finish_loss(data_loss, theta, batch)?;
        axpy(self.weight_decay, theta, &mut grad);
        Ok((loss, GradVector::new(grad)))
    }

    fn finish_loss(&self, data_loss: f64, theta: &[f64], batch: &Batch) -> Result<f64> {
        let loss = data_loss + 0.5 * self.weight_decay * norm_sq(theta);
        if loss.is_finite() {
            Ok(loss)
        } else {
            Err(Error::NonFiniteLoss {
                model: self.name(),
                batch_len: batch.len(),
            })
        }
    }

    /// Predicted class per input row. Errors for models that are not classifiers.
    pub fn predict(&self, theta: &[f64], batch: &Batch) -> Result<Vec<usize>> {
        ensure_len("parameter vector", self.param_count(), theta.len())?;
        match &self.kind {
            ModelKind::LogisticRegression { features } => {
                ensure_len("batch width", *features, batch.width())?;
                Ok((0..batch.len())
                    .map(|i| usize::from(logistic_logit(theta, batch.row(i)) > 0.0))
                    .collect())
            }
            ModelKind::Mlp { widths, activation } => {
                ensure_len("batch width", widths[0], batch.width())?;
                Ok((0..batch.len())
                    .map(|i| {
                        let acts = mlp_forward(widths, *activation, theta, batch.row(i));
                        argmax(acts.last().expect("mlp has an output layer"))
                    })
                    .collect())
            }
            _ => Err(Error::InvalidArgument(format!("{} is not a classifier", self.name()))),
        }
    }
}

pub fn eval_loss(model: &ModelSpec, theta: &ParamVector, batch: &Batch) -> Result<f64> {
    model.check_inputs(theta, batch)?;
    let data_loss = match &model.kind {
        ModelKind::QuadraticBowl { curvature, center } => bowl(curvature, center, theta, None),
        ModelKind::Rosenbrock { .. } => rosenbrock(theta, None),
        ModelKind::LogisticRegression { .. } => logistic(theta, batch, None),
        ModelKind::Mlp { widths, activation } => mlp(widths, *activation, theta, batch, None),
    };
    model.finish_loss(data_loss, theta, batch)
}

pub fn eval_grad(model: &ModelSpec, theta: &ParamVector, batch: &Batch) -> Result<GradVector> {
    model.loss_and_grad(theta, batch).map(|(_, g)| g)
}

/// Central differences `(L(theta + h e_i) - L(theta - h e_i)) / 2h`.
pub fn finite_diff_grad(model: &ModelSpec, theta: &ParamVector, batch: &Batch, h: f64) -> Result<GradVector> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut probe = theta.clone();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = eval_loss(model, &probe, batch)?;
        probe[i] = orig - h;
        let down = eval_loss(model, &probe, batch)?;
        probe[i] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    Ok(GradVector::new(grad))
}

fn bowl(curvature: &[f64], center: &[f64], theta: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let mut loss = 0.0;
    let mut grad = grad;
    for i in 0..theta.len() {
        let d = theta[i] - center[i];
        loss += 0.5 * curvature[i] * d * d;
        if let Some(g) = grad.as_deref_mut() {
            g[i] += curvature[i] * d;
        }
    }
    loss
}

fn rosenbrock(theta: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let mut loss = 0.0;
    let mut grad = grad;
    for i in 0..theta.len() - 1 {
        let (x, y) = (theta[i], theta[i + 1]);
        let a = y - x * x;
        let b = 1.0 - x;
        loss += 100.0 * a * a + b * b;
        if let Some(g) = grad.as_deref_mut() {
            g[i] += -400.0 * x * a - 2.0 * b;
            g[i + 1] += 200.0 * a;
        }
    }
    loss
}

fn logistic_logit(theta: &[f64], x: &[f64]) -> f64 {
    let d = x.len();
    theta[..d].iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + theta[d]
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logistic(theta: &[f64], batch: &Batch, grad: Option<&mut [f64]>) -> f64 {
    let m = batch.len() as f64;
    let d = batch.width();
    let mut loss = 0.0;
    let mut grad = grad;
    for (i, &y) in batch.targets().iter().enumerate() {
        let x = batch.row(i);
        let z = logistic_logit(theta, x);
        loss += softplus(z) - y * z;
        if let Some(g) = grad.as_deref_mut() {
            let r = (sigmoid(z) - y) / m;
            axpy(r, x, &mut g[..d]);
            g[d] += r;
        }
    }
    loss / m
}

/// Per-layer activations; the last entry is the raw logits.
fn mlp_forward(widths: &[usize], act: Activation, theta: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
    let layers = widths.len() - 1;
    let mut acts = Vec::with_capacity(widths.len());
    acts.push(x.to_vec());
    let mut offset = 0;
    for l in 0..layers {
        let (fan_in, fan_out) = (widths[l], widths[l + 1]);
        let w = &theta[offset..offset + fan_in * fan_out];
        let b = &theta[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        offset += fan_out * (fan_in + 1);
        let input = &acts[l];
        let out: Vec<f64> = (0..fan_out)
            .map(|o| {
                let z = b[o] + w[o * fan_in..(o + 1) * fan_in].iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                if l + 1 < layers {
                    act.apply(z)
                } else {
                    z
                }
            })
            .collect();
        acts.push(out);
    }
    acts
}

fn log_softmax_at(logits: &[f64], class: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    let lse = max + sum.ln();
    let probs = logits.iter().map(|z| (z - lse).exp()).collect();
    (logits[class] - lse, probs)
}

fn mlp(widths: &[usize], act: Activation, theta: &[f64], batch: &Batch, grad: Option<&mut [f64]>) -> f64 {
    let m = batch.len() as f64;
    let layers = widths.len() - 1;
    let mut loss = 0.0;
    let mut grad = grad;

    let mut offsets = Vec::with_capacity(layers);
    let mut off = 0;
    for l in 0..layers {
        offsets.push(off);
        off += widths[l + 1] * (widths[l] + 1);
    }

    for (i, &y) in batch.targets().iter().enumerate() {
        let acts = mlp_forward(widths, act, theta, batch.row(i));
        let class = y as usize;
        let (logp, probs) = log_softmax_at(&acts[layers], class);
        loss -= logp;

        let Some(g) = grad.as_deref_mut() else { continue };
        // delta = dL/dz for the current layer, starting at the logits
        let mut delta: Vec<f64> = probs;
        delta[class] -= 1.0;
        for d in delta.iter_mut() {
            *d /= m;
        }
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let o = offsets[l];
            let input = &acts[l];
            for r in 0..fan_out {
                axpy(delta[r], input, &mut g[o + r * fan_in..o + (r + 1) * fan_in]);
                g[o + fan_in * fan_out + r] += delta[r];
            }
            if l == 0 {
                break;
            }
            let w = &theta[o..o + fan_in * fan_out];
            delta = (0..fan_in)
                .map(|c| {
                    let back: f64 = (0..fan_out).map(|r| w[r * fan_in + c] * delta[r]).sum();
                    back * act.derivative_from_output(input[c])
                })
                .collect();
        }
    }
    loss / m
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
