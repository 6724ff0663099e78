//! Shared-backbone dual-head model.
//!
//! `x -> tanh MLP backbone -> { softplus(linear) = ŷ, logistic(linear) = p̂ }`.
//! Both heads read the same final hidden layer, so percentile-head gradients
//! shape the representation the regression head uses and vice versa.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{DecodeError, RecordReader, RecordWriter};
use crate::rng::{self, Purpose};

const CHECKPOINT_MAGIC: &[u8; 8] = b"CPTMODL\x01";

/// Keeps `p̂` strictly inside `(0, 1)` once the logistic saturates.
const P_HAT_FLOOR: f64 = 1e-300;
const P_HAT_CEIL: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("feature dimension mismatch: model expects {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("learning rate must be positive and finite, got {0}")]
    InvalidLearningRate(f64),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// Which head a checkpoint serves as its ranking score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ServingHead {
    #[default]
    Regression,
    Percentile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

/// Fully connected layer, `weights` row-major `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { in_dim, out_dim, weights: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim] }
    }

    fn uniform<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim).map(|_| rng.random_range(-bound..=bound)).collect();
        Self { in_dim, out_dim, weights, bias: vec![0.0; out_dim] }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.bias.iter().enumerate().map(|(o, &b)| {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        }));
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }

    fn names(&self, prefix: &str) -> Vec<String> {
        let mut names = Vec::with_capacity(self.weights.len() + self.bias.len());
        for o in 0..self.out_dim {
            for i in 0..self.in_dim {
                names.push(format!("{prefix}.weight[{o},{i}]"));
            }
        }
        names.extend((0..self.out_dim).map(|o| format!("{prefix}.bias[{o}]")));
        names
    }
}

/// Every trainable parameter. Also used for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub backbone: Vec<Dense>,
    pub reg_head: Dense,
    pub pct_head: Dense,
}

pub type ParameterGradients = Parameters;

impl Parameters {
    fn zeros_like(&self) -> Self {
        Self {
            backbone: self.backbone.iter().map(|l| Dense::zeros(l.in_dim, l.out_dim)).collect(),
            reg_head: Dense::zeros(self.reg_head.in_dim, 1),
            pct_head: Dense::zeros(self.pct_head.in_dim, 1),
        }
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.backbone.iter().chain([&self.reg_head, &self.pct_head])
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.backbone.iter_mut().chain([&mut self.reg_head, &mut self.pct_head])
    }

    pub fn len(&self) -> usize {
        self.layers().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat view in a fixed order: backbone layers, regression head, percentile head.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers().flat_map(Dense::values).copied().collect()
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, l) in self.backbone.iter().enumerate() {
            names.extend(l.names(&format!("backbone[{i}]")));
        }
        names.extend(self.reg_head.names("reg_head"));
        names.extend(self.pct_head.names("pct_head"));
        names
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.len(), "flat parameter length");
        for (slot, &v) in self.layers_mut().flat_map(Dense::values_mut).zip(values) {
            *slot = v;
        }
    }
}

/// Intermediate values of one forward pass, kept for [`DualHeadModel::backward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Input followed by each hidden layer's tanh output.
    activations: Vec<Vec<f64>>,
    reg_logit: f64,
    pub y_hat: f64,
    pub p_hat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualHeadModel {
    params: Parameters,
    serving: ServingHead,
}

pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl DualHeadModel {
    /// Weights ~ Uniform(±1/sqrt(fan_in)), biases zero.
    pub fn new(config: &ModelConfig) -> Result<Self, ModelError> {
        Self::validate(config)?;
        let mut rng = rng::bulk(config.seed, Purpose::Init);
        let mut backbone = Vec::with_capacity(config.hidden.len());
        let mut fan_in = config.input_dim;
        for &width in &config.hidden {
            backbone.push(Dense::uniform(fan_in, width, &mut rng));
            fan_in = width;
        }
        let reg_head = Dense::uniform(fan_in, 1, &mut rng);
        let pct_head = Dense::uniform(fan_in, 1, &mut rng);
        Ok(Self { params: Parameters { backbone, reg_head, pct_head }, serving: ServingHead::default() })
    }

    /// All parameters zero.
    pub fn zeros(input_dim: usize, hidden: &[usize]) -> Result<Self, ModelError> {
        let mut model = Self::new(&ModelConfig { input_dim, hidden: hidden.to_vec(), seed: 0 })?;
        model.params = model.params.zeros_like();
        Ok(model)
    }

    fn validate(config: &ModelConfig) -> Result<(), ModelError> {
        if config.input_dim == 0 {
            return Err(ModelError::InvalidConfig("input_dim must be at least 1".into()));
        }
        if config.hidden.is_empty() || config.hidden.contains(&0) {
            return Err(ModelError::InvalidConfig(format!(
                "hidden layer widths must be a non-empty list of positive sizes, got {:?}",
                config.hidden
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.params.backbone[0].in_dim
    }

    pub fn hidden(&self) -> Vec<usize> {
        self.params.backbone.iter().map(|l| l.out_dim).collect()
    }

    pub fn parameters(&self) -> &Parameters {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    pub fn serving(&self) -> ServingHead {
        self.serving
    }

    pub fn set_serving(&mut self, head: ServingHead) {
        self.serving = head;
    }

    pub fn check_input(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() == self.input_dim() {
            Ok(())
        } else {
            Err(ModelError::DimensionMismatch { expected: self.input_dim(), got: x.len() })
        }
    }

    /// Evaluates both heads from one backbone pass.
    ///
    /// # Panics
    /// If `x` has the wrong dimension; validate inputs with
    /// [`check_input`](Self::check_input) at the boundary.
    pub fn forward(&self, x: &[f64]) -> ForwardPass {
        assert_eq!(x.len(), self.input_dim(), "feature dimension");
        let mut activations = Vec::with_capacity(self.params.backbone.len() + 1);
        activations.push(x.to_vec());
        let mut z = Vec::new();
        for layer in &self.params.backbone {
            layer.apply(activations.last().expect("input"), &mut z);
            activations.push(z.iter().map(|v| v.tanh()).collect());
        }
        let h = activations.last().expect("hidden");
        let mut out = Vec::with_capacity(1);
        self.params.reg_head.apply(h, &mut out);
        let reg_logit = out[0];
        self.params.pct_head.apply(h, &mut out);
        let pct_logit = out[0];
        ForwardPass {
            reg_logit,
            y_hat: softplus(reg_logit),
            p_hat: logistic(pct_logit).clamp(P_HAT_FLOOR, P_HAT_CEIL),
            activations,
        }
    }

    /// `(ŷ, p̂)`.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let pass = self.forward(x);
        (pass.y_hat, pass.p_hat)
    }

    /// The score this model ranks by: `ŷ` or `p̂` depending on its serving head.
    pub fn score(&self, x: &[f64]) -> f64 {
        let (y_hat, p_hat) = self.predict(x);
        match self.serving {
            ServingHead::Regression => y_hat,
            ServingHead::Percentile => p_hat,
        }
    }

    /// Parameter gradients given upstream derivatives w.r.t. `ŷ` and `p̂`.
    ///
    /// An upstream of exactly zero on a head skips that head: its parameter
    /// gradients stay `+0.0` and it contributes nothing to the backbone.
    pub fn backward(&self, pass: &ForwardPass, d_yhat: f64, d_phat: f64) -> ParameterGradients {
        let mut grads = self.params.zeros_like();
        let h = pass.activations.last().expect("hidden");
        let mut delta = vec![0.0; h.len()];

        let heads = [
            (d_yhat, d_yhat * logistic(pass.reg_logit), &self.params.reg_head, &mut grads.reg_head),
            (d_phat, d_phat * pass.p_hat * (1.0 - pass.p_hat), &self.params.pct_head, &mut grads.pct_head),
        ];
        for (upstream, g, head, head_grad) in heads {
            if upstream == 0.0 {
                continue;
            }
            for ((gw, &a), (d, &w)) in head_grad.weights.iter_mut().zip(h).zip(delta.iter_mut().zip(&head.weights)) {
                *gw = g * a;
                *d += g * w;
            }
            head_grad.bias[0] = g;
        }

        for (l, layer) in self.params.backbone.iter().enumerate().rev() {
            let out = &pass.activations[l + 1];
            let input = &pass.activations[l];
            for (d, &a) in delta.iter_mut().zip(out) {
                *d *= 1.0 - a * a;
            }
            let grad = &mut grads.backbone[l];
            let mut prev = vec![0.0; layer.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = o * layer.in_dim;
                for i in 0..layer.in_dim {
                    grad.weights[row + i] = d * input[i];
                    prev[i] += d * layer.weights[row + i];
                }
                grad.bias[o] = d;
            }
            delta = prev;
        }
        grads
    }

    /// `θ ← θ − lr · g`. Zero gradients leave their parameters bit-identical.
    pub fn sgd_step(&mut self, grads: &ParameterGradients, learning_rate: f64) -> Result<(), ModelError> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(ModelError::InvalidLearningRate(learning_rate));
        }
        let flat = grads.flatten();
        if let Some(i) = flat.iter().position(|g| !g.is_finite()) {
            return Err(ModelError::NonFiniteGradient(grads.names().swap_remove(i)));
        }
        for (theta, &g) in self.params.layers_mut().flat_map(Dense::values_mut).zip(&flat) {
            if g != 0.0 {
                *theta -= learning_rate * g;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = RecordWriter::new(CHECKPOINT_MAGIC);
        w.record(|p| {
            p.u64(self.input_dim() as u64)
                .u64(match self.serving {
                    ServingHead::Regression => 0,
                    ServingHead::Percentile => 1,
                })
                .u64(self.params.backbone.len() as u64);
            for l in &self.params.backbone {
                p.u64(l.out_dim as u64);
            }
        });
        for layer in self.params.layers() {
            w.record(|p| {
                p.f64s(&layer.weights).f64s(&layer.bias);
            });
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = RecordReader::open("model checkpoint", bytes, CHECKPOINT_MAGIC)?;
        let mut head = r.record()?;
        let input_dim = head.count(1 << 24)?;
        let serving = match head.u64()? {
            0 => ServingHead::Regression,
            1 => ServingHead::Percentile,
            other => return Err(head.error(format!("unknown serving head {other}")).into()),
        };
        let depth = head.count(1 << 10)?;
        let hidden = (0..depth).map(|_| head.count(1 << 24)).collect::<Result<Vec<_>, _>>()?;
        head.finish()?;
        let config = ModelConfig { input_dim, hidden, seed: 0 };
        Self::validate(&config)?;
        let mut model = Self::zeros(input_dim, &config.hidden)?;
        model.serving = serving;
        for layer in model.params.layers_mut() {
            let mut rec = r.record()?;
            let weights = rec.f64s(layer.weights.len())?;
            let bias = rec.f64s(layer.bias.len())?;
            rec.finish()?;
            if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
                return Err(ModelError::Decode(DecodeError {
                    what: "model checkpoint",
                    offset: r.offset(),
                    reason: "non-finite parameter".into(),
                }));
            }
            layer.weights = weights;
            layer.bias = bias;
        }
        r.finish()?;
        Ok(model)
    }
}
