//! Single-pass streaming training loop.
//!
//! Per interaction, in order: forward pass; gate check on the user's
//! counter *before* this interaction; label from the pool *before* this
//! interaction; loss; backward and SGD step; then the reservoir update with
//! the observed target and the pre-step prediction `ŷ`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{self, ContrastiveLabel, LabelVariant};
use crate::loss::{self, LossError, LossOutput, DEFAULT_CLAMP_EPS};
use crate::model::{DualHeadModel, ModelConfig, ModelError, ServingHead};
use crate::rng::{self, Purpose};
use crate::synth::Interaction;
use crate::user_state::{PoolEntry, StateStore, StoreConfig, DEFAULT_GATE_THRESHOLD, DEFAULT_POOL_CAPACITY};

/// Which objective the model is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Raw magnitude regression only; the baseline twin.
    Regression,
    /// Percentile head on single-sample indicators (estimator checks only).
    Single,
    /// Percentile head on the multi-sample soft label.
    Multi,
    /// Percentile head on the value-weighted soft label.
    ValueWeighted,
    /// Regression head as prior, percentile head on percentiles of `ŷ`.
    Bootstrapped,
    /// Regression plus `λ` times the multi-sample percentile loss.
    Cotrain,
}

impl Variant {
    pub fn label_variant(self) -> Option<LabelVariant> {
        match self {
            Variant::Regression => None,
            Variant::Single => Some(LabelVariant::Single),
            Variant::Multi | Variant::Cotrain => Some(LabelVariant::Multi),
            Variant::ValueWeighted => Some(LabelVariant::ValueWeighted),
            Variant::Bootstrapped => Some(LabelVariant::Bootstrapped),
        }
    }

    pub fn trains_regression(self) -> bool {
        matches!(self, Variant::Regression | Variant::Bootstrapped | Variant::Cotrain)
    }

    pub fn serving_head(self) -> ServingHead {
        match self {
            Variant::Regression | Variant::Cotrain => ServingHead::Regression,
            _ => ServingHead::Percentile,
        }
    }
}

/// Which observed value feeds the contrastive pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    #[default]
    Magnitude,
    Binary,
}

impl Target {
    pub fn value(self, it: &Interaction) -> f64 {
        match self {
            Target::Magnitude => it.y,
            Target::Binary => f64::from(it.b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub variant: Variant,
    pub target: Target,
    pub pool_capacity: usize,
    pub gate_threshold: u64,
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub clamp_eps: f64,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Multi,
            target: Target::Magnitude,
            pool_capacity: DEFAULT_POOL_CAPACITY,
            gate_threshold: DEFAULT_GATE_THRESHOLD,
            lambda: 1.0,
            learning_rate: 0.01,
            epochs: 1,
            seed: 11,
            clamp_eps: DEFAULT_CLAMP_EPS,
            hidden: vec![32],
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("timestamps out of order at stream index {index}: {ts} after {prev}")]
    OutOfOrder { index: usize, prev: u64, ts: u64 },
    #[error("malformed interaction at stream index {index}: {reason}")]
    Malformed { index: usize, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_owned()));
        if self.pool_capacity == 0 {
            return fail("pool_capacity must be at least 1");
        }
        if self.gate_threshold == 0 {
            return fail("gate_threshold must be at least 1");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail("lambda must be finite and non-negative");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return fail("clamp_eps must lie in (0, 0.5)");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return fail("hidden must list positive layer widths");
        }
        Ok(())
    }

    pub fn store_config(&self) -> StoreConfig {
        StoreConfig { capacity: self.pool_capacity, gate_threshold: self.gate_threshold, seed: self.seed }
    }

    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        ModelConfig { input_dim, hidden: self.hidden.clone(), seed: self.seed }
    }
}

/// One log line per consumed interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: u64,
    pub epoch: usize,
    pub user_id: u64,
    pub gate_open: bool,
    /// Contrastive label value; `None` when the gate was closed or the
    /// variant has no percentile head objective.
    pub label: Option<f64>,
    pub sample_count: usize,
    pub loss: f64,
    pub regression_loss: f64,
    pub percentile_loss: f64,
    pub running_loss: f64,
    pub y_hat: f64,
    pub p_hat: f64,
}

pub struct Trainer {
    config: TrainConfig,
    model: DualHeadModel,
    store: StateStore,
    step: u64,
    epoch: usize,
    loss_sum: f64,
}

impl Trainer {
    pub fn new(config: TrainConfig, input_dim: usize) -> Result<Self, TrainError> {
        config.validate()?;
        let mut model = DualHeadModel::new(&config.model_config(input_dim))?;
        model.set_serving(config.variant.serving_head());
        Ok(Self { store: StateStore::new(config.store_config()), model, config, step: 0, epoch: 0, loss_sum: 0.0 })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &DualHeadModel {
        &self.model
    }

    pub fn store(&self) -> &StateStore {
        &self.store
    }

    pub fn into_parts(self) -> (DualHeadModel, StateStore) {
        (self.model, self.store)
    }

    /// Starts a fresh replay pass: pools and counters are cleared so each
    /// pass sees uniform samples of its own history.
    pub fn begin_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
        self.store = StateStore::new(self.config.store_config());
    }

    /// Label from the user's current (pre-insert) pool.
    fn build_label(&self, it: &Interaction, target: f64, y_hat: f64) -> ContrastiveLabel {
        let Some(kind) = self.config.variant.label_variant() else {
            return ContrastiveLabel::gated_off(LabelVariant::Multi);
        };
        let state = self.store.get(it.user_id);
        if !state.gating_allows(self.config.gate_threshold) {
            return ContrastiveLabel::gated_off(kind);
        }
        let pool = state.pool();
        let built = match kind {
            LabelVariant::Single => {
                let mut rng = rng::keyed(self.config.seed, it.user_id, Purpose::SingleLabel, state.counter());
                label::single_sample_label(target, pool, &mut rng)
            }
            LabelVariant::Multi => label::multi_sample_label(target, pool),
            LabelVariant::ValueWeighted => label::value_weighted_label(target, pool),
            LabelVariant::Bootstrapped => label::bootstrapped_label(y_hat, pool),
        };
        built.unwrap_or_else(|_| ContrastiveLabel::gated_off(kind))
    }

    fn check(&self, index: usize, it: &Interaction) -> Result<(), TrainError> {
        let malformed = |reason: String| Err(TrainError::Malformed { index, reason });
        if let Err(e) = self.model.check_input(&it.features) {
            return malformed(e.to_string());
        }
        if it.features.iter().any(|v| !v.is_finite()) {
            return malformed("non-finite feature".into());
        }
        if !(it.y >= 0.0 && it.y.is_finite()) {
            return malformed(format!("magnitude must be finite and non-negative, got {}", it.y));
        }
        if it.b > 1 {
            return malformed(format!("binary label must be 0 or 1, got {}", it.b));
        }
        Ok(())
    }

    pub fn step(&mut self, it: &Interaction) -> Result<TrainRecord, TrainError> {
        self.check(self.step as usize, it)?;
        let pass = self.model.forward(&it.features);
        let (y_hat, p_hat) = (pass.y_hat, pass.p_hat);
        let target = self.config.target.value(it);
        let label = self.build_label(it, target, y_hat);

        let eps = self.config.clamp_eps;
        let out: LossOutput = match self.config.variant {
            Variant::Regression => loss::regression_loss(y_hat, it.y)?,
            Variant::Single | Variant::Multi | Variant::ValueWeighted => loss::percentile_loss(p_hat, &label, eps)?,
            Variant::Bootstrapped | Variant::Cotrain => {
                loss::cotrain_loss_clamped(y_hat, it.y, p_hat, &label, self.config.lambda, eps)?
            }
        };

        let grads = self.model.backward(&pass, out.d_yhat, out.d_phat);
        self.model.sgd_step(&grads, self.config.learning_rate)?;
        self.store.insert(it.user_id, PoolEntry::new(target, y_hat));

        self.step += 1;
        self.loss_sum += out.loss;
        Ok(TrainRecord {
            step: self.step - 1,
            epoch: self.epoch,
            user_id: it.user_id,
            gate_open: label.gate_open,
            label: label.gate_open.then_some(label.value),
            sample_count: label.sample_count,
            loss: out.loss,
            regression_loss: out.regression,
            percentile_loss: out.percentile,
            running_loss: self.loss_sum / self.step as f64,
            y_hat,
            p_hat,
        })
    }
}

pub struct TrainOutcome {
    pub model: DualHeadModel,
    pub store: StateStore,
    pub log: Vec<TrainRecord>,
}

/// Rejects streams whose timestamps go backwards.
pub fn check_order(stream: &[Interaction]) -> Result<(), TrainError> {
    for (index, w) in stream.windows(2).enumerate() {
        if w[1].ts < w[0].ts {
            return Err(TrainError::OutOfOrder { index: index + 1, prev: w[0].ts, ts: w[1].ts });
        }
    }
    Ok(())
}

/// Folds [`Trainer::step`] over the stream, `config.epochs` times.
pub fn train(stream: &[Interaction], config: &TrainConfig, input_dim: usize) -> Result<TrainOutcome, TrainError> {
    check_order(stream)?;
    let mut trainer = Trainer::new(config.clone(), input_dim)?;
    let mut log = Vec::with_capacity(stream.len() * config.epochs);
    for epoch in 0..config.epochs {
        if epoch > 0 {
            trainer.begin_epoch(epoch);
        }
        for it in stream {
            log.push(trainer.step(it)?);
        }
    }
    let (model, store) = trainer.into_parts();
    Ok(TrainOutcome { model, store, log })
}
