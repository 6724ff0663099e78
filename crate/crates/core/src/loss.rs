//! Contrastive percentile losses with closed-form gradients.
//!
//! Gradients are taken with respect to the two head outputs (`p_hat`,
//! `y_hat`); backpropagation into parameters lives in [`crate::model`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{self, ContrastiveLabel, GatingError};
use crate::user_state::PoolEntry;

/// Probability clamp applied to `p_hat` before any log.
pub const DEFAULT_CLAMP_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossOutput {
    pub loss: f64,
    pub d_phat: f64,
    pub d_yhat: f64,
    /// Regression part of `loss` (zero for percentile-only losses).
    pub regression: f64,
    /// Percentile part of `loss` before the co-training weight.
    pub percentile: f64,
}

impl LossOutput {
    pub const ZERO: LossOutput =
        LossOutput { loss: 0.0, d_phat: 0.0, d_yhat: 0.0, regression: 0.0, percentile: 0.0 };

    fn percentile_only(loss: f64, d_phat: f64) -> Self {
        Self { loss, d_phat, d_yhat: 0.0, regression: 0.0, percentile: loss }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("non-finite loss input `{0}`")]
    NonFinite(&'static str),
    #[error(transparent)]
    Gating(#[from] GatingError),
    #[error("co-training weight must be non-negative, got {0}")]
    NegativeWeight(f64),
}

fn finite(v: f64, name: &'static str) -> Result<f64, LossError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(LossError::NonFinite(name))
    }
}

fn clamp_prob(p_hat: f64, eps: f64) -> Result<f64, LossError> {
    Ok(finite(p_hat, "p_hat")?.clamp(eps, 1.0 - eps))
}

/// BCE against a soft label: `-p̄ ln p̂ - (1-p̄) ln(1-p̂)`.
pub fn soft_bce(p_hat: f64, p_bar: f64) -> Result<LossOutput, LossError> {
    soft_bce_clamped(p_hat, p_bar, DEFAULT_CLAMP_EPS)
}

pub fn soft_bce_clamped(p_hat: f64, p_bar: f64, eps: f64) -> Result<LossOutput, LossError> {
    let p = clamp_prob(p_hat, eps)?;
    let t = finite(p_bar, "p_bar")?;
    debug_assert!((0.0..=1.0).contains(&t), "soft label out of range: {t}");
    let loss = -t * p.ln() - (1.0 - t) * (-p).ln_1p();
    let d_phat = -t / p + (1.0 - t) / (1.0 - p);
    Ok(LossOutput::percentile_only(loss, d_phat))
}

/// Mean of per-indicator BCE terms. Equal to `soft_bce(p̂, mean(indicators))`
/// because BCE is linear in its label.
pub fn mbce_per_term(p_hat: f64, indicators: &[bool]) -> Result<LossOutput, LossError> {
    if indicators.is_empty() {
        return Err(GatingError.into());
    }
    let p = clamp_prob(p_hat, DEFAULT_CLAMP_EPS)?;
    let (ln_p, ln_q) = (p.ln(), (-p).ln_1p());
    let n = indicators.len() as f64;
    let (mut loss, mut grad) = (0.0, 0.0);
    for &b in indicators {
        if b {
            loss -= ln_p;
            grad -= 1.0 / p;
        } else {
            loss -= ln_q;
            grad += 1.0 / (1.0 - p);
        }
    }
    Ok(LossOutput::percentile_only(loss / n, grad / n))
}

/// Value-weighted BCE: per-pair terms weighted by `Y'_i / sum_j Y'_j`.
///
/// A pool with no positive mass has no weights; this delegates to the
/// unweighted per-term form, matching [`label::value_weighted_label`].
pub fn vwbce(p_hat: f64, pool: &[PoolEntry], y: f64) -> Result<LossOutput, LossError> {
    if pool.is_empty() {
        return Err(GatingError.into());
    }
    let total: f64 = pool.iter().map(|e| e.magnitude).sum();
    if total <= 0.0 {
        let indicators: Vec<bool> = pool.iter().map(|e| label::contrast(y, e.magnitude)).collect();
        return mbce_per_term(p_hat, &indicators);
    }
    let p = clamp_prob(p_hat, DEFAULT_CLAMP_EPS)?;
    let (ln_p, ln_q) = (p.ln(), (-p).ln_1p());
    let (mut loss, mut grad) = (0.0, 0.0);
    for e in pool {
        let w = e.magnitude / total;
        if label::contrast(y, e.magnitude) {
            loss -= w * ln_p;
            grad -= w / p;
        } else {
            loss -= w * ln_q;
            grad += w / (1.0 - p);
        }
    }
    Ok(LossOutput::percentile_only(loss, grad))
}

/// Squared error on `ln(1 + ·)` magnitudes.
pub fn regression_loss(y_hat: f64, y: f64) -> Result<LossOutput, LossError> {
    let y_hat = finite(y_hat, "y_hat")?;
    let y = finite(y, "y")?;
    let r = y_hat.ln_1p() - y.ln_1p();
    let loss = r * r;
    Ok(LossOutput { loss, d_phat: 0.0, d_yhat: 2.0 * r / (1.0 + y_hat), regression: loss, percentile: 0.0 })
}

/// Soft BCE for an open gate, exact zeros otherwise.
pub fn percentile_loss(p_hat: f64, label: &ContrastiveLabel, eps: f64) -> Result<LossOutput, LossError> {
    if label.gate_open {
        soft_bce_clamped(p_hat, label.value, eps)
    } else {
        finite(p_hat, "p_hat")?;
        Ok(LossOutput::ZERO)
    }
}

/// `L_reg(ŷ, y) + λ · L_pct(p̂, label)`.
///
/// A closed gate (or `λ = 0`) removes the percentile term entirely, so
/// `d_phat` is exactly zero while the regression term still applies.
pub fn cotrain_loss(
    y_hat: f64,
    y: f64,
    p_hat: f64,
    label: &ContrastiveLabel,
    lambda: f64,
) -> Result<LossOutput, LossError> {
    cotrain_loss_clamped(y_hat, y, p_hat, label, lambda, DEFAULT_CLAMP_EPS)
}

pub fn cotrain_loss_clamped(
    y_hat: f64,
    y: f64,
    p_hat: f64,
    label: &ContrastiveLabel,
    lambda: f64,
    eps: f64,
) -> Result<LossOutput, LossError> {
    if !(lambda >= 0.0) {
        return Err(LossError::NegativeWeight(lambda));
    }
    let mut out = regression_loss(y_hat, y)?;
    finite(p_hat, "p_hat")?;
    if lambda > 0.0 && label.gate_open {
        let pct = soft_bce_clamped(p_hat, label.value, eps)?;
        out.loss += lambda * pct.loss;
        out.d_phat = lambda * pct.d_phat;
        out.percentile = pct.loss;
    }
    Ok(out)
}
