//! Soft contrastive targets.
//!
//! A label contrasts the current magnitude `y` with the user's pool of past
//! magnitudes `Y'`. The pairwise indicator is `1` when `y > Y'` and `0`
//! otherwise, ties included, so its expectation over `Y'` is `P(Y' < y)`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::user_state::PoolEntry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelVariant {
    Single,
    Multi,
    ValueWeighted,
    Bootstrapped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveLabel {
    /// Target in `[0, 1]`.
    pub value: f64,
    pub variant: LabelVariant,
    /// `false` means the percentile head receives no gradient for this instance.
    pub gate_open: bool,
    /// Pool entries that contributed.
    pub sample_count: usize,
    /// Set when a value-weighted label fell back to the unweighted count
    /// because every reference magnitude was zero.
    pub fallback: bool,
}

impl ContrastiveLabel {
    /// Placeholder label for an instance the gate turned away.
    pub fn gated_off(variant: LabelVariant) -> Self {
        Self { value: 0.0, variant, gate_open: false, sample_count: 0, fallback: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("contrastive pool is empty; instance must be gated off")]
pub struct GatingError;

/// The pairwise contrastive indicator `I(y > y_ref)`.
#[inline]
pub fn contrast(y: f64, y_ref: f64) -> bool {
    y > y_ref
}

fn nonempty(pool: &[PoolEntry]) -> Result<(), GatingError> {
    if pool.is_empty() {
        Err(GatingError)
    } else {
        Ok(())
    }
}

/// Indicator against one uniformly drawn pool entry.
pub fn single_sample_label<R: Rng + ?Sized>(
    y: f64,
    pool: &[PoolEntry],
    rng: &mut R,
) -> Result<ContrastiveLabel, GatingError> {
    single_sample_label_with(y, pool, rng, contrast)
}

/// [`single_sample_label`] with a substitute indicator, for mutation checks.
pub fn single_sample_label_with<R: Rng + ?Sized>(
    y: f64,
    pool: &[PoolEntry],
    rng: &mut R,
    indicator: fn(f64, f64) -> bool,
) -> Result<ContrastiveLabel, GatingError> {
    nonempty(pool)?;
    let reference = pool[rng.random_range(0..pool.len())].magnitude;
    Ok(ContrastiveLabel {
        value: if indicator(y, reference) { 1.0 } else { 0.0 },
        variant: LabelVariant::Single,
        gate_open: true,
        sample_count: 1,
        fallback: false,
    })
}

/// Number of pool entries `e` with `key(e) < y`.
fn count_below(y: f64, pool: &[PoolEntry], key: impl Fn(&PoolEntry) -> f64) -> usize {
    pool.iter().filter(|e| contrast(y, key(e))).count()
}

/// Fraction of the whole pool strictly below `y`.
pub fn multi_sample_label(y: f64, pool: &[PoolEntry]) -> Result<ContrastiveLabel, GatingError> {
    nonempty(pool)?;
    let below = count_below(y, pool, |e| e.magnitude);
    Ok(ContrastiveLabel {
        value: below as f64 / pool.len() as f64,
        variant: LabelVariant::Multi,
        gate_open: true,
        sample_count: pool.len(),
        fallback: false,
    })
}

/// Share of total pool magnitude held by entries strictly below `y`.
///
/// A pool whose magnitudes are all zero has no value to share out; the label
/// falls back to the unweighted fraction and sets `fallback`.
pub fn value_weighted_label(y: f64, pool: &[PoolEntry]) -> Result<ContrastiveLabel, GatingError> {
    nonempty(pool)?;
    let total: f64 = pool.iter().map(|e| e.magnitude).sum();
    if total <= 0.0 {
        let mut label = multi_sample_label(y, pool)?;
        label.variant = LabelVariant::ValueWeighted;
        label.fallback = true;
        return Ok(label);
    }
    let below: f64 = pool.iter().filter(|e| contrast(y, e.magnitude)).map(|e| e.magnitude).sum();
    Ok(ContrastiveLabel {
        value: (below / total).clamp(0.0, 1.0),
        variant: LabelVariant::ValueWeighted,
        gate_open: true,
        sample_count: pool.len(),
        fallback: false,
    })
}

/// Percentile of the current prediction among the pool's prior predictions.
pub fn bootstrapped_label(y_hat: f64, pool: &[PoolEntry]) -> Result<ContrastiveLabel, GatingError> {
    nonempty(pool)?;
    let below = count_below(y_hat, pool, |e| e.prior_pred);
    Ok(ContrastiveLabel {
        value: below as f64 / pool.len() as f64,
        variant: LabelVariant::Bootstrapped,
        gate_open: true,
        sample_count: pool.len(),
        fallback: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pool(ys: &[f64]) -> Vec<PoolEntry> {
        ys.iter().map(|&y| PoolEntry::magnitude(y)).collect()
    }

    fn preds(ps: &[f64]) -> Vec<PoolEntry> {
        ps.iter().map(|&p| PoolEntry::new(0.0, p)).collect()
    }

    #[test]
    fn single_sample_indicator_and_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(single_sample_label(5.0, &pool(&[3.0]), &mut rng).unwrap().value, 1.0);
        assert_eq!(single_sample_label(5.0, &pool(&[5.0]), &mut rng).unwrap().value, 0.0);
    }

    #[test]
    fn single_sample_mean_over_draws() {
        // Binomial(10_000, 0.5) mean: 3 sd = 3 * 0.005.
        let p = pool(&[1.0, 3.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mean = (0..10_000)
            .map(|_| single_sample_label(2.0, &p, &mut rng).unwrap().value)
            .sum::<f64>()
            / 10_000.0;
        assert!((mean - 0.5).abs() < 0.015, "{mean}");
    }

    #[test]
    fn multi_sample_examples() {
        assert_eq!(multi_sample_label(5.0, &pool(&[1.0, 3.0, 7.0])).unwrap().value, 2.0 / 3.0);
        assert_eq!(multi_sample_label(0.0, &pool(&[0.5, 1.0, 2.0])).unwrap().value, 0.0);
        let nine: Vec<f64> = (1..=9).map(f64::from).collect();
        let label = multi_sample_label(10.0, &pool(&nine)).unwrap();
        assert_eq!(label.value, 1.0);
        assert_eq!(label.sample_count, 9);
    }

    #[test]
    fn value_weighted_examples() {
        assert_eq!(value_weighted_label(5.0, &pool(&[1.0, 3.0, 7.0])).unwrap().value, 4.0 / 11.0);
        assert_eq!(value_weighted_label(100.0, &pool(&[1.0, 3.0, 7.0])).unwrap().value, 1.0);
    }

    #[test]
    fn value_weighted_zero_mass_falls_back() {
        let label = value_weighted_label(1.0, &pool(&[0.0, 0.0, 0.0, 0.0])).unwrap();
        assert!(label.fallback);
        assert_eq!(label.value, 1.0);
        assert_eq!(label.variant, LabelVariant::ValueWeighted);
        let label = value_weighted_label(0.0, &pool(&[0.0, 0.0])).unwrap();
        assert!(label.fallback);
        assert_eq!(label.value, 0.0);
    }

    #[test]
    fn value_weighted_approaches_partial_expectation_ratio() {
        // Uniform(0,1) references: int_0^y t dt / int_0^1 t dt = y^2.
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let big: Vec<PoolEntry> = (0..200_000).map(|_| PoolEntry::magnitude(rng.random())).collect();
        for y in [0.2, 0.5, 0.6, 0.9] {
            let v = value_weighted_label(y, &big).unwrap().value;
            assert!((v - y * y).abs() < 5e-3, "y={y} label={v}");
        }
    }

    #[test]
    fn bootstrapped_examples() {
        assert_eq!(bootstrapped_label(0.4, &preds(&[0.1, 0.3, 0.9])).unwrap().value, 2.0 / 3.0);
        assert_eq!(bootstrapped_label(0.4, &preds(&[0.4, 0.4, 0.4])).unwrap().value, 0.0);
    }

    #[test]
    fn empty_pool_is_a_gating_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(single_sample_label(1.0, &[], &mut rng), Err(GatingError));
        assert_eq!(multi_sample_label(1.0, &[]), Err(GatingError));
        assert_eq!(value_weighted_label(1.0, &[]), Err(GatingError));
        assert_eq!(bootstrapped_label(1.0, &[]), Err(GatingError));
    }

    fn arb_pool() -> impl Strategy<Value = Vec<PoolEntry>> {
        prop::collection::vec((0.0f64..50.0, 0.0f64..5.0), 1..60)
            .prop_map(|v| v.into_iter().map(|(m, p)| PoolEntry::new(m, p)).collect())
    }

    proptest! {
        #[test]
        fn labels_are_bounded_and_monotone(p in arb_pool(), a in 0.0f64..60.0, b in 0.0f64..60.0) {
            let (lo, hi) = (a.min(b), a.max(b));
            type LabelFn = fn(f64, &[PoolEntry]) -> Result<ContrastiveLabel, GatingError>;
            let fns: [LabelFn; 3] = [multi_sample_label, value_weighted_label, bootstrapped_label];
            for f in fns {
                let l = f(lo, &p).unwrap().value;
                let h = f(hi, &p).unwrap().value;
                prop_assert!((0.0..=1.0).contains(&l) && (0.0..=1.0).contains(&h));
                prop_assert!(l <= h);
            }
        }

        #[test]
        fn multi_sample_is_k_over_n(p in arb_pool(), y in 0.0f64..60.0) {
            let label = multi_sample_label(y, &p).unwrap();
            let k = label.value * p.len() as f64;
            prop_assert!((k - k.round()).abs() < 1e-9);
            prop_assert_eq!(label.sample_count, p.len());
        }

        #[test]
        fn single_sample_is_binary(p in arb_pool(), y in 0.0f64..60.0, seed: u64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = single_sample_label(y, &p, &mut rng).unwrap().value;
            prop_assert!(v == 0.0 || v == 1.0);
        }
    }
}
