//! Synthetic streaming population with heterogeneous behavioral intensity.
//!
//! Users belong to activity cohorts that differ in how often they interact,
//! in the scale of their engagement, and in which item traits they prefer.
//! Magnitudes are lognormal per user:
//!
//! `y = exp(mu_u + beta * affinity(u, i) + sigma_u * z)`, `z ~ N(0, 1)`,
//!
//! where `affinity(u, i)` is the dot product of the user's unit preference
//! vector with the item's latent traits. Affinity is emitted for evaluation
//! only; the model sees activity, a per-user bias feature, item traits and a
//! context feature.

use std::borrow::Cow;
use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSpec {
    pub name: String,
    /// Share of users in this cohort.
    pub weight: f64,
    /// Log-scale engagement location.
    pub mu: f64,
    /// Log-scale engagement spread.
    pub sigma: f64,
    /// Relative interaction rate of one user.
    pub activity: f64,
    /// Probability of a positive sparse label at zero affinity.
    pub positive_rate: f64,
    /// Cohort preference direction over item traits (normalized per user).
    pub preference: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationConfig {
    pub users: usize,
    pub items: usize,
    pub item_dim: usize,
    pub cohorts: Vec<CohortSpec>,
    /// Affinity effect size on log magnitude.
    pub beta: f64,
    /// Per-user perturbation of the cohort preference direction.
    pub preference_jitter: f64,
    /// Spread of the per-user log-scale offset around the cohort `mu`.
    pub bias_spread: f64,
    /// Spread of a per-user log-scale offset that no feature reveals.
    pub hidden_level_spread: f64,
    pub stream_length: usize,
    pub eval_items_per_user: usize,
    pub oracle_samples: usize,
    pub seed: u64,
}

fn cohort(name: &str, weight: f64, mu: f64, activity: f64, positive_rate: f64, preference: &[f64]) -> CohortSpec {
    CohortSpec {
        name: name.into(),
        weight,
        mu,
        sigma: 1.0,
        activity,
        positive_rate,
        preference: preference.to_vec(),
    }
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            users: 400,
            items: 400,
            item_dim: 3,
            cohorts: vec![
                cohort("non_live", 0.35, 0.5, 1.0, 0.02, &[0.0, 0.0, 1.0]),
                cohort("low", 0.30, 1.5, 5.0, 0.04, &[0.7, 0.7, 0.0]),
                cohort("mid", 0.20, 2.5, 25.0, 0.06, &[-0.2, 1.0, 0.0]),
                cohort("high", 0.15, 3.5, 125.0, 0.08, &[-0.4, 0.9, 0.0]),
            ],
            beta: 0.8,
            preference_jitter: 0.2,
            bias_spread: 0.3,
            hidden_level_spread: 0.0,
            stream_length: 200_000,
            eval_items_per_user: 20,
            oracle_samples: 100_000,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid population config field `{field}`: {reason}")]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

fn bad(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError { field: field.into(), reason: reason.into() }
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.users == 0 {
            return Err(bad("users", "must be at least 1"));
        }
        if self.items == 0 {
            return Err(bad("items", "must be at least 1"));
        }
        if self.item_dim == 0 {
            return Err(bad("item_dim", "must be at least 1"));
        }
        if self.stream_length == 0 {
            return Err(bad("stream_length", "must be at least 1"));
        }
        if self.eval_items_per_user > self.items {
            return Err(bad("eval_items_per_user", "cannot exceed the item count"));
        }
        if self.oracle_samples == 0 {
            return Err(bad("oracle_samples", "must be at least 1"));
        }
        if !self.beta.is_finite() {
            return Err(bad("beta", "must be finite"));
        }
        for (field, v) in [
            ("preference_jitter", self.preference_jitter),
            ("bias_spread", self.bias_spread),
            ("hidden_level_spread", self.hidden_level_spread),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(bad(field, "must be finite and non-negative"));
            }
        }
        if self.cohorts.is_empty() {
            return Err(bad("cohorts", "at least one cohort is required"));
        }
        let total: f64 = self.cohorts.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(bad("cohorts.weight", format!("mixing weights sum to {total}, expected 1")));
        }
        for (k, c) in self.cohorts.iter().enumerate() {
            let at = |f: &str| format!("cohorts[{k}].{f}");
            if !(c.weight >= 0.0) {
                return Err(bad(at("weight"), "must be non-negative"));
            }
            if !(c.sigma > 0.0 && c.sigma.is_finite()) {
                return Err(bad(at("sigma"), "must be positive"));
            }
            if !(c.activity > 0.0 && c.activity.is_finite()) {
                return Err(bad(at("activity"), "must be positive"));
            }
            if !c.mu.is_finite() {
                return Err(bad(at("mu"), "must be finite"));
            }
            if !(0.0..=1.0).contains(&c.positive_rate) {
                return Err(bad(at("positive_rate"), "must lie in [0, 1]"));
            }
            if c.preference.len() != self.item_dim {
                return Err(bad(at("preference"), format!("length must equal item_dim {}", self.item_dim)));
            }
            if c.preference.iter().all(|&v| v == 0.0) || c.preference.iter().any(|v| !v.is_finite()) {
                return Err(bad(at("preference"), "must be finite and not all zero"));
            }
        }
        let mut names: Vec<&str> = self.cohorts.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.cohorts.len() {
            return Err(bad("cohorts.name", "cohort names must be unique"));
        }
        Ok(())
    }

    /// Model input width: activity, user bias, item traits, context.
    pub fn feature_dim(&self) -> usize {
        2 + self.item_dim + 1
    }

    pub fn cohort_names(&self) -> Vec<String> {
        self.cohorts.iter().map(|c| c.name.clone()).collect()
    }
}

/// One streaming training instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: u64,
    pub item_id: u64,
    pub ts: u64,
    pub features: Vec<f64>,
    /// Continuous engagement magnitude.
    pub y: f64,
    /// Sparse binary label.
    pub b: u8,
    pub cohort: String,
    /// Hidden ground-truth affinity; never part of `features`.
    pub affinity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimUser {
    pub id: u64,
    pub cohort: usize,
    /// Log-scale location including the per-user offset.
    pub mu: f64,
    pub sigma: f64,
    pub bias: f64,
    pub preference: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    config: PopulationConfig,
    users: Vec<SimUser>,
    items: Vec<Vec<f64>>,
}

/// Splits `n` into counts proportional to `weights` (largest remainder).
fn apportion(n: usize, weights: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let short = n - counts.iter().sum::<usize>();
    for &k in order.iter().take(short) {
        counts[k] += 1;
    }
    counts
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Population {
    pub fn new(config: PopulationConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let mut rng = rng::bulk(config.seed, Purpose::Population);
        let items: Vec<Vec<f64>> =
            (0..config.items).map(|_| (0..config.item_dim).map(|_| normal(&mut rng)).collect()).collect();

        let weights: Vec<f64> = config.cohorts.iter().map(|c| c.weight).collect();
        let counts = apportion(config.users, &weights);
        let mut users = Vec::with_capacity(config.users);
        for (k, &count) in counts.iter().enumerate() {
            let spec = &config.cohorts[k];
            let base_norm = spec.preference.iter().map(|v| v * v).sum::<f64>().sqrt();
            for _ in 0..count {
                let bias = normal(&mut rng);
                let mut pref: Vec<f64> = spec
                    .preference
                    .iter()
                    .map(|v| v / base_norm + config.preference_jitter * normal(&mut rng))
                    .collect();
                let norm = pref.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                pref.iter_mut().for_each(|v| *v /= norm);
                let hidden = normal(&mut rng);
                users.push(SimUser {
                    id: users.len() as u64,
                    cohort: k,
                    mu: spec.mu + config.bias_spread * bias + config.hidden_level_spread * hidden,
                    sigma: spec.sigma,
                    bias,
                    preference: pref,
                });
            }
        }
        Ok(Self { config, users, items })
    }

    pub fn config(&self) -> &PopulationConfig {
        &self.config
    }

    pub fn users(&self) -> &[SimUser] {
        &self.users
    }

    pub fn user(&self, id: u64) -> Option<&SimUser> {
        self.users.get(id as usize)
    }

    pub fn cohort_name(&self, user: &SimUser) -> &str {
        &self.config.cohorts[user.cohort].name
    }

    /// Map from user id to cohort name.
    pub fn cohort_map(&self) -> BTreeMap<u64, String> {
        self.users.iter().map(|u| (u.id, self.cohort_name(u).to_owned())).collect()
    }

    pub fn affinity(&self, user: &SimUser, item: usize) -> f64 {
        user.preference.iter().zip(&self.items[item]).map(|(p, q)| p * q).sum()
    }

    pub fn features(&self, user: &SimUser, item: usize, context: f64) -> Vec<f64> {
        let spec = &self.config.cohorts[user.cohort];
        let mut x = Vec::with_capacity(self.config.feature_dim());
        x.push(0.5 * spec.activity.ln());
        x.push(user.bias);
        x.extend_from_slice(&self.items[item]);
        x.push(context);
        x
    }

    /// Draws one magnitude for `(user, item)`.
    pub fn draw_magnitude<R: Rng + ?Sized>(&self, user: &SimUser, item: usize, rng: &mut R) -> f64 {
        (user.mu + self.config.beta * self.affinity(user, item) + user.sigma * normal(rng)).exp()
    }

    fn interaction<R: Rng + ?Sized>(&self, user: &SimUser, item: usize, ts: u64, rng: &mut R) -> Interaction {
        let context = normal(rng);
        let affinity = self.affinity(user, item);
        let y = self.draw_magnitude(user, item, rng);
        let rate = self.config.cohorts[user.cohort].positive_rate;
        let u: f64 = rng.random();
        let b = if rate <= 0.0 {
            0
        } else if rate >= 1.0 {
            1
        } else {
            u8::from(u < logistic(affinity + (rate / (1.0 - rate)).ln()))
        };
        Interaction {
            user_id: user.id,
            item_id: item as u64,
            ts,
            features: self.features(user, item, context),
            y,
            b,
            cohort: self.cohort_name(user).to_owned(),
            affinity,
        }
    }

    /// The training stream: users drawn in proportion to their activity,
    /// items uniformly, timestamps strictly increasing.
    pub fn stream(&self) -> StreamIter<'_> {
        StreamIter::new(Cow::Borrowed(self))
    }

    pub fn into_stream(self) -> StreamIter<'static> {
        StreamIter::new(Cow::Owned(self))
    }

    /// Held-out interactions: `eval_items_per_user` distinct items per user,
    /// timestamped after the training stream.
    pub fn eval_set(&self) -> Vec<Interaction> {
        let mut rng = rng::bulk(self.config.seed, Purpose::EvalSet);
        let mut out = Vec::with_capacity(self.users.len() * self.config.eval_items_per_user);
        let mut ts = self.config.stream_length as u64;
        for user in &self.users {
            for item in index::sample(&mut rng, self.config.items, self.config.eval_items_per_user) {
                out.push(self.interaction(user, item, ts, &mut rng));
                ts += 1;
            }
        }
        out
    }
}

pub struct StreamIter<'a> {
    population: Cow<'a, Population>,
    rng: ChaCha8Rng,
    users: WeightedIndex<f64>,
    next: usize,
}

impl<'a> StreamIter<'a> {
    fn new(population: Cow<'a, Population>) -> Self {
        let weights: Vec<f64> =
            population.users.iter().map(|u| population.config.cohorts[u.cohort].activity).collect();
        Self {
            rng: rng::bulk(population.config.seed, Purpose::Stream),
            users: WeightedIndex::new(weights).expect("validated positive activities"),
            population,
            next: 0,
        }
    }
}

impl Iterator for StreamIter<'_> {
    type Item = Interaction;

    fn next(&mut self) -> Option<Interaction> {
        if self.next >= self.population.config.stream_length {
            return None;
        }
        let pop = &self.population;
        let user = &pop.users[self.users.sample(&mut self.rng)];
        let item = self.rng.random_range(0..pop.config.items);
        let out = pop.interaction(user, item, self.next as u64, &mut self.rng);
        self.next += 1;
        Some(out)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.population.config.stream_length - self.next;
        (left, Some(left))
    }
}

/// Deterministic stream for `config`.
pub fn generate_stream(config: PopulationConfig) -> Result<StreamIter<'static>, ConfigError> {
    Ok(Population::new(config)?.into_stream())
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("no oracle distribution for user {0}")]
pub struct UnknownUser(pub u64);

/// Per-user empirical CDFs from large Monte Carlo samples of each user's
/// magnitude distribution (random item, fresh noise).
#[derive(Debug, Clone, Default)]
pub struct PercentileOracle {
    samples: BTreeMap<u64, Vec<f64>>,
}

impl PercentileOracle {
    pub fn build(population: &Population, users: impl IntoIterator<Item = u64>, samples: usize) -> Self {
        let mut out = BTreeMap::new();
        for id in users {
            if let Some(user) = population.user(id) {
                out.insert(id, Self::sample_user(population, user, samples));
            }
        }
        Self { samples: out }
    }

    /// Sorted oracle sample for one user.
    pub fn sample_user(population: &Population, user: &SimUser, samples: usize) -> Vec<f64> {
        let mut rng = rng::keyed(population.config.seed, user.id, Purpose::Oracle, 0);
        let mut ys: Vec<f64> = (0..samples)
            .map(|_| {
                let item = rng.random_range(0..population.config.items);
                population.draw_magnitude(user, item, &mut rng)
            })
            .collect();
        ys.sort_by(f64::total_cmp);
        ys
    }

    /// Oracle `P(Y_u < y)`.
    pub fn true_percentile(&self, user: u64, y: f64) -> Result<f64, UnknownUser> {
        let sorted = self.samples.get(&user).ok_or(UnknownUser(user))?;
        Ok(sorted.partition_point(|&v| v < y) as f64 / sorted.len() as f64)
    }

    /// Empirical quantile at `level` in `[0, 1]`.
    pub fn quantile(&self, user: u64, level: f64) -> Result<f64, UnknownUser> {
        let sorted = self.samples.get(&user).ok_or(UnknownUser(user))?;
        Ok(quantile_of_sorted(sorted, level))
    }

    pub fn users(&self) -> impl Iterator<Item = u64> + '_ {
        self.samples.keys().copied()
    }
}

pub fn quantile_of_sorted(sorted: &[f64], level: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * level.clamp(0.0, 1.0)).round() as usize;
    sorted[idx]
}
