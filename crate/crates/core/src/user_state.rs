//! Per-user contrastive pools.
//!
//! Each user owns a fixed-capacity reservoir of past engagements and a
//! counter of every interaction seen. The reservoir is a uniform sample of the
//! user's whole history: after `M` interactions each one is present with
//! probability `min(1, N / M)`.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{DecodeError, RecordReader, RecordWriter};
use crate::rng::{self, Purpose};

pub const DEFAULT_POOL_CAPACITY: usize = 50;
pub const DEFAULT_GATE_THRESHOLD: u64 = 10;

const SNAPSHOT_MAGIC: &[u8; 8] = b"CPTSTAT\x01";

/// One historical engagement held in a pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    /// Raw engagement (seconds, currency units, or a 0/1 label).
    pub magnitude: f64,
    /// The regression head's prediction for this interaction when it arrived.
    pub prior_pred: f64,
}

impl PoolEntry {
    pub fn new(magnitude: f64, prior_pred: f64) -> Self {
        debug_assert!(magnitude >= 0.0 && prior_pred >= 0.0, "pool entries are non-negative");
        Self { magnitude, prior_pred }
    }

    /// An entry with no recorded prediction.
    pub fn magnitude(magnitude: f64) -> Self {
        Self::new(magnitude, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserState {
    capacity: usize,
    counter: u64,
    pool: Vec<PoolEntry>,
}

impl UserState {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "pool capacity must be at least 1");
        Self { capacity, counter: 0, pool: Vec::with_capacity(capacity) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of interactions processed for this user (`M_u`).
    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn pool(&self) -> &[PoolEntry] {
        &self.pool
    }

    /// Processes one interaction. Returns whether `entry` entered the pool.
    ///
    /// The counter is bumped first. While it is within capacity the entry is
    /// appended; afterwards a uniform draw `j` in `0..M` keeps the entry in
    /// slot `j` when `j < N`, i.e. with probability `N / M` and a uniformly
    /// chosen victim.
    pub fn reservoir_update<R: Rng + ?Sized>(&mut self, entry: PoolEntry, rng: &mut R) -> bool {
        self.counter += 1;
        if self.counter <= self.capacity as u64 {
            self.pool.push(entry);
            return true;
        }
        let j = rng.random_range(0..self.counter);
        if j < self.capacity as u64 {
            self.pool[j as usize] = entry;
            true
        } else {
            false
        }
    }

    /// Whether the pool has enough history (`M_u >= tau`) for a percentile
    /// label. Reads the counter as it stands, so callers check this before
    /// inserting the current interaction.
    pub fn gating_allows(&self, tau: u64) -> bool {
        self.counter >= tau
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreConfig {
    /// Pool capacity `N`.
    pub capacity: usize,
    /// Gradient-gating threshold `tau`.
    pub gate_threshold: u64,
    /// Global seed for per-user replacement streams.
    pub seed: u64,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self { capacity: DEFAULT_POOL_CAPACITY, gate_threshold: DEFAULT_GATE_THRESHOLD, seed: 0 }
    }
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot io: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// All user states, keyed by user id.
#[derive(Debug, Clone, PartialEq)]
pub struct StateStore {
    config: StoreConfig,
    users: BTreeMap<u64, UserState>,
}

impl StateStore {
    pub fn new(config: StoreConfig) -> Self {
        assert!(config.capacity >= 1, "pool capacity must be at least 1");
        Self { config, users: BTreeMap::new() }
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// The user's state; unseen users get a fresh empty one.
    pub fn get(&self, user: u64) -> Cow<'_, UserState> {
        match self.users.get(&user) {
            Some(state) => Cow::Borrowed(state),
            None => Cow::Owned(UserState::new(self.config.capacity)),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &UserState)> {
        self.users.iter().map(|(&u, s)| (u, s))
    }

    /// Reservoir-inserts `entry` for `user` using that user's own random
    /// stream, positioned by the user's counter. The outcome therefore does
    /// not depend on how updates for different users interleave.
    pub fn insert(&mut self, user: u64, entry: PoolEntry) -> bool {
        let capacity = self.config.capacity;
        let seed = self.config.seed;
        let state = self.users.entry(user).or_insert_with(|| UserState::new(capacity));
        let mut rng = rng::keyed(seed, user, Purpose::Reservoir, state.counter);
        state.reservoir_update(entry, &mut rng)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = RecordWriter::new(SNAPSHOT_MAGIC);
        w.record(|p| {
            p.u64(self.config.capacity as u64)
                .u64(self.config.gate_threshold)
                .u64(self.config.seed)
                .u64(self.users.len() as u64);
        });
        for (&user, state) in &self.users {
            w.record(|p| {
                p.u64(user).u64(state.counter).u64(state.pool.len() as u64);
                for e in &state.pool {
                    p.f64(e.magnitude).f64(e.prior_pred);
                }
            });
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = RecordReader::open("state snapshot", bytes, SNAPSHOT_MAGIC)?;
        let mut head = r.record()?;
        let capacity = head.count(u32::MAX as usize)?;
        if capacity == 0 {
            return Err(head.error("pool capacity is zero"));
        }
        let gate_threshold = head.u64()?;
        let seed = head.u64()?;
        let n_users = head.count(usize::MAX)?;
        head.finish()?;

        let config = StoreConfig { capacity, gate_threshold, seed };
        let mut users = BTreeMap::new();
        for _ in 0..n_users {
            let mut rec = r.record()?;
            let at = rec.offset();
            let user = rec.u64()?;
            if users.contains_key(&user) {
                return Err(rec.error(format!("duplicate user {user} (record at {at})")));
            }
            let counter = rec.u64()?;
            let len = rec.count(capacity)?;
            if len as u64 != counter.min(capacity as u64) {
                return Err(rec.error(format!(
                    "pool length {len} inconsistent with counter {counter} and capacity {capacity}"
                )));
            }
            let mut pool = Vec::with_capacity(capacity);
            for _ in 0..len {
                let magnitude = rec.f64()?;
                let prior_pred = rec.f64()?;
                if !(magnitude >= 0.0 && prior_pred >= 0.0 && magnitude.is_finite() && prior_pred.is_finite()) {
                    return Err(rec.error("pool entry must be finite and non-negative"));
                }
                pool.push(PoolEntry { magnitude, prior_pred });
            }
            rec.finish()?;
            users.insert(user, UserState { capacity, counter, pool });
        }
        r.finish()?;
        Ok(Self { config, users })
    }

    pub fn snapshot<W: Write>(&self, sink: &mut W) -> io::Result<()> {
        sink.write_all(&self.to_bytes())
    }

    pub fn load<R: Read>(source: &mut R) -> Result<Self, SnapshotError> {
        let mut bytes = Vec::new();
        source.read_to_end(&mut bytes)?;
        Ok(Self::from_bytes(&bytes)?)
    }
}
