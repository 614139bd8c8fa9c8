//! Experience replay: a FIFO ring buffer sampled uniformly, and a
//! proportional prioritized variant backed by a sum-tree.
//!
//! Sampled entries are identified by their global insertion number, so a
//! priority update that arrives after the slot was overwritten is detected
//! and skipped.

use rand::Rng;

use crate::error::{Error, Result};
use crate::preprocess::Observation;

pub const DEFAULT_CAPACITY: usize = 50_000;
pub const DEFAULT_ALPHA: f64 = 0.6;
pub const DEFAULT_BETA: f64 = 0.4;
pub const PRIORITY_EPSILON: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Observation,
    pub action: usize,
    pub reward: f32,
    pub next_state: Observation,
    pub done: bool,
}

/// A sampled minibatch. `ids` are insertion numbers, `weights` are the
/// importance-sampling weights (all 1 for uniform sampling).
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub ids: Vec<u64>,
    pub transitions: Vec<Transition>,
    pub weights: Vec<f32>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("replay capacity must be positive"));
        }
        Ok(Self {
            capacity,
            items: Vec::with_capacity(capacity.min(4096)),
            pushed: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total number of pushes since creation.
    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    /// Stores `t`, evicting the oldest entry when full. Returns the slot.
    pub fn push(&mut self, t: Transition) -> usize {
        let slot = (self.pushed % self.capacity as u64) as usize;
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[slot] = t;
        }
        self.pushed += 1;
        slot
    }

    /// Whether the entry with insertion number `id` is still stored.
    pub fn is_live(&self, id: u64) -> bool {
        id < self.pushed && self.pushed - id <= self.items.len() as u64
    }

    pub fn slot_of(&self, id: u64) -> usize {
        (id % self.capacity as u64) as usize
    }

    /// Insertion number of the entry currently in `slot`.
    pub fn id_at(&self, slot: usize) -> u64 {
        let newest_slot = ((self.pushed - 1) % self.capacity as u64) as usize;
        let back = (newest_slot + self.capacity - slot) % self.capacity;
        self.pushed - 1 - back as u64
    }

    pub fn get(&self, id: u64) -> Option<&Transition> {
        self.is_live(id).then(|| &self.items[self.slot_of(id)])
    }

    /// Stored transitions, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let oldest = self.pushed - self.items.len() as u64;
        (oldest..self.pushed).map(move |id| &self.items[self.slot_of(id)])
    }

    /// `batch` independent uniform draws with replacement.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Batch> {
        check_batch(self.len(), batch)?;
        let mut out = Batch::default();
        for _ in 0..batch {
            let slot = rng.gen_range(0..self.items.len());
            out.ids.push(self.id_at(slot));
            out.transitions.push(self.items[slot].clone());
            out.weights.push(1.0);
        }
        Ok(out)
    }
}

fn check_batch(have: usize, need: usize) -> Result<()> {
    if need == 0 || have < need {
        return Err(Error::InsufficientSamples { have, need: need.max(1) });
    }
    Ok(())
}

/// Complete binary tree over `capacity` leaves keeping subtree sums and
/// maxima.
#[derive(Debug, Clone)]
pub struct SumTree {
    leaves: usize,
    sums: Vec<f64>,
    maxes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        Self {
            leaves,
            sums: vec![0.0; 2 * leaves],
            maxes: vec![0.0; 2 * leaves],
        }
    }

    pub fn total(&self) -> f64 {
        self.sums[1]
    }

    pub fn max(&self) -> f64 {
        self.maxes[1]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.sums[self.leaves + i]
    }

    pub fn set(&mut self, i: usize, value: f64) {
        let mut node = self.leaves + i;
        self.sums[node] = value;
        self.maxes[node] = value;
        while node > 1 {
            node /= 2;
            let (l, r) = (2 * node, 2 * node + 1);
            self.sums[node] = self.sums[l] + self.sums[r];
            self.maxes[node] = self.maxes[l].max(self.maxes[r]);
        }
    }

    /// Leaf whose cumulative range contains `prefix`; ranges are
    /// `[Σ_{j<i} v_j, Σ_{j≤i} v_j)`.
    pub fn find(&self, mut prefix: f64) -> usize {
        let mut node = 1;
        while node < self.leaves {
            let left = 2 * node;
            if prefix < self.sums[left] || self.sums[left + 1] <= 0.0 {
                node = left;
            } else {
                prefix -= self.sums[left];
                node = left + 1;
            }
        }
        node - self.leaves
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorityConfig {
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
}

impl Default for PriorityConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            epsilon: PRIORITY_EPSILON,
        }
    }
}

impl PriorityConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("priority epsilon must be positive"));
        }
        Ok(())
    }
}

/// Proportional prioritized replay. The tree holds `p^alpha` per slot and a
/// second tree keeps the raw priorities and their maximum.
#[derive(Debug, Clone)]
pub struct PrioritizedBuffer {
    buffer: ReplayBuffer,
    config: PriorityConfig,
    tree: SumTree,
    raw: SumTree,
    stale_updates: u64,
}

impl PrioritizedBuffer {
    pub fn new(capacity: usize, config: PriorityConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            buffer: ReplayBuffer::new(capacity)?,
            config,
            tree: SumTree::new(capacity),
            raw: SumTree::new(capacity),
            stale_updates: 0,
        })
    }

    pub fn config(&self) -> &PriorityConfig {
        &self.config
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn tree(&self) -> &SumTree {
        &self.tree
    }

    /// Priority updates skipped because the entry had been evicted.
    pub fn stale_updates(&self) -> u64 {
        self.stale_updates
    }

    /// Raw priority of a live entry.
    pub fn priority(&self, id: u64) -> Option<f64> {
        self.buffer.is_live(id).then(|| self.raw.get(self.buffer.slot_of(id)))
    }

    /// Stores `t` with the current maximum priority (1.0 when empty).
    pub fn push(&mut self, t: Transition) -> usize {
        let max = if self.buffer.is_empty() { 1.0 } else { self.raw.max() };
        let slot = self.buffer.push(t);
        self.set_priority(slot, max);
        slot
    }

    fn set_priority(&mut self, slot: usize, p: f64) {
        self.raw.set(slot, p);
        self.tree.set(slot, p.powf(self.config.alpha));
    }

    /// Stratified draw: the priority mass is split into `batch` equal
    /// segments and one entry is drawn from each.
    pub fn sample_prioritized<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Batch> {
        check_batch(self.len(), batch)?;
        let total = self.tree.total();
        let n = self.len() as f64;
        let segment = total / batch as f64;
        let mut out = Batch::default();
        let mut raw_weights = Vec::with_capacity(batch);
        for k in 0..batch {
            let prefix = segment * (k as f64 + rng.gen::<f64>());
            let slot = self.tree.find(prefix.min(total)).min(self.len() - 1);
            let p = self.tree.get(slot) / total;
            raw_weights.push((n * p).powf(-self.config.beta));
            out.ids.push(self.buffer.id_at(slot));
            out.transitions.push(self.buffer.items[slot].clone());
        }
        let max = raw_weights.iter().copied().fold(f64::MIN, f64::max);
        out.weights = raw_weights.iter().map(|w| (w / max) as f32).collect();
        Ok(out)
    }

    /// Sets `p_i = |td_i| + epsilon` for every still-live id.
    pub fn update_priorities(&mut self, ids: &[u64], td_errors: &[f32]) -> Result<()> {
        if ids.len() != td_errors.len() {
            return Err(Error::config(format!(
                "update_priorities: {} ids but {} td errors",
                ids.len(),
                td_errors.len()
            )));
        }
        for (&id, &td) in ids.iter().zip(td_errors) {
            if !td.is_finite() {
                return Err(Error::NonFinite("td error"));
            }
            if !self.buffer.is_live(id) {
                self.stale_updates += 1;
                continue;
            }
            let slot = self.buffer.slot_of(id);
            self.set_priority(slot, f64::from(td.abs()) + self.config.epsilon);
        }
        Ok(())
    }
}

/// Either buffer kind, selected by configuration.
#[derive(Debug, Clone)]
pub enum Replay {
    Uniform(ReplayBuffer),
    Prioritized(PrioritizedBuffer),
}

impl Replay {
    pub fn uniform(capacity: usize) -> Result<Self> {
        ReplayBuffer::new(capacity).map(Replay::Uniform)
    }

    pub fn prioritized(capacity: usize, config: PriorityConfig) -> Result<Self> {
        PrioritizedBuffer::new(capacity, config).map(Replay::Prioritized)
    }

    pub fn is_prioritized(&self) -> bool {
        matches!(self, Replay::Prioritized(_))
    }

    pub fn len(&self) -> usize {
        match self {
            Replay::Uniform(b) => b.len(),
            Replay::Prioritized(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pushed(&self) -> u64 {
        match self {
            Replay::Uniform(b) => b.pushed(),
            Replay::Prioritized(b) => b.buffer().pushed(),
        }
    }

    pub fn push(&mut self, t: Transition) {
        match self {
            Replay::Uniform(b) => {
                b.push(t);
            }
            Replay::Prioritized(b) => {
                b.push(t);
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Batch> {
        match self {
            Replay::Uniform(b) => b.sample_uniform(batch, rng),
            Replay::Prioritized(b) => b.sample_prioritized(batch, rng),
        }
    }

    /// No-op for the uniform buffer.
    pub fn update_priorities(&mut self, ids: &[u64], td_errors: &[f32]) -> Result<()> {
        match self {
            Replay::Uniform(_) => Ok(()),
            Replay::Prioritized(b) => b.update_priorities(ids, td_errors),
        }
    }
}
