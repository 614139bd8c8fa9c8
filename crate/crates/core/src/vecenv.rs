//! Parallel experience collection over N environment instances.
//!
//! Workers act epsilon-greedily on an immutable policy snapshot that the
//! learner swaps atomically between (or during) collect calls. Instance `i`
//! derives every random stream from `base_seed + i`.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, PoisonError, RwLock};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{argmax, batch_input, epsilon_greedy, DqnAgent};
use crate::envs::{Env, GameKind};
use crate::error::{Error, Result};
use crate::nn::QNetwork;
use crate::preprocess::{skip_step, Observation, PreprocessConfig, Preprocessor};
use crate::replay::{Replay, Transition};

/// Read-only copy of the policy parameters used by actors.
#[derive(Debug)]
pub struct PolicySnapshot {
    pub version: u64,
    pub net: QNetwork,
    pub epsilon: f64,
    /// One stamp per parameter tensor, all equal to `version` when the
    /// snapshot was assembled.
    stamps: Vec<u64>,
}

impl PolicySnapshot {
    pub fn new(version: u64, net: QNetwork, epsilon: f64) -> Self {
        let stamps = vec![version; net.params().len()];
        Self {
            version,
            net,
            epsilon,
            stamps,
        }
    }

    /// Whether every parameter tensor belongs to the same version.
    pub fn is_consistent(&self) -> bool {
        self.stamps.iter().all(|&s| s == self.version)
    }
}

/// Seeds for instance `index`: episode reset seeds come from stream 0 and
/// exploration draws from stream 1 of the same ChaCha8 key.
pub fn instance_rngs(base_seed: u64, index: usize) -> (ChaCha8Rng, ChaCha8Rng) {
    let seed = base_seed.wrapping_add(index as u64);
    let resets = ChaCha8Rng::seed_from_u64(seed);
    let mut actions = ChaCha8Rng::seed_from_u64(seed);
    actions.set_stream(1);
    (resets, actions)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VecEnvConfig {
    pub instances: usize,
    pub base_seed: u64,
    pub max_episode_steps: u32,
    /// Fixed per-instance quotas and instance-ordered buffer writes.
    pub deterministic: bool,
    /// Run each instance on its own thread; otherwise multiplex on the
    /// calling thread.
    pub threaded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletedEpisode {
    pub instance: usize,
    pub reward: f32,
    /// Environment ticks.
    pub duration_steps: u32,
    /// Learner step count when the episode started.
    pub start_train_step: u64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CollectReport {
    pub pushed: usize,
    pub episodes: Vec<CompletedEpisode>,
}

#[derive(Debug, Default)]
pub struct ForwardStats {
    pub forwards: AtomicU64,
    pub torn: AtomicU64,
    pub max_version: AtomicU64,
}

struct Instance {
    index: usize,
    env: Env,
    pre: Preprocessor,
    obs: Option<Observation>,
    resets: ChaCha8Rng,
    actions: ChaCha8Rng,
    reward: f32,
    start_step: u64,
    started: Instant,
}

impl Instance {
    fn begin_episode(&mut self, learner_step: u64) {
        let seed = self.resets.gen::<u64>();
        self.obs = Some(self.pre.reset(&self.env.reset(seed)));
        self.reward = 0.0;
        self.start_step = learner_step;
        self.started = Instant::now();
    }

    /// One agent step; returns the transition and, when the episode ended,
    /// its summary.
    fn step(
        &mut self,
        policy: &SharedPolicy,
        frame_skip: u32,
        difference: bool,
        learner_step: u64,
        stats: &ForwardStats,
    ) -> Result<(Transition, Option<CompletedEpisode>)> {
        if self.obs.is_none() {
            self.begin_episode(learner_step);
        }
        let state = self.obs.take().expect("episode started");
        let snapshot = policy.current();
        let actions = self.env.action_space();
        let action = epsilon_greedy(snapshot.epsilon, actions, &mut self.actions, || {
            stats.forwards.fetch_add(1, Ordering::Relaxed);
            if !snapshot.is_consistent() {
                stats.torn.fetch_add(1, Ordering::Relaxed);
            }
            stats.max_version.fetch_max(snapshot.version, Ordering::Relaxed);
            let input = batch_input(&snapshot.net, &[&state], difference)?;
            Ok(argmax(&snapshot.net.forward_batch(&input, 1)?))
        })?;
        let r = skip_step(&mut self.env, action, frame_skip)?;
        self.reward += r.reward;
        let next = self.pre.push(&r.frame);
        let transition = Transition {
            state,
            action,
            reward: r.reward,
            next_state: next.clone(),
            done: r.done,
        };
        if r.done {
            let done = CompletedEpisode {
                instance: self.index,
                reward: self.reward,
                duration_steps: self.env.episode_steps(),
                start_train_step: self.start_step,
                wall_ms: self.started.elapsed().as_millis() as u64,
            };
            self.obs = None;
            Ok((transition, Some(done)))
        } else {
            self.obs = Some(next);
            Ok((transition, None))
        }
    }
}

/// The actors' view of the policy: an `Arc` swapped under a lock, so a
/// reader holds either the old or the new snapshot in full.
#[derive(Debug)]
pub struct SharedPolicy {
    slot: RwLock<Arc<PolicySnapshot>>,
}

impl SharedPolicy {
    pub fn new(snapshot: PolicySnapshot) -> Self {
        Self {
            slot: RwLock::new(Arc::new(snapshot)),
        }
    }

    pub fn current(&self) -> Arc<PolicySnapshot> {
        self.slot.read().unwrap_or_else(PoisonError::into_inner).clone()
    }

    pub fn replace(&self, snapshot: PolicySnapshot) {
        *self.slot.write().unwrap_or_else(PoisonError::into_inner) = Arc::new(snapshot);
    }
}

pub struct VectorEnv {
    kind: GameKind,
    config: VecEnvConfig,
    preprocess: PreprocessConfig,
    instances: Vec<Mutex<Instance>>,
    policy: SharedPolicy,
    version: AtomicU64,
    stats: ForwardStats,
    active_workers: AtomicUsize,
}

impl VectorEnv {
    pub fn new(kind: GameKind, config: VecEnvConfig, preprocess: PreprocessConfig, agent: &DqnAgent) -> Result<Self> {
        if config.instances == 0 {
            return Err(Error::config("workers must be at least 1"));
        }
        preprocess.validate()?;
        if agent.policy().actions() != kind.action_count() {
            return Err(Error::config(format!(
                "network has {} actions but {kind} has {}",
                agent.policy().actions(),
                kind.action_count()
            )));
        }
        let instances = (0..config.instances)
            .map(|index| {
                let (resets, actions) = instance_rngs(config.base_seed, index);
                Mutex::new(Instance {
                    index,
                    env: Env::with_max_steps(kind, config.max_episode_steps),
                    pre: Preprocessor::new(preprocess),
                    obs: None,
                    resets,
                    actions,
                    reward: 0.0,
                    start_step: 0,
                    started: Instant::now(),
                })
            })
            .collect();
        Ok(Self {
            kind,
            config,
            preprocess,
            instances,
            policy: SharedPolicy::new(PolicySnapshot::new(0, agent.policy().clone(), agent.current_epsilon())),
            version: AtomicU64::new(0),
            stats: ForwardStats::default(),
            active_workers: AtomicUsize::new(0),
        })
    }

    pub fn kind(&self) -> GameKind {
        self.kind
    }

    pub fn config(&self) -> &VecEnvConfig {
        &self.config
    }

    pub fn stats(&self) -> &ForwardStats {
        &self.stats
    }

    pub fn snapshot(&self) -> Arc<PolicySnapshot> {
        self.policy.current()
    }

    /// Workers currently inside `collect`.
    pub fn active_workers(&self) -> usize {
        self.active_workers.load(Ordering::SeqCst)
    }

    /// Publishes a copy of the agent's policy at its current epsilon.
    pub fn sync_policy(&self, agent: &DqnAgent) {
        self.publish(agent.policy().clone(), agent.current_epsilon());
    }

    pub fn publish(&self, net: QNetwork, epsilon: f64) {
        let version = self.version.fetch_add(1, Ordering::SeqCst) + 1;
        self.policy.replace(PolicySnapshot::new(version, net, epsilon));
    }

    /// Steps the instances until `n` transitions have been pushed into
    /// `buffer`. Instances reset automatically at episode end.
    pub fn collect(&self, buffer: &Mutex<Replay>, n: usize, learner_step: u64) -> Result<CollectReport> {
        if n == 0 {
            return Err(Error::config("collect needs at least one transition"));
        }
        let count = self.instances.len();
        let quotas: Vec<usize> = (0..count).map(|i| n / count + usize::from(i < n % count)).collect();
        let threaded = self.config.threaded && count > 1;
        // Fixed quotas unless free-running threads share one claim counter.
        let use_quotas = self.config.deterministic || !threaded;
        let claimed = AtomicUsize::new(0);
        let run = |i: usize| -> Result<(Vec<Transition>, Vec<CompletedEpisode>, usize)> {
            let mut inst = self.instances[i].lock().unwrap_or_else(PoisonError::into_inner);
            let mut staged = Vec::new();
            let mut episodes = Vec::new();
            let mut pushed = 0;
            loop {
                let more = if use_quotas {
                    pushed < quotas[i]
                } else {
                    claimed.fetch_add(1, Ordering::SeqCst) < n
                };
                if !more {
                    break;
                }
                let (t, done) = inst.step(
                    &self.policy,
                    self.preprocess.frame_skip,
                    self.preprocess.difference_frames,
                    learner_step,
                    &self.stats,
                )?;
                if self.config.deterministic {
                    staged.push(t);
                } else {
                    buffer.lock().unwrap_or_else(PoisonError::into_inner).push(t);
                }
                pushed += 1;
                episodes.extend(done);
            }
            Ok((staged, episodes, pushed))
        };

        self.active_workers.fetch_add(count, Ordering::SeqCst);
        let results: Vec<Result<_>> = if threaded {
            std::thread::scope(|scope| {
                let handles: Vec<_> = (0..count).map(|i| scope.spawn(move || run(i))).collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|panic| Err(Error::config(panic_message(&*panic)))))
                    .collect()
            })
        } else {
            (0..count).map(run).collect()
        };
        self.active_workers.fetch_sub(count, Ordering::SeqCst);

        let mut outputs = Vec::with_capacity(count);
        for (instance, r) in results.into_iter().enumerate() {
            outputs.push(r.map_err(|e| Error::Worker {
                instance,
                reason: match e {
                    Error::Config(reason) => reason,
                    other => other.to_string(),
                },
            })?);
        }
        let mut report = CollectReport::default();
        let mut buf = buffer.lock().unwrap_or_else(PoisonError::into_inner);
        for (staged, episodes, pushed) in outputs {
            for t in staged {
                buf.push(t);
            }
            report.pushed += pushed;
            report.episodes.extend(episodes);
        }
        Ok(report)
    }
}

fn panic_message(panic: &(dyn std::any::Any + Send)) -> String {
    panic
        .downcast_ref::<String>()
        .cloned()
        .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "worker panicked".into())
}
