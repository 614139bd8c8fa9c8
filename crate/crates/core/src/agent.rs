//! DQN learner: epsilon-greedy acting, Bellman targets from the target
//! network, Huber-loss Adam steps and soft target updates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::envs::Env;
use crate::error::{Error, Result};
use crate::nn::layers::huber_slices;
use crate::nn::{adam_step, OptimizerState, QNetwork};
use crate::preprocess::{dequantize_into, difference_in_place, skip_step, Observation, PreprocessConfig, Preprocessor};
use crate::replay::{Batch, Replay, Transition};

pub const EVAL_EPSILON: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentConfig {
    pub batch_size: usize,
    pub gamma: f32,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay: f64,
    pub tau: f32,
    pub lr: f32,
    pub warmup_transitions: usize,
    pub train_every: u32,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            gamma: 0.99,
            eps_start: 0.9,
            eps_end: 0.05,
            eps_decay: 1000.0,
            tau: 0.005,
            lr: 1e-4,
            warmup_transitions: 1000,
            train_every: 1,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::config(format!("{key}: {why}")));
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma", "must lie in (0, 1]");
        }
        if !(0.0 <= self.eps_end && self.eps_end <= self.eps_start && self.eps_start <= 1.0) {
            return bad("eps_start/eps_end", "need 0 <= eps_end <= eps_start <= 1");
        }
        if !(self.eps_decay > 0.0) {
            return bad("eps_decay", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau", "must lie in [0, 1]");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be finite and non-negative");
        }
        if self.train_every == 0 {
            return bad("train_every", "must be positive");
        }
        Ok(())
    }
}

/// `eps_end + (eps_start − eps_end)·exp(−t/eps_decay)`.
pub fn epsilon(t: u64, cfg: &AgentConfig) -> f64 {
    cfg.eps_end + (cfg.eps_start - cfg.eps_end) * (-(t as f64) / cfg.eps_decay).exp()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy choice: a uniform action with probability `eps`, else
/// `greedy()`. Draws exactly one uniform before deciding.
pub fn epsilon_greedy<R: Rng + ?Sized>(eps: f64, actions: usize, rng: &mut R, greedy: impl FnOnce() -> Result<usize>) -> Result<usize> {
    if rng.gen::<f64>() < eps {
        Ok(rng.gen_range(0..actions))
    } else {
        greedy()
    }
}

/// Packs observations into the network input layout: channel-major
/// `[planes, B, plane_len]` for pixel networks, `[B, len]` for vector ones.
/// Differencing, when enabled, replaces plane `i > 0` by `p_i − p_{i−1}`.
pub fn batch_input(net: &QNetwork, observations: &[&Observation], difference: bool) -> Result<Vec<f32>> {
    let batch = observations.len();
    let expected = net.spec().input_len();
    let mut out = vec![0.0; batch * expected];
    for obs in observations {
        if obs.len() != expected {
            return Err(Error::shape("network input", &[expected], &[obs.len()]));
        }
    }
    if net.spec().is_pixels() {
        let plane_len = observations.first().map_or(0, |o| o.plane_len());
        for (b, obs) in observations.iter().enumerate() {
            for (c, plane) in obs.planes().iter().enumerate() {
                let start = (c * batch + b) * plane_len;
                dequantize_into(plane, &mut out[start..start + plane_len]);
            }
        }
        if difference {
            difference_in_place(&mut out, batch * plane_len);
        }
    } else {
        for (obs, chunk) in observations.iter().zip(out.chunks_exact_mut(expected)) {
            let plane_len = obs.plane_len();
            for (plane, dst) in obs.planes().iter().zip(chunk.chunks_exact_mut(plane_len)) {
                dequantize_into(plane, dst);
            }
            if difference {
                difference_in_place(chunk, plane_len);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainOutcome {
    /// Not enough stored transitions yet; nothing changed.
    Skipped,
    Trained { loss: f32 },
}

impl TrainOutcome {
    pub fn loss(&self) -> Option<f32> {
        match self {
            TrainOutcome::Skipped => None,
            TrainOutcome::Trained { loss } => Some(*loss),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub mean_reward: f64,
    pub mean_duration: f64,
    /// (reward, environment ticks) per episode.
    pub episodes: Vec<(f32, u32)>,
}

#[derive(Debug, Clone)]
pub struct DqnAgent {
    config: AgentConfig,
    preprocess: PreprocessConfig,
    policy: QNetwork,
    target: QNetwork,
    optimizer: OptimizerState,
    steps: u64,
    train_steps: u64,
    epsilon_override: Option<f64>,
}

impl DqnAgent {
    /// Agent whose target network starts as a copy of `policy`.
    pub fn new(policy: QNetwork, config: AgentConfig) -> Result<Self> {
        config.validate()?;
        let target = policy.clone();
        let optimizer = OptimizerState::new(&policy);
        Ok(Self {
            config,
            preprocess: PreprocessConfig::default(),
            policy,
            target,
            optimizer,
            steps: 0,
            train_steps: 0,
            epsilon_override: None,
        })
    }

    pub fn with_preprocess(mut self, preprocess: PreprocessConfig) -> Result<Self> {
        preprocess.validate()?;
        self.preprocess = preprocess;
        Ok(self)
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn preprocess(&self) -> &PreprocessConfig {
        &self.preprocess
    }

    pub fn policy(&self) -> &QNetwork {
        &self.policy
    }

    pub fn target(&self) -> &QNetwork {
        &self.target
    }

    /// Direct access for tests and transfer surgery; the optimizer state is
    /// rebuilt if the freeze mask changes.
    pub fn set_policy(&mut self, policy: QNetwork) -> Result<()> {
        if policy.spec() != self.policy.spec() {
            return Err(Error::config("set_policy: network spec differs"));
        }
        if policy.frozen() != self.policy.frozen() {
            self.optimizer = OptimizerState::new(&policy);
        }
        self.policy = policy;
        Ok(())
    }

    pub fn set_target(&mut self, target: QNetwork) -> Result<()> {
        if target.spec() != self.policy.spec() {
            return Err(Error::config("set_target: network spec differs"));
        }
        self.target = target;
        Ok(())
    }

    /// Decisions taken so far; drives the epsilon schedule.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Counts decisions taken by actors acting on a snapshot of this agent.
    pub fn advance_steps(&mut self, n: u64) {
        self.steps += n;
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    /// Pins epsilon regardless of the schedule (`None` restores it).
    pub fn set_epsilon_override(&mut self, eps: Option<f64>) {
        self.epsilon_override = eps;
    }

    pub fn current_epsilon(&self) -> f64 {
        self.epsilon_override.unwrap_or_else(|| epsilon(self.steps, &self.config))
    }

    pub fn q_values(&self, obs: &Observation) -> Result<Vec<f32>> {
        let input = batch_input(&self.policy, &[obs], self.preprocess.difference_frames)?;
        self.policy.forward_batch(&input, 1)
    }

    pub fn greedy_action(&self, obs: &Observation) -> Result<usize> {
        Ok(argmax(&self.q_values(obs)?))
    }

    /// Epsilon-greedy action under the current schedule; advances `t`.
    pub fn select_action<R: Rng + ?Sized>(&mut self, obs: &Observation, rng: &mut R) -> Result<usize> {
        let eps = self.current_epsilon();
        self.steps += 1;
        epsilon_greedy(eps, self.policy.actions(), rng, || self.greedy_action(obs))
    }

    /// `y = r` for terminal transitions, else `r + γ·max_a′ Q_target(s′, a′)`.
    pub fn compute_targets(&self, batch: &[Transition]) -> Result<Vec<f32>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let next: Vec<&Observation> = batch.iter().map(|t| &t.next_state).collect();
        let input = batch_input(&self.target, &next, self.preprocess.difference_frames)?;
        let q = self.target.forward_batch(&input, batch.len())?;
        let a = self.target.actions();
        Ok(batch
            .iter()
            .zip(q.chunks_exact(a))
            .map(|(t, q)| {
                if t.done {
                    t.reward
                } else {
                    t.reward + self.config.gamma * q.iter().copied().fold(f32::NEG_INFINITY, f32::max)
                }
            })
            .collect())
    }

    /// Samples a batch and learns from it once enough transitions exist.
    pub fn train_step<R: Rng + ?Sized>(&mut self, replay: &mut Replay, rng: &mut R) -> Result<TrainOutcome> {
        let need = self.config.warmup_transitions.max(self.config.batch_size);
        if replay.len() < need {
            return Ok(TrainOutcome::Skipped);
        }
        let batch = replay.sample(self.config.batch_size, rng)?;
        let (loss, td) = self.learn(&batch)?;
        replay.update_priorities(&batch.ids, &td)?;
        Ok(TrainOutcome::Trained { loss })
    }

    /// One gradient step on `batch` followed by a soft update. Returns the
    /// loss and the per-sample TD errors `y − Q(s, a)`.
    pub fn learn(&mut self, batch: &Batch) -> Result<(f32, Vec<f32>)> {
        let n = batch.len();
        if n == 0 {
            return Err(Error::InsufficientSamples { have: 0, need: 1 });
        }
        for t in &batch.transitions {
            if t.action >= self.policy.actions() {
                return Err(Error::config(format!(
                    "transition action {} outside the network's {} actions",
                    t.action,
                    self.policy.actions()
                )));
            }
        }
        let targets = self.compute_targets(&batch.transitions)?;
        let states: Vec<&Observation> = batch.transitions.iter().map(|t| &t.state).collect();
        let input = batch_input(&self.policy, &states, self.preprocess.difference_frames)?;
        let trace = self.policy.forward_traced(&input, n)?;
        let a = self.policy.actions();
        let pred: Vec<f32> = batch.transitions.iter().enumerate().map(|(i, t)| trace.q[i * a + t.action]).collect();
        let (loss, grad) = huber_slices(&pred, &targets, Some(&batch.weights))?;
        let td: Vec<f32> = targets.iter().zip(&pred).map(|(y, p)| y - p).collect();

        if self.config.lr > 0.0 {
            let mut grad_q = vec![0.0; n * a];
            for (i, t) in batch.transitions.iter().enumerate() {
                grad_q[i * a + t.action] = grad[i] / n as f32;
            }
            let grads = self.policy.backward(&trace, &grad_q)?;
            adam_step(&mut self.policy, &grads, &mut self.optimizer, self.config.lr)?;
        }
        self.soft_update();
        self.train_steps += 1;
        Ok((loss, td))
    }

    /// `θ_target ← τ θ_policy + (1 − τ) θ_target` over every parameter.
    pub fn soft_update(&mut self) {
        soft_update(&mut self.target, &self.policy, self.config.tau);
    }

    /// Mean reward and duration over `episodes` plays at a fixed epsilon of
    /// 0.05. Episode `i` resets the environment with `seed + i`.
    pub fn evaluate(&self, env: &mut Env, episodes: u32, seed: u64) -> Result<Evaluation> {
        if episodes == 0 {
            return Err(Error::config("evaluate: episodes must be at least 1"));
        }
        if env.action_space() != self.policy.actions() {
            return Err(Error::config(format!(
                "network has {} actions but {} has {}",
                self.policy.actions(),
                env.spec().name,
                env.action_space()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pre = Preprocessor::new(self.preprocess);
        let mut results = Vec::with_capacity(episodes as usize);
        for i in 0..episodes {
            let mut obs = pre.reset(&env.reset(seed.wrapping_add(u64::from(i))));
            let mut total = 0.0f32;
            loop {
                let action = epsilon_greedy(EVAL_EPSILON, env.action_space(), &mut rng, || self.greedy_action(&obs))?;
                let step = skip_step(env, action, self.preprocess.frame_skip)?;
                total += step.reward;
                if step.done {
                    break;
                }
                obs = pre.push(&step.frame);
            }
            results.push((total, env.episode_steps()));
        }
        let n = f64::from(episodes);
        Ok(Evaluation {
            mean_reward: results.iter().map(|r| f64::from(r.0)).sum::<f64>() / n,
            mean_duration: results.iter().map(|r| f64::from(r.1)).sum::<f64>() / n,
            episodes: results,
        })
    }
}

pub fn soft_update(target: &mut QNetwork, policy: &QNetwork, tau: f32) {
    let tau = f64::from(tau);
    for (t, p) in target.params_mut().iter_mut().zip(policy.params()) {
        for (t, &p) in t.data_mut().iter_mut().zip(p.data()) {
            // One rounding per step; f32 arithmetic drifts over long runs.
            *t = (tau * f64::from(p) + (1.0 - tau) * f64::from(*t)) as f32;
        }
    }
}
