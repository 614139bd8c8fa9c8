//! Episode-driven training loop: collect with [`VectorEnv`], learn every
//! `train_every` transitions, log, and checkpoint.

use std::path::PathBuf;
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::DqnAgent;
use crate::envs::GameKind;
use crate::error::{Error, Result};
use crate::metrics::{EpisodeRecord, Phase, RunLog};
use crate::replay::Replay;
use crate::transfer::{save_checkpoint, CheckpointMeta};
use crate::vecenv::{VecEnvConfig, VectorEnv};

pub const DEFAULT_CHECKPOINT_EVERY: u64 = 500;
pub const DEFAULT_SYNC_EVERY: u32 = 4;

#[derive(Debug, Clone)]
pub struct TrainPlan {
    pub env: GameKind,
    pub episodes: u64,
    pub seed: u64,
    pub max_episode_steps: u32,
    pub workers: usize,
    /// Train steps between policy snapshots (one worker always syncs
    /// after every learning round).
    pub sync_every: u32,
    pub deterministic: bool,
    pub checkpoint_every: u64,
    pub checkpoint_dir: Option<PathBuf>,
    pub config_hash: u64,
    /// Index given to the first episode of this run.
    pub first_episode: u64,
}

impl TrainPlan {
    pub fn new(env: GameKind, episodes: u64, seed: u64) -> Self {
        Self {
            env,
            episodes,
            seed,
            max_episode_steps: crate::envs::DEFAULT_MAX_EPISODE_STEPS,
            workers: 1,
            sync_every: DEFAULT_SYNC_EVERY,
            deterministic: false,
            checkpoint_every: DEFAULT_CHECKPOINT_EVERY,
            checkpoint_dir: None,
            config_hash: 0,
            first_episode: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainResult {
    pub records: Vec<EpisodeRecord>,
    pub stopped_early: bool,
    pub checkpoints: Vec<PathBuf>,
}

/// Runs `plan.episodes` training episodes (or until `stop` returns true
/// after some episode). A final checkpoint is written when a directory is
/// configured.
pub fn train(
    agent: &mut DqnAgent,
    replay: &Mutex<Replay>,
    plan: &TrainPlan,
    mut log: Option<&mut RunLog>,
    stop: &mut dyn FnMut(&[EpisodeRecord]) -> bool,
) -> Result<TrainResult> {
    let workers = plan.workers.max(1);
    let vec = VectorEnv::new(
        plan.env,
        VecEnvConfig {
            instances: workers,
            base_seed: plan.seed,
            max_episode_steps: plan.max_episode_steps,
            deterministic: plan.deterministic,
            threaded: workers > 1,
        },
        *agent.preprocess(),
        agent,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    rng.set_stream(7);

    let train_every = agent.config().train_every as usize;
    let chunk = train_every * workers;
    let rounds = workers;
    let sync_every = if workers == 1 { 1 } else { plan.sync_every.max(1) as u64 };

    // prefix[k] = sum of the first k losses.
    let base_step = agent.train_steps();
    let mut prefix = vec![0.0f64];
    let mut result = TrainResult::default();
    let mut since_sync = 0u64;

    let save = |agent: &DqnAgent, name: String, result: &mut TrainResult| -> Result<()> {
        if let Some(dir) = &plan.checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(name);
            let meta = CheckpointMeta {
                env_name: plan.env.name().to_string(),
                action_count: agent.policy().actions() as u32,
                global_step: agent.train_steps(),
                config_hash: plan.config_hash,
            };
            save_checkpoint(agent.policy(), &path, &meta)?;
            result.checkpoints.push(path);
        }
        Ok(())
    };

    'outer: while (result.records.len() as u64) < plan.episodes {
        let report = vec.collect(replay, chunk, agent.train_steps())?;
        agent.advance_steps(report.pushed as u64);
        for ep in report.episodes {
            let start = (ep.start_train_step - base_step.min(ep.start_train_step)) as usize;
            let end = prefix.len() - 1;
            let start = start.min(end);
            let mean_loss = if end > start {
                ((prefix[end] - prefix[start]) / (end - start) as f64) as f32
            } else {
                0.0
            };
            let record = EpisodeRecord {
                episode: plan.first_episode + result.records.len() as u64,
                reward: ep.reward,
                duration_steps: ep.duration_steps,
                mean_loss,
                wall_ms: ep.wall_ms,
                env: plan.env.name().to_string(),
                phase: Phase::Train,
            };
            if let Some(log) = log.as_deref_mut() {
                log.append(record.clone())?;
            }
            result.records.push(record);
            let done = result.records.len() as u64;
            if plan.checkpoint_every > 0 && done.is_multiple_of(plan.checkpoint_every) && done < plan.episodes {
                save(agent, format!("checkpoint_{:06}.dqnc", plan.first_episode + done), &mut result)?;
            }
            if stop(&result.records) {
                result.stopped_early = done < plan.episodes;
                break 'outer;
            }
            if done >= plan.episodes {
                break 'outer;
            }
        }
        for _ in 0..rounds {
            let mut buf = replay.lock().unwrap_or_else(std::sync::PoisonError::into_inner);
            if let Some(loss) = agent.train_step(&mut buf, &mut rng)?.loss() {
                prefix.push(prefix.last().unwrap() + f64::from(loss));
                since_sync += 1;
            }
        }
        if since_sync >= sync_every || workers == 1 {
            vec.sync_policy(agent);
            since_sync = 0;
        }
    }
    save(agent, "final.dqnc".to_string(), &mut result)?;
    Ok(result)
}
