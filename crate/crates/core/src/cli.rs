//! Run configuration and the command implementations behind the binary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use crate::agent::{AgentConfig, DqnAgent, Evaluation};
use crate::envs::{Env, GameKind, DEFAULT_MAX_EPISODE_STEPS};
use crate::error::{Error, Result};
use crate::metrics::{emit_plot, export_csv, record_frames, EpisodeRecord, Metric, Phase, RunHeader, RunLog};
use crate::nn::{init_network, QNetworkSpec};
use crate::preprocess::PreprocessConfig;
use crate::replay::{PriorityConfig, Replay, DEFAULT_CAPACITY};
use crate::train::{train, TrainPlan, DEFAULT_CHECKPOINT_EVERY, DEFAULT_SYNC_EVERY};
use crate::transfer::{build_transfer_agent, hash64, load_checkpoint, TransferMode};

pub const DETERMINISTIC_ENV_VAR: &str = "QT_DETERMINISTIC";
pub const TRAIN_LOG: &str = "train.ndjson";
pub const EVAL_LOG: &str = "eval.ndjson";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BufferKind {
    Uniform,
    Prioritized,
}

impl BufferKind {
    fn name(self) -> &'static str {
        match self {
            BufferKind::Uniform => "uniform",
            BufferKind::Prioritized => "prioritized",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Finetune,
    Universal,
    Eval,
    Record,
    Plot,
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "train" => Command::Train,
            "finetune" => Command::Finetune,
            "universal" => Command::Universal,
            "eval" => Command::Eval,
            "record" => Command::Record,
            "plot" => Command::Plot,
            _ => return Err(Error::config(format!("unknown command {s:?}"))),
        })
    }
}

/// Flat `key = value` run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: Option<GameKind>,
    pub episodes: u64,
    pub seed: u64,
    pub agent: AgentConfig,
    pub buffer: BufferKind,
    pub capacity: usize,
    pub priority: PriorityConfig,
    pub workers: usize,
    pub sync_every: u32,
    pub deterministic: bool,
    pub transfer_mode: Option<TransferMode>,
    pub transfer_checkpoint: Option<PathBuf>,
    pub preprocess: PreprocessConfig,
    pub max_episode_steps: u32,
    pub out_dir: Option<PathBuf>,
    pub checkpoint_every: u64,
    pub env_list: Vec<GameKind>,
    pub episodes_per_env: u64,
    pub eval_env: GameKind,
    pub eval_episodes: u32,
    pub checkpoint: Option<PathBuf>,
    pub frames: usize,
    pub metric: Metric,
    pub log: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: None,
            episodes: 1000,
            seed: 0,
            agent: AgentConfig::default(),
            buffer: BufferKind::Uniform,
            capacity: DEFAULT_CAPACITY,
            priority: PriorityConfig::default(),
            workers: 1,
            sync_every: DEFAULT_SYNC_EVERY,
            deterministic: false,
            transfer_mode: None,
            transfer_checkpoint: None,
            preprocess: PreprocessConfig::default(),
            max_episode_steps: DEFAULT_MAX_EPISODE_STEPS,
            out_dir: None,
            checkpoint_every: DEFAULT_CHECKPOINT_EVERY,
            env_list: Vec::new(),
            episodes_per_env: 1000,
            eval_env: GameKind::Shooter6Holdout,
            eval_episodes: 100,
            checkpoint: None,
            frames: 100,
            metric: Metric::Reward,
            log: None,
        }
    }
}

pub const KEYS: [&str; 35] = [
    "env",
    "episodes",
    "seed",
    "batch_size",
    "gamma",
    "eps_start",
    "eps_end",
    "eps_decay",
    "tau",
    "lr",
    "warmup_transitions",
    "train_every",
    "buffer",
    "capacity",
    "alpha",
    "beta",
    "priority_epsilon",
    "workers",
    "sync_every",
    "deterministic",
    "transfer.mode",
    "transfer.checkpoint",
    "frame_skip",
    "difference_frames",
    "max_episode_steps",
    "out_dir",
    "checkpoint_every",
    "env_list",
    "episodes_per_env",
    "eval_env",
    "eval_episodes",
    "checkpoint",
    "frames",
    "metric",
    "log",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::config(format!("invalid value {value:?} for key `{key}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("invalid value {value:?} for key `{key}`: expected true or false"))),
    }
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn with_key<T>(key: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(msg) if !msg.contains(&format!("`{key}`")) => Error::config(format!("key `{key}`: {msg}")),
        other => other,
    })
}

impl RunConfig {
    /// Parses configuration text. Unknown keys and malformed lines are errors
    /// that name the line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(format!("line {}: expected key = value, got {line:?}", n + 1)));
            };
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::config(format!("line {}: {}", n + 1, strip_prefix(&e))))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let a = &mut self.agent;
        match key {
            "env" => self.env = Some(with_key(key, value.parse())?),
            "episodes" => self.episodes = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "batch_size" => a.batch_size = parse_value(key, value)?,
            "gamma" => a.gamma = parse_value(key, value)?,
            "eps_start" => a.eps_start = parse_value(key, value)?,
            "eps_end" => a.eps_end = parse_value(key, value)?,
            "eps_decay" => a.eps_decay = parse_value(key, value)?,
            "tau" => a.tau = parse_value(key, value)?,
            "lr" => a.lr = parse_value(key, value)?,
            "warmup_transitions" => a.warmup_transitions = parse_value(key, value)?,
            "train_every" => a.train_every = parse_value(key, value)?,
            "buffer" => {
                self.buffer = match value {
                    "uniform" => BufferKind::Uniform,
                    "prioritized" => BufferKind::Prioritized,
                    _ => {
                        return Err(Error::config(format!(
                            "invalid value {value:?} for key `buffer`: expected uniform or prioritized"
                        )))
                    }
                }
            }
            "capacity" => self.capacity = parse_value(key, value)?,
            "alpha" => self.priority.alpha = parse_value(key, value)?,
            "beta" => self.priority.beta = parse_value(key, value)?,
            "priority_epsilon" => self.priority.epsilon = parse_value(key, value)?,
            "workers" => self.workers = parse_value(key, value)?,
            "sync_every" => self.sync_every = parse_value(key, value)?,
            "deterministic" => self.deterministic = parse_bool(key, value)?,
            "transfer.mode" => {
                self.transfer_mode = if value.is_empty() { None } else { Some(with_key(key, value.parse())?) }
            }
            "transfer.checkpoint" => self.transfer_checkpoint = optional_path(value),
            "frame_skip" => self.preprocess.frame_skip = parse_value(key, value)?,
            "difference_frames" => self.preprocess.difference_frames = parse_bool(key, value)?,
            "max_episode_steps" => self.max_episode_steps = parse_value(key, value)?,
            "out_dir" => self.out_dir = optional_path(value),
            "checkpoint_every" => self.checkpoint_every = parse_value(key, value)?,
            "env_list" => {
                self.env_list = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| with_key(key, s.parse()))
                    .collect::<Result<_>>()?
            }
            "episodes_per_env" => self.episodes_per_env = parse_value(key, value)?,
            "eval_env" => self.eval_env = with_key(key, value.parse())?,
            "eval_episodes" => self.eval_episodes = parse_value(key, value)?,
            "checkpoint" => self.checkpoint = optional_path(value),
            "frames" => self.frames = parse_value(key, value)?,
            "metric" => self.metric = with_key(key, Metric::parse(value))?,
            "log" => self.log = optional_path(value),
            _ => return Err(Error::config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override such as one passed with `--set`.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let Some((key, value)) = assignment.split_once('=') else {
            return Err(Error::config(format!("override {assignment:?} is not key=value")));
        };
        self.set(key.trim(), value.trim())
    }

    /// Checks value ranges; the error names the offending key.
    pub fn validate(&self) -> Result<()> {
        with_key("agent", self.agent.validate())?;
        with_key("frame_skip", self.preprocess.validate())?;
        if self.buffer == BufferKind::Prioritized {
            with_key("alpha/beta/priority_epsilon", self.priority.validate())?;
        }
        if self.capacity == 0 {
            return Err(Error::config("key `capacity`: must be positive"));
        }
        if self.workers == 0 {
            return Err(Error::config("key `workers`: must be positive"));
        }
        if self.max_episode_steps == 0 {
            return Err(Error::config("key `max_episode_steps`: must be positive"));
        }
        Ok(())
    }

    /// Every key with its current value, in key order.
    pub fn entries(&self) -> BTreeMap<String, String> {
        let a = &self.agent;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let metric = match self.metric {
            Metric::Reward => "reward",
            Metric::Duration => "duration",
            Metric::Loss => "loss",
        };
        let pairs: [(&str, String); 35] = [
            ("env", self.env.map(|e| e.name().to_string()).unwrap_or_default()),
            ("episodes", self.episodes.to_string()),
            ("seed", self.seed.to_string()),
            ("batch_size", a.batch_size.to_string()),
            ("gamma", a.gamma.to_string()),
            ("eps_start", a.eps_start.to_string()),
            ("eps_end", a.eps_end.to_string()),
            ("eps_decay", a.eps_decay.to_string()),
            ("tau", a.tau.to_string()),
            ("lr", a.lr.to_string()),
            ("warmup_transitions", a.warmup_transitions.to_string()),
            ("train_every", a.train_every.to_string()),
            ("buffer", self.buffer.name().to_string()),
            ("capacity", self.capacity.to_string()),
            ("alpha", self.priority.alpha.to_string()),
            ("beta", self.priority.beta.to_string()),
            ("priority_epsilon", self.priority.epsilon.to_string()),
            ("workers", self.workers.to_string()),
            ("sync_every", self.sync_every.to_string()),
            ("deterministic", self.deterministic.to_string()),
            ("transfer.mode", self.transfer_mode.map(|m| m.name().to_string()).unwrap_or_default()),
            ("transfer.checkpoint", path(&self.transfer_checkpoint)),
            ("frame_skip", self.preprocess.frame_skip.to_string()),
            ("difference_frames", self.preprocess.difference_frames.to_string()),
            ("max_episode_steps", self.max_episode_steps.to_string()),
            ("out_dir", path(&self.out_dir)),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("env_list", self.env_list.iter().map(|e| e.name()).collect::<Vec<_>>().join(",")),
            ("episodes_per_env", self.episodes_per_env.to_string()),
            ("eval_env", self.eval_env.name().to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("checkpoint", path(&self.checkpoint)),
            ("frames", self.frames.to_string()),
            ("metric", metric.to_string()),
            ("log", path(&self.log)),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Stable hash of the settings that affect learning (output paths are
    /// excluded).
    pub fn config_hash(&self) -> u64 {
        let mut text = String::new();
        for (k, v) in self.entries() {
            if matches!(k.as_str(), "out_dir" | "log" | "checkpoint" | "frames" | "metric") {
                continue;
            }
            let _ = writeln!(text, "{k}={v}");
        }
        hash64(text.as_bytes())
    }

    fn require_env(&self) -> Result<GameKind> {
        self.env.ok_or_else(|| Error::config("missing required key `env`"))
    }

    fn require_out_dir(&self) -> Result<&Path> {
        self.out_dir
            .as_deref()
            .ok_or_else(|| Error::config("missing required key `out_dir`"))
    }

    fn require_checkpoint(&self) -> Result<&Path> {
        self.checkpoint
            .as_deref()
            .ok_or_else(|| Error::config("missing required key `checkpoint`"))
    }

    fn replay(&self) -> Result<Replay> {
        match self.buffer {
            BufferKind::Uniform => Replay::uniform(self.capacity),
            BufferKind::Prioritized => Replay::prioritized(self.capacity, self.priority),
        }
    }

    fn plan(&self, env: GameKind, episodes: u64, out: Option<PathBuf>) -> TrainPlan {
        TrainPlan {
            max_episode_steps: self.max_episode_steps,
            workers: self.workers,
            sync_every: self.sync_every,
            deterministic: self.deterministic,
            checkpoint_every: self.checkpoint_every,
            checkpoint_dir: out,
            config_hash: self.config_hash(),
            ..TrainPlan::new(env, episodes, self.seed)
        }
    }

    fn header(&self) -> RunHeader {
        RunHeader::new(self.entries(), vec![self.seed])
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(msg) => msg.clone(),
        other => other.to_string(),
    }
}

/// Process exit code for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Shape { .. } | Error::InvalidAction { .. } | Error::InsufficientSamples { .. } => 2,
        Error::Io { .. } | Error::Checkpoint { .. } => 3,
        Error::NonFinite(_) => 4,
        Error::Worker { reason, .. } if reason.contains("non-finite") => 4,
        Error::EpisodeOver(_) | Error::Worker { .. } => 1,
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn fresh_agent(cfg: &RunConfig, actions: usize) -> Result<DqnAgent> {
    let net = init_network(QNetworkSpec::atari(actions), cfg.seed)?;
    DqnAgent::new(net, cfg.agent)?.with_preprocess(cfg.preprocess)
}

fn agent_from_checkpoint(cfg: &RunConfig, path: &Path, env: GameKind) -> Result<DqnAgent> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.meta.action_count as usize != env.action_count() {
        return Err(Error::config(format!(
            "checkpoint {} has {} actions but {} has {}",
            path.display(),
            ckpt.meta.action_count,
            env,
            env.action_count()
        )));
    }
    DqnAgent::new(ckpt.to_network()?, cfg.agent)?.with_preprocess(cfg.preprocess)
}

fn run_training(cfg: &RunConfig, agent: &mut DqnAgent, header: RunHeader, env: GameKind) -> Result<Vec<EpisodeRecord>> {
    let out = cfg.require_out_dir()?;
    create_dir(out)?;
    let mut log = RunLog::create(&out.join(TRAIN_LOG), &header)?;
    let replay = Mutex::new(cfg.replay()?);
    let plan = cfg.plan(env, cfg.episodes, Some(out.to_path_buf()));
    let result = train(agent, &replay, &plan, Some(&mut log), &mut |_| false)?;
    export_csv(&result.records, &out.join("metrics.csv"))?;
    Ok(result.records)
}

pub fn cmd_train(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<()> {
    let env = cfg.require_env()?;
    cfg.require_out_dir()?;
    if cfg.transfer_mode.is_some() || cfg.transfer_checkpoint.is_some() {
        return Err(Error::config("key `transfer.mode`: train takes no transfer settings; use finetune"));
    }
    let mut agent = fresh_agent(cfg, env.action_count())?;
    let records = run_training(cfg, &mut agent, cfg.header(), env)?;
    summarize(stdout, &records)
}

pub fn cmd_finetune(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<()> {
    let env = cfg.require_env()?;
    cfg.require_out_dir()?;
    let mode = cfg
        .transfer_mode
        .ok_or_else(|| Error::config("missing required key `transfer.mode`"))?;
    let source = cfg
        .transfer_checkpoint
        .as_deref()
        .ok_or_else(|| Error::config("missing required key `transfer.checkpoint`"))?;
    let ckpt = load_checkpoint(source)?;
    let spec = QNetworkSpec::atari(env.action_count());
    let mut agent = build_transfer_agent(&ckpt, &spec, mode, cfg.seed, cfg.agent)?.with_preprocess(cfg.preprocess)?;
    let mut header = cfg.header();
    header.extra.insert("transfer.mode".into(), mode.name().into());
    header.extra.insert("source_checkpoint_sha256".into(), file_sha256(source)?);
    header.extra.insert("source_env".into(), ckpt.meta.env_name.clone());
    let records = run_training(cfg, &mut agent, header, env)?;
    summarize(stdout, &records)
}

/// Trains on each env of `env_list` in turn with all weights carried
/// forward, then evaluates on `eval_env`.
pub fn cmd_universal(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<Evaluation> {
    let out = cfg.require_out_dir()?;
    let (first, rest) = cfg
        .env_list
        .split_first()
        .ok_or_else(|| Error::config("missing required key `env_list`"))?;
    if let Some(bad) = rest.iter().find(|e| e.action_count() != first.action_count()) {
        return Err(Error::config(format!(
            "key `env_list`: {first} has {} actions but {bad} has {}",
            first.action_count(),
            bad.action_count()
        )));
    }
    if let Some(bad) = cfg.env_list.iter().find(|e| e.is_holdout() || **e == cfg.eval_env) {
        return Err(Error::config(format!(
            "key `env_list`: {bad} is reserved for evaluation and may not be trained on"
        )));
    }
    if cfg.eval_env.action_count() != first.action_count() {
        return Err(Error::config(format!(
            "key `eval_env`: {} has {} actions but the trained agent has {}",
            cfg.eval_env,
            cfg.eval_env.action_count(),
            first.action_count()
        )));
    }
    if cfg.eval_episodes == 0 {
        return Err(Error::config("key `eval_episodes`: must be positive"));
    }
    create_dir(out)?;
    let mut agent = match &cfg.transfer_checkpoint {
        Some(path) => agent_from_checkpoint(cfg, path, *first)?,
        None => fresh_agent(cfg, first.action_count())?,
    };
    let mut log = RunLog::create(&out.join(TRAIN_LOG), &cfg.header())?;
    let mut next_episode = 0;
    for env in &cfg.env_list {
        log.segment(env.name())?;
        let replay = Mutex::new(cfg.replay()?);
        let plan = TrainPlan {
            first_episode: next_episode,
            ..cfg.plan(*env, cfg.episodes_per_env, Some(out.join(env.name())))
        };
        let result = train(&mut agent, &replay, &plan, Some(&mut log), &mut |_| false)?;
        next_episode += result.records.len() as u64;
    }
    let eval = evaluate_into(cfg, &agent, cfg.eval_env, cfg.eval_episodes, &mut log, next_episode)?;
    export_csv(log.records(), &out.join("metrics.csv"))?;
    print_eval(stdout, &eval)?;
    Ok(eval)
}

fn evaluate_into(
    cfg: &RunConfig,
    agent: &DqnAgent,
    env: GameKind,
    episodes: u32,
    log: &mut RunLog,
    first_episode: u64,
) -> Result<Evaluation> {
    let mut game = Env::with_max_steps(env, cfg.max_episode_steps);
    let eval = agent.evaluate(&mut game, episodes, cfg.seed)?;
    for (i, &(reward, duration)) in eval.episodes.iter().enumerate() {
        log.append(EpisodeRecord {
            episode: first_episode + i as u64,
            reward,
            duration_steps: duration,
            mean_loss: 0.0,
            wall_ms: 0,
            env: env.name().to_string(),
            phase: Phase::Eval,
        })?;
    }
    Ok(eval)
}

fn print_eval(stdout: &mut dyn Write, eval: &Evaluation) -> Result<()> {
    writeln!(stdout, "mean_reward={:.4} mean_duration={:.2}", eval.mean_reward, eval.mean_duration)
        .map_err(|e| Error::io("<stdout>", e))
}

fn summarize(stdout: &mut dyn Write, records: &[EpisodeRecord]) -> Result<()> {
    let n = records.len().max(1) as f64;
    let mean = records.iter().map(|r| f64::from(r.reward)).sum::<f64>() / n;
    writeln!(stdout, "episodes={} mean_reward={mean:.4}", records.len()).map_err(|e| Error::io("<stdout>", e))
}

/// Plays `episodes` evaluation episodes with the checkpoint's greedy policy
/// and prints `mean_reward=<f> mean_duration=<d>`.
pub fn cmd_eval(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<Evaluation> {
    let env = cfg.require_env()?;
    let out = cfg.require_out_dir()?;
    let path = cfg.require_checkpoint()?;
    if cfg.episodes == 0 {
        return Err(Error::config("key `episodes`: must be positive"));
    }
    let episodes = u32::try_from(cfg.episodes).map_err(|_| Error::config("key `episodes`: too large"))?;
    let agent = agent_from_checkpoint(cfg, path, env)?;
    create_dir(out)?;
    let mut header = cfg.header();
    header.extra.insert("checkpoint_sha256".into(), file_sha256(path)?);
    let mut log = RunLog::create(&out.join(EVAL_LOG), &header)?;
    let eval = evaluate_into(cfg, &agent, env, episodes, &mut log, 0)?;
    print_eval(stdout, &eval)?;
    Ok(eval)
}

pub fn cmd_record(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<Vec<PathBuf>> {
    let env = cfg.require_env()?;
    let out = cfg.require_out_dir()?;
    let agent = agent_from_checkpoint(cfg, cfg.require_checkpoint()?, env)?;
    create_dir(out)?;
    let mut game = Env::with_max_steps(env, cfg.max_episode_steps);
    let files = record_frames(&mut game, &agent, cfg.frames, cfg.seed, out)?;
    writeln!(stdout, "frames={}", files.len()).map_err(|e| Error::io("<stdout>", e))?;
    Ok(files)
}

/// Writes `<metric>.svg` and `metrics.csv` for a run log (default
/// `<out_dir>/train.ndjson`).
pub fn cmd_plot(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<PathBuf> {
    let out = cfg.require_out_dir()?;
    let log = cfg.log.clone().unwrap_or_else(|| out.join(TRAIN_LOG));
    let records = RunLog::read_records(&log)?;
    create_dir(out)?;
    let name = match cfg.metric {
        Metric::Reward => "reward",
        Metric::Duration => "duration",
        Metric::Loss => "loss",
    };
    let path = out.join(format!("{name}.svg"));
    emit_plot(&records, cfg.metric, &path)?;
    export_csv(&records, &out.join("metrics.csv"))?;
    writeln!(stdout, "{}", path.display()).map_err(|e| Error::io("<stdout>", e))?;
    Ok(path)
}

/// Validates `cfg` and dispatches to the command.
pub fn run(command: Command, cfg: &RunConfig, stdout: &mut dyn Write) -> Result<()> {
    cfg.validate()?;
    match command {
        Command::Train => cmd_train(cfg, stdout),
        Command::Finetune => cmd_finetune(cfg, stdout),
        Command::Universal => cmd_universal(cfg, stdout).map(drop),
        Command::Eval => cmd_eval(cfg, stdout).map(drop),
        Command::Record => cmd_record(cfg, stdout).map(drop),
        Command::Plot => cmd_plot(cfg, stdout).map(drop),
    }
}
