//! Built-in pixel games.
//!
//! Every game renders natively at 84×84 RGB and runs on integer physics, so
//! a (seed, action sequence) pair reproduces the same frames and rewards
//! on every platform.

mod brick;
mod canvas;
mod shooter;

use std::fmt;
use std::str::FromStr;

pub use canvas::{Canvas, Rect, RgbFrame, FRAME_BYTES, FRAME_HEIGHT, FRAME_WIDTH};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_EPISODE_STEPS: u32 = 3000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GameKind {
    Brick,
    Shooter6,
    Shooter7,
    Shooter6Holdout,
}

impl GameKind {
    pub const ALL: [GameKind; 4] = [
        GameKind::Brick,
        GameKind::Shooter6,
        GameKind::Shooter7,
        GameKind::Shooter6Holdout,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GameKind::Brick => "brick",
            GameKind::Shooter6 => "shooter6",
            GameKind::Shooter7 => "shooter7",
            GameKind::Shooter6Holdout => "shooter6_holdout",
        }
    }

    pub fn action_count(self) -> usize {
        match self {
            GameKind::Brick => 4,
            GameKind::Shooter6 | GameKind::Shooter6Holdout => 6,
            GameKind::Shooter7 => 7,
        }
    }

    pub fn action_names(self) -> &'static [&'static str] {
        match self {
            GameKind::Brick => &brick::ACTION_NAMES,
            GameKind::Shooter6 | GameKind::Shooter6Holdout => &shooter::ACTION_NAMES[..6],
            GameKind::Shooter7 => &shooter::ACTION_NAMES,
        }
    }

    /// Never used for training by the universal-agent command.
    pub fn is_holdout(self) -> bool {
        self == GameKind::Shooter6Holdout
    }
}

impl fmt::Display for GameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GameKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GameKind::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::config(format!("unknown env {s:?}; expected one of brick, shooter6, shooter7, shooter6_holdout")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvSpec {
    pub name: &'static str,
    pub action_count: usize,
    pub max_episode_steps: u32,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub frame: RgbFrame,
    pub reward: f32,
    pub done: bool,
    pub episode_steps: u32,
}

/// Game-specific dynamics behind [`Env`].
pub(crate) trait Game: Send {
    fn reset(&mut self, seed: u64);
    /// Advances one tick; returns (reward, terminal).
    fn tick(&mut self, action: usize) -> (u32, bool);
    fn draw(&self, canvas: &mut Canvas);
    /// Upper bound on the reward of one episode of at most `max_steps` ticks.
    fn reward_bound(&self, max_steps: u32) -> u32;
}

pub struct Env {
    kind: GameKind,
    spec: EnvSpec,
    game: Box<dyn Game>,
    steps: u32,
    done: bool,
}

impl fmt::Debug for Env {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Env")
            .field("spec", &self.spec)
            .field("steps", &self.steps)
            .field("done", &self.done)
            .finish()
    }
}

impl Env {
    pub fn new(kind: GameKind) -> Self {
        Self::with_max_steps(kind, DEFAULT_MAX_EPISODE_STEPS)
    }

    pub fn with_max_steps(kind: GameKind, max_episode_steps: u32) -> Self {
        assert!(max_episode_steps > 0, "max_episode_steps must be positive");
        let game: Box<dyn Game> = match kind {
            GameKind::Brick => Box::new(brick::Brick::default()),
            GameKind::Shooter6 => Box::new(shooter::AlienGrid::new(false)),
            GameKind::Shooter6Holdout => Box::new(shooter::AlienGrid::new(true)),
            GameKind::Shooter7 => Box::new(shooter::Raiders::default()),
        };
        let mut env = Self {
            kind,
            spec: EnvSpec {
                name: kind.name(),
                action_count: kind.action_count(),
                max_episode_steps,
            },
            game,
            steps: 0,
            // Stepping before the first reset is an error.
            done: true,
        };
        env.game.reset(0);
        env
    }

    pub fn kind(&self) -> GameKind {
        self.kind
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn action_space(&self) -> usize {
        self.spec.action_count
    }

    pub fn episode_steps(&self) -> u32 {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn reward_bound(&self) -> u32 {
        self.game.reward_bound(self.spec.max_episode_steps)
    }

    pub fn reset(&mut self, seed: u64) -> RgbFrame {
        self.game.reset(seed);
        self.steps = 0;
        self.done = false;
        self.render()
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult> {
        if action >= self.spec.action_count {
            return Err(Error::InvalidAction {
                env: self.spec.name.to_string(),
                action,
                count: self.spec.action_count,
            });
        }
        if self.done {
            return Err(Error::EpisodeOver(self.spec.name.to_string()));
        }
        let (reward, terminal) = self.game.tick(action);
        self.steps += 1;
        self.done = terminal || self.steps >= self.spec.max_episode_steps;
        Ok(StepResult {
            frame: self.render(),
            reward: reward as f32,
            done: self.done,
            episode_steps: self.steps,
        })
    }

    pub fn render(&self) -> RgbFrame {
        let mut canvas = Canvas::new();
        self.game.draw(&mut canvas);
        canvas.into_frame()
    }
}
