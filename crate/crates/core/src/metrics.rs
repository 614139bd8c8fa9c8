//! Run logs (NDJSON), CSV export, SVG line plots and PPM frame dumps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::DqnAgent;
use crate::envs::{Env, RgbFrame, FRAME_HEIGHT, FRAME_WIDTH};
use crate::error::{Error, Result};
use crate::preprocess::Preprocessor;

pub const MOVING_AVERAGE_WINDOW: usize = 100;
pub const CSV_HEADER: &str = "episode,reward,duration_steps,mean_loss,wall_ms,phase";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Eval,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: u64,
    pub reward: f32,
    pub duration_steps: u32,
    /// Mean training loss over the episode; 0 when no update happened.
    pub mean_loss: f32,
    pub wall_ms: u64,
    pub env: String,
    pub phase: Phase,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub version: String,
    pub config: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

impl RunHeader {
    pub fn new(config: BTreeMap<String, String>, seeds: Vec<u64>) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            seeds,
            extra: BTreeMap::new(),
        }
    }
}

/// One NDJSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogLine {
    Header(RunHeader),
    /// Start of a training segment on one environment.
    Segment { env: String },
    Episode(EpisodeRecord),
}

/// Append-only NDJSON run log. The header is written on creation and every
/// line is flushed as it is appended.
#[derive(Debug)]
pub struct RunLog {
    path: PathBuf,
    file: File,
    records: Vec<EpisodeRecord>,
}

impl RunLog {
    pub fn create(path: &Path, header: &RunHeader) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut log = Self {
            path: path.to_path_buf(),
            file,
            records: Vec::new(),
        };
        log.write_line(&LogLine::Header(header.clone()))?;
        Ok(log)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn records(&self) -> &[EpisodeRecord] {
        &self.records
    }

    fn write_line(&mut self, line: &LogLine) -> Result<()> {
        let mut text = serde_json::to_string(line).map_err(|e| Error::config(format!("log serialization: {e}")))?;
        text.push('\n');
        self.file
            .write_all(text.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn segment(&mut self, env: &str) -> Result<()> {
        self.write_line(&LogLine::Segment { env: env.to_string() })
    }

    pub fn append(&mut self, record: EpisodeRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.episode <= last.episode {
                return Err(Error::config(format!(
                    "episode index {} does not follow {}",
                    record.episode, last.episode
                )));
            }
        }
        if !record.mean_loss.is_finite() || !record.reward.is_finite() {
            return Err(Error::NonFinite("episode record"));
        }
        self.write_line(&LogLine::Episode(record.clone()))?;
        self.records.push(record);
        Ok(())
    }

    /// Parses a log file back into its lines.
    pub fn read(path: &Path) -> Result<Vec<LogLine>> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let parsed = serde_json::from_str(&line)
                .map_err(|e| Error::config(format!("{}:{}: {e}", path.display(), i + 1)))?;
            out.push(parsed);
        }
        Ok(out)
    }

    pub fn read_records(path: &Path) -> Result<Vec<EpisodeRecord>> {
        Ok(Self::read(path)?
            .into_iter()
            .filter_map(|l| match l {
                LogLine::Episode(r) => Some(r),
                _ => None,
            })
            .collect())
    }
}

/// Trailing mean over `window` values; the first `window − 1` outputs are 0.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1, "window must be positive");
    let mut out = vec![0.0; values.len()];
    if values.len() < window {
        return out;
    }
    let mut sum: f64 = values[..window].iter().sum();
    out[window - 1] = sum / window as f64;
    for i in window..values.len() {
        sum += values[i] - values[i - window];
        out[i] = sum / window as f64;
    }
    out
}

pub fn export_csv(records: &[EpisodeRecord], path: &Path) -> Result<()> {
    let mut text = String::from(CSV_HEADER);
    text.push('\n');
    for r in records {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{}",
            r.episode,
            r.reward,
            r.duration_steps,
            r.mean_loss,
            r.wall_ms,
            r.phase.name()
        );
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Reward,
    Duration,
    Loss,
}

impl Metric {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "reward" => Ok(Metric::Reward),
            "duration" => Ok(Metric::Duration),
            "loss" => Ok(Metric::Loss),
            _ => Err(Error::config(format!("unknown metric {s:?}; expected reward, duration or loss"))),
        }
    }

    fn title(self) -> &'static str {
        match self {
            Metric::Reward => "Rewards vs Episode",
            Metric::Duration => "Duration vs Episode",
            Metric::Loss => "Loss vs Episode",
        }
    }

    fn value(self, r: &EpisodeRecord) -> f64 {
        match self {
            Metric::Reward => f64::from(r.reward),
            Metric::Duration => f64::from(r.duration_steps),
            Metric::Loss => f64::from(r.mean_loss),
        }
    }
}

/// SVG line chart of the raw series and its 100-episode moving average.
pub fn emit_plot(records: &[EpisodeRecord], metric: Metric, path: &Path) -> Result<()> {
    fs::write(path, plot_svg(records, metric)).map_err(|e| Error::io(path, e))
}

pub fn plot_svg(records: &[EpisodeRecord], metric: Metric) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 50.0;
    let raw: Vec<f64> = records.iter().map(|r| metric.value(r)).collect();
    let smooth = moving_average(&raw, MOVING_AVERAGE_WINDOW);
    let (lo, hi) = raw
        .iter()
        .chain(&smooth)
        .fold((0.0f64, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let hi = if hi <= lo { lo + 1.0 } else { hi };
    let n = raw.len().max(2) as f64 - 1.0;
    let x = |i: usize| PAD + (W - 2.0 * PAD) * i as f64 / n;
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * (v - lo) / (hi - lo);
    let polyline = |series: &[f64], color: &str| {
        let points: Vec<String> = series.iter().enumerate().map(|(i, &v)| format!("{:.2},{:.2}", x(i), y(v))).collect();
        format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1\" points=\"{}\"/>\n",
            points.join(" ")
        )
    };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(svg, "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>", W / 2.0, metric.title());
    let _ = writeln!(
        svg,
        "<line x1=\"{PAD}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/><line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{b}\" stroke=\"black\"/>",
        b = H - PAD,
        r = W - PAD
    );
    let _ = writeln!(svg, "<text x=\"{PAD}\" y=\"{}\" font-size=\"11\">{lo:.3}</text>", H - PAD + 14.0);
    let _ = writeln!(svg, "<text x=\"4\" y=\"{}\" font-size=\"11\">{hi:.3}</text>", PAD);
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" font-size=\"11\">episode {}</text>", W - PAD - 60.0, H - 12.0, raw.len());
    if !raw.is_empty() {
        svg.push_str(&polyline(&raw, "#7aa6d6"));
        svg.push_str(&polyline(&smooth, "#c0392b"));
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn write_ppm(frame: &RgbFrame, path: &Path) -> Result<()> {
    let mut bytes = format!("P6\n{FRAME_WIDTH} {FRAME_HEIGHT}\n255\n").into_bytes();
    bytes.extend_from_slice(frame.as_bytes());
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Greedy rollout writing every environment tick as `frame_%06d.ppm`,
/// starting with the reset frame. Episodes restart with `seed + 1`, … until
/// `n_frames` files exist.
pub fn record_frames(env: &mut Env, agent: &DqnAgent, n_frames: usize, seed: u64, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if env.action_space() != agent.policy().actions() {
        return Err(Error::config(format!(
            "network has {} actions but {} has {}",
            agent.policy().actions(),
            env.spec().name,
            env.action_space()
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let skip = agent.preprocess().frame_skip;
    let mut pre = Preprocessor::new(*agent.preprocess());
    let mut files = Vec::with_capacity(n_frames);
    let emit = |frame: &RgbFrame, files: &mut Vec<PathBuf>| -> Result<bool> {
        let path = out_dir.join(format!("frame_{:06}.ppm", files.len()));
        write_ppm(frame, &path)?;
        files.push(path);
        Ok(files.len() == n_frames)
    };
    let mut episode_seed = seed;
    'episodes: while files.len() < n_frames {
        let first = env.reset(episode_seed);
        episode_seed = episode_seed.wrapping_add(1);
        if emit(&first, &mut files)? {
            break;
        }
        let mut obs = pre.reset(&first);
        loop {
            let action = agent.greedy_action(&obs)?;
            let mut last = None;
            for _ in 0..skip {
                let step = env.step(action)?;
                if emit(&step.frame, &mut files)? {
                    break 'episodes;
                }
                let done = step.done;
                last = Some(step.frame);
                if done {
                    continue 'episodes;
                }
            }
            obs = pre.push(&last.expect("skip >= 1"));
        }
    }
    Ok(files)
}
