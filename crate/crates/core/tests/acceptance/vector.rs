//! Vectorized collection against a serial loop, run invariance and a
//! throughput smoke check.

use std::sync::Mutex;
use std::time::Instant;

use qtransfer::agent::{epsilon_greedy, AgentConfig, DqnAgent};
use qtransfer::envs::{Env, GameKind};
use qtransfer::nn::{init_network, QNetworkSpec};
use qtransfer::preprocess::{skip_step, PreprocessConfig, Preprocessor};
use qtransfer::replay::{Replay, Transition};
use qtransfer::vecenv::{instance_rngs, VecEnvConfig, VectorEnv};
use rand::Rng;
use sha2::{Digest, Sha256};

const EPSILON: f64 = 0.3;
const MAX_STEPS: u32 = 100;

fn agent(spec: QNetworkSpec) -> DqnAgent {
    let mut a = DqnAgent::new(init_network(spec, 17).unwrap(), AgentConfig::default()).unwrap();
    a.set_epsilon_override(Some(EPSILON));
    a
}

fn config(instances: usize, deterministic: bool, threaded: bool) -> VecEnvConfig {
    VecEnvConfig { instances, base_seed: 500, max_episode_steps: MAX_STEPS, deterministic, threaded }
}

fn contents(buffer: &Mutex<Replay>) -> Vec<Transition> {
    match &*buffer.lock().unwrap() {
        Replay::Uniform(b) => b.iter().cloned().collect(),
        Replay::Prioritized(b) => b.buffer().iter().cloned().collect(),
    }
}

fn digest(t: &Transition) -> [u8; 32] {
    let mut h = Sha256::new();
    for plane in t.state.planes().iter().chain(t.next_state.planes()) {
        h.update(plane);
    }
    h.update((t.action as u64).to_le_bytes());
    h.update(t.reward.to_le_bytes());
    h.update([u8::from(t.done)]);
    h.finalize().into()
}

fn serial_matches(agent: &DqnAgent) -> Result<usize, String> {
    let n = 300;
    let vec = VectorEnv::new(GameKind::Shooter6, config(1, false, true), PreprocessConfig::default(), agent).map_err(|e| e.to_string())?;
    let buffer = Mutex::new(Replay::uniform(n).unwrap());
    for _ in 0..3 {
        vec.collect(&buffer, n / 3, 0).map_err(|e| e.to_string())?;
    }
    let got = contents(&buffer);

    let (mut resets, mut rng) = instance_rngs(500, 0);
    let mut env = Env::with_max_steps(GameKind::Shooter6, MAX_STEPS);
    let mut pre = Preprocessor::new(PreprocessConfig::default());
    let mut obs = pre.reset(&env.reset(resets.gen()));
    let mut expected = Vec::with_capacity(n);
    while expected.len() < n {
        let action = epsilon_greedy(EPSILON, 6, &mut rng, || agent.greedy_action(&obs)).unwrap();
        let r = skip_step(&mut env, action, 4).unwrap();
        let next = pre.push(&r.frame);
        expected.push(Transition { state: obs.clone(), action, reward: r.reward, next_state: next.clone(), done: r.done });
        obs = if r.done { pre.reset(&env.reset(resets.gen())) } else { next };
    }
    if got != expected {
        let first = got.iter().zip(&expected).position(|(a, b)| a != b);
        return Err(format!("N=1 stream diverges from the serial loop at transition {first:?}"));
    }
    Ok(n)
}

fn multiset(agent: &DqnAgent, threaded: bool) -> Result<Vec<[u8; 32]>, String> {
    let vec = VectorEnv::new(GameKind::Shooter6, config(4, true, threaded), PreprocessConfig::default(), agent).map_err(|e| e.to_string())?;
    let buffer = Mutex::new(Replay::uniform(1000).unwrap());
    for _ in 0..4 {
        vec.collect(&buffer, 100, 0).map_err(|e| e.to_string())?;
    }
    let mut hashes: Vec<[u8; 32]> = contents(&buffer).iter().map(digest).collect();
    hashes.sort_unstable();
    Ok(hashes)
}

fn throughput(agent: &DqnAgent, instances: usize) -> Result<f64, String> {
    let vec = VectorEnv::new(GameKind::Shooter6, config(instances, false, true), PreprocessConfig::default(), agent).map_err(|e| e.to_string())?;
    let buffer = Mutex::new(Replay::uniform(4000).unwrap());
    let n = 400;
    let start = Instant::now();
    vec.collect(&buffer, n, 0).map_err(|e| e.to_string())?;
    Ok(n as f64 / start.elapsed().as_secs_f64())
}

/// Returns the detail line and an optional throughput warning.
pub fn run() -> Result<(String, Option<String>), String> {
    let small = agent(QNetworkSpec::with_widths([4, 8, 8], 32, 6));
    let n = serial_matches(&small)?;
    let reference = multiset(&small, true)?;
    if reference.len() != 400 || multiset(&small, true)? != reference || multiset(&small, false)? != reference {
        return Err("N=4 deterministic multiset changed between runs".into());
    }
    let full = agent(QNetworkSpec::atari(6));
    let one = throughput(&full, 1)?;
    let four = throughput(&full, 4)?;
    let cores = std::thread::available_parallelism().map_or(1, |c| c.get());
    let ratio = four / one;
    let detail = format!(
        "N=1 == serial over {n} transitions; N=4 multiset stable; throughput N=4/N=1 = {ratio:.2}x ({four:.0} vs {one:.0} transitions/s, {cores} cores)"
    );
    let warning = (ratio < 2.0).then(|| format!("throughput ratio {ratio:.2}x below 2x on {cores} core(s)"));
    Ok((detail, warning))
}
