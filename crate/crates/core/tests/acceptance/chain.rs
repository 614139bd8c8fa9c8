//! DQN on a 5-state chain against value iteration.

use qtransfer::agent::{AgentConfig, DqnAgent};
use qtransfer::nn::{init_network, QNetworkSpec};
use qtransfer::preprocess::Observation;
use qtransfer::replay::{Replay, Transition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STATES: usize = 5;
const TERMINAL: usize = 4;
const GAMMA: f64 = 0.99;
const MAX_TRAIN_STEPS: u64 = 20_000;
const TOLERANCE: f64 = 0.05;

/// Action 0 moves left (clamped at 0), action 1 moves right. Entering the
/// last state pays 1 and ends the episode.
fn step(s: usize, a: usize) -> (usize, f64, bool) {
    let next = if a == 0 { s.saturating_sub(1) } else { s + 1 };
    let done = next == TERMINAL;
    (next, if done { 1.0 } else { 0.0 }, done)
}

fn value_iteration() -> [[f64; 2]; TERMINAL] {
    let mut q = [[0.0; 2]; TERMINAL];
    loop {
        let mut next = q;
        for (s, row) in next.iter_mut().enumerate() {
            for (a, v) in row.iter_mut().enumerate() {
                let (s2, r, done) = step(s, a);
                *v = if done { r } else { r + GAMMA * q[s2][0].max(q[s2][1]) };
            }
        }
        let delta = next.iter().flatten().zip(q.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        q = next;
        if delta < 1e-10 {
            return q;
        }
    }
}

fn one_hot(s: usize) -> Observation {
    let mut v = [0.0f32; STATES];
    v[s] = 1.0;
    Observation::from_values(&v)
}

/// Train steps needed to bring every Q-value within tolerance, if reached.
fn train_seed(seed: u64, q_star: &[[f64; 2]; TERMINAL]) -> (Option<u64>, f64) {
    let cfg = AgentConfig {
        batch_size: 32,
        gamma: GAMMA as f32,
        lr: 1e-3,
        tau: 0.01,
        warmup_transitions: 32,
        ..AgentConfig::default()
    };
    let net = init_network(QNetworkSpec::vector(STATES, 32, 2), seed).unwrap();
    let mut agent = DqnAgent::new(net, cfg).unwrap();
    let mut replay = Replay::uniform(10_000).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Uniform exploration over every non-terminal state-action pair.
    for _ in 0..2_000 {
        let s = rng.gen_range(0..TERMINAL);
        let a = rng.gen_range(0..2);
        let (s2, r, done) = step(s, a);
        replay.push(Transition { state: one_hot(s), action: a, reward: r as f32, next_state: one_hot(s2), done });
    }
    let error = |agent: &DqnAgent| {
        (0..TERMINAL)
            .flat_map(|s| {
                let q = agent.q_values(&one_hot(s)).unwrap();
                (0..2).map(move |a| (f64::from(q[a]) - q_star[s][a]).abs())
            })
            .fold(0.0, f64::max)
    };
    let mut last = f64::INFINITY;
    while agent.train_steps() < MAX_TRAIN_STEPS {
        agent.train_step(&mut replay, &mut rng).unwrap();
        if agent.train_steps().is_multiple_of(100) {
            last = error(&agent);
            if last <= TOLERANCE {
                return (Some(agent.train_steps()), last);
            }
        }
    }
    (None, last)
}

pub fn run() -> Result<String, String> {
    let q_star = value_iteration();
    let mut parts = Vec::new();
    let mut ok = true;
    for seed in [1, 2, 3] {
        let (reached, err) = train_seed(seed, &q_star);
        match reached {
            Some(steps) => parts.push(format!("seed {seed}: {err:.3} at {steps} steps")),
            None => {
                ok = false;
                parts.push(format!("seed {seed}: {err:.3} after {MAX_TRAIN_STEPS} steps"));
            }
        }
    }
    let detail = format!("max|Q-Q*| <= {TOLERANCE}: {}", parts.join("; "));
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}
