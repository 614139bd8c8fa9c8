//! Parameter provenance and freezing for every transfer mode.

use qtransfer::agent::{AgentConfig, DqnAgent};
use qtransfer::envs::{Env, GameKind};
use qtransfer::nn::qnet::init_bound;
use qtransfer::nn::{init_network, QNetwork, QNetworkSpec};
use qtransfer::preprocess::{skip_step, PreprocessConfig, Preprocessor};
use qtransfer::replay::{Replay, Transition};
use qtransfer::transfer::{build_transfer_agent, tensor_digest, Checkpoint, CheckpointMeta, TransferMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRAIN_STEPS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Origin {
    Checkpoint,
    /// The first rows come from the checkpoint, the rest are fresh.
    CheckpointRows,
    Fresh,
}

/// Expected origin of (encoder, head1, head2) per mode.
fn expected(mode: TransferMode) -> [Origin; 3] {
    use Origin::*;
    match mode {
        TransferMode::WithinFrozenNewHead => [Checkpoint, Fresh, Fresh],
        TransferMode::CrossFrozenHeadInit => [Checkpoint, Checkpoint, CheckpointRows],
        TransferMode::CrossFrozenHeadScratch => [Checkpoint, Fresh, Fresh],
        TransferMode::EndToEnd => [Checkpoint, Checkpoint, CheckpointRows],
    }
}

fn target_env(mode: TransferMode) -> GameKind {
    match mode {
        TransferMode::WithinFrozenNewHead => GameKind::Shooter7,
        _ => GameKind::Shooter6,
    }
}

fn group(name: &str) -> usize {
    if name.starts_with("conv") {
        0
    } else if name.starts_with("head1") {
        1
    } else {
        2
    }
}

fn fan_in(net: &QNetwork, name: &str) -> usize {
    let shape = net.param(name).unwrap().shape();
    shape[1..].iter().product()
}

/// Classifies one parameter of the transferred network against the source.
fn classify(net: &QNetwork, source: &Checkpoint, name: &str) -> Option<Origin> {
    let t = net.param(name).unwrap();
    let s = source.tensor(name).unwrap();
    if t == s {
        return Some(Origin::Checkpoint);
    }
    let is_bias = name.ends_with(".b");
    let fresh = |v: &[f32]| {
        if is_bias {
            v.iter().all(|&x| x == 0.0)
        } else {
            let bound = init_bound(fan_in(net, name));
            v.iter().all(|x| x.abs() <= bound)
        }
    };
    // Compared over the overlapping leading rows when the output width changed.
    let shared = t.len().min(s.len());
    let differs_everywhere = t.data()[..shared].iter().zip(&s.data()[..shared]).filter(|(a, b)| a == b).count() <= shared / 100;
    if fresh(t.data()) && differs_everywhere {
        return Some(Origin::Fresh);
    }
    if t.shape() == s.shape() {
        return None;
    }
    let row = t.len() / t.shape()[0];
    if t.data()[..shared] == s.data()[..shared] && fresh(&t.data()[shared..]) && shared.is_multiple_of(row) {
        return Some(Origin::CheckpointRows);
    }
    None
}

/// A shooter7 network nudged away from its init so every tensor, biases
/// included, is distinguishable from a fresh one.
fn source_checkpoint() -> Checkpoint {
    let spec = QNetworkSpec::with_widths([8, 8, 8], 32, 7);
    let mut net = init_network(spec, 77).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    for p in net.params_mut() {
        for v in p.data_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
    }
    let meta = CheckpointMeta { env_name: "shooter7".into(), action_count: 7, global_step: 1, config_hash: 0 };
    Checkpoint::from_bytes(&Checkpoint::from_network(&net, meta).to_bytes()).unwrap()
}

fn fill_replay(env: GameKind, n: usize) -> Replay {
    let mut replay = Replay::uniform(n).unwrap();
    let mut game = Env::with_max_steps(env, 200);
    let mut pre = Preprocessor::new(PreprocessConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut obs = pre.reset(&game.reset(0));
    let mut episode = 0;
    while replay.len() < n {
        let action = rng.gen_range(0..env.action_count());
        let r = skip_step(&mut game, action, 4).unwrap();
        let next = pre.push(&r.frame);
        replay.push(Transition { state: obs.clone(), action, reward: r.reward, next_state: next.clone(), done: r.done });
        obs = if r.done {
            episode += 1;
            pre.reset(&game.reset(episode))
        } else {
            next
        };
    }
    replay
}

pub fn run() -> Result<String, String> {
    let source = source_checkpoint();
    let cfg = AgentConfig { batch_size: 4, warmup_transitions: 4, lr: 1e-3, ..AgentConfig::default() };
    let mut parts = Vec::new();
    for mode in TransferMode::ALL {
        let env = target_env(mode);
        let spec = QNetworkSpec { actions: env.action_count(), ..source.spec().unwrap() };
        let mut agent: DqnAgent = build_transfer_agent(&source, &spec, mode, 11, cfg).map_err(|e| format!("{mode}: {e}"))?;
        let want = expected(mode);
        let names = agent.policy().param_names();
        for name in &names {
            let got = classify(agent.policy(), &source, name);
            if got != Some(want[group(name)]) {
                return Err(format!("{mode}: {name} classified {got:?}, expected {:?}", want[group(name)]));
            }
        }
        let frozen: Vec<(String, [u8; 32])> = names
            .iter()
            .zip(agent.policy().frozen())
            .filter(|(_, &f)| f)
            .map(|(n, _)| (n.clone(), tensor_digest(agent.policy().param(n).unwrap())))
            .collect();
        let encoder_frozen = names.iter().zip(agent.policy().frozen()).all(|(n, &f)| f == (group(n) == 0 && mode != TransferMode::EndToEnd));
        if !encoder_frozen {
            return Err(format!("{mode}: frozen mask does not match the mode"));
        }
        let before = agent.policy().clone();
        let mut replay = fill_replay(env, 64);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        while agent.train_steps() < TRAIN_STEPS {
            agent.train_step(&mut replay, &mut rng).map_err(|e| e.to_string())?;
        }
        for (name, digest) in &frozen {
            if tensor_digest(agent.policy().param(name).unwrap()) != *digest {
                return Err(format!("{mode}: frozen {name} changed during training"));
            }
        }
        let trainable_moved = names
            .iter()
            .zip(agent.policy().frozen())
            .filter(|(_, &f)| !f)
            .all(|(n, _)| agent.policy().param(n) != before.param(n));
        if !trainable_moved {
            return Err(format!("{mode}: a trainable parameter never moved"));
        }
        parts.push(format!("{mode} ok ({} frozen)", frozen.len()));
    }
    Ok(parts.join(", "))
}
