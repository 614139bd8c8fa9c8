//! Bellman targets, soft-update contraction and output-layer resizing.

use qtransfer::agent::{soft_update, AgentConfig, DqnAgent};
use qtransfer::nn::qnet::init_bound;
use qtransfer::nn::{init_network, QNetworkSpec};
use qtransfer::preprocess::Observation;
use qtransfer::replay::{Batch, Transition};
use qtransfer::transfer::resize_output_layer;

fn obs(v: &[f32]) -> Observation {
    Observation::from_values(v)
}

/// Max of a two-layer ReLU network evaluated by hand.
fn oracle_max_q(net: &qtransfer::nn::QNetwork, x: &[f32]) -> f64 {
    let p: Vec<Vec<f64>> = net.params().iter().map(|t| t.data().iter().map(|&v| f64::from(v)).collect()).collect();
    let spec = net.spec();
    let inputs = x.len();
    let hidden: Vec<f64> = (0..spec.hidden)
        .map(|j| (p[1][j] + (0..inputs).map(|i| p[0][j * inputs + i] * f64::from(x[i])).sum::<f64>()).max(0.0))
        .collect();
    (0..spec.actions)
        .map(|a| p[3][a] + (0..spec.hidden).map(|j| p[2][a * spec.hidden + j] * hidden[j]).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn bellman_and_soft_update() -> Result<String, String> {
    let spec = QNetworkSpec::vector(3, 8, 4);
    let cfg = AgentConfig { gamma: 0.9, ..AgentConfig::default() };
    let mut agent = DqnAgent::new(init_network(spec.clone(), 1).unwrap(), cfg).unwrap();
    agent.set_target(init_network(spec.clone(), 2).unwrap()).unwrap();
    let s = obs(&[1.0, 0.0, 0.5]);
    let s2 = obs(&[0.0, 1.0, 0.25]);
    let batch = [
        Transition { state: s.clone(), action: 1, reward: 2.5, next_state: s2.clone(), done: true },
        Transition { state: s.clone(), action: 0, reward: -1.0, next_state: s2.clone(), done: false },
    ];
    let y = agent.compute_targets(&batch).map_err(|e| e.to_string())?;
    if y[0] != 2.5 {
        return Err(format!("terminal target {} != reward 2.5", y[0]));
    }
    let expected = -1.0 + 0.9 * oracle_max_q(agent.target(), s2.to_tensor().data());
    if (f64::from(y[1]) - expected).abs() > 1e-5 {
        return Err(format!("non-terminal target {} != {expected}", y[1]));
    }

    // tau = 1 copies the policy exactly, through the agent's own update path.
    let mut copy = DqnAgent::new(init_network(spec.clone(), 3).unwrap(), AgentConfig { tau: 1.0, lr: 1e-2, ..cfg }).unwrap();
    copy.set_target(init_network(spec.clone(), 4).unwrap()).unwrap();
    let b = Batch { ids: vec![0, 1], transitions: batch.to_vec(), weights: vec![1.0, 1.0] };
    copy.learn(&b).map_err(|e| e.to_string())?;
    if copy.target() != copy.policy() {
        return Err("tau=1 did not copy the policy".into());
    }

    // (1 - tau)^n contraction against a fixed policy.
    let policy = init_network(spec.clone(), 5).unwrap();
    let start = init_network(spec.clone(), 6).unwrap();
    let mut worst = 0.0f64;
    for (tau, n) in [(0.005f32, 1000), (0.1, 100), (0.5, 30)] {
        let mut target = start.clone();
        for _ in 0..n {
            soft_update(&mut target, &policy, tau);
        }
        let factor = (1.0 - f64::from(tau)).powi(n);
        for ((t, p), t0) in target.params().iter().zip(policy.params()).zip(start.params()) {
            for ((&t, &p), &t0) in t.data().iter().zip(p.data()).zip(t0.data()) {
                let closed = f64::from(p) + factor * (f64::from(t0) - f64::from(p));
                worst = worst.max((f64::from(t) - closed).abs());
            }
        }
    }
    if worst > 1e-6 {
        return Err(format!("soft update deviates from closed form by {worst:.2e}"));
    }
    Ok(format!("terminal y=r, tau=1 exact, contraction max dev {worst:.1e}"))
}

pub fn resize_asymmetry() -> Result<String, String> {
    let net = init_network(QNetworkSpec::with_widths([2, 2, 2], 32, 7), 9).unwrap();
    let (w7, mut b7) = (net.param("head2.w").unwrap().clone(), net.param("head2.b").unwrap().clone());
    for (i, v) in b7.data_mut().iter_mut().enumerate() {
        *v = 0.1 * (i as f32 + 1.0);
    }
    let hidden = 32;
    let (w6, b6) = resize_output_layer(&w7, &b7, 6, 1).map_err(|e| e.to_string())?;
    let (w76, b76) = resize_output_layer(&w6, &b6, 7, 2).map_err(|e| e.to_string())?;
    let shared = 6 * hidden;
    if w76.data()[..shared].iter().zip(&w7.data()[..shared]).any(|(a, b)| a.to_bits() != b.to_bits())
        || b76.data()[..6].iter().zip(&b7.data()[..6]).any(|(a, b)| a.to_bits() != b.to_bits())
    {
        return Err("7->6->7 changed the shared rows".into());
    }
    let bound = init_bound(hidden);
    let row6 = &w76.data()[shared..];
    if row6.iter().any(|v| v.abs() > bound) || b76.data()[6] != 0.0 {
        return Err("row 6 outside the init bound".into());
    }
    if row6 == &w7.data()[shared..] {
        return Err("row 6 was restored rather than re-initialized".into());
    }
    Ok(format!("shared rows bit-exact; fresh row 6 within ±{bound:.4}"))
}
