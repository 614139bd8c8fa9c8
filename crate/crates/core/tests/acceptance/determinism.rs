//! Reproducible runs, checkpoint round trips and the moving-average
//! convention.

use std::fs;
use std::path::Path;
use std::process::Command;

use qtransfer::metrics::{moving_average, RunLog};
use qtransfer::nn::{init_network, QNetworkSpec};
use qtransfer::transfer::{load_checkpoint, save_checkpoint, CheckpointMeta};

fn train(out: &Path, workers: usize) -> Result<(), String> {
    let workers = format!("workers={workers}");
    let sets = [
        "env=shooter6",
        "episodes=6",
        "seed=21",
        "max_episode_steps=80",
        "batch_size=8",
        "warmup_transitions=32",
        "train_every=2",
        "checkpoint_every=3",
        "buffer=prioritized",
        &workers,
    ];
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qtransfer"));
    cmd.arg("train").arg("--out").arg(out).env("QT_DETERMINISTIC", "1");
    for s in sets {
        cmd.arg("--set").arg(s);
    }
    let o = cmd.output().map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(String::from_utf8_lossy(&o.stderr).into_owned());
    }
    Ok(())
}

fn reward_column(out: &Path) -> Result<Vec<u32>, String> {
    Ok(RunLog::read_records(&out.join("train.ndjson"))
        .map_err(|e| e.to_string())?
        .iter()
        .map(|r| r.reward.to_bits())
        .collect())
}

fn checkpoints(out: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "dqnc"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn runs_repeat() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    for workers in [1, 3] {
        let a = dir.path().join(format!("a{workers}"));
        let b = dir.path().join(format!("b{workers}"));
        train(&a, workers)?;
        train(&b, workers)?;
        let (ra, rb) = (reward_column(&a)?, reward_column(&b)?);
        if ra.len() != 6 || ra != rb {
            return Err(format!("workers={workers}: reward columns differ"));
        }
        let (ca, cb) = (checkpoints(&a), checkpoints(&b));
        if ca.len() != 2 || ca != cb {
            return Err(format!("workers={workers}: checkpoint files differ"));
        }
        parts.push(format!("workers={workers} identical"));
    }
    Ok(parts.join(", "))
}

fn round_trip() -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let net = init_network(QNetworkSpec::atari(7), 31).unwrap();
    let meta = CheckpointMeta { env_name: "shooter7".into(), action_count: 7, global_step: 12345, config_hash: 0xfeed };
    let path = dir.path().join("net.dqnc");
    save_checkpoint(&net, &path, &meta).map_err(|e| e.to_string())?;
    let ckpt = load_checkpoint(&path).map_err(|e| e.to_string())?;
    let back = ckpt.to_network().map_err(|e| e.to_string())?;
    let exact = net.params().iter().zip(back.params()).all(|(a, b)| a.bit_eq(b));
    if !exact || ckpt.meta != meta || ckpt.to_bytes() != fs::read(&path).unwrap() {
        return Err("checkpoint round trip is not bit-exact".into());
    }
    Ok(())
}

/// Direct trailing-window mean with zeros before the window fills.
fn oracle(values: &[f64]) -> Vec<f64> {
    (0..values.len())
        .map(|i| if i < 99 { 0.0 } else { values[i - 99..=i].iter().sum::<f64>() / 100.0 })
        .collect()
}

fn moving_average_convention() -> Result<(), String> {
    let constant = vec![5.0; 100];
    let ma = moving_average(&constant, 100);
    if ma[99] != 5.0 || ma[..99].iter().any(|&v| v != 0.0) {
        return Err("constant series".into());
    }
    if moving_average(&[3.0; 99], 100).iter().any(|&v| v != 0.0) {
        return Err("99 values should all be zero".into());
    }
    let series: Vec<f64> = (1..=200).map(f64::from).collect();
    let ma = moving_average(&series, 100);
    if (ma[199] - 150.5).abs() > 1e-9 {
        return Err(format!("arithmetic series: {} != 150.5", ma[199]));
    }
    if ma.iter().zip(oracle(&series)).any(|(a, b)| (a - b).abs() > 1e-9) {
        return Err("arithmetic series disagrees with the direct window mean".into());
    }
    Ok(())
}

pub fn run() -> Result<String, String> {
    let runs = runs_repeat()?;
    round_trip()?;
    moving_average_convention()?;
    Ok(format!("{runs}; round trip bit-exact; moving average oracles match"))
}
