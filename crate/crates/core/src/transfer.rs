//! Checkpoints and the transfer regimes built on them.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! b"DQNC" | version u32 | entry count u32
//! per entry: name len u32 | name utf-8 | ndim u32 | dims u32 × ndim | f32 × Π dims
//! env name len u32 | env name utf-8 | action_count u32 | global_step u64 | config_hash u64
//! ```

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::agent::{AgentConfig, DqnAgent};
use crate::error::{Error, Result};
use crate::nn::qnet::fill_uniform;
use crate::nn::{init_network, InputSpec, ParamGroup, QNetwork, QNetworkSpec};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DQNC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub env_name: String,
    pub action_count: u32,
    pub global_step: u64,
    pub config_hash: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn from_network(net: &QNetwork, meta: CheckpointMeta) -> Self {
        Self {
            tensors: net.param_names().into_iter().zip(net.params().iter().cloned()).collect(),
            meta,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// The network spec implied by the stored shapes.
    pub fn spec(&self) -> Result<QNetworkSpec> {
        let dims = |name: &str| {
            self.tensor(name)
                .map(|t| t.shape().to_vec())
                .ok_or_else(|| Error::config(format!("checkpoint lacks {name}")))
        };
        let head1 = dims("head1.w")?;
        let head2 = dims("head2.w")?;
        if head1.len() != 2 || head2.len() != 2 {
            return Err(Error::config("checkpoint head weights must be matrices"));
        }
        let spec = if self.tensor("conv1.w").is_some() {
            let widths = [dims("conv1.w")?[0], dims("conv2.w")?[0], dims("conv3.w")?[0]];
            QNetworkSpec::with_widths(widths, head1[0], head2[0])
        } else {
            QNetworkSpec::vector(head1[1], head1[0], head2[0])
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Rebuilds the stored network; every name must be canonical and every
    /// shape must match.
    pub fn to_network(&self) -> Result<QNetwork> {
        let spec = self.spec()?;
        let layout = spec.param_layout()?;
        if layout.len() != self.tensors.len() {
            return Err(Error::config(format!(
                "checkpoint has {} tensors, the network needs {}",
                self.tensors.len(),
                layout.len()
            )));
        }
        let mut params = Vec::with_capacity(layout.len());
        for (info, (name, t)) in layout.iter().zip(&self.tensors) {
            if &info.name != name {
                return Err(Error::config(format!("checkpoint entry {name:?} where {:?} was expected", info.name)));
            }
            params.push(t.clone());
        }
        QNetwork::from_params(spec, params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_u32(&mut out, self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            put_u32(&mut out, t.shape().len() as u32);
            for &d in t.shape() {
                put_u32(&mut out, d as u32);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        put_str(&mut out, &self.meta.env_name);
        put_u32(&mut out, self.meta.action_count);
        out.extend_from_slice(&self.meta.global_step.to_le_bytes());
        out.extend_from_slice(&self.meta.config_hash.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(r.error_at(0, "bad magic, expected DQNC"));
        }
        let version_at = r.pos;
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(r.error_at(version_at, format!("unsupported version {version}")));
        }
        let count = r.u32("entry count")?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name = r.string("entry name")?;
            let ndim = r.u32("ndim")? as usize;
            if ndim > 8 {
                return Err(r.error_at(r.pos - 4, format!("implausible rank {ndim} for {name}")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32("dimension")? as usize);
            }
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let Some(bytes) = len.and_then(|n| n.checked_mul(4)) else {
                return Err(r.error_at(r.pos, format!("shape {shape:?} of {name} overflows")));
            };
            let raw = r.take(bytes, "tensor data")?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            let tensor = Tensor::new(&shape, data).map_err(|e| r.error_at(r.pos, e.to_string()))?;
            tensors.push((name, tensor));
        }
        let meta = CheckpointMeta {
            env_name: r.string("env name")?,
            action_count: r.u32("action count")?,
            global_step: r.u64("global step")?,
            config_hash: r.u64("config hash")?,
        };
        if r.pos != bytes.len() {
            return Err(r.error_at(r.pos, "trailing bytes after metadata"));
        }
        Ok(Self { tensors, meta })
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error_at(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::Checkpoint {
            offset: offset as u64,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error_at(
                self.pos,
                format!("truncated while reading {what} ({n} bytes needed, {} left)", self.bytes.len() - self.pos),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let at = self.pos;
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.error_at(at, format!("{what} is not valid UTF-8")))
    }
}

pub fn save_checkpoint(net: &QNetwork, path: &Path, meta: &CheckpointMeta) -> Result<()> {
    let bytes = Checkpoint::from_network(net, meta.clone()).to_bytes();
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

/// SHA-256 over a tensor's shape and little-endian data.
pub fn tensor_digest(t: &Tensor) -> [u8; 32] {
    let mut h = Sha256::new();
    for &d in t.shape() {
        h.update((d as u64).to_le_bytes());
    }
    for v in t.data() {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

/// First 8 bytes of SHA-256, little-endian.
pub fn hash64(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Copies rows `0..min(A_old, A_new)` of the output layer, draws extra rows
/// uniformly in `±1/√hidden` with zero bias, and drops surplus rows.
pub fn resize_output_layer(weights: &Tensor, bias: &Tensor, actions: usize, seed: u64) -> Result<(Tensor, Tensor)> {
    let &[old, hidden] = weights.shape() else {
        return Err(Error::shape("resize_output_layer weights", &[0, 0], weights.shape()));
    };
    bias.expect_shape("resize_output_layer bias", &[old])?;
    if old < 2 || actions < 2 {
        return Err(Error::config(format!("action counts must be at least 2 (got {old} -> {actions})")));
    }
    let keep = old.min(actions);
    let mut w = weights.data()[..keep * hidden].to_vec();
    let mut b = bias.data()[..keep].to_vec();
    if actions > keep {
        let mut fresh = vec![0.0; (actions - keep) * hidden];
        fill_uniform(&mut fresh, hidden, &mut ChaCha8Rng::seed_from_u64(seed));
        w.extend_from_slice(&fresh);
        b.resize(actions, 0.0);
    }
    Ok((Tensor::new(&[actions, hidden], w)?, Tensor::new(&[actions], b)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransferMode {
    WithinFrozenNewHead,
    CrossFrozenHeadInit,
    CrossFrozenHeadScratch,
    EndToEnd,
}

/// Where a parameter of a transferred network came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Checkpoint,
    /// Checkpoint rows, resized to the new action count.
    Resized,
    Fresh,
}

impl TransferMode {
    pub const ALL: [TransferMode; 4] = [
        TransferMode::WithinFrozenNewHead,
        TransferMode::CrossFrozenHeadInit,
        TransferMode::CrossFrozenHeadScratch,
        TransferMode::EndToEnd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransferMode::WithinFrozenNewHead => "WITHIN_FROZEN_NEW_HEAD",
            TransferMode::CrossFrozenHeadInit => "CROSS_FROZEN_HEAD_INIT",
            TransferMode::CrossFrozenHeadScratch => "CROSS_FROZEN_HEAD_SCRATCH",
            TransferMode::EndToEnd => "END_TO_END",
        }
    }

    pub fn freezes_encoder(self) -> bool {
        self != TransferMode::EndToEnd
    }

    /// Init source per parameter group: (encoder, head1, head2).
    pub fn provenance(self) -> (Provenance, Provenance, Provenance) {
        use Provenance::*;
        match self {
            TransferMode::WithinFrozenNewHead => (Checkpoint, Fresh, Fresh),
            TransferMode::CrossFrozenHeadInit => (Checkpoint, Checkpoint, Resized),
            TransferMode::CrossFrozenHeadScratch => (Checkpoint, Fresh, Fresh),
            TransferMode::EndToEnd => (Checkpoint, Checkpoint, Resized),
        }
    }
}

impl fmt::Display for TransferMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransferMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TransferMode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown transfer mode {s:?}")))
    }
}

/// Assembles a policy network for `target` from `checkpoint` following
/// `mode`. Fresh parameters come from `init_network(target, seed)`; rows
/// added by resizing are drawn from `seed` as well.
pub fn transfer_network(checkpoint: &Checkpoint, target: &QNetworkSpec, mode: TransferMode, seed: u64) -> Result<QNetwork> {
    let source = checkpoint.to_network()?;
    let src_spec = source.spec();
    let same_body = match (&src_spec.input, &target.input) {
        (InputSpec::Pixels { conv: a, .. }, InputSpec::Pixels { conv: b, .. }) => a == b,
        (a, b) => a == b,
    };
    if !same_body || src_spec.hidden != target.hidden {
        return Err(Error::config(format!(
            "checkpoint encoder/hidden sizes do not match the target network ({:?}/{} vs {:?}/{})",
            src_spec.conv_layers().iter().map(|c| c.out_channels).collect::<Vec<_>>(),
            src_spec.hidden,
            target.conv_layers().iter().map(|c| c.out_channels).collect::<Vec<_>>(),
            target.hidden
        )));
    }
    if mode == TransferMode::WithinFrozenNewHead && src_spec.actions != target.actions {
        return Err(Error::config(format!(
            "{mode} needs matching action counts, checkpoint has {} and target {}",
            src_spec.actions, target.actions
        )));
    }
    let mut net = init_network(target.clone(), seed)?;
    let (_, head1, head2) = mode.provenance();
    let layout = target.param_layout()?;
    for (i, info) in layout.iter().enumerate() {
        let from_ckpt = match (info.group, info.name.starts_with("head1")) {
            (ParamGroup::Encoder, _) => true,
            (ParamGroup::Head, true) => head1 == Provenance::Checkpoint,
            (ParamGroup::Head, false) => false,
        };
        if from_ckpt {
            net.params_mut()[i] = source.params()[i].clone();
        }
    }
    if head2 == Provenance::Resized {
        let wi = net.index_of("head2.w").expect("canonical name");
        let (w, b) = resize_output_layer(&source.params()[wi], &source.params()[wi + 1], target.actions, seed)?;
        net.params_mut()[wi] = w;
        net.params_mut()[wi + 1] = b;
    }
    if mode.freezes_encoder() {
        net.freeze_encoder();
    }
    Ok(net)
}

/// [`transfer_network`] wrapped in an agent; the target network starts as a
/// copy of the assembled policy and the optimizer starts fresh.
pub fn build_transfer_agent(
    checkpoint: &Checkpoint,
    target: &QNetworkSpec,
    mode: TransferMode,
    seed: u64,
    config: AgentConfig,
) -> Result<DqnAgent> {
    DqnAgent::new(transfer_network(checkpoint, target, mode, seed)?, config)
}
