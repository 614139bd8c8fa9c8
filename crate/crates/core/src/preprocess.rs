//! Observation pipeline: grayscale, area resize, frame skip, four-frame
//! stacking and optional frame differencing.
//!
//! Processed frames are kept as 8-bit quantized planes (value / 255) behind
//! `Arc`s, so consecutive stacks and replay transitions share storage.

use std::collections::VecDeque;
use std::sync::{Arc, OnceLock};

use crate::envs::{Env, RgbFrame, FRAME_HEIGHT, FRAME_WIDTH};
use crate::error::{Error, Result};
use crate::nn::qnet::STACK_DEPTH;
use crate::tensor::Tensor;

pub const PLANE_LEN: usize = FRAME_WIDTH * FRAME_HEIGHT;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreprocessConfig {
    pub frame_skip: u32,
    pub difference_frames: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            frame_skip: 4,
            difference_frames: false,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_skip == 0 {
            return Err(Error::config("frame_skip must be at least 1"));
        }
        Ok(())
    }
}

/// Luma `(0.299 R + 0.587 G + 0.114 B) / 255` for every pixel of an
/// interleaved RGB buffer.
pub fn grayscale(rgb: &[u8]) -> Vec<f32> {
    assert!(rgb.len().is_multiple_of(3), "RGB buffer length must be a multiple of 3");
    rgb.chunks_exact(3)
        .map(|p| {
            let weighted = 299 * u32::from(p[0]) + 587 * u32::from(p[1]) + 114 * u32::from(p[2]);
            (f64::from(weighted) / 255_000.0) as f32
        })
        .collect()
}

/// Area-average resampling of an `height × width` plane. Each output pixel
/// is the coverage-weighted mean of the source pixels under its box.
pub fn resize(gray: &[f32], height: usize, width: usize, target_h: usize, target_w: usize) -> Vec<f32> {
    assert!(height >= 1 && width >= 1 && gray.len() == height * width, "bad source plane");
    if (height, width) == (target_h, target_w) {
        return gray.to_vec();
    }
    let rows = box_weights(height, target_h);
    let cols = box_weights(width, target_w);
    let mut out = Vec::with_capacity(target_h * target_w);
    for row in &rows {
        for col in &cols {
            let mut acc = 0.0f64;
            let mut area = 0.0f64;
            for &(sy, wy) in row {
                let line = &gray[sy * width..][..width];
                for &(sx, wx) in col {
                    acc += wy * wx * f64::from(line[sx]);
                    area += wy * wx;
                }
            }
            out.push((acc / area) as f32);
        }
    }
    out
}

/// For each output cell, the (source index, overlap length) pairs of its box.
fn box_weights(source: usize, target: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = source as f64 / target as f64;
    (0..target)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(source);
            (first..last)
                .filter_map(|s| {
                    let overlap = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                    (overlap > 0.0).then_some((s, overlap))
                })
                .collect()
        })
        .collect()
}

/// Grayscale, resize to 84×84 if needed, and quantize.
pub fn process_frame(frame: &RgbFrame) -> Plane {
    let gray = grayscale(frame.as_bytes());
    let gray = resize(&gray, FRAME_HEIGHT, FRAME_WIDTH, FRAME_HEIGHT, FRAME_WIDTH);
    quantize(&gray)
}

#[derive(Debug, Clone)]
pub struct SkipResult {
    pub frame: RgbFrame,
    pub reward: f32,
    pub done: bool,
    /// Environment ticks actually taken (≤ k).
    pub ticks: u32,
}

/// Repeats `action` for `k` ticks or until the episode ends, summing rewards
/// and returning the last frame.
pub fn skip_step(env: &mut Env, action: usize, k: u32) -> Result<SkipResult> {
    if k == 0 {
        return Err(Error::config("frame skip must be at least 1"));
    }
    let mut reward = 0.0;
    let mut ticks = 0;
    loop {
        let step = env.step(action)?;
        reward += step.reward;
        ticks += 1;
        if step.done || ticks == k {
            return Ok(SkipResult {
                frame: step.frame,
                reward,
                done: step.done,
                ticks,
            });
        }
    }
}

/// One quantized plane; element value is `byte / 255`.
pub type Plane = Arc<[u8]>;

pub fn quantize(values: &[f32]) -> Plane {
    values
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect::<Vec<_>>()
        .into()
}

pub(crate) fn dequant_table() -> &'static [f32; 256] {
    static TABLE: OnceLock<[f32; 256]> = OnceLock::new();
    TABLE.get_or_init(|| std::array::from_fn(|i| i as f32 / 255.0))
}

pub fn dequantize_into(plane: &[u8], out: &mut [f32]) {
    let table = dequant_table();
    for (o, &b) in out.iter_mut().zip(plane) {
        *o = table[b as usize];
    }
}

/// A network input: one or more equally sized quantized planes, oldest
/// first. Pixel states carry four 84×84 planes; vector states carry one.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Observation {
    planes: Vec<Plane>,
}

impl Observation {
    pub fn from_planes(planes: Vec<Plane>) -> Self {
        assert!(!planes.is_empty(), "observation needs at least one plane");
        assert!(planes.iter().all(|p| p.len() == planes[0].len()), "plane lengths differ");
        Self { planes }
    }

    /// Single-plane observation from values in `[0, 1]`.
    pub fn from_values(values: &[f32]) -> Self {
        Self::from_planes(vec![quantize(values)])
    }

    pub fn planes(&self) -> &[Plane] {
        &self.planes
    }

    pub fn plane_len(&self) -> usize {
        self.planes[0].len()
    }

    pub fn len(&self) -> usize {
        self.planes.len() * self.plane_len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Dequantized `[planes, 84, 84]` tensor (or `[plane_len]` for vectors).
    pub fn to_tensor(&self) -> Tensor {
        let mut data = vec![0.0; self.len()];
        for (plane, out) in self.planes.iter().zip(data.chunks_exact_mut(self.plane_len())) {
            dequantize_into(plane, out);
        }
        let shape = if self.plane_len() == PLANE_LEN {
            vec![self.planes.len(), FRAME_HEIGHT, FRAME_WIDTH]
        } else {
            vec![self.len()]
        };
        Tensor::new(&shape, data).expect("consistent observation shape")
    }
}

/// The four most recent processed frames.
#[derive(Debug, Clone)]
pub struct FrameStack {
    planes: VecDeque<Plane>,
}

impl FrameStack {
    /// A stack holding `STACK_DEPTH` copies of the first frame.
    pub fn new(first: Plane) -> Self {
        Self {
            planes: std::iter::repeat_n(first, STACK_DEPTH).collect(),
        }
    }

    pub fn reset(&mut self, first: Plane) {
        self.planes.clear();
        self.planes.extend(std::iter::repeat_n(first, STACK_DEPTH));
    }

    /// Drops the oldest plane and appends `frame`.
    pub fn push(&mut self, frame: Plane) {
        self.planes.pop_front();
        self.planes.push_back(frame);
    }

    pub fn observation(&self) -> Observation {
        Observation::from_planes(self.planes.iter().cloned().collect())
    }
}

/// Planewise differencing of a `[4, 84, 84]` stack: plane 0 is kept raw and
/// plane `i > 0` becomes `frame_i − frame_{i−1}`, so values lie in `[−1, 1]`.
pub fn difference(stack: &Tensor) -> Result<Tensor> {
    stack.expect_shape("difference", &[STACK_DEPTH, FRAME_HEIGHT, FRAME_WIDTH])?;
    let mut out = stack.clone();
    difference_in_place(out.data_mut(), PLANE_LEN);
    Ok(out)
}

pub(crate) fn difference_in_place(planes: &mut [f32], plane_len: usize) {
    let n = planes.len() / plane_len;
    for i in (1..n).rev() {
        let (prev, cur) = planes.split_at_mut(i * plane_len);
        let prev = &prev[(i - 1) * plane_len..];
        for (c, &p) in cur[..plane_len].iter_mut().zip(prev) {
            *c -= p;
        }
    }
}

/// Per-environment pipeline state.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    config: PreprocessConfig,
    stack: Option<FrameStack>,
}

impl Preprocessor {
    pub fn new(config: PreprocessConfig) -> Self {
        Self { config, stack: None }
    }

    pub fn config(&self) -> &PreprocessConfig {
        &self.config
    }

    pub fn reset(&mut self, frame: &RgbFrame) -> Observation {
        let stack = FrameStack::new(process_frame(frame));
        let obs = stack.observation();
        self.stack = Some(stack);
        obs
    }

    pub fn push(&mut self, frame: &RgbFrame) -> Observation {
        let stack = self.stack.as_mut().expect("Preprocessor::push before reset");
        stack.push(process_frame(frame));
        stack.observation()
    }

    /// The network's view of `obs`: differenced when enabled, raw otherwise.
    pub fn state_tensor(&self, obs: &Observation) -> Tensor {
        let mut t = obs.to_tensor();
        if self.config.difference_frames {
            difference_in_place(t.data_mut(), obs.plane_len());
        }
        t
    }
}
