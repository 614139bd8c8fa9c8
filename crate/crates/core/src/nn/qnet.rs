//! The Q-network: a three-layer convolutional encoder followed by a
//! two-layer linear head.
//!
//! Batched pixel input uses the channel-major layout `[C, B, H, W]`; a
//! single `[C, H, W]` state is the `B = 1` case. Vector input (used by the
//! tabular learning-rule checks) is `[B, len]` and feeds the head directly.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, Real};
use super::layers::ConvLayerSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const STACK_DEPTH: usize = 4;
pub const FRAME_SIZE: usize = 84;
pub const HIDDEN_UNITS: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InputSpec {
    Pixels {
        channels: usize,
        height: usize,
        width: usize,
        conv: Vec<ConvLayerSpec>,
    },
    Vector {
        len: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QNetworkSpec {
    pub input: InputSpec,
    pub hidden: usize,
    pub actions: usize,
}

/// Which block of the network a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    Head,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
    pub is_bias: bool,
    pub group: ParamGroup,
}

impl QNetworkSpec {
    /// 4×84×84 → 32×20×20 → 64×9×9 → 64×7×7 → 3136 → 512 → `actions`.
    pub fn atari(actions: usize) -> Self {
        let spec = Self::with_widths([32, 64, 64], HIDDEN_UNITS, actions);
        assert_eq!(spec.feature_len().ok(), Some(3136));
        spec
    }

    /// The standard kernel/stride stack on a 4×84×84 input with custom
    /// channel and hidden widths.
    pub fn with_widths(widths: [usize; 3], hidden: usize, actions: usize) -> Self {
        Self {
            input: InputSpec::Pixels {
                channels: STACK_DEPTH,
                height: FRAME_SIZE,
                width: FRAME_SIZE,
                conv: vec![
                    ConvLayerSpec::new(STACK_DEPTH, widths[0], 8, 4),
                    ConvLayerSpec::new(widths[0], widths[1], 4, 2),
                    ConvLayerSpec::new(widths[1], widths[2], 3, 1),
                ],
            },
            hidden,
            actions,
        }
    }

    pub fn vector(len: usize, hidden: usize, actions: usize) -> Self {
        Self {
            input: InputSpec::Vector { len },
            hidden,
            actions,
        }
    }

    pub fn is_pixels(&self) -> bool {
        matches!(self.input, InputSpec::Pixels { .. })
    }

    pub fn conv_layers(&self) -> &[ConvLayerSpec] {
        match &self.input {
            InputSpec::Pixels { conv, .. } => conv,
            InputSpec::Vector { .. } => &[],
        }
    }

    /// Input element count per example.
    pub fn input_len(&self) -> usize {
        match &self.input {
            InputSpec::Pixels {
                channels,
                height,
                width,
                ..
            } => channels * height * width,
            InputSpec::Vector { len } => *len,
        }
    }

    pub fn input_shape(&self) -> Vec<usize> {
        match &self.input {
            InputSpec::Pixels {
                channels,
                height,
                width,
                ..
            } => vec![*channels, *height, *width],
            InputSpec::Vector { len } => vec![*len],
        }
    }

    /// `(C, H, W)` after each conv layer; errors if the stack does not fit.
    pub fn conv_output_shapes(&self) -> Result<Vec<(usize, usize, usize)>> {
        let mut shapes = Vec::new();
        if let InputSpec::Pixels {
            channels,
            height,
            width,
            conv,
        } = &self.input
        {
            let (mut c, mut h, mut w) = (*channels, *height, *width);
            for (i, layer) in conv.iter().enumerate() {
                if layer.in_channels != c {
                    return Err(Error::config(format!(
                        "conv{} expects {} input channels but receives {c}",
                        i + 1,
                        layer.in_channels
                    )));
                }
                let (oh, ow) = layer.output_size(h, w).ok_or_else(|| {
                    Error::config(format!("conv{} kernel {} does not fit {h}×{w}", i + 1, layer.kernel))
                })?;
                (c, h, w) = (layer.out_channels, oh, ow);
                shapes.push((c, h, w));
            }
        }
        Ok(shapes)
    }

    /// Feature count entering the head.
    pub fn feature_len(&self) -> Result<usize> {
        match &self.input {
            InputSpec::Pixels { .. } => {
                let shapes = self.conv_output_shapes()?;
                let &(c, h, w) = shapes
                    .last()
                    .ok_or_else(|| Error::config("pixel network needs at least one conv layer"))?;
                Ok(c * h * w)
            }
            InputSpec::Vector { len } => Ok(*len),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.actions < 2 {
            return Err(Error::config(format!("action count must be at least 2, got {}", self.actions)));
        }
        if self.hidden == 0 || self.input_len() == 0 {
            return Err(Error::config("network widths must be positive"));
        }
        if self.conv_layers().iter().any(|c| c.out_channels == 0 || c.in_channels == 0) {
            return Err(Error::config("conv channel counts must be positive"));
        }
        self.feature_len()?;
        if self.is_pixels() && self.conv_layers().len() != 3 {
            return Err(Error::config("the encoder has exactly three conv layers"));
        }
        Ok(())
    }

    /// Canonical parameter list: `conv{1,2,3}.{w,b}` (pixel input only),
    /// then `head1.{w,b}`, `head2.{w,b}`.
    pub fn param_layout(&self) -> Result<Vec<ParamInfo>> {
        let mut out = Vec::new();
        for (i, layer) in self.conv_layers().iter().enumerate() {
            out.push(ParamInfo {
                name: format!("conv{}.w", i + 1),
                shape: layer.weight_shape().to_vec(),
                fan_in: layer.fan_in(),
                is_bias: false,
                group: ParamGroup::Encoder,
            });
            out.push(ParamInfo {
                name: format!("conv{}.b", i + 1),
                shape: vec![layer.out_channels],
                fan_in: layer.fan_in(),
                is_bias: true,
                group: ParamGroup::Encoder,
            });
        }
        let features = self.feature_len()?;
        for (name, inputs, outputs) in [("head1", features, self.hidden), ("head2", self.hidden, self.actions)] {
            out.push(ParamInfo {
                name: format!("{name}.w"),
                shape: vec![outputs, inputs],
                fan_in: inputs,
                is_bias: false,
                group: ParamGroup::Head,
            });
            out.push(ParamInfo {
                name: format!("{name}.b"),
                shape: vec![outputs],
                fan_in: inputs,
                is_bias: true,
                group: ParamGroup::Head,
            });
        }
        Ok(out)
    }
}

/// Activations retained by a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub batch: usize,
    conv_cols: Vec<Vec<T>>,
    conv_out: Vec<Vec<T>>,
    features: Vec<T>,
    hidden: Vec<T>,
    /// Q-values, `[B, actions]`.
    pub q: Vec<T>,
}

/// Forward pass over raw parameter slices in canonical order.
pub fn forward<T: Real>(spec: &QNetworkSpec, params: &[&[T]], input: &[T], batch: usize) -> Trace<T> {
    let shapes = spec.conv_output_shapes().expect("validated spec");
    let mut conv_cols = Vec::with_capacity(shapes.len());
    let mut conv_out: Vec<Vec<T>> = Vec::with_capacity(shapes.len());
    let features_len = spec.feature_len().expect("validated spec");
    let features = match &spec.input {
        InputSpec::Pixels {
            height, width, conv, ..
        } => {
            let (mut h, mut w) = (*height, *width);
            for (i, layer) in conv.iter().enumerate() {
                let g = layer.geometry(batch, h, w);
                let src: &[T] = if i == 0 { input } else { &conv_out[i - 1] };
                let mut cols = vec![T::ZERO; g.patch_len() * g.positions()];
                kernels::im2col(src, &g, &mut cols);
                let mut out = vec![T::ZERO; g.output_len()];
                kernels::conv_forward(&cols, params[2 * i], params[2 * i + 1], &g, &mut out);
                kernels::relu_inplace(&mut out);
                (h, w) = (g.out_height(), g.out_width());
                conv_cols.push(cols);
                conv_out.push(out);
            }
            let &(c, h, w) = shapes.last().unwrap();
            let mut flat = vec![T::ZERO; batch * features_len];
            kernels::flatten_channels(conv_out.last().unwrap(), c, batch, h * w, &mut flat);
            flat
        }
        InputSpec::Vector { .. } => input.to_vec(),
    };
    let head = 2 * spec.conv_layers().len();
    let mut hidden = vec![T::ZERO; batch * spec.hidden];
    kernels::linear_forward(&features, params[head], params[head + 1], batch, features_len, spec.hidden, &mut hidden);
    kernels::relu_inplace(&mut hidden);
    let mut q = vec![T::ZERO; batch * spec.actions];
    kernels::linear_forward(&hidden, params[head + 2], params[head + 3], batch, spec.hidden, spec.actions, &mut q);
    Trace {
        batch,
        conv_cols,
        conv_out,
        features,
        hidden,
        q,
    }
}

/// Backward pass from `grad_q` (`[B, actions]`). Returns one gradient per
/// canonical parameter, `None` where `wanted` is false. Work below the
/// lowest wanted parameter is skipped.
pub fn backward<T: Real>(
    spec: &QNetworkSpec,
    params: &[&[T]],
    trace: &Trace<T>,
    grad_q: &[T],
    wanted: &[bool],
) -> Vec<Option<Vec<T>>> {
    let batch = trace.batch;
    let n_conv = spec.conv_layers().len();
    let head = 2 * n_conv;
    let features_len = trace.features.len() / batch;
    let mut grads: Vec<Option<Vec<T>>> = vec![None; params.len()];
    let lowest_wanted = wanted.iter().position(|&w| w).unwrap_or(params.len());
    if lowest_wanted == params.len() {
        return grads;
    }

    // head2
    let mut gw = vec![T::ZERO; spec.actions * spec.hidden];
    let mut gb = vec![T::ZERO; spec.actions];
    let need_below_head2 = lowest_wanted < head + 2;
    let mut g_hidden = vec![T::ZERO; if need_below_head2 { batch * spec.hidden } else { 0 }];
    kernels::linear_backward(
        grad_q,
        &trace.hidden,
        params[head + 2],
        batch,
        spec.hidden,
        spec.actions,
        &mut gw,
        &mut gb,
        need_below_head2.then_some(&mut g_hidden[..]),
    );
    grads[head + 2] = Some(gw);
    grads[head + 3] = Some(gb);
    if !need_below_head2 {
        return finish(grads, wanted);
    }

    // head1
    kernels::relu_backward_inplace(&mut g_hidden, &trace.hidden);
    let mut gw = vec![T::ZERO; spec.hidden * features_len];
    let mut gb = vec![T::ZERO; spec.hidden];
    let need_features = lowest_wanted < head;
    let mut g_features = vec![T::ZERO; if need_features { batch * features_len } else { 0 }];
    kernels::linear_backward(
        &g_hidden,
        &trace.features,
        params[head],
        batch,
        features_len,
        spec.hidden,
        &mut gw,
        &mut gb,
        need_features.then_some(&mut g_features[..]),
    );
    grads[head] = Some(gw);
    grads[head + 1] = Some(gb);
    if !need_features {
        return finish(grads, wanted);
    }

    // encoder, top down
    let InputSpec::Pixels {
        height, width, conv, ..
    } = &spec.input
    else {
        return finish(grads, wanted);
    };
    let shapes = spec.conv_output_shapes().expect("validated spec");
    let &(c, h, w) = shapes.last().unwrap();
    let mut g_out = vec![T::ZERO; g_features.len()];
    kernels::unflatten_channels(&g_features, c, batch, h * w, &mut g_out);
    for i in (0..n_conv).rev() {
        let layer = conv[i];
        let (ih, iw) = if i == 0 {
            (*height, *width)
        } else {
            (shapes[i - 1].1, shapes[i - 1].2)
        };
        let g = layer.geometry(batch, ih, iw);
        kernels::relu_backward_inplace(&mut g_out, &trace.conv_out[i]);
        let mut gw = vec![T::ZERO; layer.out_channels * g.patch_len()];
        let mut gb = vec![T::ZERO; layer.out_channels];
        let need_input = lowest_wanted < 2 * i;
        let mut g_cols = vec![T::ZERO; if need_input { g.patch_len() * g.positions() } else { 0 }];
        kernels::conv_backward(
            &g_out,
            &trace.conv_cols[i],
            params[2 * i],
            &g,
            &mut gw,
            &mut gb,
            need_input.then_some(&mut g_cols[..]),
        );
        grads[2 * i] = Some(gw);
        grads[2 * i + 1] = Some(gb);
        if !need_input {
            break;
        }
        let mut g_in = vec![T::ZERO; g.input_len()];
        kernels::col2im(&g_cols, &g, &mut g_in);
        g_out = g_in;
    }
    finish(grads, wanted)
}

fn finish<T>(mut grads: Vec<Option<Vec<T>>>, wanted: &[bool]) -> Vec<Option<Vec<T>>> {
    for (g, &w) in grads.iter_mut().zip(wanted) {
        if !w {
            *g = None;
        }
    }
    grads
}

/// Per-parameter gradients aligned with [`QNetwork::params`]; `None` for
/// frozen parameters.
pub type Gradients = Vec<Option<Tensor>>;

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    spec: QNetworkSpec,
    params: Vec<Tensor>,
    frozen: Vec<bool>,
}

impl QNetwork {
    pub fn zeros(spec: QNetworkSpec) -> Result<Self> {
        spec.validate()?;
        let params = spec.param_layout()?.iter().map(|p| Tensor::zeros(&p.shape)).collect::<Vec<_>>();
        let frozen = vec![false; params.len()];
        Ok(Self { spec, params, frozen })
    }

    /// Assembles a network from explicit parameters in canonical order.
    pub fn from_params(spec: QNetworkSpec, params: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        let layout = spec.param_layout()?;
        if layout.len() != params.len() {
            return Err(Error::shape("QNetwork::from_params", &[layout.len()], &[params.len()]));
        }
        for (info, p) in layout.iter().zip(&params) {
            if p.shape() != info.shape.as_slice() {
                return Err(Error::config(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    info.name,
                    p.shape(),
                    info.shape
                )));
            }
        }
        let frozen = vec![false; params.len()];
        Ok(Self { spec, params, frozen })
    }

    pub fn spec(&self) -> &QNetworkSpec {
        &self.spec
    }

    pub fn actions(&self) -> usize {
        self.spec.actions
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> Vec<String> {
        self.spec
            .param_layout()
            .expect("validated spec")
            .into_iter()
            .map(|p| p.name)
            .collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.param_names().iter().position(|n| n == name)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.params[i])
    }

    pub fn frozen(&self) -> &[bool] {
        &self.frozen
    }

    pub fn set_frozen(&mut self, mask: &[bool]) -> Result<()> {
        if mask.len() != self.params.len() {
            return Err(Error::shape("freeze mask", &[self.params.len()], &[mask.len()]));
        }
        self.frozen.copy_from_slice(mask);
        Ok(())
    }

    /// Freezes every encoder parameter, leaving the head trainable.
    pub fn freeze_encoder(&mut self) {
        let layout = self.spec.param_layout().expect("validated spec");
        for (f, info) in self.frozen.iter_mut().zip(layout) {
            *f = info.group == ParamGroup::Encoder;
        }
    }

    fn param_slices(&self) -> Vec<&[f32]> {
        self.params.iter().map(|p| p.data()).collect()
    }

    /// Q-values for a single state.
    pub fn forward(&self, state: &Tensor) -> Result<Tensor> {
        state.expect_shape("qnet_forward input", &self.spec.input_shape())?;
        let q = self.forward_batch(state.data(), 1)?;
        Ok(Tensor::from_vec(q))
    }

    /// Q-values `[B, actions]` for a batch in network input layout.
    pub fn forward_batch(&self, input: &[f32], batch: usize) -> Result<Vec<f32>> {
        Ok(self.forward_traced(input, batch)?.q)
    }

    pub fn forward_traced(&self, input: &[f32], batch: usize) -> Result<Trace<f32>> {
        if batch == 0 || input.len() != batch * self.spec.input_len() {
            return Err(Error::shape(
                "qnet_forward input",
                &[batch, self.spec.input_len()],
                &[input.len()],
            ));
        }
        let trace = forward(&self.spec, &self.param_slices(), input, batch);
        if trace.q.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("qnet_forward"));
        }
        Ok(trace)
    }

    /// Gradients for every trainable parameter given `dLoss/dQ`.
    pub fn backward(&self, trace: &Trace<f32>, grad_q: &[f32]) -> Result<Gradients> {
        if grad_q.len() != trace.batch * self.spec.actions {
            return Err(Error::shape(
                "qnet backward grad_q",
                &[trace.batch, self.spec.actions],
                &[grad_q.len()],
            ));
        }
        let wanted: Vec<bool> = self.frozen.iter().map(|f| !f).collect();
        let raw = backward(&self.spec, &self.param_slices(), trace, grad_q, &wanted);
        raw.into_iter()
            .zip(&self.params)
            .map(|(g, p)| {
                g.map(|g| {
                    let t = Tensor::new(p.shape(), g)?;
                    t.check_finite("qnet backward")?;
                    Ok(t)
                })
                .transpose()
            })
            .collect()
    }
}

/// Weights uniform in `±1/√fan_in`, biases zero, fully determined by `seed`.
pub fn init_network(spec: QNetworkSpec, seed: u64) -> Result<QNetwork> {
    let mut net = QNetwork::zeros(spec)?;
    let layout = net.spec.param_layout()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (info, p) in layout.iter().zip(net.params.iter_mut()) {
        if !info.is_bias {
            fill_uniform(p.data_mut(), info.fan_in, &mut rng);
        }
    }
    Ok(net)
}

pub(crate) fn fill_uniform(data: &mut [f32], fan_in: usize, rng: &mut ChaCha8Rng) {
    let bound = init_bound(fan_in);
    let dist = Uniform::new_inclusive(-bound, bound);
    for v in data {
        *v = dist.sample(rng);
    }
}

pub fn init_bound(fan_in: usize) -> f32 {
    1.0 / (fan_in as f32).sqrt()
}
