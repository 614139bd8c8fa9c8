//! Single-example layer operations on [`Tensor`]s.

use super::kernels::{self, ConvGeometry};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvLayerSpec {
    pub const fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: 0,
        }
    }

    /// Output spatial size for an `height × width` input, or `None` when
    /// the kernel does not fit.
    pub fn output_size(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        if self.kernel == 0 || self.stride == 0 {
            return None;
        }
        let h = height + 2 * self.padding;
        let w = width + 2 * self.padding;
        if h < self.kernel || w < self.kernel {
            return None;
        }
        Some(((h - self.kernel) / self.stride + 1, (w - self.kernel) / self.stride + 1))
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub(crate) fn geometry(&self, batch: usize, height: usize, width: usize) -> ConvGeometry {
        ConvGeometry {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            batch,
            height,
            width,
        }
    }

    fn check_params(&self, weights: &Tensor, bias: &Tensor) -> Result<()> {
        weights.expect_shape("conv2d weights", &self.weight_shape())?;
        bias.expect_shape("conv2d bias", &[self.out_channels])
    }

    fn check_input(&self, input: &Tensor) -> Result<(usize, usize)> {
        let shape = input.shape();
        if shape.len() != 3 || shape[0] != self.in_channels {
            return Err(Error::shape("conv2d input", &[self.in_channels, 0, 0], shape));
        }
        self.output_size(shape[1], shape[2]).ok_or_else(|| {
            Error::config(format!(
                "conv2d input {shape:?} too small for kernel {} (padding {})",
                self.kernel, self.padding
            ))
        })
    }
}

pub fn conv2d_forward(input: &Tensor, spec: &ConvLayerSpec, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    spec.check_params(weights, bias)?;
    let (oh, ow) = spec.check_input(input)?;
    let g = spec.geometry(1, input.shape()[1], input.shape()[2]);
    let mut cols = vec![0.0; g.patch_len() * g.positions()];
    kernels::im2col(input.data(), &g, &mut cols);
    let mut out = vec![0.0; g.output_len()];
    kernels::conv_forward(&cols, weights.data(), bias.data(), &g, &mut out);
    let out = Tensor::new(&[spec.out_channels, oh, ow], out)?;
    out.check_finite("conv2d_forward")?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    grad_out: &Tensor,
    cached_input: &Tensor,
    spec: &ConvLayerSpec,
    weights: &Tensor,
) -> Result<ConvGrads> {
    weights.expect_shape("conv2d weights", &spec.weight_shape())?;
    let (oh, ow) = spec.check_input(cached_input)?;
    grad_out.expect_shape("conv2d grad_out", &[spec.out_channels, oh, ow])?;
    let g = spec.geometry(1, cached_input.shape()[1], cached_input.shape()[2]);
    let mut cols = vec![0.0; g.patch_len() * g.positions()];
    kernels::im2col(cached_input.data(), &g, &mut cols);
    let mut grad_w = vec![0.0; weights.len()];
    let mut grad_b = vec![0.0; spec.out_channels];
    let mut grad_cols = vec![0.0; cols.len()];
    kernels::conv_backward(grad_out.data(), &cols, weights.data(), &g, &mut grad_w, &mut grad_b, Some(&mut grad_cols));
    let mut grad_in = vec![0.0; cached_input.len()];
    kernels::col2im(&grad_cols, &g, &mut grad_in);
    let grads = ConvGrads {
        input: Tensor::new(cached_input.shape(), grad_in)?,
        weights: Tensor::new(weights.shape(), grad_w)?,
        bias: Tensor::new(&[spec.out_channels], grad_b)?,
    };
    for t in [&grads.input, &grads.weights, &grads.bias] {
        t.check_finite("conv2d_backward")?;
    }
    Ok(grads)
}

/// Splits `x` into (batch, features), accepting `[in]` or `[B, in]`.
fn linear_dims(x: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize)> {
    let ws = weights.shape();
    if ws.len() != 2 {
        return Err(Error::shape("linear weights", &[0, 0], ws));
    }
    let (outputs, inputs) = (ws[0], ws[1]);
    bias.expect_shape("linear bias", &[outputs])?;
    let batch = match x.shape() {
        [n] if *n == inputs => 1,
        [b, n] if *n == inputs => *b,
        other => return Err(Error::shape("linear input", &[inputs], other)),
    };
    Ok((batch, inputs, outputs))
}

fn output_shape(x: &Tensor, outputs: usize) -> Vec<usize> {
    match x.shape() {
        [_] => vec![outputs],
        [b, _] => vec![*b, outputs],
        _ => unreachable!(),
    }
}

pub fn linear_forward(x: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (batch, inputs, outputs) = linear_dims(x, weights, bias)?;
    let mut y = vec![0.0; batch * outputs];
    kernels::linear_forward(x.data(), weights.data(), bias.data(), batch, inputs, outputs, &mut y);
    let y = Tensor::new(&output_shape(x, outputs), y)?;
    y.check_finite("linear_forward")?;
    Ok(y)
}

#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn linear_backward(grad_out: &Tensor, x: &Tensor, weights: &Tensor) -> Result<LinearGrads> {
    let outputs = weights.shape().first().copied().unwrap_or(0);
    let bias = Tensor::zeros(&[outputs.max(1)]);
    let (batch, inputs, outputs) = linear_dims(x, weights, &bias)?;
    grad_out.expect_shape("linear grad_out", &output_shape(x, outputs))?;
    let mut gw = vec![0.0; outputs * inputs];
    let mut gb = vec![0.0; outputs];
    let mut gx = vec![0.0; batch * inputs];
    kernels::linear_backward(grad_out.data(), x.data(), weights.data(), batch, inputs, outputs, &mut gw, &mut gb, Some(&mut gx));
    let grads = LinearGrads {
        input: Tensor::new(x.shape(), gx)?,
        weights: Tensor::new(weights.shape(), gw)?,
        bias: Tensor::new(&[outputs], gb)?,
    };
    for t in [&grads.input, &grads.weights, &grads.bias] {
        t.check_finite("linear_backward")?;
    }
    Ok(grads)
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    kernels::relu_inplace(out.data_mut());
    out
}

/// Gradient of ReLU given the forward *input*; zero at exactly 0.
pub fn relu_backward(grad_out: &Tensor, input: &Tensor) -> Result<Tensor> {
    grad_out.expect_shape("relu grad_out", input.shape())?;
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape(), data)
}

/// Mean smooth-L1 loss (delta 1) and its gradient with respect to `pred`.
/// The returned gradient is per element, *not* divided by the batch size;
/// it lies in `[-1, 1]`.
pub fn huber_loss(pred: &Tensor, target: &Tensor) -> Result<(f32, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("huber_loss", pred.shape(), target.shape()));
    }
    let (loss, grad) = huber_slices(pred.data(), target.data(), None)?;
    Ok((loss, Tensor::new(pred.shape(), grad)?))
}

/// Slice form of [`huber_loss`] with optional per-element weights; the
/// loss is the weighted mean.
pub(crate) fn huber_slices(pred: &[f32], target: &[f32], weights: Option<&[f32]>) -> Result<(f32, Vec<f32>)> {
    if pred.is_empty() {
        return Err(Error::config("huber loss on an empty batch"));
    }
    let mut total = 0.0f64;
    let mut grad = Vec::with_capacity(pred.len());
    for (i, (&p, &t)) in pred.iter().zip(target).enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        let d = p - t;
        let (l, g) = if d.abs() <= 1.0 {
            (0.5 * d * d, d)
        } else {
            (d.abs() - 0.5, d.signum())
        };
        total += f64::from(w * l);
        grad.push(w * g);
    }
    let loss = (total / pred.len() as f64) as f32;
    if !loss.is_finite() {
        return Err(Error::NonFinite("huber_loss"));
    }
    Ok((loss, grad))
}
