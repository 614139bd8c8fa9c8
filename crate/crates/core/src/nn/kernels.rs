//! Slice-level kernels shared by the `f32` training path and the `f64`
//! shadow path used for gradient checking.
//!
//! Convolution activations use a channel-major batched layout
//! `[C, B, H, W]`, so a whole batch goes through one GEMM per layer.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

pub trait Real:
    Copy
    + Debug
    + Default
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn is_finite(self) -> bool;

    /// `C[m×n] = A[m×k] · B[k×n] + beta · C`, every operand addressed by
    /// (row stride, column stride).
    #[allow(clippy::too_many_arguments)]
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        beta: Self,
        c: &mut [Self],
        c_strides: (usize, usize),
    );
}

fn span(rows: usize, cols: usize, (rs, cs): (usize, usize)) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            fn from_f64(v: f64) -> Self {
                v as $t
            }

            fn to_f64(self) -> f64 {
                self as f64
            }

            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }

            fn gemm_raw(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (usize, usize),
                b: &[Self],
                b_strides: (usize, usize),
                beta: Self,
                c: &mut [Self],
                c_strides: (usize, usize),
            ) {
                assert!(a.len() >= span(m, k, a_strides), "gemm: lhs too short");
                assert!(b.len() >= span(k, n, b_strides), "gemm: rhs too short");
                assert!(c.len() >= span(m, n, c_strides), "gemm: output too short");
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    for i in 0..m {
                        for j in 0..n {
                            let idx = i * c_strides.0 + j * c_strides.1;
                            c[idx] *= beta;
                        }
                    }
                    return;
                }
                // SAFETY: the asserts above bound every index the kernel
                // touches; all strides are non-negative.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0 as isize,
                        a_strides.1 as isize,
                        b.as_ptr(),
                        b_strides.0 as isize,
                        b_strides.1 as isize,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0 as isize,
                        c_strides.1 as isize,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Geometry of one convolution over a batched `[C, B, H, W]` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    /// Rows of the unfolded patch matrix (`C·k·k`).
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Columns of the unfolded patch matrix (`B·H'·W'`).
    pub fn positions(&self) -> usize {
        self.batch * self.out_height() * self.out_width()
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.batch * self.height * self.width
    }

    pub fn output_len(&self) -> usize {
        self.out_channels * self.positions()
    }
}

pub fn im2col<T: Real>(input: &[T], g: &ConvGeometry, cols: &mut [T]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let positions = g.positions();
    debug_assert_eq!(input.len(), g.input_len());
    debug_assert_eq!(cols.len(), g.patch_len() * positions);
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let dst = &mut cols[row * positions..(row + 1) * positions];
                for b in 0..g.batch {
                    let plane = &input[(c * g.batch + b) * g.height * g.width..][..g.height * g.width];
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ki) as isize - pad;
                        let out_row = &mut dst[(b * oh + oy) * ow..][..ow];
                        if iy < 0 || iy >= g.height as isize {
                            out_row.fill(T::ZERO);
                            continue;
                        }
                        let src_row = &plane[iy as usize * g.width..][..g.width];
                        if g.padding == 0 {
                            for (ox, v) in out_row.iter_mut().enumerate() {
                                *v = src_row[ox * g.stride + kj];
                            }
                        } else {
                            for (ox, v) in out_row.iter_mut().enumerate() {
                                let ix = (ox * g.stride + kj) as isize - pad;
                                *v = if ix < 0 || ix >= g.width as isize {
                                    T::ZERO
                                } else {
                                    src_row[ix as usize]
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
pub fn col2im<T: Real>(cols: &[T], g: &ConvGeometry, grad_input: &mut [T]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let positions = g.positions();
    grad_input.fill(T::ZERO);
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let src = &cols[row * positions..(row + 1) * positions];
                for b in 0..g.batch {
                    let plane =
                        &mut grad_input[(c * g.batch + b) * g.height * g.width..][..g.height * g.width];
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ki) as isize - pad;
                        if iy < 0 || iy >= g.height as isize {
                            continue;
                        }
                        let src_row = &src[(b * oh + oy) * ow..][..ow];
                        let dst_row = &mut plane[iy as usize * g.width..][..g.width];
                        for (ox, &v) in src_row.iter().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - pad;
                            if ix >= 0 && ix < g.width as isize {
                                dst_row[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `out[Cout, B·H'·W'] = W[Cout, C·k·k] · cols + bias`.
pub fn conv_forward<T: Real>(cols: &[T], weights: &[T], bias: &[T], g: &ConvGeometry, out: &mut [T]) {
    let positions = g.positions();
    let patch = g.patch_len();
    for (o, row) in out.chunks_exact_mut(positions).enumerate() {
        row.fill(bias[o]);
    }
    T::gemm_raw(
        g.out_channels,
        patch,
        positions,
        weights,
        (patch, 1),
        cols,
        (positions, 1),
        T::ONE,
        out,
        (positions, 1),
    );
}

/// Parameter gradients of a convolution; optionally the patch gradient
/// (`W^T · grad_out`) for propagation to the layer input.
pub fn conv_backward<T: Real>(
    grad_out: &[T],
    cols: &[T],
    weights: &[T],
    g: &ConvGeometry,
    grad_weights: &mut [T],
    grad_bias: &mut [T],
    grad_cols: Option<&mut [T]>,
) {
    let positions = g.positions();
    let patch = g.patch_len();
    T::gemm_raw(
        g.out_channels,
        positions,
        patch,
        grad_out,
        (positions, 1),
        cols,
        (1, positions),
        T::ZERO,
        grad_weights,
        (patch, 1),
    );
    for (o, row) in grad_out.chunks_exact(positions).enumerate() {
        let mut acc = T::ZERO;
        for &v in row {
            acc += v;
        }
        grad_bias[o] = acc;
    }
    if let Some(grad_cols) = grad_cols {
        T::gemm_raw(
            patch,
            g.out_channels,
            positions,
            weights,
            (1, patch),
            grad_out,
            (positions, 1),
            T::ZERO,
            grad_cols,
            (positions, 1),
        );
    }
}

/// `y[B, out] = x[B, in] · W[out, in]^T + b`.
pub fn linear_forward<T: Real>(x: &[T], weights: &[T], bias: &[T], batch: usize, inputs: usize, outputs: usize, y: &mut [T]) {
    for row in y.chunks_exact_mut(outputs) {
        row.copy_from_slice(bias);
    }
    T::gemm_raw(batch, inputs, outputs, x, (inputs, 1), weights, (1, inputs), T::ONE, y, (outputs, 1));
}

#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Real>(
    grad_y: &[T],
    x: &[T],
    weights: &[T],
    batch: usize,
    inputs: usize,
    outputs: usize,
    grad_weights: &mut [T],
    grad_bias: &mut [T],
    grad_x: Option<&mut [T]>,
) {
    T::gemm_raw(outputs, batch, inputs, grad_y, (1, outputs), x, (inputs, 1), T::ZERO, grad_weights, (inputs, 1));
    grad_bias.fill(T::ZERO);
    for row in grad_y.chunks_exact(outputs) {
        for (acc, &v) in grad_bias.iter_mut().zip(row) {
            *acc += v;
        }
    }
    if let Some(grad_x) = grad_x {
        T::gemm_raw(batch, outputs, inputs, grad_y, (outputs, 1), weights, (inputs, 1), T::ZERO, grad_x, (inputs, 1));
    }
}

pub fn relu_inplace<T: Real>(v: &mut [T]) {
    for x in v {
        if !(*x > T::ZERO) {
            *x = T::ZERO;
        }
    }
}

/// Masks `grad` by the ReLU derivative, read off the activation output.
/// The derivative at exactly zero is taken as zero.
pub fn relu_backward_inplace<T: Real>(grad: &mut [T], activation: &[T]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if !(a > T::ZERO) {
            *g = T::ZERO;
        }
    }
}

/// `[C, B, P]` → `[B, C·P]`, the per-sample channel-major flatten.
pub fn flatten_channels<T: Real>(src: &[T], channels: usize, batch: usize, plane: usize, dst: &mut [T]) {
    for c in 0..channels {
        for b in 0..batch {
            let s = &src[(c * batch + b) * plane..][..plane];
            dst[b * channels * plane + c * plane..][..plane].copy_from_slice(s);
        }
    }
}

/// Inverse of [`flatten_channels`].
pub fn unflatten_channels<T: Real>(src: &[T], channels: usize, batch: usize, plane: usize, dst: &mut [T]) {
    for c in 0..channels {
        for b in 0..batch {
            let s = &src[b * channels * plane + c * plane..][..plane];
            dst[(c * batch + b) * plane..][..plane].copy_from_slice(s);
        }
    }
}
