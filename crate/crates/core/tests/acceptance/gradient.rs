//! Analytic gradients from the library's f64 kernels against central
//! differences of naive loop implementations.

use qtransfer::nn::kernels::{self, ConvGeometry};
use qtransfer::nn::qnet::{backward, forward};
use qtransfer::nn::{huber_loss, init_network, QNetworkSpec};
use qtransfer::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-3;
const TOLERANCE: f64 = 1e-3;
/// Gradients smaller than this in both estimates count as equal.
const FLOOR: f64 = 1e-9;

fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < FLOOR {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

/// Outcome of checking one function: worst relative error and how many
/// coordinates were skipped because the perturbation crossed a kink.
#[derive(Default)]
struct Check {
    worst: f64,
    checked: usize,
    skipped: usize,
}

impl Check {
    fn add(&mut self, analytic: f64, numeric: Option<f64>) {
        match numeric {
            Some(n) => {
                self.worst = self.worst.max(rel_err(analytic, n));
                self.checked += 1;
            }
            None => self.skipped += 1,
        }
    }

    fn merge(&mut self, other: Check) {
        self.worst = self.worst.max(other.worst);
        self.checked += other.checked;
        self.skipped += other.skipped;
    }
}

/// Value of the objective plus the sign pattern of every kink argument.
type Eval = (f64, Vec<bool>);

/// Central difference along coordinate `i`, or `None` when the two
/// evaluations sit on different sides of a kink.
fn central(x: &mut [f64], i: usize, f: &dyn Fn(&[f64]) -> Eval) -> Option<f64> {
    let orig = x[i];
    x[i] = orig + H;
    let (plus, kp) = f(x);
    x[i] = orig - H;
    let (minus, km) = f(x);
    x[i] = orig;
    (kp == km).then(|| (plus - minus) / (2.0 * H))
}

// ---- naive oracle implementations ----

fn conv_naive(input: &[f64], c: usize, h: usize, w: usize, weights: &[f64], bias: &[f64], o: usize, k: usize, stride: usize, pad: usize) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; o * oh * ow];
    for oc in 0..o {
        for y in 0..oh {
            for x in 0..ow {
                let mut s = bias[oc];
                for ic in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (y * stride + ky) as isize - pad as isize;
                            let ix = (x * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            s += weights[((oc * c + ic) * k + ky) * k + kx] * input[(ic * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                out[(oc * oh + y) * ow + x] = s;
            }
        }
    }
    (out, oh, ow)
}

fn linear_naive(x: &[f64], weights: &[f64], bias: &[f64], outputs: usize) -> Vec<f64> {
    let inputs = x.len();
    (0..outputs)
        .map(|j| bias[j] + (0..inputs).map(|i| weights[j * inputs + i] * x[i]).sum::<f64>())
        .collect()
}

fn relu_naive(v: &mut [f64], kinks: &mut Vec<bool>) {
    for x in v {
        kinks.push(*x > 0.0);
        *x = x.max(0.0);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Indices to probe: all of them for small tensors, a random subset otherwise.
fn probes(rng: &mut ChaCha8Rng, n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        (0..n).collect()
    } else {
        (0..max).map(|_| rng.gen_range(0..n)).collect()
    }
}

// ---- layer checks ----

fn check_conv(rng: &mut ChaCha8Rng, c: usize, o: usize, h: usize, k: usize, stride: usize, pad: usize) -> Check {
    let g = ConvGeometry {
        in_channels: c,
        out_channels: o,
        kernel: k,
        stride,
        padding: pad,
        batch: 1,
        height: h,
        width: h,
    };
    let input = random_vec(rng, c * h * h, 1.0);
    let weights = random_vec(rng, o * c * k * k, 0.5);
    let bias = random_vec(rng, o, 0.5);
    let coeff = random_vec(rng, g.output_len(), 1.0);

    let mut cols = vec![0.0; g.patch_len() * g.positions()];
    kernels::im2col(&input, &g, &mut cols);
    let mut gw = vec![0.0; weights.len()];
    let mut gb = vec![0.0; o];
    let mut gcols = vec![0.0; cols.len()];
    kernels::conv_backward(&coeff, &cols, &weights, &g, &mut gw, &mut gb, Some(&mut gcols));
    let mut gin = vec![0.0; input.len()];
    kernels::col2im(&gcols, &g, &mut gin);

    let mut out_check = vec![0.0; g.output_len()];
    kernels::conv_forward(&cols, &weights, &bias, &g, &mut out_check);
    let (naive, ..) = conv_naive(&input, c, h, h, &weights, &bias, o, k, stride, pad);
    let mut check = Check::default();
    for (a, b) in out_check.iter().zip(&naive) {
        check.worst = check.worst.max(rel_err(*a, *b));
    }

    let objective = |input: &[f64], weights: &[f64], bias: &[f64]| dot(&conv_naive(input, c, h, h, weights, bias, o, k, stride, pad).0, &coeff);
    let (mut x, mut w, mut b) = (input.clone(), weights.clone(), bias.clone());
    for i in probes(rng, x.len(), 200) {
        let n = central(&mut x, i, &|v| (objective(v, &weights, &bias), vec![]));
        check.add(gin[i], n);
    }
    for i in probes(rng, w.len(), 200) {
        let n = central(&mut w, i, &|v| (objective(&input, v, &bias), vec![]));
        check.add(gw[i], n);
    }
    for i in 0..b.len() {
        let n = central(&mut b, i, &|v| (objective(&input, &weights, v), vec![]));
        check.add(gb[i], n);
    }
    check
}

fn check_linear(rng: &mut ChaCha8Rng, batch: usize, inputs: usize, outputs: usize) -> Check {
    let x = random_vec(rng, batch * inputs, 1.0);
    let weights = random_vec(rng, outputs * inputs, 0.5);
    let bias = random_vec(rng, outputs, 0.5);
    let coeff = random_vec(rng, batch * outputs, 1.0);
    let mut gw = vec![0.0; weights.len()];
    let mut gb = vec![0.0; outputs];
    let mut gx = vec![0.0; x.len()];
    kernels::linear_backward(&coeff, &x, &weights, batch, inputs, outputs, &mut gw, &mut gb, Some(&mut gx));
    let objective = |x: &[f64], w: &[f64], b: &[f64]| -> f64 {
        (0..batch)
            .map(|r| dot(&linear_naive(&x[r * inputs..][..inputs], w, b, outputs), &coeff[r * outputs..][..outputs]))
            .sum()
    };
    let mut check = Check::default();
    let (mut xv, mut wv, mut bv) = (x.clone(), weights.clone(), bias.clone());
    for i in 0..xv.len() {
        let n = central(&mut xv, i, &|v| (objective(v, &weights, &bias), vec![]));
        check.add(gx[i], n);
    }
    for i in 0..wv.len() {
        let n = central(&mut wv, i, &|v| (objective(&x, v, &bias), vec![]));
        check.add(gw[i], n);
    }
    for i in 0..bv.len() {
        let n = central(&mut bv, i, &|v| (objective(&x, &weights, v), vec![]));
        check.add(gb[i], n);
    }
    check
}

fn check_relu(rng: &mut ChaCha8Rng, n: usize) -> Check {
    let x = random_vec(rng, n, 1.0);
    let coeff = random_vec(rng, n, 1.0);
    let mut activation = x.clone();
    kernels::relu_inplace(&mut activation);
    let mut grad = coeff.clone();
    kernels::relu_backward_inplace(&mut grad, &activation);
    let mut check = Check::default();
    let mut xv = x.clone();
    for i in 0..n {
        let num = central(&mut xv, i, &|v| {
            let mut a = v.to_vec();
            let mut kinks = Vec::new();
            relu_naive(&mut a, &mut kinks);
            (dot(&a, &coeff), kinks)
        });
        check.add(grad[i], num);
    }
    check
}

fn huber_naive(pred: &[f64], target: &[f64]) -> Eval {
    let mut kinks = Vec::new();
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            kinks.push(d.abs() <= 1.0);
            if d.abs() <= 1.0 {
                0.5 * d * d
            } else {
                d.abs() - 0.5
            }
        })
        .sum();
    (total / pred.len() as f64, kinks)
}

fn check_huber(rng: &mut ChaCha8Rng, n: usize) -> Check {
    let pred32: Vec<f32> = (0..n).map(|_| rng.gen_range(-3.0f32..3.0)).collect();
    let target32: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let (_, grad) = huber_loss(&Tensor::new(&[n], pred32.clone()).unwrap(), &Tensor::new(&[n], target32.clone()).unwrap()).unwrap();
    let target: Vec<f64> = target32.iter().map(|&v| f64::from(v)).collect();
    let mut pred: Vec<f64> = pred32.iter().map(|&v| f64::from(v)).collect();
    let mut check = Check::default();
    for i in 0..n {
        let num = central(&mut pred, i, &|p| huber_naive(p, &target));
        // The library gradient is per element; the mean divides by n.
        check.add(f64::from(grad.data()[i]) / n as f64, num);
    }
    check
}

// ---- full network ----

struct Net {
    spec: QNetworkSpec,
    params: Vec<Vec<f64>>,
}

impl Net {
    /// Naive forward for a single `[C, H, W]` state; returns Q and the
    /// ReLU sign pattern.
    fn q(&self, params: &[Vec<f64>], input: &[f64]) -> (Vec<f64>, Vec<bool>) {
        let mut kinks = Vec::new();
        let qtransfer::nn::InputSpec::Pixels { channels, height, width, conv } = &self.spec.input else {
            unreachable!()
        };
        let (mut act, mut c, mut h, mut w) = (input.to_vec(), *channels, *height, *width);
        for (i, layer) in conv.iter().enumerate() {
            let (mut out, oh, ow) = conv_naive(
                &act,
                c,
                h,
                w,
                &params[2 * i],
                &params[2 * i + 1],
                layer.out_channels,
                layer.kernel,
                layer.stride,
                layer.padding,
            );
            relu_naive(&mut out, &mut kinks);
            (act, c, h, w) = (out, layer.out_channels, oh, ow);
        }
        let head = 2 * conv.len();
        let mut hidden = linear_naive(&act, &params[head], &params[head + 1], self.spec.hidden);
        relu_naive(&mut hidden, &mut kinks);
        (linear_naive(&hidden, &params[head + 2], &params[head + 3], self.spec.actions), kinks)
    }
}

fn check_network(seed: u64) -> Check {
    let spec = QNetworkSpec::with_widths([4, 6, 6], 24, 5);
    let net32 = init_network(spec.clone(), seed).unwrap();
    let params: Vec<Vec<f64>> = net32.params().iter().map(|t| t.data().iter().map(|&v| f64::from(v)).collect()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let input: Vec<f64> = (0..spec.input_len()).map(|_| rng.gen_range(0.0..1.0)).collect();
    let coeff = random_vec(&mut rng, spec.actions, 1.0);

    let slices: Vec<&[f64]> = params.iter().map(Vec::as_slice).collect();
    let trace = forward(&spec, &slices, &input, 1);
    let grads = backward(&spec, &slices, &trace, &coeff, &vec![true; params.len()]);

    let net = Net { spec: spec.clone(), params: params.clone() };
    let mut check = Check::default();
    let (q_naive, _) = net.q(&params, &input);
    for (a, b) in trace.q.iter().zip(&q_naive) {
        check.worst = check.worst.max(rel_err(*a, *b));
    }
    for (p, grad) in grads.iter().enumerate() {
        let grad = grad.as_ref().expect("every parameter requested");
        let mut work = net.params.clone();
        for i in probes(&mut rng, work[p].len(), 40) {
            let orig = work[p][i];
            let mut eval = |v: f64| {
                work[p][i] = v;
                let (q, kinks) = net.q(&work, &input);
                (dot(&q, &coeff), kinks)
            };
            let (plus, kp) = eval(orig + H);
            let (minus, km) = eval(orig - H);
            work[p][i] = orig;
            check.add(grad[i], (kp == km).then(|| (plus - minus) / (2.0 * H)));
        }
    }
    check
}

pub fn run() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut parts = Vec::new();
    let mut total = Check::default();
    let mut record = |name: &str, c: Check| {
        parts.push(format!("{name} {:.1e}", c.worst));
        total.merge(c);
    };
    let mut conv = Check::default();
    for (c, o, h, k, s, p) in [(4, 3, 20, 8, 4, 0), (3, 4, 9, 4, 2, 0), (4, 3, 7, 3, 1, 0), (2, 3, 6, 3, 1, 1)] {
        conv.merge(check_conv(&mut rng, c, o, h, k, s, p));
    }
    record("conv", conv);
    record("linear", check_linear(&mut rng, 3, 7, 5));
    record("relu", check_relu(&mut rng, 64));
    record("huber", check_huber(&mut rng, 64));
    let mut full = Check::default();
    for seed in [1, 2] {
        full.merge(check_network(seed));
    }
    let full_skipped = full.skipped;
    let full_checked = full.checked;
    record("network", full);

    let detail = format!(
        "max rel err {:.2e} over {} coords ({} kink-crossing skipped); {}",
        total.worst,
        total.checked,
        total.skipped,
        parts.join(", ")
    );
    // A check that skipped most of its coordinates proves nothing.
    if full_checked < 4 * full_skipped.max(1) || total.checked == 0 {
        return Err(format!("too many kink crossings: {detail}"));
    }
    if total.worst <= TOLERANCE {
        Ok(detail)
    } else {
        Err(detail)
    }
}
