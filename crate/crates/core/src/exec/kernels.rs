//! Straight-line float32 kernels shared by both interpreters. Every kernel
//! overwrites the whole output buffer, so buffers may be recycled freely.

use crate::ops::{window, OpKind, Operator};
use crate::tensor::numel;

#[derive(Debug, Clone, PartialEq)]
pub struct DomainError(pub String);

pub struct Input<'a> {
    pub data: &'a [f32],
    pub shape: &'a [usize],
}

pub fn kernel_symbol(kind: OpKind) -> &'static str {
    match kind {
        OpKind::Conv2D => "conv2d_forward",
        OpKind::DepthwiseConv2D => "depthwise_conv2d_forward",
        OpKind::BatchNorm => "batch_norm_forward",
        OpKind::ReLU => "relu_forward",
        OpKind::LeakyReLU => "leaky_relu_forward",
        OpKind::Sigmoid => "sigmoid_forward",
        OpKind::Tanh => "tanh_forward",
        OpKind::MaxPool2D => "max_pool2d_forward",
        OpKind::AvgPool2D => "avg_pool2d_forward",
        OpKind::Add => "add_forward",
        OpKind::Concat => "concat_forward",
        OpKind::MatMul => "matmul_forward",
        OpKind::Softmax => "softmax_forward",
        OpKind::Upsample => "upsample_forward",
        OpKind::Identity => "identity_forward",
    }
}

pub fn run(
    op: &Operator,
    weights: &[Vec<f32>],
    inputs: &[Input<'_>],
    out_shape: &[usize],
    out: &mut Vec<f32>,
) -> Result<(), DomainError> {
    out.clear();
    out.resize(numel(out_shape), 0.0);
    let x = &inputs[0];
    match op.kind() {
        OpKind::Conv2D => conv2d(op, weights, x, out_shape, out),
        OpKind::DepthwiseConv2D => depthwise(op, weights, x, out_shape, out),
        OpKind::BatchNorm => batch_norm(op, weights, x, out),
        OpKind::ReLU => map(x.data, out, |v| if v < 0.0 { 0.0 } else { v }),
        OpKind::LeakyReLU => {
            let a = op.float("alpha") as f32;
            map(x.data, out, |v| if v < 0.0 { a * v } else { v })
        }
        OpKind::Sigmoid => map(x.data, out, |v| 1.0 / (1.0 + (-v).exp())),
        OpKind::Tanh => map(x.data, out, f32::tanh),
        OpKind::MaxPool2D => pool(op, x, out_shape, out, true),
        OpKind::AvgPool2D => pool(op, x, out_shape, out, false),
        OpKind::Add => {
            for ((o, a), b) in out.iter_mut().zip(x.data).zip(inputs[1].data) {
                *o = a + b;
            }
        }
        OpKind::Concat => concat(op.int("axis"), x, &inputs[1], out),
        OpKind::MatMul => matmul(weights, x, out_shape, out),
        OpKind::Softmax => return softmax(op.int("axis"), x, out),
        OpKind::Upsample => upsample(op.int("scale"), x, out_shape, out),
        OpKind::Identity => out.copy_from_slice(x.data),
    }
    Ok(())
}

fn map(src: &[f32], out: &mut [f32], f: impl Fn(f32) -> f32) {
    for (o, &v) in out.iter_mut().zip(src) {
        *o = f(v);
    }
}

fn conv2d(op: &Operator, weights: &[Vec<f32>], x: &Input<'_>, out_shape: &[usize], out: &mut [f32]) {
    let (cin, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    let (cout, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
    let (k, s, pad) = (op.int("kernel"), op.int("stride"), op.padding());
    let py = window(h, k, s, pad).unwrap().1 as isize;
    let px = window(w, k, s, pad).unwrap().1 as isize;
    let (wt, bias) = (&weights[0], &weights[1]);
    for o in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[o];
                for i in 0..cin {
                    for ky in 0..k {
                        let iy = (oy * s + ky) as isize - py;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * s + kx) as isize - px;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let wv = wt[((o * cin + i) * k + ky) * k + kx];
                            acc += wv * x.data[(i * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
}

fn depthwise(op: &Operator, weights: &[Vec<f32>], x: &Input<'_>, out_shape: &[usize], out: &mut [f32]) {
    let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let (k, s, pad) = (op.int("kernel"), op.int("stride"), op.padding());
    let py = window(h, k, s, pad).unwrap().1 as isize;
    let px = window(w, k, s, pad).unwrap().1 as isize;
    let (wt, bias) = (&weights[0], &weights[1]);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[ch];
                for ky in 0..k {
                    let iy = (oy * s + ky) as isize - py;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * s + kx) as isize - px;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        acc += wt[(ch * k + ky) * k + kx] * x.data[(ch * h + iy as usize) * w + ix as usize];
                    }
                }
                out[(ch * oh + oy) * ow + ox] = acc;
            }
        }
    }
}

/// Per-channel scale and shift of an inference-mode batch norm.
pub fn batch_norm_affine(eps: f64, weights: &[Vec<f32>]) -> (Vec<f32>, Vec<f32>) {
    let (gamma, beta, mean, var) = (&weights[0], &weights[1], &weights[2], &weights[3]);
    let scale: Vec<f32> = gamma
        .iter()
        .zip(var)
        .map(|(&g, &v)| g / (v + eps as f32).sqrt())
        .collect();
    let shift = beta
        .iter()
        .zip(mean)
        .zip(&scale)
        .map(|((&b, &m), &sc)| b - m * sc)
        .collect();
    (scale, shift)
}

fn batch_norm(op: &Operator, weights: &[Vec<f32>], x: &Input<'_>, out: &mut [f32]) {
    let (scale, shift) = batch_norm_affine(op.float("eps"), weights);
    let inner = numel(&x.shape[1..]);
    for (c, (&sc, &sh)) in scale.iter().zip(&shift).enumerate() {
        let range = c * inner..(c + 1) * inner;
        for (o, &v) in out[range.clone()].iter_mut().zip(&x.data[range]) {
            *o = v * sc + sh;
        }
    }
}

fn pool(op: &Operator, x: &Input<'_>, out_shape: &[usize], out: &mut [f32], max: bool) {
    let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let (k, s, pad) = (op.int("kernel"), op.int("stride"), op.padding());
    let py = window(h, k, s, pad).unwrap().1 as isize;
    let px = window(w, k, s, pad).unwrap().1 as isize;
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = if max { f32::NEG_INFINITY } else { 0.0 };
                let mut count = 0u32;
                for ky in 0..k {
                    let iy = (oy * s + ky) as isize - py;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * s + kx) as isize - px;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let v = x.data[(ch * h + iy as usize) * w + ix as usize];
                        count += 1;
                        if max {
                            // NaN wins so that it propagates
                            if v.is_nan() || v > acc {
                                acc = if acc.is_nan() { acc } else { v };
                            }
                        } else {
                            acc += v;
                        }
                    }
                }
                out[(ch * oh + oy) * ow + ox] = if max { acc } else { acc / count as f32 };
            }
        }
    }
}

fn concat(axis: usize, a: &Input<'_>, b: &Input<'_>, out: &mut [f32]) {
    let outer = numel(&a.shape[..axis]);
    let (ca, cb) = (numel(&a.shape[axis..]), numel(&b.shape[axis..]));
    let mut pos = 0;
    for o in 0..outer {
        out[pos..pos + ca].copy_from_slice(&a.data[o * ca..(o + 1) * ca]);
        pos += ca;
        out[pos..pos + cb].copy_from_slice(&b.data[o * cb..(o + 1) * cb]);
        pos += cb;
    }
}

fn matmul(weights: &[Vec<f32>], x: &Input<'_>, out_shape: &[usize], out: &mut [f32]) {
    let (cin, cout) = (x.shape[0], out_shape[0]);
    let rest = numel(&x.shape[1..]);
    let (wt, bias) = (&weights[0], &weights[1]);
    for o in 0..cout {
        for r in 0..rest {
            let mut acc = bias[o];
            for i in 0..cin {
                acc += wt[o * cin + i] * x.data[i * rest + r];
            }
            out[o * rest + r] = acc;
        }
    }
}

fn softmax(axis: usize, x: &Input<'_>, out: &mut [f32]) -> Result<(), DomainError> {
    let outer = numel(&x.shape[..axis]);
    let len = x.shape[axis];
    let inner = numel(&x.shape[axis + 1..]);
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + i;
            let mut m = f32::NEG_INFINITY;
            let mut nan = false;
            for j in 0..len {
                let v = x.data[idx(j)];
                nan |= v.is_nan();
                m = m.max(v);
            }
            if m == f32::NEG_INFINITY && !nan {
                return Err(DomainError("softmax over a slice that is entirely -inf".into()));
            }
            let mut sum = 0.0f32;
            for j in 0..len {
                let e = (x.data[idx(j)] - m).exp();
                out[idx(j)] = e;
                sum += e;
            }
            for j in 0..len {
                out[idx(j)] /= sum;
            }
        }
    }
    Ok(())
}

fn upsample(scale: usize, x: &Input<'_>, out_shape: &[usize], out: &mut [f32]) {
    let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                out[(ch * oh + oy) * ow + ox] = x.data[(ch * h + oy / scale) * w + ox / scale];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attrs;

    fn run1(op: &Operator, weights: &[Vec<f32>], data: &[f32], shape: &[usize]) -> Vec<f32> {
        let out_shape = op.infer(&[shape]).unwrap();
        let mut out = Vec::new();
        run(op, weights, &[Input { data, shape }], &out_shape, &mut out).unwrap();
        out
    }

    #[test]
    fn relu_definition() {
        let out = run1(&Operator::simple(OpKind::ReLU), &[], &[-1.0, 0.0, 2.0], &[3]);
        assert_eq!(out, vec![0.0, 0.0, 2.0]);
        let nan = run1(&Operator::simple(OpKind::ReLU), &[], &[f32::NAN], &[1]);
        assert!(nan[0].is_nan());
    }

    #[test]
    fn conv_hand_computed() {
        // 1 input channel 3x3, one 3x3 filter of ones, same padding: window sums
        let op = Operator::new(
            OpKind::Conv2D,
            attrs!["in_channels" => 1usize, "out_channels" => 1usize],
        )
        .unwrap();
        let x: Vec<f32> = (1..=9).map(|v| v as f32).collect();
        let out = run1(&op, &[vec![1.0; 9], vec![0.5]], &x, &[1, 3, 3]);
        assert_eq!(out, vec![12.5, 21.5, 16.5, 27.5, 45.5, 33.5, 24.5, 39.5, 28.5]);
    }

    #[test]
    fn pools_ignore_padding() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let max = Operator::new(OpKind::MaxPool2D, attrs!["kernel" => 3usize, "stride" => 1usize]).unwrap();
        assert_eq!(run1(&max, &[], &x, &[1, 2, 2]), vec![4.0; 4]);
        let avg = Operator::new(OpKind::AvgPool2D, attrs!["kernel" => 2usize, "stride" => 2usize]).unwrap();
        assert_eq!(run1(&avg, &[], &x, &[1, 2, 2]), vec![2.5]);
        let mut xn = x;
        xn[3] = f32::NAN;
        assert!(run1(&max, &[], &xn, &[1, 2, 2]).iter().all(|v| v.is_nan()));
    }

    #[test]
    fn softmax_domain_violation() {
        let op = Operator::simple(OpKind::Softmax);
        let out = run1(&op, &[], &[0.0, 0.0, 0.0, f32::NEG_INFINITY], &[2, 2]);
        assert_eq!(out, vec![0.5, 1.0, 0.5, 0.0]);
        let shape = [2usize];
        let mut o = Vec::new();
        let e = run(
            &op,
            &[],
            &[Input {
                data: &[f32::NEG_INFINITY; 2],
                shape: &shape,
            }],
            &shape,
            &mut o,
        );
        assert!(e.is_err());
    }

    #[test]
    fn concat_and_upsample() {
        let op = Operator::simple(OpKind::Concat);
        let (a, b) = ([1.0, 2.0], [3.0, 4.0, 5.0, 6.0]);
        let (sa, sb) = ([1usize, 1, 2], [2usize, 1, 2]);
        let mut out = Vec::new();
        run(
            &op,
            &[],
            &[Input { data: &a, shape: &sa }, Input { data: &b, shape: &sb }],
            &[3, 1, 2],
            &mut out,
        )
        .unwrap();
        assert_eq!(out, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let up = run1(&Operator::simple(OpKind::Upsample), &[], &[1.0, 2.0], &[1, 1, 2]);
        assert_eq!(up, vec![1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn matmul_over_leading_dim() {
        let op = Operator::new(
            OpKind::MatMul,
            attrs!["in_features" => 2usize, "out_features" => 1usize],
        )
        .unwrap();
        let out = run1(&op, &[vec![1.0, 10.0], vec![0.5]], &[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        assert_eq!(out, vec![31.5, 42.5]);
    }
}
