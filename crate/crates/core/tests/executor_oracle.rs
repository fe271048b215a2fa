//! Reference interpreter against a direct f64 evaluation written from the
//! operator definitions.

use dlfuzz_core::attrs;
use dlfuzz_core::exec::{execute_reference, TensorMap};
use dlfuzz_core::graph::GraphBuilder;
use dlfuzz_core::{OpKind, Operator, Tensor};
use proptest::prelude::*;

/// `[C,H,W]` volume in f64.
#[derive(Clone, Debug)]
struct Vol {
    c: usize,
    h: usize,
    w: usize,
    d: Vec<f64>,
}

impl Vol {
    fn at(&self, c: usize, y: isize, x: isize) -> Option<f64> {
        (y >= 0 && x >= 0 && (y as usize) < self.h && (x as usize) < self.w)
            .then(|| self.d[(c * self.h + y as usize) * self.w + x as usize])
    }
}

/// Output size and leading pad for one axis, TensorFlow-style "same" or
/// "valid".
fn axis(len: usize, k: usize, s: usize, same: bool) -> (usize, isize) {
    if same {
        let out = len.div_ceil(s);
        let need = ((out - 1) * s + k).saturating_sub(len);
        (out, (need / 2) as isize)
    } else {
        ((len - k) / s + 1, 0)
    }
}

#[allow(clippy::too_many_arguments)]
fn conv(x: &Vol, w: &[f32], b: &[f32], cout: usize, k: usize, s: usize, same: bool, depthwise: bool) -> Vol {
    let (oh, py) = axis(x.h, k, s, same);
    let (ow, px) = axis(x.w, k, s, same);
    let mut d = vec![0.0; cout * oh * ow];
    for o in 0..cout {
        let ins: Vec<usize> = if depthwise { vec![o] } else { (0..x.c).collect() };
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = b[o] as f64;
                for &i in &ins {
                    for ky in 0..k {
                        for kx in 0..k {
                            let y = (oy * s + ky) as isize - py;
                            let xx = (ox * s + kx) as isize - px;
                            let widx = if depthwise {
                                (o * k + ky) * k + kx
                            } else {
                                ((o * x.c + i) * k + ky) * k + kx
                            };
                            acc += w[widx] as f64 * x.at(i, y, xx).unwrap_or(0.0);
                        }
                    }
                }
                d[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    Vol {
        c: cout,
        h: oh,
        w: ow,
        d,
    }
}

fn pool(x: &Vol, k: usize, s: usize, same: bool, max: bool) -> Vol {
    let (oh, py) = axis(x.h, k, s, same);
    let (ow, px) = axis(x.w, k, s, same);
    let mut d = Vec::new();
    for c in 0..x.c {
        for oy in 0..oh {
            for ox in 0..ow {
                let vals: Vec<f64> = (0..k * k)
                    .filter_map(|t| x.at(c, (oy * s + t / k) as isize - py, (ox * s + t % k) as isize - px))
                    .collect();
                d.push(if max {
                    vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                } else {
                    vals.iter().sum::<f64>() / vals.len() as f64
                });
            }
        }
    }
    Vol {
        c: x.c,
        h: oh,
        w: ow,
        d,
    }
}

fn map(x: &Vol, f: impl Fn(f64) -> f64) -> Vol {
    Vol {
        d: x.d.iter().map(|&v| f(v)).collect(),
        ..x.clone()
    }
}

fn run_single(op: Operator, weights: Vec<Vec<f32>>, x: &Vol) -> Vec<f32> {
    let mut b = GraphBuilder::new();
    let v = b.input("x", Some(x.c));
    let y = b.push(op, &[v], weights);
    b.output(y, "y");
    let g = b.finish();
    let t = Tensor::new("x", vec![x.c, x.h, x.w], x.d.iter().map(|&v| v as f32).collect()).unwrap();
    let inputs: TensorMap = [("x".to_string(), t)].into_iter().collect();
    let r = execute_reference(&g, &inputs).unwrap();
    r.outputs().expect("reference run succeeds")["y"].data().to_vec()
}

fn close(got: &[f32], want: &[f64]) -> Result<(), TestCaseError> {
    prop_assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(want) {
        prop_assert!((*g as f64 - w).abs() <= 1e-4 * (1.0 + w.abs()), "{} vs {}", g, w);
    }
    Ok(())
}

fn vol(c: usize, h: usize, w: usize) -> impl Strategy<Value = Vol> {
    prop::collection::vec(-2.0f64..2.0, c * h * w).prop_map(move |d| Vol {
        c,
        h,
        w,
        d: d.into_iter().map(|v| v as f32 as f64).collect(),
    })
}

fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..4, 3usize..8, 3usize..8)
}

fn weights(n: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-1.0f32..1.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv2d_matches((c, h, w) in dims(), cout in 1usize..4, k in prop::sample::select(vec![1usize, 3]),
                      s in 1usize..3, same in any::<bool>(), seed in any::<u64>()) {
        let x = seeded_vol(seed ^ 2, c, h, w);
        let wt = seeded_weights(seed, cout * c * k * k);
        let bias = seeded_weights(seed ^ 1, cout);
        let op = Operator::new(OpKind::Conv2D, attrs!["in_channels" => c, "out_channels" => cout, "kernel" => k,
            "stride" => s, "padding" => if same { "same" } else { "valid" }]).unwrap();
        let got = run_single(op, vec![wt.clone(), bias.clone()], &x);
        close(&got, &conv(&x, &wt, &bias, cout, k, s, same, false).d)?;
    }

    #[test]
    fn depthwise_matches((c, h, w) in dims(), s in 1usize..3, x_seed in any::<u64>(), (wt, bias) in (weights(27), weights(3))) {
        let x = seeded_vol(x_seed, c, h, w);
        let (wt, bias) = (wt[..c * 9].to_vec(), bias[..c].to_vec());
        let op = Operator::new(OpKind::DepthwiseConv2D, attrs!["channels" => c, "stride" => s]).unwrap();
        let got = run_single(op, vec![wt.clone(), bias.clone()], &x);
        close(&got, &conv(&x, &wt, &bias, c, 3, s, true, true).d)?;
    }

    #[test]
    fn pools_match(x in dims().prop_flat_map(|(c, h, w)| vol(c, h, w)), k in 1usize..4, s in 1usize..3,
                   same in any::<bool>(), max in any::<bool>()) {
        prop_assume!(same || (x.h >= k && x.w >= k));
        let kind = if max { OpKind::MaxPool2D } else { OpKind::AvgPool2D };
        let op = Operator::new(kind, attrs!["kernel" => k, "stride" => s,
            "padding" => if same { "same" } else { "valid" }]).unwrap();
        close(&run_single(op, vec![], &x), &pool(&x, k, s, same, max).d)?;
    }

    #[test]
    fn pointwise_match(x in dims().prop_flat_map(|(c, h, w)| vol(c, h, w)), alpha in 0.0f64..0.5) {
        close(&run_single(Operator::simple(OpKind::ReLU), vec![], &x), &map(&x, |v| v.max(0.0)).d)?;
        close(&run_single(Operator::simple(OpKind::Sigmoid), vec![], &x), &map(&x, |v| 1.0 / (1.0 + (-v).exp())).d)?;
        close(&run_single(Operator::simple(OpKind::Tanh), vec![], &x), &map(&x, f64::tanh).d)?;
        close(&run_single(Operator::simple(OpKind::Identity), vec![], &x), &x.d)?;
        let lr = Operator::new(OpKind::LeakyReLU, attrs!["alpha" => alpha]).unwrap();
        let a = alpha as f32 as f64;
        close(&run_single(lr, vec![], &x), &map(&x, |v| if v < 0.0 { a * v } else { v }).d)?;
    }

    #[test]
    fn batch_norm_matches(x in dims().prop_flat_map(|(c, h, w)| vol(c, h, w)), stats in prop::collection::vec((0.5f32..1.5, -0.5f32..0.5, -0.5f32..0.5, 0.1f32..2.0), 3)) {
        let c = x.c;
        let stats = &stats[..c];
        let ws: Vec<Vec<f32>> = (0..4).map(|j| stats.iter().map(|s| [s.0, s.1, s.2, s.3][j]).collect()).collect();
        let op = Operator::new(OpKind::BatchNorm, attrs!["channels" => c]).unwrap();
        let hw = x.h * x.w;
        let want: Vec<f64> = x.d.iter().enumerate().map(|(i, &v)| {
            let (g, b, m, var) = stats[i / hw];
            g as f64 * (v - m as f64) / (var as f64 + 1e-5).sqrt() + b as f64
        }).collect();
        close(&run_single(op, ws, &x), &want)?;
    }

    #[test]
    fn matmul_softmax_upsample_match(x in dims().prop_flat_map(|(c, h, w)| vol(c, h, w)), cout in 1usize..4, wt in weights(12), bias in weights(3), scale in 1usize..4) {
        let c = x.c;
        let (wt, bias) = (wt[..cout * c].to_vec(), bias[..cout].to_vec());
        let hw = x.h * x.w;
        let want: Vec<f64> = (0..cout * hw).map(|i| {
            let (o, r) = (i / hw, i % hw);
            bias[o] as f64 + (0..c).map(|j| wt[o * c + j] as f64 * x.d[j * hw + r]).sum::<f64>()
        }).collect();
        let op = Operator::new(OpKind::MatMul, attrs!["in_features" => c, "out_features" => cout]).unwrap();
        close(&run_single(op, vec![wt, bias], &x), &want)?;

        let want: Vec<f64> = (0..c * hw).map(|i| {
            let r = i % hw;
            let m = (0..c).map(|j| x.d[j * hw + r]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..c).map(|j| (x.d[j * hw + r] - m).exp()).sum();
            (x.d[i] - m).exp() / z
        }).collect();
        close(&run_single(Operator::simple(OpKind::Softmax), vec![], &x), &want)?;

        let up = Operator::new(OpKind::Upsample, attrs!["scale" => scale]).unwrap();
        let (oh, ow) = (x.h * scale, x.w * scale);
        let want: Vec<f64> = (0..c * oh * ow).map(|i| {
            let (ch, y, xx) = (i / (oh * ow), i / ow % oh, i % ow);
            x.d[(ch * x.h + y / scale) * x.w + xx / scale]
        }).collect();
        close(&run_single(up, vec![], &x), &want)?;
    }
}

fn seeded_weights(seed: u64, n: usize) -> Vec<f32> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

fn seeded_vol(seed: u64, c: usize, h: usize, w: usize) -> Vol {
    Vol {
        c,
        h,
        w,
        d: seeded_weights(seed, c * h * w).into_iter().map(f64::from).collect(),
    }
}

/// Two conv/ReLU blocks and a 1x1 sigmoid head on a 1x3x3 input, evaluated
/// by hand.
#[test]
fn two_block_model_by_hand() {
    let mut b = GraphBuilder::new();
    let x = b.input("image", Some(1));
    let conv3 = |b: &mut GraphBuilder, v, w: Vec<f32>, bias: f32| {
        let op = Operator::new(
            OpKind::Conv2D,
            attrs!["in_channels" => 1usize, "out_channels" => 1usize],
        )
        .unwrap();
        let c = b.push(op, &[v], vec![w, vec![bias]]);
        b.push(Operator::simple(OpKind::ReLU), &[c], vec![])
    };
    // block 1: center tap 1, right neighbour -1 => x[y][x] - x[y][x+1]
    let mut k1 = vec![0.0; 9];
    k1[4] = 1.0;
    k1[5] = -1.0;
    let h1 = conv3(&mut b, x, k1, 0.0);
    // block 2: sum of the 3x3 neighbourhood, bias -1
    let h2 = conv3(&mut b, h1, vec![1.0; 9], -1.0);
    let head = Operator::new(
        OpKind::Conv2D,
        attrs!["in_channels" => 1usize, "out_channels" => 1usize, "kernel" => 1usize],
    )
    .unwrap();
    let logit = b.push(head, &[h2], vec![vec![0.5], vec![0.0]]);
    let y = b.push(Operator::simple(OpKind::Sigmoid), &[logit], vec![]);
    b.output(y, "score");
    let g = b.finish();

    let input = [1.0, 2.0, 3.0, 6.0, 5.0, 4.0, 7.0, 8.0, 9.0];
    // block 1, with zero padding on the right edge:
    //   row 0: 1-2=-1, 2-3=-1, 3-0=3  -> relu 0 0 3
    //   row 1: 6-5=1,  5-4=1,  4-0=4  -> 1 1 4
    //   row 2: 7-8=-1, 8-9=-1, 9-0=9  -> 0 0 9
    // block 2 neighbourhood sums minus 1, relu:
    //   (0,0): 0+0+1+1 -1 = 1        (0,1): 0+0+3+1+1+4 -1 = 8   (0,2): 0+3+1+4 -1 = 7
    //   (1,0): 0+0+1+1+0+0 -1 = 1    (1,1): all = 18 -1 = 17     (1,2): 0+3+1+4+0+9 -1 = 16
    //   (2,0): 1+1+0+0 -1 = 1        (2,1): 1+1+4+0+0+9 -1 = 14  (2,2): 1+4+0+9 -1 = 13
    let h2_want = [1.0, 8.0, 7.0, 1.0, 17.0, 16.0, 1.0, 14.0, 13.0];
    let want: Vec<f32> = h2_want
        .iter()
        .map(|v: &f64| (1.0 / (1.0 + (-0.5 * v).exp())) as f32)
        .collect();

    let inputs: TensorMap = [(
        "image".to_string(),
        Tensor::new("image", vec![1, 3, 3], input.to_vec()).unwrap(),
    )]
    .into_iter()
    .collect();
    let r = execute_reference(&g, &inputs).unwrap();
    let got = r.outputs().unwrap()["score"].data();
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-6, "{got:?} vs {want:?}");
    }
}
