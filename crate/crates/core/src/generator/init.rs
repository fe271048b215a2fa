//! Operator construction for given channel context, with random weights.

use crate::attrs;
use crate::ops::{OpKind, Operator};
use crate::tensor::numel;
use rand::Rng;

/// Uniform weights with variance `1 / fan_in` and small biases; batch-norm
/// statistics near the identity transform.
pub fn random_weights<R: Rng + ?Sized>(op: &Operator, rng: &mut R) -> Vec<Vec<f32>> {
    let shapes = op.weight_shapes();
    match op.kind() {
        OpKind::BatchNorm => {
            let c = numel(&shapes[0]);
            let near = |rng: &mut R, lo: f32, hi: f32| (0..c).map(|_| rng.gen_range(lo..hi)).collect::<Vec<f32>>();
            let gamma = near(rng, 0.5, 1.5);
            let beta = near(rng, -0.1, 0.1);
            let mean = near(rng, -0.1, 0.1);
            let var = near(rng, 0.5, 1.5);
            vec![gamma, beta, mean, var]
        }
        _ if shapes.is_empty() => Vec::new(),
        _ => {
            let w = &shapes[0];
            let fan_in = numel(&w[1..]).max(1) as f32;
            let bound = (3.0 / fan_in).sqrt();
            let weights = (0..numel(w)).map(|_| rng.gen_range(-bound..bound)).collect();
            let bias = (0..numel(&shapes[1])).map(|_| rng.gen_range(-0.05..0.05)).collect();
            vec![weights, bias]
        }
    }
}

/// An operator of `kind` taking `cin` channels, sized so it emits `cout`
/// channels where the kind allows. Spatial windows are 3x3, stride 1,
/// "same" padding.
pub fn operator_for(kind: OpKind, cin: usize, cout: usize) -> Operator {
    let op = match kind {
        OpKind::Conv2D => Operator::new(kind, attrs!["in_channels" => cin, "out_channels" => cout]),
        OpKind::DepthwiseConv2D => Operator::new(kind, attrs!["channels" => cin]),
        OpKind::BatchNorm => Operator::new(kind, attrs!["channels" => cin]),
        OpKind::MatMul => Operator::new(kind, attrs!["in_features" => cin, "out_features" => cout]),
        OpKind::MaxPool2D | OpKind::AvgPool2D => Operator::new(kind, attrs!["kernel" => 3usize, "stride" => 1usize]),
        _ => Ok(Operator::simple(kind)),
    };
    op.expect("synthesized attributes fit the schema")
}
