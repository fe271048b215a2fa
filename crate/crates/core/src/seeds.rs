//! The bundled seed components. Weights come from a fixed-seed generator, so
//! `seed_repository()` is reproducible and matches the committed copy.

use crate::attrs;
use crate::generator::init::random_weights;
use crate::graph::{EdgeId, GraphBuilder, VertexId};
use crate::ops::{OpKind, Operator};
use crate::repo::{Component, ComponentKind, Interface, Origin, Repository};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

const WEIGHT_SEED: u64 = 0x5eed;
pub const BACKBONE_PROBE: [usize; 3] = [3, 32, 32];

struct Net {
    b: GraphBuilder,
    rng: ChaCha8Rng,
}

impl Net {
    fn new(rng: ChaCha8Rng) -> Self {
        Self {
            b: GraphBuilder::new(),
            rng,
        }
    }

    fn op(&mut self, op: Operator, ins: &[VertexId]) -> VertexId {
        let w = random_weights(&op, &mut self.rng);
        self.b.push(op, ins, w)
    }

    fn simple(&mut self, kind: OpKind, x: VertexId) -> VertexId {
        self.b.push(Operator::simple(kind), &[x], vec![])
    }

    fn conv(&mut self, x: VertexId, cin: usize, cout: usize, k: usize, s: usize) -> VertexId {
        let op = Operator::new(
            OpKind::Conv2D,
            attrs!["in_channels" => cin, "out_channels" => cout, "kernel" => k, "stride" => s],
        )
        .unwrap();
        self.op(op, &[x])
    }

    fn depthwise(&mut self, x: VertexId, c: usize, s: usize) -> VertexId {
        let op = Operator::new(OpKind::DepthwiseConv2D, attrs!["channels" => c, "stride" => s]).unwrap();
        self.op(op, &[x])
    }

    fn bn(&mut self, x: VertexId, c: usize) -> VertexId {
        self.op(Operator::new(OpKind::BatchNorm, attrs!["channels" => c]).unwrap(), &[x])
    }

    fn pool(&mut self, kind: OpKind, x: VertexId, k: usize, s: usize) -> VertexId {
        self.op(Operator::new(kind, attrs!["kernel" => k, "stride" => s]).unwrap(), &[x])
    }

    fn binary(&mut self, kind: OpKind, a: VertexId, b: VertexId) -> VertexId {
        self.b.push(Operator::simple(kind), &[a, b], vec![])
    }

    /// Runs `f` and returns its result with the edges it added.
    fn block(&mut self, f: impl FnOnce(&mut Self) -> VertexId) -> (VertexId, Vec<EdgeId>) {
        let start = self.b.edge_count();
        let v = f(self);
        (v, (start..self.b.edge_count()).collect())
    }
}

fn component(
    id: &str,
    kind: ComponentKind,
    net: Net,
    scenarios: &[&str],
    interface: Interface,
    probe_shapes: Vec<Vec<usize>>,
    blocks: Vec<Vec<EdgeId>>,
) -> Component {
    Component {
        id: id.to_string(),
        kind,
        graph: net.b.finish(),
        scenarios: scenarios.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>(),
        interface,
        probe_shapes,
        blocks,
        origin: Origin::Seed,
    }
}

fn backbone(id: &str, net: Net, scenarios: &[&str], outputs: Vec<usize>, blocks: Vec<Vec<EdgeId>>) -> Component {
    component(
        id,
        ComponentKind::Backbone,
        net,
        scenarios,
        Interface {
            inputs: vec![3],
            outputs,
        },
        vec![BACKBONE_PROBE.to_vec()],
        blocks,
    )
}

fn residual(n: &mut Net, x: VertexId, c: usize) -> VertexId {
    let a = n.conv(x, c, c, 3, 1);
    let a = n.bn(a, c);
    let a = n.simple(OpKind::ReLU, a);
    let a = n.conv(a, c, c, 3, 1);
    let a = n.bn(a, c);
    let skip = n.simple(OpKind::Identity, x);
    let s = n.binary(OpKind::Add, a, skip);
    n.simple(OpKind::ReLU, s)
}

fn conv_bn_act(n: &mut Net, x: VertexId, cin: usize, cout: usize, k: usize, s: usize, act: OpKind) -> VertexId {
    let a = n.conv(x, cin, cout, k, s);
    let a = n.bn(a, cout);
    n.simple(act, a)
}

fn resnet_lite(rng: ChaCha8Rng) -> Component {
    let mut n = Net::new(rng);
    let x = n.b.input("image", Some(3));
    let x = conv_bn_act(&mut n, x, 3, 8, 3, 2, OpKind::ReLU);
    let mut blocks = Vec::new();
    let (x, e) = n.block(|n| residual(n, x, 8));
    blocks.push(e);
    let (c3, e) = n.block(|n| residual(n, x, 8));
    blocks.push(e);
    let (x, e) = n.block(|n| conv_bn_act(n, c3, 8, 16, 3, 2, OpKind::ReLU));
    blocks.push(e);
    let (x, e) = n.block(|n| residual(n, x, 16));
    blocks.push(e);
    let (c4, e) = n.block(|n| residual(n, x, 16));
    blocks.push(e);
    n.b.output(c3, "c3");
    n.b.output(c4, "c4");
    backbone(
        "resnet-lite",
        n,
        &["camera-only", "camera-lidar", "lidar-only"],
        vec![8, 16],
        blocks,
    )
}

fn vgg_lite(rng: ChaCha8Rng) -> Component {
    let mut n = Net::new(rng);
    let x = n.b.input("image", Some(3));
    let mut blocks = Vec::new();
    let (x, e) = n.block(|n| conv_bn_act(n, x, 3, 8, 3, 1, OpKind::ReLU));
    blocks.push(e);
    let x = n.pool(OpKind::MaxPool2D, x, 2, 2);
    let (x, e) = n.block(|n| conv_bn_act(n, x, 8, 8, 3, 1, OpKind::ReLU));
    blocks.push(e);
    let (c3, e) = n.block(|n| conv_bn_act(n, x, 8, 8, 3, 1, OpKind::ReLU));
    blocks.push(e);
    let x = n.pool(OpKind::MaxPool2D, c3, 2, 2);
    let (x, e) = n.block(|n| conv_bn_act(n, x, 8, 16, 3, 1, OpKind::ReLU));
    blocks.push(e);
    let (c4, e) = n.block(|n| conv_bn_act(n, x, 16, 16, 3, 1, OpKind::ReLU));
    blocks.push(e);
    n.b.output(c3, "c3");
    n.b.output(c4, "c4");
    backbone("vgg-lite", n, &["camera-only", "camera-lidar"], vec![8, 16], blocks)
}

fn separable(n: &mut Net, x: VertexId, cin: usize, cout: usize, s: usize) -> VertexId {
    let a = n.depthwise(x, cin, s);
    let a = n.bn(a, cin);
    let a = n.simple(OpKind::ReLU, a);
    conv_bn_act(n, a, cin, cout, 1, 1, OpKind::ReLU)
}

fn mobile_lite(rng: ChaCha8Rng) -> Component {
    let mut n = Net::new(rng);
    let x = n.b.input("image", Some(3));
    let x = conv_bn_act(&mut n, x, 3, 8, 3, 2, OpKind::ReLU);
    let mut blocks = Vec::new();
    let (x, e) = n.block(|n| separable(n, x, 8, 8, 1));
    blocks.push(e);
    let (c3, e) = n.block(|n| separable(n, x, 8, 8, 1));
    blocks.push(e);
    let (x, e) = n.block(|n| separable(n, c3, 8, 16, 2));
    blocks.push(e);
    let (c4, e) = n.block(|n| separable(n, x, 16, 16, 1));
    blocks.push(e);
    n.b.output(c3, "c3");
    n.b.output(c4, "c4");
    backbone("mobile-lite", n, &["lidar-only", "camera-lidar"], vec![8, 16], blocks)
}

fn leaky_residual(n: &mut Net, x: VertexId, c: usize) -> VertexId {
    let a = conv_bn_act(n, x, c, c / 2, 1, 1, OpKind::LeakyReLU);
    let a = conv_bn_act(n, a, c / 2, c, 3, 1, OpKind::LeakyReLU);
    n.binary(OpKind::Add, a, x)
}

fn darknet_lite(rng: ChaCha8Rng) -> Component {
    let mut n = Net::new(rng);
    let x = n.b.input("image", Some(3));
    let x = conv_bn_act(&mut n, x, 3, 8, 3, 1, OpKind::LeakyReLU);
    let mut blocks = Vec::new();
    let (x, e) = n.block(|n| conv_bn_act(n, x, 8, 16, 3, 2, OpKind::LeakyReLU));
    blocks.push(e);
    let (x, e) = n.block(|n| leaky_residual(n, x, 16));
    blocks.push(e);
    let (x, e) = n.block(|n| leaky_residual(n, x, 16));
    blocks.push(e);
    let (x, e) = n.block(|n| conv_bn_act(n, x, 16, 16, 3, 2, OpKind::LeakyReLU));
    blocks.push(e);
    let (c4, e) = n.block(|n| leaky_residual(n, x, 16));
    blocks.push(e);
    n.b.output(c4, "c4");
    backbone("darknet-lite", n, &["camera-only"], vec![16], blocks)
}

const NECK_SCENARIOS: [&str; 2] = ["lidar-only", "camera-lidar"];

fn neck(id: &str, net: Net) -> Component {
    component(
        id,
        ComponentKind::Neck,
        net,
        &NECK_SCENARIOS,
        Interface {
            inputs: vec![8, 16],
            outputs: vec![16],
        },
        vec![vec![8, 16, 16], vec![16, 8, 8]],
        vec![],
    )
}

fn fpn_lite(rng: ChaCha8Rng) -> Component {
    let mut n = Net::new(rng);
    let lo = n.b.input("c3", Some(8));
    let hi = n.b.input("c4", Some(16));
    let lateral = n.conv(lo, 8, 16, 1, 1);
    let up = n.op(
        Operator::new(OpKind::Upsample, attrs!["scale" => 2usize]).unwrap(),
        &[hi],
    );
    let s = n.binary(OpKind::Add, lateral, up);
    let y = conv_bn_act(&mut n, s, 16, 16, 3, 1, OpKind::ReLU);
    n.b.output(y, "p3");
    neck("fpn-lite", n)
}

fn concat_fuse(rng: ChaCha8Rng) -> Component {
    let mut n = Net::new(rng);
    let lo = n.b.input("c3", Some(8));
    let hi = n.b.input("c4", Some(16));
    let p = n.pool(OpKind::AvgPool2D, lo, 2, 2);
    let c = n.b.push(
        Operator::new(OpKind::Concat, attrs!["axis" => 0usize]).unwrap(),
        &[p, hi],
        vec![],
    );
    let y = conv_bn_act(&mut n, c, 24, 16, 1, 1, OpKind::Tanh);
    n.b.output(y, "p4");
    neck("concat-fuse", n)
}

fn head(id: &str, net: Net, scenarios: &[&str], inputs: Vec<usize>, outputs: Vec<usize>) -> Component {
    let probe = inputs
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let side = if inputs.len() > 1 && i == 0 { 16 } else { 8 };
            vec![c, side, side]
        })
        .collect();
    component(
        id,
        ComponentKind::Head,
        net,
        scenarios,
        Interface { inputs, outputs },
        probe,
        vec![],
    )
}

const ALL_SCENARIOS: [&str; 3] = ["camera-only", "lidar-only", "camera-lidar"];

fn det_head(rng: ChaCha8Rng) -> Component {
    let mut n = Net::new(rng);
    let x = n.b.input("feat", Some(16));
    let shared = n.conv(x, 16, 16, 3, 1);
    let shared = n.simple(OpKind::ReLU, shared);
    let cls = n.conv(shared, 16, 3, 1, 1);
    let cls = n.simple(OpKind::Sigmoid, cls);
    let bx = n.conv(shared, 16, 4, 1, 1);
    let dir = n.op(
        Operator::new(
            OpKind::MatMul,
            attrs!["in_features" => 16usize, "out_features" => 2usize],
        )
        .unwrap(),
        &[shared],
    );
    let dir = n.b.push(
        Operator::new(OpKind::Softmax, attrs!["axis" => 0usize]).unwrap(),
        &[dir],
        vec![],
    );
    n.b.output(cls, "cls");
    n.b.output(bx, "box");
    n.b.output(dir, "dir");
    head("det-head", n, &ALL_SCENARIOS, vec![16], vec![3, 4, 2])
}

fn center_head(rng: ChaCha8Rng) -> Component {
    let mut n = Net::new(rng);
    let x = n.b.input("feat", Some(16));
    let f = n.depthwise(x, 16, 1);
    let f = n.conv(f, 16, 8, 1, 1);
    let f = n.simple(OpKind::ReLU, f);
    let heat = n.conv(f, 8, 2, 1, 1);
    let heat = n.simple(OpKind::Sigmoid, heat);
    let off = n.conv(f, 8, 2, 1, 1);
    let off = n.simple(OpKind::Tanh, off);
    let peak = n.pool(OpKind::MaxPool2D, f, 3, 1);
    let size = n.conv(peak, 8, 3, 1, 1);
    n.b.output(heat, "heatmap");
    n.b.output(off, "offset");
    n.b.output(size, "size");
    head("center-head", n, &ALL_SCENARIOS, vec![16], vec![2, 2, 3])
}

fn yolo_head(rng: ChaCha8Rng) -> Component {
    let mut n = Net::new(rng);
    let lo = n.b.input("c3", Some(8));
    let hi = n.b.input("c4", Some(16));
    let p0 = n.conv(lo, 8, 6, 1, 1);
    let p0 = n.simple(OpKind::Identity, p0);
    let p1 = n.conv(hi, 16, 6, 1, 1);
    let p1 = n.simple(OpKind::LeakyReLU, p1);
    n.b.output(p0, "p0");
    n.b.output(p1, "p1");
    head("yolo-head", n, &["camera-only"], vec![8, 16], vec![6, 6])
}

/// Every seed component, each with its own weight stream.
pub fn seed_components() -> Vec<Component> {
    let builders: [fn(ChaCha8Rng) -> Component; 9] = [
        resnet_lite,
        vgg_lite,
        mobile_lite,
        darknet_lite,
        fpn_lite,
        concat_fuse,
        det_head,
        center_head,
        yolo_head,
    ];
    builders
        .iter()
        .enumerate()
        .map(|(i, f)| f(ChaCha8Rng::seed_from_u64(WEIGHT_SEED + i as u64)))
        .collect()
}

pub fn seed_repository() -> Repository {
    let mut repo = Repository::new();
    for c in seed_components() {
        repo.add_component(c).expect("seed components are valid and distinct");
    }
    repo
}
