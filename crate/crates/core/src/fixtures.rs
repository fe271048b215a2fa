//! Synthetic scenario inputs and the preprocessing that turns them into
//! model inputs: image rescale/crop and point-cloud pillar binning.

use crate::exchange::{read_tensors, ExchangeError};
use crate::exec::TensorMap;
use crate::sketch::{Modality, Scenario};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use thiserror::Error;

/// Raw camera frame size before scaling and cropping.
pub const RAW_IMAGE: (usize, usize) = (48, 40);
/// Image size expected by every backbone.
pub const IMAGE_TARGET: (usize, usize) = (32, 32);
pub const POINTS: usize = 256;
pub const POINT_BOUNDS: Bounds = Bounds {
    min: [0.0, 0.0, 0.0],
    max: [20.0, 20.0, 4.0],
};
pub const PILLAR_GRID: (usize, usize) = (8, 8);
pub const MAX_PER_PILLAR: usize = 8;
/// Per-pillar features: normalized count, mean x, mean y, mean z, mean intensity.
pub const PILLAR_FEATURES: usize = 5;

/// Shape of the model input carrying `m` after preprocessing.
pub fn input_shape(m: Modality) -> Vec<usize> {
    match m {
        Modality::Image => vec![3, IMAGE_TARGET.0, IMAGE_TARGET.1],
        Modality::Pointcloud => vec![PILLAR_FEATURES, PILLAR_GRID.0, PILLAR_GRID.1],
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FixtureError {
    #[error("target size {0}x{1} has a zero side")]
    DegenerateTarget(usize, usize),
    #[error("image must have shape [3,h,w], got {0:?}")]
    BadImage(Vec<usize>),
    #[error("point cloud must have shape [n,4] with n >= 1, got {0:?}")]
    BadPoints(Vec<usize>),
    #[error("missing input `{0}`")]
    Missing(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: [f32; 3],
    pub max: [f32; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    /// Rows of (x, y, z, intensity).
    pub points: Vec<[f32; 4]>,
    pub bounds: Bounds,
}

impl PointCloud {
    pub fn to_tensor(&self, label: &str) -> Tensor {
        let data = self.points.iter().flatten().copied().collect();
        Tensor::new(label, vec![self.points.len(), 4], data).expect("n x 4 layout")
    }

    /// Bounds default to the fixture box.
    pub fn from_tensor(t: &Tensor) -> Result<Self, FixtureError> {
        if t.shape().len() != 2 || t.shape()[1] != 4 {
            return Err(FixtureError::BadPoints(t.shape().to_vec()));
        }
        let points = t.data().chunks(4).map(|c| [c[0], c[1], c[2], c[3]]).collect();
        Ok(Self {
            points,
            bounds: POINT_BOUNDS,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PillarGrid {
    pub rows: usize,
    pub cols: usize,
    /// Cell extent along (x, y).
    pub cell: (f32, f32),
    /// Points per cell, row-major.
    pub counts: Vec<usize>,
    /// `[PILLAR_FEATURES, rows, cols]`, zero where unoccupied.
    pub features: Vec<f32>,
}

impl PillarGrid {
    pub fn occupancy(&self) -> Vec<bool> {
        self.counts.iter().map(|&c| c > 0).collect()
    }

    pub fn to_tensor(&self, label: &str) -> Tensor {
        Tensor::new(
            label,
            vec![PILLAR_FEATURES, self.rows, self.cols],
            self.features.clone(),
        )
        .expect("feature layout")
    }
}

/// Unpreprocessed sensor data for one iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum RawInput {
    Image(Tensor),
    Points(PointCloud),
}

fn scenario_rng(scenario: &Scenario, seed: u64) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in scenario.name.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

/// Deterministic raw inputs for `scenario`, one per modality.
pub fn generate_inputs(scenario: &Scenario, seed: u64) -> BTreeMap<String, RawInput> {
    let mut rng = scenario_rng(scenario, seed);
    let mut out = BTreeMap::new();
    for &m in &scenario.modalities {
        let input = match m {
            Modality::Image => {
                let (h, w) = RAW_IMAGE;
                let data = (0..3 * h * w).map(|_| rng.gen::<f32>()).collect();
                RawInput::Image(Tensor::new(m.label(), vec![3, h, w], data).unwrap())
            }
            Modality::Pointcloud => {
                let b = POINT_BOUNDS;
                let points = (0..POINTS)
                    .map(|_| {
                        [
                            rng.gen_range(b.min[0]..b.max[0]),
                            rng.gen_range(b.min[1]..b.max[1]),
                            rng.gen_range(b.min[2]..b.max[2]),
                            rng.gen::<f32>(),
                        ]
                    })
                    .collect();
                RawInput::Points(PointCloud { points, bounds: b })
            }
        };
        out.insert(m.label().to_string(), input);
    }
    out
}

/// Bilinear resize (half-pixel centers) so the shorter side meets the
/// target, then a center crop to exactly `target`. Output is clamped to the
/// source value range.
pub fn preprocess_image(image: &Tensor, target: (usize, usize)) -> Result<Tensor, FixtureError> {
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(FixtureError::DegenerateTarget(th, tw));
    }
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(FixtureError::BadImage(s.to_vec()));
    }
    let (h, w) = (s[1], s[2]);
    let scale = f64::max(th as f64 / h as f64, tw as f64 / w as f64);
    let nh = ((h as f64 * scale).round() as usize).max(th);
    let nw = ((w as f64 * scale).round() as usize).max(tw);
    let (sy, sx) = (h as f64 / nh as f64, w as f64 / nw as f64);
    let (oy, ox) = ((nh - th) / 2, (nw - tw) / 2);
    let src = image.data();
    let lo = src.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = src.iter().copied().fold(f32::NEG_INFINITY, f32::max);

    let coord = |dst: usize, ratio: f64, len: usize| {
        let c = ((dst as f64 + 0.5) * ratio - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = c.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, (c - i0 as f64) as f32)
    };
    let mut out = Vec::with_capacity(3 * th * tw);
    for ch in 0..3 {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..th {
            let (y0, y1, fy) = coord(y + oy, sy, h);
            for x in 0..tw {
                let (x0, x1, fx) = coord(x + ox, sx, w);
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push((top * (1.0 - fy) + bottom * fy).clamp(lo, hi));
            }
        }
    }
    Ok(Tensor::new(image.label(), vec![3, th, tw], out).unwrap())
}

/// Bins points into a `grid` of (rows along y, cols along x) pillars.
/// Points outside the bounds land in the nearest boundary cell.
pub fn voxelize_points(pc: &PointCloud, grid: (usize, usize), max_per_pillar: usize) -> PillarGrid {
    let (rows, cols) = grid;
    let b = pc.bounds;
    let cell = ((b.max[0] - b.min[0]) / cols as f32, (b.max[1] - b.min[1]) / rows as f32);
    let bin = |v: f32, lo: f32, size: f32, n: usize| (((v - lo) / size).floor().max(0.0) as usize).min(n - 1);
    let cells = rows * cols;
    let mut counts = vec![0usize; cells];
    let mut sums = vec![[0.0f64; 4]; cells];
    for p in &pc.points {
        let c = bin(p[1], b.min[1], cell.1, rows) * cols + bin(p[0], b.min[0], cell.0, cols);
        counts[c] += 1;
        for k in 0..4 {
            sums[c][k] += p[k] as f64;
        }
    }
    let mut features = vec![0.0f32; PILLAR_FEATURES * cells];
    for c in 0..cells {
        if counts[c] == 0 {
            continue;
        }
        let n = counts[c] as f64;
        features[c] = (n / max_per_pillar.max(1) as f64) as f32;
        for k in 0..4 {
            features[(k + 1) * cells + c] = (sums[c][k] / n) as f32;
        }
    }
    PillarGrid {
        rows,
        cols,
        cell,
        counts,
        features,
    }
}

/// Turns raw inputs into the model's entry tensors for `scenario`.
pub fn model_inputs(scenario: &Scenario, raw: &BTreeMap<String, RawInput>) -> Result<TensorMap, FixtureError> {
    let mut out = TensorMap::new();
    for &m in &scenario.modalities {
        let label = m.label();
        let tensor = match raw.get(label) {
            Some(RawInput::Image(t)) => preprocess_image(t, IMAGE_TARGET)?.relabel(label),
            Some(RawInput::Points(pc)) => voxelize_points(pc, PILLAR_GRID, MAX_PER_PILLAR).to_tensor(label),
            None => return Err(FixtureError::Missing(label.to_string())),
        };
        out.insert(label.to_string(), tensor);
    }
    Ok(out)
}

/// Reads raw inputs from tensor-exchange text: `image` as `[3,h,w]`,
/// `pointcloud` as `[n,4]`. Unknown labels are ignored.
pub fn load_inputs(text: &str) -> Result<BTreeMap<String, RawInput>, LoadError> {
    let mut out = BTreeMap::new();
    for t in read_tensors(text)? {
        match t.label() {
            "image" => {
                if t.shape().len() != 3 || t.shape()[0] != 3 {
                    return Err(FixtureError::BadImage(t.shape().to_vec()).into());
                }
                out.insert("image".to_string(), RawInput::Image(t));
            }
            "pointcloud" => {
                out.insert("pointcloud".to_string(), RawInput::Points(PointCloud::from_tensor(&t)?));
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Raw inputs as tensors, in the layout `load_inputs` reads.
pub fn raw_tensors(raw: &BTreeMap<String, RawInput>) -> Vec<Tensor> {
    raw.iter()
        .map(|(label, r)| match r {
            RawInput::Image(t) => t.clone(),
            RawInput::Points(pc) => pc.to_tensor(label),
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error(transparent)]
    Exchange(#[from] ExchangeError),
    #[error(transparent)]
    Fixture(#[from] FixtureError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exchange::write_tensors;
    use crate::sketch::default_scenarios;
    use proptest::prelude::*;

    fn scenario(name: &str) -> Scenario {
        default_scenarios().into_iter().find(|s| s.name == name).unwrap()
    }

    #[test]
    fn inputs_are_deterministic_and_seed_dependent() {
        let sc = scenario("camera-lidar");
        let a = generate_inputs(&sc, 7);
        assert_eq!(a, generate_inputs(&sc, 7));
        assert_eq!(a.keys().collect::<Vec<_>>(), vec!["image", "pointcloud"]);
        for seed in 8..16 {
            assert_ne!(a, generate_inputs(&sc, seed));
        }
        match &a["image"] {
            RawInput::Image(t) => assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v))),
            _ => panic!("image expected"),
        }
        match &a["pointcloud"] {
            RawInput::Points(pc) => {
                assert_eq!(pc.points.len(), POINTS);
                assert!(pc
                    .points
                    .iter()
                    .all(|p| (0..3).all(|k| p[k] >= 0.0 && p[k] < POINT_BOUNDS.max[k])));
            }
            _ => panic!("points expected"),
        }
    }

    #[test]
    fn preprocess_identity_and_constant() {
        let data: Vec<f32> = (0..3 * 32 * 32).map(|i| (i % 97) as f32 / 97.0).collect();
        let img = Tensor::new("image", vec![3, 32, 32], data).unwrap();
        assert_eq!(preprocess_image(&img, (32, 32)).unwrap(), img);
        let c = Tensor::filled("image", vec![3, 48, 40], 0.37);
        let out = preprocess_image(&c, (32, 32)).unwrap();
        assert_eq!(out.shape(), &[3, 32, 32]);
        assert!(out.data().iter().all(|&v| v == 0.37));
        assert_eq!(preprocess_image(&c, (0, 4)), Err(FixtureError::DegenerateTarget(0, 4)));
    }

    #[test]
    fn downscale_corner_is_block_average() {
        let data: Vec<f32> = (0..3 * 64 * 64).map(|i| ((i * 7919) % 1000) as f32 / 1000.0).collect();
        let img = Tensor::new("image", vec![3, 64, 64], data.clone()).unwrap();
        let out = preprocess_image(&img, (32, 32)).unwrap();
        for ch in 0..3 {
            let p = |y: usize, x: usize| data[ch * 4096 + y * 64 + x];
            let avg = (p(0, 0) + p(0, 1) + p(1, 0) + p(1, 1)) / 4.0;
            assert!((out.data()[ch * 1024] - avg).abs() < 1e-6);
        }
    }

    #[test]
    fn single_cell_and_distinct_cells() {
        let b = POINT_BOUNDS;
        let pc = PointCloud {
            points: vec![[1.0, 1.0, 1.0, 0.5]; 5],
            bounds: b,
        };
        let g = voxelize_points(&pc, (8, 8), 8);
        assert_eq!(g.occupancy().iter().filter(|&&o| o).count(), 1);
        assert_eq!(g.counts[0], 5);

        let centers = [(1.25, 1.25), (3.75, 1.25), (1.25, 18.75), (18.75, 18.75)];
        let pc = PointCloud {
            points: centers.iter().map(|&(x, y)| [x, y, 2.0, 0.25]).collect(),
            bounds: b,
        };
        let g = voxelize_points(&pc, (8, 8), 8);
        assert_eq!(g.occupancy().iter().filter(|&&o| o).count(), 4);
        for &(x, y) in &centers {
            let c = (y / 2.5) as usize * 8 + (x / 2.5) as usize;
            assert_eq!(g.features[64 + c], x);
            assert_eq!(g.features[128 + c], y);
            assert_eq!(g.features[192 + c], 2.0);
            assert_eq!(g.features[256 + c], 0.25);
        }
    }

    #[test]
    fn voxelization_matches_brute_force_binning() {
        let sc = scenario("lidar-only");
        for seed in 0..20 {
            let RawInput::Points(pc) = &generate_inputs(&sc, seed)["pointcloud"] else {
                panic!()
            };
            let g = voxelize_points(pc, (8, 8), MAX_PER_PILLAR);
            // Independent binning: compare each point against every cell's bounds.
            for row in 0..8 {
                for col in 0..8 {
                    let (x0, y0) = (col as f32 * 2.5, row as f32 * 2.5);
                    let members: Vec<&[f32; 4]> = pc
                        .points
                        .iter()
                        .filter(|p| p[0] >= x0 && p[0] < x0 + 2.5 && p[1] >= y0 && p[1] < y0 + 2.5)
                        .collect();
                    let c = row * 8 + col;
                    assert_eq!(g.counts[c], members.len());
                    for k in 0..4 {
                        let mean = if members.is_empty() {
                            0.0
                        } else {
                            members.iter().map(|p| p[k] as f64).sum::<f64>() / members.len() as f64
                        };
                        assert!((g.features[(k + 1) * 64 + c] as f64 - mean).abs() < 1e-5);
                    }
                }
            }
        }
    }

    #[test]
    fn outside_points_clip_to_boundary() {
        let pc = PointCloud {
            points: vec![[-3.0, 25.0, 0.0, 0.0], [40.0, -1.0, 0.0, 0.0]],
            bounds: POINT_BOUNDS,
        };
        let g = voxelize_points(&pc, (8, 8), 8);
        assert_eq!(g.counts[7 * 8], 1);
        assert_eq!(g.counts[7], 1);
    }

    #[test]
    fn model_inputs_shapes_and_round_trip() {
        for sc in default_scenarios() {
            let raw = generate_inputs(&sc, 3);
            let m = model_inputs(&sc, &raw).unwrap();
            if sc.has(Modality::Image) {
                assert_eq!(m["image"].shape(), &[3, 32, 32]);
            }
            if sc.has(Modality::Pointcloud) {
                assert_eq!(m["pointcloud"].shape(), &[5, 8, 8]);
            }
            let text = write_tensors(&raw_tensors(&raw));
            assert_eq!(load_inputs(&text).unwrap(), raw);
        }
    }

    proptest! {
        #[test]
        fn voxelization_conserves_mass(
            pts in prop::collection::vec((-5.0f32..25.0, -5.0f32..25.0, 0.0f32..4.0, 0.0f32..1.0), 1..300),
            rows in 1usize..10, cols in 1usize..10,
        ) {
            let pc = PointCloud {
                points: pts.iter().map(|&(x, y, z, i)| [x, y, z, i]).collect(),
                bounds: POINT_BOUNDS,
            };
            let g = voxelize_points(&pc, (rows, cols), 4);
            prop_assert_eq!(g.counts.iter().sum::<usize>(), pts.len());
            for c in 0..rows * cols {
                if g.counts[c] == 0 {
                    for k in 0..PILLAR_FEATURES {
                        prop_assert_eq!(g.features[k * rows * cols + c], 0.0);
                    }
                }
            }
        }

        #[test]
        fn preprocess_stays_in_source_range(
            h in 1usize..20, w in 1usize..20, th in 1usize..24, tw in 1usize..24, seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..3 * h * w).map(|_| rand::Rng::gen_range(&mut rng, -2.0f32..3.0)).collect();
            let lo = data.iter().copied().fold(f32::INFINITY, f32::min);
            let hi = data.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let img = Tensor::new("image", vec![3, h, w], data).unwrap();
            let out = preprocess_image(&img, (th, tw)).unwrap();
            prop_assert_eq!(out.shape(), &[3, th, tw][..]);
            prop_assert!(out.data().iter().all(|&v| v >= lo && v <= hi));
        }
    }
}
