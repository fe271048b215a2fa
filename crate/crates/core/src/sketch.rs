//! Scenario descriptions and the model skeletons derived from them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Pointcloud,
}

impl Modality {
    /// Label of the model input carrying this modality.
    pub fn label(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Pointcloud => "pointcloud",
        }
    }

    pub fn meta_label(self) -> &'static str {
        match self {
            Modality::Image => "camera_config",
            Modality::Pointcloud => "lidar_config",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub modalities: Vec<Modality>,
    /// One flag per entry of `modalities`.
    pub needs_preprocess: Vec<bool>,
    pub needs_postprocess: bool,
    pub needs_neck: bool,
}

impl Scenario {
    pub fn has(&self, m: Modality) -> bool {
        self.modalities.contains(&m)
    }

    pub fn preprocesses(&self, m: Modality) -> bool {
        self.modalities
            .iter()
            .zip(&self.needs_preprocess)
            .any(|(&x, &p)| x == m && p)
    }

    pub fn check(&self) -> Result<(), SketchError> {
        if self.modalities.is_empty() {
            return Err(SketchError::Malformed(format!(
                "scenario `{}` has no modalities",
                self.name
            )));
        }
        if self.needs_preprocess.len() != self.modalities.len() {
            return Err(SketchError::Malformed(format!(
                "scenario `{}` needs one preprocess flag per modality",
                self.name
            )));
        }
        Ok(())
    }
}

/// The shipped scenario set: camera only, LiDAR only, and camera plus LiDAR.
pub fn default_scenarios() -> Vec<Scenario> {
    vec![
        Scenario {
            name: "camera-only".into(),
            modalities: vec![Modality::Image],
            needs_preprocess: vec![false],
            needs_postprocess: true,
            needs_neck: false,
        },
        Scenario {
            name: "lidar-only".into(),
            modalities: vec![Modality::Pointcloud],
            needs_preprocess: vec![true],
            needs_postprocess: true,
            needs_neck: true,
        },
        Scenario {
            name: "camera-lidar".into(),
            modalities: vec![Modality::Image, Modality::Pointcloud],
            needs_preprocess: vec![false, false],
            needs_postprocess: true,
            needs_neck: true,
        },
    ]
}

pub fn find_scenario<'a>(set: &'a [Scenario], name: &str) -> Result<&'a Scenario, SketchError> {
    set.iter()
        .find(|s| s.name == name)
        .ok_or_else(|| SketchError::UnknownScenario(name.to_string()))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SketchError {
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("{0}")]
    Malformed(String),
}

/// Fixed library stages surrounding the mutable components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Pillar features to a dense pseudo-image channel set.
    PillarEncoder,
    /// Scatter of the encoded pillars onto the backbone input resolution.
    MiddleEncoder,
    /// Box decoding placeholder applied to every head output.
    BoxDecode,
    /// Pooled pillar statistics concatenated onto every head output.
    PointcloudFusion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    Preprocess(Stage),
    Backbone,
    Neck,
    Head,
    Postprocess(Stage),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub name: String,
    pub kind: SlotKind,
    pub mandatory: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Input(Modality),
    Slot(usize),
}

/// Every output port of `from` feeds the slot `to`, in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Wire {
    pub from: Endpoint,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sketch {
    pub scenario: Scenario,
    pub slots: Vec<Slot>,
    pub wiring: Vec<Wire>,
    /// Optional configuration inputs, carried by name only.
    pub meta_inputs: Vec<String>,
}

impl Sketch {
    pub fn slot_index(&self, kind: SlotKind) -> Option<usize> {
        self.slots.iter().position(|s| s.kind == kind)
    }

    pub fn has_neck(&self) -> bool {
        self.slot_index(SlotKind::Neck).is_some()
    }

    /// Slots feeding `to`, in wiring order.
    pub fn sources(&self, to: usize) -> Vec<&Endpoint> {
        self.wiring.iter().filter(|w| w.to == to).map(|w| &w.from).collect()
    }

    /// True when the slot wiring has no cycle.
    pub fn is_acyclic(&self) -> bool {
        let n = self.slots.len();
        let mut indeg = vec![0usize; n];
        for w in &self.wiring {
            if let Endpoint::Slot(_) = w.from {
                indeg[w.to] += 1;
            }
        }
        let mut stack: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(s) = stack.pop() {
            seen += 1;
            for w in &self.wiring {
                if w.from == Endpoint::Slot(s) {
                    indeg[w.to] -= 1;
                    if indeg[w.to] == 0 {
                        stack.push(w.to);
                    }
                }
            }
        }
        seen == n
    }
}

pub fn generate_sketch(scenario: &Scenario) -> Result<Sketch, SketchError> {
    scenario.check()?;
    let mut slots = Vec::new();
    let mut wiring = Vec::new();
    let add = |slots: &mut Vec<Slot>, name: &str, kind: SlotKind, mandatory: bool| {
        slots.push(Slot {
            name: name.to_string(),
            kind,
            mandatory,
        });
        slots.len() - 1
    };

    // The backbone consumes the image when there is one, else the point cloud.
    let primary = if scenario.has(Modality::Image) {
        Modality::Image
    } else {
        Modality::Pointcloud
    };
    let mut feed = Endpoint::Input(primary);
    if primary == Modality::Pointcloud && scenario.preprocesses(Modality::Pointcloud) {
        let pillar = add(
            &mut slots,
            "pillar_encoder",
            SlotKind::Preprocess(Stage::PillarEncoder),
            false,
        );
        wiring.push(Wire { from: feed, to: pillar });
        let middle = add(
            &mut slots,
            "middle_encoder",
            SlotKind::Preprocess(Stage::MiddleEncoder),
            false,
        );
        wiring.push(Wire {
            from: Endpoint::Slot(pillar),
            to: middle,
        });
        feed = Endpoint::Slot(middle);
    }
    let backbone = add(&mut slots, "backbone", SlotKind::Backbone, true);
    wiring.push(Wire {
        from: feed,
        to: backbone,
    });
    let mut feed = Endpoint::Slot(backbone);
    if scenario.needs_neck {
        let neck = add(&mut slots, "neck", SlotKind::Neck, false);
        wiring.push(Wire { from: feed, to: neck });
        feed = Endpoint::Slot(neck);
    }
    let head = add(&mut slots, "head", SlotKind::Head, true);
    wiring.push(Wire { from: feed, to: head });
    if scenario.needs_postprocess {
        let fuse_points = primary == Modality::Image && scenario.has(Modality::Pointcloud);
        let stage = if fuse_points {
            Stage::PointcloudFusion
        } else {
            Stage::BoxDecode
        };
        let post = add(&mut slots, "postprocess", SlotKind::Postprocess(stage), false);
        wiring.push(Wire {
            from: Endpoint::Slot(head),
            to: post,
        });
        if fuse_points {
            wiring.push(Wire {
                from: Endpoint::Input(Modality::Pointcloud),
                to: post,
            });
        }
    }
    Ok(Sketch {
        scenario: scenario.clone(),
        slots,
        wiring,
        meta_inputs: scenario.modalities.iter().map(|m| m.meta_label().to_string()).collect(),
    })
}
