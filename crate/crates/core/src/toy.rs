//! Hand-authored toy body models.
//!
//! All arrays are built from decimal literals with additions and
//! multiplications only, so definitions are bit-identical across platforms.

use std::fmt;
use std::str::FromStr;

use crate::body::{BodyError, BodyModelDef, BodyModelParts, PoseLayout};
use crate::camera::Point3;

pub const NUM_BETAS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyVariant {
    /// 16 body joints, 96 vertices.
    Body16,
    /// Body16 plus two 2-joint hand chains, a jaw and a rigid jaw tip; 128 vertices.
    WholeBody22,
}

impl ToyVariant {
    pub fn label(self) -> &'static str {
        match self {
            ToyVariant::Body16 => "body16",
            ToyVariant::WholeBody22 => "wholebody22",
        }
    }
}

impl fmt::Display for ToyVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ToyVariant {
    type Err = BodyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "body16" => Ok(ToyVariant::Body16),
            "wholebody22" => Ok(ToyVariant::WholeBody22),
            other => Err(BodyError::UnknownVariant(other.to_string())),
        }
    }
}

/// Builds a toy model from its label (`body16` or `wholebody22`).
pub fn make_toy_model_by_label(label: &str) -> Result<BodyModelDef, BodyError> {
    Ok(make_toy_model(label.parse()?))
}

struct JointSpec {
    name: &'static str,
    parent: Option<usize>,
    pos: [f64; 3],
    /// Shape offsets for bases 1..4 (basis 0 is a uniform 5% scale).
    shape: [[f64; 3]; 3],
}

const fn js(name: &'static str, parent: Option<usize>, pos: [f64; 3], shape: [[f64; 3]; 3]) -> JointSpec {
    JointSpec { name, parent, pos, shape }
}

const Z: [f64; 3] = [0.0, 0.0, 0.0];

// basis 1: arm length, basis 2: torso width, basis 3: leg length
const BODY: [JointSpec; 16] = [
    js("pelvis", None, [0.0, 0.0, 0.0], [Z, Z, Z]),
    js("spine", Some(0), [0.0, 0.25, 0.01], [Z, Z, Z]),
    js("neck", Some(1), [0.0, 0.5, 0.0], [Z, Z, Z]),
    js("head", Some(2), [0.0, 0.65, 0.03], [Z, Z, Z]),
    js("l_shoulder", Some(1), [0.18, 0.45, 0.0], [Z, [0.02, 0.0, 0.0], Z]),
    js("l_elbow", Some(4), [0.45, 0.44, -0.02], [[0.03, 0.0, 0.0], [0.02, 0.0, 0.0], Z]),
    js("l_wrist", Some(5), [0.7, 0.45, 0.01], [[0.06, 0.0, 0.0], [0.02, 0.0, 0.0], Z]),
    js("r_shoulder", Some(1), [-0.18, 0.45, 0.0], [Z, [-0.02, 0.0, 0.0], Z]),
    js("r_elbow", Some(7), [-0.45, 0.44, -0.02], [[-0.03, 0.0, 0.0], [-0.02, 0.0, 0.0], Z]),
    js("r_wrist", Some(8), [-0.7, 0.45, 0.01], [[-0.06, 0.0, 0.0], [-0.02, 0.0, 0.0], Z]),
    js("l_hip", Some(0), [0.1, -0.05, 0.0], [Z, [0.015, 0.0, 0.0], Z]),
    js("l_knee", Some(10), [0.11, -0.45, 0.03], [Z, [0.015, 0.0, 0.0], [0.0, -0.03, 0.0]]),
    js("l_ankle", Some(11), [0.1, -0.85, -0.01], [Z, [0.015, 0.0, 0.0], [0.0, -0.06, 0.0]]),
    js("r_hip", Some(0), [-0.1, -0.05, 0.0], [Z, [-0.015, 0.0, 0.0], Z]),
    js("r_knee", Some(13), [-0.11, -0.45, 0.03], [Z, [-0.015, 0.0, 0.0], [0.0, -0.03, 0.0]]),
    js("r_ankle", Some(14), [-0.1, -0.85, -0.01], [Z, [-0.015, 0.0, 0.0], [0.0, -0.06, 0.0]]),
];

const EXTRA: [JointSpec; 6] = [
    js("l_hand_0", Some(6), [0.78, 0.45, 0.02], [[0.06, 0.0, 0.0], [0.02, 0.0, 0.0], Z]),
    js("l_hand_1", Some(16), [0.86, 0.44, 0.04], [[0.06, 0.0, 0.0], [0.02, 0.0, 0.0], Z]),
    js("r_hand_0", Some(9), [-0.78, 0.45, 0.02], [[-0.06, 0.0, 0.0], [-0.02, 0.0, 0.0], Z]),
    js("r_hand_1", Some(18), [-0.86, 0.44, 0.04], [[-0.06, 0.0, 0.0], [-0.02, 0.0, 0.0], Z]),
    js("jaw", Some(3), [0.0, 0.61, 0.06], [Z, Z, Z]),
    js("jaw_tip", Some(20), [0.0, 0.56, 0.11], [Z, Z, Z]),
];

const SCALE_DIR: f64 = 0.05;
const RING: f64 = 0.04;

/// Vertex offsets around a joint: first two are bound rigidly to the joint,
/// the rest blend 70/30 with the parent.
const RING_OFFSETS: [[f64; 3]; 6] = [
    [0.0, 0.0, RING],
    [0.0, 0.0, -RING],
    [RING, 0.0, 0.0],
    [-RING, 0.0, 0.0],
    [0.0, RING, 0.0],
    [0.0, -RING, 0.0],
];

fn joint_shape_row(spec: &JointSpec) -> [Vec<f64>; 3] {
    std::array::from_fn(|axis| {
        let mut row = vec![SCALE_DIR * spec.pos[axis]];
        row.extend(spec.shape.iter().map(|basis| basis[axis]));
        row
    })
}

/// Deterministic toy model definition.
pub fn make_toy_model(variant: ToyVariant) -> BodyModelDef {
    let specs: Vec<&JointSpec> = match variant {
        ToyVariant::Body16 => BODY.iter().collect(),
        ToyVariant::WholeBody22 => BODY.iter().chain(EXTRA.iter()).collect(),
    };
    let j = specs.len();
    // vertices per joint: 6 on body joints and hand joints, 6 on the jaw, 2 on the jaw tip
    let per_joint = |k: usize| if specs[k].name == "jaw_tip" { 2 } else { 6 };

    let mut vertices = Vec::new();
    let mut weights = Vec::new();
    let mut vdirs = Vec::new();
    for (k, spec) in specs.iter().enumerate() {
        let jrow = joint_shape_row(spec);
        for (n, off) in RING_OFFSETS.iter().take(per_joint(k)).enumerate() {
            let pos = Point3::new(spec.pos[0] + off[0], spec.pos[1] + off[1], spec.pos[2] + off[2]);
            vertices.push(pos);
            let mut w = vec![0.0; j];
            match spec.parent {
                Some(p) if n >= 2 => {
                    w[k] = 0.7;
                    w[p] = 0.3;
                }
                _ => w[k] = 1.0,
            }
            weights.push(w);
            let row: [Vec<f64>; 3] = std::array::from_fn(|axis| {
                let mut r = jrow[axis].clone();
                r[0] += SCALE_DIR * off[axis];
                r
            });
            vdirs.push(row);
        }
    }

    let layout = match variant {
        ToyVariant::Body16 => PoseLayout {
            body: 0..16,
            lhand: 16..16,
            rhand: 16..16,
            jaw: 16..16,
        },
        ToyVariant::WholeBody22 => PoseLayout {
            body: 0..16,
            lhand: 16..18,
            rhand: 18..20,
            jaw: 20..21,
        },
    };

    BodyModelDef::new(BodyModelParts {
        parents: specs.iter().map(|s| s.parent).collect(),
        template_joints: specs.iter().map(|s| Point3::from(s.pos)).collect(),
        template_vertices: vertices,
        skinning_weights: weights,
        shape_dirs_joints: specs.iter().map(|s| joint_shape_row(s)).collect(),
        shape_dirs_vertices: vdirs,
        joint_names: specs.iter().map(|s| s.name.to_string()).collect(),
        layout,
    })
    .expect("toy model satisfies its invariants")
}
