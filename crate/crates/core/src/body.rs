//! Articulated parametric body: kinematic tree, linear shape blendshapes and
//! linear blend skinning, with an analytic reverse-mode Jacobian of the joints.

use std::fs;
use std::ops::Range;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::Point3;
use crate::rotation::{left_jacobian, rodrigues};

#[derive(Debug, Error)]
pub enum BodyError {
    #[error("parameters do not match the model layout: {0}")]
    UnboundParams(String),
    #[error("model invariant violated ({invariant}): {detail}")]
    InvariantViolation { invariant: &'static str, detail: String },
    #[error("unknown toy model variant {0:?}")]
    UnknownVariant(String),
    #[error("failed to parse model {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn violation(invariant: &'static str, detail: impl Into<String>) -> BodyError {
    BodyError::InvariantViolation {
        invariant,
        detail: detail.into(),
    }
}

/// Joint-index ranges of the four pose blocks. Joints outside every block are
/// not articulated (identity local rotation).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoseLayout {
    pub body: Range<usize>,
    pub lhand: Range<usize>,
    pub rhand: Range<usize>,
    pub jaw: Range<usize>,
}

impl PoseLayout {
    fn blocks(&self) -> [&Range<usize>; 4] {
        [&self.body, &self.lhand, &self.rhand, &self.jaw]
    }

    /// Number of pose parameters (3 per articulated joint).
    pub fn pose_dim(&self) -> usize {
        self.blocks().iter().map(|r| 3 * r.len()).sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayoutFile {
    body: [usize; 2],
    lhand: [usize; 2],
    rhand: [usize; 2],
    jaw: [usize; 2],
}

/// On-disk model layout. Shape directions are nested `N x 3 x B`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    parents: Vec<i64>,
    template_joints: Vec<[f64; 3]>,
    template_vertices: Vec<[f64; 3]>,
    skinning_weights: Vec<Vec<f64>>,
    shape_dirs_joints: Vec<[Vec<f64>; 3]>,
    shape_dirs_vertices: Vec<[Vec<f64>; 3]>,
    joint_names: Vec<String>,
    layout: LayoutFile,
}

/// Immutable, validated body model definition.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyModelDef {
    parents: Vec<Option<usize>>,
    template_joints: Vec<Point3>,
    template_vertices: Vec<Point3>,
    /// Row-major `V x J`.
    skinning_weights: Vec<f64>,
    /// `J` rows of `3 x B`, index `(j * 3 + axis) * B + b`.
    shape_dirs_joints: Vec<f64>,
    shape_dirs_vertices: Vec<f64>,
    num_betas: usize,
    joint_names: Vec<String>,
    layout: PoseLayout,
    order: Vec<usize>,
}

/// Raw model arrays handed to [`BodyModelDef::new`].
#[derive(Debug, Clone)]
pub struct BodyModelParts {
    pub parents: Vec<Option<usize>>,
    pub template_joints: Vec<Point3>,
    pub template_vertices: Vec<Point3>,
    pub skinning_weights: Vec<Vec<f64>>,
    pub shape_dirs_joints: Vec<[Vec<f64>; 3]>,
    pub shape_dirs_vertices: Vec<[Vec<f64>; 3]>,
    pub joint_names: Vec<String>,
    pub layout: PoseLayout,
}

fn flatten_dirs(rows: &[[Vec<f64>; 3]], what: &'static str) -> Result<(Vec<f64>, usize), BodyError> {
    let b = rows.first().map_or(0, |r| r[0].len());
    let mut flat = Vec::with_capacity(rows.len() * 3 * b);
    for (i, row) in rows.iter().enumerate() {
        for axis in row {
            if axis.len() != b {
                return Err(violation(
                    "shape basis dimension",
                    format!("{what} row {i} has {} coefficients, expected {b}", axis.len()),
                ));
            }
            flat.extend_from_slice(axis);
        }
    }
    Ok((flat, b))
}

impl BodyModelDef {
    /// Validates and assembles a model.
    pub fn new(parts: BodyModelParts) -> Result<Self, BodyError> {
        let j = parts.parents.len();
        if j == 0 {
            return Err(violation("kinematic tree", "model has no joints"));
        }
        if parts.template_joints.len() != j || parts.joint_names.len() != j {
            return Err(violation(
                "joint count",
                format!(
                    "{} parents, {} template joints, {} names",
                    j,
                    parts.template_joints.len(),
                    parts.joint_names.len()
                ),
            ));
        }
        let order = topological_order(&parts.parents)?;

        let v = parts.template_vertices.len();
        if parts.skinning_weights.len() != v {
            return Err(violation(
                "skinning weights",
                format!("{} weight rows for {v} vertices", parts.skinning_weights.len()),
            ));
        }
        let mut weights = Vec::with_capacity(v * j);
        for (i, row) in parts.skinning_weights.iter().enumerate() {
            if row.len() != j {
                return Err(violation("skinning weights", format!("row {i} has {} entries", row.len())));
            }
            if row.iter().any(|w| !(*w >= 0.0)) {
                return Err(violation("skinning weights", format!("row {i} has a negative weight")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(violation("skinning weights", format!("row {i} sums to {sum}")));
            }
            weights.extend_from_slice(row);
        }

        if parts.shape_dirs_joints.len() != j {
            return Err(violation("shape basis dimension", "shape_dirs_joints must have one row per joint"));
        }
        if parts.shape_dirs_vertices.len() != v {
            return Err(violation("shape basis dimension", "shape_dirs_vertices must have one row per vertex"));
        }
        let (sdj, bj) = flatten_dirs(&parts.shape_dirs_joints, "shape_dirs_joints")?;
        let (sdv, bv) = flatten_dirs(&parts.shape_dirs_vertices, "shape_dirs_vertices")?;
        if v > 0 && bj != bv {
            return Err(violation(
                "shape basis dimension",
                format!("joints use B={bj}, vertices use B={bv}"),
            ));
        }

        let mut claimed = vec![false; j];
        for r in parts.layout.blocks() {
            if r.start > r.end || r.end > j {
                return Err(violation("pose layout", format!("block {r:?} outside 0..{j}")));
            }
            for k in r.clone() {
                if claimed[k] {
                    return Err(violation("pose layout", format!("joint {k} is in two blocks")));
                }
                claimed[k] = true;
            }
        }

        let finite = parts
            .template_joints
            .iter()
            .chain(parts.template_vertices.iter())
            .all(|p| p.iter().all(|x| x.is_finite()))
            && sdj.iter().chain(sdv.iter()).all(|x| x.is_finite());
        if !finite {
            return Err(violation("finite values", "template or shape arrays contain NaN/Inf"));
        }

        Ok(Self {
            parents: parts.parents,
            template_joints: parts.template_joints,
            template_vertices: parts.template_vertices,
            skinning_weights: weights,
            shape_dirs_joints: sdj,
            shape_dirs_vertices: sdv,
            num_betas: bj,
            joint_names: parts.joint_names,
            layout: parts.layout,
            order,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.template_vertices.len()
    }

    pub fn num_betas(&self) -> usize {
        self.num_betas
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn template_joints(&self) -> &[Point3] {
        &self.template_joints
    }

    pub fn template_vertices(&self) -> &[Point3] {
        &self.template_vertices
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn layout(&self) -> &PoseLayout {
        &self.layout
    }

    pub fn skinning_weight(&self, vertex: usize, joint: usize) -> f64 {
        self.skinning_weights[vertex * self.joint_count() + joint]
    }

    pub fn shape_dir_joint(&self, joint: usize, axis: usize, basis: usize) -> f64 {
        self.shape_dirs_joints[(joint * 3 + axis) * self.num_betas + basis]
    }

    pub fn shape_dir_vertex(&self, vertex: usize, axis: usize, basis: usize) -> f64 {
        self.shape_dirs_vertices[(vertex * 3 + axis) * self.num_betas + basis]
    }

    /// Joints in an order where every parent precedes its children.
    pub fn topological_order(&self) -> &[usize] {
        &self.order
    }

    /// Indices of the body-block joints.
    pub fn body_joint_indices(&self) -> Vec<usize> {
        self.layout.body.clone().collect()
    }

    fn shaped(&self, base: &[Point3], dirs: &[f64], beta: &[f64]) -> Vec<Point3> {
        let b = self.num_betas;
        base.iter()
            .enumerate()
            .map(|(i, p)| {
                let mut out = *p;
                for axis in 0..3 {
                    let row = &dirs[(i * 3 + axis) * b..(i * 3 + axis + 1) * b];
                    out[axis] += row.iter().zip(beta).map(|(d, c)| d * c).sum::<f64>();
                }
                out
            })
            .collect()
    }

    /// Rest-pose joints with shape offsets applied.
    pub fn shaped_joints(&self, beta: &[f64]) -> Vec<Point3> {
        self.shaped(&self.template_joints, &self.shape_dirs_joints, beta)
    }

    /// Rest-pose vertices with shape offsets applied.
    pub fn shaped_vertices(&self, beta: &[f64]) -> Vec<Point3> {
        self.shaped(&self.template_vertices, &self.shape_dirs_vertices, beta)
    }

    pub fn from_json_str(text: &str, origin: &str) -> Result<Self, BodyError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| BodyError::Parse {
            path: origin.to_string(),
            msg: e.to_string(),
        })?;
        let j = file.parents.len();
        let parents = file
            .parents
            .iter()
            .map(|&p| match p {
                -1 => Ok(None),
                p if p >= 0 && (p as usize) < j => Ok(Some(p as usize)),
                p => Err(violation("kinematic tree", format!("parent index {p} out of range"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let to_pts = |v: &[[f64; 3]]| v.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect();
        let range = |r: [usize; 2]| r[0]..r[1];
        Self::new(BodyModelParts {
            parents,
            template_joints: to_pts(&file.template_joints),
            template_vertices: to_pts(&file.template_vertices),
            skinning_weights: file.skinning_weights,
            shape_dirs_joints: file.shape_dirs_joints,
            shape_dirs_vertices: file.shape_dirs_vertices,
            joint_names: file.joint_names,
            layout: PoseLayout {
                body: range(file.layout.body),
                lhand: range(file.layout.lhand),
                rhand: range(file.layout.rhand),
                jaw: range(file.layout.jaw),
            },
        })
    }

    pub fn to_json_string(&self) -> String {
        let b = self.num_betas;
        let unflatten = |flat: &[f64], n: usize| -> Vec<[Vec<f64>; 3]> {
            (0..n)
                .map(|i| std::array::from_fn(|axis| flat[(i * 3 + axis) * b..(i * 3 + axis + 1) * b].to_vec()))
                .collect()
        };
        let j = self.joint_count();
        let file = ModelFile {
            parents: self.parents.iter().map(|p| p.map_or(-1, |p| p as i64)).collect(),
            template_joints: self.template_joints.iter().map(|p| [p.x, p.y, p.z]).collect(),
            template_vertices: self.template_vertices.iter().map(|p| [p.x, p.y, p.z]).collect(),
            skinning_weights: self.skinning_weights.chunks(j).map(|r| r.to_vec()).collect(),
            shape_dirs_joints: unflatten(&self.shape_dirs_joints, j),
            shape_dirs_vertices: unflatten(&self.shape_dirs_vertices, self.vertex_count()),
            joint_names: self.joint_names.clone(),
            layout: LayoutFile {
                body: [self.layout.body.start, self.layout.body.end],
                lhand: [self.layout.lhand.start, self.layout.lhand.end],
                rhand: [self.layout.rhand.start, self.layout.rhand.end],
                jaw: [self.layout.jaw.start, self.layout.jaw.end],
            },
        };
        serde_json::to_string(&file).expect("model serializes")
    }
}

fn topological_order(parents: &[Option<usize>]) -> Result<Vec<usize>, BodyError> {
    let j = parents.len();
    let roots = parents.iter().filter(|p| p.is_none()).count();
    if roots != 1 {
        return Err(violation("kinematic tree", format!("expected exactly one root, found {roots}")));
    }
    let mut children = vec![Vec::new(); j];
    let mut root = 0;
    for (k, p) in parents.iter().enumerate() {
        match p {
            Some(p) if *p >= j => {
                return Err(violation("kinematic tree", format!("parent index {p} out of range")))
            }
            Some(p) => children[*p].push(k),
            None => root = k,
        }
    }
    let mut order = Vec::with_capacity(j);
    let mut stack = vec![root];
    while let Some(k) = stack.pop() {
        order.push(k);
        stack.extend(children[k].iter().rev());
    }
    if order.len() != j {
        return Err(violation("kinematic tree", "parent array contains a cycle"));
    }
    Ok(order)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<BodyModelDef, BodyError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    BodyModelDef::from_json_str(&text, &path.display().to_string())
}

pub fn save_model(model: &BodyModelDef, path: impl AsRef<Path>) -> Result<(), BodyError> {
    fs::write(path, model.to_json_string())?;
    Ok(())
}

/// Pose, shape and translation parameters. Also used to hold gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseShapeParams {
    pub theta_body: Vec<f64>,
    pub theta_lhand: Vec<f64>,
    pub theta_rhand: Vec<f64>,
    pub theta_jaw: Vec<f64>,
    pub beta: Vec<f64>,
    pub translation: [f64; 3],
}

impl PoseShapeParams {
    pub fn zeros(model: &BodyModelDef) -> Self {
        let l = model.layout();
        Self {
            theta_body: vec![0.0; 3 * l.body.len()],
            theta_lhand: vec![0.0; 3 * l.lhand.len()],
            theta_rhand: vec![0.0; 3 * l.rhand.len()],
            theta_jaw: vec![0.0; 3 * l.jaw.len()],
            beta: vec![0.0; model.num_betas()],
            translation: [0.0; 3],
        }
    }

    pub fn check(&self, model: &BodyModelDef) -> Result<(), BodyError> {
        let l = model.layout();
        let expect = [
            ("theta_body", self.theta_body.len(), 3 * l.body.len()),
            ("theta_lhand", self.theta_lhand.len(), 3 * l.lhand.len()),
            ("theta_rhand", self.theta_rhand.len(), 3 * l.rhand.len()),
            ("theta_jaw", self.theta_jaw.len(), 3 * l.jaw.len()),
            ("beta", self.beta.len(), model.num_betas()),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(BodyError::UnboundParams(format!("{name} has {got} values, model expects {want}")));
            }
        }
        if !self.blocks().iter().flat_map(|b| b.iter()).chain(self.translation.iter()).all(|v| v.is_finite()) {
            return Err(BodyError::UnboundParams("non-finite parameter".into()));
        }
        Ok(())
    }

    fn blocks(&self) -> [&Vec<f64>; 5] {
        [&self.theta_body, &self.theta_lhand, &self.theta_rhand, &self.theta_jaw, &self.beta]
    }

    pub fn translation_vec(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    /// Concatenated whole-body pose `{body, lhand, rhand, jaw}`.
    pub fn whole_body_pose(&self) -> Vec<f64> {
        let mut out = self.theta_body.clone();
        out.extend_from_slice(&self.theta_lhand);
        out.extend_from_slice(&self.theta_rhand);
        out.extend_from_slice(&self.theta_jaw);
        out
    }

    /// Inverse of [`whole_body_pose`](Self::whole_body_pose). Block sizes are kept.
    pub fn set_whole_body_pose(&mut self, pose: &[f64]) {
        let mut offset = 0;
        for block in [&mut self.theta_body, &mut self.theta_lhand, &mut self.theta_rhand, &mut self.theta_jaw] {
            let n = block.len();
            block.copy_from_slice(&pose[offset..offset + n]);
            offset += n;
        }
    }

    /// Axis-angle per joint, zero for non-articulated joints.
    pub fn joint_axis_angles(&self, model: &BodyModelDef) -> Vec<Vector3<f64>> {
        let mut out = vec![Vector3::zeros(); model.joint_count()];
        let l = model.layout();
        for (range, block) in [
            (&l.body, &self.theta_body),
            (&l.lhand, &self.theta_lhand),
            (&l.rhand, &self.theta_rhand),
            (&l.jaw, &self.theta_jaw),
        ] {
            for (k, joint) in range.clone().enumerate() {
                out[joint] = Vector3::new(block[3 * k], block[3 * k + 1], block[3 * k + 2]);
            }
        }
        out
    }

    fn scatter_joint_vectors(&mut self, model: &BodyModelDef, per_joint: &[Vector3<f64>]) {
        let l = model.layout().clone();
        for (range, block) in [
            (l.body, &mut self.theta_body),
            (l.lhand, &mut self.theta_lhand),
            (l.rhand, &mut self.theta_rhand),
            (l.jaw, &mut self.theta_jaw),
        ] {
            for (k, joint) in range.enumerate() {
                block[3 * k..3 * k + 3].copy_from_slice(per_joint[joint].as_slice());
            }
        }
    }

    /// Flat view in the order body, lhand, rhand, jaw, beta, translation.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.whole_body_pose();
        out.extend_from_slice(&self.beta);
        out.extend_from_slice(&self.translation);
        out
    }

    /// Inverse of [`to_flat`](Self::to_flat) onto a template with matching block sizes.
    pub fn from_flat(template: &Self, flat: &[f64]) -> Self {
        let mut out = template.clone();
        let pose_len = out.whole_body_pose().len();
        out.set_whole_body_pose(&flat[..pose_len]);
        let nb = out.beta.len();
        out.beta.copy_from_slice(&flat[pose_len..pose_len + nb]);
        out.translation.copy_from_slice(&flat[pose_len + nb..pose_len + nb + 3]);
        out
    }

    /// `self += scale * other`, blockwise.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        let pairs = [
            (&mut self.theta_body, &other.theta_body),
            (&mut self.theta_lhand, &other.theta_lhand),
            (&mut self.theta_rhand, &other.theta_rhand),
            (&mut self.theta_jaw, &other.theta_jaw),
            (&mut self.beta, &other.beta),
        ];
        for (a, b) in pairs {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        for (x, y) in self.translation.iter_mut().zip(other.translation) {
            *x += scale * y;
        }
    }
}

/// Posed skeleton with the intermediate quantities needed for the Jacobian.
#[derive(Debug, Clone)]
pub struct Posed {
    pub joints: Vec<Point3>,
    pub world_rotations: Vec<Matrix3<f64>>,
    pub rest_joints: Vec<Point3>,
    pub axis_angles: Vec<Vector3<f64>>,
    /// `joints[k] - rest_joints[k] - t` accumulated along the chain.
    pub shifts: Vec<Vector3<f64>>,
}

/// Forward kinematics: shaped rest joints, rotations chained from the root,
/// translation added to every joint.
pub fn pose_skeleton(model: &BodyModelDef, params: &PoseShapeParams) -> Result<Posed, BodyError> {
    params.check(model)?;
    let rest = model.shaped_joints(&params.beta);
    let axis_angles = params.joint_axis_angles(model);
    let j = model.joint_count();
    let mut joints = vec![Point3::zeros(); j];
    let mut world = vec![Matrix3::identity(); j];
    let t = params.translation_vec();
    // displacement from the rest position, accumulated so that the identity
    // pose reproduces the template without rounding
    let mut shift = vec![Vector3::zeros(); j];
    for &k in model.topological_order() {
        let local = rodrigues(&axis_angles[k]);
        match model.parents()[k] {
            None => world[k] = local,
            Some(p) => {
                world[k] = world[p] * local;
                let bone = rest[k] - rest[p];
                shift[k] = shift[p] + (world[p] * bone - bone);
            }
        }
        joints[k] = rest[k] + shift[k] + t;
    }
    Ok(Posed {
        joints,
        world_rotations: world,
        rest_joints: rest,
        axis_angles,
        shifts: shift,
    })
}

/// Posed joint positions.
pub fn forward_kinematics(model: &BodyModelDef, params: &PoseShapeParams) -> Result<Vec<Point3>, BodyError> {
    Ok(pose_skeleton(model, params)?.joints)
}

/// Linear blend skinning of the shaped template.
pub fn skin_vertices(model: &BodyModelDef, params: &PoseShapeParams) -> Result<Vec<Point3>, BodyError> {
    let posed = pose_skeleton(model, params)?;
    let rest_vertices = model.shaped_vertices(&params.beta);
    let j = model.joint_count();
    let t = params.translation_vec();
    Ok(rest_vertices
        .iter()
        .enumerate()
        .map(|(v, p)| {
            // sum_k w_k (R_k (p - J_k) + J'_k), rearranged around p
            let mut delta = Vector3::zeros();
            let mut weight_sum = 0.0;
            for k in 0..j {
                let w = model.skinning_weight(v, k);
                if w != 0.0 {
                    let arm = p - posed.rest_joints[k];
                    delta += (posed.world_rotations[k] * arm - arm + posed.shifts[k]) * w;
                    weight_sum += w;
                }
            }
            p + delta + t * weight_sum
        })
        .collect())
}

/// Pulls back per-joint cotangents `dE/dJ_k` to parameter space.
pub fn skeleton_vjp(model: &BodyModelDef, posed: &Posed, joint_grads: &[Vector3<f64>]) -> PoseShapeParams {
    let j = model.joint_count();
    // subtree sums of gradients and of (position x gradient)
    let mut g_sum = joint_grads.to_vec();
    let mut cross_sum: Vec<Vector3<f64>> = (0..j).map(|k| posed.joints[k].cross(&joint_grads[k])).collect();
    for &k in model.topological_order().iter().rev() {
        if let Some(p) = model.parents()[k] {
            let (g, c) = (g_sum[k], cross_sum[k]);
            g_sum[p] += g;
            cross_sum[p] += c;
        }
    }

    let mut grad_axis = vec![Vector3::zeros(); j];
    let mut grad_rest = vec![Vector3::zeros(); j];
    let mut root_sum = Vector3::zeros();
    for k in 0..j {
        let parent_rot = model.parents()[k].map_or(Matrix3::identity(), |p| posed.world_rotations[p]);
        let moment = cross_sum[k] - posed.joints[k].cross(&g_sum[k]);
        grad_axis[k] = left_jacobian(&posed.axis_angles[k]).transpose() * (parent_rot.transpose() * moment);
        grad_rest[k] = parent_rot.transpose() * g_sum[k]
            - posed.world_rotations[k].transpose() * (g_sum[k] - joint_grads[k]);
        if model.parents()[k].is_none() {
            root_sum = g_sum[k];
        }
    }

    let mut out = PoseShapeParams {
        theta_body: vec![0.0; 3 * model.layout().body.len()],
        theta_lhand: vec![0.0; 3 * model.layout().lhand.len()],
        theta_rhand: vec![0.0; 3 * model.layout().rhand.len()],
        theta_jaw: vec![0.0; 3 * model.layout().jaw.len()],
        beta: vec![0.0; model.num_betas()],
        translation: [root_sum.x, root_sum.y, root_sum.z],
    };
    out.scatter_joint_vectors(model, &grad_axis);
    for (b, slot) in out.beta.iter_mut().enumerate() {
        *slot = (0..j)
            .map(|k| (0..3).map(|a| model.shape_dir_joint(k, a, b) * grad_rest[k][a]).sum::<f64>())
            .sum();
    }
    out
}
