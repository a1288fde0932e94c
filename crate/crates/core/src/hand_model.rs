//! Articulated hand with anatomically aligned joint axes.
//!
//! The skeleton follows the 16-joint MANO topology (wrist plus three joints
//! per finger, ordered index, middle, pinky, ring, thumb). Every articulated
//! joint carries a local `(flexion, abduction, twist)` frame: twist runs
//! along the bone, flexion is perpendicular to the bone and the palm-side
//! normal, abduction completes the right-handed frame. Local rotations are
//! applied flexion first, then abduction, then twist:
//! `R_local = R_twist(θt) · R_abd(θa) · R_flex(θf)`.

use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{Isometry3, Matrix3, Translation3, Unit, UnitQuaternion};
use thiserror::Error;

use crate::geometry::{capsule, transform_point, TriMesh, Vec3};

pub const NUM_JOINTS: usize = 16;
pub const NUM_ARTICULATED: usize = 15;
pub const NUM_ANGLES: usize = 45;
/// 16 joints followed by 5 fingertips.
pub const NUM_KEYPOINTS: usize = 21;

pub const FLEX: usize = 0;
pub const ABD: usize = 1;
pub const TWIST: usize = 2;

/// Fingertip order used everywhere (annotations, keypoints 16..21).
pub const FINGER_NAMES: [&str; 5] = ["thumb", "index", "middle", "ring", "pinky"];
/// Distal joint carrying each fingertip, in [`FINGER_NAMES`] order.
pub const TIP_JOINTS: [usize; 5] = [15, 3, 6, 12, 9];
pub const THUMB_JOINTS: [usize; 3] = [13, 14, 15];

pub const ORTHONORMAL_TOL: f64 = 1e-9;
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid hand model: {0}")]
    Invalid(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub parent: Option<usize>,
    /// Rest offset from the parent joint, parent frame (mm).
    pub offset: Vec3,
    /// `[flexion, abduction, twist]` unit axes in the rest frame.
    pub axes: [Vec3; 3],
    /// `(min, max)` per axis, radians.
    pub limits: [(f64, f64); 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandModel {
    pub joints: Vec<Joint>,
    /// Rest-pose fingertip positions, [`FINGER_NAMES`] order.
    pub tips: [Vec3; 5],
    pub rest_mesh: TriMesh,
    /// Sparse per-vertex `(joint, weight)` rows.
    pub skin_weights: Vec<Vec<(usize, f64)>>,
    rest_positions: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandPose {
    /// Axis-angle, radians.
    pub global_rotation: Vec3,
    /// mm.
    pub global_translation: Vec3,
    /// 15 joints × (flexion, abduction, twist), radians.
    pub joint_angles: [f64; NUM_ANGLES],
}

impl Default for HandPose {
    fn default() -> Self {
        Self { global_rotation: Vec3::zeros(), global_translation: Vec3::zeros(), joint_angles: [0.0; NUM_ANGLES] }
    }
}

impl HandPose {
    pub fn validate(&self) -> Result<(), ModelError> {
        let finite = self.global_rotation.iter().chain(self.global_translation.iter()).chain(self.joint_angles.iter()).all(|v| v.is_finite());
        if finite {
            Ok(())
        } else {
            Err(ModelError::InvalidPose("non-finite value".into()))
        }
    }

    pub fn angle(&self, joint: usize, axis: usize) -> f64 {
        self.joint_angles[angle_index(joint, axis)]
    }

    pub fn set_angle(&mut self, joint: usize, axis: usize, value: f64) {
        self.joint_angles[angle_index(joint, axis)] = value;
    }

    pub fn global_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.global_translation), UnitQuaternion::from_scaled_axis(self.global_rotation))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObjectPose {
    pub rotation: Vec3,
    pub translation: Vec3,
}

impl ObjectPose {
    pub fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.translation), UnitQuaternion::from_scaled_axis(self.rotation))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.rotation.iter().chain(self.translation.iter()).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(ModelError::InvalidPose("non-finite object pose".into()))
        }
    }
}

/// Index into `joint_angles` of `axis` for articulated joint `joint` (1..16).
pub fn angle_index(joint: usize, axis: usize) -> usize {
    debug_assert!((1..NUM_JOINTS).contains(&joint) && axis < 3);
    (joint - 1) * 3 + axis
}

/// Forward-kinematics result: world transforms plus the world-frame
/// rotation axes each angle was applied about.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub transforms: Vec<Isometry3<f64>>,
    /// Per joint, world axes for `[flex, abd, twist]` at the point of
    /// application. Zero for the wrist.
    pub world_axes: Vec<[Vec3; 3]>,
}

impl Kinematics {
    pub fn joint_position(&self, j: usize) -> Vec3 {
        self.transforms[j].translation.vector
    }
}

fn axis_rotation(axis: &Vec3, angle: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Unit::new_unchecked(*axis), angle)
}

impl HandModel {
    /// Builds and validates a model, normalizing skin-weight rows.
    pub fn new(joints: Vec<Joint>, tips: [Vec3; 5], rest_mesh: TriMesh, mut skin_weights: Vec<Vec<(usize, f64)>>) -> Result<Self, ModelError> {
        if joints.len() != NUM_JOINTS {
            return Err(ModelError::Invalid(format!("expected {NUM_JOINTS} joints, got {}", joints.len())));
        }
        for (j, joint) in joints.iter().enumerate() {
            match (j, joint.parent) {
                (0, None) => {
                    if joint.offset != Vec3::zeros() {
                        return Err(ModelError::Invalid("wrist must sit at the model origin".into()));
                    }
                }
                (0, Some(_)) => return Err(ModelError::Invalid("wrist must be the root".into())),
                (_, None) => return Err(ModelError::Invalid(format!("joint {j} has no parent"))),
                (_, Some(p)) if p >= j => return Err(ModelError::Invalid(format!("joint {j} parent {p} must precede it"))),
                _ => {}
            }
            if j > 0 {
                let m = Matrix3::from_columns(&joint.axes);
                let err = (m.transpose() * m - Matrix3::identity()).abs().max();
                if err > ORTHONORMAL_TOL {
                    return Err(ModelError::Invalid(format!("joint {j} axis frame not orthonormal (err {err:e})")));
                }
                for (a, (lo, hi)) in joint.limits.iter().enumerate() {
                    if !(lo <= hi) {
                        return Err(ModelError::Invalid(format!("joint {j} axis {a} limits min > max")));
                    }
                }
            }
        }
        if skin_weights.len() != rest_mesh.vertices.len() {
            return Err(ModelError::Invalid("skin weight rows must match vertex count".into()));
        }
        for (v, row) in skin_weights.iter_mut().enumerate() {
            if row.iter().any(|&(j, w)| j >= NUM_JOINTS || w < 0.0 || !w.is_finite()) {
                return Err(ModelError::Invalid(format!("vertex {v}: bad skin weight")));
            }
            let sum: f64 = row.iter().map(|&(_, w)| w).sum();
            if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
                return Err(ModelError::Invalid(format!("vertex {v}: weights sum to {sum}")));
            }
            if sum != 1.0 {
                for (_, w) in row.iter_mut() {
                    *w /= sum;
                }
            }
        }
        for t in &rest_mesh.triangles {
            if t.iter().any(|&i| i >= rest_mesh.vertices.len()) {
                return Err(ModelError::Invalid("triangle index out of range".into()));
            }
        }
        let mut model = HandModel { joints, tips, rest_mesh, skin_weights, rest_positions: Vec::new() };
        let rest = model.forward_kinematics(&HandPose::default());
        model.rest_positions = rest.transforms.iter().map(|t| t.translation.vector).collect();
        Ok(model)
    }

    pub fn rest_positions(&self) -> &[Vec3] {
        &self.rest_positions
    }

    pub fn children(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        self.joints.iter().enumerate().filter(move |(_, jt)| jt.parent == Some(j)).map(|(i, _)| i)
    }

    pub fn limit(&self, joint: usize, axis: usize) -> (f64, f64) {
        self.joints[joint].limits[axis]
    }

    /// Copy of the model with every angle limit widened to ±∞.
    pub fn without_limits(&self) -> HandModel {
        let mut m = self.clone();
        for j in m.joints.iter_mut().skip(1) {
            j.limits = [(f64::NEG_INFINITY, f64::INFINITY); 3];
        }
        m
    }

    pub fn forward_kinematics(&self, pose: &HandPose) -> Kinematics {
        let mut transforms = Vec::with_capacity(NUM_JOINTS);
        let mut world_axes = Vec::with_capacity(NUM_JOINTS);
        transforms.push(pose.global_isometry());
        world_axes.push([Vec3::zeros(); 3]);
        for (j, joint) in self.joints.iter().enumerate().skip(1) {
            let parent = transforms[joint.parent.expect("validated")];
            let [flex, abd, twist] = &joint.axes;
            let r_tw = axis_rotation(twist, pose.angle(j, TWIST));
            let r_ab = axis_rotation(abd, pose.angle(j, ABD));
            let r_fl = axis_rotation(flex, pose.angle(j, FLEX));
            let rp = parent.rotation;
            let twist_w = rp * twist;
            let abd_w = rp * (r_tw * abd);
            let flex_w = rp * (r_tw * (r_ab * flex));
            let local = Isometry3::from_parts(Translation3::from(joint.offset), r_tw * r_ab * r_fl);
            transforms.push(parent * local);
            world_axes.push([flex_w, abd_w, twist_w]);
        }
        Kinematics { transforms, world_axes }
    }

    /// World positions of the 16 joints followed by the 5 fingertips.
    pub fn keypoints(&self, kin: &Kinematics) -> Vec<Vec3> {
        let mut out: Vec<Vec3> = kin.transforms.iter().map(|t| t.translation.vector).collect();
        out.extend(self.fingertips(kin));
        out
    }

    /// Joint each keypoint moves rigidly with.
    pub fn keypoint_joint(k: usize) -> usize {
        if k < NUM_JOINTS {
            k
        } else {
            TIP_JOINTS[k - NUM_JOINTS]
        }
    }

    pub fn fingertips(&self, kin: &Kinematics) -> [Vec3; 5] {
        std::array::from_fn(|f| {
            let j = TIP_JOINTS[f];
            transform_point(&kin.transforms[j], &(self.tips[f] - self.rest_positions[j]))
        })
    }

    /// Linear blend skinning. `transforms` are world joint transforms
    /// (e.g. from [`forward_kinematics`](Self::forward_kinematics)).
    pub fn skin(&self, transforms: &[Isometry3<f64>]) -> TriMesh {
        assert_eq!(transforms.len(), NUM_JOINTS, "one transform per joint");
        // A_j = T_j ∘ translate(-rest_j), kept as (R - I, t) so the rest
        // pose reproduces the rest mesh bit-exactly.
        let blend: Vec<(Matrix3<f64>, Vec3)> = transforms
            .iter()
            .zip(&self.rest_positions)
            .map(|(t, p)| {
                let r = t.rotation.to_rotation_matrix().into_inner();
                (r - Matrix3::identity(), t.translation.vector - r * p)
            })
            .collect();
        let vertices = self
            .rest_mesh
            .vertices
            .iter()
            .zip(&self.skin_weights)
            .map(|(v, row)| {
                let mut m = Matrix3::zeros();
                let mut t = Vec3::zeros();
                for &(j, w) in row {
                    m += blend[j].0 * w;
                    t += blend[j].1 * w;
                }
                v + m * v + t
            })
            .collect();
        TriMesh { vertices, triangles: self.rest_mesh.triangles.clone() }
    }

    pub fn posed_mesh(&self, pose: &HandPose) -> TriMesh {
        self.skin(&self.forward_kinematics(pose).transforms)
    }

    /// Sum of squared hinge violations of the angle limits, with its exact
    /// gradient over `joint_angles`.
    pub fn limit_penalty(&self, pose: &HandPose) -> (f64, [f64; NUM_ANGLES]) {
        let mut energy = 0.0;
        let mut grad = [0.0; NUM_ANGLES];
        for j in 1..NUM_JOINTS {
            for a in 0..3 {
                let (lo, hi) = self.joints[j].limits[a];
                let i = angle_index(j, a);
                let x = pose.joint_angles[i];
                let v = if x > hi {
                    x - hi
                } else if x < lo {
                    x - lo
                } else {
                    0.0
                };
                energy += v * v;
                grad[i] = 2.0 * v;
            }
        }
        (energy, grad)
    }

    /// Largest amount (radians) by which any angle exceeds its limits.
    pub fn max_limit_violation(&self, pose: &HandPose) -> f64 {
        let mut worst = 0.0f64;
        for j in 1..NUM_JOINTS {
            for a in 0..3 {
                let (lo, hi) = self.joints[j].limits[a];
                let x = pose.angle(j, a);
                worst = worst.max(x - hi).max(lo - x);
            }
        }
        worst
    }

    /// Chain rule from world-space point gradients to pose parameters.
    ///
    /// Each entry is `(joint the point moves with, world position, dE/dx)`.
    /// The rotation part is the gradient w.r.t. a left-multiplied world
    /// perturbation `exp(δ)·R` of the global rotation.
    pub fn backprop_points(&self, kin: &Kinematics, translation: &Vec3, points: &[(usize, Vec3, Vec3)]) -> HandGradient {
        let mut force = vec![Vec3::zeros(); NUM_JOINTS];
        let mut moment = vec![Vec3::zeros(); NUM_JOINTS];
        for (j, x, g) in points {
            force[*j] += g;
            moment[*j] += x.cross(g);
        }
        for j in (1..NUM_JOINTS).rev() {
            let p = self.joints[j].parent.expect("validated");
            let (f, m) = (force[j], moment[j]);
            force[p] += f;
            moment[p] += m;
        }
        let mut angles = [0.0; NUM_ANGLES];
        for j in 1..NUM_JOINTS {
            let o = kin.joint_position(j);
            let torque = moment[j] - o.cross(&force[j]);
            for a in 0..3 {
                angles[angle_index(j, a)] = kin.world_axes[j][a].dot(&torque);
            }
        }
        HandGradient { rotation: moment[0] - translation.cross(&force[0]), translation: force[0], angles }
    }

    /// Serialize to the text model format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("# hograsp hand model\n");
        s.push_str("# joint <index> <parent|-1> <offset xyz> <flex xyz> <abd xyz> <twist xyz> <limits: flex min max, abd min max, twist min max (rad)>\n");
        s.push_str("# tip <finger> <rest position xyz>; v <xyz>; f <i j k>; w <count> (<joint> <weight>)*\n");
        s.push_str("format hograsp-hand 1\n");
        let _ = writeln!(s, "joints {}", self.joints.len());
        for (j, jt) in self.joints.iter().enumerate() {
            let parent = jt.parent.map_or(-1, |p| p as i64);
            let _ = write!(s, "joint {j} {parent} {}", fmt_vec(&jt.offset));
            for ax in &jt.axes {
                let _ = write!(s, " {}", fmt_vec(ax));
            }
            for (lo, hi) in &jt.limits {
                let _ = write!(s, " {} {}", fmt_f(*lo), fmt_f(*hi));
            }
            s.push('\n');
        }
        s.push_str("tips 5\n");
        for (f, tip) in self.tips.iter().enumerate() {
            let _ = writeln!(s, "tip {} {}", FINGER_NAMES[f], fmt_vec(tip));
        }
        let _ = writeln!(s, "vertices {}", self.rest_mesh.vertices.len());
        for v in &self.rest_mesh.vertices {
            let _ = writeln!(s, "v {}", fmt_vec(v));
        }
        let _ = writeln!(s, "triangles {}", self.rest_mesh.triangles.len());
        for t in &self.rest_mesh.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0], t[1], t[2]);
        }
        let _ = writeln!(s, "weights {}", self.skin_weights.len());
        for row in &self.skin_weights {
            let _ = write!(s, "w {}", row.len());
            for (j, w) in row {
                let _ = write!(s, " {j} {}", fmt_f(*w));
            }
            s.push('\n');
        }
        s.push_str("end\n");
        s
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim())).filter(|(_, l)| !l.is_empty());
        let mut next = |expect: &str| -> Result<(usize, Vec<&str>), ModelError> {
            let (n, l) = lines.next().ok_or(ModelError::Parse { line: 0, message: format!("unexpected end of file, expected `{expect}`") })?;
            let toks: Vec<&str> = l.split_whitespace().collect();
            if toks[0] != expect {
                return Err(ModelError::Parse { line: n, message: format!("expected `{expect}`, found `{}`", toks[0]) });
            }
            Ok((n, toks[1..].to_vec()))
        };
        let (n, fmt) = next("format")?;
        if fmt != ["hograsp-hand", "1"] {
            return Err(ModelError::Parse { line: n, message: "unsupported format".into() });
        }
        let count = |n: usize, t: &[&str]| -> Result<usize, ModelError> { t.first().ok_or(ModelError::Parse { line: n, message: "missing count".into() }).and_then(|v| parse_tok(n, v)) };
        let (n, t) = next("joints")?;
        let nj = count(n, &t)?;
        let mut joints = Vec::with_capacity(nj);
        for j in 0..nj {
            let (n, t) = next("joint")?;
            if t.len() != 20 {
                return Err(ModelError::Parse { line: n, message: format!("joint needs 20 fields, got {}", t.len()) });
            }
            let idx: usize = parse_tok(n, t[0])?;
            if idx != j {
                return Err(ModelError::Parse { line: n, message: format!("joint index {idx} out of order") });
            }
            let parent: i64 = parse_tok(n, t[1])?;
            let f = t[2..].iter().map(|v| parse_tok::<f64>(n, v)).collect::<Result<Vec<_>, _>>()?;
            let v = |k: usize| Vec3::new(f[k], f[k + 1], f[k + 2]);
            joints.push(Joint { parent: if parent < 0 { None } else { Some(parent as usize) }, offset: v(0), axes: [v(3), v(6), v(9)], limits: [(f[12], f[13]), (f[14], f[15]), (f[16], f[17])] });
        }
        let (n, t) = next("tips")?;
        if count(n, &t)? != 5 {
            return Err(ModelError::Parse { line: n, message: "expected 5 tips".into() });
        }
        let mut tips = [Vec3::zeros(); 5];
        for (f, tip) in tips.iter_mut().enumerate() {
            let (n, t) = next("tip")?;
            if t.len() != 4 || t[0] != FINGER_NAMES[f] {
                return Err(ModelError::Parse { line: n, message: format!("expected `tip {} x y z`", FINGER_NAMES[f]) });
            }
            *tip = Vec3::new(parse_tok(n, t[1])?, parse_tok(n, t[2])?, parse_tok(n, t[3])?);
        }
        let (n, t) = next("vertices")?;
        let nv = count(n, &t)?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (n, t) = next("v")?;
            if t.len() != 3 {
                return Err(ModelError::Parse { line: n, message: "vertex needs 3 coordinates".into() });
            }
            vertices.push(Vec3::new(parse_tok(n, t[0])?, parse_tok(n, t[1])?, parse_tok(n, t[2])?));
        }
        let (n, t) = next("triangles")?;
        let nt = count(n, &t)?;
        let mut triangles = Vec::with_capacity(nt);
        for _ in 0..nt {
            let (n, t) = next("f")?;
            if t.len() != 3 {
                return Err(ModelError::Parse { line: n, message: "triangle needs 3 indices".into() });
            }
            triangles.push([parse_tok(n, t[0])?, parse_tok(n, t[1])?, parse_tok(n, t[2])?]);
        }
        let (n, t) = next("weights")?;
        let nw = count(n, &t)?;
        let mut weights = Vec::with_capacity(nw);
        for _ in 0..nw {
            let (n, t) = next("w")?;
            let k: usize = count(n, &t)?;
            if t.len() != 1 + 2 * k {
                return Err(ModelError::Parse { line: n, message: format!("weight row declares {k} entries but has {} fields", t.len() - 1) });
            }
            let row = (0..k).map(|i| Ok((parse_tok(n, t[1 + 2 * i])?, parse_tok(n, t[2 + 2 * i])?))).collect::<Result<Vec<(usize, f64)>, ModelError>>()?;
            weights.push(row);
        }
        next("end")?;
        HandModel::new(joints, tips, TriMesh::new(vertices, triangles), weights)
    }

    /// The bundled default model.
    pub fn default_model() -> HandModel {
        HandModel::from_text(DEFAULT_MODEL_TEXT).expect("bundled hand model is valid")
    }

    /// Deterministic procedural hand: straight fingers along +y, palm facing
    /// −z, thumb on the +x side. One capsule per bone, rigidly skinned.
    pub fn procedural() -> HandModel {
        let mut joints = vec![Joint { parent: None, offset: Vec3::zeros(), axes: [Vec3::x(), Vec3::y(), Vec3::z()], limits: [(0.0, 0.0); 3] }];
        let mut tips = [Vec3::zeros(); 5];
        let mut parts: Vec<(usize, TriMesh)> = Vec::new();
        let finger_palm_normal = Vec3::new(0.0, 0.0, -1.0);
        let deg = std::f64::consts::PI / 180.0;
        let finger_limits = [(-10.0 * deg, 100.0 * deg), (-25.0 * deg, 25.0 * deg), (-15.0 * deg, 15.0 * deg)];
        let thumb_cmc_limits = [(-30.0 * deg, 100.0 * deg), (-40.0 * deg, 40.0 * deg), (-30.0 * deg, 30.0 * deg)];

        for spec in FINGERS {
            let d = Vec3::from(spec.direction).normalize();
            let n = if spec.tip_slot == 0 { Vec3::new(-1.0, 0.0, -1.0) } else { finger_palm_normal };
            let n = (n - d * n.dot(&d)).normalize();
            let flex = d.cross(&n).normalize();
            let abd = d.cross(&flex);
            let base = Vec3::from(spec.base);
            let mut pos = base;
            let mut parent_pos = Vec3::zeros();
            let first = joints.len();
            for seg in 0..3 {
                let j = joints.len();
                let limits = if spec.tip_slot == 0 && seg == 0 { thumb_cmc_limits } else { finger_limits };
                joints.push(Joint { parent: Some(if seg == 0 { 0 } else { j - 1 }), offset: pos - parent_pos, axes: [flex, abd, d], limits });
                let r = spec.radii[seg];
                let end = pos + d * spec.lengths[seg];
                let axis_end = if seg == 2 { end - d * r } else { end };
                parts.push((j, capsule(&pos, &axis_end, r, CAPSULE_SEGMENTS, CAPSULE_CAP_RINGS)));
                parent_pos = pos;
                pos = end;
            }
            tips[spec.tip_slot] = pos;
            let palm_start = Vec3::new(spec.base[0] * 0.5, 12.0, 0.0);
            parts.push((0, capsule(&palm_start, &base, spec.palm_radius, CAPSULE_SEGMENTS, CAPSULE_CAP_RINGS)));
            debug_assert_eq!(first + 3, joints.len());
        }

        let mut mesh = TriMesh::empty();
        let mut weights = Vec::new();
        for (j, part) in &parts {
            let base = mesh.vertices.len();
            mesh.vertices.extend_from_slice(&part.vertices);
            mesh.triangles.extend(part.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
            weights.extend(std::iter::repeat_n(vec![(*j, 1.0)], part.vertices.len()));
        }
        HandModel::new(joints, tips, mesh, weights).expect("procedural hand is valid")
    }
}

/// Per-parameter gradient of a scalar w.r.t. the hand pose.
#[derive(Debug, Clone, PartialEq)]
pub struct HandGradient {
    /// Tangent-space gradient of the global rotation (left perturbation).
    pub rotation: Vec3,
    pub translation: Vec3,
    pub angles: [f64; NUM_ANGLES],
}

pub const CAPSULE_SEGMENTS: usize = 10;
pub const CAPSULE_CAP_RINGS: usize = 1;

struct FingerSpec {
    tip_slot: usize,
    base: [f64; 3],
    direction: [f64; 3],
    lengths: [f64; 3],
    radii: [f64; 3],
    palm_radius: f64,
}

// MANO joint order: index, middle, pinky, ring, thumb.
const FINGERS: [FingerSpec; 5] = [
    FingerSpec { tip_slot: 1, base: [24.0, 88.0, 0.0], direction: [0.0, 1.0, 0.0], lengths: [40.0, 24.0, 22.0], radii: [9.0, 8.0, 7.5], palm_radius: 11.0 },
    FingerSpec { tip_slot: 2, base: [4.0, 92.0, 0.0], direction: [0.0, 1.0, 0.0], lengths: [44.0, 28.0, 24.0], radii: [9.5, 8.5, 8.0], palm_radius: 11.0 },
    FingerSpec { tip_slot: 4, base: [-33.0, 76.0, 0.0], direction: [0.0, 1.0, 0.0], lengths: [32.0, 20.0, 19.0], radii: [8.0, 7.0, 6.5], palm_radius: 10.0 },
    FingerSpec { tip_slot: 3, base: [-15.0, 88.0, 0.0], direction: [0.0, 1.0, 0.0], lengths: [41.0, 27.0, 23.0], radii: [9.0, 8.0, 7.5], palm_radius: 11.0 },
    FingerSpec { tip_slot: 0, base: [22.0, 24.0, 0.0], direction: [1.0, 1.2, 0.0], lengths: [40.0, 32.0, 28.0], radii: [12.0, 10.5, 9.0], palm_radius: 12.0 },
];

pub const DEFAULT_MODEL_TEXT: &str = include_str!("../data/hand_default.hand");

fn fmt_f(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

fn fmt_vec(v: &Vec3) -> String {
    format!("{} {} {}", fmt_f(v.x), fmt_f(v.y), fmt_f(v.z))
}

fn parse_tok<T: FromStr>(line: usize, tok: &str) -> Result<T, ModelError> {
    tok.parse().map_err(|_| ModelError::Parse { line, message: format!("cannot parse `{tok}`") })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn model() -> HandModel {
        HandModel::default_model()
    }

    #[test]
    fn bundled_file_matches_procedural_generator() {
        let m = model();
        assert_eq!(m, HandModel::procedural());
        assert_eq!(HandModel::from_text(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn model_invariants_hold() {
        let m = model();
        assert_eq!(m.joints.len(), NUM_JOINTS);
        assert!(m.joints[0].parent.is_none());
        assert!((700..=1000).contains(&m.rest_mesh.vertices.len()));
        for row in &m.skin_weights {
            let s: f64 = row.iter().map(|r| r.1).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_pose_puts_joints_at_rest() {
        let m = model();
        let kin = m.forward_kinematics(&HandPose::default());
        for (j, t) in kin.transforms.iter().enumerate() {
            assert_eq!(t.translation.vector, m.rest_positions()[j]);
        }
        assert_eq!(m.fingertips(&kin), m.tips);
    }

    #[test]
    fn global_translation_shifts_everything() {
        let m = model();
        let pose = HandPose { global_translation: Vec3::new(10.0, 0.0, 0.0), ..Default::default() };
        let kin = m.forward_kinematics(&pose);
        for (j, t) in kin.transforms.iter().enumerate() {
            let expect = m.rest_positions()[j] + Vec3::new(10.0, 0.0, 0.0);
            assert!((t.translation.vector - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn rest_skin_reproduces_rest_mesh_exactly() {
        let m = model();
        let kin = m.forward_kinematics(&HandPose::default());
        assert_eq!(m.skin(&kin.transforms), m.rest_mesh);
    }

    #[test]
    fn flexion_curls_toward_palm() {
        let m = model();
        let mut pose = HandPose::default();
        pose.set_angle(1, FLEX, FRAC_PI_2);
        let kin = m.forward_kinematics(&pose);
        let tip = m.fingertips(&kin)[1];
        // palm faces -z
        assert!(tip.z < -50.0, "{tip:?}");
    }

    #[test]
    fn limit_penalty_cases() {
        let m = model();
        let mut pose = HandPose::default();
        for j in 1..NUM_JOINTS {
            for a in 0..3 {
                let (lo, hi) = m.limit(j, a);
                pose.set_angle(j, a, 0.5 * (lo + hi));
            }
        }
        assert_eq!(m.limit_penalty(&pose).0, 0.0);
        let (_, hi) = m.limit(5, TWIST);
        pose.set_angle(5, TWIST, hi + 0.1);
        let (e, g) = m.limit_penalty(&pose);
        assert!((e - 0.01).abs() < 1e-15);
        assert!((g[angle_index(5, TWIST)] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_models() {
        let m = model();
        let mut j = m.joints.clone();
        j[3].axes[0] = Vec3::new(1.0, 0.1, 0.0);
        assert!(HandModel::new(j, m.tips, m.rest_mesh.clone(), m.skin_weights.clone()).is_err());
        let mut w = m.skin_weights.clone();
        w[0] = vec![(0, 0.7)];
        assert!(HandModel::new(m.joints.clone(), m.tips, m.rest_mesh.clone(), w).is_err());
        let mut j = m.joints.clone();
        j[2].limits[1] = (0.3, 0.1);
        assert!(HandModel::new(j, m.tips, m.rest_mesh.clone(), m.skin_weights.clone()).is_err());
        let mut j = m.joints.clone();
        j[2].parent = Some(5);
        assert!(HandModel::new(j, m.tips, m.rest_mesh.clone(), m.skin_weights.clone()).is_err());
    }

    #[test]
    fn parse_error_reports_line() {
        let text = model().to_text().replacen("joint 3 2", "joint 3 x", 1);
        match HandModel::from_text(&text) {
            Err(ModelError::Parse { line, .. }) => assert_eq!(line, 9),
            other => panic!("{other:?}"),
        }
    }
}
