//! Energy terms and their gradients over the packed grasp parameters.
//!
//! Terms: silhouette (E_mask), sphere repulsion (E_phy), joint-limit hinge
//! (E_limit) and keypoint anchoring (E_kp). Gradients are analytic for
//! everything except the silhouette, which only contributes its value
//! unless finite-difference mode is enabled.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, UnitQuaternion};
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{TriMesh, Vec3};
use crate::hand_model::{HandModel, NUM_ANGLES, NUM_KEYPOINTS};
use crate::optimize::{GraspState, HAND_ANGLES, HAND_ROT, HAND_TRANS, NUM_PARAMS, OBJ_ROT, OBJ_TRANS};
use crate::pgm::{Pgm, PgmError};
use crate::render::{rasterize, Camera, Class, LabelImage, RenderError};
use crate::spherize::{rest_to_world, SphereSet};

/// Default allowed penetration for E_phy (mm).
pub const DEFAULT_PENETRATION_ALLOWANCE: f64 = 2.0;
/// Lower clamp for confidences inside the log.
pub const P_MIN: f64 = 1e-6;
/// Per-pixel tolerance on the class-probability simplex.
pub const SIMPLEX_TOL: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("keypoint index {index} out of range (have {count})")]
    BadIndex { index: usize, count: usize },
    #[error("invalid confidence map: {0}")]
    InvalidMaps(String),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Pgm(#[from] PgmError),
}

/// Per-pixel class probabilities for one camera, stored as
/// `[object, person, background]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    pub width: usize,
    pub height: usize,
    pub probs: Vec<[f64; 3]>,
}

pub fn class_slot(c: Class) -> usize {
    match c {
        Class::Object => 0,
        Class::Person => 1,
        Class::Background => 2,
    }
}

impl ConfidenceMap {
    pub fn new(width: usize, height: usize, probs: Vec<[f64; 3]>) -> Result<Self, EnergyError> {
        let m = Self { width, height, probs };
        m.validate()?;
        Ok(m)
    }

    pub fn uniform(width: usize, height: usize) -> Self {
        Self { width, height, probs: vec![[1.0 / 3.0; 3]; width * height] }
    }

    /// One-hot maps agreeing with a rendering.
    pub fn one_hot(img: &LabelImage) -> Self {
        let probs = img
            .labels
            .iter()
            .map(|&c| {
                let mut p = [0.0; 3];
                p[class_slot(c)] = 1.0;
                p
            })
            .collect();
        Self { width: img.width, height: img.height, probs }
    }

    pub fn prob(&self, pixel: usize, class: Class) -> f64 {
        self.probs[pixel][class_slot(class)]
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        if self.probs.len() != self.width * self.height {
            return Err(EnergyError::InvalidMaps(format!("{} values for a {}x{} map", self.probs.len(), self.width, self.height)));
        }
        for (i, p) in self.probs.iter().enumerate() {
            if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(EnergyError::InvalidMaps(format!("pixel {i}: probability outside [0, 1]")));
            }
            let s: f64 = p.iter().sum();
            if (s - 1.0).abs() > SIMPLEX_TOL {
                return Err(EnergyError::InvalidMaps(format!("pixel {i}: probabilities sum to {s}")));
            }
        }
        Ok(())
    }

    /// Three 16-bit PGMs (object, person, background), value / 65535.
    pub fn to_pgms(&self) -> [Pgm; 3] {
        std::array::from_fn(|c| {
            let data = self.probs.iter().map(|p| (p[c] * 65535.0).round() as u16).collect();
            Pgm::new(self.width, self.height, 65535, data)
        })
    }

    /// Quantized input is renormalized per pixel.
    pub fn from_pgms(maps: &[Pgm; 3]) -> Result<Self, EnergyError> {
        let (w, h) = (maps[0].width, maps[0].height);
        if maps.iter().any(|m| m.width != w || m.height != h) {
            return Err(EnergyError::DimensionMismatch("confidence PGMs differ in size".into()));
        }
        let mut probs = Vec::with_capacity(w * h);
        for i in 0..w * h {
            let raw: [f64; 3] = std::array::from_fn(|c| maps[c].data[i] as f64 / maps[c].maxval as f64);
            let s: f64 = raw.iter().sum();
            if s <= 0.0 {
                return Err(EnergyError::InvalidMaps(format!("pixel {i}: all confidences are zero")));
            }
            probs.push(raw.map(|v| v / s));
        }
        Self::new(w, h, probs)
    }

    /// Raw planar float32: `u32 width, u32 height` (little endian), then the
    /// object, person and background planes as little-endian `f32`.
    pub fn to_raw(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 12 * self.probs.len());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for c in 0..3 {
            for p in &self.probs {
                out.extend_from_slice(&(p[c] as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_raw(bytes: &[u8]) -> Result<Self, EnergyError> {
        if bytes.len() < 8 {
            return Err(EnergyError::InvalidMaps("raw map shorter than its header".into()));
        }
        let w = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let n = w * h;
        if bytes.len() != 8 + 12 * n {
            return Err(EnergyError::InvalidMaps(format!("raw map of {w}x{h} needs {} bytes, found {}", 8 + 12 * n, bytes.len())));
        }
        let at = |k: usize| f32::from_le_bytes(bytes[8 + 4 * k..12 + 4 * k].try_into().unwrap()) as f64;
        let probs = (0..n).map(|i| [at(i), at(n + i), at(2 * n + i)]).collect();
        Self::new(w, h, probs)
    }
}

/// Remap table from segmenter label ids to the three classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassRemap {
    pub classes: Vec<Class>,
}

pub const DEFAULT_REMAP_TEXT: &str = include_str!("../data/class_remap.txt");

impl ClassRemap {
    pub fn default_table() -> Self {
        Self::parse(DEFAULT_REMAP_TEXT).expect("bundled remap table is valid")
    }

    /// Lines `<id> <object|person|background> [name]`; ids must be
    /// `0..n` with no gaps or repeats.
    pub fn parse(text: &str) -> Result<Self, EnergyError> {
        let mut entries: Vec<Option<Class>> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let l = raw.split('#').next().unwrap_or("").trim();
            if l.is_empty() {
                continue;
            }
            let bad = |m: &str| EnergyError::InvalidMaps(format!("remap line {}: {m}", n + 1));
            let mut t = l.split_whitespace();
            let id: usize = t.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("expected a label id"))?;
            let class = match t.next() {
                Some("object") => Class::Object,
                Some("person") => Class::Person,
                Some("background") => Class::Background,
                _ => return Err(bad("class must be object, person or background")),
            };
            if id >= entries.len() {
                entries.resize(id + 1, None);
            }
            if entries[id].replace(class).is_some() {
                return Err(bad("duplicate label id"));
            }
        }
        let classes = entries.into_iter().enumerate().map(|(i, c)| c.ok_or_else(|| EnergyError::InvalidMaps(format!("remap table has no entry for label {i}")))).collect::<Result<Vec<_>, _>>()?;
        Ok(Self { classes })
    }

    /// Sum per-label probabilities (`labels × pixels`, label-major) into the
    /// three classes.
    pub fn apply(&self, width: usize, height: usize, label_probs: &[f64]) -> Result<ConfidenceMap, EnergyError> {
        let n = width * height;
        if label_probs.len() != n * self.classes.len() {
            return Err(EnergyError::DimensionMismatch(format!("expected {} label planes", self.classes.len())));
        }
        let mut probs = vec![[0.0; 3]; n];
        for (l, &c) in self.classes.iter().enumerate() {
            let slot = class_slot(c);
            for (i, p) in probs.iter_mut().enumerate() {
                p[slot] += label_probs[l * n + i];
            }
        }
        ConfidenceMap::new(width, height, probs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SilhouetteForm {
    /// `-Σ log max(S(c*), p_min)`.
    #[default]
    Nll,
    /// Negated agreement score `-Σ_c S(c)·S^R(c)`.
    Dot,
    /// `Σ_c (S(c) - S^R(c))²`.
    L2,
}

impl FromStr for SilhouetteForm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "nll" => Ok(Self::Nll),
            "dot" => Ok(Self::Dot),
            "l2" => Ok(Self::L2),
            _ => Err(format!("unknown silhouette form `{s}` (nll, dot, l2)")),
        }
    }
}

impl fmt::Display for SilhouetteForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Nll => "nll",
            Self::Dot => "dot",
            Self::L2 => "l2",
        })
    }
}

/// Sum over cameras and pixels; no normalization.
pub fn silhouette_energy(maps: &[ConfidenceMap], rendered: &[LabelImage], form: SilhouetteForm) -> Result<f64, EnergyError> {
    if maps.len() != rendered.len() {
        return Err(EnergyError::DimensionMismatch(format!("{} confidence maps for {} renderings", maps.len(), rendered.len())));
    }
    let mut total = 0.0;
    for (v, (m, r)) in maps.iter().zip(rendered).enumerate() {
        if m.width != r.width || m.height != r.height || m.probs.len() != r.labels.len() {
            return Err(EnergyError::DimensionMismatch(format!("camera {v}: map {}x{} vs render {}x{}", m.width, m.height, r.width, r.height)));
        }
        total += m
            .probs
            .iter()
            .zip(&r.labels)
            .map(|(p, &c)| {
                let k = class_slot(c);
                match form {
                    SilhouetteForm::Nll => -p[k].max(P_MIN).ln(),
                    SilhouetteForm::Dot => -p[k],
                    SilhouetteForm::L2 => (0..3).map(|i| (p[i] - if i == k { 1.0 } else { 0.0 }).powi(2)).sum(),
                }
            })
            .sum::<f64>();
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Repulsion {
    pub value: f64,
    /// dE/dc for every hand sphere center.
    pub hand_grad: Vec<Vec3>,
    /// dE/dc for every object sphere center.
    pub object_grad: Vec<Vec3>,
}

/// `Σ_i Σ_j max(0, r_i + r_j - ‖c_i - c_j‖ - t)` with its center gradients.
pub fn repulsion_energy(hand: &SphereSet, object: &SphereSet, t: f64) -> Repulsion {
    let mut value = 0.0;
    let mut hand_grad = vec![Vec3::zeros(); hand.len()];
    let mut object_grad = vec![Vec3::zeros(); object.len()];
    for (h, hg) in hand.spheres.iter().zip(hand_grad.iter_mut()) {
        for (o, og) in object.spheres.iter().zip(object_grad.iter_mut()) {
            let reach = h.radius + o.radius - t;
            let d = h.center - o.center;
            if reach <= 0.0 || d.norm_squared() >= reach * reach {
                continue;
            }
            let dist = d.norm();
            value += reach - dist;
            if dist > 0.0 {
                let u = d / dist;
                *hg -= u;
                *og += u;
            }
        }
    }
    Repulsion { value, hand_grad, object_grad }
}

/// `Σ ‖x_k - target_k‖²` over the targeted points, with per-point
/// gradients (zero for untargeted points).
pub fn keypoint_energy(points: &[Vec3], targets: &[(usize, Vec3)]) -> Result<(f64, Vec<Vec3>), EnergyError> {
    let mut grad = vec![Vec3::zeros(); points.len()];
    let mut e = 0.0;
    for &(k, target) in targets {
        let x = points.get(k).ok_or(EnergyError::BadIndex { index: k, count: points.len() })?;
        let d = x - target;
        e += d.norm_squared();
        grad[k] += 2.0 * d;
    }
    Ok((e, grad))
}

/// Left Jacobian of SO(3): `exp(r + dr) ≈ exp(J_l(r)·dr)·exp(r)`.
pub fn so3_left_jacobian(r: &Vec3) -> Matrix3<f64> {
    let theta2 = r.norm_squared();
    let k = r.cross_matrix();
    if theta2 < 1e-12 {
        return Matrix3::identity() + 0.5 * k + k * k / 6.0;
    }
    let theta = theta2.sqrt();
    Matrix3::identity() + (1.0 - theta.cos()) / theta2 * k + (theta - theta.sin()) / (theta2 * theta) * k * k
}

/// Compose a world-frame (left) rotation increment onto an axis-angle.
pub fn compose_rotation(delta: &Vec3, r: &Vec3) -> Vec3 {
    (UnitQuaternion::from_scaled_axis(*delta) * UnitQuaternion::from_scaled_axis(*r)).scaled_axis()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    pub keypoint: f64,
    pub repulsion: f64,
    pub limit: f64,
    pub mask: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self { keypoint: 1.0, repulsion: 5.0, limit: DEFAULT_LIMIT_WEIGHT, mask: 0.01 }
    }
}

/// Limit-hinge weight (per rad²).
pub const DEFAULT_LIMIT_WEIGHT: f64 = 1e4;

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyConfig {
    pub weights: Weights,
    /// Allowed penetration t (mm).
    pub penetration_allowance: f64,
    pub silhouette_form: SilhouetteForm,
    /// Differentiate the silhouette term by central differences.
    pub silhouette_fd: bool,
    /// Finite-difference steps: rotation (rad), translation (mm), angles (rad).
    pub fd_steps: [f64; 3],
    /// Evaluate angle limits (false reproduces a limit-free model).
    pub use_limits: bool,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            weights: Weights::default(),
            penetration_allowance: DEFAULT_PENETRATION_ALLOWANCE,
            silhouette_form: SilhouetteForm::Nll,
            silhouette_fd: false,
            fd_steps: [1e-3, 0.5, 1e-3],
            use_limits: true,
        }
    }
}

/// Everything the energy needs besides the pose parameters.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: HandModel,
    /// Rest-frame hand spheres tagged with joints.
    pub hand_spheres: SphereSet,
    /// Object-frame spheres.
    pub object_spheres: SphereSet,
    /// Object-frame mesh (used for rendering).
    pub object_mesh: TriMesh,
    pub cameras: Vec<Camera>,
    pub maps: Vec<ConfidenceMap>,
    /// `(keypoint index, world target)`; indices follow
    /// [`HandModel::keypoints`].
    pub keypoint_targets: Vec<(usize, Vec3)>,
}

impl Problem {
    pub fn validate(&self) -> Result<(), EnergyError> {
        if self.cameras.len() != self.maps.len() {
            return Err(EnergyError::DimensionMismatch(format!("{} cameras but {} confidence maps", self.cameras.len(), self.maps.len())));
        }
        for (v, (c, m)) in self.cameras.iter().zip(&self.maps).enumerate() {
            c.validate()?;
            if c.width != m.width || c.height != m.height {
                return Err(EnergyError::DimensionMismatch(format!("camera {v} is {}x{} but its map is {}x{}", c.width, c.height, m.width, m.height)));
            }
            m.validate()?;
        }
        if let Some(&(k, _)) = self.keypoint_targets.iter().find(|(k, _)| *k >= NUM_KEYPOINTS) {
            return Err(EnergyError::BadIndex { index: k, count: NUM_KEYPOINTS });
        }
        Ok(())
    }

    /// Label images of the scene from every camera.
    pub fn render(&self, state: &GraspState) -> Result<Vec<LabelImage>, EnergyError> {
        let hand = self.model.posed_mesh(&state.hand);
        let object = self.object_mesh.transformed(&state.object.isometry());
        self.cameras.iter().map(|c| rasterize(Some(&hand), Some(&object), c).map_err(Into::into)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Terms {
    pub mask: f64,
    pub repulsion: f64,
    pub limit: f64,
    pub keypoint: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub terms: Terms,
    pub weights: Weights,
    pub total: f64,
    /// d total / d packed parameters (axis-angle entries included).
    pub gradient: [f64; NUM_PARAMS],
    /// Same, but with rotation entries as world-frame tangent gradients.
    pub tangent_gradient: [f64; NUM_PARAMS],
}

impl EnergyReport {
    pub fn weighted_sum(terms: &Terms, w: &Weights) -> f64 {
        // Disabled terms never contribute, even if non-finite.
        let part = |w: f64, t: f64| if w == 0.0 { 0.0 } else { w * t };
        part(w.mask, terms.mask) + part(w.repulsion, terms.repulsion) + part(w.limit, terms.limit) + part(w.keypoint, terms.keypoint)
    }
}

/// Energy value only (no gradient work).
pub fn energy_value(problem: &Problem, state: &GraspState, config: &EnergyConfig) -> Result<(Terms, f64), EnergyError> {
    let terms = evaluate_terms(problem, state, config, None, true)?;
    Ok((terms, EnergyReport::weighted_sum(&terms, &config.weights)))
}

/// Weighted energy with its gradient over the packed parameters.
pub fn total_energy(problem: &Problem, state: &GraspState, config: &EnergyConfig) -> Result<EnergyReport, EnergyError> {
    let mut tangent = [0.0; NUM_PARAMS];
    let terms = evaluate_terms(problem, state, config, Some(&mut tangent), true)?;
    add_silhouette_fd(problem, state, config, &mut tangent)?;
    let gradient = tangent_to_packed(state, &tangent);
    Ok(EnergyReport { terms, weights: config.weights, total: EnergyReport::weighted_sum(&terms, &config.weights), gradient, tangent_gradient: tangent })
}

/// Tangent-space gradient alone; skips rendering unless the silhouette is
/// differentiated by finite differences.
pub fn tangent_gradient(problem: &Problem, state: &GraspState, config: &EnergyConfig) -> Result<[f64; NUM_PARAMS], EnergyError> {
    let mut tangent = [0.0; NUM_PARAMS];
    evaluate_terms(problem, state, config, Some(&mut tangent), false)?;
    add_silhouette_fd(problem, state, config, &mut tangent)?;
    Ok(tangent)
}

fn add_silhouette_fd(problem: &Problem, state: &GraspState, config: &EnergyConfig, tangent: &mut [f64; NUM_PARAMS]) -> Result<(), EnergyError> {
    if config.silhouette_fd && config.weights.mask != 0.0 && !problem.cameras.is_empty() {
        let fd = silhouette_fd_gradient(problem, state, config)?;
        for (g, f) in tangent.iter_mut().zip(fd.iter()) {
            *g += config.weights.mask * f;
        }
    }
    Ok(())
}

/// Convert rotation blocks from tangent to axis-angle gradients.
pub fn tangent_to_packed(state: &GraspState, tangent: &[f64; NUM_PARAMS]) -> [f64; NUM_PARAMS] {
    let mut out = *tangent;
    for (start, r) in [(HAND_ROT, state.hand.global_rotation), (OBJ_ROT, state.object.rotation)] {
        let g = Vec3::new(tangent[start], tangent[start + 1], tangent[start + 2]);
        let packed = so3_left_jacobian(&r).transpose() * g;
        out[start..start + 3].copy_from_slice(packed.as_slice());
    }
    out
}

fn evaluate_terms(problem: &Problem, state: &GraspState, config: &EnergyConfig, grad: Option<&mut [f64; NUM_PARAMS]>, with_mask: bool) -> Result<Terms, EnergyError> {
    let w = &config.weights;
    let model = &problem.model;
    let mut terms = Terms::default();
    let kin = model.forward_kinematics(&state.hand);
    let mut hand_points: Vec<(usize, Vec3, Vec3)> = Vec::new();
    let mut obj_force = Vec3::zeros();
    let mut obj_moment = Vec3::zeros();

    if w.keypoint != 0.0 && !problem.keypoint_targets.is_empty() {
        let pts = model.keypoints(&kin);
        let (e, g) = keypoint_energy(&pts, &problem.keypoint_targets)?;
        terms.keypoint = e;
        if grad.is_some() {
            for (k, gk) in g.iter().enumerate() {
                if *gk != Vec3::zeros() {
                    hand_points.push((HandModel::keypoint_joint(k), pts[k], w.keypoint * gk));
                }
            }
        }
    }

    if w.repulsion != 0.0 && !problem.hand_spheres.is_empty() && !problem.object_spheres.is_empty() {
        let hand = problem.hand_spheres.posed(&rest_to_world(model, &kin.transforms));
        let obj_iso = state.object.isometry();
        let object = problem.object_spheres.posed(&[obj_iso]);
        let rep = repulsion_energy(&hand, &object, config.penetration_allowance);
        terms.repulsion = rep.value;
        if grad.is_some() && rep.value > 0.0 {
            for (s, g) in hand.spheres.iter().zip(&rep.hand_grad) {
                if *g != Vec3::zeros() {
                    hand_points.push((s.joint.unwrap_or(0), s.center, w.repulsion * g));
                }
            }
            let t = obj_iso.translation.vector;
            for (s, g) in object.spheres.iter().zip(&rep.object_grad) {
                let g = w.repulsion * g;
                obj_force += g;
                obj_moment += (s.center - t).cross(&g);
            }
        }
    }

    let mut limit_grad = [0.0; NUM_ANGLES];
    if w.limit != 0.0 && config.use_limits {
        let (e, g) = model.limit_penalty(&state.hand);
        terms.limit = e;
        limit_grad = g;
    }

    if with_mask && w.mask != 0.0 && !problem.cameras.is_empty() {
        let rendered = problem.render(state)?;
        terms.mask = silhouette_energy(&problem.maps, &rendered, config.silhouette_form)?;
    }

    if let Some(out) = grad {
        let hg = model.backprop_points(&kin, &state.hand.global_translation, &hand_points);
        out[HAND_ROT..HAND_ROT + 3].copy_from_slice(hg.rotation.as_slice());
        out[HAND_TRANS..HAND_TRANS + 3].copy_from_slice(hg.translation.as_slice());
        for i in 0..NUM_ANGLES {
            out[HAND_ANGLES + i] = hg.angles[i] + w.limit * limit_grad[i];
        }
        out[OBJ_ROT..OBJ_ROT + 3].copy_from_slice(obj_moment.as_slice());
        out[OBJ_TRANS..OBJ_TRANS + 3].copy_from_slice(obj_force.as_slice());
    }
    Ok(terms)
}

/// Central differences of the (unweighted) silhouette term in tangent
/// coordinates.
fn silhouette_fd_gradient(problem: &Problem, state: &GraspState, config: &EnergyConfig) -> Result<[f64; NUM_PARAMS], EnergyError> {
    let eval = |s: &GraspState| -> Result<f64, EnergyError> { silhouette_energy(&problem.maps, &problem.render(s)?, config.silhouette_form) };
    let results: Vec<Result<f64, EnergyError>> = (0..NUM_PARAMS)
        .into_par_iter()
        .map(|i| {
            let h = crate::optimize::block_value(i, &config.fd_steps);
            let plus = eval(&state.perturbed_tangent(i, h))?;
            let minus = eval(&state.perturbed_tangent(i, -h))?;
            Ok((plus - minus) / (2.0 * h))
        })
        .collect();
    let mut out = [0.0; NUM_PARAMS];
    for (o, r) in out.iter_mut().zip(results) {
        *o = r?;
    }
    Ok(out)
}
