//! Seeded synthetic grasp scenes: ground truth, multi-camera confidence
//! maps, noisy keypoints and a perturbed starting state.

use std::f64::consts::PI;

use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use thiserror::Error;

use crate::assets;
use crate::config::{ConfigError, KeyValues};
use crate::energy::{repulsion_energy, ConfidenceMap, EnergyError, Problem, DEFAULT_PENETRATION_ALLOWANCE};
use crate::geometry::{TriMesh, Vec3};
use crate::hand_model::{HandModel, HandPose, ObjectPose, NUM_JOINTS};
use crate::optimize::GraspState;
use crate::render::{Camera, LabelImage};
use crate::spherize::{hand_spheres, rest_to_world, spherize, SphereSet, SpherizeError, DEFAULT_COVERAGE, DEFAULT_MAX_SPHERES, DEFAULT_VOXEL_SIZE};

/// Fraction of each limit range kept clear when sampling ground truth.
pub const LIMIT_MARGIN: f64 = 0.0;
/// Bisection stops once the bracket is narrower than this (mm).
pub const PLACEMENT_TOL: f64 = 0.01;
/// Palm center in rest-model coordinates (mm).
pub const PALM_CENTER: [f64; 3] = [0.0, 55.0, 0.0];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Spherize(#[from] SpherizeError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    /// Bundled mesh name.
    pub object: String,
    pub cameras: usize,
    pub ring_radius: f64,
    pub image_size: usize,
    pub focal: f64,
    pub blur_sigma: f64,
    pub flip_rate: f64,
    pub keypoint_sigma: f64,
    pub rotation_perturbation_deg: f64,
    pub translation_perturbation: f64,
    pub angle_perturbation_deg: f64,
}

impl Default for SyntheticScene {
    fn default() -> Self {
        Self {
            object: "cube".into(),
            cameras: 5,
            ring_radius: 600.0,
            image_size: 64,
            focal: 110.0,
            blur_sigma: 0.0,
            flip_rate: 0.0,
            keypoint_sigma: 0.0,
            rotation_perturbation_deg: 10.0,
            translation_perturbation: 20.0,
            angle_perturbation_deg: 15.0,
        }
    }
}

pub const SCENE_KEYS: &[&str] = &[
    "object",
    "cameras",
    "ring_radius",
    "image_size",
    "focal",
    "blur_sigma",
    "flip_rate",
    "keypoint_sigma",
    "rotation_perturbation_deg",
    "translation_perturbation",
    "angle_perturbation_deg",
    "seed",
    "frames",
];

impl SyntheticScene {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidScene(m));
        if self.cameras == 0 {
            return bad("need at least one camera".into());
        }
        if self.image_size == 0 || !(self.focal > 0.0) || !(self.ring_radius > 0.0) {
            return bad("camera ring needs positive size, focal length and radius".into());
        }
        let noise = [
            ("blur_sigma", self.blur_sigma),
            ("flip_rate", self.flip_rate),
            ("keypoint_sigma", self.keypoint_sigma),
            ("rotation_perturbation_deg", self.rotation_perturbation_deg),
            ("translation_perturbation", self.translation_perturbation),
            ("angle_perturbation_deg", self.angle_perturbation_deg),
        ];
        for (name, v) in noise {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative"));
            }
        }
        if self.flip_rate > 1.0 {
            return bad("flip_rate must be at most 1".into());
        }
        Ok(())
    }

    /// Scene from a key-value config. Returns the scene plus the optional
    /// `seed` and `frames` entries.
    pub fn from_config(text: &str) -> Result<(SyntheticScene, Option<u64>, Option<usize>), SynthError> {
        let kv = KeyValues::parse(text)?;
        kv.check_known(SCENE_KEYS)?;
        let mut s = SyntheticScene::default();
        if let Some(o) = kv.get::<String>("object")? {
            s.object = o;
        }
        if let Some(n) = kv.get::<usize>("cameras")? {
            s.cameras = n;
        }
        if let Some(n) = kv.get::<usize>("image_size")? {
            s.image_size = n;
        }
        for (key, slot) in [("ring_radius", &mut s.ring_radius), ("focal", &mut s.focal)] {
            if let Some(v) = kv.positive(key)? {
                *slot = v;
            }
        }
        for (key, slot) in [
            ("blur_sigma", &mut s.blur_sigma),
            ("flip_rate", &mut s.flip_rate),
            ("keypoint_sigma", &mut s.keypoint_sigma),
            ("rotation_perturbation_deg", &mut s.rotation_perturbation_deg),
            ("translation_perturbation", &mut s.translation_perturbation),
            ("angle_perturbation_deg", &mut s.angle_perturbation_deg),
        ] {
            if let Some(v) = kv.non_negative(key)? {
                *slot = v;
            }
        }
        s.validate()?;
        Ok((s, kv.get("seed")?, kv.get("frames")?))
    }

    pub fn to_config(&self) -> String {
        format!(
            "object = {}\ncameras = {}\nring_radius = {}\nimage_size = {}\nfocal = {}\nblur_sigma = {}\nflip_rate = {}\nkeypoint_sigma = {}\nrotation_perturbation_deg = {}\ntranslation_perturbation = {}\nangle_perturbation_deg = {}\n",
            self.object,
            self.cameras,
            self.ring_radius,
            self.image_size,
            self.focal,
            self.blur_sigma,
            self.flip_rate,
            self.keypoint_sigma,
            self.rotation_perturbation_deg,
            self.translation_perturbation,
            self.angle_perturbation_deg
        )
    }

    /// Cameras on a ring around the origin, 30° above the horizon, all
    /// looking at the origin.
    pub fn camera_ring(&self) -> Vec<Camera> {
        (0..self.cameras)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / self.cameras as f64;
                let elevation = PI / 6.0;
                let eye = self.ring_radius * Vec3::new(elevation.cos() * a.cos(), elevation.cos() * a.sin(), elevation.sin());
                Camera::look_at(eye, Vec3::zeros(), Vec3::z(), self.focal, self.focal, self.image_size, self.image_size)
            })
            .collect()
    }
}

/// Hand model, object mesh and both sphere sets; expensive to build, so
/// shared across frames.
#[derive(Debug, Clone)]
pub struct SceneAssets {
    pub model: HandModel,
    pub hand_spheres: SphereSet,
    pub object_name: String,
    pub object_mesh: TriMesh,
    pub object_spheres: SphereSet,
}

impl SceneAssets {
    pub fn load(object: &str) -> Result<SceneAssets, SynthError> {
        let model = HandModel::default_model();
        let mesh = assets::bundled_mesh(object).ok_or_else(|| SynthError::UnknownObject(object.to_string()))?;
        Self::new(model, object, mesh)
    }

    pub fn new(model: HandModel, object_name: &str, object_mesh: TriMesh) -> Result<SceneAssets, SynthError> {
        let hand_spheres = hand_spheres(&model)?;
        let object_spheres = spherize(&object_mesh, DEFAULT_VOXEL_SIZE, DEFAULT_COVERAGE, DEFAULT_MAX_SPHERES)?.set;
        Ok(SceneAssets { model, hand_spheres, object_name: object_name.to_string(), object_mesh, object_spheres })
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticFrame {
    pub ground_truth: GraspState,
    pub initial: GraspState,
    pub problem: Problem,
}

impl SyntheticFrame {
    pub fn ground_truth_fingertips(&self) -> [Vec3; 5] {
        let m = &self.problem.model;
        m.fingertips(&m.forward_kinematics(&self.ground_truth.hand))
    }
}

fn uniform(rng: &mut ChaCha8Rng, half: f64) -> f64 {
    if half == 0.0 {
        0.0
    } else {
        rng.random_range(-half..=half)
    }
}

/// Ground-truth hand angles drawn inside the limits (with a margin), and a
/// random global orientation. The object sits at the origin with a random
/// orientation; the hand approaches along its palm normal and stops at the
/// first offset where no sphere pair penetrates beyond the allowance.
pub fn ground_truth(assets: &SceneAssets, rng: &mut ChaCha8Rng) -> GraspState {
    let model = &assets.model;
    let mut hand = HandPose::default();
    for j in 1..NUM_JOINTS {
        for a in 0..3 {
            let (lo, hi) = model.joints[j].limits[a];
            let m = LIMIT_MARGIN * (hi - lo);
            hand.set_angle(j, a, rng.random_range(lo + m..=hi - m));
        }
    }
    let object = ObjectPose { rotation: random_rotation(rng), translation: Vec3::zeros() };
    let hand_rot = UnitQuaternion::from_scaled_axis(random_rotation(rng));
    hand.global_rotation = hand_rot.scaled_axis();
    let palm = Vec3::from(PALM_CENTER);
    let normal = -Vec3::z();
    let kin = model.forward_kinematics(&HandPose { global_rotation: Vec3::zeros(), global_translation: Vec3::zeros(), ..hand.clone() });
    let rest_hand = assets.hand_spheres.posed(&rest_to_world(model, &kin.transforms));
    let object_local = |d: f64| palm + normal * d;
    // In the hand frame the object sits at palm + d·n with the object
    // rotation expressed relative to the hand.
    let rel_rot = hand_rot.inverse() * UnitQuaternion::from_scaled_axis(object.rotation);
    let penetration = |d: f64| {
        let iso = nalgebra::Isometry3::from_parts(nalgebra::Translation3::from(object_local(d)), rel_rot);
        repulsion_energy(&rest_hand, &assets.object_spheres.posed(&[iso]), DEFAULT_PENETRATION_ALLOWANCE).value
    };
    let (mut lo, mut hi) = (0.0, 400.0);
    while penetration(hi) > 0.0 {
        hi *= 2.0;
    }
    while hi - lo > PLACEMENT_TOL {
        let mid = 0.5 * (lo + hi);
        if penetration(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hand.global_translation = -(hand_rot * object_local(hi));
    GraspState { hand, object }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Vec3 {
    let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
        Normal::new(0.0, 1.0).unwrap().sample(rng),
        Normal::new(0.0, 1.0).unwrap().sample(rng),
        Normal::new(0.0, 1.0).unwrap().sample(rng),
        Normal::new(0.0, 1.0).unwrap().sample(rng),
    ));
    q.scaled_axis()
}

/// Uniform perturbation of the hand: a rotation about a random axis by up
/// to the rotation bound, a translation of random direction and length up
/// to the translation bound, and each joint angle by up to the angle bound.
pub fn perturb(state: &GraspState, scene: &SyntheticScene, rng: &mut ChaCha8Rng) -> GraspState {
    let mut out = state.clone();
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let angle = if scene.rotation_perturbation_deg > 0.0 { rng.random_range(0.0..=scene.rotation_perturbation_deg.to_radians()) } else { 0.0 };
    let axis = Vec3::from(axis);
    // Skipped at zero so an unperturbed start is bit-identical.
    if angle > 0.0 {
        out.hand.global_rotation = (UnitQuaternion::from_scaled_axis(axis * angle) * UnitQuaternion::from_scaled_axis(state.hand.global_rotation)).scaled_axis();
    }
    let dir: [f64; 3] = UnitSphere.sample(rng);
    let len = if scene.translation_perturbation > 0.0 { rng.random_range(0.0..=scene.translation_perturbation) } else { 0.0 };
    out.hand.global_translation += Vec3::from(dir) * len;
    let half = scene.angle_perturbation_deg.to_radians();
    for a in out.hand.joint_angles.iter_mut() {
        *a += uniform(rng, half);
    }
    out
}

/// Separable Gaussian blur (clamped borders) of each class plane, then
/// per-pixel renormalization onto the simplex.
pub fn blur_maps(map: &ConfidenceMap, sigma: f64) -> ConfidenceMap {
    if sigma <= 0.0 {
        return map.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let (w, h) = (map.width as isize, map.height as isize);
    let pass = |src: &[[f64; 3]], horizontal: bool| -> Vec<[f64; 3]> {
        let mut out = vec![[0.0; 3]; src.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0; 3];
                for (k, kw) in kernel.iter().enumerate() {
                    let o = k as isize - radius;
                    let (sx, sy) = if horizontal { ((x + o).clamp(0, w - 1), y) } else { (x, (y + o).clamp(0, h - 1)) };
                    let p = src[(sy * w + sx) as usize];
                    for c in 0..3 {
                        acc[c] += kw * p[c];
                    }
                }
                out[(y * w + x) as usize] = acc.map(|v| v / norm);
            }
        }
        out
    };
    let blurred = pass(&pass(&map.probs, true), false);
    let probs = blurred
        .into_iter()
        .map(|p| {
            let s: f64 = p.iter().sum();
            p.map(|v| (v / s).clamp(0.0, 1.0))
        })
        .collect();
    ConfidenceMap { width: map.width, height: map.height, probs }
}

fn noisy_map(img: &LabelImage, scene: &SyntheticScene, rng: &mut ChaCha8Rng) -> ConfidenceMap {
    let mut map = ConfidenceMap::one_hot(img);
    if scene.flip_rate > 0.0 {
        for p in map.probs.iter_mut() {
            if rng.random::<f64>() < scene.flip_rate {
                let current = p.iter().position(|&v| v == 1.0).unwrap_or(2);
                let shift = rng.random_range(1..3);
                *p = [0.0; 3];
                p[(current + shift) % 3] = 1.0;
            }
        }
    }
    blur_maps(&map, scene.blur_sigma)
}

/// Build one frame. Every random draw comes from `seed` in a fixed order.
pub fn generate(scene: &SyntheticScene, assets: &SceneAssets, seed: u64) -> Result<SyntheticFrame, SynthError> {
    scene.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gt = ground_truth(assets, &mut rng);
    let cameras = scene.camera_ring();
    let mut problem = Problem {
        model: assets.model.clone(),
        hand_spheres: assets.hand_spheres.clone(),
        object_spheres: assets.object_spheres.clone(),
        object_mesh: assets.object_mesh.clone(),
        cameras,
        maps: Vec::new(),
        keypoint_targets: Vec::new(),
    };
    let rendered = problem.render(&gt)?;
    problem.maps = rendered.iter().map(|img| noisy_map(img, scene, &mut rng)).collect();
    let kin = problem.model.forward_kinematics(&gt.hand);
    let noise = Normal::new(0.0, scene.keypoint_sigma.max(0.0)).expect("sigma is finite");
    problem.keypoint_targets = problem
        .model
        .keypoints(&kin)
        .into_iter()
        .enumerate()
        .map(|(k, p)| {
            let n = if scene.keypoint_sigma > 0.0 { Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng)) } else { Vec3::zeros() };
            (k, p + n)
        })
        .collect();
    let initial = perturb(&gt, scene, &mut rng);
    Ok(SyntheticFrame { ground_truth: gt, initial, problem })
}

/// Mean fingertip distance (mm) between two hand poses.
pub fn fingertip_error(model: &HandModel, a: &HandPose, b: &HandPose) -> f64 {
    let ta = model.fingertips(&model.forward_kinematics(a));
    let tb = model.fingertips(&model.forward_kinematics(b));
    ta.iter().zip(&tb).map(|(x, y)| (x - y).norm()).sum::<f64>() / 5.0
}
