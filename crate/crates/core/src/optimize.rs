//! Gradient descent with Armijo backtracking over the packed grasp state.
//!
//! Packed layout (57 entries):
//!
//! | entries | meaning |
//! |---|---|
//! | 0–2 | hand global rotation (axis-angle, rad) |
//! | 3–5 | hand global translation (mm) |
//! | 6–50 | joint angles, joint-major `(flex, abd, twist)` (rad) |
//! | 51–53 | object rotation (axis-angle, rad) |
//! | 54–56 | object translation (mm) |
//!
//! Each iteration sweeps the parameter blocks in that order. A block takes
//! one backtracking step along its scaled negative gradient, with the
//! gradient recomputed at the current state. Rotations are updated by
//! left-composing the increment, not by adding axis-angle vectors.

use std::fmt::Write as _;

use thiserror::Error;

use crate::energy::{compose_rotation, energy_value, tangent_gradient, tangent_to_packed, EnergyConfig, EnergyError, Problem, Terms};
use crate::geometry::Vec3;
use crate::hand_model::{HandPose, ObjectPose, NUM_ANGLES};

pub const NUM_PARAMS: usize = 57;
pub const HAND_ROT: usize = 0;
pub const HAND_TRANS: usize = 3;
pub const HAND_ANGLES: usize = 6;
pub const OBJ_ROT: usize = 51;
pub const OBJ_TRANS: usize = 54;

/// Armijo sufficient-decrease constant.
pub const ARMIJO_C: f64 = 1e-4;
/// Consecutive small relative changes required to stop.
pub const CONVERGENCE_WINDOW: usize = 5;
/// Backtracking halvings before a block gives up for this iteration.
pub const MAX_BACKTRACKS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Rotation,
    Translation,
    Angles,
}

const BLOCKS: [(usize, usize, Kind); 5] =
    [(HAND_ROT, 3, Kind::Rotation), (HAND_TRANS, 3, Kind::Translation), (HAND_ANGLES, NUM_ANGLES, Kind::Angles), (OBJ_ROT, 3, Kind::Rotation), (OBJ_TRANS, 3, Kind::Translation)];

fn kind_of(i: usize) -> Kind {
    BLOCKS.iter().find(|(s, n, _)| (*s..s + n).contains(&i)).map(|b| b.2).expect("index < NUM_PARAMS")
}

/// Pick the `[rotation, translation, angle]` entry that applies to
/// parameter `i`.
pub fn block_value(i: usize, per_kind: &[f64; 3]) -> f64 {
    match kind_of(i) {
        Kind::Rotation => per_kind[0],
        Kind::Translation => per_kind[1],
        Kind::Angles => per_kind[2],
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GraspState {
    pub hand: HandPose,
    pub object: ObjectPose,
}

impl GraspState {
    pub fn pack(&self) -> [f64; NUM_PARAMS] {
        let mut v = [0.0; NUM_PARAMS];
        v[HAND_ROT..HAND_ROT + 3].copy_from_slice(self.hand.global_rotation.as_slice());
        v[HAND_TRANS..HAND_TRANS + 3].copy_from_slice(self.hand.global_translation.as_slice());
        v[HAND_ANGLES..HAND_ANGLES + NUM_ANGLES].copy_from_slice(&self.hand.joint_angles);
        v[OBJ_ROT..OBJ_ROT + 3].copy_from_slice(self.object.rotation.as_slice());
        v[OBJ_TRANS..OBJ_TRANS + 3].copy_from_slice(self.object.translation.as_slice());
        v
    }

    pub fn unpack(v: &[f64; NUM_PARAMS]) -> GraspState {
        let v3 = |s: usize| Vec3::new(v[s], v[s + 1], v[s + 2]);
        let mut joint_angles = [0.0; NUM_ANGLES];
        joint_angles.copy_from_slice(&v[HAND_ANGLES..HAND_ANGLES + NUM_ANGLES]);
        GraspState { hand: HandPose { global_rotation: v3(HAND_ROT), global_translation: v3(HAND_TRANS), joint_angles }, object: ObjectPose { rotation: v3(OBJ_ROT), translation: v3(OBJ_TRANS) } }
    }

    /// Apply a step given in tangent coordinates: rotation entries are
    /// world-frame increments composed on the left, the rest are added.
    pub fn retract(&self, delta: &[f64; NUM_PARAMS]) -> GraspState {
        let mut v = self.pack();
        for i in 0..NUM_PARAMS {
            if kind_of(i) != Kind::Rotation {
                v[i] += delta[i];
            }
        }
        for start in [HAND_ROT, OBJ_ROT] {
            let d = Vec3::new(delta[start], delta[start + 1], delta[start + 2]);
            if d != Vec3::zeros() {
                let r = compose_rotation(&d, &Vec3::new(v[start], v[start + 1], v[start + 2]));
                v[start..start + 3].copy_from_slice(r.as_slice());
            }
        }
        GraspState::unpack(&v)
    }

    /// Move tangent coordinate `i` by `h`.
    pub fn perturbed_tangent(&self, i: usize, h: f64) -> GraspState {
        let mut d = [0.0; NUM_PARAMS];
        d[i] = h;
        self.retract(&d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Largest trial step multiplier.
    pub initial_step: f64,
    /// Backtracking factor.
    pub step_decay: f64,
    /// Relative energy change regarded as converged.
    pub tolerance: f64,
    /// `[rotation rad, translation mm, angles rad]`.
    pub block_scales: [f64; 3],
    /// `true` entries never change.
    pub frozen: [bool; NUM_PARAMS],
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { max_iterations: 300, initial_step: 1.0, step_decay: 0.5, tolerance: 1e-5, block_scales: [1.0, 10.0, 0.5], frozen: [false; NUM_PARAMS] }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        let bad = |m: &str| Err(OptimizeError::InvalidConfig(m.to_string()));
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive");
        }
        if !(self.initial_step > 0.0) {
            return bad("initial_step must be positive");
        }
        if !(self.step_decay > 0.0 && self.step_decay < 1.0) {
            return bad("step_decay must lie in (0, 1)");
        }
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be positive");
        }
        if self.block_scales.iter().any(|s| !(*s > 0.0)) {
            return bad("block scales must be positive");
        }
        Ok(())
    }

    /// Freeze both object-pose blocks.
    pub fn freeze_object(mut self) -> Self {
        for f in &mut self.frozen[OBJ_ROT..NUM_PARAMS] {
            *f = true;
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub terms: Terms,
    pub total: f64,
    /// Largest applied parameter change this iteration.
    pub step: f64,
    /// Largest |gradient| entry at the start of the iteration.
    pub max_gradient: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// Entry 0 is the initial state.
    pub records: Vec<TraceRecord>,
    pub status: Status,
}

impl Trace {
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn final_total(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.total)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,mask,repulsion,limit,keypoint,total,step\n");
        for r in &self.records {
            let t = &r.terms;
            let _ = writeln!(s, "{},{},{},{},{},{},{}", r.iteration, t.mask, t.repulsion, t.limit, t.keypoint, r.total, r.step);
        }
        s
    }
}

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("non-finite energy at iteration {iteration}")]
    NonFiniteEnergy { iteration: usize, trace: Trace },
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

/// Minimize the total energy from `start`.
pub fn minimize(problem: &Problem, start: &GraspState, energy: &EnergyConfig, opt: &OptimizerConfig) -> Result<(GraspState, Trace), OptimizeError> {
    opt.validate()?;
    problem.validate()?;
    let mut state = start.clone();
    let (terms, mut current) = energy_value(problem, &state, energy)?;
    let mut records = vec![TraceRecord { iteration: 0, terms, total: current, step: 0.0, max_gradient: 0.0 }];
    if !current.is_finite() {
        return Err(OptimizeError::NonFiniteEnergy { iteration: 0, trace: Trace { records, status: Status::MaxIterations } });
    }
    let mut alphas = [opt.initial_step; BLOCKS.len()];
    let mut quiet = 0;
    for iteration in 1..=opt.max_iterations {
        let before = current;
        let mut max_step = 0.0f64;
        let mut max_gradient = 0.0f64;
        let mut last_terms = records.last().expect("non-empty").terms;
        for (b, &(start_idx, len, kind)) in BLOCKS.iter().enumerate() {
            if opt.frozen[start_idx..start_idx + len].iter().all(|&f| f) {
                continue;
            }
            let grad = tangent_gradient(problem, &state, energy)?;
            if grad.iter().any(|g| !g.is_finite()) {
                records.push(TraceRecord { iteration, terms: last_terms, total: current, step: max_step, max_gradient });
                return Err(OptimizeError::NonFiniteEnergy { iteration, trace: Trace { records, status: Status::MaxIterations } });
            }
            let scale = match kind {
                Kind::Rotation => opt.block_scales[0],
                Kind::Translation => opt.block_scales[1],
                Kind::Angles => opt.block_scales[2],
            };
            // A partly frozen rotation cannot take a multiplicative step
            // without moving its frozen entries, so it steps additively on
            // the packed axis-angle entries instead.
            let additive = kind == Kind::Rotation && opt.frozen[start_idx..start_idx + len].iter().any(|&f| f);
            let grad = if additive { tangent_to_packed(&state, &grad) } else { grad };
            let mut dir = [0.0; NUM_PARAMS];
            let mut slope = 0.0;
            for i in start_idx..start_idx + len {
                max_gradient = max_gradient.max(grad[i].abs());
                if !opt.frozen[i] {
                    dir[i] = -scale * grad[i];
                    slope += grad[i] * dir[i];
                }
            }
            if slope >= 0.0 {
                continue;
            }
            let mut alpha = (2.0 * alphas[b]).min(opt.initial_step);
            let mut accepted = false;
            for _ in 0..MAX_BACKTRACKS {
                let step: [f64; NUM_PARAMS] = std::array::from_fn(|i| alpha * dir[i]);
                let trial = if additive {
                    let mut v = state.pack();
                    v.iter_mut().zip(&step).for_each(|(x, d)| *x += d);
                    GraspState::unpack(&v)
                } else {
                    state.retract(&step)
                };
                let (terms, value) = energy_value(problem, &trial, energy)?;
                if value.is_finite() && value <= current + ARMIJO_C * alpha * slope {
                    max_step = max_step.max(step.iter().fold(0.0, |m, s| m.max(s.abs())));
                    state = trial;
                    current = value;
                    last_terms = terms;
                    accepted = true;
                    break;
                }
                alpha *= opt.step_decay;
            }
            if accepted {
                alphas[b] = alpha;
            }
        }
        if !current.is_finite() {
            return Err(OptimizeError::NonFiniteEnergy { iteration, trace: Trace { records, status: Status::MaxIterations } });
        }
        records.push(TraceRecord { iteration, terms: last_terms, total: current, step: max_step, max_gradient });
        let rel = (before - current).abs() / before.abs().max(f64::MIN_POSITIVE);
        if max_step == 0.0 || current == 0.0 {
            return Ok((state, Trace { records, status: Status::Converged }));
        }
        quiet = if rel < opt.tolerance { quiet + 1 } else { 0 };
        if quiet >= CONVERGENCE_WINDOW {
            return Ok((state, Trace { records, status: Status::Converged }));
        }
    }
    Ok((state, Trace { records, status: Status::MaxIterations }))
}
