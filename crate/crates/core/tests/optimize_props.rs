use hograsp::energy::{total_energy, EnergyConfig, Problem, Weights};
use hograsp::hand_model::{HandModel, HandPose, NUM_ANGLES};
use hograsp::optimize::*;
use hograsp::spherize::{Sphere, SphereSet};
use hograsp::synth::{generate, SceneAssets, SyntheticScene};
use hograsp::{ObjectPose, TriMesh, Vec3};
use proptest::prelude::*;

fn weights(keypoint: f64, repulsion: f64, limit: f64, mask: f64) -> EnergyConfig {
    EnergyConfig { weights: Weights { keypoint, repulsion, limit, mask }, ..EnergyConfig::default() }
}

/// A problem with no cameras, for terms that need no rendering.
fn bare_problem(model: HandModel, hand_spheres: SphereSet, object_spheres: SphereSet) -> Problem {
    Problem { model, hand_spheres, object_spheres, object_mesh: TriMesh::new(Vec::new(), Vec::new()), cameras: Vec::new(), maps: Vec::new(), keypoint_targets: Vec::new() }
}

fn one_sphere(center: Vec3, radius: f64, joint: Option<usize>) -> SphereSet {
    SphereSet { spheres: vec![Sphere { center, radius, joint }], source_hash: String::new() }
}

fn empty() -> SphereSet {
    SphereSet { spheres: Vec::new(), source_hash: String::new() }
}

fn frame(seed: u64) -> hograsp::synth::SyntheticFrame {
    generate(&SyntheticScene::default(), &SceneAssets::load("cube").unwrap(), seed).unwrap()
}

#[test]
fn ground_truth_is_a_fixed_point() {
    let f = frame(3);
    let opt = OptimizerConfig::default();
    let (end, trace) = minimize(&f.problem, &f.ground_truth, &EnergyConfig::default(), &opt).unwrap();
    assert!(trace.iterations() <= 2, "{} iterations", trace.iterations());
    let first = trace.records[0].total;
    assert!((first - trace.final_total()).abs() <= opt.tolerance * first.abs().max(1e-12), "{first} -> {}", trace.final_total());
    assert!(trace.records[0].terms.mask == 0.0 && trace.records[0].terms.keypoint == 0.0);
    assert_eq!(end.object, f.ground_truth.object);
}

#[test]
fn keypoint_only_translation_converges() {
    let model = HandModel::default_model();
    let target = HandPose { global_translation: Vec3::new(12.0, -30.0, 45.0), global_rotation: Vec3::new(0.2, 0.1, -0.3), ..HandPose::default() };
    let mut problem = bare_problem(model, empty(), empty());
    let kin = problem.model.forward_kinematics(&target);
    problem.keypoint_targets = problem.model.keypoints(&kin).into_iter().enumerate().collect();
    let mut start = GraspState { hand: target.clone(), object: ObjectPose::default() };
    start.hand.global_translation += Vec3::new(25.0, 18.0, -31.0);
    let mut opt = OptimizerConfig { max_iterations: 200, tolerance: 1e-14, ..OptimizerConfig::default() };
    opt.frozen = [true; NUM_PARAMS];
    opt.frozen[HAND_TRANS..HAND_TRANS + 3].fill(false);
    let (end, trace) = minimize(&problem, &start, &weights(1.0, 0.0, 0.0, 0.0), &opt).unwrap();
    let err = (end.hand.global_translation - target.global_translation).norm();
    assert!(err < 1e-3, "{err} mm after {} iterations", trace.iterations());
    assert!(trace.iterations() <= 200);
}

#[test]
fn two_spheres_separate_to_the_allowance() {
    let (rh, ro, t) = (10.0, 8.0, 2.0);
    let model = HandModel::default_model();
    let problem = bare_problem(model, one_sphere(Vec3::zeros(), rh, Some(0)), one_sphere(Vec3::zeros(), ro, None));
    // Centers start 5 mm closer than the allowed reach.
    let reach = rh + ro - t;
    let start = GraspState { hand: HandPose { global_translation: Vec3::new(reach - 5.0, 0.0, 0.0), ..HandPose::default() }, object: ObjectPose::default() };
    let config = EnergyConfig { penetration_allowance: t, ..weights(0.0, 1.0, 0.0, 0.0) };
    let (end, trace) = minimize(&problem, &start, &config, &OptimizerConfig::default()).unwrap();
    assert_eq!(trace.final_total(), 0.0);
    let gap = (end.hand.global_translation - end.object.translation).norm();
    assert!(gap >= reach - 1e-3, "center distance {gap}");
    assert_eq!(total_energy(&problem, &end, &config).unwrap().terms.repulsion, 0.0);
}

fn short_run(seed: u64, opt: &OptimizerConfig) -> (GraspState, Trace, GraspState) {
    let f = frame(seed);
    let (end, trace) = minimize(&f.problem, &f.initial, &EnergyConfig::default(), opt).unwrap();
    (end, trace, f.initial)
}

#[test]
fn accepted_totals_never_increase() {
    let opt = OptimizerConfig { max_iterations: 25, ..OptimizerConfig::default() };
    for seed in [1, 2] {
        let (_, trace, _) = short_run(seed, &opt);
        assert!(trace.iterations() > 0);
        for w in trace.records.windows(2) {
            assert!(w[1].total <= w[0].total, "seed {seed}: {} then {}", w[0].total, w[1].total);
        }
    }
}

#[test]
fn frozen_parameters_do_not_move() {
    let mut opt = OptimizerConfig { max_iterations: 15, ..OptimizerConfig::default() }.freeze_object();
    for i in (HAND_ANGLES..HAND_ANGLES + NUM_ANGLES).step_by(4) {
        opt.frozen[i] = true;
    }
    opt.frozen[HAND_ROT + 1] = true;
    let (end, trace, start) = short_run(4, &opt);
    assert!(trace.records.iter().any(|r| r.step > 0.0));
    let (a, b) = (start.pack(), end.pack());
    for i in 0..NUM_PARAMS {
        if opt.frozen[i] {
            assert_eq!(a[i].to_bits(), b[i].to_bits(), "parameter {i}");
        }
    }
    assert!((0..NUM_PARAMS).any(|i| !opt.frozen[i] && a[i] != b[i]));
}

#[test]
fn identical_inputs_give_identical_traces() {
    let opt = OptimizerConfig { max_iterations: 10, ..OptimizerConfig::default() };
    let (end_a, trace_a, _) = short_run(5, &opt);
    let (end_b, trace_b, _) = short_run(5, &opt);
    assert_eq!(trace_a, trace_b);
    assert_eq!(end_a.pack().map(f64::to_bits), end_b.pack().map(f64::to_bits));
    assert_eq!(trace_a.to_csv(), trace_b.to_csv());
}

#[test]
fn pack_layout_and_zero_vector() {
    let zero = GraspState::unpack(&[0.0; NUM_PARAMS]);
    assert_eq!(zero, GraspState::default());
    assert_eq!(zero.hand.joint_angles, [0.0; NUM_ANGLES]);
    let v: [f64; NUM_PARAMS] = std::array::from_fn(|i| i as f64);
    let s = GraspState::unpack(&v);
    assert_eq!(s.hand.global_rotation, Vec3::new(0.0, 1.0, 2.0));
    assert_eq!(s.hand.global_translation, Vec3::new(3.0, 4.0, 5.0));
    assert_eq!(s.hand.joint_angles[0], 6.0);
    assert_eq!(s.hand.joint_angles[NUM_ANGLES - 1], 50.0);
    assert_eq!(s.object.rotation, Vec3::new(51.0, 52.0, 53.0));
    assert_eq!(s.object.translation, Vec3::new(54.0, 55.0, 56.0));
}

#[test]
fn invalid_configs_are_rejected() {
    let f = frame(1);
    let bad = [
        OptimizerConfig { max_iterations: 0, ..OptimizerConfig::default() },
        OptimizerConfig { tolerance: 0.0, ..OptimizerConfig::default() },
        OptimizerConfig { step_decay: 1.0, ..OptimizerConfig::default() },
        OptimizerConfig { block_scales: [1.0, -1.0, 0.5], ..OptimizerConfig::default() },
    ];
    for opt in bad {
        assert!(matches!(minimize(&f.problem, &f.initial, &EnergyConfig::default(), &opt), Err(OptimizeError::InvalidConfig(_))));
    }
}

proptest! {
    #[test]
    fn pack_round_trip_is_exact(v in prop::array::uniform32(-1e3..1e3f64), w in prop::array::uniform25(-1e3..1e3f64)) {
        let mut packed = [0.0; NUM_PARAMS];
        packed[..32].copy_from_slice(&v);
        packed[32..].copy_from_slice(&w);
        let s = GraspState::unpack(&packed);
        prop_assert_eq!(s.pack().map(f64::to_bits), packed.map(f64::to_bits));
        prop_assert_eq!(GraspState::unpack(&s.pack()), s);
    }
}
