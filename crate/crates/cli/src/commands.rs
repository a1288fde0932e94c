use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use hograsp::config::parse_weights;
use hograsp::contact::{
    aggregate, aggregate_from_csv, aggregate_to_csv, annotations_to_csv, contact_map_from_distances, export_contact_visual, fingertip_accuracy, fractions_from_csv, fractions_to_csv, frames_to_csv,
    parse_annotations, vertex_distances, ContactMap, FrameContact,
};
use hograsp::dataset::{parse_poses, poses_to_text, read_text, FrameData, FrameSet};
use hograsp::energy::{EnergyConfig, Problem};
use hograsp::geometry::{transform_point, MeshQuery};
use hograsp::mesh_io::{parse_ply, write_ply};
use hograsp::optimize::{minimize, OptimizeError, OptimizerConfig, Status, Trace};
use hograsp::spherize::{spherize as pack, SpherizeError};
use hograsp::synth::{generate, SceneAssets, SyntheticScene};
use hograsp::{GraspState, TriMesh, Vec3};

use crate::common::{load_hand, load_mesh, write, CliError, Outcome};
use crate::{CompareArgs, EvaluateArgs, RefineArgs, SpherizeArgs, SynthArgs};

fn edge_list(edges: &[(usize, usize)]) -> String {
    edges.iter().map(|(a, b)| format!("\n  edge {a} {b}")).collect()
}

pub fn spherize(a: &SpherizeArgs) -> Result<Outcome, CliError> {
    let mesh = load_mesh(&a.mesh, None)?;
    let packing = match pack(&mesh, a.voxel, a.coverage, a.max_spheres) {
        Ok(p) => p,
        Err(SpherizeError::NonWatertight(edges)) => {
            return Err(CliError::input(format!("{}: mesh is not watertight; {} open or non-manifold edge(s):{}", a.mesh, edges.len(), edge_list(&edges))));
        }
        Err(e) => return Err(CliError::input(format!("{}: {e}", a.mesh))),
    };
    write(&a.output, packing.set.to_text())?;
    println!("spheres {}", packing.set.len());
    println!("coverage {:.4}", packing.coverage);
    println!("max_radius {:.4}", packing.set.max_radius());
    Ok(Outcome::Done)
}

fn frame_id(i: usize) -> String {
    format!("frame{i:04}")
}

struct SynthRun {
    scene: SyntheticScene,
    seed: u64,
    frames: Vec<hograsp::synth::SyntheticFrame>,
}

fn run_synth(path: &Path, seed: Option<u64>, count: Option<usize>, model: hograsp::HandModel) -> Result<SynthRun, CliError> {
    let text = read_text(path)?;
    let (scene, cfg_seed, cfg_frames) = SyntheticScene::from_config(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let seed = seed.or(cfg_seed).unwrap_or(0);
    let n = count.or(cfg_frames).unwrap_or(1);
    if n == 0 {
        return Err(CliError::input("frame count must be at least 1"));
    }
    let mesh = load_mesh(&scene.object, None)?;
    let assets = SceneAssets::new(model, &scene.object, mesh).map_err(|e| CliError::input(e.to_string()))?;
    let frames = (0..n).into_par_iter().map(|i| generate(&scene, &assets, seed.wrapping_add(i as u64))).collect::<Result<Vec<_>, _>>().map_err(|e| CliError::input(e.to_string()))?;
    Ok(SynthRun { scene, seed, frames })
}

fn ground_truth_files(run: &SynthRun, dir: &Path) -> Result<(), CliError> {
    let gt: Vec<(String, GraspState)> = run.frames.iter().enumerate().map(|(i, f)| (frame_id(i), f.ground_truth.clone())).collect();
    write(&dir.join("ground_truth.txt"), poses_to_text(&gt))?;
    let ann: BTreeMap<String, [Vec3; 5]> = run.frames.iter().enumerate().map(|(i, f)| (frame_id(i), f.ground_truth_fingertips())).collect();
    write(&dir.join("annotations.csv"), annotations_to_csv(&ann))?;
    write(&dir.join("scene.cfg"), format!("{}seed = {}\nframes = {}\n", run.scene.to_config(), run.seed, run.frames.len()))
}

pub fn synth(a: &SynthArgs, seed: Option<u64>) -> Result<Outcome, CliError> {
    let run = run_synth(&a.scene, seed, a.frames, hograsp::HandModel::default_model())?;
    let set = FrameSet {
        object: run.scene.object.clone(),
        cameras: run.frames[0].problem.cameras.clone(),
        frames: run
            .frames
            .iter()
            .enumerate()
            .map(|(i, f)| FrameData { id: frame_id(i), initial: f.initial.clone(), maps: f.problem.maps.clone(), keypoints: f.problem.keypoint_targets.clone() })
            .collect(),
    };
    set.write_dir(&a.output)?;
    ground_truth_files(&run, &a.output)?;
    println!("frames {}", run.frames.len());
    Ok(Outcome::Done)
}

fn load_weights(path: Option<&PathBuf>) -> Result<(EnergyConfig, OptimizerConfig), CliError> {
    match path {
        None => Ok((EnergyConfig::default(), OptimizerConfig::default())),
        Some(p) => parse_weights(&read_text(p)?).map_err(|e| CliError::input(format!("{}: {e}", p.display()))),
    }
}

enum FrameResult {
    Done(Box<GraspState>, Trace),
    NonFinite(Trace),
}

pub fn refine(a: &RefineArgs, seed: Option<u64>) -> Result<Outcome, CliError> {
    let (energy, opt) = load_weights(a.weights.as_ref())?;
    opt.validate().map_err(|e| CliError::input(e.to_string()))?;
    let model = load_hand(&a.hand)?;
    let jobs: Vec<(String, Problem, GraspState)> = if let Some(scene) = &a.input.scene {
        let run = run_synth(scene, seed, a.count, model)?;
        ground_truth_files(&run, &a.output)?;
        run.frames.into_iter().enumerate().map(|(i, f)| (frame_id(i), f.problem, f.initial)).collect()
    } else {
        let dir = a.input.frames.as_ref().expect("clap requires one input");
        let set = FrameSet::read_dir(dir)?;
        let mesh = load_mesh(&set.object, Some(dir))?;
        let assets = SceneAssets::new(model, &set.object, mesh).map_err(|e| CliError::input(e.to_string()))?;
        set.frames
            .into_iter()
            .map(|f| {
                let problem = Problem {
                    model: assets.model.clone(),
                    hand_spheres: assets.hand_spheres.clone(),
                    object_spheres: assets.object_spheres.clone(),
                    object_mesh: assets.object_mesh.clone(),
                    cameras: set.cameras.clone(),
                    maps: f.maps,
                    keypoint_targets: f.keypoints,
                };
                (f.id, problem, f.initial)
            })
            .collect()
    };
    for (id, problem, _) in &jobs {
        problem.validate().map_err(|e| CliError::input(format!("frame `{id}`: {e}")))?;
    }
    let results = jobs
        .par_iter()
        .map(|(id, problem, start)| match minimize(problem, start, &energy, &opt) {
            Ok((s, t)) => Ok(FrameResult::Done(Box::new(s), t)),
            Err(OptimizeError::NonFiniteEnergy { trace, .. }) => Ok(FrameResult::NonFinite(trace)),
            Err(e) => Err(CliError::input(format!("frame `{id}`: {e}"))),
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut poses = Vec::new();
    let mut summary = String::from("frame,status,iterations,initial_total,final_total\n");
    let mut converged = true;
    for ((id, _, start), r) in jobs.iter().zip(&results) {
        let (state, trace, status) = match r {
            FrameResult::Done(s, t) => (&**s, t, if t.status == Status::Converged { "converged" } else { "max_iterations" }),
            FrameResult::NonFinite(t) => (start, t, "non_finite"),
        };
        converged &= status == "converged";
        poses.push((id.clone(), state.clone()));
        write(&a.output.join("traces").join(format!("{id}.csv")), trace.to_csv())?;
        let first = trace.records.first().map_or(f64::NAN, |r| r.total);
        let _ = writeln!(summary, "{id},{status},{},{first},{}", trace.iterations(), trace.final_total());
    }
    write(&a.output.join("poses.txt"), poses_to_text(&poses))?;
    write(&a.output.join("summary.csv"), &summary)?;
    print!("{summary}");
    Ok(if converged { Outcome::Done } else { Outcome::NotConverged })
}

pub fn evaluate(a: &EvaluateArgs) -> Result<Outcome, CliError> {
    if !(a.threshold > 0.0 && a.threshold.is_finite()) {
        return Err(CliError::input(format!("--threshold must be positive, got {}", a.threshold)));
    }
    let pose_path = if a.poses.is_dir() { a.poses.join("poses.txt") } else { a.poses.clone() };
    let poses = parse_poses(&read_text(&pose_path)?, &pose_path.display().to_string())?;
    if poses.is_empty() {
        return Err(CliError::input(format!("{}: no frames", pose_path.display())));
    }
    let model = load_hand(&a.hand)?;
    let object = load_mesh(&a.object, None)?;
    let query = MeshQuery::new(object).map_err(|edges| CliError::input(format!("{}: object mesh is not watertight; {} bad edge(s):{}", a.object, edges.len(), edge_list(&edges))))?;

    // Distances are measured in the object frame, so the query structure is
    // built once.
    let maps: Vec<ContactMap> = poses
        .par_iter()
        .map(|(_, state)| {
            let to_object = state.object.isometry().inverse();
            let mut hand = model.posed_mesh(&state.hand);
            for v in hand.vertices.iter_mut() {
                *v = transform_point(&to_object, v);
            }
            contact_map_from_distances(&vertex_distances(&hand, &query), a.threshold)
        })
        .collect();
    let rows: Vec<FrameContact> =
        poses.iter().zip(&maps).map(|((id, _), m)| FrameContact { frame: id.clone(), contacts: m.fractions.iter().filter(|f| **f > 0.0).count(), mean_penetration: m.penetration_mean }).collect();
    let agg = aggregate(&maps).map_err(|e| CliError::input(e.to_string()))?;
    write(&a.output.join("frames.csv"), frames_to_csv(&rows))?;
    write(&a.output.join("aggregate.csv"), aggregate_to_csv(&agg))?;
    write(&a.output.join("fractions.csv"), fractions_to_csv(&agg.fractions))?;
    write(&a.output.join("contacts.ply"), export_contact_visual(&agg, &model.rest_mesh).map_err(|e| CliError::input(e.to_string()))?)?;
    print!("{}", aggregate_to_csv(&agg));

    if let Some(ann_path) = &a.annotations {
        let ann = parse_annotations(&read_text(ann_path)?).map_err(|e| CliError::input(format!("{}: {e}", ann_path.display())))?;
        let predicted = poses.iter().map(|(id, s)| (id.clone(), s.hand.clone())).collect();
        let eval = fingertip_accuracy(&model, &predicted, &ann).map_err(|e| CliError::input(e.to_string()))?;
        write(&a.output.join("fingertips.csv"), eval.per_frame_csv())?;
        write(&a.output.join("fingertip_summary.csv"), eval.summary())?;
        print!("{}", eval.summary());
    }
    Ok(Outcome::Done)
}

struct Evaluation {
    frames: usize,
    contact_fraction: f64,
    penetration_mean: f64,
    penetration_std: f64,
    fractions: Vec<f64>,
    mesh: TriMesh,
}

fn read_evaluation(dir: &Path) -> Result<Evaluation, CliError> {
    let at = |name: &str| -> Result<(PathBuf, String), CliError> {
        let p = dir.join(name);
        let text = read_text(&p)?;
        Ok((p, text))
    };
    let (p, text) = at("aggregate.csv")?;
    let summary = aggregate_from_csv(&text).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?;
    let (p, text) = at("fractions.csv")?;
    let fractions = fractions_from_csv(&text).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?;
    let (p, text) = at("contacts.ply")?;
    let mesh = parse_ply(&text).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?.mesh;
    if fractions.len() != mesh.vertices.len() || fractions.len() != summary.vertices {
        return Err(CliError::input(format!("{}: fractions, summary and mesh disagree on the vertex count", dir.display())));
    }
    Ok(Evaluation { frames: summary.frames, contact_fraction: summary.contact_fraction, penetration_mean: summary.penetration_mean, penetration_std: summary.penetration_std, fractions, mesh })
}

pub fn compare(a: &CompareArgs) -> Result<Outcome, CliError> {
    let ea = read_evaluation(&a.eval_a)?;
    let eb = read_evaluation(&a.eval_b)?;
    if ea.fractions.len() != eb.fractions.len() {
        return Err(CliError::input(format!("vertex-count mismatch: {} has {}, {} has {}", a.eval_a.display(), ea.fractions.len(), a.eval_b.display(), eb.fractions.len())));
    }
    let mut report = String::from("metric,a,b,delta\n");
    let _ = writeln!(report, "frames,{},{},{}", ea.frames, eb.frames, eb.frames as i64 - ea.frames as i64);
    for (name, va, vb) in
        [("contact_fraction", ea.contact_fraction, eb.contact_fraction), ("penetration_mean", ea.penetration_mean, eb.penetration_mean), ("penetration_std", ea.penetration_std, eb.penetration_std)]
    {
        let _ = writeln!(report, "{name},{va:.6},{vb:.6},{:.6}", vb - va);
    }
    write(&a.output.join("report.csv"), &report)?;
    for (name, e) in [("a.ply", &ea), ("b.ply", &eb)] {
        let colors: Vec<[u8; 3]> = e.fractions.iter().map(|&f| hograsp::contact::contact_color(f)).collect();
        write(&a.output.join(name), write_ply(&e.mesh, Some(&colors)))?;
    }
    print!("{report}");
    Ok(Outcome::Done)
}
