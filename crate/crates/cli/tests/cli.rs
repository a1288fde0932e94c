use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hograsp::contact::{annotations_to_csv, fractions_from_csv, fractions_to_csv, frames_from_csv, frames_to_csv, parse_annotations};
use hograsp::dataset::{parse_poses, poses_to_text, FrameSet};
use hograsp::mesh_io::{parse_ply, write_obj, write_ply};
use hograsp::spherize::SphereSet;
use hograsp::synth::SyntheticScene;
use tempfile::TempDir;

fn hograsp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hograsp")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = hograsp(args);
    assert_eq!(out.status.code(), Some(0), "{args:?}\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `dir`, keyed by relative path.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Parse every numeric CSV field and print it again at its own precision
/// (shortest form when it has no fixed decimals); files without a
/// dedicated reader must survive this unchanged.
fn assert_csv_round_trip(text: &str, what: &str) {
    let mut back = String::new();
    for line in text.lines() {
        let fields: Vec<String> = line
            .split(',')
            .map(|f| {
                let t = f.trim_start();
                let pad = &f[..f.len() - t.len()];
                match t.parse::<f64>() {
                    Ok(v) => match t.split_once('.') {
                        Some((_, d)) if !t.contains(['e', 'E']) => format!("{pad}{v:.*}", d.len()),
                        _ => format!("{pad}{v}"),
                    },
                    Err(_) => f.to_string(),
                }
            })
            .collect();
        back.push_str(&fields.join(","));
        back.push('\n');
    }
    assert_eq!(back, text, "{what}");
}

fn scene_file(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

const ZERO_NOISE: &str = "object = cylinder\nimage_size = 32\nfocal = 55\nrotation_perturbation_deg = 0\ntranslation_perturbation = 0\nangle_perturbation_deg = 0\nframes = 2\n";
const PERTURBED: &str = "object = cube\nimage_size = 32\nfocal = 55\nframes = 3\n";

#[test]
fn spherize_reports_and_round_trips() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("cube.spheres");
    let stdout = ok(&["spherize", "cube", "-o", s(&out)]);
    assert!(stdout.contains("coverage "), "{stdout}");
    let text = read(&out);
    let set = SphereSet::from_text(&text).unwrap();
    assert!(!set.spheres.is_empty());
    assert_eq!(set.to_text(), text);
    let again = tmp.path().join("again.spheres");
    ok(&["spherize", "cube", "-o", s(&again)]);
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());

    let cyl = tmp.path().join("cyl.spheres");
    let stdout = ok(&["spherize", "cylinder", "--coverage", "0.9", "-o", s(&cyl)]);
    let coverage: f64 = stdout.lines().find_map(|l| l.strip_prefix("coverage ")).unwrap().parse().unwrap();
    assert!(coverage >= 0.9);
}

#[test]
fn non_watertight_mesh_exits_2_with_edges() {
    let tmp = TempDir::new().unwrap();
    let mut mesh = hograsp::assets::bundled_mesh("cube").unwrap();
    mesh.triangles.pop();
    let path = tmp.path().join("open.obj");
    std::fs::write(&path, write_obj(&mesh)).unwrap();
    let out = hograsp(&["spherize", s(&path), "-o", s(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("not watertight") && err.contains("edge "), "{err}");
}

#[test]
fn negative_weight_exits_2_naming_the_field() {
    let tmp = TempDir::new().unwrap();
    let scene = scene_file(tmp.path(), "scene.cfg", ZERO_NOISE);
    let weights = scene_file(tmp.path(), "weights.cfg", "# bad\nweight_repulsion = -1\n");
    let out = hograsp(&["refine", "--scene", s(&scene), "--weights", s(&weights), "-o", s(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("weight_repulsion") && err.contains("line 2"), "{err}");
}

#[test]
fn zero_noise_scene_refines_and_evaluates_cleanly() {
    let tmp = TempDir::new().unwrap();
    let scene = scene_file(tmp.path(), "scene.cfg", ZERO_NOISE);
    let refined = tmp.path().join("refined");
    ok(&["--seed", "3", "refine", "--scene", s(&scene), "-o", s(&refined)]);
    let summary = read(&refined.join("summary.csv"));
    assert!(summary.lines().skip(1).all(|l| l.contains(",converged,")), "{summary}");
    let eval = tmp.path().join("eval");
    let stdout = ok(&["evaluate", "--poses", s(&refined.join("ground_truth.txt")), "--object", "cylinder", "--annotations", s(&refined.join("annotations.csv")), "-o", s(&eval)]);
    assert!(stdout.ends_with("mean (mm), std (mm)\n0.00, 0.00\n"), "{stdout}");
}

#[test]
fn far_apart_hand_has_no_contact() {
    let tmp = TempDir::new().unwrap();
    let mut state = hograsp::GraspState::default();
    state.hand.global_translation = hograsp::Vec3::new(0.0, 0.0, 1000.0);
    let poses = tmp.path().join("far.txt");
    std::fs::write(&poses, poses_to_text(&[("f0".into(), state)])).unwrap();
    let eval = tmp.path().join("eval");
    ok(&["evaluate", "--poses", s(&poses), "--object", "box", "-o", s(&eval)]);
    assert!(fractions_from_csv(&read(&eval.join("fractions.csv"))).unwrap().iter().all(|f| *f == 0.0));
}

/// synth, refine, evaluate and compare into `root` with the given worker
/// count.
fn pipeline(root: &Path, jobs: &str) {
    let scene = scene_file(root, "scene.cfg", PERTURBED);
    let weights = scene_file(root, "weights.cfg", "max_iterations = 4\n");
    ok(&["--seed", "21", "--jobs", jobs, "synth", "--scene", s(&scene), "-o", s(&root.join("synth"))]);
    let out = hograsp(&["--jobs", jobs, "refine", "--frames", s(&root.join("synth")), "--weights", s(&weights), "-o", s(&root.join("refined"))]);
    assert!(matches!(out.status.code(), Some(0 | 3)), "{}", String::from_utf8_lossy(&out.stderr));
    for (name, t) in [("eval4", "4"), ("eval8", "8")] {
        ok(&[
            "--jobs",
            jobs,
            "evaluate",
            "--poses",
            s(&root.join("refined")),
            "--object",
            "cube",
            "--annotations",
            s(&root.join("synth/annotations.csv")),
            "--threshold",
            t,
            "-o",
            s(&root.join(name)),
        ]);
    }
    ok(&["compare", s(&root.join("eval4")), s(&root.join("eval8")), "-o", s(&root.join("cmp"))]);
}

#[test]
fn every_command_is_deterministic_and_independent_of_jobs() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let c = TempDir::new().unwrap();
    pipeline(a.path(), "1");
    pipeline(b.path(), "1");
    pipeline(c.path(), "3");
    let ta = tree(a.path());
    assert!(ta.len() > 20);
    assert_eq!(ta, tree(b.path()));
    assert_eq!(ta, tree(c.path()));
    round_trips(a.path());
    compare_deltas(a.path());
}

/// Every output file read back and written again gives the same bytes.
fn round_trips(root: &Path) {
    let synth = root.join("synth");
    let set = FrameSet::read_dir(&synth).unwrap();
    let copy = root.join("synth_copy");
    set.write_dir(&copy).unwrap();
    for (path, bytes) in tree(&copy) {
        assert_eq!(std::fs::read(synth.join(&path)).unwrap(), bytes, "{}", path.display());
    }
    for file in [synth.join("ground_truth.txt"), root.join("refined/poses.txt"), root.join("refined/ground_truth.txt")].iter().filter(|p| p.exists()) {
        let text = read(file);
        assert_eq!(poses_to_text(&parse_poses(&text, "t").unwrap()), text);
    }
    let ann = read(&synth.join("annotations.csv"));
    assert_eq!(annotations_to_csv(&parse_annotations(&ann).unwrap()), ann);
    let cfg = read(&synth.join("scene.cfg"));
    let (scene, seed, frames) = SyntheticScene::from_config(&cfg).unwrap();
    assert_eq!(format!("{}seed = {}\nframes = {}\n", scene.to_config(), seed.unwrap(), frames.unwrap()), cfg);

    for eval in ["eval4", "eval8"] {
        let dir = root.join(eval);
        let frames = read(&dir.join("frames.csv"));
        assert_eq!(frames_to_csv(&frames_from_csv(&frames).unwrap()), frames);
        let fractions = read(&dir.join("fractions.csv"));
        assert_eq!(fractions_to_csv(&fractions_from_csv(&fractions).unwrap()), fractions);
        let text = read(&dir.join("contacts.ply"));
        let p = parse_ply(&text).unwrap();
        assert_eq!(write_ply(&p.mesh, p.colors.as_deref()), text);
        for csv in ["aggregate.csv", "fingertips.csv", "fingertip_summary.csv"] {
            assert_csv_round_trip(&read(&dir.join(csv)), csv);
        }
    }
    for (path, bytes) in tree(&root.join("refined")) {
        if path.extension().is_some_and(|e| e == "csv") {
            assert_csv_round_trip(std::str::from_utf8(&bytes).unwrap(), &path.display().to_string());
        }
    }
    for name in ["a.ply", "b.ply"] {
        let text = read(&root.join("cmp").join(name));
        let p = parse_ply(&text).unwrap();
        assert_eq!(write_ply(&p.mesh, p.colors.as_deref()), text);
    }
    assert_csv_round_trip(&read(&root.join("cmp/report.csv")), "report.csv");
}

fn report(path: &Path) -> BTreeMap<String, f64> {
    read(path)
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[3].parse().unwrap())
        })
        .collect()
}

fn compare_deltas(root: &Path) {
    // A wider threshold can only add contacts.
    let deltas = report(&root.join("cmp/report.csv"));
    assert!(deltas["contact_fraction"] > 0.0, "{deltas:?}");
    let same = root.join("same");
    ok(&["compare", s(&root.join("eval4")), s(&root.join("eval4")), "-o", s(&same)]);
    assert!(report(&same.join("report.csv")).values().all(|d| *d == 0.0));

    // Fewer vertices on one side is an input error.
    let short = root.join("short");
    std::fs::create_dir_all(&short).unwrap();
    for f in ["aggregate.csv", "contacts.ply"] {
        std::fs::copy(root.join("eval4").join(f), short.join(f)).unwrap();
    }
    let frac = read(&root.join("eval4/fractions.csv"));
    let cut: Vec<&str> = frac.lines().collect();
    std::fs::write(short.join("fractions.csv"), cut[..cut.len() - 1].join("\n") + "\n").unwrap();
    let out = hograsp(&["compare", s(&root.join("eval4")), s(&short), "-o", s(&root.join("bad"))]);
    assert_eq!(out.status.code(), Some(2));
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Evaluation outputs for a fixed synthetic scene, compared byte for byte
/// with the committed copies. `HOGRASP_UPDATE_GOLDEN=1` rewrites them.
#[test]
fn evaluation_matches_golden_files() {
    let tmp = TempDir::new().unwrap();
    let scene = scene_file(tmp.path(), "scene.cfg", "object = box\nimage_size = 16\ncameras = 1\nframes = 3\n");
    ok(&["--seed", "5", "synth", "--scene", s(&scene), "-o", s(&tmp.path().join("synth"))]);
    let eval = tmp.path().join("eval");
    ok(&["evaluate", "--poses", s(&tmp.path().join("synth/ground_truth.txt")), "--object", "box", "--annotations", s(&tmp.path().join("synth/annotations.csv")), "-o", s(&eval)]);
    let golden = golden_dir();
    let update = std::env::var("HOGRASP_UPDATE_GOLDEN").is_ok_and(|v| v == "1");
    for name in ["frames.csv", "aggregate.csv", "fractions.csv", "fingertip_summary.csv", "contacts.ply"] {
        let got = std::fs::read(eval.join(name)).unwrap();
        if update {
            std::fs::create_dir_all(&golden).unwrap();
            std::fs::write(golden.join(name), &got).unwrap();
        }
        let want = std::fs::read(golden.join(name)).unwrap_or_else(|e| panic!("golden {name}: {e}"));
        assert!(got == want, "{name} differs from its golden copy");
    }
}
