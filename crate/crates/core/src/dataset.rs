//! On-disk formats for poses, cameras, keypoints and frame directories.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! reader here reproduces the written values exactly.
//!
//! A frame directory holds:
//!
//! ```text
//! frames.cfg        object = <bundled name or mesh path>
//! cameras.txt       one camera per line: fx fy cx cy width height qw qx qy qz tx ty tz
//! initial.txt       pose file with the starting state of every frame
//! keypoints.csv     frame,keypoint,x,y,z
//! maps/<frame>_cam<k>.conf   raw confidence maps
//! ```
//!
//! `synth` additionally writes `ground_truth.txt` and `annotations.csv`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion};
use thiserror::Error;

use crate::config::{ConfigError, KeyValues};
use crate::energy::{ConfidenceMap, EnergyError};
use crate::geometry::Vec3;
use crate::optimize::{GraspState, NUM_PARAMS};
use crate::render::Camera;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}: {source}")]
    Config { path: String, source: ConfigError },
    #[error("{path}: {source}")]
    Map { path: String, source: EnergyError },
}

fn parse_err(path: &str, line: usize, message: impl Into<String>) -> DatasetError {
    DatasetError::Parse { path: path.to_string(), line, message: message.into() }
}

pub fn read_text(path: &Path) -> Result<String, DatasetError> {
    std::fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.display().to_string(), source })
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), DatasetError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| DatasetError::Io { path: dir.display().to_string(), source })?;
    }
    std::fs::write(path, contents).map_err(|source| DatasetError::Io { path: path.display().to_string(), source })
}

fn check_frame_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
}

/// One frame per line: the frame id, then the 57 packed parameters.
pub fn poses_to_text(poses: &[(String, GraspState)]) -> String {
    let mut s = String::new();
    for (id, state) in poses {
        s.push_str(id);
        for v in state.pack() {
            let _ = write!(s, " {v}");
        }
        s.push('\n');
    }
    s
}

/// `source` names the file in error messages. Blank lines and `#` comments
/// are skipped; frame ids must be unique.
pub fn parse_poses(text: &str, source: &str) -> Result<Vec<(String, GraspState)>, DatasetError> {
    let mut out: Vec<(String, GraspState)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.split('#').next().unwrap_or("").trim();
        if l.is_empty() {
            continue;
        }
        let mut toks = l.split_whitespace();
        let id = toks.next().expect("line is not empty");
        if !check_frame_id(id) {
            return Err(parse_err(source, line, format!("bad frame id `{id}` (letters, digits, `_`, `-`, `.`)")));
        }
        let vals: Vec<f64> = toks.map(|t| t.parse::<f64>().map_err(|_| parse_err(source, line, format!("bad number `{t}`")))).collect::<Result<_, _>>()?;
        if vals.len() != NUM_PARAMS {
            return Err(parse_err(source, line, format!("expected {NUM_PARAMS} values after the frame id, found {}", vals.len())));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(source, line, "non-finite value"));
        }
        if out.iter().any(|(f, _)| f == id) {
            return Err(parse_err(source, line, format!("frame `{id}` repeated")));
        }
        let packed: [f64; NUM_PARAMS] = vals.try_into().expect("length checked");
        out.push((id.to_string(), GraspState::unpack(&packed)));
    }
    Ok(out)
}

pub fn cameras_to_text(cameras: &[Camera]) -> String {
    let mut s = String::new();
    for c in cameras {
        let q = c.world_to_camera.rotation.quaternion();
        let t = c.world_to_camera.translation.vector;
        let _ = writeln!(s, "{} {} {} {} {} {} {} {} {} {} {} {} {}", c.fx, c.fy, c.cx, c.cy, c.width, c.height, q.w, q.i, q.j, q.k, t.x, t.y, t.z);
    }
    s
}

/// The world-to-camera rotation is a unit quaternion; it is renormalized
/// only when its norm is off by more than 1e-9, so written cameras read
/// back exactly.
pub fn parse_cameras(text: &str, source: &str) -> Result<Vec<Camera>, DatasetError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.split('#').next().unwrap_or("").trim();
        if l.is_empty() {
            continue;
        }
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() != 13 {
            return Err(parse_err(source, line, "expected `fx fy cx cy width height qw qx qy qz tx ty tz`"));
        }
        let f = |k: usize| t[k].parse::<f64>().map_err(|_| parse_err(source, line, format!("bad number `{}`", t[k])));
        let u = |k: usize| t[k].parse::<usize>().map_err(|_| parse_err(source, line, format!("bad image size `{}`", t[k])));
        let q = Quaternion::new(f(6)?, f(7)?, f(8)?, f(9)?);
        let rotation = match q.norm() {
            n if (n - 1.0).abs() <= 1e-9 => UnitQuaternion::new_unchecked(q),
            n if n > 0.0 && n.is_finite() => UnitQuaternion::new_normalize(q),
            _ => return Err(parse_err(source, line, "rotation quaternion has zero norm")),
        };
        let cam = Camera { fx: f(0)?, fy: f(1)?, cx: f(2)?, cy: f(3)?, width: u(4)?, height: u(5)?, world_to_camera: Isometry3::from_parts(Translation3::new(f(10)?, f(11)?, f(12)?), rotation) };
        cam.validate().map_err(|e| parse_err(source, line, e.to_string()))?;
        out.push(cam);
    }
    Ok(out)
}

pub type KeypointTargets = BTreeMap<String, Vec<(usize, Vec3)>>;

pub fn keypoints_to_csv(targets: &KeypointTargets) -> String {
    let mut s = String::from("frame,keypoint,x,y,z\n");
    for (frame, list) in targets {
        for (k, p) in list {
            let _ = writeln!(s, "{frame},{k},{},{},{}", p.x, p.y, p.z);
        }
    }
    s
}

pub fn parse_keypoints(text: &str, source: &str) -> Result<KeypointTargets, DatasetError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "frame,keypoint,x,y,z" => {}
        _ => return Err(parse_err(source, 1, "expected header `frame,keypoint,x,y,z`")),
    }
    let mut out = KeypointTargets::new();
    for (i, raw) in lines {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() {
            continue;
        }
        let t: Vec<&str> = l.split(',').map(str::trim).collect();
        if t.len() != 5 {
            return Err(parse_err(source, line, "expected 5 fields"));
        }
        let k: usize = t[1].parse().map_err(|_| parse_err(source, line, format!("bad keypoint index `{}`", t[1])))?;
        let f = |j: usize| t[j].parse::<f64>().map_err(|_| parse_err(source, line, format!("bad coordinate `{}`", t[j])));
        out.entry(t[0].to_string()).or_default().push((k, Vec3::new(f(2)?, f(3)?, f(4)?)));
    }
    Ok(out)
}

/// Everything needed to refine a batch of frames, minus the expensive
/// sphere sets.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    /// Bundled mesh name or a mesh path relative to the directory.
    pub object: String,
    pub cameras: Vec<Camera>,
    pub frames: Vec<FrameData>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameData {
    pub id: String,
    pub initial: GraspState,
    pub maps: Vec<ConfidenceMap>,
    pub keypoints: Vec<(usize, Vec3)>,
}

pub fn map_path(dir: &Path, frame: &str, camera: usize) -> PathBuf {
    dir.join("maps").join(format!("{frame}_cam{camera}.conf"))
}

impl FrameSet {
    pub fn write_dir(&self, dir: &Path) -> Result<(), DatasetError> {
        write_file(&dir.join("frames.cfg"), format!("object = {}\n", self.object))?;
        write_file(&dir.join("cameras.txt"), cameras_to_text(&self.cameras))?;
        let poses: Vec<(String, GraspState)> = self.frames.iter().map(|f| (f.id.clone(), f.initial.clone())).collect();
        write_file(&dir.join("initial.txt"), poses_to_text(&poses))?;
        let kps: KeypointTargets = self.frames.iter().map(|f| (f.id.clone(), f.keypoints.clone())).collect();
        write_file(&dir.join("keypoints.csv"), keypoints_to_csv(&kps))?;
        for f in &self.frames {
            for (k, m) in f.maps.iter().enumerate() {
                write_file(&map_path(dir, &f.id, k), m.to_raw())?;
            }
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<FrameSet, DatasetError> {
        let cfg_path = dir.join("frames.cfg");
        let cfg_name = cfg_path.display().to_string();
        let kv = KeyValues::parse(&read_text(&cfg_path)?).map_err(|source| DatasetError::Config { path: cfg_name.clone(), source })?;
        kv.check_known(&["object"]).map_err(|source| DatasetError::Config { path: cfg_name.clone(), source })?;
        let object = kv.get::<String>("object").map_err(|source| DatasetError::Config { path: cfg_name.clone(), source })?.ok_or_else(|| parse_err(&cfg_name, 0, "missing `object`"))?;
        let cam_path = dir.join("cameras.txt");
        let cameras = parse_cameras(&read_text(&cam_path)?, &cam_path.display().to_string())?;
        let init_path = dir.join("initial.txt");
        let initial = parse_poses(&read_text(&init_path)?, &init_path.display().to_string())?;
        let kp_path = dir.join("keypoints.csv");
        let mut keypoints = parse_keypoints(&read_text(&kp_path)?, &kp_path.display().to_string())?;
        let mut frames = Vec::with_capacity(initial.len());
        for (id, state) in initial {
            let mut maps = Vec::with_capacity(cameras.len());
            for k in 0..cameras.len() {
                let p = map_path(dir, &id, k);
                let bytes = std::fs::read(&p).map_err(|source| DatasetError::Io { path: p.display().to_string(), source })?;
                maps.push(ConfidenceMap::from_raw(&bytes).map_err(|source| DatasetError::Map { path: p.display().to_string(), source })?);
            }
            let kp = keypoints.remove(&id).unwrap_or_default();
            frames.push(FrameData { id, initial: state, maps, keypoints: kp });
        }
        if let Some(extra) = keypoints.keys().next() {
            return Err(parse_err(&kp_path.display().to_string(), 0, format!("keypoints for unknown frame `{extra}`")));
        }
        Ok(FrameSet { object, cameras, frames })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pose_text_round_trip_is_exact() {
        let mut v = [0.0; NUM_PARAMS];
        for (i, x) in v.iter_mut().enumerate() {
            *x = (i as f64 * 0.37).sin() / 3.0;
        }
        let poses = vec![("f0".to_string(), GraspState::unpack(&v)), ("f1".to_string(), GraspState::default())];
        let text = poses_to_text(&poses);
        let back = parse_poses(&text, "p").unwrap();
        assert_eq!(back, poses);
        assert_eq!(poses_to_text(&back), text);
    }

    #[test]
    fn pose_errors_name_the_line() {
        let err = parse_poses("f0 1 2 3\n", "poses.txt").unwrap_err().to_string();
        assert!(err.contains("poses.txt: line 1"), "{err}");
        let line = format!("a{}\n", " 0".repeat(NUM_PARAMS));
        assert!(parse_poses(&format!("{line}{line}"), "p").unwrap_err().to_string().contains("repeated"));
    }

    #[test]
    fn camera_text_is_stable() {
        let c = Camera::look_at(Vec3::new(300.0, -200.0, 100.0), Vec3::zeros(), Vec3::z(), 110.0, 110.0, 64, 48);
        let text = cameras_to_text(std::slice::from_ref(&c));
        let back = parse_cameras(&text, "c").unwrap();
        assert_eq!(back[0], c);
        assert_eq!(cameras_to_text(&back), text);
    }
}
