//! Contact maps, penetration statistics and fingertip accuracy.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{MeshQuery, TriMesh, Vec3};
use crate::hand_model::{HandModel, HandPose, FINGER_NAMES};
use crate::mesh_io::write_ply;

/// Contact threshold on hand-vertex distance to the object surface (mm).
pub const DEFAULT_CONTACT_THRESHOLD: f64 = 4.0;

#[derive(Debug, Error, PartialEq)]
pub enum ContactError {
    #[error("object mesh is not watertight ({} open edges)", .0.len())]
    NonWatertight(Vec<(usize, usize)>),
    #[error("contact maps have different vertex counts ({0} vs {1})")]
    MixedTopology(usize, usize),
    #[error("no contact maps to aggregate")]
    Empty,
    #[error("no predicted pose for annotated frame `{0}`")]
    MissingFrame(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Signed distance (negative inside) from `p` to a watertight mesh.
pub fn signed_distance(p: &Vec3, mesh: &TriMesh) -> Result<f64, ContactError> {
    Ok(MeshQuery::new(mesh.clone()).map_err(ContactError::NonWatertight)?.signed_distance(p))
}

/// Signed distances of all hand vertices to the object surface.
pub fn vertex_distances(hand: &TriMesh, object: &MeshQuery) -> Vec<f64> {
    hand.vertices.par_iter().map(|v| object.signed_distance(v)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactMap {
    /// Per hand vertex: 0/1 for a single frame, fraction of frames in
    /// contact once aggregated.
    pub fractions: Vec<f64>,
    /// Mean penetration (mm) of each frame.
    pub frame_penetrations: Vec<f64>,
    /// Mean of `frame_penetrations`.
    pub penetration_mean: f64,
    /// Population standard deviation of `frame_penetrations`.
    pub penetration_std: f64,
}

impl ContactMap {
    pub fn frames(&self) -> usize {
        self.frame_penetrations.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.fractions.len()
    }

    /// Hand vertices in contact (single frame) or the summed fractions.
    pub fn contact_total(&self) -> f64 {
        self.fractions.iter().sum()
    }

    /// Average per-vertex contact fraction.
    pub fn contact_fraction(&self) -> f64 {
        if self.fractions.is_empty() {
            0.0
        } else {
            self.contact_total() / self.fractions.len() as f64
        }
    }
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Single-frame map from signed vertex distances.
pub fn contact_map_from_distances(signed: &[f64], threshold: f64) -> ContactMap {
    let fractions = signed.iter().map(|d| if d.abs() < threshold { 1.0 } else { 0.0 }).collect();
    let pen: Vec<f64> = signed.iter().filter(|d| **d < 0.0).map(|d| -d).collect();
    let mean = if pen.is_empty() { 0.0 } else { pen.iter().sum::<f64>() / pen.len() as f64 };
    ContactMap { fractions, frame_penetrations: vec![mean], penetration_mean: mean, penetration_std: 0.0 }
}

/// Contact map of one frame: a vertex is in contact when its unsigned
/// distance to the object surface is below `threshold`; penetration is the
/// mean depth over vertices inside the object (0 if none).
pub fn contact_map(hand: &TriMesh, object: &MeshQuery, threshold: f64) -> ContactMap {
    contact_map_from_distances(&vertex_distances(hand, object), threshold)
}

/// Pool maps: fractions weighted by frame count, penetration statistics
/// over the per-frame means.
pub fn aggregate(maps: &[ContactMap]) -> Result<ContactMap, ContactError> {
    let first = maps.first().ok_or(ContactError::Empty)?;
    let n = first.vertex_count();
    let mut sums = vec![0.0; n];
    let mut frame_penetrations = Vec::new();
    for m in maps {
        if m.vertex_count() != n {
            return Err(ContactError::MixedTopology(n, m.vertex_count()));
        }
        let w = m.frames() as f64;
        for (s, f) in sums.iter_mut().zip(&m.fractions) {
            *s += f * w;
        }
        frame_penetrations.extend_from_slice(&m.frame_penetrations);
    }
    let frames = frame_penetrations.len() as f64;
    let fractions = sums.into_iter().map(|s| if frames > 0.0 { s / frames } else { 0.0 }).collect();
    let (penetration_mean, penetration_std) = mean_std(&frame_penetrations);
    Ok(ContactMap { fractions, frame_penetrations, penetration_mean, penetration_std })
}

/// Blue (0, 0, 255) at fraction 0 to red (255, 0, 0) at 1, rounded half up.
pub fn contact_color(fraction: f64) -> [u8; 3] {
    let red = (255.0 * fraction.clamp(0.0, 1.0) + 0.5).floor() as u8;
    [red, 0, 255 - red]
}

/// Hand mesh as a PLY with per-vertex contact colors.
pub fn export_contact_visual(map: &ContactMap, hand: &TriMesh) -> Result<String, ContactError> {
    if map.vertex_count() != hand.vertices.len() {
        return Err(ContactError::MixedTopology(map.vertex_count(), hand.vertices.len()));
    }
    let colors: Vec<[u8; 3]> = map.fractions.iter().map(|&f| contact_color(f)).collect();
    Ok(write_ply(hand, Some(&colors)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameContact {
    pub frame: String,
    pub contacts: usize,
    pub mean_penetration: f64,
}

/// `frame,contacts,mean_penetration`, penetration with 6 decimals.
pub fn frames_to_csv(rows: &[FrameContact]) -> String {
    let mut s = String::from("frame,contacts,mean_penetration\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:.6}", r.frame, r.contacts, r.mean_penetration);
    }
    s
}

pub fn frames_from_csv(text: &str) -> Result<Vec<FrameContact>, ContactError> {
    let mut out = Vec::new();
    for (i, l) in csv_rows(text, "frame,contacts,mean_penetration")? {
        let f: Vec<&str> = l.split(',').collect();
        let bad = |m: &str| ContactError::Parse { line: i, message: m.to_string() };
        if f.len() != 3 {
            return Err(bad("expected 3 fields"));
        }
        out.push(FrameContact { frame: f[0].to_string(), contacts: f[1].parse().map_err(|_| bad("bad contact count"))?, mean_penetration: f[2].parse().map_err(|_| bad("bad penetration"))? });
    }
    Ok(out)
}

/// Aggregate summary plus per-vertex fractions.
pub fn aggregate_to_csv(map: &ContactMap) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "frames,vertices,contact_fraction,penetration_mean,penetration_std");
    let _ = writeln!(s, "{},{},{:.6},{:.6},{:.6}", map.frames(), map.vertex_count(), map.contact_fraction(), map.penetration_mean, map.penetration_std);
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateSummary {
    pub frames: usize,
    pub vertices: usize,
    pub contact_fraction: f64,
    pub penetration_mean: f64,
    pub penetration_std: f64,
}

pub fn aggregate_from_csv(text: &str) -> Result<AggregateSummary, ContactError> {
    let rows = csv_rows(text, "frames,vertices,contact_fraction,penetration_mean,penetration_std")?;
    let (i, l) = rows.first().ok_or(ContactError::Parse { line: 2, message: "missing summary row".into() })?;
    let bad = |m: &str| ContactError::Parse { line: *i, message: m.to_string() };
    let f: Vec<&str> = l.split(',').collect();
    if f.len() != 5 {
        return Err(bad("expected 5 fields"));
    }
    let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad("bad number"));
    Ok(AggregateSummary {
        frames: f[0].parse().map_err(|_| bad("bad frame count"))?,
        vertices: f[1].parse().map_err(|_| bad("bad vertex count"))?,
        contact_fraction: num(2)?,
        penetration_mean: num(3)?,
        penetration_std: num(4)?,
    })
}

/// `vertex,fraction` with 6 decimals.
pub fn fractions_to_csv(fractions: &[f64]) -> String {
    let mut s = String::from("vertex,fraction\n");
    for (i, f) in fractions.iter().enumerate() {
        let _ = writeln!(s, "{i},{f:.6}");
    }
    s
}

pub fn fractions_from_csv(text: &str) -> Result<Vec<f64>, ContactError> {
    let mut out = Vec::new();
    for (i, l) in csv_rows(text, "vertex,fraction")? {
        let bad = |m: &str| ContactError::Parse { line: i, message: m.to_string() };
        let (v, f) = l.split_once(',').ok_or_else(|| bad("expected 2 fields"))?;
        if v.parse::<usize>().ok() != Some(out.len()) {
            return Err(bad("vertex indices must count up from 0"));
        }
        out.push(f.parse().map_err(|_| bad("bad fraction"))?);
    }
    Ok(out)
}

fn csv_rows<'a>(text: &'a str, header: &str) -> Result<Vec<(usize, &'a str)>, ContactError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, h)) if h == header => {}
        _ => return Err(ContactError::Parse { line: 1, message: format!("expected header `{header}`") }),
    }
    Ok(lines.filter(|(_, l)| !l.is_empty()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FingertipEval {
    /// Per annotated frame, errors in [`FINGER_NAMES`] order (mm).
    pub per_frame: Vec<(String, [f64; 5])>,
    pub mean: f64,
    /// Population standard deviation over all (frame, fingertip) pairs.
    pub std: f64,
}

/// Fingertip errors of predicted poses against annotations.
pub fn fingertip_accuracy(model: &HandModel, predicted: &BTreeMap<String, HandPose>, annotations: &BTreeMap<String, [Vec3; 5]>) -> Result<FingertipEval, ContactError> {
    let mut per_frame = Vec::with_capacity(annotations.len());
    let mut all = Vec::with_capacity(5 * annotations.len());
    for (frame, truth) in annotations {
        let pose = predicted.get(frame).ok_or_else(|| ContactError::MissingFrame(frame.clone()))?;
        let tips = model.fingertips(&model.forward_kinematics(pose));
        let errs: [f64; 5] = std::array::from_fn(|f| (tips[f] - truth[f]).norm());
        all.extend_from_slice(&errs);
        per_frame.push((frame.clone(), errs));
    }
    let (mean, std) = mean_std(&all);
    Ok(FingertipEval { per_frame, mean, std })
}

impl FingertipEval {
    /// Table-style summary: `mean (mm), std (mm)` with 2 decimals.
    pub fn summary(&self) -> String {
        format!("mean (mm), std (mm)\n{:.2}, {:.2}\n", self.mean, self.std)
    }

    pub fn per_frame_csv(&self) -> String {
        let mut s = format!("frame,{}\n", FINGER_NAMES.join(","));
        for (frame, e) in &self.per_frame {
            let _ = writeln!(s, "{frame},{:.6},{:.6},{:.6},{:.6},{:.6}", e[0], e[1], e[2], e[3], e[4]);
        }
        s
    }
}

/// Annotation CSV: `frame,finger,x,y,z`, fingers by name. Every annotated
/// frame must list all five fingers.
pub fn parse_annotations(text: &str) -> Result<BTreeMap<String, [Vec3; 5]>, ContactError> {
    let mut partial: BTreeMap<String, [Option<Vec3>; 5]> = BTreeMap::new();
    for (i, l) in csv_rows(text, "frame,finger,x,y,z")? {
        let bad = |m: String| ContactError::Parse { line: i, message: m };
        let f: Vec<&str> = l.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(bad("expected 5 fields".into()));
        }
        let finger = FINGER_NAMES.iter().position(|n| *n == f[1]).ok_or_else(|| bad(format!("unknown finger `{}`", f[1])))?;
        let c = |k: usize| f[k].parse::<f64>().map_err(|_| bad(format!("bad coordinate `{}`", f[k])));
        let slot = &mut partial.entry(f[0].to_string()).or_insert([None; 5])[finger];
        if slot.replace(Vec3::new(c(2)?, c(3)?, c(4)?)).is_some() {
            return Err(bad(format!("frame `{}` lists {} twice", f[0], f[1])));
        }
    }
    partial
        .into_iter()
        .map(|(frame, tips)| {
            if tips.iter().any(Option::is_none) {
                return Err(ContactError::Parse { line: 0, message: format!("frame `{frame}` does not annotate all five fingertips") });
            }
            Ok((frame, tips.map(|t| t.expect("checked"))))
        })
        .collect()
}

pub fn annotations_to_csv(annotations: &BTreeMap<String, [Vec3; 5]>) -> String {
    let mut s = String::from("frame,finger,x,y,z\n");
    for (frame, tips) in annotations {
        for (name, t) in FINGER_NAMES.iter().zip(tips) {
            let _ = writeln!(s, "{frame},{name},{},{},{}", t.x, t.y, t.z);
        }
    }
    s
}
