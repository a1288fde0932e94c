//! Wavefront OBJ and ASCII PLY reading/writing.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::geometry::{TriMesh, Vec3};

#[derive(Debug, Error)]
pub enum MeshIoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported mesh format `{0}` (expected .obj or .ply)")]
    UnsupportedFormat(String),
}

fn parse_err(line: usize, message: impl Into<String>) -> MeshIoError {
    MeshIoError::Parse { line, message: message.into() }
}

/// Reads `.obj` or `.ply` by extension.
pub fn read_mesh(path: &Path) -> Result<TriMesh, MeshIoError> {
    let text = std::fs::read_to_string(path).map_err(|source| MeshIoError::Io { path: path.display().to_string(), source })?;
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("obj") => parse_obj(&text),
        Some("ply") => parse_ply(&text).map(|p| p.mesh),
        other => Err(MeshIoError::UnsupportedFormat(other.unwrap_or("").to_string())),
    }
}

/// Polygons are fan-triangulated; texture/normal indices are ignored.
pub fn parse_obj(text: &str) -> Result<TriMesh, MeshIoError> {
    let mut mesh = TriMesh::empty();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.split('#').next().unwrap_or("").trim();
        let mut toks = l.split_whitespace();
        match toks.next() {
            Some("v") => {
                let c: Vec<f64> = toks.take(3).map(|t| t.parse().map_err(|_| parse_err(line, format!("bad coordinate `{t}`")))).collect::<Result<_, _>>()?;
                if c.len() != 3 {
                    return Err(parse_err(line, "vertex needs 3 coordinates"));
                }
                mesh.vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = toks
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        let v: i64 = first.parse().map_err(|_| parse_err(line, format!("bad face index `{t}`")))?;
                        let n = mesh.vertices.len() as i64;
                        let resolved = if v < 0 { n + v } else { v - 1 };
                        if resolved < 0 || resolved >= n {
                            return Err(parse_err(line, format!("face index {v} out of range")));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() < 3 {
                    return Err(parse_err(line, "face needs at least 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    mesh.triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(mesh)
}

pub fn write_obj(mesh: &TriMesh) -> String {
    let mut s = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlyMesh {
    pub mesh: TriMesh,
    pub colors: Option<Vec<[u8; 3]>>,
}

/// ASCII PLY with `x y z` and optional `red green blue` vertex properties.
pub fn write_ply(mesh: &TriMesh, colors: Option<&[[u8; 3]]>) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", mesh.vertices.len());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    if colors.is_some() {
        s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    let _ = writeln!(s, "element face {}", mesh.triangles.len());
    s.push_str("property list uchar int vertex_indices\nend_header\n");
    for (i, v) in mesh.vertices.iter().enumerate() {
        let _ = write!(s, "{} {} {}", v.x, v.y, v.z);
        if let Some(c) = colors {
            let _ = write!(s, " {} {} {}", c[i][0], c[i][1], c[i][2]);
        }
        s.push('\n');
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    s
}

pub fn parse_ply(text: &str) -> Result<PlyMesh, MeshIoError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut nv = None;
    let mut nf = None;
    let mut vprops: Vec<String> = Vec::new();
    let mut current = "";
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_err(1, "missing `ply` magic")),
    }
    loop {
        let (line, l) = lines.next().ok_or_else(|| parse_err(0, "unterminated header"))?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => {}
            ["format", ..] => return Err(parse_err(line, "only ASCII PLY is supported")),
            ["comment", ..] | [] => {}
            ["element", "vertex", n] => {
                nv = Some(n.parse::<usize>().map_err(|_| parse_err(line, "bad vertex count"))?);
                current = "vertex";
            }
            ["element", "face", n] => {
                nf = Some(n.parse::<usize>().map_err(|_| parse_err(line, "bad face count"))?);
                current = "face";
            }
            ["element", ..] => return Err(parse_err(line, "unsupported element")),
            ["property", "list", ..] => {}
            ["property", _, name] if current == "vertex" => vprops.push(name.to_string()),
            ["property", ..] => {}
            ["end_header"] => break,
            _ => return Err(parse_err(line, format!("unexpected header line `{l}`"))),
        }
    }
    let nv = nv.ok_or_else(|| parse_err(0, "missing vertex element"))?;
    let nf = nf.unwrap_or(0);
    let pos = |name: &str| vprops.iter().position(|p| p == name);
    let (ix, iy, iz) = match (pos("x"), pos("y"), pos("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(parse_err(0, "vertex element needs x, y, z")),
    };
    let rgb = match (pos("red"), pos("green"), pos("blue")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };
    let mut mesh = TriMesh::empty();
    let mut colors = rgb.map(|_| Vec::with_capacity(nv));
    for _ in 0..nv {
        let (line, l) = lines.next().ok_or_else(|| parse_err(0, "truncated vertex list"))?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != vprops.len() {
            return Err(parse_err(line, "vertex property count mismatch"));
        }
        let f = |k: usize| toks[k].parse::<f64>().map_err(|_| parse_err(line, format!("bad number `{}`", toks[k])));
        mesh.vertices.push(Vec3::new(f(ix)?, f(iy)?, f(iz)?));
        if let (Some((r, g, b)), Some(c)) = (rgb, colors.as_mut()) {
            let u = |k: usize| toks[k].parse::<u8>().map_err(|_| parse_err(line, format!("bad color `{}`", toks[k])));
            c.push([u(r)?, u(g)?, u(b)?]);
        }
    }
    for _ in 0..nf {
        let (line, l) = lines.next().ok_or_else(|| parse_err(0, "truncated face list"))?;
        let idx: Vec<usize> = l.split_whitespace().map(|t| t.parse().map_err(|_| parse_err(line, format!("bad index `{t}`")))).collect::<Result<_, _>>()?;
        if idx.is_empty() || idx[0] + 1 != idx.len() || idx[0] < 3 {
            return Err(parse_err(line, "malformed face"));
        }
        if idx[1..].iter().any(|&i| i >= nv) {
            return Err(parse_err(line, "face index out of range"));
        }
        for k in 2..idx[0] {
            mesh.triangles.push([idx[1], idx[k], idx[k + 1]]);
        }
    }
    Ok(PlyMesh { mesh, colors })
}
