//! Inner-volume sphere sets.
//!
//! A watertight mesh is voxelized (ray-parity inside test at voxel centers,
//! unsigned distance to the surface for interior voxels), then packed
//! greedily: the uncovered interior voxel farthest from the surface becomes
//! a sphere center with that distance as radius, every voxel center inside
//! the new sphere is marked covered, and the loop repeats until the covered
//! fraction reaches the target or the sphere budget runs out. Ties go to the
//! lowest `(z, y, x)` voxel index.

use std::fmt::Write as _;

use nalgebra::Isometry3;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{transform_point, MeshQuery, TriMesh, Vec3};
use crate::hand_model::HandModel;

/// Default object voxel size (mm).
pub const DEFAULT_VOXEL_SIZE: f64 = 4.0;
pub const DEFAULT_COVERAGE: f64 = 0.93;
pub const DEFAULT_MAX_SPHERES: usize = 1024;
/// Hand bones are thin, so they are voxelized finer.
pub const HAND_VOXEL_SIZE: f64 = 1.0;
pub const HAND_SPHERES_PER_BONE: usize = 4;
/// Sub-samples per voxel edge used for coverage accounting.
pub const COVERAGE_SUBDIV: usize = 4;
/// Allowed protrusion of a sphere beyond its source surface (mm).
pub const CONTAINMENT_SLACK: f64 = 0.5;

#[derive(Debug, Error)]
pub enum SpherizeError {
    #[error("mesh is not watertight: {} bad edge(s)", .0.len())]
    NonWatertight(Vec<(usize, usize)>),
    #[error("mesh has no interior voxels at this resolution")]
    EmptyInterior,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
    /// Joint the sphere moves with (hand sets only).
    pub joint: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SphereSet {
    pub spheres: Vec<Sphere>,
    /// Content hash of the source mesh.
    pub source_hash: String,
}

impl SphereSet {
    pub fn len(&self) -> usize {
        self.spheres.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spheres.is_empty()
    }

    pub fn max_radius(&self) -> f64 {
        self.spheres.iter().map(|s| s.radius).fold(0.0, f64::max)
    }

    /// Rigidly move every sphere. Spheres with a joint use
    /// `transforms[joint]`; the rest use `transforms[0]`. Hand sets expect
    /// rest-to-world transforms ([`rest_to_world`]).
    pub fn posed(&self, transforms: &[Isometry3<f64>]) -> SphereSet {
        let spheres = self
            .spheres
            .iter()
            .map(|s| {
                let t = &transforms[s.joint.unwrap_or(0)];
                Sphere { center: transform_point(t, &s.center), ..*s }
            })
            .collect();
        SphereSet { spheres, source_hash: self.source_hash.clone() }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "count {}", self.spheres.len());
        let _ = writeln!(s, "source {}", self.source_hash);
        for sp in &self.spheres {
            let _ = write!(s, "{} {} {} {}", sp.center.x, sp.center.y, sp.center.z, sp.radius);
            if let Some(j) = sp.joint {
                let _ = write!(s, " {j}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<SphereSet, SpherizeError> {
        let err = |line: usize, m: &str| SpherizeError::Parse { line, message: m.to_string() };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let (n1, l1) = lines.next().ok_or_else(|| err(1, "missing count header"))?;
        let count: usize = l1.strip_prefix("count ").and_then(|v| v.trim().parse().ok()).ok_or_else(|| err(n1, "expected `count <n>`"))?;
        let (n2, l2) = lines.next().ok_or_else(|| err(2, "missing source header"))?;
        let source_hash = l2.strip_prefix("source").map(|v| v.trim().to_string()).ok_or_else(|| err(n2, "expected `source <hash>`"))?;
        let mut spheres = Vec::with_capacity(count);
        for (n, l) in lines {
            if l.is_empty() {
                continue;
            }
            let t: Vec<&str> = l.split_whitespace().collect();
            if t.len() != 4 && t.len() != 5 {
                return Err(err(n, "expected `cx cy cz r [joint]`"));
            }
            let f = |k: usize| t[k].parse::<f64>().map_err(|_| err(n, "bad number"));
            let radius = f(3)?;
            if !(radius > 0.0) {
                return Err(err(n, "radius must be positive"));
            }
            let joint = match t.get(4) {
                Some(j) => Some(j.parse::<usize>().map_err(|_| err(n, "bad joint index"))?),
                None => None,
            };
            spheres.push(Sphere { center: Vec3::new(f(0)?, f(1)?, f(2)?), radius, joint });
        }
        if spheres.len() != count {
            return Err(err(0, &format!("header declares {count} spheres, found {}", spheres.len())));
        }
        Ok(SphereSet { spheres, source_hash })
    }
}

/// Occupancy grid with interior distance field.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    /// Corner of voxel (0, 0, 0).
    pub origin: Vec3,
    pub voxel_size: f64,
    pub dims: [usize; 3],
    pub inside: Vec<bool>,
    /// Distance from each interior voxel center to the surface; 0 outside.
    pub distance: Vec<f64>,
    /// Interior points of a lattice `COVERAGE_SUBDIV` times finer than the
    /// voxels; coverage is measured on these.
    pub coverage_samples: Vec<Vec3>,
    pub source_hash: String,
}

impl VoxelGrid {
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn center(&self, i: usize) -> Vec3 {
        lattice_point(self.origin, self.voxel_size, self.dims, i)
    }

    pub fn interior_count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    pub fn interior_volume(&self) -> f64 {
        self.interior_count() as f64 * self.voxel_size.powi(3)
    }

    pub fn max_distance(&self) -> f64 {
        self.distance.iter().copied().fold(0.0, f64::max)
    }
}

pub fn voxelize(mesh: &TriMesh, voxel_size: f64) -> Result<VoxelGrid, SpherizeError> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(SpherizeError::InvalidParameter(format!("voxel size must be positive, got {voxel_size}")));
    }
    let query = MeshQuery::new(mesh.clone()).map_err(SpherizeError::NonWatertight)?;
    let bb = mesh.aabb();
    let origin = bb.min - Vec3::repeat(voxel_size);
    let ext = bb.extent();
    let dims = [0, 1, 2].map(|k| (ext[k] / voxel_size).ceil() as usize + 2);
    let inside = lattice_inside(&query, origin, voxel_size, dims);
    let distance: Vec<f64> = inside
        .par_iter()
        .enumerate()
        .map(|(i, &inn)| {
            if inn {
                let c = lattice_point(origin, voxel_size, dims, i);
                query.unsigned_distance(&c)
            } else {
                0.0
            }
        })
        .collect();
    let sub = COVERAGE_SUBDIV;
    let step = voxel_size / sub as f64;
    let fine = [dims[0] * sub, dims[1] * sub, dims[2] * sub];
    let fine_inside = lattice_inside(&query, origin, step, fine);
    let coverage_samples = fine_inside.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| lattice_point(origin, step, fine, i)).collect();
    Ok(VoxelGrid { origin, voxel_size, dims, inside, distance, coverage_samples, source_hash: mesh.content_hash() })
}

fn lattice_point(origin: Vec3, step: f64, dims: [usize; 3], i: usize) -> Vec3 {
    let x = i % dims[0];
    let y = (i / dims[0]) % dims[1];
    let z = i / (dims[0] * dims[1]);
    origin + Vec3::new(x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5) * step
}

/// Inside flags for every cell center of a lattice, by scanline parity
/// along +x. Rows whose ray grazes an edge or vertex fall back to the
/// per-point three-ray vote.
fn lattice_inside(query: &MeshQuery, origin: Vec3, step: f64, dims: [usize; 3]) -> Vec<bool> {
    let mesh = query.mesh();
    let rows: Vec<Vec<bool>> = (0..dims[1] * dims[2])
        .into_par_iter()
        .map(|row| {
            let (y, z) = (row % dims[1], row / dims[1]);
            let py = origin.y + (y as f64 + 0.5) * step;
            let pz = origin.z + (z as f64 + 0.5) * step;
            match row_crossings(mesh, py, pz) {
                Some(xs) => (0..dims[0])
                    .map(|x| {
                        let px = origin.x + (x as f64 + 0.5) * step;
                        xs.iter().filter(|&&c| c > px).count() % 2 == 1
                    })
                    .collect(),
                None => (0..dims[0]).map(|x| query.is_inside(&Vec3::new(origin.x + (x as f64 + 0.5) * step, py, pz))).collect(),
            }
        })
        .collect();
    rows.into_iter().flatten().collect()
}

/// x-coordinates where the line `(·, y, z)` crosses the mesh, or `None` if
/// the line passes too close to an edge for parity to be trusted.
fn row_crossings(mesh: &TriMesh, y: f64, z: f64) -> Option<Vec<f64>> {
    let mut xs = Vec::new();
    for t in 0..mesh.triangles.len() {
        let [a, b, c] = mesh.triangle(t);
        let (ymin, ymax) = (a.y.min(b.y).min(c.y), a.y.max(b.y).max(c.y));
        let (zmin, zmax) = (a.z.min(b.z).min(c.z), a.z.max(b.z).max(c.z));
        if y < ymin || y > ymax || z < zmin || z > zmax {
            continue;
        }
        let edge = |p: &Vec3, q: &Vec3| (q.y - p.y) * (z - p.z) - (q.z - p.z) * (y - p.y);
        let (e0, e1, e2) = (edge(&a, &b), edge(&b, &c), edge(&c, &a));
        let area = e0 + e1 + e2;
        let scale = ((b - a).cross(&(c - a))).norm().max(1e-300);
        let eps = 1e-12 * scale;
        if area.abs() <= eps {
            // triangle seen edge-on; only a problem if the line touches it
            if e0.abs() <= eps && e1.abs() <= eps && e2.abs() <= eps {
                return None;
            }
            continue;
        }
        if e0.abs() <= eps || e1.abs() <= eps || e2.abs() <= eps {
            if (e0 >= -eps && e1 >= -eps && e2 >= -eps) || (e0 <= eps && e1 <= eps && e2 <= eps) {
                return None;
            }
            continue;
        }
        if (e0 > 0.0) == (e1 > 0.0) && (e1 > 0.0) == (e2 > 0.0) {
            let (w0, w1, w2) = (e1 / area, e2 / area, e0 / area);
            xs.push(w0 * a.x + w1 * b.x + w2 * c.x);
        }
    }
    Some(xs)
}

#[derive(Debug, Clone)]
pub struct Packing {
    pub set: SphereSet,
    /// Fraction of interior coverage samples inside at least one sphere.
    pub coverage: f64,
}

pub fn pack_spheres(grid: &VoxelGrid, coverage_target: f64, max_spheres: usize) -> Result<Packing, SpherizeError> {
    if !(0.0..=1.0).contains(&coverage_target) {
        return Err(SpherizeError::InvalidParameter(format!("coverage target must be in [0, 1], got {coverage_target}")));
    }
    if max_spheres == 0 {
        return Err(SpherizeError::InvalidParameter("max spheres must be at least 1".into()));
    }
    // Kept sorted by voxel index, so the first maximum found wins ties.
    let mut uncovered: Vec<(usize, Vec3)> = (0..grid.inside.len()).filter(|&i| grid.inside[i]).map(|i| (i, grid.center(i))).collect();
    if uncovered.is_empty() {
        return Err(SpherizeError::EmptyInterior);
    }
    let mut samples = grid.coverage_samples.clone();
    let total = samples.len().max(1);
    let mut spheres = Vec::new();
    let mut coverage = 0.0;
    while spheres.len() < max_spheres && !uncovered.is_empty() {
        let mut best = 0;
        for k in 1..uncovered.len() {
            if grid.distance[uncovered[k].0] > grid.distance[uncovered[best].0] {
                best = k;
            }
        }
        let (bi, c) = uncovered[best];
        let r = grid.distance[bi] + CONTAINMENT_SLACK;
        spheres.push(Sphere { center: c, radius: r, joint: None });
        let r2 = r * r;
        uncovered.retain(|(i, x)| *i != bi && (x - c).norm_squared() > r2);
        samples.retain(|x| (x - c).norm_squared() > r2);
        coverage = (total - samples.len()) as f64 / total as f64;
        if coverage >= coverage_target {
            break;
        }
    }
    Ok(Packing { set: SphereSet { spheres, source_hash: grid.source_hash.clone() }, coverage })
}

/// Voxelize and pack in one step.
pub fn spherize(mesh: &TriMesh, voxel_size: f64, coverage_target: f64, max_spheres: usize) -> Result<Packing, SpherizeError> {
    pack_spheres(&voxelize(mesh, voxel_size)?, coverage_target, max_spheres)
}

/// Sphere set for the hand: each rigidly skinned bone component of the rest
/// mesh is spherized separately and its spheres attached to that bone's
/// joint. Centers are in rest-model coordinates.
pub fn hand_spheres(model: &HandModel) -> Result<SphereSet, SpherizeError> {
    let mut spheres = Vec::new();
    for comp in model.rest_mesh.components() {
        let mut weight = [0.0f64; crate::hand_model::NUM_JOINTS];
        for &v in &comp.source {
            for &(j, w) in &model.skin_weights[v] {
                weight[j] += w;
            }
        }
        let joint = (0..weight.len()).fold(0, |best, j| if weight[j] > weight[best] { j } else { best });
        let packing = spherize(&comp.mesh, HAND_VOXEL_SIZE, 1.0, HAND_SPHERES_PER_BONE)?;
        spheres.extend(packing.set.spheres.into_iter().map(|s| Sphere { joint: Some(joint), ..s }));
    }
    Ok(SphereSet { spheres, source_hash: model.rest_mesh.content_hash() })
}

/// Per-joint transforms mapping rest-model coordinates to the world, i.e.
/// `T_j ∘ translate(-rest_j)`.
pub fn rest_to_world(model: &HandModel, transforms: &[Isometry3<f64>]) -> Vec<Isometry3<f64>> {
    transforms.iter().zip(model.rest_positions()).map(|(t, p)| t * Isometry3::translation(-p.x, -p.y, -p.z)).collect()
}
