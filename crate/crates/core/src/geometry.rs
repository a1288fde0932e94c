//! Triangle meshes, primitive generators, and the spatial queries shared by
//! voxelization, contact evaluation, and rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{Isometry3, Vector3};
use sha2::{Digest, Sha256};

pub type Vec3 = Vector3<f64>;

/// Indexed triangle mesh in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Self {
        Self { vertices, triangles }
    }

    pub fn empty() -> Self {
        Self { vertices: Vec::new(), triangles: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn transformed(&self, iso: &Isometry3<f64>) -> TriMesh {
        TriMesh { vertices: self.vertices.iter().map(|v| transform_point(iso, v)).collect(), triangles: self.triangles.clone() }
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::from_points(self.vertices.iter())
    }

    /// Signed enclosed volume (positive for outward-facing winding).
    pub fn volume(&self) -> f64 {
        self.triangles.iter().map(|&[a, b, c]| self.vertices[a].dot(&self.vertices[b].cross(&self.vertices[c]))).sum::<f64>() / 6.0
    }

    pub fn centroid(&self) -> Vec3 {
        let n = self.vertices.len().max(1) as f64;
        self.vertices.iter().sum::<Vec3>() / n
    }

    /// Every undirected edge must be shared by exactly two triangles.
    /// Returns the offending edges (sorted vertex pairs) otherwise.
    pub fn check_watertight(&self) -> Result<(), Vec<(usize, usize)>> {
        let mut counts: BTreeMap<(usize, usize), u32> = BTreeMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let bad: Vec<_> = counts.into_iter().filter(|&(_, n)| n != 2).map(|(e, _)| e).collect();
        if bad.is_empty() && !self.triangles.is_empty() {
            Ok(())
        } else {
            Err(bad)
        }
    }

    /// Short content hash of the exact vertex and index data.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for v in &self.vertices {
            for c in v.iter() {
                hasher.update(c.to_bits().to_le_bytes());
            }
        }
        for t in &self.triangles {
            for &i in t {
                hasher.update((i as u64).to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        let mut s = String::with_capacity(16);
        for b in &digest[..8] {
            let _ = write!(s, "{b:02x}");
        }
        s
    }

    /// Split into connected components (by shared vertices). Each component
    /// keeps the original vertex indices of its triangles in `source`.
    pub fn components(&self) -> Vec<Component> {
        let n = self.vertices.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for t in &self.triangles {
            for k in 1..3 {
                let (a, b) = (find(&mut parent, t[0]), find(&mut parent, t[k]));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (ti, t) in self.triangles.iter().enumerate() {
            let r = find(&mut parent, t[0]);
            by_root.entry(r).or_default().push(ti);
        }
        by_root
            .into_values()
            .map(|tris| {
                let mut remap: BTreeMap<usize, usize> = BTreeMap::new();
                let mut source = Vec::new();
                let mut triangles = Vec::with_capacity(tris.len());
                for ti in tris {
                    let mut out = [0usize; 3];
                    for (k, &v) in self.triangles[ti].iter().enumerate() {
                        out[k] = *remap.entry(v).or_insert_with(|| {
                            source.push(v);
                            source.len() - 1
                        });
                    }
                    triangles.push(out);
                }
                let vertices = source.iter().map(|&v| self.vertices[v]).collect();
                Component { mesh: TriMesh { vertices, triangles }, source }
            })
            .collect()
    }

    /// Concatenate meshes, offsetting indices.
    pub fn merge<'a>(parts: impl IntoIterator<Item = &'a TriMesh>) -> TriMesh {
        let mut out = TriMesh::empty();
        for p in parts {
            let base = out.vertices.len();
            out.vertices.extend_from_slice(&p.vertices);
            out.triangles.extend(p.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Component {
    pub mesh: TriMesh,
    /// Original vertex index of each component vertex.
    pub source: Vec<usize>,
}

pub fn transform_point(iso: &Isometry3<f64>, p: &Vec3) -> Vec3 {
    iso.rotation * p + iso.translation.vector
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Self { min: Vec3::repeat(f64::INFINITY), max: Vec3::repeat(f64::NEG_INFINITY) }
    }

    pub fn from_points<'a>(pts: impl Iterator<Item = &'a Vec3>) -> Self {
        let mut b = Self::empty();
        for p in pts {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, o: &Aabb) -> Aabb {
        Aabb { min: self.min.inf(&o.min), max: self.max.sup(&o.max) }
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn distance_squared(&self, p: &Vec3) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let v = if p[k] < self.min[k] {
                self.min[k] - p[k]
            } else if p[k] > self.max[k] {
                p[k] - self.max[k]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }

    /// Slab test; true if the ray `origin + t dir`, t >= 0, touches the box.
    pub fn hit_by_ray(&self, origin: &Vec3, inv_dir: &Vec3) -> bool {
        let mut tmin = 0.0f64;
        let mut tmax = f64::INFINITY;
        for k in 0..3 {
            let t1 = (self.min[k] - origin[k]) * inv_dir[k];
            let t2 = (self.max[k] - origin[k]) * inv_dir[k];
            tmin = tmin.max(t1.min(t2));
            tmax = tmax.min(t1.max(t2));
        }
        tmin <= tmax
    }
}

/// Closest point on triangle `abc` to `p` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Möller–Trumbore. Returns the ray parameter of the hit, if any.
pub fn ray_triangle(origin: &Vec3, dir: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let h = dir.cross(&e2);
    let det = e1.dot(&h);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = inv * s.dot(&h);
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = inv * dir.dot(&q);
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = inv * e2.dot(&q);
    (t > 1e-12).then_some(t)
}

/// Generalized winding number of a closed (possibly self-overlapping) mesh
/// around `p`. About 1 inside each enclosing shell, 0 outside.
pub fn winding_number(p: &Vec3, mesh: &TriMesh) -> f64 {
    let mut total = 0.0;
    for &[ia, ib, ic] in &mesh.triangles {
        let a = mesh.vertices[ia] - p;
        let b = mesh.vertices[ib] - p;
        let c = mesh.vertices[ic] - p;
        let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
        let num = a.dot(&b.cross(&c));
        let den = la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
        total += 2.0 * num.atan2(den);
    }
    total / (4.0 * std::f64::consts::PI)
}

#[derive(Debug, Clone)]
enum BvhNode {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl BvhNode {
    fn bounds(&self) -> &Aabb {
        match self {
            BvhNode::Leaf { bounds, .. } | BvhNode::Inner { bounds, .. } => bounds,
        }
    }
}

/// Median-split bounding volume hierarchy over the triangles of a mesh.
#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<BvhNode>,
    order: Vec<usize>,
}

const LEAF_SIZE: usize = 4;

impl Bvh {
    pub fn build(mesh: &TriMesh) -> Self {
        let boxes: Vec<Aabb> = (0..mesh.triangles.len()).map(|t| Aabb::from_points(mesh.triangle(t).iter())).collect();
        let mut order: Vec<usize> = (0..boxes.len()).collect();
        let mut nodes = Vec::new();
        if !order.is_empty() {
            build_node(&boxes, &mut order, 0, boxes.len(), &mut nodes);
        }
        Self { nodes, order }
    }

    /// Closest surface point: `(distance, triangle, point)`.
    pub fn closest(&self, mesh: &TriMesh, p: &Vec3) -> Option<(f64, usize, Vec3)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best_d2 = f64::INFINITY;
        let mut best = (usize::MAX, Vec3::zeros());
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            match &self.nodes[n] {
                BvhNode::Leaf { bounds, start, end } => {
                    if bounds.distance_squared(p) >= best_d2 {
                        continue;
                    }
                    for &t in &self.order[*start..*end] {
                        let [a, b, c] = mesh.triangle(t);
                        let q = closest_point_on_triangle(p, &a, &b, &c);
                        let d2 = (q - p).norm_squared();
                        if d2 < best_d2 || (d2 == best_d2 && t < best.0) {
                            best_d2 = d2;
                            best = (t, q);
                        }
                    }
                }
                BvhNode::Inner { bounds, left, right } => {
                    if bounds.distance_squared(p) > best_d2 {
                        continue;
                    }
                    let dl = self.nodes[*left].bounds().distance_squared(p);
                    let dr = self.nodes[*right].bounds().distance_squared(p);
                    if dl < dr {
                        stack.push(*right);
                        stack.push(*left);
                    } else {
                        stack.push(*left);
                        stack.push(*right);
                    }
                }
            }
        }
        Some((best_d2.sqrt(), best.0, best.1))
    }

    /// Number of triangle crossings of the half-line `origin + t dir`, t > 0.
    pub fn count_ray_hits(&self, mesh: &TriMesh, origin: &Vec3, dir: &Vec3) -> usize {
        if self.nodes.is_empty() {
            return 0;
        }
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut hits = 0;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if !node.bounds().hit_by_ray(origin, &inv) {
                continue;
            }
            match node {
                BvhNode::Leaf { start, end, .. } => {
                    for &t in &self.order[*start..*end] {
                        let [a, b, c] = mesh.triangle(t);
                        if ray_triangle(origin, dir, &a, &b, &c).is_some() {
                            hits += 1;
                        }
                    }
                }
                BvhNode::Inner { left, right, .. } => {
                    stack.push(*left);
                    stack.push(*right);
                }
            }
        }
        hits
    }
}

fn build_node(boxes: &[Aabb], order: &mut [usize], start: usize, end: usize, nodes: &mut Vec<BvhNode>) -> usize {
    let bounds = order[start..end].iter().fold(Aabb::empty(), |acc, &t| acc.union(&boxes[t]));
    let idx = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(BvhNode::Leaf { bounds, start, end });
        return idx;
    }
    nodes.push(BvhNode::Leaf { bounds, start, end });
    let cb = order[start..end].iter().fold(Aabb::empty(), |mut acc, &t| {
        acc.grow(&boxes[t].center());
        acc
    });
    let ext = cb.extent();
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    order[start..end].sort_by(|&a, &b| boxes[a].center()[axis].total_cmp(&boxes[b].center()[axis]).then(a.cmp(&b)));
    let mid = (start + end) / 2;
    let left = build_node(boxes, order, start, mid, nodes);
    let right = build_node(boxes, order, mid, end, nodes);
    nodes[idx] = BvhNode::Inner { bounds, left, right };
    idx
}

/// Generic, non-axis-aligned probe directions for parity voting.
const PARITY_DIRS: [[f64; 3]; 3] = [[1.0, 0.123_456_7, 0.076_543_2], [-0.054_321, 1.0, 0.198_765_4], [0.135_79, -0.086_42, -1.0]];

/// A closed mesh with its BVH, answering inside and signed-distance queries.
#[derive(Debug, Clone)]
pub struct MeshQuery {
    mesh: TriMesh,
    bvh: Bvh,
}

impl MeshQuery {
    /// Fails with the offending edges if the mesh is not watertight.
    pub fn new(mesh: TriMesh) -> Result<Self, Vec<(usize, usize)>> {
        mesh.check_watertight()?;
        let bvh = Bvh::build(&mesh);
        Ok(Self { mesh, bvh })
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    /// Ray-parity inside test, majority over three probe directions.
    pub fn is_inside(&self, p: &Vec3) -> bool {
        let votes = PARITY_DIRS
            .iter()
            .filter(|d| {
                let dir = Vec3::new(d[0], d[1], d[2]).normalize();
                self.bvh.count_ray_hits(&self.mesh, p, &dir) % 2 == 1
            })
            .count();
        votes >= 2
    }

    pub fn unsigned_distance(&self, p: &Vec3) -> f64 {
        self.bvh.closest(&self.mesh, p).map_or(f64::INFINITY, |(d, _, _)| d)
    }

    /// Negative inside.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        let d = self.unsigned_distance(p);
        if self.is_inside(p) {
            -d
        } else {
            d
        }
    }
}

/// Axis-aligned box centered at the origin.
pub fn box_mesh(half: Vec3) -> TriMesh {
    let mut vertices = Vec::with_capacity(8);
    for i in 0..8 {
        vertices.push(Vec3::new(if i & 1 == 0 { -half.x } else { half.x }, if i & 2 == 0 { -half.y } else { half.y }, if i & 4 == 0 { -half.z } else { half.z }));
    }
    // outward-facing
    let triangles = vec![
        [0, 2, 1],
        [1, 2, 3], // -z
        [4, 5, 6],
        [5, 7, 6], // +z
        [0, 1, 4],
        [1, 5, 4], // -y
        [2, 6, 3],
        [3, 6, 7], // +y
        [0, 4, 2],
        [2, 4, 6], // -x
        [1, 3, 5],
        [3, 7, 5], // +x
    ];
    TriMesh { vertices, triangles }
}

/// Icosphere of the given radius centered at the origin.
pub fn icosphere(radius: f64, subdivisions: u32) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|v| Vec3::new(v[0], v[1], v[2]).normalize())
    .collect();
    let mut triangles: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut next = Vec::with_capacity(triangles.len() * 4);
        for &[a, b, c] in &triangles {
            let mut m = |i: usize, j: usize| -> usize {
                *mid.entry((i.min(j), i.max(j))).or_insert_with(|| {
                    vertices.push(((vertices[i] + vertices[j]) * 0.5).normalize());
                    vertices.len() - 1
                })
            };
            let (ab, bc, ca) = (m(a, b), m(b, c), m(c, a));
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        triangles = next;
    }
    for v in &mut vertices {
        *v *= radius;
    }
    TriMesh { vertices, triangles }
}

/// Closed cylinder along z, centered at the origin.
pub fn cylinder(radius: f64, height: f64, segments: usize) -> TriMesh {
    let h = height / 2.0;
    let mut vertices = Vec::with_capacity(2 * segments + 2);
    for z in [-h, h] {
        for i in 0..segments {
            let a = std::f64::consts::TAU * i as f64 / segments as f64;
            vertices.push(Vec3::new(radius * a.cos(), radius * a.sin(), z));
        }
    }
    let bottom = vertices.len();
    vertices.push(Vec3::new(0.0, 0.0, -h));
    let top = vertices.len();
    vertices.push(Vec3::new(0.0, 0.0, h));
    let mut triangles = Vec::new();
    for i in 0..segments {
        let j = (i + 1) % segments;
        let (b0, b1, t0, t1) = (i, j, i + segments, j + segments);
        triangles.push([b0, b1, t1]);
        triangles.push([b0, t1, t0]);
        triangles.push([bottom, b1, b0]);
        triangles.push([top, t0, t1]);
    }
    TriMesh { vertices, triangles }
}

/// Capsule around the segment `a`–`b`. `segments` around the axis,
/// `cap_rings` latitude rings per hemisphere (excluding the pole).
pub fn capsule(a: &Vec3, b: &Vec3, radius: f64, segments: usize, cap_rings: usize) -> TriMesh {
    let axis = b - a;
    let len = axis.norm();
    let w = if len > 0.0 { axis / len } else { Vec3::z() };
    let helper = if w.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = w.cross(&helper).normalize();
    let v = w.cross(&u);

    let mut vertices = Vec::new();
    // rings from the `a` pole to the `b` pole
    let mut rings: Vec<(Vec3, f64)> = Vec::new(); // (center, ring radius)
    for k in 0..cap_rings {
        // latitude measured from the equator toward the pole
        let lat = std::f64::consts::FRAC_PI_2 * (cap_rings - k) as f64 / (cap_rings as f64 + 1.0);
        rings.push((a - w * (radius * lat.sin()), radius * lat.cos()));
    }
    rings.push((*a, radius));
    rings.push((*b, radius));
    for k in 0..cap_rings {
        let lat = std::f64::consts::FRAC_PI_2 * (k + 1) as f64 / (cap_rings as f64 + 1.0);
        rings.push((b + w * (radius * lat.sin()), radius * lat.cos()));
    }
    let pole_a = 0;
    vertices.push(a - w * radius);
    for (center, r) in &rings {
        for i in 0..segments {
            let ang = std::f64::consts::TAU * i as f64 / segments as f64;
            vertices.push(center + (u * ang.cos() + v * ang.sin()) * *r);
        }
    }
    let pole_b = vertices.len();
    vertices.push(b + w * radius);

    let ring = |k: usize, i: usize| 1 + k * segments + (i % segments);
    let mut triangles = Vec::new();
    for i in 0..segments {
        triangles.push([pole_a, ring(0, i + 1), ring(0, i)]);
    }
    for k in 0..rings.len() - 1 {
        for i in 0..segments {
            let (p0, p1, q0, q1) = (ring(k, i), ring(k, i + 1), ring(k + 1, i), ring(k + 1, i + 1));
            triangles.push([p0, p1, q1]);
            triangles.push([p0, q1, q0]);
        }
    }
    let last = rings.len() - 1;
    for i in 0..segments {
        triangles.push([pole_b, ring(last, i), ring(last, i + 1)]);
    }
    TriMesh { vertices, triangles }
}
