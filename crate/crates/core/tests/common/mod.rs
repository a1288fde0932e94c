//! Independent oracles shared by the integration tests. Everything here is
//! written from first principles on plain arrays and does not call into the
//! library's geometry code.
#![allow(dead_code)]

use hograsp::{TriMesh, Vec3};

pub type M3 = [[f64; 3]; 3];

pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

pub fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

pub fn mat_vec(m: &M3, v: [f64; 3]) -> [f64; 3] {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

pub fn mat_mul(a: &M3, b: &M3) -> M3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn transpose(m: &M3) -> M3 {
    [[m[0][0], m[1][0], m[2][0]], [m[0][1], m[1][1], m[2][1]], [m[0][2], m[1][2], m[2][2]]]
}

/// Rodrigues' formula for a unit axis.
pub fn rodrigues(axis: [f64; 3], angle: f64) -> M3 {
    let (s, c) = angle.sin_cos();
    let [x, y, z] = axis;
    let t = 1.0 - c;
    [[c + x * x * t, x * y * t - z * s, x * z * t + y * s], [y * x * t + z * s, c + y * y * t, y * z * t - x * s], [z * x * t - y * s, z * y * t + x * s, c + z * z * t]]
}

/// Rotation matrix of an axis-angle vector.
pub fn axis_angle(r: [f64; 3]) -> M3 {
    let a = norm(r);
    if a == 0.0 {
        return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    }
    rodrigues(scale(r, 1.0 / a), a)
}

fn point_segment_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    let t = if len2 > 0.0 { (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    norm(sub(p, add(a, scale(ab, t))))
}

/// Distance from `p` to a triangle: plane distance when the projection
/// lands inside, otherwise the nearest edge.
pub fn point_triangle_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let n = cross(sub(b, a), sub(c, a));
    let nn = dot(n, n);
    if nn > 0.0 {
        let h = dot(sub(p, a), n) / nn;
        let q = sub(p, scale(n, h));
        let inside = [(a, b), (b, c), (c, a)].iter().all(|&(u, v)| dot(cross(sub(v, u), sub(q, u)), n) >= 0.0);
        if inside {
            return h.abs() * nn.sqrt();
        }
    }
    point_segment_distance(p, a, b).min(point_segment_distance(p, b, c)).min(point_segment_distance(p, c, a))
}

pub fn tri(mesh: &TriMesh, t: usize) -> [[f64; 3]; 3] {
    let [i, j, k] = mesh.triangles[t];
    [arr(&mesh.vertices[i]), arr(&mesh.vertices[j]), arr(&mesh.vertices[k])]
}

/// Minimum distance to every triangle, no acceleration.
pub fn brute_distance(p: [f64; 3], mesh: &TriMesh) -> f64 {
    (0..mesh.triangles.len())
        .map(|t| {
            let [a, b, c] = tri(mesh, t);
            point_triangle_distance(p, a, b, c)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Generalized winding number from solid angles (Van Oosterom and
/// Strackee), a ray-free inside test.
pub fn winding(p: [f64; 3], mesh: &TriMesh) -> f64 {
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        let [a, b, c] = tri(mesh, t);
        let (a, b, c) = (sub(a, p), sub(b, p), sub(c, p));
        let (la, lb, lc) = (norm(a), norm(b), norm(c));
        let num = dot(a, cross(b, c));
        let den = la * lb * lc + dot(a, b) * lc + dot(b, c) * la + dot(c, a) * lb;
        total += 2.0 * num.atan2(den);
    }
    total / (4.0 * std::f64::consts::PI)
}

pub fn brute_signed_distance(p: [f64; 3], mesh: &TriMesh) -> f64 {
    let d = brute_distance(p, mesh);
    if winding(p, mesh) > 0.5 {
        -d
    } else {
        d
    }
}

/// Outward face planes `(unit normal, offset)` of a convex closed mesh.
pub fn convex_planes(mesh: &TriMesh) -> Vec<([f64; 3], f64)> {
    (0..mesh.triangles.len())
        .map(|t| {
            let [a, b, c] = tri(mesh, t);
            let n = cross(sub(b, a), sub(c, a));
            let n = scale(n, 1.0 / norm(n));
            (n, dot(n, a))
        })
        .collect()
}

/// Signed distance to the boundary of a convex region given by its planes,
/// exact for interior points.
pub fn convex_depth(p: [f64; 3], planes: &[([f64; 3], f64)]) -> f64 {
    planes.iter().map(|(n, o)| o - dot(*n, p)).fold(f64::INFINITY, f64::min)
}

/// Möller-Trumbore; returns the ray parameter and barycentrics `(u, v)`.
pub fn ray_hit(o: [f64; 3], d: [f64; 3], a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> Option<(f64, f64, f64)> {
    let e1 = sub(b, a);
    let e2 = sub(c, a);
    let pv = cross(d, e2);
    let det = dot(e1, pv);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let tv = sub(o, a);
    let u = dot(tv, pv) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qv = cross(tv, e1);
    let v = dot(d, qv) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some((dot(e2, qv) * inv, u, v))
}

/// Population mean and standard deviation, two-pass.
pub fn stats(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
