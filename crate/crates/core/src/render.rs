//! Z-buffered label and depth rasterization.
//!
//! Pinhole cameras look down their +z axis (x right, y down). Pixel `(u, v)`
//! is sampled at its center `(u + 0.5, v + 0.5)`. Depth is camera-space z in
//! millimeters, interpolated perspective-correctly. No anti-aliasing and no
//! back-face culling: every pixel gets exactly one hard label.

use nalgebra::{Isometry3, Translation3, UnitQuaternion};
use thiserror::Error;

use crate::geometry::{TriMesh, Vec3};
use crate::pgm::Pgm;

/// Triangles are clipped against this camera-space plane (mm).
pub const NEAR_PLANE: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("degenerate camera: {0}")]
    DegenerateCamera(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Class {
    Background,
    Object,
    Person,
}

impl Class {
    pub const ALL: [Class; 3] = [Class::Object, Class::Person, Class::Background];

    /// PGM gray level.
    pub fn gray(self) -> u16 {
        match self {
            Class::Background => 0,
            Class::Object => 128,
            Class::Person => 255,
        }
    }

    pub fn from_gray(v: u16) -> Option<Class> {
        match v {
            0 => Some(Class::Background),
            128 => Some(Class::Object),
            255 => Some(Class::Person),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub world_to_camera: Isometry3<f64>,
}

impl Camera {
    pub fn validate(&self) -> Result<(), RenderError> {
        let bad = |m: String| Err(RenderError::DegenerateCamera(m));
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad(format!("focal lengths must be positive (fx {}, fy {})", self.fx, self.fy));
        }
        if self.width == 0 || self.height == 0 {
            return bad("image has zero size".into());
        }
        if !(0.0 <= self.cx && self.cx < self.width as f64 && 0.0 <= self.cy && self.cy < self.height as f64) {
            return bad(format!("principal point ({}, {}) outside the image", self.cx, self.cy));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`; `up` fixes the roll (image y
    /// points away from it).
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fx: f64, fy: f64, width: usize, height: usize) -> Camera {
        let z = (target - eye).normalize();
        let x = z.cross(&up).normalize();
        let y = z.cross(&x);
        let rot = nalgebra::Rotation3::from_matrix_unchecked(nalgebra::Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]));
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let t = -(q * eye);
        Camera { fx, fy, cx: width as f64 / 2.0, cy: height as f64 / 2.0, width, height, world_to_camera: Isometry3::from_parts(Translation3::from(t), q) }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelImage {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<Class>,
    /// mm; `+inf` on background.
    pub depth: Vec<f64>,
}

impl LabelImage {
    pub fn background(width: usize, height: usize) -> Self {
        Self { width, height, labels: vec![Class::Background; width * height], depth: vec![f64::INFINITY; width * height] }
    }

    pub fn label(&self, u: usize, v: usize) -> Class {
        self.labels[v * self.width + u]
    }

    pub fn depth_at(&self, u: usize, v: usize) -> f64 {
        self.depth[v * self.width + u]
    }

    pub fn count(&self, class: Class) -> usize {
        self.labels.iter().filter(|&&c| c == class).count()
    }

    /// 8-bit PGM: 0 background, 128 object, 255 person.
    pub fn labels_pgm(&self) -> Pgm {
        Pgm::new(self.width, self.height, 255, self.labels.iter().map(|c| c.gray()).collect())
    }

    /// 16-bit PGM in 0.1 mm units, 0 on background, saturating at 65535.
    pub fn depth_pgm(&self) -> Pgm {
        let data = self.depth.iter().map(|&d| if d.is_finite() { (d * 10.0).round().clamp(1.0, 65535.0) as u16 } else { 0 }).collect();
        Pgm::new(self.width, self.height, 65535, data)
    }
}

#[derive(Clone, Copy)]
struct Projected {
    sx: f64,
    sy: f64,
    inv_z: f64,
}

/// Rasterize hand (person) and object triangles, nearest surface wins.
pub fn rasterize(hand: Option<&TriMesh>, object: Option<&TriMesh>, camera: &Camera) -> Result<LabelImage, RenderError> {
    camera.validate()?;
    let mut img = LabelImage::background(camera.width, camera.height);
    for (mesh, class) in [(object, Class::Object), (hand, Class::Person)] {
        if let Some(mesh) = mesh {
            draw_mesh(&mut img, mesh, class, camera);
        }
    }
    Ok(img)
}

fn draw_mesh(img: &mut LabelImage, mesh: &TriMesh, class: Class, cam: &Camera) {
    let rot = cam.world_to_camera.rotation.to_rotation_matrix().into_inner();
    let t = cam.world_to_camera.translation.vector;
    let cam_pts: Vec<Vec3> = mesh.vertices.iter().map(|v| rot * v + t).collect();
    let projected: Vec<Projected> = cam_pts.iter().map(|p| project(cam, p)).collect();
    let mut poly: Vec<Vec3> = Vec::with_capacity(4);
    for &[a, b, c] in &mesh.triangles {
        let tri = [cam_pts[a], cam_pts[b], cam_pts[c]];
        let in_front = tri.iter().filter(|p| p.z >= NEAR_PLANE).count();
        if in_front == 3 {
            fill_triangle(img, &[projected[a], projected[b], projected[c]], class);
            continue;
        }
        if in_front == 0 {
            continue;
        }
        clip_near(&tri, &mut poly);
        for k in 1..poly.len().saturating_sub(1) {
            let p = [project(cam, &poly[0]), project(cam, &poly[k]), project(cam, &poly[k + 1])];
            fill_triangle(img, &p, class);
        }
    }
}

fn project(cam: &Camera, p: &Vec3) -> Projected {
    Projected { sx: cam.fx * p.x / p.z + cam.cx, sy: cam.fy * p.y / p.z + cam.cy, inv_z: 1.0 / p.z }
}

/// Sutherland–Hodgman against `z >= NEAR_PLANE`.
fn clip_near(tri: &[Vec3; 3], out: &mut Vec<Vec3>) {
    out.clear();
    for i in 0..3 {
        let (p, q) = (tri[i], tri[(i + 1) % 3]);
        let (pin, qin) = (p.z >= NEAR_PLANE, q.z >= NEAR_PLANE);
        if pin {
            out.push(p);
        }
        if pin != qin {
            let t = (NEAR_PLANE - p.z) / (q.z - p.z);
            let mut x = p + (q - p) * t;
            x.z = NEAR_PLANE;
            out.push(x);
        }
    }
}

fn fill_triangle(img: &mut LabelImage, p: &[Projected; 3], class: Class) {
    let min_x = p[0].sx.min(p[1].sx).min(p[2].sx);
    let max_x = p[0].sx.max(p[1].sx).max(p[2].sx);
    let min_y = p[0].sy.min(p[1].sy).min(p[2].sy);
    let max_y = p[0].sy.max(p[1].sy).max(p[2].sy);
    let (w, h) = (img.width as f64, img.height as f64);
    // Pixel centers sit at integer + 0.5.
    let u0 = (min_x - 0.5).ceil().max(0.0);
    let u1 = (max_x - 0.5).floor().min(w - 1.0);
    let v0 = (min_y - 0.5).ceil().max(0.0);
    let v1 = (max_y - 0.5).floor().min(h - 1.0);
    if !(u0 <= u1 && v0 <= v1) {
        return;
    }
    let edge = |a: &Projected, b: &Projected, x: f64, y: f64| (b.sx - a.sx) * (y - a.sy) - (b.sy - a.sy) * (x - a.sx);
    let area = edge(&p[0], &p[1], p[2].sx, p[2].sy);
    if area == 0.0 || !area.is_finite() {
        return;
    }
    // Edge values are sign-normalized by the area so the inside test needs
    // no division, and stepped incrementally along each row.
    let sign = area.signum();
    let inv_area = 1.0 / area.abs();
    let (d0, d1, d2) = (-sign * (p[2].sy - p[1].sy), -sign * (p[0].sy - p[2].sy), -sign * (p[1].sy - p[0].sy));
    let x0 = u0 + 0.5;
    for v in v0 as usize..=v1 as usize {
        let y = v as f64 + 0.5;
        let mut e0 = sign * edge(&p[1], &p[2], x0, y);
        let mut e1 = sign * edge(&p[2], &p[0], x0, y);
        let mut e2 = sign * edge(&p[0], &p[1], x0, y);
        let mut entered = false;
        for u in u0 as usize..=u1 as usize {
            let inside = e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0;
            let (c0, c1, c2) = (e0, e1, e2);
            e0 += d0;
            e1 += d1;
            e2 += d2;
            if !inside {
                // Triangles are convex: a row is one contiguous span.
                if entered {
                    break;
                }
                continue;
            }
            entered = true;
            let (w0, w1, w2) = (c0 * inv_area, c1 * inv_area, c2 * inv_area);
            let depth = 1.0 / (w0 * p[0].inv_z + w1 * p[1].inv_z + w2 * p[2].inv_z);
            let i = v * img.width + u;
            if depth < img.depth[i] {
                img.depth[i] = depth;
                img.labels[i] = class;
            }
        }
    }
}
