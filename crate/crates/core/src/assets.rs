//! Meshes shipped with the crate, and the generators that produced them.

use crate::geometry::{box_mesh, cylinder, icosphere, TriMesh, Vec3};
use crate::mesh_io::parse_obj;

/// `(name, obj text)` for every bundled object mesh.
pub const BUNDLED_MESHES: [(&str, &str); 4] = [
    ("cube", include_str!("../data/meshes/cube.obj")),
    ("sphere", include_str!("../data/meshes/sphere.obj")),
    ("cylinder", include_str!("../data/meshes/cylinder.obj")),
    ("box", include_str!("../data/meshes/box.obj")),
];

pub fn bundled_mesh(name: &str) -> Option<TriMesh> {
    BUNDLED_MESHES.iter().find(|(n, _)| *n == name).map(|(_, text)| parse_obj(text).expect("bundled mesh parses"))
}

/// Regenerates the bundled meshes.
pub fn generate(name: &str) -> Option<TriMesh> {
    Some(match name {
        // 100 mm cube
        "cube" => box_mesh(Vec3::repeat(50.0)),
        // radius 50 mm
        "sphere" => icosphere(50.0, 3),
        // cleanser-bottle-like cylinder, radius 30 mm, height 140 mm
        "cylinder" => cylinder(30.0, 140.0, 32),
        "box" => box_mesh(Vec3::new(27.5, 37.5, 60.0)),
        _ => return None,
    })
}
