//! Regenerates the bundled data files (hand model and object meshes).

use hograsp::assets::{generate, BUNDLED_MESHES};
use hograsp::mesh_io::write_obj;

fn main() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/data");
    std::fs::write(format!("{dir}/hand_default.hand"), hograsp::HandModel::procedural().to_text()).expect("write model");
    for (name, _) in BUNDLED_MESHES {
        let mesh = generate(name).expect("known mesh");
        std::fs::write(format!("{dir}/meshes/{name}.obj"), write_obj(&mesh)).expect("write mesh");
    }
}
