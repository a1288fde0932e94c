use std::path::Path;

use hograsp::dataset::{read_text, DatasetError};
use hograsp::mesh_io::read_mesh;
use hograsp::{assets, HandModel, TriMesh};

pub enum Outcome {
    Done,
    NotConverged,
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        Self::input(e.to_string())
    }
}

/// A mesh path, or a bundled mesh name when no such file exists.
pub fn load_mesh(arg: &str, base: Option<&Path>) -> Result<TriMesh, CliError> {
    let path = base.map_or_else(|| Path::new(arg).to_path_buf(), |b| b.join(arg));
    if path.is_file() {
        return read_mesh(&path).map_err(|e| CliError::input(format!("{}: {e}", path.display())));
    }
    assets::bundled_mesh(arg).ok_or_else(|| {
        let names: Vec<&str> = assets::BUNDLED_MESHES.iter().map(|(n, _)| *n).collect();
        CliError::input(format!("`{arg}` is neither a mesh file nor a bundled mesh ({})", names.join(", ")))
    })
}

pub fn load_hand(arg: &str) -> Result<HandModel, CliError> {
    if arg == "default" {
        return Ok(HandModel::default_model());
    }
    let text = read_text(Path::new(arg))?;
    HandModel::from_text(&text).map_err(|e| CliError::input(format!("{arg}: {e}")))
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    hograsp::dataset::write_file(path, contents).map_err(Into::into)
}
