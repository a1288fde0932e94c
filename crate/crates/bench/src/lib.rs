//! Shared fixtures for the criterion benches.

use hograsp::synth::{generate, SceneAssets, SyntheticFrame, SyntheticScene};

/// The default cube scene, seed 7, with its perturbed start.
pub fn cube_frame() -> SyntheticFrame {
    let assets = SceneAssets::load("cube").expect("bundled cube");
    generate(&SyntheticScene::default(), &assets, 7).expect("scene generates")
}
