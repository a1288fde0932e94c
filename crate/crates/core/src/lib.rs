//! Hand-object grasp refinement and grasp-quality auditing.
//!
//! The crate is organized by pipeline stage:
//!
//! - [`hand_model`]: articulated hand with anatomically aligned joint axes,
//!   forward kinematics, skinning, and angle-limit penalties.
//! - [`spherize`]: inner-volume sphere sets for collision energies.
//! - [`render`]: z-buffered label/depth rasterization.
//! - [`energy`]: silhouette, sphere-repulsion, limit, and keypoint terms.
//! - [`optimize`]: gradient descent with backtracking over the packed pose.
//! - [`contact`]: contact maps, penetration statistics, fingertip accuracy.
//! - [`synth`]: seeded synthetic scenes for end-to-end checks.

// Negated comparisons are how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assets;
pub mod config;
pub mod contact;
pub mod dataset;
pub mod energy;
pub mod geometry;
pub mod hand_model;
pub mod mesh_io;
pub mod optimize;
pub mod pgm;
pub mod render;
pub mod spherize;
pub mod synth;

pub use geometry::{TriMesh, Vec3};
pub use hand_model::{HandModel, HandPose, ObjectPose};
pub use optimize::GraspState;
