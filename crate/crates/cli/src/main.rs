//! `hograsp`: spherize meshes, generate synthetic scenes, refine grasps,
//! evaluate contact quality and compare evaluations.
//!
//! Exit codes: 0 success, 2 input error, 3 at least one frame did not
//! converge.

mod commands;
mod common;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use common::{CliError, Outcome};

#[derive(Debug, Parser)]
#[command(name = "hograsp", version, about = "Hand-object grasp refinement and contact evaluation")]
struct Cli {
    /// Seed for synthetic scenes (frame i uses seed + i).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Frame-level worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pack a watertight mesh with inscribed spheres.
    Spherize(SpherizeArgs),
    /// Write a synthetic frame directory.
    Synth(SynthArgs),
    /// Refine grasps for a synthetic scene or a frame directory.
    Refine(RefineArgs),
    /// Contact maps, penetration and fingertip accuracy for refined poses.
    Evaluate(EvaluateArgs),
    /// Side-by-side report of two evaluation directories.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct SpherizeArgs {
    /// OBJ or PLY file, or a bundled mesh name (cube, sphere, cylinder, box).
    pub mesh: String,
    /// Voxel edge length (mm).
    #[arg(long, default_value_t = hograsp::spherize::DEFAULT_VOXEL_SIZE)]
    pub voxel: f64,
    /// Fraction of the interior the spheres must cover.
    #[arg(long, default_value_t = hograsp::spherize::DEFAULT_COVERAGE)]
    pub coverage: f64,
    #[arg(long, default_value_t = hograsp::spherize::DEFAULT_MAX_SPHERES)]
    pub max_spheres: usize,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene config (`key = value` lines).
    #[arg(long)]
    pub scene: PathBuf,
    /// Number of frames; overrides the config's `frames`.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
#[group(id = "input", required = true, multiple = false)]
pub struct RefineInput {
    /// Synthetic scene config; frames are generated in memory.
    #[arg(long, group = "input")]
    pub scene: Option<PathBuf>,
    /// Frame directory written by `synth` or by hand.
    #[arg(long, group = "input")]
    pub frames: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[command(flatten)]
    pub input: RefineInput,
    /// Energy/optimizer config; defaults apply to missing keys.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Hand model file (`default` for the bundled model).
    #[arg(long, default_value = "default")]
    pub hand: String,
    /// Frame count for `--scene`; overrides the config's `frames`.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Refine output directory (reads `poses.txt`) or a pose file.
    #[arg(long)]
    pub poses: PathBuf,
    /// Hand model file (`default` for the bundled model).
    #[arg(long, default_value = "default")]
    pub hand: String,
    /// Object mesh file or bundled mesh name.
    #[arg(long)]
    pub object: String,
    /// Fingertip annotations CSV (`frame,finger,x,y,z`).
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Contact threshold (mm).
    #[arg(long, default_value_t = hograsp::contact::DEFAULT_CONTACT_THRESHOLD)]
    pub threshold: f64,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub eval_a: PathBuf,
    pub eval_b: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    let seed = cli.seed;
    let job = move || match cli.command {
        Command::Spherize(a) => commands::spherize(&a),
        Command::Synth(a) => commands::synth(&a, seed),
        Command::Refine(a) => commands::refine(&a, seed),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Compare(a) => commands::compare(&a),
    };
    match cli.jobs {
        Some(0) => Err(CliError::input("--jobs must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| CliError::input(e.to_string()))?.install(job),
        None => job(),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
