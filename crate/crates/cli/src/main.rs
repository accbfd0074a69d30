//! `ecm`: scene ingestion, correspondence experiments and reports.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::CliError;

#[derive(Parser)]
#[command(name = "ecm", version, about = "Depth-anchored correspondence, overlap matching and condition injection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct SceneArgs {
    /// Scene JSON file, or `synthetic` for the built-in two-frame rig scene.
    #[arg(long, default_value = "synthetic")]
    pub scene: String,
}

#[derive(Args, Clone)]
pub struct LatentArgs {
    /// Latent grid `HxW`.
    #[arg(long, default_value = "28x50", value_parser = commands::parse_grid)]
    pub grid: (usize, usize),
    /// Depth anchors `DMIN:DMAX:D` (linear-increasing spacing).
    #[arg(long, default_value = "1:60:10", value_parser = commands::parse_anchors)]
    pub anchors: (f64, f64, usize),
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Chrono,
    Reverse,
    Stride,
    Custom,
}

#[derive(Subcommand)]
enum Command {
    /// Rank candidate views by overlap with a query view; CSV rows
    /// `target_view,frame,fraction,hits,total`.
    Overlap {
        #[command(flatten)]
        scene: SceneArgs,
        /// Frame of the query view.
        #[arg(long, default_value_t = 1)]
        frame: i64,
        #[arg(long, default_value = "front")]
        query_view: String,
        /// Candidate views `ID` (same frame as the query) or `ID@FRAME`.
        /// Defaults to every other camera at the query frame.
        #[arg(long, value_delimiter = ',')]
        candidates: Vec<String>,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[command(flatten)]
        latent: LatentArgs,
        /// Output CSV path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check correspondence fields against ray-cast ground truth; JSON report.
    Verify {
        #[command(flatten)]
        scene: SceneArgs,
        /// Pairs `QUERY@FRAME:TARGET@FRAME`.
        #[arg(long, value_delimiter = ',', default_value = "front@1:front@1,front@1:front@0,front@1:back@0")]
        pairs: Vec<String>,
        #[command(flatten)]
        latent: LatentArgs,
        /// Per-channel color tolerance for a match.
        #[arg(long, default_value_t = 0.05)]
        threshold: f64,
        /// Checker cell edge in meters.
        #[arg(long, default_value_t = 2.0)]
        checker: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Training frame plan, or an inference schedule when `--mode` is given; JSON.
    Sample {
        #[arg(long, default_value_t = 12)]
        window_len: usize,
        #[arg(long, default_value_t = 0)]
        window_start: i64,
        #[arg(long, default_value_t = 3)]
        n_context: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Frames in the generated sequence (schedules only); defaults to the window length.
        #[arg(long)]
        total: Option<usize>,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long, default_value_t = 3)]
        n_hist: usize,
        /// Reference frames for `--mode custom`.
        #[arg(long, value_delimiter = ',')]
        references: Vec<i64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Scatter box (and optionally map) conditions of one frame onto a latent tensor.
    ///
    /// Parameters are drawn from `--seed`: class vectors from `seed`, the box
    /// encoder from `seed + 1`, the keypoint head from `seed + 2` and the map
    /// encoder from `seed + 3`. The embedding width equals the latent channels.
    Inject {
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long, default_value_t = 1)]
        frame: i64,
        #[arg(long, default_value = "front")]
        view: String,
        /// Input latent, `[C, H, W]` tensor file.
        #[arg(long)]
        latent_in: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 9)]
        n_fixed: usize,
        #[arg(long, default_value_t = 0)]
        n_learned: usize,
        /// Inject map elements too.
        #[arg(long)]
        maps: bool,
        /// Add appearance gathered from other frames' feature tensors of the same track.
        #[arg(long)]
        identity: bool,
    },
    /// Render a view of the scene; PPM image and optional depth tensor.
    Render {
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long, default_value_t = 1)]
        frame: i64,
        #[arg(long, default_value = "front")]
        view: String,
        /// Render grid `HxW`.
        #[arg(long, default_value = "224x400", value_parser = commands::parse_grid)]
        grid: (usize, usize),
        #[arg(long, default_value_t = 2.0)]
        checker: f64,
        #[arg(long)]
        out: PathBuf,
        /// `[H, W]` camera depth tensor, `+inf` for sky.
        #[arg(long)]
        depth_out: Option<PathBuf>,
    },
    /// Write the correspondence field of a view pair as a `[H, W, D, 3]` tensor of `(u, v, valid)`.
    Field {
        #[command(flatten)]
        scene: SceneArgs,
        /// `ID@FRAME`.
        #[arg(long, default_value = "front@1")]
        query: String,
        /// `ID@FRAME`.
        #[arg(long, default_value = "front@0")]
        target: String,
        #[command(flatten)]
        latent: LatentArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the built-in synthetic scene as JSON.
    MakeScene {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("ECM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("ECM_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Other(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Overlap { scene, frame, query_view, candidates, k, latent, out } => {
            commands::overlap(&scene, frame, &query_view, &candidates, k, &latent, out.as_deref())
        }
        Command::Verify { scene, pairs, latent, threshold, checker, out } => {
            commands::verify(&scene, &pairs, &latent, threshold, checker, out.as_deref())
        }
        Command::Sample { window_len, window_start, n_context, seed, mode, total, stride, n_hist, references, out } => {
            let total = total.unwrap_or(window_len);
            commands::sample(window_start, window_len, n_context, seed, mode, total, stride, n_hist, &references, out.as_deref())
        }
        Command::Inject { scene, frame, view, latent_in, out, seed, n_fixed, n_learned, maps, identity } => {
            let opts = commands::InjectOptions { seed, n_fixed, n_learned, maps, identity };
            commands::inject(&scene, frame, &view, &latent_in, &out, &opts)
        }
        Command::Render { scene, frame, view, grid, checker, out, depth_out } => {
            commands::render(&scene, frame, &view, grid, checker, &out, depth_out.as_deref())
        }
        Command::Field { scene, query, target, latent, out } => commands::field(&scene, &query, &target, &latent, &out),
        Command::MakeScene { out } => commands::make_scene(out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ecm: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
