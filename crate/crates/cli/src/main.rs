//! `higrid` command-line tool.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "higrid", version, about = "Sound source localisation and counting with a spherical microphone array")]
struct Cli {
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Run configuration JSON; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a scene to a multichannel WAV plus a ground-truth sidecar JSON.
    Simulate(SimulateArgs),
    /// Localise and count sources in a recording.
    Localize(LocalizeArgs),
    /// Compare refinement cost against the exhaustive grid.
    Bench(BenchArgs),
    /// Run a batch of simulated trials and score them.
    Eval(EvalArgs),
    /// Write the refined SRPD map of one time-frequency bin.
    Map(MapArgs),
    /// Precompute the cross-density cache.
    CacheBuild(CacheArgs),
}

/// Pipeline settings shared by the analysis commands.
#[derive(Debug, Clone, Args)]
pub struct PipelineFlags {
    /// Array geometry JSON (default: built-in 32-capsule layout).
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    /// Cross-density cache file, created when missing or incompatible.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Seed for the refinement order.
    #[arg(long)]
    pub seed: Option<u64>,
    /// STFT window length, samples.
    #[arg(long)]
    pub win: Option<usize>,
    /// STFT hop, samples.
    #[arg(long)]
    pub hop: Option<usize>,
    /// Lower analysis frequency, Hz.
    #[arg(long)]
    pub f_lo: Option<f64>,
    /// Upper analysis frequency, Hz.
    #[arg(long)]
    pub f_hi: Option<f64>,
    /// Deepest HEALPix level.
    #[arg(long)]
    pub max_level: Option<u8>,
    /// Speed of sound, m/s.
    #[arg(long)]
    pub speed_of_sound: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scene JSON.
    #[arg(long, conflicts_with = "sources")]
    pub scene: Option<PathBuf>,
    /// Generate a random noise-burst scene with this many sources.
    #[arg(long)]
    pub sources: Option<usize>,
    /// Minimum source separation for generated scenes, degrees.
    #[arg(long, default_value_t = 45.0)]
    pub min_sep_deg: f64,
    /// Signal-to-noise ratio, dB.
    #[arg(long)]
    pub snr_db: Option<f64>,
    /// Scene seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Array geometry JSON (default: built-in 32-capsule layout).
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    /// Output WAV; the sidecar is written next to it with a .json extension.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    /// Input WAV, or raw planar float32 (any other extension, needs --fs).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Sample rate of raw input, Hz.
    #[arg(long)]
    pub fs: Option<f64>,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
    /// Output JSON (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// HEALPix levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<u8>>,
    /// Numbers of unit-amplitude waves, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sources: Option<Vec<usize>>,
    /// Numbers of additional random-amplitude waves, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub diffuse: Option<Vec<usize>>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    /// Wave frequency, Hz.
    #[arg(long)]
    pub freq: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also record wall-clock times (output is then not reproducible).
    #[arg(long)]
    pub timing: bool,
    /// Array geometry JSON; only its radius and order are used.
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Output JSON (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a CSV summary.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSON list of scenes; generated scenes are used when absent.
    #[arg(long)]
    pub batch: Option<PathBuf>,
    /// Sources per generated scene.
    #[arg(long)]
    pub sources: Option<usize>,
    /// Number of generated scenes.
    #[arg(long)]
    pub trials: Option<usize>,
    /// SNR of generated scenes, dB.
    #[arg(long)]
    pub snr_db: Option<f64>,
    /// Minimum separation of generated sources, degrees.
    #[arg(long)]
    pub min_sep_deg: Option<f64>,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
    /// Output JSON (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a per-trial CSV summary.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Sample rate of raw input, Hz.
    #[arg(long)]
    pub fs: Option<f64>,
    /// STFT frame index.
    #[arg(long)]
    pub frame: usize,
    /// Frequency, Hz; the nearest bin is used.
    #[arg(long)]
    pub freq: f64,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
    /// Map JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Projected plot data, CSV or JSON by extension (default: next to the map as .csv).
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CacheArgs {
    /// Array geometry JSON; only its order is used.
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    /// Spherical-harmonic order (overrides the geometry).
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long)]
    pub max_level: Option<u8>,
    /// Quadrature depth below each pixel.
    #[arg(long)]
    pub sub_depth: Option<u8>,
    /// Eigen-energy fraction kept.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    let run = || -> Result<(), commands::Failure> {
        let cfg = config::RunConfig::load_opt(cli.config.as_deref())?;
        match &cli.command {
            Command::Simulate(a) => commands::simulate(a, &cfg),
            Command::Localize(a) => commands::localize(a, &cfg),
            Command::Bench(a) => commands::bench(a, &cfg),
            Command::Eval(a) => commands::eval(a, &cfg),
            Command::Map(a) => commands::map(a, &cfg),
            Command::CacheBuild(a) => commands::cache_build(a, &cfg),
        }
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
