//! The `collab-deblur` command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime or data errors.
//! Every file is written atomically (temp file + rename).

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::Error;
use crate::imaging::Boundary;
use crate::nn::PoolingKind;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "collab-deblur", version, about = "Collaborative blind deblurring toolkit")]
pub struct Cli {
    /// Cap on worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a degradation stack (or quadrant kernels from a kernel grid).
    Synth(SynthArgs),
    /// Estimate a kernel from the sharp/blurry pairs of a stack.
    Estimate(EstimateArgs),
    /// Kernel quality versus number of collaborating pairs.
    Sweep(SweepArgs),
    /// Cut an image into patches.
    Tile(TileArgs),
    /// Blend patches back into an image.
    Stitch(StitchArgs),
    /// Train a model on synthetic Gaussian-blur stacks.
    Train(TrainArgs),
    /// PSNR table of a checkpoint per blur level.
    Eval(EvalArgs),
    /// Finite-difference check of every differentiable operation.
    Gradcheck(GradcheckArgs),
    /// Print version and build information.
    Version,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BlurKind {
    Gaussian,
    Motion,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long, visible_alias = "out-dir")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Images in the stack.
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    /// Side of the generated dead-leaves scenes.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    /// Use the first `n` images of this directory instead of generated scenes.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = BlurKind::Gaussian)]
    pub blur: BlurKind,
    /// Gaussian axes are drawn uniformly from `[sigma-min, sigma-max]`.
    #[arg(long, default_value_t = 0.3)]
    pub sigma_min: f64,
    #[arg(long, default_value_t = 4.0)]
    pub sigma_max: f64,
    /// Noise level is drawn uniformly from `[noise-min, noise-max]`.
    #[arg(long, default_value_t = 0.5 / 255.0)]
    pub noise_min: f64,
    #[arg(long, default_value_t = 2.0 / 255.0)]
    pub noise_max: f64,
    /// Support of motion kernels (odd, >= 5).
    #[arg(long, default_value_t = 15)]
    pub motion_size: usize,
    #[arg(long, default_value_t = Boundary::Circular)]
    pub boundary: Boundary,
    /// Kernel-grid manifest; writes the four quadrant kernels at `--location`.
    #[arg(long, requires = "location")]
    pub grid: Option<PathBuf>,
    /// `row,col` in the top-left quadrant of the grid.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub location: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Directory written by `synth`.
    #[arg(long)]
    pub stack: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
    /// Kernel support (default: that of the stack's true kernel, else 15).
    #[arg(long)]
    pub support: Option<usize>,
    /// Use only the first `count` pairs.
    #[arg(long)]
    pub count: Option<usize>,
    /// Reference kernel for KSIM (default: the stack's `kernel.txt`).
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Sharp image pool (default: generated dead-leaves scenes).
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// Directory of kernel files (default: generated motion kernels).
    #[arg(long)]
    pub kernels: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 4, 8, 16, 32, 64])]
    pub ns: Vec<usize>,
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
    /// Number of pool shuffles; shuffle `i` uses seed `seed + i`.
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Generated pool: image count, side and channels.
    #[arg(long, default_value_t = 64)]
    pub pool_size: usize,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    /// Generated kernels: count and support.
    #[arg(long, default_value_t = 4)]
    pub kernel_count: usize,
    #[arg(long, default_value_t = 19)]
    pub kernel_size: usize,
    #[arg(long, default_value_t = Boundary::Circular)]
    pub boundary: Boundary,
}

#[derive(Debug, Args)]
pub struct TileArgs {
    /// Image file (`.png` or float text).
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub patch: usize,
    #[arg(long, default_value_t = 0.25)]
    pub overlap: f64,
    /// Quadrant mode: top-left corner `row,col` of the first patch.
    #[arg(long, value_delimiter = ',')]
    pub location: Option<Vec<usize>>,
    /// Quadrant mode: optical center `row,col` (default: image center).
    #[arg(long, value_delimiter = ',')]
    pub center: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct StitchArgs {
    /// Directory written by `tile`.
    #[arg(long)]
    pub input: PathBuf,
    /// Output image file.
    #[arg(long)]
    pub out: PathBuf,
    /// Output size (default: bounding box of the placements).
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Output directory for `config.txt`, `metrics.csv` and `checkpoint.bin`.
    #[arg(long)]
    pub out: PathBuf,
    /// Run file with model and training keys; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sharp images (default: generated dead-leaves scenes).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub stack_n: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub pooling: Option<PoolingKind>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    #[arg(long)]
    pub width_divisor: Option<usize>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub val_every: Option<usize>,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 3.0, 4.0])]
    pub sigmas: Vec<f64>,
    #[arg(long, default_value_t = 0.5 / 255.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 32)]
    pub n_images: usize,
    /// Images sharing one blur (default: 8, or the model's stack size if 8 is not a multiple of it).
    #[arg(long)]
    pub stack_n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub patch: usize,
    /// Sharp test images (default: generated dead-leaves scenes).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Adds a case with a deliberately wrong backward rule.
    #[arg(long, hide = true)]
    pub corrupt: bool,
}

/// Failure of a subcommand, mapped to an exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

pub(crate) type CliResult<T = ()> = std::result::Result<T, CliError>;

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be positive");
            return EXIT_USAGE;
        }
        // Fails only if the global pool already exists (e.g. repeated in-process calls).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match commands::run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
