//! `kerple`: verify kernels, train and evaluate desk-scale models, and
//! analyze trained kernels.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kerple::Variant;

#[derive(Debug, Parser)]
#[command(name = "kerple", version, about = "Kernelized relative positional embeddings at desk scale")]
pub struct Cli {
    /// Directory for every emitted file. Overrides KERPLE_OUT_DIR.
    #[arg(long, global = true, env = "KERPLE_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,

    /// Worker threads for chunk scoring. Overrides KERPLE_THREADS; defaults
    /// to the number of cores.
    #[arg(long, global = true, env = "KERPLE_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Numerically check CPD, the PSD-making shift and weight positive
    /// definiteness; writes verify.csv and exits 1 if any check fails.
    Verify(VerifyArgs),
    /// Train one model and write a checkpoint plus its loss trace.
    Train(TrainArgs),
    /// Evaluate checkpoints at several lengths; writes report.csv,
    /// positions.csv, ttest.csv, summary.csv and report.json.
    Eval(EvalArgs),
    /// Effective-length analysis; writes effective_lengths.csv and
    /// effective_curve.csv.
    Analyze(AnalyzeArgs),
    /// Dump bias values against distance; writes kernel_curves.csv.
    Curves(CurvesArgs),
}

/// Where kernel specs come from. Exactly one of checkpoint, catalog or
/// variant list is used, in that order of preference.
#[derive(Debug, Args)]
pub struct SpecSource {
    /// Read the kernels of a trained checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,

    /// Read kernels from a TOML catalog file.
    #[arg(long)]
    pub catalog: Option<PathBuf>,

    /// Kernel variants (comma separated), each at its initial parameters
    /// unless --params is given.
    #[arg(long, value_delimiter = ',')]
    pub variant: Vec<Variant>,

    /// Explicit parameters for a single --variant (comma separated).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub params: Vec<f64>,

    /// Number of heads per variant when using initial parameters.
    #[arg(long, default_value_t = 1)]
    pub heads: usize,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub source: SpecSource,

    /// Grid size N; the grid is 0, 1, ..., N-1.
    #[arg(long, default_value_t = 32)]
    pub points: usize,

    /// Random coefficient vectors per quadratic-form check.
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,

    /// Seed of the coefficient sampler.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML config file; keys present in it override the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Training text, tokenized byte by byte. Defaults to the bundled
    /// synthetic training corpus.
    #[arg(long)]
    pub corpus: Option<PathBuf>,

    /// Checkpoint path. Defaults to <out-dir>/<variant>-seed<seed>.ckpt.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Loss trace CSV. Defaults to the checkpoint path with .loss.csv.
    #[arg(long)]
    pub trace: Option<PathBuf>,

    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Training sequence length L.
    #[arg(long)]
    pub train_len: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub head_dim: Option<usize>,
    #[arg(long)]
    pub mlp_hidden: Option<usize>,
    /// Log the training loss every this many steps.
    #[arg(long)]
    pub log_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint files; variant and seed are read from each.
    #[arg(long = "checkpoint", required = true, num_args = 1..)]
    pub checkpoints: Vec<PathBuf>,

    /// Test text, tokenized byte by byte. Defaults to the bundled synthetic
    /// test corpus.
    #[arg(long)]
    pub corpus: Option<PathBuf>,

    /// Evaluation lengths (comma separated). Defaults to L, 2L and 4L of
    /// the checkpoints' training length.
    #[arg(long, value_delimiter = ',')]
    pub lengths: Vec<usize>,

    /// Seeds to include (comma separated). Defaults to all seeds found.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,

    /// Reference variant of the paired t-tests.
    #[arg(long, default_value = "log")]
    pub reference: Variant,

    /// Significance level of the paired t-tests.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,

    /// Windowed-attention baselines of the reference variant (comma
    /// separated window sizes).
    #[arg(long, value_delimiter = ',')]
    pub windows: Vec<usize>,

    /// Also write positions_<L>.svg charts.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub source: SpecSource,

    /// Use the fixed ALiBi slopes of this many heads.
    #[arg(long)]
    pub alibi_heads: Option<usize>,

    /// A head's effective length is the first distance with bias strictly
    /// below this value.
    #[arg(long, default_value_t = -2.0, allow_hyphen_values = true)]
    pub threshold: f64,

    /// Largest distance of the grid 0..=max.
    #[arg(long, default_value_t = 20_480)]
    pub max_distance: usize,

    /// Also write effective_curve.svg.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct CurvesArgs {
    #[command(flatten)]
    pub source: SpecSource,

    /// Largest distance to dump.
    #[arg(long, default_value_t = 512)]
    pub max_distance: usize,

    /// Also write kernel_curves.svg.
    #[arg(long)]
    pub svg: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool is configured once");
    }
    match commands::run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
