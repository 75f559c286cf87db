mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use modify::latent::DEFAULT_LAYER_DIM;
use modify::stage1::{DEFAULT_BATCH, TOY_TOTAL};
use modify::stage2::TEST_TIME_STEPS;

/// A bad flag, flag value or config entry. Exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "modify", version, about = "Style encapsulation and face stylization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a style package from a folder of style images.
    Encapsulate(EncapsulateArgs),
    /// Adapt a package's encoder to a source domain, offline or online.
    StylizeTrain(StylizeTrainArgs),
    /// Stylize one image with test-time encoder adaptation.
    Stylize(StylizeArgs),
    /// Render a grid of outputs for several noise seeds.
    Sample(SampleArgs),
    /// Run the swap or fusion-index ablation.
    Ablate(AblateArgs),
    /// Frechet distance between source outputs and a reference set.
    Eval(EvalArgs),
    /// Write a folder of synthetic faces.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    #[arg(long, env = "MODIFY_SEED", default_value_t = 0)]
    pub seed: u64,
    /// File of `key=value` lines naming long flags; flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Progress line interval in iterations.
    #[arg(long, default_value_t = 10)]
    pub log_every: u64,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    Default,
    Tiny,
}

#[derive(Args, Debug)]
pub struct EncapsulateArgs {
    #[arg(long)]
    pub style_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    /// Style rows of the latent code; defaults to round(L/3).
    #[arg(long)]
    pub xi: Option<usize>,
    #[arg(long, default_value_t = TOY_TOTAL)]
    pub iterations: u64,
    /// First phase-2 iteration; defaults to 3/4 of the iterations.
    #[arg(long)]
    pub boundary: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_BATCH)]
    pub batch_size: usize,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_LAYER_DIM)]
    pub layer_dim: usize,
    #[arg(long, value_enum, default_value_t = Arch::Default)]
    pub arch: Arch,
    /// Leave the critic out of the package.
    #[arg(long)]
    pub no_critic: bool,
    /// Keep a resumable checkpoint here during training.
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct StylizeTrainArgs {
    #[arg(long)]
    pub pkg: PathBuf,
    #[arg(long)]
    pub source_dir: PathBuf,
    /// offline or online.
    #[arg(long, default_value = "offline")]
    pub mode: String,
    #[arg(long)]
    pub steps: Option<u64>,
    /// Ignored in online mode, which always uses batch 1.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct StylizeArgs {
    #[arg(long)]
    pub pkg: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = TEST_TIME_STEPS)]
    pub steps: u64,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Output PNG.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub pkg: PathBuf,
    /// Image files or folders; one grid row per image.
    #[arg(long, num_args = 1.., required = true)]
    pub input: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub noise_seeds: Vec<u64>,
    #[arg(long)]
    pub out_grid: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    Swap,
    Xi,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub which: Ablation,
    /// Synthetic painterly faces when omitted.
    #[arg(long)]
    pub style_dir: Option<PathBuf>,
    /// Synthetic photo faces when omitted.
    #[arg(long)]
    pub source_dir: Option<PathBuf>,
    /// Images per synthetic set.
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    #[arg(long, default_value_t = 16)]
    pub resolution: usize,
    #[arg(long, default_value_t = TOY_TOTAL)]
    pub iterations: u64,
    #[arg(long, default_value_t = DEFAULT_BATCH)]
    pub batch_size: usize,
    /// Fusion indices to compare; defaults to 1, round(L/3) and L-1.
    #[arg(long, value_delimiter = ',')]
    pub xi_list: Vec<usize>,
    /// Layer count the --xi-list values refer to; each is rescaled to this
    /// model's layer count.
    #[arg(long)]
    pub xi_reference_layers: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_LAYER_DIM)]
    pub layer_dim: usize,
    #[arg(long, value_enum, default_value_t = Arch::Default)]
    pub arch: Arch,
    /// Report directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub reference_dir: PathBuf,
    #[arg(long)]
    pub source_dir: PathBuf,
    /// Stylize the source set with this package first.
    #[arg(long)]
    pub pkg: Option<PathBuf>,
    /// Required without --pkg.
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// photo, painterly or sketch.
    #[arg(long)]
    pub profile: String,
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match e.downcast_ref::<modify::Error>() {
        Some(modify::Error::Config(_) | modify::Error::InvalidLatent(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    let args = match config::merge(&Cli::command(), std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    let result = match cli.command {
        Command::Encapsulate(a) => commands::encapsulate(&a),
        Command::StylizeTrain(a) => commands::stylize_train(&a),
        Command::Stylize(a) => commands::stylize(&a),
        Command::Sample(a) => commands::sample(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Synth(a) => commands::synth(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
