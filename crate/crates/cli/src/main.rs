use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use snowseg_cli::commands::{cmd_bench, cmd_eval, cmd_predict, cmd_train};
use snowseg_cli::Flags;

/// FCN-8 semantic segmentation: train, evaluate, predict and time models.
#[derive(Parser)]
#[command(name = "snowseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file; writes model.bin and train_log.csv into --out.
    Train(Common),
    /// Score a model on a manifest; writes an IoU report CSV to --out and a JSON copy beside it.
    Eval(Common),
    /// Write a colourised mask for one image.
    Predict(Common),
    /// Time prediction over a manifest.
    Bench(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    image: Option<PathBuf>,
    /// Class table (id<TAB>name); defaults to the built-in 20 classes.
    #[arg(long)]
    classes: Option<PathBuf>,
    /// Colour table (id<TAB>r<TAB>g<TAB>b); defaults to the built-in palette.
    #[arg(long)]
    palette: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Batch/epoch regime: bs17e70, bs2e70 or bs1e7.
    #[arg(long)]
    preset: Option<String>,
    /// Evaluate the ground truth against itself instead of a model.
    #[arg(long)]
    oracle: bool,
    /// Also write the class-id raster as <stem>_raw.png.
    #[arg(long)]
    raw: bool,
}

impl From<Common> for Flags {
    fn from(c: Common) -> Self {
        Flags {
            config: c.config,
            model: c.model,
            manifest: c.manifest,
            image: c.image,
            classes: c.classes,
            palette: c.palette,
            out: c.out,
            seed: c.seed,
            preset: c.preset,
            oracle: c.oracle,
            raw: c.raw,
        }
    }
}

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("SNOWSEG_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| format!("SNOWSEG_THREADS='{v}' is not a thread count"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Train(c) => cmd_train(&c.into()),
        Command::Eval(c) => cmd_eval(&c.into()),
        Command::Predict(c) => cmd_predict(&c.into()),
        Command::Bench(c) => cmd_bench(&c.into()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
