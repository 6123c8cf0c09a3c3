use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Low-count emission tomography lab: simulate paired acquisitions, run EM
/// baselines, train and apply the unrolled spectral network, and analyze
/// amplitude/phase degradations.
#[derive(Parser, Debug)]
#[command(name = "fourierpet", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Configuration shared by every command that touches the pipeline.
/// Precedence: built-in defaults < `--config` file < `--set` < `--seed`.
#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// `key = value` run configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set epochs=5` (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Override the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate phantoms with paired low-/full-count sinograms and manifests
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Number of pairs (defaults to n_train or n_test of the config)
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, value_enum, default_value_t = Split::Train)]
        split: Split,
    },
    /// Reconstruct one pair from its manifest
    Reconstruct {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        /// Trained network (required for `fourierpet`)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Dose::Low)]
        sinogram: Dose,
        /// Output grid file
        #[arg(long)]
        out: Option<PathBuf>,
        /// 8-bit preview
        #[arg(long)]
        pgm: Option<PathBuf>,
    },
    /// Train the network on every manifest in a directory
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        /// Held-out manifests scored against OSEM after training
        #[arg(long)]
        test_data: Option<PathBuf>,
        /// Checkpoint path
        #[arg(long)]
        out: PathBuf,
        /// Line-delimited JSON step log (default: `<out>.log.jsonl`)
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Spectral analyses and metrics on image grids
    Analyze {
        #[arg(long, value_enum)]
        mode: AnalyzeMode,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        low: Option<PathBuf>,
        #[arg(long)]
        full: Option<PathBuf>,
        /// Image under test (`freq-error`, `metrics`)
        #[arg(long)]
        image: Option<PathBuf>,
        /// Reference image (`freq-error`, `metrics`)
        #[arg(long)]
        reference: Option<PathBuf>,
        /// ROI grid for SUVmax: pixels with value > `roi_min` are inside
        #[arg(long)]
        roi: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        roi_min: f64,
        #[arg(long, default_value_t = 8)]
        bands: usize,
        /// Output grid (`freq-error`)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        pgm: Option<PathBuf>,
        /// Also write the table as line-delimited JSON
        #[arg(long)]
        jsonl: Option<PathBuf>,
    },
    /// Train and score one sweep of variants on a shared split
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        sweep: String,
        /// Output directory for the table and records
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Mlem,
    Osem,
    Fourierpet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Dose {
    Low,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AnalyzeMode {
    Swap,
    Profile,
    FreqError,
    Metrics,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { cfg, out, count, split } => commands::simulate(&cfg, &out, count, split),
        Command::Reconstruct {
            cfg,
            manifest,
            method,
            checkpoint,
            sinogram,
            out,
            pgm,
        } => commands::reconstruct(&cfg, &manifest, method, checkpoint.as_deref(), sinogram, out.as_deref(), pgm.as_deref()),
        Command::Train {
            cfg,
            data,
            test_data,
            out,
            log,
        } => commands::train(&cfg, &data, test_data.as_deref(), &out, log),
        Command::Analyze {
            mode,
            truth,
            low,
            full,
            image,
            reference,
            roi,
            roi_min,
            bands,
            out,
            pgm,
            jsonl,
        } => commands::analyze(commands::AnalyzeArgs {
            mode,
            truth,
            low,
            full,
            image,
            reference,
            roi,
            roi_min,
            bands,
            out,
            pgm,
            jsonl,
        }),
        Command::Ablate { cfg, sweep, out } => commands::ablate(&cfg, &sweep, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("fourierpet: error: {msg}");
            ExitCode::FAILURE
        }
    }
}
