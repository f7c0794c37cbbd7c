use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crsae_cli::commands::{
    cmd_eval, cmd_gradcheck, cmd_simulate, cmd_sweep, cmd_train, parse_shapes, Arch, InitSpec,
    DEFAULT_SHAPES,
};

#[derive(Parser)]
#[command(
    name = "crsae",
    version,
    about = "Convolutional dictionary learning with an unrolled FISTA auto-encoder: \
             simulate spike recordings, train, sweep SNR, check gradients, evaluate recovery"
)]
struct Cli {
    /// Worker threads for parallel batches and sweep cells
    /// (falls back to the CRSAE_JOBS environment variable).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset: filters, windows, ground-truth codes, manifest.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the simulation seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train on a simulated dataset and write filters + history CSV.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory produced by `simulate`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "crsae")]
        arch: Arch,
        /// "perturbed", "gaussian", or a path to a filter tensor.
        #[arg(long, default_value = "perturbed")]
        init: String,
        /// Overrides the learning rate from the config.
        #[arg(long)]
        lr: Option<f64>,
        /// Overrides the training seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run simulate+train+eval per (SNR, seed) cell; resumable.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the replayed gradient against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Semicolon-separated C,K,W,T quadruples.
        #[arg(long)]
        shapes: Option<String>,
        /// Negative control: bias the gradient and expect a failure.
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
    /// Recovery report + overlay CSV for a learned bank.
    Eval {
        #[arg(long)]
        learned: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        max_shift: usize,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();

    let jobs = cli.jobs.or_else(|| {
        std::env::var("CRSAE_JOBS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
    });
    if let Some(n) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()?;
    }

    match cli.command {
        Command::Simulate { config, out, seed } => cmd_simulate(&config, &out, seed),
        Command::Train {
            config,
            data,
            out,
            arch,
            init,
            lr,
            seed,
        } => cmd_train(&config, &data, &out, arch, &InitSpec::parse(&init), lr, seed),
        Command::Sweep { config, out } => cmd_sweep(&config, &out),
        Command::Gradcheck {
            seed,
            shapes,
            corrupt_gradient,
        } => {
            let shape_list = match shapes {
                Some(spec) => parse_shapes(&spec)?,
                None => DEFAULT_SHAPES.to_vec(),
            };
            cmd_gradcheck(&shape_list, seed, corrupt_gradient)
        }
        Command::Eval {
            learned,
            truth,
            out,
            max_shift,
        } => cmd_eval(&learned, &truth, &out, max_shift),
    }
}
