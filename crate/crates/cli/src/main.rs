use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;

#[derive(Debug, Parser)]
#[command(name = "fedgmi", version, about = "Federated generative mixture experiments")]
struct Cli {
    /// Worker threads for data-parallel sections. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fedgmi,
    Ifca,
    Fedavg,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (TOML), or a manifest.json from an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset cache written by gen-data; generated from the config when absent.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a full federation and write metrics, checkpoints and divisions.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Method::Fedgmi)]
        method: Method,
        #[arg(long)]
        out: PathBuf,
        /// Replace an existing output directory.
        #[arg(long)]
        force: bool,
    },
    /// Materialize the client datasets described by the config.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Train one local VAE per client and store them.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// One division pass of every client under uniform priors.
    Divide {
        #[command(flatten)]
        common: Common,
        /// Directory holding vae_0.bin, vae_1.bin, ...
        #[arg(long)]
        vaes: PathBuf,
        /// Where to write the division JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate stored server checkpoints.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory holding vae_{j}.bin and clf_{j}.bin.
        #[arg(long)]
        checkpoints: PathBuf,
        /// Directory for cross_eval.csv, proportions.csv and eval.json.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Print the pairwise divergence matrix of stored VAEs.
    KlMatrix {
        #[arg(long)]
        vaes: PathBuf,
        /// Supplies the sample count and seed when given.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Monte Carlo samples; overrides the config.
        #[arg(long)]
        samples: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FEDGMI_LOG", "error")).init();
    let cli = Cli::parse();
    if cli.threads == 0 {
        eprintln!("error: --threads must be >= 1");
        return ExitCode::from(2);
    }
    let threads = cli.threads;
    let result = fedgmi::exec::with_threads(threads, move || dispatch(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Run {
            common,
            method,
            out,
            force,
        } => commands::run(&common, method, &out, force),
        Command::GenData { common, out, force } => commands::gen_data(&common, &out, force),
        Command::Pretrain { common, out, force } => commands::pretrain(&common, &out, force),
        Command::Divide { common, vaes, out } => commands::divide(&common, &vaes, out.as_deref()),
        Command::Eval {
            common,
            checkpoints,
            out,
            force,
        } => commands::eval(&common, &checkpoints, out.as_deref(), force),
        Command::KlMatrix {
            vaes,
            config,
            seed,
            samples,
        } => commands::kl_matrix_cmd(&vaes, config.as_deref(), seed, samples),
    }
}
