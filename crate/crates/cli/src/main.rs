use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dptraverse_cli::{replay, run, CliError, Command, Options, RunConfig};

#[derive(Parser)]
#[command(name = "dptraverse", version, about = "Variance-scaled reverse diffusion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for batch sampling.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Record wall-clock times in training logs.
    #[arg(long, global = true)]
    timing: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a score network.
    Train(ConfigArg),
    /// Draw samples at one lambda.
    Sample(ConfigArg),
    /// Distortion-perception sweep over lambda.
    Sweep(ConfigArg),
    /// Oracle moment checks and Monte Carlo endpoints.
    Oracle(ConfigArg),
    /// Sweep the guidance weight at fixed lambda.
    ZetaSweep(ConfigArg),
    /// Record reverse trajectories.
    Trajectories(ConfigArg),
    /// Tabulate the optimal distortion-perception curve.
    Curve(ConfigArg),
    /// Rerun the command recorded in an output file.
    Replay {
        file: PathBuf,
    },
}

#[derive(clap::Args)]
struct ConfigArg {
    /// TOML config, or an output file with an embedded config.
    #[arg(long)]
    config: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("config error: --threads: {e}");
            return ExitCode::from(2);
        }
    }
    let opts = Options {
        out: cli.out,
        seed: cli.seed,
        timing: cli.timing,
    };
    let result = match cli.command {
        Cmd::Replay { file } => replay(&file, &opts),
        cmd => {
            let (c, arg) = match cmd {
                Cmd::Train(a) => (Command::Train, a),
                Cmd::Sample(a) => (Command::Sample, a),
                Cmd::Sweep(a) => (Command::Sweep, a),
                Cmd::Oracle(a) => (Command::Oracle, a),
                Cmd::ZetaSweep(a) => (Command::ZetaSweep, a),
                Cmd::Trajectories(a) => (Command::Trajectories, a),
                Cmd::Curve(a) => (Command::Curve, a),
                Cmd::Replay { .. } => unreachable!(),
            };
            RunConfig::load(&arg.config).and_then(|cfg| run(c, cfg, &opts))
        }
    };
    match result {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &CliError) -> u8 {
    e.exit_code() as u8
}
