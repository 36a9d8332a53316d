use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dmssca_cli::{check_command, preset_command, run_command, RunOverrides};

#[derive(Parser)]
#[command(
    name = "dmssca",
    version,
    about = "Decentralized momentum-based stochastic SCA experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the replicates described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Base seed; replicate r uses seed + r.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory, overriding `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Run a built-in figure experiment (fig1, fig2, fig3, fig4).
    Preset {
        #[arg(long)]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report mixing, problem constants, and step-size admissibility for a config.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            out,
            replicates,
        } => run_command(&config, &RunOverrides { seed, out, replicates }).map(|s| {
            println!(
                "{} replicates, final gap {:.6e} ± {:.2e}, {}",
                s.replicates, s.final_gap.mean, s.final_gap.stderr, s.admissibility.verdict
            );
        }),
        Command::Preset { name, out } => preset_command(&name, &out).map(|paths| {
            for p in paths {
                println!("{}", p.display());
            }
        }),
        Command::Check { config } => check_command(&config).map(|report| print!("{report}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
