use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lumos::cli::{self, CliError};

#[derive(Parser)]
#[command(name = "lumos", version, about = "Gated training, pruning and compact-model extraction")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the gated model described by a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's training seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: the config's output.dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract the compact model from a checkpoint.
    Extract {
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a checkpoint and its compact model on random inputs.
    Verify {
        checkpoint: PathBuf,
        compact: PathBuf,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Metrics, cost reduction and per-feature correlations.
    Report {
        #[arg(long)]
        config: PathBuf,
        checkpoint: PathBuf,
        compact: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Generate a synthetic dataset (sparse16, image or graph).
    Gen {
        kind: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long, default_value_t = 1000)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(args: Args) -> Result<(), CliError> {
    match args.command {
        Command::Train { config, seed, out } => {
            let art = cli::cmd_train(&config, seed, out.as_deref())?;
            if let Some(last) = art.history_data.last() {
                println!(
                    "epoch {} L_A {} open gates {} metric {}",
                    last.epoch,
                    last.accuracy_loss,
                    last.open_gates,
                    last.metric.map(|m| m.to_string()).unwrap_or_else(|| "n/a".into())
                );
            }
            println!("wrote {}, {}, {}", art.checkpoint.display(), art.history.display(), art.masks.display());
        }
        Command::Extract { checkpoint, out } => {
            let ex = cli::cmd_extract(&checkpoint, &out)?;
            println!(
                "kept {} input features, {} parameters; wrote {}",
                ex.compact.input_keep.len(),
                ex.compact.param_count(),
                out.display()
            );
        }
        Command::Verify { checkpoint, compact, tol, samples, seed } => {
            let r = cli::cmd_verify(&checkpoint, &compact, tol, samples, seed)?;
            println!("max abs deviation {:e}, relative {:e} over {} samples: ok", r.max_abs, r.max_rel, r.samples);
        }
        Command::Report { config, checkpoint, compact, json } => {
            let r = cli::cmd_report(&config, &checkpoint, &compact)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&r).expect("reports serialize"));
            } else {
                print!("{}", r.render());
            }
        }
        Command::Gen { kind, seed, n, out } => {
            let d = cli::cmd_gen(&kind, seed, n, &out)?;
            println!("wrote {} samples to {}", d.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LUMOS_LOG", "warn")).init();
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
