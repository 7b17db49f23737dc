use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use liftkit::cli;

#[derive(Parser)]
#[command(name = "liftkit", version, about = "2D-to-3D pose lifting toolkit")]
struct Cli {
    /// Emit machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file and a pose-sequence file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Pose-sequence data file (overrides the config's "data").
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory (overrides the config's "out_dir").
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint against data with 3D ground truth.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Lift 2D sequences to 3D poses.
    Lift {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the attention mask: --causal true|false.
        #[arg(long)]
        causal: Option<bool>,
    },
    /// Print exact parameter counts; --paper-table audits the reference grid.
    CountParams {
        #[arg(long, default_value_t = 512)]
        hidden_dim: usize,
        #[arg(long, default_value_t = 8)]
        heads: usize,
        #[arg(long, default_value_t = 6)]
        blocks: usize,
        #[arg(long, default_value_t = 2048)]
        ffn_dim: usize,
        #[arg(long, default_value_t = 17)]
        joints: usize,
        /// Share attention parameters across blocks.
        #[arg(long)]
        share: bool,
        /// Check every reference configuration and print PASS/FAIL.
        #[arg(long)]
        paper_table: bool,
    },
    /// Generate a deterministic synthetic pose-sequence file.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Defaults to LIFTKIT_SEED, then 0.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 200)]
        frames: usize,
        #[arg(long, default_value = "h36m_17")]
        skeleton: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train { config, data, out } => {
            cli::cmd_train(config, data.as_deref(), out.as_deref(), cli.json)
        }
        Command::Eval { checkpoint, data } => cli::cmd_eval(checkpoint, data, cli.json),
        Command::Lift { checkpoint, data, out, causal } => {
            cli::cmd_lift(checkpoint, data, out, *causal, cli.json)
        }
        Command::CountParams {
            hidden_dim,
            heads,
            blocks,
            ffn_dim,
            joints,
            share,
            paper_table,
        } => cli::cmd_count_params(
            *hidden_dim,
            *heads,
            *blocks,
            *ffn_dim,
            *joints,
            *share,
            *paper_table,
            cli.json,
        ),
        Command::Synth { out, seed, frames, skeleton } => {
            cli::cmd_synth(*seed, *frames, skeleton, out, cli.json)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
