use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};

use ectl::cli;

#[derive(Parser)]
#[command(name = "ectl", version, about = "Encrypted networked control simulator")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario with an in-process (or loopback TCP) controller.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Plant node: connect to a controller and drive the loop.
    Plant {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        connect: String,
    },
    /// Controller node: serve one plant over TCP.
    Controller {
        #[arg(long)]
        listen: String,
        /// Seconds to wait for a plant or for its next message.
        #[arg(long, default_value_t = 30)]
        idle_timeout: u64,
    },
    /// Generate a key pair as a JSON document.
    Keygen {
        #[arg(long)]
        bits: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Report whether N clears this scenario's key-size bound.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ECTL_LOG", "warn")).init();
    let args = Args::parse();
    let outcome = match args.command {
        Command::Run { config } => cli::cmd_run(&config).map(drop),
        Command::Plant { config, connect } => cli::cmd_plant(&config, &connect).map(drop),
        Command::Controller { listen, idle_timeout } => cli::cmd_controller(&listen, Duration::from_secs(idle_timeout)).map(drop),
        Command::Keygen { bits, seed, out, config } => cli::cmd_keygen(bits, seed, &out, config.as_deref()).map(drop),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            log::debug!("{e:?}");
            ExitCode::from(match e {
                ectl::Error::Config(_) | ectl::Error::Usage(_) => 2,
                _ => 1,
            })
        }
    }
}
