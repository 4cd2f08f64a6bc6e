//! `evprofile`: ingest, train, simulate, evaluate, ablate and tune the EV
//! charging profile forecasters from one JSON config.

mod commands;
mod fetch;
mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use run::Failure;

#[derive(Debug, Parser)]
#[command(name = "evprofile", version, about = "EV fast-charging profile forecasting")]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load the sessions file and report counts and rejections.
    Ingest,
    /// Download hourly temperatures into a weather CSV.
    FetchWeather {
        #[arg(long, default_value_t = 46.518)]
        latitude: f64,
        #[arg(long, default_value_t = 6.566)]
        longitude: f64,
        /// First day, YYYY-MM-DD.
        #[arg(long)]
        start: String,
        /// Last day, YYYY-MM-DD.
        #[arg(long)]
        end: String,
        #[arg(long, default_value = "https://archive-api.open-meteo.com/v1/archive")]
        url: String,
    },
    /// Train the forest, capacity and SoC mixtures and the history matrix.
    Train,
    /// Replay one test session minute by minute.
    SimulateSession {
        #[arg(long)]
        session_id: String,
    },
    /// Forecast accuracy per iteration, capacity densities, hourly SoC errors.
    Evaluate,
    /// The eight known/estimated information scenarios.
    Ablate,
    /// Random search over forest hyperparameters.
    Tune {
        /// Overrides the configured number of trials.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Write a deterministic synthetic fleet and a config pointing at it.
    GenSynth {
        #[arg(long, default_value_t = 600)]
        sessions: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let ctx = run::Context::load(cli.config.as_deref(), cli.seed, cli.out)?;
    match cli.command {
        Command::Ingest => commands::ingest(&ctx),
        Command::FetchWeather {
            latitude,
            longitude,
            start,
            end,
            url,
        } => commands::fetch_weather(&ctx, &url, latitude, longitude, &start, &end),
        Command::Train => commands::train(&ctx),
        Command::SimulateSession { session_id } => commands::simulate(&ctx, &session_id),
        Command::Evaluate => commands::evaluate(&ctx),
        Command::Ablate => commands::ablate(&ctx),
        Command::Tune { trials } => commands::tune(&ctx, trials),
        Command::GenSynth { sessions } => commands::gen_synth(&ctx, sessions),
    }
}
