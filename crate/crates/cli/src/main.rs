mod commands;
mod exit;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use exit::Failure;

/// Horizontal federated learning experiments: synthesis, simulated and
/// networked federations, and evaluation.
///
/// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
/// 3 protocol, network or timeout error. Set FEDHORIZON_LOG to error, warn,
/// info or debug for diagnostics on stderr.
#[derive(Parser, Debug)]
#[command(name = "fedhorizon", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic site manifests and feature files from the config's `synth` section.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate one or more scenarios over several seeded runs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated list of scenarios.
        #[arg(long, value_delimiter = ',', required = true)]
        scenario: Vec<Scenario>,
        #[arg(long, default_value_t = 1)]
        runs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Coordinate a networked federation.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// HOST:PORT to listen on.
        #[arg(long)]
        listen: String,
        /// Where to write the training history (JSON).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Where to write the final parameters.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Take part in a networked federation with a local manifest.
    Node {
        #[arg(long)]
        id: String,
        #[arg(long)]
        manifest: PathBuf,
        /// Coordinator HOST:PORT.
        #[arg(long)]
        connect: String,
        /// Feature extractor for image manifests.
        #[arg(long)]
        extractor: Option<String>,
        /// Extractor settings as a JSON object.
        #[arg(long, default_value = "{}")]
        extractor_config: String,
        #[arg(long, default_value_t = 3)]
        attempts: u32,
        /// Wait before the first retry; doubles on each further retry.
        #[arg(long, default_value_t = 250)]
        backoff_ms: u64,
    },
    /// Evaluate saved parameters on a manifest.
    Eval {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Also report control versus pathogenic.
        #[arg(long)]
        binary: bool,
        /// Print JSON instead of tables.
        #[arg(long)]
        json: bool,
        #[arg(long)]
        extractor: Option<String>,
        #[arg(long, default_value = "{}")]
        extractor_config: String,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum Scenario {
    /// Every node trains alone.
    Single,
    /// All nodes' data pooled in one place.
    Central,
    /// In-process federated averaging.
    Fed,
    /// Federated averaging over loopback TCP.
    Net,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FEDHORIZON_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(exit::USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result: Result<(), Failure> = match cli.command {
        Command::Synth { config, out } => commands::synth(&config, &out),
        Command::Run { config, scenario, runs, out } => commands::run(&config, &scenario, runs, &out),
        Command::Serve { config, listen, out, params } => commands::serve(&config, &listen, out.as_deref(), params.as_deref()),
        Command::Node { id, manifest, connect, extractor, extractor_config, attempts, backoff_ms } => {
            commands::node(&id, &manifest, &connect, extractor.as_deref(), &extractor_config, attempts, backoff_ms)
        }
        Command::Eval { params, manifest, binary, json, extractor, extractor_config } => {
            commands::eval(&params, &manifest, binary, json, extractor.as_deref(), &extractor_config)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
