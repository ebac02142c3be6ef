use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use micro_reynolds::config::{self, Phi2Choice};
use micro_reynolds::pipeline::{self, RunOptions, Stage};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    /// Averaged coefficients on the cell grid.
    Coeffs,
    /// Coefficients, correctors and flow factors.
    Cell,
    /// Everything above plus the macroscopic pressure.
    Solve,
    /// Closed forms against the finite-difference oracle.
    OracleCheck,
    /// `solve` and `oracle-check`.
    Full,
}

impl From<Command> for Stage {
    fn from(c: Command) -> Self {
        match c {
            Command::Coeffs => Stage::Coeffs,
            Command::Cell => Stage::Cell,
            Command::Solve => Stage::Solve,
            Command::OracleCheck => Stage::OracleCheck,
            Command::Full => Stage::Full,
        }
    }
}

/// Homogenized micropolar lubrication over periodic roughness.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides output.directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, env = "MICRO_REYNOLDS_THREADS")]
    threads: Option<usize>,
    /// Which phi2 formula to use (overrides flags.phi2_variant).
    #[arg(long)]
    phi2_variant: Option<Phi2Choice>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    ExitCode::from(execute(&cli) as u8)
}

fn execute(cli: &Cli) -> i32 {
    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            log::error!("reading {}: {e}", cli.config.display());
            return 1;
        }
    };
    let config = match config::parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            log::error!("{}: {e}", cli.config.display());
            return 2;
        }
    };
    let stage = Stage::from(cli.command);
    let mut options = RunOptions::new(stage, &config);
    if let Some(dir) = &cli.out {
        options.out_dir = dir.clone();
    }
    if let Some(choice) = cli.phi2_variant {
        options.phi2 = choice;
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = cli.threads {
        builder = builder.num_threads(k.max(1));
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            log::error!("thread pool: {e}");
            return 1;
        }
    };
    match pool.install(|| pipeline::run(&config, &options)) {
        Ok(artifacts) => {
            let report = &artifacts.report;
            if let Some(p) = &report.phi2 {
                log::info!("phi2 variant {} ({})", p.variant, p.source);
            }
            if report.passed {
                0
            } else {
                for b in &report.breaches {
                    log::error!("tolerance breach: {b}");
                }
                5
            }
        }
        Err(e) => {
            log::error!("{e}");
            let path = options.out_dir.join("error.json");
            if options.out_dir.is_dir() {
                let _ = std::fs::write(path, pipeline::error_report(stage, &e));
            }
            e.exit_code()
        }
    }
}
