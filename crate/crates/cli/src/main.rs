use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fedcav_core::experiment::{self, Command, ExperimentConfig, Overrides};
use fedcav_core::{AggregationMode, Error};

#[derive(Parser, Debug)]
#[command(name = "fedcav", version, about = "Density-aware federated imitation learning at an unsignalized intersection")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Comma-separated densities in veh/lane/h.
    #[arg(long, global = true, value_delimiter = ',')]
    densities: Option<Vec<f64>>,

    /// Restrict train-fl to one aggregation mode.
    #[arg(long, global = true)]
    mode: Option<ModeArg>,

    /// Comma-separated discard rates for sweep-selection.
    #[arg(long, global = true, value_delimiter = ',')]
    p: Option<Vec<f64>>,

    /// Exit with status 2 if an acceptance property fails or artifacts
    /// drift from the existing manifest.
    #[arg(long, global = true)]
    check: bool,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Rule-only density sweep.
    Simulate {
        /// Dump per-step rule traces.
        #[arg(long)]
        trace: bool,
    },
    /// Single-intersection imitation learning and the cross-density matrix.
    TrainIl,
    /// Federated training under both aggregation modes.
    TrainFl,
    /// Loss-aware selection sweep over discard rates.
    SweepSelection,
    /// Evaluate a checkpoint, or the rule alone.
    Evaluate {
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Same,
    Density,
}

impl From<ModeArg> for AggregationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Same => AggregationMode::SameProportion,
            ModeArg::Density => AggregationMode::DensityAware,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| match e {
            Error::Io(io) => anyhow::anyhow!("{}: {io}", path.display()),
            other => other.into(),
        })?,
        None => ExperimentConfig::default(),
    };
    let mut ov = Overrides {
        seed: cli.seed,
        densities: cli.densities,
        modes: cli.mode.map(|m| vec![m.into()]),
        discard_rates: cli.p,
        ..Overrides::default()
    };
    let cmd = match cli.command {
        Cmd::Simulate { trace } => {
            ov.trace = trace;
            Command::Simulate
        }
        Cmd::TrainIl => Command::TrainIl,
        Cmd::TrainFl => Command::TrainFl,
        Cmd::SweepSelection => Command::SweepSelection,
        Cmd::Evaluate { model } => {
            ov.model = model;
            Command::Evaluate
        }
    };

    let outcome = experiment::run(cmd, &cfg, &ov, &cli.out)?;
    println!(
        "{}: wrote {} files to {}",
        cmd.name(),
        outcome.manifest.files.len(),
        cli.out.display()
    );
    for v in &outcome.violations {
        println!("property violated: {v}");
    }
    for f in &outcome.drift {
        println!("drift: {f}");
    }
    if cli.check && !(outcome.violations.is_empty() && outcome.drift.is_empty()) {
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}
