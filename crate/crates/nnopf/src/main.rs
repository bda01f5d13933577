use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nnopf::commands::{
    cmd_convert_case, cmd_export_lp, cmd_gen_data, cmd_sweep, cmd_train, cmd_verify, CliError, ExportTarget,
};
use nnopf::config::{ConfigArgs, MetricKind, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "nnopf",
    version,
    about = "Worst-case guarantees for neural-network DC-OPF predictors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    config: ConfigArgs,
    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample loads and label them with DC-OPF solutions.
    GenData,
    /// Train and prune one network per seed.
    Train,
    /// Compute worst-case guarantees for the trained networks.
    Verify,
    /// Repeat verification over shrinking input domains.
    Sweep,
    /// Write optimization models in CPLEX LP format.
    ExportLp {
        #[arg(long, value_enum, default_value = "dcopf")]
        model: ExportModel,
        /// Load scale for `--model dcopf`.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
    /// Convert the case file to the JSON case format.
    ConvertCase {
        /// Output path; stdout when omitted.
        #[arg(long)]
        output: Option<std::path::PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ExportModel {
    Dcopf,
    NuG,
    NuLine,
    NuDist,
    NuOpt,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(&cli.config).map_err(CliError::Usage)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.into()))?;
    }
    match cli.command {
        Command::GenData => {
            cmd_gen_data(&cfg)?;
        }
        Command::Train => {
            cmd_train(&cfg)?;
        }
        Command::Verify => {
            let out = cmd_verify(&cfg)?;
            log::info!("summary in {}", out.summary_path.display());
        }
        Command::Sweep => {
            let path = cmd_sweep(&cfg)?;
            log::info!("sweep table in {}", path.display());
        }
        Command::ExportLp { model, scale } => {
            let target = match model {
                ExportModel::Dcopf => ExportTarget::DcOpf { scale },
                ExportModel::NuG => ExportTarget::Metric(MetricKind::NuG.metric()),
                ExportModel::NuLine => ExportTarget::Metric(MetricKind::NuLine.metric()),
                ExportModel::NuDist => ExportTarget::Metric(MetricKind::NuDist.metric()),
                ExportModel::NuOpt => ExportTarget::Metric(MetricKind::NuOpt.metric()),
            };
            for p in cmd_export_lp(&cfg, target)? {
                println!("{}", p.display());
            }
        }
        Command::ConvertCase { output } => {
            let text = cmd_convert_case(&cfg)?;
            match output {
                Some(p) => nnopf::fsutil::write_atomic(&p, text.as_bytes()).map_err(CliError::Solver)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
