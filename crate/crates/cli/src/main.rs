use std::path::PathBuf;
use std::process::ExitCode;

use aqgwr::{KernelKind, ModelFamily};
use aqgwr_cli::{cmd_fit, cmd_grid, cmd_ingest, cmd_synth, cmd_validate, CliError, Overrides, PipelineConfig};
use clap::{Parser, Subcommand, ValueEnum};

/// Calibrates low-cost air-quality sensor networks with geographically
/// weighted regression. Flags take precedence over the config file, which
/// takes precedence over built-in defaults.
#[derive(Debug, Parser)]
#[command(name = "aqgwr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for every parallel stage; all cores when absent.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Also search the kernel bandwidth during validation.
    #[arg(long, global = true)]
    bandwidth_search: bool,

    #[arg(long, global = true, value_enum)]
    kernel: Option<KernelArg>,

    /// Kernel bandwidth in meters.
    #[arg(long, global = true)]
    bandwidth: Option<f64>,

    #[arg(long, global = true, value_enum)]
    model: Option<ModelArg>,

    /// Output root directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Raw minute files to the hourly panel.
    Ingest {
        /// Raw files; replaces the list in the config when given.
        raw: Vec<PathBuf>,
    },
    /// Fit the selected model families and write model tables.
    Fit,
    /// Split, score, cross-validate and optionally search the bandwidth.
    Validate,
    /// Export coefficient surfaces on a regular grid.
    Grid,
    /// Generate a synthetic panel with known coefficients.
    Synth,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KernelArg {
    Gaussian,
    Gtwr,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    C,
    Nc,
    Gwr,
    Sgwr,
    All,
}

impl ModelArg {
    fn families(self) -> Vec<ModelFamily> {
        match self {
            ModelArg::C => vec![ModelFamily::Collocated],
            ModelArg::Nc => vec![ModelFamily::NonCollocated],
            ModelArg::Gwr => vec![ModelFamily::Gwr],
            ModelArg::Sgwr => vec![ModelFamily::Sgwr],
            ModelArg::All => ModelFamily::ALL.to_vec(),
        }
    }
}

fn run(cli: Cli) -> Result<String, CliError> {
    let path = cli
        .config
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let overrides = Overrides {
        out_dir: cli.out,
        panel_dir: None,
        kernel: cli.kernel.map(|k| match k {
            KernelArg::Gaussian => KernelKind::Gaussian,
            KernelArg::Gtwr => KernelKind::Gtwr,
        }),
        bandwidth: cli.bandwidth,
        models: cli.model.map(ModelArg::families),
        bandwidth_search: cli.bandwidth_search,
    };
    let cfg = PipelineConfig::load(&path, &overrides)?;
    match cli.command {
        Command::Ingest { raw } => cmd_ingest(&cfg, &raw),
        Command::Fit => cmd_fit(&cfg),
        Command::Validate => cmd_validate(&cfg),
        Command::Grid => cmd_grid(&cfg),
        Command::Synth => cmd_synth(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
