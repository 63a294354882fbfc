use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cdssm_cli::{commands, CliError, RunConfig};
use clap::{Args, Parser, Subcommand};

/// Particle filtering, smoothing and parameter inference for
/// continuous-discrete SDE state-space models.
#[derive(Parser)]
#[command(name = "cdssm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate states and observations into `<out>/data.jsonl`.
    Simulate(Common),
    /// Run a particle filter; writes `filter.csv` and `filter_summary.json`.
    Filter(WithData),
    /// Draw smoothed trajectories; writes `smooth.csv` and `smooth_summary.json`.
    Smooth(WithData),
    /// Sample parameters by PMMH or particle Gibbs; writes `chain.csv` and `chain_summary.json`.
    Infer(WithData),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long, env = "CDSSM_SEED")]
    seed: Option<u64>,
    /// Worker threads (results do not depend on this).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct WithData {
    #[command(flatten)]
    common: Common,
    /// Observation file; defaults to `<out>/data.jsonl`.
    #[arg(long)]
    data: Option<PathBuf>,
}

impl WithData {
    fn data_path(&self) -> PathBuf {
        self.data.clone().unwrap_or_else(|| self.common.out.join("data.jsonl"))
    }
}

fn setup(common: &Common) -> Result<(RunConfig, u64), CliError> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| CliError::config(format!("{}: {e}", common.config.display())))?;
    let cfg = RunConfig::from_toml(&text)?;
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    std::fs::create_dir_all(&common.out)?;
    let seed = common.seed.or(cfg.seed).unwrap_or(0);
    Ok((cfg, seed))
}

fn run(cli: Cli) -> Result<(), CliError> {
    type Action = fn(&RunConfig, u64, &Path, &Path) -> Result<(), CliError>;
    let (args, action): (&WithData, Action) = match &cli.command {
        Command::Simulate(common) => {
            let (cfg, seed) = setup(common)?;
            let path = commands::simulate(&cfg, seed, &common.out)?;
            println!("wrote {}", path.display());
            return Ok(());
        }
        Command::Filter(a) => (a, |c, s, d, o| {
            let ll = commands::filter(c, s, d, o)?;
            println!("log-likelihood {ll}");
            Ok(())
        }),
        Command::Smooth(a) => (a, |c, s, d, o| {
            let n = commands::smooth(c, s, d, o)?;
            println!("wrote {n} smoothed trajectories");
            Ok(())
        }),
        Command::Infer(a) => (a, |c, s, d, o| {
            let n = commands::infer(c, s, d, o)?;
            println!("wrote {n} chain iterations");
            Ok(())
        }),
    };
    let (cfg, seed) = setup(&args.common)?;
    action(&cfg, seed, &args.data_path(), &args.common.out)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cdssm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
