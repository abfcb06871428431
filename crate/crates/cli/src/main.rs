use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rholoss_cli::artifacts::resolve_out_dir;
use rholoss_cli::ladder::cmd_ladder;
use rholoss_cli::prepare::{cmd_prepare, PrepareOutcome};
use rholoss_cli::report::{cmd_report, expand};
use rholoss_cli::run::{cmd_run, cmd_sweep, RunOutcome};
use rholoss_cli::train_il::{cmd_train_il, TrainIlOutcome};
use rholoss_cli::{CliError, ExperimentConfig, Layout, Overwrite, Result};

/// Online batch selection experiments: prepare data, fit irreducible-loss
/// models, run selection policies and summarize the results as CSV.
#[derive(Parser)]
#[command(name = "rholoss", version)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `output_dir` and $RHOLOSS_OUT_DIR.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Replace the run seeds (and the ladder seed) with a single seed.
    #[arg(long, global = true, value_name = "N")]
    seed_override: Option<u64>,
    /// Independent runs to execute concurrently.
    #[arg(long, global = true, value_name = "K", default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Force {
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct Resumable {
    /// Overwrite existing outputs.
    #[arg(long, conflicts_with = "resume")]
    force: bool,
    /// Keep complete records from the same config and run the rest; fail on
    /// partial or foreign ones.
    #[arg(long)]
    resume: bool,
}

impl Force {
    fn mode(&self) -> Overwrite {
        if self.force {
            Overwrite::Force
        } else {
            Overwrite::Refuse
        }
    }
}

impl Resumable {
    fn mode(&self) -> Overwrite {
        match (self.force, self.resume) {
            (true, _) => Overwrite::Force,
            (_, true) => Overwrite::Resume,
            _ => Overwrite::Refuse,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build train, holdout and test splits under data/.
    Prepare(Force),
    /// Fit the IL model(s) and write il/table.csv with checkpoint logs.
    TrainIl(Force),
    /// One record per (policy, seed) under runs/.
    Run(Resumable),
    /// Summary CSVs under report/ from a set of run records.
    Report {
        /// Glob of run records; defaults to <out>/runs/*.csv.
        #[arg(long, value_name = "GLOB")]
        records: Option<String>,
    },
    /// First-epoch approximation ladder under ladder/.
    Ladder(Force),
    /// Runs over a grid of batch sizes and optimizer settings under sweep/.
    Sweep(Resumable),
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config PATH is required for this command".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed_override {
        cfg.apply_seed_override(seed);
    }
    Ok(cfg)
}

fn report_runs(out: &RunOutcome) {
    eprintln!("{} record(s) written, {} kept", out.written.len(), out.kept.len());
}

fn list(paths: &[PathBuf]) {
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    if cli.jobs == 0 {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    if let Command::Report { records } = &cli.command {
        let cfg = cli.config.as_deref().map(ExperimentConfig::load).transpose()?;
        let layout = Layout::new(resolve_out_dir(cli.out.as_deref(), cfg.as_ref()));
        let pattern = records
            .clone()
            .unwrap_or_else(|| layout.runs().join("*.csv").to_string_lossy().into_owned());
        list(&cmd_report(&expand(&pattern)?, &layout.report())?);
        return Ok(());
    }
    let cfg = load_config(cli)?;
    let layout = Layout::new(resolve_out_dir(cli.out.as_deref(), Some(&cfg)));
    match &cli.command {
        Command::Prepare(f) => match cmd_prepare(&cfg, &layout, f.mode())? {
            PrepareOutcome::Written(p) => list(&p),
            PrepareOutcome::UpToDate => eprintln!("data up to date in {}", layout.root.join("data").display()),
        },
        Command::TrainIl(f) => match cmd_train_il(&cfg, &layout, f.mode())? {
            TrainIlOutcome::Written(p) => list(&p),
            TrainIlOutcome::UpToDate => eprintln!("IL table up to date at {}", layout.il_table().display()),
        },
        Command::Run(r) => report_runs(&cmd_run(&cfg, &layout, r.mode(), cli.jobs)?),
        Command::Ladder(f) => list(&[cmd_ladder(&cfg, &layout, f.mode())?]),
        Command::Sweep(r) => report_runs(&cmd_sweep(&cfg, &layout, r.mode(), cli.jobs)?),
        Command::Report { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

