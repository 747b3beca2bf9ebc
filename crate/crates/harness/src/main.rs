use std::path::PathBuf;
use std::process::ExitCode;

use borda_harness::{emit_from_dir, run_campaign, ExperimentConfig, ExperimentKind, HarnessError};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "borda", version, about = "Dueling-bandit and preference-optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bandit strategy comparison.
    Simulate(Flags),
    /// Norm comparison between rewards and their Borda functions.
    NormStudy(Flags),
    /// Toy active preference optimization.
    ToyDpo(Flags),
    /// Rebuild the plot table from the trial table in `--out`.
    Emit(Flags),
}

#[derive(Args)]
struct Flags {
    /// TOML configuration, or a metadata.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed_offset: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Flags {
    fn resolve(&self, experiment: Option<ExperimentKind>) -> Result<ExperimentConfig, HarnessError> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(kind) = experiment {
            config.experiment = kind;
        }
        if let Some(v) = self.seed_offset {
            config.seed_offset = v;
        }
        if let Some(v) = self.workers {
            config.workers = v;
        }
        if let Some(v) = &self.out {
            config.out = v.clone();
        }
        Ok(config)
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let (flags, kind) = match &cli.command {
        Command::Simulate(f) => (f, Some(ExperimentKind::Simulate)),
        Command::NormStudy(f) => (f, Some(ExperimentKind::NormStudy)),
        Command::ToyDpo(f) => (f, Some(ExperimentKind::ToyDpo)),
        Command::Emit(f) => (f, None),
    };
    let config = flags.resolve(kind)?;
    match kind {
        Some(_) => {
            run_campaign(&config)?;
            println!("wrote {}", config.out.display());
        }
        None => {
            let n = emit_from_dir(&config.out)?;
            println!("emitted curves for {n} records in {}", config.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
