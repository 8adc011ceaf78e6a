use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info};

use rtrrl_core::cells::CellKind;
use rtrrl_core::harness::{
    cmd_collect, cmd_evaluate, cmd_finetune, cmd_pretrain, cmd_report, run_pipeline, CellFilter,
    HarnessError, PhaseOutcome, RunDir,
};
use rtrrl_core::persist::RunConfig;

#[derive(Parser)]
#[command(
    name = "rtrrl",
    version,
    about = "Pretrain recurrent driving policies and fine-tune them online"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record expert demonstrations and export the tracks.
    Collect(Common),
    /// Behavioral cloning for every (model, seed) cell.
    Pretrain(Common),
    /// Online fine-tuning under the configured shift.
    Finetune(Common),
    /// Mode-action evaluation on the held-out tracks.
    Evaluate(Common),
    /// Aggregate CSVs and SVG plots for a run directory.
    Report(Common),
    /// All phases in order, resuming finished cells.
    Pipeline(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Ctrnn,
    Lru,
    Lrcssm,
}

impl From<Model> for CellKind {
    fn from(m: Model) -> Self {
        match m {
            Model::Ctrnn => CellKind::Ctrnn,
            Model::Lru => CellKind::Lru,
            Model::Lrcssm => CellKind::Lrcssm,
        }
    }
}

#[derive(Args)]
struct Common {
    /// Run configuration (`.run`, TOML). Defaults to `<out>/run.run`, then
    /// to built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Master seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict per-cell phases to one model kind.
    #[arg(long, value_enum)]
    model: Option<Model>,
    /// Restrict per-cell phases to one seed index.
    #[arg(long)]
    index: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<RunDir, HarnessError> {
        let existing = self.out.join("run.run");
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None if existing.is_file() => RunConfig::load(&existing)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        RunDir::init(&self.out, &cfg)
    }

    fn filter(&self) -> CellFilter {
        CellFilter {
            kind: self.model.map(CellKind::from),
            index: self.index,
        }
    }
}

fn report_outcome(name: &str, o: &PhaseOutcome) -> i32 {
    info!(
        "{name}: {} done, {} skipped, {} failed",
        o.completed.len(),
        o.skipped.len(),
        o.failed.len()
    );
    for (cell, reason) in &o.failed {
        error!("{cell}: {reason}");
    }
    o.exit_code()
}

fn run(cli: Cli) -> Result<i32, HarnessError> {
    Ok(match cli.command {
        Command::Collect(c) => {
            let s = cmd_collect(&c.resolve()?)?;
            println!(
                "episodes {} steps {} mean reward {:.3}",
                s.episodes, s.steps, s.mean_reward
            );
            0
        }
        Command::Pretrain(c) => {
            report_outcome("pretrain", &cmd_pretrain(&c.resolve()?, c.filter())?)
        }
        Command::Finetune(c) => {
            report_outcome("finetune", &cmd_finetune(&c.resolve()?, c.filter())?)
        }
        Command::Evaluate(c) => {
            report_outcome("evaluate", &cmd_evaluate(&c.resolve()?, c.filter())?)
        }
        Command::Report(c) => {
            let data = cmd_report(&c.out)?;
            for w in &data.warnings {
                log::warn!("{w}");
            }
            for r in &data.summaries {
                println!(
                    "{:<7} {:<17} median {:>9.2} std {:>8.2} n {}",
                    r.kind.name(),
                    r.phase,
                    r.summary.median,
                    r.summary.std,
                    r.summary.n
                );
            }
            0
        }
        Command::Pipeline(c) => report_outcome("pipeline", &run_pipeline(&c.resolve()?)?),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
