//! Command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use chaoslab::experiments::{self, ExperimentConfig, Overrides, StudyKind, WORKERS_ENV};

#[derive(Parser, Debug)]
#[command(name = "chaoslab", version, about = "Propagation-of-chaos experiments for mean-field particle systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the study named in the config file.
    Run(Common),
    /// Entropy and TV bounds across N with a log-log rate fit.
    Rate(Common),
    /// Windowed drift-deviation moment ladder.
    ConditionC(Common),
    /// Sub-Gaussian, bounded-difference and martingale moment checks.
    Inequalities(Common),
    /// Histogram TV between interacting and independent marginals.
    TvDirect(Common),
    /// Exponential moment of the windowed density ratio.
    Prop31(Common),
    /// Build and persist a reference law.
    ReferenceLaw(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run description; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (outputs do not depend on it).
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (study, common) = match cli.command {
        Command::Run(c) => (None, c),
        Command::Rate(c) => (Some(StudyKind::Rate), c),
        Command::ConditionC(c) => (Some(StudyKind::ConditionC), c),
        Command::Inequalities(c) => (Some(StudyKind::Inequalities), c),
        Command::TvDirect(c) => (Some(StudyKind::TvDirect), c),
        Command::Prop31(c) => (Some(StudyKind::Prop31), c),
        Command::ReferenceLaw(c) => (Some(StudyKind::ReferenceLaw), c),
    };
    let result = (|| {
        let mut cfg = match &common.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply(&Overrides {
            study,
            seed: common.seed,
            workers: common.workers,
            out: common.out.clone(),
        });
        experiments::run(&cfg)
    })();
    match result {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            for n in &outcome.notes {
                println!("note: {n}");
            }
            println!("{}: {}", outcome.study.as_str(), if outcome.pass { "PASS" } else { "FAIL" });
            if outcome.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
