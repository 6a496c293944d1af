use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use cmplan_cli::commands::{self, VerifyTarget, DEFAULT_MAX_GAP};
use cmplan_cli::{Cell, ExperimentConfig};

#[derive(Parser)]
#[command(name = "cmplan", version, about = "Constrained motion planning benchmarks")]
struct Cli {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "CMPLAN_OUT", default_value = "cmplan-out")]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate benchmark scenes and their occupancy grids.
    GenScenes,
    /// Solve the scenes with the oracle planner and write training tuples.
    GenData,
    /// Train the generator and discriminator.
    Train {
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Solve one problem and write its path.
    Plan {
        #[arg(long)]
        problem: usize,
        /// planner=...,adherence=...,sampler=... (defaults to the first configured cell)
        #[arg(long)]
        cell: Option<Cell>,
    },
    /// Run every configured cell over the problem set.
    Bench {
        /// Replaces the configured cells; repeatable.
        #[arg(long)]
        cell: Vec<Cell>,
        /// Also write every solution path under paths/.
        #[arg(long)]
        paths: bool,
    },
    /// Re-validate a path file against the constraint and the scene.
    Verify {
        #[arg(long)]
        path: PathBuf,
        /// Check against this problem of the configured problem set.
        #[arg(long, conflicts_with = "scene")]
        problem: Option<usize>,
        /// Check against a scene file (endpoints unchecked).
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MAX_GAP)]
        max_gap: f64,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.oracle.seed = seed;
        cfg.train.generator.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = load_config(&cli)?;
    let out = &cli.out;
    match cli.command {
        Command::GenScenes => {
            let written = commands::gen_scenes(&cfg, out)?;
            println!("wrote {} scenes to {}", written.len(), out.join("scenes").display());
        }
        Command::GenData => {
            let s = commands::gen_data(&cfg, out)?;
            println!(
                "oracle solved {}/{} pairs ({:.1}%), {} records",
                s.solved,
                s.attempted,
                100.0 * s.success_rate,
                s.records
            );
        }
        Command::Train { resume } => {
            let t = commands::train(&cfg, out, resume.as_deref())?;
            for (i, loss) in t.generator.train.iter().enumerate() {
                let val = t.generator.validation.get(i).copied().unwrap_or(f64::NAN);
                println!("epoch {}: train {loss:.6} validation {val:.6}", t.first_epoch + i + 1);
            }
            println!("checkpoint {}", t.checkpoint.display());
        }
        Command::Plan { problem, cell } => {
            let cell = cell.unwrap_or_else(|| cfg.cells.first().copied().unwrap_or_default());
            let record = commands::plan(&cfg, out, problem, cell)?;
            println!("{}", commands::record_line(&record));
            return Ok(record.success);
        }
        Command::Bench { cell, paths } => {
            let cells = if cell.is_empty() { cfg.cells.clone() } else { cell };
            let summary = commands::bench(&cfg, out, &cells, paths)?;
            for c in &summary.cells {
                println!(
                    "{}: {}/{} solved, mean length {}",
                    c.cell,
                    c.successes,
                    c.problems,
                    c.path_length.map_or("-".into(), |s| format!("{:.4}", s.mean))
                );
            }
        }
        Command::Verify {
            path,
            problem,
            scene,
            max_gap,
        } => {
            let target = match (problem, &scene) {
                (Some(id), _) => VerifyTarget::Problem(&cfg, id),
                (None, Some(s)) => VerifyTarget::Scene(s),
                (None, None) => anyhow::bail!("verify needs --problem or --scene"),
            };
            let violations = commands::verify(&path, target, max_gap)?;
            for v in &violations {
                println!("{v}");
            }
            if violations.is_empty() {
                println!("valid");
            }
            return Ok(violations.is_empty());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
