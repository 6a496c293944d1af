//! Running experiment cells over a problem set, and the record, timing and
//! summary files.
//!
//! `records.csv` holds everything about a run that is a function of the
//! configuration and seed, so two runs with the same inputs produce identical
//! bytes. Wall-clock times go to `timings.csv`.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use cmplan_core::environments::derive_seed;
use cmplan_core::neural::{
    bidirectional_plan, learned_fmt, Checkpoint, Discriminator, Generator, LearnedSampler,
};
use cmplan_core::{
    fmt_star, rrt_connect, shortcut_smooth, ConstrainedSpace, ConstraintSystem, Path,
    PlanProblem, PlanRng, UniformSampler,
};
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Cell, ExperimentConfig, NeuralConfig, Planner, SamplerKind};
use crate::problems::{Problem, ProblemSet};

/// Trained networks shared by every learned run.
#[derive(Debug, Clone)]
pub struct Models {
    pub gen: Generator,
    pub disc: Option<Discriminator>,
}

impl Models {
    pub fn load(cfg: &NeuralConfig) -> Result<Self> {
        let path = cfg
            .checkpoint
            .as_ref()
            .ok_or_else(|| anyhow!("no checkpoint configured"))?;
        let ck = Checkpoint::load(path)
            .with_context(|| format!("cannot load checkpoint {}", path.display()))?;
        let disc = if cfg.use_discriminator {
            ck.discriminator()?
        } else {
            None
        };
        Ok(Self {
            gen: ck.generator()?,
            disc,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub problem_id: usize,
    pub cell: Cell,
    pub success: bool,
    /// Planning time, from sampler setup to the returned path.
    pub wall_time: f64,
    pub path_length: Option<f64>,
    pub smoothed_length: Option<f64>,
    pub iterations: usize,
    pub charts_created: usize,
    pub projection_calls: usize,
    pub nproj_calls: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RunRecord,
    /// The smoothed path when smoothing is enabled, the raw path otherwise.
    pub path: Option<Path>,
}

/// Seed of the planner stream for a problem. Every cell sees the same seed
/// for the same problem.
pub fn problem_seed(seed: u64, problem_id: usize) -> u64 {
    derive_seed(seed, problem_id as u64)
}

pub fn run_problem(
    cfg: &ExperimentConfig,
    set: &ProblemSet,
    problem: &Problem,
    cell: Cell,
    models: Option<&Models>,
) -> Result<RunOutput> {
    let sys = ConstraintSystem::sphere();
    let scene = &set.scene_of(problem).scene;
    let mut space = ConstrainedSpace::new(
        &sys,
        scene,
        cell.adherence,
        cfg.integrator,
        cfg.atlas.clone(),
    );
    let (a, b) = problem.pair.configs();
    let plan = PlanProblem::new(a, b)
        .with_budget(Duration::from_secs_f64(cfg.time_budget_secs), cfg.max_iters);
    let mut rng = PlanRng::seed_from_u64(problem_seed(cfg.seed, problem.id));

    let start = Instant::now();
    let (report, nproj_calls) = match cell.sampler {
        SamplerKind::Classical => {
            let report = match cell.planner {
                Planner::Rrtconnect => rrt_connect(&plan, &mut space, &mut UniformSampler, &mut rng),
                Planner::Fmtstar => fmt_star(
                    &plan,
                    &mut space,
                    &mut UniformSampler,
                    cfg.fmt.n_init,
                    cfg.fmt.radius,
                    &mut rng,
                ),
            }?;
            (report, 0)
        }
        SamplerKind::Compnetx => {
            let models = models.ok_or_else(|| anyhow!("the compnetx sampler needs models"))?;
            let mut sampler = LearnedSampler::new(
                &models.gen,
                models.disc.as_ref(),
                scene.voxels(),
                cfg.neural.params.clone(),
            )?;
            let report = match cell.planner {
                Planner::Rrtconnect => bidirectional_plan(&plan, &mut space, &mut sampler, &mut rng),
                Planner::Fmtstar => learned_fmt(
                    &plan,
                    &mut space,
                    &mut sampler,
                    cfg.fmt.n_init,
                    cfg.fmt.radius,
                    &mut rng,
                ),
            }?;
            (report, sampler.stats.nproj_calls)
        }
    };
    let wall_time = start.elapsed().as_secs_f64();
    let stats = space.stats;

    let path_length = report.path.as_ref().map(|p| p.length);
    let path = report.path.map(|p| {
        if cfg.smoothing_attempts > 0 {
            shortcut_smooth(&p, &mut space, cfg.smoothing_attempts, &mut rng)
        } else {
            p
        }
    });
    Ok(RunOutput {
        record: RunRecord {
            problem_id: problem.id,
            cell,
            success: path.is_some(),
            wall_time,
            path_length,
            smoothed_length: path.as_ref().map(|p| p.length),
            iterations: report.iterations,
            charts_created: stats.charts_created,
            projection_calls: stats.projections,
            nproj_calls,
        },
        path,
    })
}

/// Runs every cell over every problem on up to `jobs` threads. Outputs are
/// ordered by cell, then problem id, whatever the completion order.
pub fn run_bench(
    cfg: &ExperimentConfig,
    set: &ProblemSet,
    cells: &[Cell],
    models: Option<&Models>,
    jobs: usize,
) -> Result<Vec<RunOutput>> {
    let work: Vec<(Cell, &Problem)> = cells
        .iter()
        .flat_map(|&c| set.problems.iter().map(move |p| (c, p)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()?;
    pool.install(|| {
        work.par_iter()
            .map(|&(cell, p)| run_problem(cfg, set, p, cell, models))
            .collect()
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const RECORDS_HEADER: &str = "problem_id,planner,adherence,sampler,success,path_length,smoothed_length,iterations,charts_created,projection_calls,nproj_calls";
pub const TIMINGS_HEADER: &str = "problem_id,planner,adherence,sampler,wall_time";

fn cell_columns(cell: &Cell) -> String {
    cell.to_string().replace('/', ",")
}

pub fn records_csv(records: &[RunRecord]) -> String {
    let mut out = format!("{RECORDS_HEADER}\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.problem_id,
            cell_columns(&r.cell),
            r.success,
            opt(r.path_length),
            opt(r.smoothed_length),
            r.iterations,
            r.charts_created,
            r.projection_calls,
            r.nproj_calls
        )
        .expect("writing to a string");
    }
    out
}

pub fn timings_csv(records: &[RunRecord]) -> String {
    let mut out = format!("{TIMINGS_HEADER}\n");
    for r in records {
        writeln!(out, "{},{},{}", r.problem_id, cell_columns(&r.cell), r.wall_time)
            .expect("writing to a string");
    }
    out
}

/// Parses `records.csv`; wall times are not part of it and read as zero.
pub fn parse_records_csv(text: &str) -> Result<Vec<RunRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(RECORDS_HEADER) {
        bail!("unexpected records header");
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 11 {
                bail!("expected 11 columns in '{line}'");
            }
            let num = |s: &str| -> Result<Option<f64>> {
                Ok(if s.is_empty() { None } else { Some(s.parse()?) })
            };
            Ok(RunRecord {
                problem_id: f[0].parse()?,
                cell: format!("planner={},adherence={},sampler={}", f[1], f[2], f[3]).parse()?,
                success: f[4].parse()?,
                wall_time: 0.0,
                path_length: num(f[5])?,
                smoothed_length: num(f[6])?,
                iterations: f[7].parse()?,
                charts_created: f[8].parse()?,
                projection_calls: f[9].parse()?,
                nproj_calls: f[10].parse()?,
            })
        })
        .collect()
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: Cell,
    pub problems: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Over successful runs only.
    pub path_length: Option<Stat>,
    pub smoothed_length: Option<Stat>,
    pub wall_time: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Summary {
    pub cells: Vec<CellSummary>,
}

pub fn summarize(cells: &[Cell], records: &[RunRecord]) -> Summary {
    Summary {
        cells: cells
            .iter()
            .map(|&cell| {
                let rows: Vec<&RunRecord> = records.iter().filter(|r| r.cell == cell).collect();
                let ok: Vec<&RunRecord> = rows.iter().copied().filter(|r| r.success).collect();
                let collect = |f: fn(&RunRecord) -> Option<f64>| -> Vec<f64> {
                    ok.iter().filter_map(|r| f(r)).collect()
                };
                CellSummary {
                    cell,
                    problems: rows.len(),
                    successes: ok.len(),
                    success_rate: if rows.is_empty() {
                        0.0
                    } else {
                        ok.len() as f64 / rows.len() as f64
                    },
                    path_length: Stat::of(&collect(|r| r.path_length)),
                    smoothed_length: Stat::of(&collect(|r| r.smoothed_length)),
                    wall_time: Stat::of(&ok.iter().map(|r| r.wall_time).collect::<Vec<_>>()),
                }
            })
            .collect(),
    }
}
