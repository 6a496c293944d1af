//! The subcommands. Each takes a loaded configuration and an output
//! directory and returns what it wrote, so tests can drive them directly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cmplan_core::environments::{
    derive_seed, gen_dataset, read_jsonl, voxel_ref, write_jsonl, GeneratedScene, VoxelGrid,
};
use cmplan_core::neural::{
    distance_set, Checkpoint, Discriminator, DiscriminatorTrainer, Generator, GeneratorTrainer,
    LossCurve, TrainingSet, NEGATIVE_RADIUS,
};
use cmplan_core::{ConstraintSystem, IntegratorParams};
use log::info;
use rand::SeedableRng;
use serde::Serialize;

use crate::bench::{
    records_csv, run_bench, run_problem, summarize, timings_csv, Models, RunRecord, Summary,
};
use crate::config::{Cell, ExperimentConfig, SamplerKind, SceneSource};
use crate::pathfile::{parse_path_csv, path_csv, verify_path, VerifySpec};
use crate::problems::{load_scenes, ProblemSet};

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn scene_file_name(id: usize) -> String {
    format!("scene_{id:04}.toml")
}

/// Writes every configured scene as `scenes/scene_NNNN.toml` with its
/// occupancy sidecar `scenes/scene_NNNN.vox`.
pub fn gen_scenes(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let dir = out.join("scenes");
    ensure_dir(&dir)?;
    let scenes = load_scenes(&cfg.scenes, cfg.jobs)?;
    let mut written = Vec::new();
    for (i, g) in scenes.iter().enumerate() {
        let path = dir.join(scene_file_name(i));
        g.save(&path)?;
        g.scene.voxels().save(dir.join(voxel_ref(i)))?;
        info!(
            "scene {i}: {} obstacles, {} pairs, {} pairs rejected",
            g.scene.obstacles().len(),
            g.pairs.len(),
            g.rejected_pairs
        );
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub attempted: usize,
    pub solved: usize,
    pub success_rate: f64,
    pub records: usize,
    pub failures: Vec<[usize; 2]>,
}

/// Runs the oracle over the configured scenes and writes `dataset.jsonl`,
/// one occupancy sidecar per scene and `dataset_summary.toml`.
pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<DatasetSummary> {
    ensure_dir(out)?;
    let scenes = load_scenes(&cfg.scenes, cfg.jobs)?;
    let refs: Vec<(usize, &GeneratedScene)> = scenes.iter().enumerate().collect();
    let data = gen_dataset(&refs, &cfg.oracle, cfg.jobs)?;
    write_jsonl(&data.records, out.join("dataset.jsonl"))?;
    for (i, g) in &refs {
        g.scene.voxels().save(out.join(voxel_ref(*i)))?;
    }
    let summary = DatasetSummary {
        attempted: data.attempted,
        solved: data.attempted - data.failures.len(),
        success_rate: data.success_rate(),
        records: data.records.len(),
        failures: data.failures.iter().map(|&(s, p)| [s, p]).collect(),
    };
    write(&out.join("dataset_summary.toml"), toml::to_string(&summary)?)?;
    Ok(summary)
}

/// Loads a dataset file and the sidecars its records reference.
pub fn load_training_set(dataset: &Path) -> Result<TrainingSet> {
    let records = read_jsonl(dataset)
        .with_context(|| format!("cannot read dataset {}", dataset.display()))?;
    let base = dataset.parent().unwrap_or(Path::new("."));
    let mut voxels = BTreeMap::new();
    for r in &records {
        if !voxels.contains_key(&r.scene_id) {
            let path = base.join(&r.voxel_ref);
            let grid = VoxelGrid::load(&path)
                .with_context(|| format!("cannot read occupancy grid {}", path.display()))?;
            voxels.insert(r.scene_id, grid);
        }
    }
    Ok(TrainingSet::from_records(&records, voxels)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    /// Losses of the epochs run by this call.
    pub generator: LossCurve,
    pub discriminator: LossCurve,
    /// Epoch index of the first row written by this call.
    pub first_epoch: usize,
}

/// Ids and seed stream of the scenes that only feed the discriminator.
const EXTRA_SCENE_ID: usize = 1_000_000;
const EXTRA_SCENE_SEED: u64 = 0xD15C_5CE4E;

fn loss_csv(curve: &LossCurve, first_epoch: usize) -> String {
    let mut out = String::from("epoch,train_loss,validation_loss\n");
    for (i, t) in curve.train.iter().enumerate() {
        let v = curve.validation.get(i).map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{t},{v}\n", first_epoch + i + 1));
    }
    out
}

/// Trains the generator (and the discriminator if enabled) and writes
/// `model.ck`, `loss.csv` and `discriminator_loss.csv`. With `resume`, the
/// networks and optimizer state come from that checkpoint and training
/// continues its epoch count.
pub fn train(cfg: &ExperimentConfig, out: &Path, resume: Option<&Path>) -> Result<TrainOutcome> {
    ensure_dir(out)?;
    let dataset = cfg
        .train
        .dataset
        .clone()
        .unwrap_or_else(|| out.join("dataset.jsonl"));
    let full = load_training_set(&dataset)?;
    let seed = cfg.train.generator.seed;
    let (train_set, val_set) = full.split(cfg.train.validation_fraction, seed);
    info!("{} training tuples, {} held out", train_set.len(), val_set.len());

    let previous = resume.map(Checkpoint::load).transpose()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (mut gen, mut gen_trainer) = match &previous {
        Some(ck) => {
            let gen = ck.generator()?;
            let trainer = ck
                .generator_trainer()
                .unwrap_or_else(|| GeneratorTrainer::new(&gen, cfg.train.generator.lr));
            (gen, trainer)
        }
        None => {
            let gen = Generator::new(3, &mut rng);
            let trainer = GeneratorTrainer::new(&gen, cfg.train.generator.lr);
            (gen, trainer)
        }
    };
    let first_epoch = gen_trainer.epochs_done;
    let validation = (!val_set.is_empty()).then_some(&val_set);
    let gen_curve = gen_trainer.train(&mut gen, &train_set, validation, &cfg.train.generator)?;

    let mut ck = Checkpoint::new(seed);
    if let Some(prev) = &previous {
        ck.generator_losses = prev.generator_losses.clone();
        ck.discriminator_losses = prev.discriminator_losses.clone();
    }
    ck.generator_losses.train.extend(&gen_curve.train);
    ck.generator_losses.validation.extend(&gen_curve.validation);
    ck.put_generator(&gen, Some(&gen_trainer));

    let mut disc_curve = LossCurve::default();
    if cfg.train.discriminator {
        let sys = ConstraintSystem::sphere();
        let mut ds = distance_set(&train_set, &sys, cfg.train.negatives, NEGATIVE_RADIUS, seed)?;
        if let SceneSource::Generate { spec, .. } = &cfg.scenes {
            let base = seed ^ EXTRA_SCENE_SEED;
            for k in 0..cfg.train.discriminator_scenes {
                let g = spec.generate(derive_seed(base, k as u64))?;
                ds.add_scene(
                    EXTRA_SCENE_ID + k,
                    g.scene.voxels().clone(),
                    &sys,
                    cfg.train.samples_per_scene,
                    NEGATIVE_RADIUS,
                    derive_seed(base ^ 1, k as u64),
                )?;
            }
        }
        let (mut disc, mut trainer) = match previous.as_ref().and_then(|p| {
            Some((p.discriminator().ok()??, p.discriminator_trainer()?))
        }) {
            Some(pair) => pair,
            None => {
                let disc = Discriminator::new(3, &mut rng);
                let trainer = DiscriminatorTrainer::new(&disc, cfg.train.generator.lr);
                (disc, trainer)
            }
        };
        trainer.latent_noise = cfg.train.latent_noise;
        let dcfg = cmplan_core::neural::TrainConfig {
            epochs: cfg.train.discriminator_epochs,
            ..cfg.train.generator.clone()
        };
        disc_curve = trainer.train(&mut disc, &gen, &ds, &dcfg)?;
        ck.discriminator_losses.train.extend(&disc_curve.train);
        ck.put_discriminator(&disc, Some(&trainer));
    } else if let Some(prev) = &previous {
        if let Some(e) = prev.get(cmplan_core::neural::checkpoint::DISCRIMINATOR) {
            ck.put(&e.name, &e.net, e.opt.as_ref(), e.epochs_done);
        }
    }

    let path = out.join("model.ck");
    ck.save(&path)?;
    write(&out.join("loss.csv"), loss_csv(&gen_curve, first_epoch))?;
    write(&out.join("discriminator_loss.csv"), loss_csv(&disc_curve, 0))?;
    Ok(TrainOutcome {
        checkpoint: path,
        generator: gen_curve,
        discriminator: disc_curve,
        first_epoch,
    })
}

fn load_models(cfg: &ExperimentConfig, cells: &[Cell]) -> Result<Option<Models>> {
    if cells.iter().any(|c| c.sampler == SamplerKind::Compnetx) {
        Ok(Some(Models::load(&cfg.neural)?))
    } else {
        Ok(None)
    }
}

pub fn record_line(r: &RunRecord) -> String {
    format!(
        "problem {} [{}]: success={} wall_time={:.4}s path_length={} iterations={} charts_created={} projection_calls={} nproj_calls={}",
        r.problem_id,
        r.cell,
        r.success,
        r.wall_time,
        r.path_length.map_or("-".to_string(), |l| l.to_string()),
        r.iterations,
        r.charts_created,
        r.projection_calls,
        r.nproj_calls
    )
}

/// Solves one problem with one cell. Writes `path.csv` on success and
/// `plan_record.csv` / `plan_timing.csv` either way.
pub fn plan(cfg: &ExperimentConfig, out: &Path, problem_id: usize, cell: Cell) -> Result<RunRecord> {
    cfg.check_files(&[cell])?;
    ensure_dir(out)?;
    let set = ProblemSet::load(cfg)?;
    let problem = set
        .get(problem_id)
        .with_context(|| format!("problem {problem_id} does not exist ({} problems)", set.problems.len()))?;
    let models = load_models(cfg, &[cell])?;
    let run = run_problem(cfg, &set, problem, cell, models.as_ref())?;
    let path_file = out.join("path.csv");
    match &run.path {
        Some(p) => write(&path_file, path_csv(&p.waypoints))?,
        None => {
            if path_file.exists() {
                fs::remove_file(&path_file)?;
            }
        }
    }
    write(&out.join("plan_record.csv"), records_csv(std::slice::from_ref(&run.record)))?;
    write(&out.join("plan_timing.csv"), timings_csv(std::slice::from_ref(&run.record)))?;
    Ok(run.record)
}

/// Runs the experiment matrix. Writes `records.csv`, `timings.csv` and
/// `summary.toml`, and with `emit_paths` one path file per successful run
/// under `paths/`.
pub fn bench(cfg: &ExperimentConfig, out: &Path, cells: &[Cell], emit_paths: bool) -> Result<Summary> {
    cfg.check_files(cells)?;
    ensure_dir(out)?;
    let set = ProblemSet::load(cfg)?;
    let models = load_models(cfg, cells)?;
    let runs = run_bench(cfg, &set, cells, models.as_ref(), cfg.jobs)?;
    let records: Vec<RunRecord> = runs.iter().map(|r| r.record.clone()).collect();
    write(&out.join("records.csv"), records_csv(&records))?;
    write(&out.join("timings.csv"), timings_csv(&records))?;
    let summary = summarize(cells, &records);
    write(&out.join("summary.toml"), toml::to_string(&summary)?)?;
    if emit_paths {
        let dir = out.join("paths");
        ensure_dir(&dir)?;
        for r in &runs {
            if let Some(p) = &r.path {
                let name = format!(
                    "{}_{:05}.csv",
                    r.record.cell.to_string().replace('/', "_"),
                    r.record.problem_id
                );
                write(&dir.join(name), path_csv(&p.waypoints))?;
            }
        }
    }
    Ok(summary)
}

/// Where `verify` takes the world and the expected endpoints from.
pub enum VerifyTarget<'a> {
    /// A problem of the configured problem set.
    Problem(&'a ExperimentConfig, usize),
    /// A scene file; endpoints are not checked.
    Scene(&'a Path),
}

pub const DEFAULT_MAX_GAP: f64 = 0.25;

/// Re-validates a path file. Returns the list of violations.
pub fn verify(path_file: &Path, target: VerifyTarget<'_>, max_gap: f64) -> Result<Vec<String>> {
    let text = fs::read_to_string(path_file)
        .with_context(|| format!("cannot read path file {}", path_file.display()))?;
    let waypoints = parse_path_csv(&text)?;
    let sys = ConstraintSystem::sphere();
    let (scene, endpoints, tolerance) = match target {
        VerifyTarget::Problem(cfg, id) => {
            let set = ProblemSet::load(cfg)?;
            let Some(p) = set.get(id) else {
                bail!("problem {id} does not exist");
            };
            let tol = cfg.integrator.gamma * cfg.integrator.lambda1;
            (set.scene_of(p).clone(), Some(p.pair.configs()), tol)
        }
        VerifyTarget::Scene(file) => {
            let tol = IntegratorParams::default().gamma * IntegratorParams::default().lambda1;
            (GeneratedScene::load(file)?, None, tol)
        }
    };
    let spec = VerifySpec {
        sys: &sys,
        scene: &scene.scene,
        endpoints,
        goal_tolerance: tolerance + 1e-12,
        max_gap,
    };
    Ok(verify_path(&waypoints, &spec))
}
