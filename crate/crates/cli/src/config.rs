//! Experiment configuration, read from a TOML file. Every section and field
//! has a default, so an empty file is a valid configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use cmplan_core::environments::{OracleConfig, Scenario1Params, SceneSpec};
use cmplan_core::neural::{NeuralParams, TrainConfig};
use cmplan_core::{Adherence, AtlasParams, IntegratorParams};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Planner {
    Rrtconnect,
    Fmtstar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Classical,
    Compnetx,
}

/// One (planner, adherence, sampler) combination of the experiment matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub planner: Planner,
    pub adherence: Adherence,
    pub sampler: SamplerKind,
}

impl Default for Cell {
    fn default() -> Self {
        Self {
            planner: Planner::Rrtconnect,
            adherence: Adherence::Atlas,
            sampler: SamplerKind::Classical,
        }
    }
}

fn enum_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn parse_enum<T: for<'de> Deserialize<'de>>(key: &str, value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| anyhow!("invalid {key} '{value}'"))
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}",
            enum_name(&self.planner),
            enum_name(&self.adherence),
            enum_name(&self.sampler)
        )
    }
}

/// Parses `planner=...,adherence=...,sampler=...`. Omitted keys take the
/// default cell's values.
impl FromStr for Cell {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut cell = Cell::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| anyhow!("expected key=value, got '{part}'"))?;
            match key.trim() {
                "planner" => cell.planner = parse_enum(key, value.trim())?,
                "adherence" => cell.adherence = parse_enum(key, value.trim())?,
                "sampler" => cell.sampler = parse_enum(key, value.trim())?,
                other => bail!("unknown cell key '{other}'"),
            }
        }
        Ok(cell)
    }
}

/// Where the benchmark worlds come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum SceneSource {
    /// `count` generated scenes, skipping the first `skip` seeds of the
    /// stream (held-out scenes follow the training scenes).
    Generate {
        spec: SceneSpec,
        seed: u64,
        count: usize,
        #[serde(default)]
        skip: usize,
    },
    /// Scene files written by `gen-scenes`.
    Files { paths: Vec<PathBuf> },
    /// The obstacle-free sphere with `pairs` random query pairs.
    Free { pairs: usize, seed: u64 },
}

impl Default for SceneSource {
    fn default() -> Self {
        SceneSource::Generate {
            spec: SceneSpec::Scenario1(Scenario1Params::default()),
            seed: 0,
            count: 1,
            skip: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FmtConfig {
    pub n_init: usize,
    pub radius: f64,
}

impl Default for FmtConfig {
    fn default() -> Self {
        Self {
            n_init: 500,
            radius: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeuralConfig {
    pub checkpoint: Option<PathBuf>,
    /// Gate generator proposals with the discriminator when the checkpoint
    /// holds one.
    pub use_discriminator: bool,
    #[serde(flatten)]
    pub params: NeuralParams,
}

impl Default for NeuralConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            use_discriminator: true,
            params: NeuralParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    /// Dataset file written by `gen-data`.
    pub dataset: Option<PathBuf>,
    #[serde(flatten)]
    pub generator: TrainConfig,
    /// Share of demonstrations held out for validation.
    pub validation_fraction: f64,
    pub discriminator: bool,
    pub discriminator_epochs: usize,
    /// Negative samples per positive in the discriminator set.
    pub negatives: usize,
    /// Scenes without demonstrations that only contribute labelled samples
    /// to discriminator training, drawn from the generated scene spec.
    pub discriminator_scenes: usize,
    pub samples_per_scene: usize,
    /// Gaussian noise on the scene latent of every discriminator row.
    pub latent_noise: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            dataset: None,
            generator: TrainConfig::default(),
            validation_fraction: 0.1,
            discriminator: true,
            discriminator_epochs: 10,
            negatives: 2,
            discriminator_scenes: 150,
            samples_per_scene: 400,
            latent_noise: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Upper bound on the number of problems taken from the scenes; pairs
    /// are taken scene by scene in order.
    pub problems: usize,
    /// Optional cap on the pairs taken from each scene.
    pub pairs_per_scene: Option<usize>,
    pub time_budget_secs: f64,
    pub max_iters: usize,
    pub smoothing_attempts: usize,
    pub jobs: usize,
    pub cells: Vec<Cell>,
    pub scenes: SceneSource,
    pub integrator: IntegratorParams,
    pub atlas: AtlasParams,
    pub fmt: FmtConfig,
    pub neural: NeuralConfig,
    pub oracle: OracleConfig,
    pub train: TrainSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            problems: 100,
            pairs_per_scene: None,
            time_budget_secs: 60.0,
            max_iters: 10_000,
            smoothing_attempts: 100,
            jobs: 1,
            cells: vec![Cell::default()],
            scenes: SceneSource::default(),
            integrator: IntegratorParams::default(),
            atlas: AtlasParams::default(),
            fmt: FmtConfig::default(),
            neural: NeuralConfig::default(),
            oracle: OracleConfig::default(),
            train: TrainSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("invalid configuration")?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Loads a configuration. Relative paths inside it are resolved against
    /// the directory of the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let SceneSource::Files { paths } = &mut cfg.scenes {
            paths.iter_mut().for_each(resolve);
        }
        cfg.neural.checkpoint.iter_mut().for_each(resolve);
        cfg.train.dataset.iter_mut().for_each(resolve);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.time_budget_secs > 0.0) {
            bail!("time_budget_secs must be positive");
        }
        if self.fmt.n_init < 2 || !(self.fmt.radius > 0.0) {
            bail!("fmt needs n_init ≥ 2 and a positive radius");
        }
        if self.neural.params.k == 0 {
            bail!("neural.k must be at least 1");
        }
        if !(self.train.latent_noise >= 0.0) {
            bail!("train.latent_noise must be non-negative");
        }
        if !(0.0..1.0).contains(&self.train.validation_fraction) {
            bail!("train.validation_fraction must lie in [0, 1)");
        }
        Ok(())
    }

    /// Checks that the files the given cells need exist.
    pub fn check_files(&self, cells: &[Cell]) -> Result<()> {
        if let SceneSource::Files { paths } = &self.scenes {
            for p in paths {
                if !p.is_file() {
                    bail!("scene file {} does not exist", p.display());
                }
            }
        }
        if cells.iter().any(|c| c.sampler == SamplerKind::Compnetx) {
            match &self.neural.checkpoint {
                None => bail!("the compnetx sampler needs neural.checkpoint"),
                Some(p) if !p.is_file() => bail!("checkpoint {} does not exist", p.display()),
                _ => {}
            }
        }
        Ok(())
    }
}
