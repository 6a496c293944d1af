//! Benchmark worlds and the numbered query list drawn from them.

use anyhow::{Context, Result};
use cmplan_core::environments::{
    derive_seed, gen_problem_set, random_unit, GeneratedScene, ProblemPair, SphereScene,
};
use rand::SeedableRng;

use crate::config::{ExperimentConfig, SceneSource};

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub id: usize,
    /// Index into [`ProblemSet::scenes`].
    pub scene: usize,
    pub pair: ProblemPair,
}

#[derive(Debug, Clone)]
pub struct ProblemSet {
    pub scenes: Vec<GeneratedScene>,
    pub problems: Vec<Problem>,
}

/// The scenes a source describes, in order.
pub fn load_scenes(source: &SceneSource, jobs: usize) -> Result<Vec<GeneratedScene>> {
    Ok(match source {
        SceneSource::Generate {
            spec,
            seed,
            count,
            skip,
        } => {
            let mut all = gen_problem_set(spec, *seed, skip + count, jobs)?;
            all.drain(..*skip);
            all
        }
        SceneSource::Files { paths } => paths
            .iter()
            .map(|p| {
                GeneratedScene::load(p).with_context(|| format!("cannot load scene {}", p.display()))
            })
            .collect::<Result<_>>()?,
        SceneSource::Free { pairs, seed } => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(*seed, 0));
            let pairs = (0..*pairs)
                .map(|_| ProblemPair {
                    q_init: random_unit(&mut rng).into(),
                    q_goal: random_unit(&mut rng).into(),
                })
                .collect();
            vec![GeneratedScene {
                scene: SphereScene::empty(),
                spec: None,
                pairs,
                rejected_pairs: 0,
            }]
        }
    })
}

impl ProblemSet {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Self::from_scenes(
            load_scenes(&cfg.scenes, cfg.jobs)?,
            cfg.problems,
            cfg.pairs_per_scene,
        ))
    }

    /// Takes pairs scene by scene, at most `per_scene` from each, until
    /// `limit` problems are collected.
    pub fn from_scenes(scenes: Vec<GeneratedScene>, limit: usize, per_scene: Option<usize>) -> Self {
        let mut problems = Vec::new();
        'outer: for (s, g) in scenes.iter().enumerate() {
            for pair in g.pairs.iter().take(per_scene.unwrap_or(usize::MAX)) {
                if problems.len() >= limit {
                    break 'outer;
                }
                problems.push(Problem {
                    id: problems.len(),
                    scene: s,
                    pair: pair.clone(),
                });
            }
        }
        Self { scenes, problems }
    }

    pub fn get(&self, id: usize) -> Option<&Problem> {
        self.problems.get(id)
    }

    pub fn scene_of(&self, p: &Problem) -> &GeneratedScene {
        &self.scenes[p.scene]
    }
}
