//! Oracle demonstrations for training.
//!
//! Each solved problem contributes one record per consecutive waypoint pair
//! of its (smoothed, resampled) path. Records are stored one JSON object per
//! line; voxel grids live in per-scene sidecar files named by `voxel_ref`.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path as FsPath;
use std::time::Duration;

use log::warn;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generate::{derive_seed, GeneratedScene};
use crate::atlas::AtlasParams;
use crate::constraint::{Config, ConstraintSystem};
use crate::error::{Error, Result};
use crate::integrators::{Adherence, IntegratorParams};
use crate::planners::{rrt_connect, shortcut_smooth, PlanProblem, PlanRng, UniformSampler};
use crate::space::ConstrainedSpace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub scene_id: usize,
    pub voxel_ref: String,
    pub q_curr: Vec<f64>,
    pub q_targ: Vec<f64>,
    pub q_next: Vec<f64>,
}

pub fn voxel_ref(scene_id: usize) -> String {
    format!("scene_{scene_id:04}.vox")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub integrator: IntegratorParams,
    pub atlas: AtlasParams,
    pub time_budget_secs: f64,
    pub max_iters: usize,
    pub smoothing_attempts: usize,
    /// Arc length between retained waypoints of an emitted path.
    pub waypoint_spacing: f64,
    /// Also emit every path in the goal-to-start direction.
    pub both_directions: bool,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            integrator: IntegratorParams::default(),
            atlas: AtlasParams::default(),
            time_budget_secs: 10.0,
            max_iters: 10_000,
            smoothing_attempts: 100,
            waypoint_spacing: 0.3,
            both_directions: true,
            seed: 0,
        }
    }
}

/// One emitted demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct OraclePath {
    pub scene_id: usize,
    pub pair_index: usize,
    pub reversed: bool,
    pub waypoints: Vec<Config>,
}

#[derive(Debug, Clone, Default)]
pub struct DatasetOutput {
    pub records: Vec<DatasetRecord>,
    pub paths: Vec<OraclePath>,
    pub attempted: usize,
    /// `(scene_id, pair_index)` of problems the oracle did not solve.
    pub failures: Vec<(usize, usize)>,
}

impl DatasetOutput {
    pub fn success_rate(&self) -> f64 {
        if self.attempted == 0 {
            return 1.0;
        }
        1.0 - self.failures.len() as f64 / self.attempted as f64
    }
}

/// Keeps the first and last waypoint and every waypoint that lies at least
/// `spacing` of arc length past the previously kept one.
pub fn resample_by_arc_length(waypoints: &[Config], spacing: f64) -> Vec<Config> {
    let Some(first) = waypoints.first() else {
        return Vec::new();
    };
    let mut out = vec![first.clone()];
    let mut walked = 0.0;
    for w in waypoints.windows(2) {
        walked += (&w[1] - &w[0]).norm();
        if walked >= spacing {
            out.push(w[1].clone());
            walked = 0.0;
        }
    }
    let last = waypoints.last().expect("non-empty");
    if out.last() != Some(last) {
        if out.len() > 1 && walked < spacing / 2.0 {
            out.pop();
        }
        out.push(last.clone());
    }
    out
}

fn solve_pair(
    sys: &ConstraintSystem,
    g: &GeneratedScene,
    scene_id: usize,
    pair_index: usize,
    oracle: &OracleConfig,
) -> Option<Vec<Config>> {
    let (q_init, q_goal) = g.pairs[pair_index].configs();
    let mut space = ConstrainedSpace::new(
        sys,
        &g.scene,
        Adherence::Atlas,
        oracle.integrator.clone(),
        oracle.atlas.clone(),
    );
    let problem = PlanProblem::new(q_init.clone(), q_goal.clone()).with_budget(
        Duration::from_secs_f64(oracle.time_budget_secs),
        oracle.max_iters,
    );
    let seed = derive_seed(oracle.seed, ((scene_id as u64) << 32) | pair_index as u64);
    let mut rng = PlanRng::seed_from_u64(seed);
    let report = rrt_connect(&problem, &mut space, &mut UniformSampler, &mut rng).ok()?;
    let path = report.path?;
    let smoothed = shortcut_smooth(&path, &mut space, oracle.smoothing_attempts, &mut rng);
    let mut waypoints = resample_by_arc_length(&smoothed.waypoints, oracle.waypoint_spacing);
    // The tree bridge leaves the last waypoint within tolerance of the goal;
    // the demonstration ends exactly at the goal.
    if waypoints.last() != Some(&q_goal) {
        waypoints.push(q_goal);
    }
    Some(waypoints)
}

fn records_for(path: &OraclePath) -> Vec<DatasetRecord> {
    let target = path.waypoints.last().expect("non-empty");
    path.waypoints
        .windows(2)
        .map(|w| DatasetRecord {
            scene_id: path.scene_id,
            voxel_ref: voxel_ref(path.scene_id),
            q_curr: w[0].as_slice().to_vec(),
            q_targ: target.as_slice().to_vec(),
            q_next: w[1].as_slice().to_vec(),
        })
        .collect()
}

/// Solves every pair of every scene with the atlas RRTConnect oracle, smooths
/// and resamples the paths, and emits training records. `scenes` pairs each
/// scene with its id. Results do not depend on `jobs`.
pub fn gen_dataset(
    scenes: &[(usize, &GeneratedScene)],
    oracle: &OracleConfig,
    jobs: usize,
) -> Result<DatasetOutput> {
    let sys = ConstraintSystem::sphere();
    let work: Vec<(usize, &GeneratedScene, usize)> = scenes
        .iter()
        .flat_map(|&(id, g)| (0..g.pairs.len()).map(move |p| (id, g, p)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Generation(e.to_string()))?;
    let solved: Vec<Option<Vec<Config>>> = pool.install(|| {
        work.par_iter()
            .map(|&(id, g, p)| solve_pair(&sys, g, id, p, oracle))
            .collect()
    });

    let mut out = DatasetOutput {
        attempted: work.len(),
        ..Default::default()
    };
    for (&(scene_id, _, pair_index), waypoints) in work.iter().zip(solved) {
        let Some(waypoints) = waypoints else {
            warn!("oracle failed on scene {scene_id} pair {pair_index}");
            out.failures.push((scene_id, pair_index));
            continue;
        };
        let mut emitted = vec![OraclePath {
            scene_id,
            pair_index,
            reversed: false,
            waypoints: waypoints.clone(),
        }];
        if oracle.both_directions {
            emitted.push(OraclePath {
                scene_id,
                pair_index,
                reversed: true,
                waypoints: waypoints.into_iter().rev().collect(),
            });
        }
        for path in emitted {
            out.records.extend(records_for(&path));
            out.paths.push(path);
        }
    }
    Ok(out)
}

pub fn write_jsonl(records: &[DatasetRecord], path: impl AsRef<FsPath>) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: impl AsRef<FsPath>) -> Result<Vec<DatasetRecord>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::generate::{gen_scenario1, Scenario1Params};
    use nalgebra::DVector;

    #[test]
    fn resampling_keeps_endpoints_and_spacing() {
        let pts: Vec<Config> = (0..=100)
            .map(|i| DVector::from_column_slice(&[i as f64 * 0.01, 0.0]))
            .collect();
        let out = resample_by_arc_length(&pts, 0.3);
        assert_eq!(out.first(), pts.first());
        assert_eq!(out.last(), pts.last());
        assert_eq!(out.len(), 4);
        for w in out.windows(2) {
            let d = (&w[1] - &w[0]).norm();
            assert!(d >= 0.15 - 1e-9 && d <= 0.45 + 1e-9, "{d}");
        }
    }

    #[test]
    fn dataset_counts_and_membership() {
        let g = gen_scenario1(
            21,
            &Scenario1Params {
                n_obstacles: 200,
                n_pairs: 4,
                ..Default::default()
            },
        )
        .unwrap();
        let oracle = OracleConfig::default();
        let out = gen_dataset(&[(3, &g)], &oracle, 2).unwrap();
        assert_eq!(out.attempted, 4);
        let expected: usize = out.paths.iter().map(|p| p.waypoints.len() - 1).sum();
        assert_eq!(out.records.len(), expected);
        let sys = ConstraintSystem::sphere();
        for r in &out.records {
            assert_eq!(r.scene_id, 3);
            assert_eq!(r.voxel_ref, "scene_0003.vox");
            assert!(sys.is_satisfied(&DVector::from_column_slice(&r.q_curr)));
        }
        let again = gen_dataset(&[(3, &g)], &oracle, 1).unwrap();
        assert_eq!(again.records, out.records);

        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("data.jsonl");
        write_jsonl(&out.records, &file).unwrap();
        assert_eq!(read_jsonl(&file).unwrap(), out.records);
    }
}
