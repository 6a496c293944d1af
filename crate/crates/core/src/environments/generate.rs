use std::collections::VecDeque;
use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::path::Path;

use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scene::{Obstacle, ScenarioKind, SphereScene};
use crate::constraint::Config;
use crate::error::{Error, Result};

/// Mixes a base seed with an index (splitmix64 finalizer) so that derived
/// streams do not depend on how work is split between workers.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

pub fn from_lat_lon(lat: f64, lon: f64) -> Vector3<f64> {
    Vector3::new(lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario1Params {
    pub n_obstacles: usize,
    /// Range of the angular half-widths of a block (radians).
    pub half_width_range: [f64; 2],
    pub radial_half: f64,
    pub n_pairs: usize,
}

impl Default for Scenario1Params {
    fn default() -> Self {
        Self {
            n_obstacles: 500,
            half_width_range: [0.03, 0.06],
            radial_half: 0.1,
            n_pairs: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario2Params {
    pub n_strips: usize,
    pub strip_half_width: f64,
    /// Latitude extent of each passage (radians).
    pub gap_width: f64,
    /// Inclusive range of passages per strip.
    pub gaps_per_strip: [usize; 2],
    pub radial_half: f64,
    pub n_pairs: usize,
    /// Integrator step the passages must admit.
    pub step: f64,
}

impl Default for Scenario2Params {
    fn default() -> Self {
        Self {
            n_strips: 4,
            strip_half_width: 0.05,
            gap_width: 0.2,
            gaps_per_strip: [1, 2],
            radial_half: 0.1,
            n_pairs: 500,
            step: 0.05,
        }
    }
}

/// Which generator produces a scene, with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "kebab-case")]
pub enum SceneSpec {
    Scenario1(Scenario1Params),
    Scenario2(Scenario2Params),
}

impl SceneSpec {
    pub fn generate(&self, seed: u64) -> Result<GeneratedScene> {
        match self {
            SceneSpec::Scenario1(p) => gen_scenario1(seed, p),
            SceneSpec::Scenario2(p) => gen_scenario2(seed, p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemPair {
    pub q_init: [f64; 3],
    pub q_goal: [f64; 3],
}

impl ProblemPair {
    pub fn configs(&self) -> (Config, Config) {
        (
            DVector::from_column_slice(&self.q_init),
            DVector::from_column_slice(&self.q_goal),
        )
    }
}

/// A scene and its start/goal pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScene {
    pub scene: SphereScene,
    pub spec: Option<SceneSpec>,
    pub pairs: Vec<ProblemPair>,
    /// Candidate pairs dropped by the feasibility filter.
    pub rejected_pairs: usize,
}

/// Rasterized free surface of the unit sphere on a latitude/longitude grid,
/// labeled by connected component.
#[derive(Debug, Clone)]
pub struct SurfaceMap {
    n_lat: usize,
    n_lon: usize,
    labels: Vec<u32>,
}

const OCCUPIED: u32 = u32::MAX;

impl SurfaceMap {
    pub fn build(scene: &SphereScene, cell: f64) -> Self {
        let n_lat = (PI / cell).ceil() as usize;
        let n_lon = 2 * n_lat;
        let d_lat = PI / n_lat as f64;
        let d_lon = TAU / n_lon as f64;
        let mut labels: Vec<u32> = (0..n_lat * n_lon)
            .map(|c| {
                let lat = -FRAC_PI_2 + ((c / n_lon) as f64 + 0.5) * d_lat;
                let lon = -PI + ((c % n_lon) as f64 + 0.5) * d_lon;
                if scene.contains_point(&from_lat_lon(lat, lon)) {
                    OCCUPIED
                } else {
                    OCCUPIED - 1
                }
            })
            .collect();
        let unlabeled = OCCUPIED - 1;
        let mut next = 0;
        let mut queue = VecDeque::new();
        for seed in 0..labels.len() {
            if labels[seed] != unlabeled {
                continue;
            }
            labels[seed] = next;
            queue.push_back(seed);
            while let Some(c) = queue.pop_front() {
                let (a, b) = (c / n_lon, c % n_lon);
                let mut neighbors = vec![
                    a * n_lon + (b + 1) % n_lon,
                    a * n_lon + (b + n_lon - 1) % n_lon,
                ];
                if a > 0 {
                    neighbors.push((a - 1) * n_lon + b);
                }
                if a + 1 < n_lat {
                    neighbors.push((a + 1) * n_lon + b);
                }
                if a == 0 || a + 1 == n_lat {
                    // Across the pole.
                    neighbors.push(a * n_lon + (b + n_lon / 2) % n_lon);
                }
                for nb in neighbors {
                    if labels[nb] == unlabeled {
                        labels[nb] = next;
                        queue.push_back(nb);
                    }
                }
            }
            next += 1;
        }
        Self {
            n_lat,
            n_lon,
            labels,
        }
    }

    /// Component label of the cell containing the direction of `q`, or
    /// `None` when that cell is occupied.
    pub fn component(&self, q: &Vector3<f64>) -> Option<u32> {
        let d = q.normalize();
        let lat = d.z.clamp(-1.0, 1.0).asin();
        let lon = d.y.atan2(d.x);
        let a = (((lat + FRAC_PI_2) / PI * self.n_lat as f64) as usize).min(self.n_lat - 1);
        let b = (((lon + PI) / TAU * self.n_lon as f64) as usize).min(self.n_lon - 1);
        let l = self.labels[a * self.n_lon + b];
        (l != OCCUPIED).then_some(l)
    }

    pub fn connected(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> bool {
        matches!((self.component(a), self.component(b)), (Some(x), Some(y)) if x == y)
    }
}

/// Raster cell used by the feasibility filter (radians).
pub const SURFACE_CELL: f64 = PI / 240.0;

/// Whether the shorter great-circle arc from `a` to `b` passes through an
/// obstacle, checked at the given angular resolution.
pub fn great_circle_blocked(
    scene: &SphereScene,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    step: f64,
) -> bool {
    let (a, b) = (a.normalize(), b.normalize());
    let theta = a.dot(&b).clamp(-1.0, 1.0).acos();
    if theta < 1e-12 {
        return scene.contains_point(&a);
    }
    let n = (theta / step).ceil() as usize;
    let s = theta.sin();
    (0..=n).any(|i| {
        let t = theta * i as f64 / n as f64;
        let p = a * ((theta - t).sin() / s) + b * (t.sin() / s);
        scene.contains_point(&p)
    })
}

fn pair_budget(n_pairs: usize) -> usize {
    20 * n_pairs + 200
}

fn to_array(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Scenario 1: `n_obstacles` blocks at uniformly random sphere locations.
pub fn gen_scenario1(seed: u64, params: &Scenario1Params) -> Result<GeneratedScene> {
    let [lo, hi] = params.half_width_range;
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::Precondition(
            "half-width range must be positive and ordered".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obstacles = (0..params.n_obstacles)
        .map(|_| {
            let c = random_unit(&mut rng);
            let hw = if hi > lo {
                [rng.random_range(lo..hi), rng.random_range(lo..hi)]
            } else {
                [lo, lo]
            };
            Obstacle::Block {
                center: to_array(&c),
                half_widths: hw,
                radial_half: params.radial_half,
            }
        })
        .collect();
    let scene = SphereScene::new(seed, ScenarioKind::Scenario1, obstacles);
    let map = SurfaceMap::build(&scene, SURFACE_CELL);

    let mut pairs = Vec::with_capacity(params.n_pairs);
    let mut rejected = 0;
    let mut attempts = 0;
    while pairs.len() < params.n_pairs {
        attempts += 1;
        if attempts > pair_budget(params.n_pairs) {
            return Err(Error::Generation(format!(
                "only {} of {} pairs after {} attempts",
                pairs.len(),
                params.n_pairs,
                attempts - 1
            )));
        }
        let a = random_unit(&mut rng);
        let b = random_unit(&mut rng);
        if scene.contains_point(&a) || scene.contains_point(&b) {
            continue;
        }
        if !map.connected(&a, &b) {
            rejected += 1;
            continue;
        }
        pairs.push(ProblemPair {
            q_init: to_array(&a),
            q_goal: to_array(&b),
        });
    }
    Ok(GeneratedScene {
        scene,
        spec: Some(SceneSpec::Scenario1(params.clone())),
        pairs,
        rejected_pairs: rejected,
    })
}

/// Scenario 2: pole-to-pole strips pierced by narrow passages.
///
/// Strips split the sphere into longitudinal cells arranged in a ring. Start
/// points are drawn from cell 0 and goals from the cell opposite it, so any
/// solution threads at least half of the strips' passages.
pub fn gen_scenario2(seed: u64, params: &Scenario2Params) -> Result<GeneratedScene> {
    if params.n_strips < 2 {
        return Err(Error::Precondition("at least two strips are required".into()));
    }
    if params.gap_width <= 2.0 * params.step {
        return Err(Error::Precondition(format!(
            "gap width {} must exceed twice the step {}",
            params.gap_width, params.step
        )));
    }
    let [gmin, gmax] = params.gaps_per_strip;
    if gmin > gmax {
        return Err(Error::Precondition("gaps_per_strip range is reversed".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.n_strips;
    let spacing = TAU / n as f64;
    let base = rng.random_range(0.0..TAU);
    let longitudes: Vec<f64> = (0..n)
        .map(|i| base + i as f64 * spacing + rng.random_range(-0.15..0.15) * spacing)
        .collect();
    // Passages stay away from the sealed polar caps.
    let lat_limit = 1.0;
    let obstacles: Vec<Obstacle> = longitudes
        .iter()
        .map(|&lon| {
            let count = rng.random_range(gmin..=gmax);
            let mut gaps: Vec<[f64; 2]> = Vec::with_capacity(count);
            let mut tries = 0;
            while gaps.len() < count && tries < 1000 {
                tries += 1;
                let c = rng.random_range(-lat_limit..lat_limit);
                let g = [c - params.gap_width / 2.0, c + params.gap_width / 2.0];
                if gaps.iter().all(|h| g[1] < h[0] - params.gap_width || g[0] > h[1] + params.gap_width) {
                    gaps.push(g);
                }
            }
            gaps.sort_by(|a, b| a[0].total_cmp(&b[0]));
            Obstacle::Strip {
                longitude: wrap_angle(lon),
                half_width: params.strip_half_width,
                gaps,
                radial_half: params.radial_half,
            }
        })
        .collect();
    let scene = SphereScene::new(seed, ScenarioKind::Scenario2, obstacles);
    let map = SurfaceMap::build(&scene, SURFACE_CELL);

    let cell_sample = |rng: &mut ChaCha8Rng, cell: usize| {
        let lo = longitudes[cell];
        let hi = longitudes[(cell + 1) % n] + if cell + 1 == n { TAU } else { 0.0 };
        let lon = rng.random_range(lo..hi);
        let z = rng.random_range(-lat_limit.sin()..lat_limit.sin());
        from_lat_lon(f64::asin(z), lon)
    };
    let goal_cell = n / 2;
    let mut pairs = Vec::with_capacity(params.n_pairs);
    let mut rejected = 0;
    let mut attempts = 0;
    while pairs.len() < params.n_pairs {
        attempts += 1;
        if attempts > pair_budget(params.n_pairs) {
            return Err(Error::Generation(format!(
                "only {} of {} feasible pairs after {} attempts",
                pairs.len(),
                params.n_pairs,
                attempts - 1
            )));
        }
        let a = cell_sample(&mut rng, 0);
        let b = cell_sample(&mut rng, goal_cell);
        if scene.contains_point(&a) || scene.contains_point(&b) {
            continue;
        }
        if !map.connected(&a, &b) || !great_circle_blocked(&scene, &a, &b, 0.005) {
            rejected += 1;
            continue;
        }
        pairs.push(ProblemPair {
            q_init: to_array(&a),
            q_goal: to_array(&b),
        });
    }
    Ok(GeneratedScene {
        scene,
        spec: Some(SceneSpec::Scenario2(params.clone())),
        pairs,
        rejected_pairs: rejected,
    })
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}

/// Generates `n_scenes` scenes with seeds derived from `base_seed`, using up
/// to `jobs` worker threads. The output does not depend on `jobs`.
pub fn gen_problem_set(
    spec: &SceneSpec,
    base_seed: u64,
    n_scenes: usize,
    jobs: usize,
) -> Result<Vec<GeneratedScene>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Generation(e.to_string()))?;
    pool.install(|| {
        (0..n_scenes)
            .into_par_iter()
            .map(|i| spec.generate(derive_seed(base_seed, i as u64)))
            .collect()
    })
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    seed: u64,
    kind: ScenarioKind,
    rejected_pairs: usize,
    params: Option<SceneSpec>,
    obstacles: Vec<Obstacle>,
    pairs: Vec<ProblemPair>,
}

impl GeneratedScene {
    pub fn to_toml(&self) -> Result<String> {
        let file = SceneFile {
            seed: self.scene.seed,
            kind: self.scene.kind,
            rejected_pairs: self.rejected_pairs,
            params: self.spec.clone(),
            obstacles: self.scene.obstacles().to_vec(),
            pairs: self.pairs.clone(),
        };
        toml::to_string(&file).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: SceneFile = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Self {
            scene: SphereScene::new(file.seed, file.kind, file.obstacles),
            spec: file.params,
            pairs: file.pairs,
            rejected_pairs: file.rejected_pairs,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}
