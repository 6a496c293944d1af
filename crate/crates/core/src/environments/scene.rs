use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::voxel::{voxelize, VoxelGrid};
use crate::collision::CollisionChecker;
use crate::constraint::Config;

/// An obstacle volume around the unit sphere.
///
/// Angular extents are measured on the unit sphere and a volume spans radii
/// `1 ± radial_half`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Obstacle {
    /// A patch centered at a unit vector. `half_widths` are the angular
    /// half-extents along the local east and north directions.
    Block {
        center: [f64; 3],
        half_widths: [f64; 2],
        radial_half: f64,
    },
    /// A pole-to-pole band of constant angular half-width around the half
    /// meridian at `longitude`. The band is absent inside each latitude
    /// interval of `gaps`, which form the passages.
    Strip {
        longitude: f64,
        half_width: f64,
        gaps: Vec<[f64; 2]>,
        radial_half: f64,
    },
}

/// Per-obstacle data precomputed for fast membership queries.
#[derive(Debug, Clone)]
enum Compiled {
    Block {
        center: Vector3<f64>,
        east: Vector3<f64>,
        north: Vector3<f64>,
        tan_half: [f64; 2],
        min_dot: f64,
        radial_half: f64,
    },
    Strip {
        meridian: Vector3<f64>,
        normal: Vector3<f64>,
        sin_half: f64,
        cos_half: f64,
        gaps: Vec<[f64; 2]>,
        radial_half: f64,
    },
}

/// Local east/north frame at a unit vector.
pub fn local_frame(c: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let z = Vector3::z();
    let e = z.cross(c);
    let east = if e.norm() > 1e-9 {
        e.normalize()
    } else {
        Vector3::y()
    };
    let north = c.cross(&east);
    (east, north)
}

impl Obstacle {
    fn compile(&self) -> Compiled {
        match self {
            Obstacle::Block {
                center,
                half_widths,
                radial_half,
            } => {
                let c = Vector3::from(*center).normalize();
                let (east, north) = local_frame(&c);
                let tan_half = [half_widths[0].tan(), half_widths[1].tan()];
                let min_dot = 1.0 / (1.0 + tan_half[0].powi(2) + tan_half[1].powi(2)).sqrt();
                Compiled::Block {
                    center: c,
                    east,
                    north,
                    tan_half,
                    min_dot,
                    radial_half: *radial_half,
                }
            }
            Obstacle::Strip {
                longitude,
                half_width,
                gaps,
                radial_half,
            } => Compiled::Strip {
                meridian: Vector3::new(longitude.cos(), longitude.sin(), 0.0),
                normal: Vector3::new(-longitude.sin(), longitude.cos(), 0.0),
                sin_half: half_width.min(std::f64::consts::FRAC_PI_2).sin(),
                cos_half: half_width.min(std::f64::consts::PI).cos(),
                gaps: gaps.clone(),
                radial_half: *radial_half,
            },
        }
    }

    /// Whether the point lies inside this obstacle.
    pub fn contains(&self, q: &[f64; 3]) -> bool {
        self.compile().contains(&Vector3::from(*q))
    }
}

impl Compiled {
    fn contains(&self, q: &Vector3<f64>) -> bool {
        let r = q.norm();
        match self {
            Compiled::Block {
                center,
                east,
                north,
                tan_half,
                min_dot,
                radial_half,
            } => {
                if (r - 1.0).abs() > *radial_half || r == 0.0 {
                    return false;
                }
                let dc = center.dot(q) / r;
                if dc < *min_dot {
                    return false;
                }
                let de = east.dot(q) / r;
                let dn = north.dot(q) / r;
                de.abs() <= dc * tan_half[0] && dn.abs() <= dc * tan_half[1]
            }
            Compiled::Strip {
                meridian,
                normal,
                sin_half,
                cos_half,
                gaps,
                radial_half,
            } => {
                if (r - 1.0).abs() > *radial_half || r == 0.0 {
                    return false;
                }
                let d = q / r;
                let lat = d.z.clamp(-1.0, 1.0).asin();
                if gaps.iter().any(|g| lat >= g[0] && lat <= g[1]) {
                    return false;
                }
                if *cos_half <= -1.0 + 1e-12 {
                    return true;
                }
                if meridian.dot(&d) >= 0.0 {
                    normal.dot(&d).abs() <= *sin_half
                } else {
                    // Closest point of the half meridian is a pole.
                    d.z.abs() >= *cos_half
                }
            }
        }
    }

    fn radial_half(&self) -> f64 {
        match self {
            Compiled::Block { radial_half, .. } | Compiled::Strip { radial_half, .. } => {
                *radial_half
            }
        }
    }
}

/// Scene family tag kept in scene files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Scenario1,
    Scenario2,
    Custom,
}

const BUCKET_ANGLE: f64 = std::f64::consts::PI / 36.0;

/// Coarse latitude/longitude buckets listing the blocks that may touch each
/// bucket. Strips are checked unconditionally.
#[derive(Debug, Clone, Default)]
struct BucketIndex {
    n_lat: usize,
    n_lon: usize,
    buckets: Vec<Vec<u32>>,
    always: Vec<u32>,
}

impl BucketIndex {
    fn build(compiled: &[Compiled]) -> Self {
        use std::f64::consts::PI;
        let n_lat = (PI / BUCKET_ANGLE).round() as usize;
        let n_lon = 2 * n_lat;
        let mut index = Self {
            n_lat,
            n_lon,
            buckets: vec![Vec::new(); n_lat * n_lon],
            always: Vec::new(),
        };
        // Any point of a bucket lies within this angle of the bucket center.
        let bucket_radius = (2.0 * (BUCKET_ANGLE / 2.0).powi(2)).sqrt() * 1.01;
        for (id, o) in compiled.iter().enumerate() {
            match o {
                Compiled::Block {
                    center, min_dot, ..
                } => {
                    let reach = min_dot.clamp(-1.0, 1.0).acos() + bucket_radius;
                    let cos_reach = reach.min(PI).cos();
                    for a in 0..n_lat {
                        for b in 0..n_lon {
                            let lat = -PI / 2.0 + (a as f64 + 0.5) * BUCKET_ANGLE;
                            let lon = -PI + (b as f64 + 0.5) * BUCKET_ANGLE;
                            let c = Vector3::new(lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin());
                            // Near the poles buckets are narrower than at the
                            // equator, so the equatorial radius is conservative.
                            if c.dot(center) >= cos_reach {
                                index.buckets[a * n_lon + b].push(id as u32);
                            }
                        }
                    }
                }
                Compiled::Strip { .. } => index.always.push(id as u32),
            }
        }
        index
    }

    fn candidates(&self, d: &Vector3<f64>) -> impl Iterator<Item = u32> + '_ {
        use std::f64::consts::PI;
        let lat = d.z.clamp(-1.0, 1.0).asin();
        let lon = d.y.atan2(d.x);
        let a = (((lat + PI / 2.0) / BUCKET_ANGLE) as usize).min(self.n_lat - 1);
        let b = (((lon + PI) / BUCKET_ANGLE) as usize).min(self.n_lon - 1);
        self.buckets[a * self.n_lon + b]
            .iter()
            .chain(self.always.iter())
            .copied()
    }
}

/// A point-robot world around the unit sphere with its rasterized occupancy.
#[derive(Debug, Clone)]
pub struct SphereScene {
    pub seed: u64,
    pub kind: ScenarioKind,
    obstacles: Vec<Obstacle>,
    compiled: Vec<Compiled>,
    index: BucketIndex,
    max_radial: f64,
    voxels: VoxelGrid,
}

impl PartialEq for SphereScene {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed && self.kind == other.kind && self.obstacles == other.obstacles
    }
}

impl SphereScene {
    pub fn new(seed: u64, kind: ScenarioKind, obstacles: Vec<Obstacle>) -> Self {
        let compiled: Vec<Compiled> = obstacles.iter().map(Obstacle::compile).collect();
        let max_radial = compiled
            .iter()
            .map(Compiled::radial_half)
            .fold(0.0, f64::max);
        let index = BucketIndex::build(&compiled);
        let mut scene = Self {
            seed,
            kind,
            obstacles,
            compiled,
            index,
            max_radial,
            voxels: VoxelGrid::empty(),
        };
        scene.voxels = voxelize(&scene);
        scene
    }

    pub fn empty() -> Self {
        Self::new(0, ScenarioKind::Custom, Vec::new())
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.obstacles
    }

    pub fn voxels(&self) -> &VoxelGrid {
        &self.voxels
    }

    pub fn contains_point(&self, q: &Vector3<f64>) -> bool {
        let r = q.norm();
        if (r - 1.0).abs() > self.max_radial || r == 0.0 {
            return false;
        }
        self.index
            .candidates(&(q / r))
            .any(|id| self.compiled[id as usize].contains(q))
    }

    /// Reference membership test without the bucket index.
    pub fn contains_point_exhaustive(&self, q: &Vector3<f64>) -> bool {
        self.compiled.iter().any(|o| o.contains(q))
    }
}

impl CollisionChecker for SphereScene {
    fn in_collision(&self, q: &Config) -> bool {
        if q.len() != 3 {
            return false;
        }
        self.contains_point(&Vector3::new(q[0], q[1], q[2]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn v(xs: &[f64]) -> Config {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn empty_scene_never_collides() {
        let scene = SphereScene::empty();
        assert!(!scene.in_collision(&v(&[1.0, 0.0, 0.0])));
        assert!(!scene.in_collision(&v(&[0.0, 0.0, 0.0])));
    }

    #[test]
    fn block_contains_its_center_only_nearby() {
        let c = [0.0, 0.6, 0.8];
        let scene = SphereScene::new(
            0,
            ScenarioKind::Custom,
            vec![Obstacle::Block {
                center: c,
                half_widths: [0.05, 0.03],
                radial_half: 0.1,
            }],
        );
        assert!(scene.in_collision(&v(&c)));
        assert!(scene.in_collision(&v(&[0.0, 0.63, 0.84])));
        assert!(!scene.in_collision(&v(&[0.0, -0.6, -0.8])));
        assert!(!scene.in_collision(&v(&[0.0, 0.3, 0.4])));
        // Rotated 0.04 rad toward north: outside the 0.03 north half-width.
        let (east, north) = local_frame(&Vector3::from(c));
        let rotated = Vector3::from(c) * 0.04f64.cos() + north * 0.04f64.sin();
        assert!(!scene.contains_point(&rotated));
        let rotated = Vector3::from(c) * 0.04f64.cos() + east * 0.04f64.sin();
        assert!(scene.contains_point(&rotated));
    }

    #[test]
    fn bucket_index_matches_exhaustive_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let obstacles = (0..300)
            .map(|_| {
                let c = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
                .normalize();
                Obstacle::Block {
                    center: [c.x, c.y, c.z],
                    half_widths: [rng.random_range(0.02..0.2), rng.random_range(0.02..0.2)],
                    radial_half: 0.1,
                }
            })
            .collect();
        let scene = SphereScene::new(0, ScenarioKind::Custom, obstacles);
        for _ in 0..20_000 {
            let q = Vector3::new(
                rng.random_range(-1.1..1.1),
                rng.random_range(-1.1..1.1),
                rng.random_range(-1.1..1.1),
            );
            assert_eq!(scene.contains_point(&q), scene.contains_point_exhaustive(&q));
        }
    }

    #[test]
    fn strip_respects_gaps_and_seals_poles() {
        let strip = Obstacle::Strip {
            longitude: 0.0,
            half_width: 0.05,
            gaps: vec![[-0.1, 0.1]],
            radial_half: 0.1,
        };
        let at = |lat: f64, lon: f64| [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()];
        assert!(!strip.contains(&at(0.0, 0.0)));
        assert!(strip.contains(&at(0.5, 0.0)));
        assert!(strip.contains(&at(0.5, 0.04)));
        assert!(!strip.contains(&at(0.5, 0.2)));
        assert!(!strip.contains(&at(0.5, std::f64::consts::PI)));
        assert!(strip.contains(&[0.0, 0.0, 1.0]));
        assert!(strip.contains(&at(1.54, 2.0)));
    }
}
