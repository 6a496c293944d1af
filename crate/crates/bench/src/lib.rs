//! Fixtures shared by the benchmarks.

use cmplan_core::environments::{random_unit, GeneratedScene, Scenario1Params, SceneSpec};
use cmplan_core::Config;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Off-manifold points with norms in [0.5, 1.5].
pub fn ambient_points(n: usize, seed: u64) -> Vec<Config> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let s = 0.5 + rand::Rng::random::<f64>(&mut r);
            Config::from_column_slice((random_unit(&mut r) * s).as_slice())
        })
        .collect()
}

/// Pairs of unit vectors.
pub fn sphere_pairs(n: usize, seed: u64) -> Vec<(Config, Config)> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let a = random_unit(&mut r);
            let b = random_unit(&mut r);
            (Config::from_column_slice(a.as_slice()), Config::from_column_slice(b.as_slice()))
        })
        .collect()
}

/// One default scenario-1 scene.
pub fn scenario1(seed: u64) -> GeneratedScene {
    SceneSpec::Scenario1(Scenario1Params::default())
        .generate(seed)
        .expect("default scene parameters are valid")
}
