//! Sphere benchmark worlds: obstacle scenes, occupancy grids, scene and
//! problem generators, and oracle datasets.

mod dataset;
mod generate;
mod scene;
mod voxel;

pub use dataset::{
    gen_dataset, read_jsonl, resample_by_arc_length, voxel_ref, write_jsonl, DatasetOutput,
    DatasetRecord, OracleConfig, OraclePath,
};
pub use generate::{
    derive_seed, from_lat_lon, gen_problem_set, gen_scenario1, gen_scenario2,
    great_circle_blocked, random_unit, GeneratedScene, ProblemPair, Scenario1Params,
    Scenario2Params, SceneSpec, SurfaceMap, SURFACE_CELL,
};
pub use scene::{local_frame, Obstacle, ScenarioKind, SphereScene};
pub use voxel::{voxelize, VoxelGrid, VOXEL_EXTENT, VOXEL_RESOLUTION};
