//! Constrained sampling-based motion planning on implicit manifolds.
//!
//! The crate covers constraint projection, atlas-based continuation, three
//! constraint-adherent local integrators, RRTConnect and FMT* planners over
//! a constrained configuration space, the sphere benchmark worlds, and a
//! learned sampling layer (generator, discriminator, neural projection).

pub mod atlas;
pub mod collision;
pub mod constraint;
pub mod environments;
pub mod error;
pub mod integrators;
pub mod neural;
pub mod planners;
pub mod space;

pub use atlas::{Atlas, AtlasParams, Chart};
pub use collision::{CollisionChecker, FreeSpace};
pub use constraint::{Config, Constraint, ConstraintSystem, SphereConstraint};
pub use error::{Error, Result};
pub use integrators::{Adherence, IntegratorParams, Motion};
pub use planners::{
    fmt_star, rrt_connect, shortcut_smooth, validate_path, BatchSampler, Path, PlanProblem,
    PlanReport, PlanRng, TreeSampler, UniformSampler,
};
pub use space::{ConstrainedSpace, SampleMode, SpaceStats};
