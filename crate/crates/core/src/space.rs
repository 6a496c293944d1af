//! A constrained configuration space: constraint, collision world, the chosen
//! constraint-adherence method, and (for continuation methods) the atlas that
//! a single planning query grows.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::atlas::{psi_exp, Atlas, AtlasParams};
use crate::collision::CollisionChecker;
use crate::constraint::{Config, ConstraintSystem};
use crate::error::{Error, Result};
use crate::integrators::{
    atlas_integrate, projection_integrate, tb_integrate, Adherence, IntegratorParams, Motion,
};

/// Attempts per call before uniform manifold sampling gives up.
pub const SAMPLE_REJECTION_BUDGET: usize = 1000;

/// Where uniform samples come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleMode {
    /// Uniform in the ambient box, then projected.
    Projection,
    /// Uniform over the charts of the atlas, then mapped with `psi_exp`.
    Atlas,
}

/// Counters accumulated over the lifetime of a space.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SpaceStats {
    pub integrations: usize,
    pub projections: usize,
    pub charts_created: usize,
}

pub struct ConstrainedSpace<'a> {
    pub sys: &'a ConstraintSystem,
    pub scene: &'a dyn CollisionChecker,
    pub adherence: Adherence,
    pub params: IntegratorParams,
    pub atlas: Atlas,
    pub sample_mode: SampleMode,
    /// Half-extent of the ambient sampling box.
    pub bounds: f64,
    pub stats: SpaceStats,
}

impl<'a> ConstrainedSpace<'a> {
    pub fn new(
        sys: &'a ConstraintSystem,
        scene: &'a dyn CollisionChecker,
        adherence: Adherence,
        params: IntegratorParams,
        atlas_params: AtlasParams,
    ) -> Self {
        let sample_mode = if adherence.uses_atlas() {
            SampleMode::Atlas
        } else {
            SampleMode::Projection
        };
        Self {
            sys,
            scene,
            adherence,
            params,
            atlas: Atlas::new(atlas_params),
            sample_mode,
            bounds: 1.2,
            stats: SpaceStats::default(),
        }
    }

    pub fn with_sample_mode(mut self, mode: SampleMode) -> Self {
        self.sample_mode = mode;
        self
    }

    pub fn goal_tolerance(&self) -> f64 {
        self.params.goal_tolerance()
    }

    /// On-manifold and collision-free.
    pub fn is_valid(&self, q: &Config) -> bool {
        self.sys.is_satisfied(q) && !self.scene.in_collision(q)
    }

    /// Runs the configured integrator. Every returned state is on the
    /// manifold: lazy tangent-bundle states are projected before they are
    /// handed to a planner, and the motion is cut at the first state that
    /// cannot be.
    pub fn integrate(&mut self, from: &Config, to: &Config) -> Result<Motion> {
        self.stats.integrations += 1;
        let before = self.atlas.len();
        let mut motion = match self.adherence {
            Adherence::Projection => {
                projection_integrate(self.sys, self.scene, from, to, &self.params)?
            }
            Adherence::Atlas => {
                atlas_integrate(self.sys, self.scene, &mut self.atlas, from, to, &self.params)?
            }
            Adherence::TangentBundle => {
                let raw =
                    tb_integrate(self.sys, self.scene, &mut self.atlas, from, to, &self.params)?;
                self.settle_lazy_states(raw, to)
            }
        };
        self.stats.projections += motion.projections;
        self.stats.charts_created += self.atlas.len() - before;
        motion.charts_created = self.atlas.len() - before;
        Ok(motion)
    }

    fn settle_lazy_states(&mut self, mut motion: Motion, to: &Config) -> Motion {
        let mut settled = Vec::with_capacity(motion.states.len());
        for q in motion.states.drain(..) {
            let q = if self.sys.is_satisfied(&q) {
                q
            } else {
                motion.projections += 1;
                match self.sys.project(&q) {
                    Ok(p) if !self.scene.in_collision(&p) => p,
                    _ => break,
                }
            };
            settled.push(q);
        }
        let reached = motion.reached
            && settled.len() > 0
            && (settled.last().expect("non-empty") - to).norm() <= self.goal_tolerance();
        Motion {
            states: settled,
            reached,
            ..motion
        }
    }

    /// Projects `q` onto the manifold, counting the call.
    pub fn project(&mut self, q: &Config) -> Result<Config> {
        self.stats.projections += 1;
        self.sys.project(q)
    }

    /// A uniformly drawn valid configuration, using the space's sample mode.
    pub fn sample_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Config> {
        self.sample_with_mode(self.sample_mode, rng)
    }

    /// A valid configuration drawn with the given sample mode. Batch planners
    /// use projection mode: the exploration bias of chart sampling would make
    /// their batches non-uniform.
    pub fn sample_with_mode<R: Rng + ?Sized>(&mut self, mode: SampleMode, rng: &mut R) -> Result<Config> {
        let atlas = match mode {
            SampleMode::Atlas => Some(&mut self.atlas),
            SampleMode::Projection => None,
        };
        let before = atlas.as_ref().map_or(0, |a| a.len());
        let q = uniform_manifold_sample(self.sys, self.scene, atlas, self.bounds, rng)?;
        if mode == SampleMode::Atlas {
            self.stats.charts_created += self.atlas.len() - before;
        }
        self.stats.projections += 1;
        Ok(q)
    }

    /// Seeds the atlas with charts at the given configurations.
    pub fn seed_atlas(&mut self, configs: &[&Config]) -> Result<()> {
        if !self.adherence.uses_atlas() && self.sample_mode != SampleMode::Atlas {
            return Ok(());
        }
        let before = self.atlas.len();
        for q in configs {
            self.atlas.get_chart(self.sys, q)?;
        }
        self.stats.charts_created += self.atlas.len() - before;
        Ok(())
    }
}

/// Uniform valid configuration on the manifold.
///
/// Without an atlas, a point is drawn uniformly from the ambient cube
/// `[-bounds, bounds]^n` and projected. With an atlas, a chart and tangent
/// coordinate are drawn by [`Atlas::sample_chart_uniform`] and mapped with the
/// exponential map; an empty atlas is seeded from one projected sample.
pub fn uniform_manifold_sample<R: Rng + ?Sized>(
    sys: &ConstraintSystem,
    scene: &dyn CollisionChecker,
    mut atlas: Option<&mut Atlas>,
    bounds: f64,
    rng: &mut R,
) -> Result<Config> {
    let n = sys.ambient_dim();
    for _ in 0..SAMPLE_REJECTION_BUDGET {
        let candidate = match atlas.as_deref_mut() {
            Some(atlas) if !atlas.is_empty() => {
                let Ok((id, u)) = atlas.sample_chart_uniform(rng) else {
                    continue;
                };
                psi_exp(sys, atlas.chart(id), &u, atlas.params.max_newton)
            }
            maybe_atlas => {
                let raw = DVector::from_fn(n, |_, _| rng.random_range(-bounds..bounds));
                let projected = sys.project(&raw);
                if let (Some(atlas), Ok(q)) = (maybe_atlas, projected.as_ref()) {
                    atlas.get_chart(sys, q)?;
                }
                projected
            }
        };
        if let Ok(q) = candidate {
            if sys.is_satisfied(&q) && !scene.in_collision(&q) {
                return Ok(q);
            }
        }
    }
    Err(Error::SamplingFailed(SAMPLE_REJECTION_BUDGET))
}
