//! Learned sampling for the planners.
//!
//! The generator proposes the next configuration from a current and a
//! target configuration; the discriminator gates proposals whose predicted
//! distance from the manifold exceeds `nu` and pushes them back by gradient
//! descent. Proposals are not guaranteed on the manifold; the planners
//! project them before integrating. After `n_ismp` iterations the samplers
//! switch to uniform manifold sampling, which keeps the planners complete
//! when the networks are wrong.

use nalgebra::DVector;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::layers::Mode;
use super::models::{Discriminator, Generator};
use crate::constraint::Config;
use crate::environments::VoxelGrid;
use crate::error::{Error, Result};
use crate::planners::{
    fmt_star, rrt_connect, BatchSampler, PlanProblem, PlanReport, PlanRng, SampleContext,
    TreeSampler,
};
use crate::space::{ConstrainedSpace, SampleMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeuralParams {
    /// Predicted distance above which a proposal is corrected.
    pub nu: f64,
    /// Step size of the correction descent.
    pub gamma_n: f64,
    /// Maximum descent steps per correction.
    pub nproj_steps: usize,
    /// Iterations of learned sampling before switching to uniform sampling.
    pub n_ismp: usize,
    /// Proposals per batched generator call when growing a sample batch.
    pub k: usize,
}

impl Default for NeuralParams {
    fn default() -> Self {
        Self {
            nu: 0.1,
            gamma_n: 0.1,
            nproj_steps: 10,
            n_ismp: 300,
            k: 16,
        }
    }
}

/// Result of one correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Nproj {
    pub q: Vec<f64>,
    /// Whether the gate fired.
    pub fired: bool,
    pub steps: usize,
}

/// Gradient descent on the predicted distance. Returns `q` unchanged when
/// `D(q) ≤ nu`; otherwise the iterate with the lowest prediction seen within
/// `max_steps` steps, stopping early once the prediction drops to `nu`.
pub fn nproj(
    disc: &Discriminator,
    z: &[f64],
    q: &[f64],
    nu: f64,
    gamma_n: f64,
    max_steps: usize,
) -> Result<Nproj> {
    let (mut d, mut grad) = disc.predict_with_gradient(z, q)?;
    if d <= nu {
        return Ok(Nproj {
            q: q.to_vec(),
            fired: false,
            steps: 0,
        });
    }
    let mut cur = q.to_vec();
    let mut best = (d, cur.clone());
    let mut steps = 0;
    while steps < max_steps && d > nu {
        for (c, g) in cur.iter_mut().zip(&grad) {
            *c -= gamma_n * g;
        }
        steps += 1;
        (d, grad) = disc.predict_with_gradient(z, &cur)?;
        if !d.is_finite() {
            break;
        }
        if d < best.0 {
            best = (d, cur.clone());
        }
    }
    Ok(Nproj {
        q: best.1,
        fired: true,
        steps,
    })
}

fn gate(
    disc: Option<&Discriminator>,
    z: &[f64],
    q: Vec<f64>,
    params: &NeuralParams,
) -> Result<Nproj> {
    match disc {
        Some(d) if params.nu.is_finite() => nproj(d, z, &q, params.nu, params.gamma_n, params.nproj_steps),
        _ => Ok(Nproj {
            q,
            fired: false,
            steps: 0,
        }),
    }
}

/// One stochastic generator proposal toward `q_targ`, passed through the
/// correction gate.
pub fn compnetx_sample(
    gen: &Generator,
    disc: Option<&Discriminator>,
    z: &[f64],
    q_curr: &[f64],
    q_targ: &[f64],
    params: &NeuralParams,
    rng: &mut dyn RngCore,
) -> Result<Nproj> {
    let raw = gen.predict(z, q_curr, q_targ, Mode::Stochastic, rng)?;
    gate(disc, z, raw, params)
}

/// The current configurations of a batched call: `k` nodes drawn uniformly
/// from `nodes`, or the root `k` times when fewer than `k` nodes exist.
pub fn kbatch_inputs<R: Rng + ?Sized>(nodes: &[Config], k: usize, rng: &mut R) -> Vec<Config> {
    if nodes.len() < k || nodes.len() == 1 {
        return vec![nodes[0].clone(); k];
    }
    (0..k)
        .map(|_| nodes[rng.random_range(0..nodes.len())].clone())
        .collect()
}

/// `k` proposals toward `q_goal` from nodes of a tree rooted at `nodes[0]`,
/// evaluated as one batched generator pass.
pub fn kbatch_sample(
    gen: &Generator,
    disc: Option<&Discriminator>,
    z: &[f64],
    nodes: &[Config],
    q_goal: &[f64],
    params: &NeuralParams,
    k: usize,
    rng: &mut PlanRng,
) -> Result<Vec<Nproj>> {
    if nodes.is_empty() || k == 0 {
        return Err(Error::Precondition("k-batch needs a node and k ≥ 1".into()));
    }
    let inputs = kbatch_inputs(nodes, k, rng);
    let rows = inputs
        .iter()
        .map(|q| gen.trunk_row(z, q.as_slice(), q_goal))
        .collect::<Result<Vec<_>>>()?;
    gen.predict_rows(&rows, Mode::Stochastic, rng)?
        .into_iter()
        .map(|q| gate(disc, z, q, params))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LearnedStats {
    pub learned_draws: usize,
    pub classical_draws: usize,
    pub nproj_calls: usize,
}

/// Hybrid sampler for [`rrt_connect`] and [`fmt_star`]. The scene latent is
/// computed once at construction.
pub struct LearnedSampler<'m> {
    pub gen: &'m Generator,
    pub disc: Option<&'m Discriminator>,
    pub z: Vec<f64>,
    pub params: NeuralParams,
    pub stats: LearnedStats,
}

impl<'m> LearnedSampler<'m> {
    pub fn new(
        gen: &'m Generator,
        disc: Option<&'m Discriminator>,
        grid: &VoxelGrid,
        params: NeuralParams,
    ) -> Result<Self> {
        Ok(Self::with_latent(gen, disc, gen.encode_grid(grid)?, params))
    }

    pub fn with_latent(
        gen: &'m Generator,
        disc: Option<&'m Discriminator>,
        z: Vec<f64>,
        params: NeuralParams,
    ) -> Self {
        Self {
            gen,
            disc,
            z,
            params,
            stats: LearnedStats::default(),
        }
    }

    fn record(&mut self, n: Nproj) -> Config {
        self.stats.learned_draws += 1;
        if n.fired {
            self.stats.nproj_calls += 1;
        }
        DVector::from_vec(n.q)
    }
}

impl TreeSampler for LearnedSampler<'_> {
    fn sample(
        &mut self,
        space: &mut ConstrainedSpace<'_>,
        ctx: &SampleContext<'_>,
        rng: &mut PlanRng,
    ) -> Result<Config> {
        if ctx.iteration >= self.params.n_ismp {
            self.stats.classical_draws += 1;
            return space.sample_uniform(rng);
        }
        let n = compnetx_sample(
            self.gen,
            self.disc,
            &self.z,
            ctx.current.as_slice(),
            ctx.target.as_slice(),
            &self.params,
            rng,
        )?;
        Ok(self.record(n))
    }
}

impl BatchSampler for LearnedSampler<'_> {
    /// Grows the batch from the start: every round proposes `k` samples
    /// from uniformly chosen earlier samples toward the goal. Proposals that
    /// cannot be settled on the free manifold are dropped; after
    /// `4·count` proposals the rest of the batch is filled uniformly.
    fn initial_batch(
        &mut self,
        space: &mut ConstrainedSpace<'_>,
        problem: &PlanProblem,
        count: usize,
        rng: &mut PlanRng,
    ) -> Vec<Config> {
        let mut nodes = vec![problem.q_init.clone()];
        let mut proposals = 0;
        let k = self.params.k.max(1);
        while nodes.len() <= count && proposals < 4 * count {
            let Ok(batch) = kbatch_sample(
                self.gen,
                self.disc,
                &self.z,
                &nodes,
                problem.q_goal.as_slice(),
                &self.params,
                k,
                rng,
            ) else {
                break;
            };
            proposals += k;
            for n in batch {
                let q = self.record(n);
                if nodes.len() > count {
                    break;
                }
                if let Some(q) = settle(space, q) {
                    nodes.push(q);
                }
            }
        }
        let mut out: Vec<Config> = nodes.into_iter().skip(1).collect();
        while out.len() < count {
            match space.sample_with_mode(SampleMode::Projection, rng) {
                Ok(q) => {
                    self.stats.classical_draws += 1;
                    out.push(q);
                }
                Err(_) => break,
            }
        }
        out
    }

    fn next_sample(
        &mut self,
        space: &mut ConstrainedSpace<'_>,
        problem: &PlanProblem,
        nodes: &[Config],
        iteration: usize,
        rng: &mut PlanRng,
    ) -> Option<Config> {
        if iteration >= self.params.n_ismp || nodes.is_empty() {
            self.stats.classical_draws += 1;
            return space.sample_with_mode(SampleMode::Projection, rng).ok();
        }
        let n = kbatch_sample(
            self.gen,
            self.disc,
            &self.z,
            nodes,
            problem.q_goal.as_slice(),
            &self.params,
            1,
            rng,
        )
        .ok()?
        .pop()?;
        Some(self.record(n))
    }
}

/// On-manifold, collision-free version of a proposal, if one exists nearby.
fn settle(space: &mut ConstrainedSpace<'_>, q: Config) -> Option<Config> {
    if !q.iter().all(|v| v.is_finite()) || q.len() != space.sys.ambient_dim() {
        return None;
    }
    let q = if space.sys.is_satisfied(&q) {
        q
    } else {
        space.project(&q).ok()?
    };
    (!space.scene.in_collision(&q)).then_some(q)
}

/// Bidirectional planning with learned samples: each iteration proposes a
/// sample from the last node extended in the active tree toward the last
/// node extended in the other tree.
pub fn bidirectional_plan(
    problem: &PlanProblem,
    space: &mut ConstrainedSpace<'_>,
    sampler: &mut LearnedSampler<'_>,
    rng: &mut PlanRng,
) -> Result<PlanReport> {
    rrt_connect(problem, space, sampler, rng)
}

/// FMT* over a batch grown by the generator from the start toward the goal.
pub fn learned_fmt(
    problem: &PlanProblem,
    space: &mut ConstrainedSpace<'_>,
    sampler: &mut LearnedSampler<'_>,
    n_init: usize,
    radius: f64,
    rng: &mut PlanRng,
) -> Result<PlanReport> {
    fmt_star(problem, space, sampler, n_init, radius, rng)
}
