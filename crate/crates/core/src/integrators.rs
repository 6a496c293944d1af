//! Local planners that walk from one configuration toward another while
//! staying on the constraint manifold.
//!
//! All three integrators share the same break conditions: the next state is
//! in collision, the walk moves away from the target (`d₂ > d₁`), a single
//! step is longer than `λ₁γ`, the step stalls below `stall_eps`, the
//! accumulated length exceeds `λ₂‖q_e − q_s‖`, or the step limit is hit. The
//! state that triggers a break is never part of the returned motion.

use serde::{Deserialize, Serialize};

use crate::atlas::{in_validity, psi_exp, Atlas};
use crate::collision::CollisionChecker;
use crate::constraint::{Config, ConstraintSystem};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorParams {
    /// Step size (γ).
    pub gamma: f64,
    /// Bound on a single step as a multiple of γ (λ₁).
    pub lambda1: f64,
    /// Bound on the walked length as a multiple of the endpoint distance (λ₂).
    pub lambda2: f64,
    /// Step limit (N).
    pub max_steps: usize,
    /// Steps shorter than this count as a stall.
    pub stall_eps: f64,
}

impl Default for IntegratorParams {
    fn default() -> Self {
        Self {
            gamma: 0.05,
            lambda1: 2.0,
            lambda2: 2.0,
            max_steps: 1000,
            stall_eps: 1e-6,
        }
    }
}

impl IntegratorParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gamma > 0.0
            && self.lambda1 >= 1.0
            && self.lambda2 >= 1.0
            && self.max_steps >= 1
            && self.stall_eps > 0.0
            && self.stall_eps < self.gamma;
        if ok {
            Ok(())
        } else {
            Err(Error::Precondition(format!(
                "invalid integrator parameters {self:?}"
            )))
        }
    }

    /// Ambient distance at which a motion counts as having reached its target.
    pub fn goal_tolerance(&self) -> f64 {
        self.gamma * self.lambda1
    }
}

/// The states visited by an integrator.
#[derive(Debug, Clone, PartialEq)]
pub struct Motion {
    /// `states[0]` is the start configuration.
    pub states: Vec<Config>,
    /// Whether the last state is within `γλ₁` of the target.
    pub reached: bool,
    /// Projections (or exponential maps) evaluated while integrating.
    pub projections: usize,
    /// Charts added to the atlas while integrating.
    pub charts_created: usize,
}

impl Motion {
    fn trivial(q: &Config) -> Self {
        Self {
            states: vec![q.clone()],
            reached: true,
            projections: 0,
            charts_created: 0,
        }
    }

    pub fn last(&self) -> &Config {
        self.states.last().expect("motions are never empty")
    }

    /// Sum of consecutive ambient distances.
    pub fn length(&self) -> f64 {
        self.states.windows(2).map(|w| (&w[1] - &w[0]).norm()).sum()
    }
}

/// Which local planner a constrained space uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Adherence {
    Projection,
    Atlas,
    TangentBundle,
}

impl Adherence {
    pub const ALL: [Adherence; 3] = [Self::Projection, Self::Atlas, Self::TangentBundle];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Projection => "projection",
            Self::Atlas => "atlas",
            Self::TangentBundle => "tangent-bundle",
        }
    }

    pub fn uses_atlas(&self) -> bool {
        !matches!(self, Self::Projection)
    }
}

impl std::str::FromStr for Adherence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "projection" | "proj" => Ok(Self::Projection),
            "atlas" => Ok(Self::Atlas),
            "tangent-bundle" | "tb" => Ok(Self::TangentBundle),
            other => Err(Error::Precondition(format!("unknown adherence '{other}'"))),
        }
    }
}

/// Bookkeeping shared by the three walks.
struct Walk<'a> {
    params: &'a IntegratorParams,
    target: &'a Config,
    budget: f64,
    travelled: f64,
    steps: usize,
}

enum StepVerdict {
    Accept,
    Break,
}

impl<'a> Walk<'a> {
    fn new(params: &'a IntegratorParams, start: &Config, target: &'a Config) -> Self {
        Self {
            params,
            target,
            budget: params.lambda2 * (target - start).norm(),
            travelled: 0.0,
            steps: 0,
        }
    }

    fn check(
        &mut self,
        scene: &dyn CollisionChecker,
        current: &Config,
        next: &Config,
    ) -> StepVerdict {
        let p = self.params;
        let d = (next - current).norm();
        let d1 = (current - self.target).norm();
        let d2 = (next - self.target).norm();
        let travelled = self.travelled + d;
        let bad = !next.iter().all(|v| v.is_finite())
            || scene.in_collision(next)
            || d2 > d1
            || d > p.lambda1 * p.gamma
            || d < p.stall_eps
            || travelled > self.budget
            || self.steps >= p.max_steps;
        if bad {
            StepVerdict::Break
        } else {
            self.travelled = travelled;
            self.steps += 1;
            StepVerdict::Accept
        }
    }

    fn finish(&self, states: Vec<Config>, projections: usize, charts_created: usize) -> Motion {
        let last = states.last().expect("non-empty");
        let reached = (last - self.target).norm() <= self.params.goal_tolerance();
        Motion {
            states,
            reached,
            projections,
            charts_created,
        }
    }
}

fn require_on_manifold(sys: &ConstraintSystem, q: &Config, what: &str) -> Result<()> {
    sys.check_config(q)?;
    if sys.is_satisfied(q) {
        Ok(())
    } else {
        Err(Error::Precondition(format!(
            "{what} is off the manifold (‖F‖ = {:e})",
            sys.distance(q)
        )))
    }
}

/// Walks toward `q_e` in ambient steps of length `γ`, projecting every
/// intermediate point back onto the manifold.
pub fn projection_integrate(
    sys: &ConstraintSystem,
    scene: &dyn CollisionChecker,
    q_s: &Config,
    q_e: &Config,
    params: &IntegratorParams,
) -> Result<Motion> {
    require_on_manifold(sys, q_s, "start")?;
    sys.check_config(q_e)?;
    if q_s == q_e {
        return Ok(Motion::trivial(q_s));
    }
    let mut walk = Walk::new(params, q_s, q_e);
    let mut states = vec![q_s.clone()];
    let mut projections = 0;
    loop {
        let current = states.last().expect("non-empty");
        let delta = q_e - current;
        let remaining = delta.norm();
        if remaining <= params.gamma {
            break;
        }
        let stepped = current + delta * (params.gamma / remaining);
        projections += 1;
        let Ok(next) = sys.project(&stepped) else {
            break;
        };
        match walk.check(scene, current, &next) {
            StepVerdict::Accept => states.push(next),
            StepVerdict::Break => break,
        }
    }
    Ok(walk.finish(states, projections, 0))
}

/// Walks in the tangent coordinates of the current chart, mapping each step
/// onto the manifold with the exponential map and switching charts when the
/// walk leaves the chart's validity region or polytope.
pub fn atlas_integrate(
    sys: &ConstraintSystem,
    scene: &dyn CollisionChecker,
    atlas: &mut Atlas,
    q_s: &Config,
    q_e: &Config,
    params: &IntegratorParams,
) -> Result<Motion> {
    require_on_manifold(sys, q_s, "start")?;
    require_on_manifold(sys, q_e, "target")?;
    if q_s == q_e {
        return Ok(Motion::trivial(q_s));
    }
    let charts_before = atlas.len();
    let mut walk = Walk::new(params, q_s, q_e);
    let mut states = vec![q_s.clone()];
    let mut projections = 0;

    let mut chart_id = atlas.get_chart(sys, q_s)?;
    let mut u = atlas.chart(chart_id).log(q_s);
    let mut u_target = atlas.chart(chart_id).log(q_e);

    loop {
        let towards = &u_target - &u;
        let gap = towards.norm();
        if gap <= params.gamma {
            break;
        }
        let u_next = &u + towards * (params.gamma / gap);
        projections += 1;
        let chart = atlas.chart(chart_id);
        let Ok(next) = psi_exp(sys, chart, &u_next, atlas.params.max_newton) else {
            break;
        };
        let current = states.last().expect("non-empty");
        if let StepVerdict::Break = walk.check(scene, current, &next) {
            break;
        }
        let leaves_chart =
            !in_validity(&atlas.params, chart, &u_next, &next) || !chart.in_polytope(&u_next);
        states.push(next);
        u = u_next;
        if leaves_chart {
            let q = states.last().expect("non-empty");
            chart_id = atlas.get_chart(sys, q)?;
            let chart = atlas.chart(chart_id);
            u = chart.log(q);
            u_target = chart.log(q_e);
        }
    }
    Ok(walk.finish(states, projections, atlas.len() - charts_before))
}

/// Like [`atlas_integrate`] but intermediate states are left on the tangent
/// plane of the current chart; projection happens only on chart switches and
/// for the final state.
pub fn tb_integrate(
    sys: &ConstraintSystem,
    scene: &dyn CollisionChecker,
    atlas: &mut Atlas,
    q_s: &Config,
    q_e: &Config,
    params: &IntegratorParams,
) -> Result<Motion> {
    require_on_manifold(sys, q_s, "start")?;
    require_on_manifold(sys, q_e, "target")?;
    if q_s == q_e {
        return Ok(Motion::trivial(q_s));
    }
    let charts_before = atlas.len();
    let eps_chart = atlas.params.eps_chart;
    let rho = atlas.params.rho;
    let mut walk = Walk::new(params, q_s, q_e);
    let mut states = vec![q_s.clone()];
    let mut projections = 0;

    let mut chart_id = atlas.get_chart(sys, q_s)?;
    let mut u = atlas.chart(chart_id).log(q_s);
    let mut u_target = atlas.chart(chart_id).log(q_e);
    let mut truncated = false;

    loop {
        let towards = &u_target - &u;
        let gap = towards.norm();
        if gap <= params.gamma {
            break;
        }
        let u_next = &u + towards * (params.gamma / gap);
        let chart = atlas.chart(chart_id);
        let next = chart.phi(&u_next);
        let current = states.last().expect("non-empty");
        if let StepVerdict::Break = walk.check(scene, current, &next) {
            break;
        }
        let leaves_chart = sys.distance(&next) > eps_chart
            || u_next.norm() > rho
            || !chart.in_polytope(&u_next);
        if !leaves_chart {
            states.push(next);
            u = u_next;
            continue;
        }
        // Pull the step onto the manifold and continue from a chart there.
        projections += 1;
        let Ok(projected) = psi_exp(sys, chart, &u_next, atlas.params.max_newton) else {
            truncated = true;
            break;
        };
        let prev = states.last().expect("non-empty");
        if scene.in_collision(&projected)
            || (&projected - q_e).norm() > (prev - q_e).norm()
            || (&projected - prev).norm() > params.lambda1 * params.gamma
        {
            truncated = true;
            break;
        }
        states.push(projected);
        let q = states.last().expect("non-empty");
        chart_id = atlas.get_chart(sys, q)?;
        let chart = atlas.chart(chart_id);
        u = chart.log(q);
        u_target = chart.log(q_e);
    }

    // The endpoint must lie on the manifold; drop lazy states that cannot be
    // projected cleanly.
    while states.len() > 1 && !sys.is_satisfied(states.last().expect("non-empty")) {
        let last = states.pop().expect("non-empty");
        projections += 1;
        let prev = states.last().expect("non-empty");
        if let Ok(projected) = sys.project(&last) {
            let ok = !scene.in_collision(&projected)
                && (&projected - q_e).norm() < (prev - q_e).norm()
                && (&projected - prev).norm() <= params.lambda1 * params.gamma;
            if ok {
                states.push(projected);
                break;
            }
        }
        truncated = true;
    }
    let mut motion = walk.finish(states, projections, atlas.len() - charts_before);
    if truncated {
        motion.reached = motion.reached && (motion.last() - q_e).norm() <= params.goal_tolerance();
    }
    Ok(motion)
}
