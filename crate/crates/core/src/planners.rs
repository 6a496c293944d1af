//! Bidirectional RRTConnect and batch FMT* over a [`ConstrainedSpace`], plus
//! random-shortcut path smoothing.

use std::collections::{BinaryHeap, HashMap};
use std::time::{Duration, Instant};

use ordered::MinCost;
use rand::Rng;

use crate::constraint::Config;
use crate::error::{Error, Result};
use crate::space::{ConstrainedSpace, SampleMode};

/// The RNG used by every planner. Seeded per query for reproducibility.
pub type PlanRng = rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct PlanProblem {
    pub q_init: Config,
    pub q_goal: Config,
    pub time_budget: Duration,
    /// Iteration limit (N_max).
    pub max_iters: usize,
}

impl PlanProblem {
    pub fn new(q_init: Config, q_goal: Config) -> Self {
        Self {
            q_init,
            q_goal,
            time_budget: Duration::from_secs(60),
            max_iters: 10_000,
        }
    }

    pub fn with_budget(mut self, time_budget: Duration, max_iters: usize) -> Self {
        self.time_budget = time_budget;
        self.max_iters = max_iters;
        self
    }

    fn check(&self, space: &ConstrainedSpace<'_>) -> Result<()> {
        for (name, q) in [("q_init", &self.q_init), ("q_goal", &self.q_goal)] {
            space.sys.check_config(q)?;
            if !space.is_valid(q) {
                return Err(Error::Precondition(format!(
                    "{name} must be on-manifold and collision-free"
                )));
            }
        }
        Ok(())
    }
}

/// A solution path. Waypoints are dense: consecutive entries are at most one
/// integrator step apart, except for the final bridge between trees which is
/// bounded by the goal tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub waypoints: Vec<Config>,
    pub length: f64,
    pub wall_time: f64,
    pub iterations: usize,
}

impl Path {
    pub fn from_waypoints(waypoints: Vec<Config>) -> Self {
        let length = path_length(&waypoints);
        Self {
            waypoints,
            length,
            wall_time: 0.0,
            iterations: 0,
        }
    }
}

pub fn path_length(waypoints: &[Config]) -> f64 {
    waypoints.windows(2).map(|w| (&w[1] - &w[0]).norm()).sum()
}

/// Outcome of a planning query.
#[derive(Debug, Clone)]
pub struct PlanReport {
    pub path: Option<Path>,
    pub iterations: usize,
    pub wall_time: f64,
}

impl PlanReport {
    pub fn success(&self) -> bool {
        self.path.is_some()
    }
}

/// Checks the path invariants against a space: endpoints, manifold
/// membership and collision freedom of every waypoint.
pub fn validate_path(
    space: &ConstrainedSpace<'_>,
    path: &Path,
    q_init: &Config,
    q_goal: &Config,
) -> std::result::Result<(), String> {
    let first = path.waypoints.first().ok_or("empty path")?;
    if first != q_init {
        return Err("first waypoint is not the start".into());
    }
    let last = path.waypoints.last().expect("non-empty");
    let gap = (last - q_goal).norm();
    if gap > space.goal_tolerance() + 1e-12 {
        return Err(format!("last waypoint is {gap} from the goal"));
    }
    for (i, q) in path.waypoints.iter().enumerate() {
        if !space.sys.is_satisfied(q) {
            return Err(format!(
                "waypoint {i} is off the manifold (‖F‖ = {:e})",
                space.sys.distance(q)
            ));
        }
        if space.scene.in_collision(q) {
            return Err(format!("waypoint {i} is in collision"));
        }
    }
    Ok(())
}

/// A rooted tree of configurations.
#[derive(Debug, Clone)]
pub struct Tree {
    configs: Vec<Config>,
    parents: Vec<Option<usize>>,
}

impl Tree {
    pub fn new(root: Config) -> Self {
        Self {
            configs: vec![root],
            parents: vec![None],
        }
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn root(&self) -> &Config {
        &self.configs[0]
    }

    pub fn config(&self, idx: usize) -> &Config {
        &self.configs[idx]
    }

    pub fn configs(&self) -> &[Config] {
        &self.configs
    }

    pub fn parent(&self, idx: usize) -> Option<usize> {
        self.parents[idx]
    }

    pub fn add(&mut self, config: Config, parent: usize) -> usize {
        debug_assert!(parent < self.configs.len());
        self.configs.push(config);
        self.parents.push(Some(parent));
        self.configs.len() - 1
    }

    /// Appends `states[1..]` as a chain hanging off `parent`; returns the last
    /// node index.
    pub fn add_chain(&mut self, parent: usize, states: &[Config]) -> usize {
        states
            .iter()
            .skip(1)
            .fold(parent, |p, q| self.add(q.clone(), p))
    }

    /// Nearest node in ambient Euclidean distance (ties to the lower index).
    pub fn nearest(&self, q: &Config) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, c) in self.configs.iter().enumerate() {
            let d = (c - q).norm_squared();
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    /// Configurations from the root down to `idx`.
    pub fn path_to(&self, idx: usize) -> Vec<Config> {
        let mut out = Vec::new();
        let mut cur = Some(idx);
        while let Some(i) = cur {
            out.push(self.configs[i].clone());
            cur = self.parents[i];
        }
        out.reverse();
        out
    }
}

/// What a tree sampler may condition on.
#[derive(Debug)]
pub struct SampleContext<'c> {
    pub iteration: usize,
    /// Last node added by extending the active tree.
    pub current: &'c Config,
    /// Last node added by extending the opposite tree.
    pub target: &'c Config,
}

/// Source of the per-iteration sample in [`rrt_connect`].
pub trait TreeSampler {
    fn sample(
        &mut self,
        space: &mut ConstrainedSpace<'_>,
        ctx: &SampleContext<'_>,
        rng: &mut PlanRng,
    ) -> Result<Config>;
}

/// Uniform sampling on the manifold through the space's sample mode.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformSampler;

impl TreeSampler for UniformSampler {
    fn sample(
        &mut self,
        space: &mut ConstrainedSpace<'_>,
        _ctx: &SampleContext<'_>,
        rng: &mut PlanRng,
    ) -> Result<Config> {
        space.sample_uniform(rng)
    }
}

/// Moves an arbitrary sample onto the manifold, or rejects it.
fn settle_sample(space: &mut ConstrainedSpace<'_>, q: Config) -> Option<Config> {
    if q.len() != space.sys.ambient_dim() || !q.iter().all(|v| v.is_finite()) {
        return None;
    }
    if space.sys.is_satisfied(&q) {
        return Some(q);
    }
    space.project(&q).ok()
}

/// Bidirectional RRT with a greedy connect step.
///
/// Each iteration draws one sample, extends the active tree from its nearest
/// node toward it, then extends the other tree from its nearest node toward
/// the newly reached state until the integrator stops. The trees swap roles
/// after every iteration.
pub fn rrt_connect(
    problem: &PlanProblem,
    space: &mut ConstrainedSpace<'_>,
    sampler: &mut dyn TreeSampler,
    rng: &mut PlanRng,
) -> Result<PlanReport> {
    let start = Instant::now();
    problem.check(space)?;
    if problem.q_init == problem.q_goal {
        return Ok(PlanReport {
            path: Some(Path {
                waypoints: vec![problem.q_init.clone()],
                length: 0.0,
                wall_time: start.elapsed().as_secs_f64(),
                iterations: 0,
            }),
            iterations: 0,
            wall_time: start.elapsed().as_secs_f64(),
        });
    }
    space.seed_atlas(&[&problem.q_init, &problem.q_goal])?;

    let mut trees = [Tree::new(problem.q_init.clone()), Tree::new(problem.q_goal.clone())];
    let mut last = [0usize, 0usize];
    // Index into `trees` of the tree rooted at the start.
    let mut active = 0usize;

    let mut iterations = 0;
    while iterations < problem.max_iters && start.elapsed() < problem.time_budget {
        iterations += 1;
        let other = 1 - active;
        let sample = {
            let ctx = SampleContext {
                iteration: iterations - 1,
                current: trees[active].config(last[active]),
                target: trees[other].config(last[other]),
            };
            sampler.sample(space, &ctx, rng)
        };
        let target = match sample.ok().and_then(|q| settle_sample(space, q)) {
            Some(q) if !space.scene.in_collision(&q) => q,
            _ => {
                active = other;
                continue;
            }
        };

        let near = trees[active].nearest(&target);
        let from = trees[active].config(near).clone();
        let motion = match space.integrate(&from, &target) {
            Ok(m) => m,
            Err(Error::ChartCapacity(_)) => break,
            Err(_) => {
                active = other;
                continue;
            }
        };
        if motion.states.len() > 1 {
            let new_idx = trees[active].add_chain(near, &motion.states);
            last[active] = new_idx;
            let reached_state = trees[active].config(new_idx).clone();

            let near_b = trees[other].nearest(&reached_state);
            let from_b = trees[other].config(near_b).clone();
            match space.integrate(&from_b, &reached_state) {
                Ok(connect) => {
                    let end_b = trees[other].add_chain(near_b, &connect.states);
                    if connect.reached {
                        let (start_end, goal_end) = if active == 0 {
                            (new_idx, end_b)
                        } else {
                            (end_b, new_idx)
                        };
                        let mut waypoints = trees[0].path_to(start_end);
                        waypoints.extend(trees[1].path_to(goal_end).into_iter().rev());
                        let wall_time = start.elapsed().as_secs_f64();
                        return Ok(PlanReport {
                            path: Some(Path {
                                length: path_length(&waypoints),
                                waypoints,
                                wall_time,
                                iterations,
                            }),
                            iterations,
                            wall_time,
                        });
                    }
                }
                Err(Error::ChartCapacity(_)) => break,
                Err(_) => {}
            }
        }
        active = other;
    }
    Ok(PlanReport {
        path: None,
        iterations,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Source of samples for [`fmt_star`].
pub trait BatchSampler {
    /// The initial batch of `count` valid configurations.
    fn initial_batch(
        &mut self,
        space: &mut ConstrainedSpace<'_>,
        problem: &PlanProblem,
        count: usize,
        rng: &mut PlanRng,
    ) -> Vec<Config>;

    /// One more sample after the batch failed; `nodes` are the configurations
    /// currently connected to the start.
    fn next_sample(
        &mut self,
        space: &mut ConstrainedSpace<'_>,
        problem: &PlanProblem,
        nodes: &[Config],
        iteration: usize,
        rng: &mut PlanRng,
    ) -> Option<Config>;
}

impl BatchSampler for UniformSampler {
    fn initial_batch(
        &mut self,
        space: &mut ConstrainedSpace<'_>,
        _problem: &PlanProblem,
        count: usize,
        rng: &mut PlanRng,
    ) -> Vec<Config> {
        (0..count)
            .filter_map(|_| space.sample_with_mode(SampleMode::Projection, rng).ok())
            .collect()
    }

    fn next_sample(
        &mut self,
        space: &mut ConstrainedSpace<'_>,
        _problem: &PlanProblem,
        _nodes: &[Config],
        _iteration: usize,
        rng: &mut PlanRng,
    ) -> Option<Config> {
        space.sample_with_mode(SampleMode::Projection, rng).ok()
    }
}

/// Samples added between two marching passes once the batch has failed.
pub const FMT_RESAMPLE_INTERVAL: usize = 50;

#[derive(Debug, Clone)]
struct Edge {
    /// Integrator states from the parent (exclusive) to the child (inclusive).
    states: Vec<Config>,
    cost: f64,
}

mod ordered {
    use std::cmp::Ordering;

    /// Min-heap entry on cost.
    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct MinCost(pub f64, pub usize);

    impl Eq for MinCost {}

    impl Ord for MinCost {
        fn cmp(&self, other: &Self) -> Ordering {
            other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
        }
    }

    impl PartialOrd for MinCost {
        fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
            Some(self.cmp(other))
        }
    }
}

struct FmtGraph {
    nodes: Vec<Config>,
    neighbors: Vec<Vec<usize>>,
    radius: f64,
    edges: HashMap<(usize, usize), Option<Edge>>,
}

impl FmtGraph {
    fn new(radius: f64) -> Self {
        Self {
            nodes: Vec::new(),
            neighbors: Vec::new(),
            radius,
            edges: HashMap::new(),
        }
    }

    fn push(&mut self, q: Config) {
        let idx = self.nodes.len();
        let r2 = self.radius * self.radius;
        let mut mine = Vec::new();
        for (j, other) in self.nodes.iter().enumerate() {
            if (other - &q).norm_squared() <= r2 {
                mine.push(j);
                self.neighbors[j].push(idx);
            }
        }
        self.nodes.push(q);
        self.neighbors.push(mine);
    }

    fn edge(&mut self, space: &mut ConstrainedSpace<'_>, from: usize, to: usize) -> Option<Edge> {
        if let Some(cached) = self.edges.get(&(from, to)) {
            return cached.clone();
        }
        let edge = match space.integrate(&self.nodes[from], &self.nodes[to]) {
            Ok(m) if m.reached => {
                let mut states: Vec<Config> = m.states.into_iter().skip(1).collect();
                if states.last() != Some(&self.nodes[to]) {
                    states.push(self.nodes[to].clone());
                }
                let mut prev = &self.nodes[from];
                let mut cost = 0.0;
                for s in &states {
                    cost += (s - prev).norm();
                    prev = s;
                }
                Some(Edge { states, cost })
            }
            _ => None,
        };
        self.edges.insert((from, to), edge.clone());
        edge
    }

    /// One fast-marching pass from node 0 toward node 1. Returns the parent
    /// array and edges of the tree built, plus whether the goal was reached.
    fn march(
        &mut self,
        space: &mut ConstrainedSpace<'_>,
        deadline: Instant,
    ) -> (Vec<Option<(usize, Edge)>>, Vec<f64>, bool) {
        let count = self.nodes.len();
        let mut cost = vec![f64::INFINITY; count];
        let mut parent: Vec<Option<(usize, Edge)>> = vec![None; count];
        #[derive(Clone, Copy, PartialEq)]
        enum State {
            Unvisited,
            Open,
            Closed,
        }
        let mut state = vec![State::Unvisited; count];
        let mut heap = BinaryHeap::new();
        cost[0] = 0.0;
        state[0] = State::Open;
        heap.push(MinCost(0.0, 0));

        while let Some(MinCost(c, z)) = heap.pop() {
            if state[z] != State::Open || c > cost[z] {
                continue;
            }
            if z == 1 {
                return (parent, cost, true);
            }
            if Instant::now() > deadline {
                break;
            }
            let mut opened = Vec::new();
            for &x in &self.neighbors[z].clone() {
                if state[x] != State::Unvisited {
                    continue;
                }
                let best = self.neighbors[x]
                    .iter()
                    .copied()
                    .filter(|&y| state[y] == State::Open)
                    .map(|y| (cost[y] + (&self.nodes[y] - &self.nodes[x]).norm(), y))
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let Some((_, y)) = best else { continue };
                if let Some(edge) = self.edge(space, y, x) {
                    cost[x] = cost[y] + edge.cost;
                    parent[x] = Some((y, edge));
                    opened.push(x);
                }
            }
            for x in opened {
                state[x] = State::Open;
                heap.push(MinCost(cost[x], x));
            }
            state[z] = State::Closed;
        }
        (parent, cost, false)
    }
}

/// Batch FMT* with a fixed connection radius.
///
/// The start is node 0 and the goal node 1. When the initial batch does not
/// connect them, one sample is added per iteration and the marching pass is
/// rerun every [`FMT_RESAMPLE_INTERVAL`] samples.
pub fn fmt_star(
    problem: &PlanProblem,
    space: &mut ConstrainedSpace<'_>,
    sampler: &mut dyn BatchSampler,
    n_init: usize,
    radius: f64,
    rng: &mut PlanRng,
) -> Result<PlanReport> {
    let start = Instant::now();
    let deadline = start + problem.time_budget;
    problem.check(space)?;
    if problem.q_init == problem.q_goal {
        return Ok(PlanReport {
            path: Some(Path::from_waypoints(vec![problem.q_init.clone()])),
            iterations: 0,
            wall_time: start.elapsed().as_secs_f64(),
        });
    }
    space.seed_atlas(&[&problem.q_init, &problem.q_goal])?;

    let mut graph = FmtGraph::new(radius);
    graph.push(problem.q_init.clone());
    graph.push(problem.q_goal.clone());
    let batch = sampler.initial_batch(space, problem, n_init.saturating_sub(1), rng);
    for q in batch {
        if let Some(q) = settle_sample(space, q) {
            if !space.scene.in_collision(&q) {
                graph.push(q);
            }
        }
    }

    let mut iterations = 1;
    loop {
        let (parent, _cost, found) = graph.march(space, deadline);
        if found {
            let mut chain = Vec::new();
            let mut cur = 1;
            while let Some((p, edge)) = &parent[cur] {
                chain.push(edge.states.clone());
                cur = *p;
            }
            let mut waypoints = vec![problem.q_init.clone()];
            for states in chain.into_iter().rev() {
                waypoints.extend(states);
            }
            let wall_time = start.elapsed().as_secs_f64();
            return Ok(PlanReport {
                path: Some(Path {
                    length: path_length(&waypoints),
                    waypoints,
                    wall_time,
                    iterations,
                }),
                iterations,
                wall_time,
            });
        }
        if iterations >= problem.max_iters || Instant::now() > deadline {
            break;
        }
        let reached: Vec<Config> = parent
            .iter()
            .enumerate()
            .filter(|(i, p)| *i == 0 || p.is_some())
            .map(|(i, _)| graph.nodes[i].clone())
            .collect();
        let mut added = 0;
        while added < FMT_RESAMPLE_INTERVAL && iterations < problem.max_iters {
            iterations += 1;
            if let Some(q) = sampler
                .next_sample(space, problem, &reached, iterations, rng)
                .and_then(|q| settle_sample(space, q))
            {
                if !space.scene.in_collision(&q) {
                    graph.push(q);
                }
            }
            added += 1;
        }
    }
    Ok(PlanReport {
        path: None,
        iterations,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Random-pair shortcutting. A subsequence `w_i..w_j` is replaced by an
/// integrator motion between its ends when the motion reaches `w_j` and is
/// shorter. The result is never longer than the input.
pub fn shortcut_smooth(
    path: &Path,
    space: &mut ConstrainedSpace<'_>,
    attempts: usize,
    rng: &mut PlanRng,
) -> Path {
    let mut waypoints = path.waypoints.clone();
    for _ in 0..attempts {
        let n = waypoints.len();
        if n < 3 {
            break;
        }
        let i = rng.random_range(0..n - 2);
        let j = rng.random_range(i + 2..n);
        let Ok(motion) = space.integrate(&waypoints[i], &waypoints[j]) else {
            continue;
        };
        if !motion.reached {
            continue;
        }
        let mut segment = motion.states;
        if segment.last() != Some(&waypoints[j]) {
            segment.push(waypoints[j].clone());
        }
        if segment.iter().any(|q| !space.is_valid(q)) {
            continue;
        }
        let old = path_length(&waypoints[i..=j]);
        let new = path_length(&segment);
        if new < old - 1e-12 {
            waypoints.splice(i..=j, segment);
        }
    }
    Path {
        length: path_length(&waypoints),
        waypoints,
        wall_time: path.wall_time,
        iterations: path.iterations,
    }
}
