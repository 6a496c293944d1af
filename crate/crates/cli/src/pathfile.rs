//! Path files: one configuration per CSV row under a `q0,q1,...` header.
//! Reals are written in shortest round-trip form, so reading a file back
//! gives the exact waypoints.

use std::fmt::Write as _;

use anyhow::{bail, Result};
use cmplan_core::{CollisionChecker, Config, ConstraintSystem};

pub fn path_csv(waypoints: &[Config]) -> String {
    let dim = waypoints.first().map_or(3, |q| q.len());
    let header: Vec<String> = (0..dim).map(|i| format!("q{i}")).collect();
    let mut out = header.join(",") + "\n";
    for q in waypoints {
        let row: Vec<String> = q.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", row.join(",")).expect("writing to a string");
    }
    out
}

pub fn parse_path_csv(text: &str) -> Result<Vec<Config>> {
    let mut lines = text.lines();
    let Some(header) = lines.next() else {
        bail!("empty path file");
    };
    let dim = header.split(',').count();
    if header.split(',').enumerate().any(|(i, h)| h.trim() != format!("q{i}")) {
        bail!("unexpected path header '{header}'");
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let values = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()?;
            if values.len() != dim {
                bail!("row {} has {} values, expected {dim}", i + 1, values.len());
            }
            Ok(Config::from_vec(values))
        })
        .collect()
}

/// What a path is checked against.
pub struct VerifySpec<'a> {
    pub sys: &'a ConstraintSystem,
    pub scene: &'a dyn CollisionChecker,
    /// Expected start and goal, if known.
    pub endpoints: Option<(Config, Config)>,
    /// Allowed distance between the last waypoint and the goal.
    pub goal_tolerance: f64,
    /// Largest allowed ambient distance between consecutive waypoints.
    pub max_gap: f64,
}

/// Every violated condition, empty when the path is valid. Independent of
/// the planner: only the constraint and the collision world are consulted.
pub fn verify_path(waypoints: &[Config], spec: &VerifySpec<'_>) -> Vec<String> {
    let mut problems = Vec::new();
    if waypoints.is_empty() {
        problems.push("path has no waypoints".to_string());
        return problems;
    }
    for (i, q) in waypoints.iter().enumerate() {
        if q.len() != spec.sys.ambient_dim() {
            problems.push(format!("waypoint {i} has dimension {}", q.len()));
            continue;
        }
        if !spec.sys.is_satisfied(q) {
            problems.push(format!(
                "waypoint {i} is off the manifold (‖F‖ = {:e})",
                spec.sys.distance(q)
            ));
        }
        if spec.scene.in_collision(q) {
            problems.push(format!("waypoint {i} is in collision"));
        }
    }
    for (i, w) in waypoints.windows(2).enumerate() {
        if w[0].len() == w[1].len() {
            let gap = (&w[1] - &w[0]).norm();
            if gap > spec.max_gap {
                problems.push(format!("waypoints {i} and {} are {gap} apart", i + 1));
            }
        }
    }
    if let Some((q_init, q_goal)) = &spec.endpoints {
        if &waypoints[0] != q_init {
            problems.push("first waypoint is not the start".to_string());
        }
        let last = waypoints.last().expect("non-empty");
        if last.len() == q_goal.len() {
            let gap = (last - q_goal).norm();
            if gap > spec.goal_tolerance {
                problems.push(format!("last waypoint is {gap} from the goal"));
            }
        }
    }
    problems
}
