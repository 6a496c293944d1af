//! Charts and atlases: local tangent-space parameterizations of the manifold.
//!
//! A chart is centered at an on-manifold configuration and carries an
//! orthonormal basis of the tangent space there. Tangent coordinates `u` are
//! mapped into the ambient space by `phi(u) = center + basis·u` and then onto
//! the manifold by a Newton solve constrained to the normal space of the chart
//! (`psi_exp`). The inverse direction is a plain orthogonal projection onto the
//! basis (`psi_log`).
//!
//! Each chart keeps a convex polytope of half-spaces in its own tangent
//! coordinates. Neighboring charts are separated by bisector half-spaces so
//! that their parameterized regions do not overlap.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constraint::{Config, ConstraintSystem};
use crate::error::{Error, Result};

/// Tangent coordinates relative to some chart.
pub type TangentCoord = DVector<f64>;

/// Newton iteration limit for the exponential map.
pub const DEFAULT_MAX_NEWTON: usize = 50;
/// Number of nearest chart centers inspected before a new chart is created.
pub const CHART_LOOKUP_CANDIDATES: usize = 10;
/// Rejection attempts per chart when sampling its polytope.
pub const CHART_REJECTION_BUDGET: usize = 100;

/// `aᵀu ≤ b` in the tangent coordinates of a chart.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace {
    pub normal: TangentCoord,
    pub offset: f64,
}

impl HalfSpace {
    pub fn contains(&self, u: &TangentCoord) -> bool {
        self.normal.dot(u) <= self.offset
    }
}

#[derive(Debug, Clone)]
pub struct Chart {
    pub id: usize,
    pub center: Config,
    /// `n × (n−k)` matrix with orthonormal columns spanning the tangent space.
    pub basis: DMatrix<f64>,
    pub polytope: Vec<HalfSpace>,
}

impl Chart {
    pub fn new(sys: &ConstraintSystem, id: usize, center: Config) -> Result<Self> {
        let basis = tangent_basis(sys, &center)?;
        Ok(Self {
            id,
            center,
            basis,
            polytope: Vec::new(),
        })
    }

    /// `center + basis·u`, without projection.
    pub fn phi(&self, u: &TangentCoord) -> Config {
        &self.center + &self.basis * u
    }

    /// `basisᵀ·(q − center)`.
    pub fn log(&self, q: &Config) -> TangentCoord {
        self.basis.tr_mul(&(q - &self.center))
    }

    pub fn in_polytope(&self, u: &TangentCoord) -> bool {
        self.polytope.iter().all(|h| h.contains(u))
    }
}

/// Atlas parameters. The defaults follow the continuation settings used for
/// the sphere benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AtlasParams {
    /// Radius of the tangent ball a chart may cover (ρ).
    pub rho: f64,
    /// Maximum angle between chart and manifold (α).
    pub alpha: f64,
    /// Maximum distance between chart and manifold.
    pub eps_chart: f64,
    pub max_charts: usize,
    /// Probability of pushing a sample to the boundary of the tangent ball.
    pub explore_prob: f64,
    pub max_newton: usize,
}

impl Default for AtlasParams {
    fn default() -> Self {
        Self {
            rho: 1.5,
            alpha: PI / 6.0,
            eps_chart: 0.01,
            max_charts: 5000,
            explore_prob: 0.9,
            max_newton: DEFAULT_MAX_NEWTON,
        }
    }
}

/// A growing collection of charts. Chart ids are their insertion indices.
#[derive(Debug, Clone)]
pub struct Atlas {
    pub params: AtlasParams,
    charts: Vec<Chart>,
}

impl Atlas {
    pub fn new(params: AtlasParams) -> Self {
        Self {
            params,
            charts: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.charts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.charts.is_empty()
    }

    pub fn chart(&self, id: usize) -> &Chart {
        &self.charts[id]
    }

    pub fn charts(&self) -> &[Chart] {
        &self.charts
    }

    /// Chart ids ordered by ambient distance from `q`, at most `limit` of them.
    fn nearest_charts(&self, q: &Config, limit: usize) -> Vec<usize> {
        let mut scored: Vec<(f64, usize)> = self
            .charts
            .iter()
            .map(|c| ((&c.center - q).norm_squared(), c.id))
            .collect();
        let limit = limit.min(scored.len());
        if limit == 0 {
            return Vec::new();
        }
        scored.select_nth_unstable_by(limit - 1, |a, b| a.0.total_cmp(&b.0));
        scored.truncate(limit);
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        scored.into_iter().map(|(_, id)| id).collect()
    }

    /// Finds a chart whose validity region and polytope contain `q`, or
    /// creates one centered at `q`.
    pub fn get_chart(&mut self, sys: &ConstraintSystem, q: &Config) -> Result<usize> {
        if !sys.is_satisfied(q) {
            return Err(Error::Precondition(
                "chart lookup requires an on-manifold configuration".into(),
            ));
        }
        for id in self.nearest_charts(q, CHART_LOOKUP_CANDIDATES) {
            let chart = &self.charts[id];
            let u = chart.log(q);
            if chart.in_polytope(&u) && in_validity(&self.params, chart, &u, q) {
                return Ok(id);
            }
        }
        self.add_chart(sys, q.clone())
    }

    /// Appends a chart centered at `center` and separates it from its
    /// neighbors with bisector half-spaces.
    pub fn add_chart(&mut self, sys: &ConstraintSystem, center: Config) -> Result<usize> {
        if self.charts.len() >= self.params.max_charts {
            return Err(Error::ChartCapacity(self.params.max_charts));
        }
        let id = self.charts.len();
        let mut chart = Chart::new(sys, id, center)?;
        let reach = 2.0 * self.params.rho;
        for other in &mut self.charts {
            if (&other.center - &chart.center).norm() >= reach {
                continue;
            }
            let v_other = other.log(&chart.center);
            let v_new = chart.log(&other.center);
            other.polytope.push(bisector(v_other));
            chart.polytope.push(bisector(v_new));
        }
        self.charts.push(chart);
        Ok(id)
    }

    /// Draws a chart uniformly and a tangent coordinate inside its ball and
    /// polytope. With probability `explore_prob` the coordinate is pushed to
    /// the ball boundary.
    pub fn sample_chart_uniform<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
    ) -> Result<(usize, TangentCoord)> {
        if self.charts.is_empty() {
            return Err(Error::Precondition("cannot sample an empty atlas".into()));
        }
        let dim = self.charts[0].basis.ncols();
        let rho = self.params.rho;
        // Charts whose polytope rejects everything are resampled; bound the
        // total work so a pathological atlas cannot loop forever.
        for _ in 0..self.charts.len().max(1) * 4 {
            let id = rng.random_range(0..self.charts.len());
            let chart = &self.charts[id];
            for _ in 0..CHART_REJECTION_BUDGET {
                let mut u = sample_ball(dim, rho, rng);
                if rng.random::<f64>() < self.params.explore_prob {
                    let norm = u.norm();
                    if norm > 0.0 {
                        u *= rho / norm;
                    }
                }
                if chart.in_polytope(&u) {
                    return Ok((id, u));
                }
            }
        }
        Err(Error::SamplingFailed(CHART_REJECTION_BUDGET))
    }
}

/// `{u : uᵀv ≤ ‖v‖²/2}`, the half of the tangent plane closer to the origin
/// than to `v`.
fn bisector(v: TangentCoord) -> HalfSpace {
    let offset = v.norm_squared() / 2.0;
    HalfSpace { normal: v, offset }
}

/// Uniform sample from the `dim`-ball of the given radius.
pub fn sample_ball<R: Rng + ?Sized>(dim: usize, radius: f64, rng: &mut R) -> TangentCoord {
    loop {
        let dir = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = dir.norm();
        if norm > 1e-12 {
            let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
            return dir * (r / norm);
        }
    }
}

/// Orthonormal basis of the null space of `J(q)`, from a Householder QR of
/// `Jᵀ` padded to a square matrix.
pub fn tangent_basis(sys: &ConstraintSystem, q: &Config) -> Result<DMatrix<f64>> {
    let jac = sys.jacobian(q)?;
    let (k, n) = jac.shape();
    let mut padded = DMatrix::zeros(n, n);
    padded.view_mut((0, 0), (n, k)).copy_from(&jac.transpose());
    let qr = padded.qr();
    let r = qr.r();
    let scale = jac.norm().max(f64::MIN_POSITIVE);
    for i in 0..k {
        if r[(i, i)].abs() <= 1e-10 * scale {
            return Err(Error::DegeneratePoint);
        }
    }
    let q_full = qr.q();
    Ok(q_full.columns(k, n - k).into_owned())
}

/// Exponential map: `phi(u)` pulled onto the manifold along the chart's
/// normal space by Newton iteration on `[F(q); Φᵀ(q − phi(u))] = 0`.
pub fn psi_exp(
    sys: &ConstraintSystem,
    chart: &Chart,
    u: &TangentCoord,
    max_newton: usize,
) -> Result<Config> {
    let target = chart.phi(u);
    let n = sys.ambient_dim();
    let k = sys.codim();
    let mut q = target.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..=max_newton {
        let f = sys.evaluate(&q)?;
        let tangent_res = chart.basis.tr_mul(&(&q - &target));
        residual = f.norm();
        if residual < sys.tolerance && tangent_res.norm() < sys.tolerance {
            return Ok(q);
        }
        let jac = sys.jacobian(&q)?;
        let mut system = DMatrix::zeros(n, n);
        system.view_mut((0, 0), (k, n)).copy_from(&jac);
        system
            .view_mut((k, 0), (n - k, n))
            .copy_from(&chart.basis.transpose());
        let mut rhs = DVector::zeros(n);
        rhs.rows_mut(0, k).copy_from(&f);
        rhs.rows_mut(k, n - k).copy_from(&tangent_res);
        let step = system
            .lu()
            .solve(&rhs)
            .ok_or(Error::DegeneratePoint)?;
        q -= &step;
        if !q.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("exponential map iterate"));
        }
        if step.norm() < 1e-9 {
            let f = sys.evaluate(&q)?;
            residual = f.norm();
            if residual < sys.tolerance {
                return Ok(q);
            }
            break;
        }
    }
    Err(Error::ProjectionFailed {
        iterations: max_newton,
        residual,
    })
}

/// `basisᵀ·(q − center)`.
pub fn psi_log(chart: &Chart, q: &Config) -> TangentCoord {
    chart.log(q)
}

/// `center + basis·u`.
pub fn phi_map(chart: &Chart, u: &TangentCoord) -> Config {
    chart.phi(u)
}

/// Validity region test for tangent coordinate `u` with manifold point `q`:
/// the chart must stay within `eps_chart` of the manifold, the chord to `q`
/// must stay within `alpha` of the tangent plane, and `‖u‖ ≤ rho`.
pub fn in_validity(params: &AtlasParams, chart: &Chart, u: &TangentCoord, q: &Config) -> bool {
    let u_norm = u.norm();
    if u_norm > params.rho {
        return false;
    }
    if (chart.phi(u) - q).norm() > params.eps_chart {
        return false;
    }
    let chord = (&chart.center - q).norm();
    if chord <= f64::EPSILON {
        // Degenerate at the center itself.
        return true;
    }
    u_norm / chord > params.alpha.cos()
}
