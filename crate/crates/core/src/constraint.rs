//! Implicit constraint functions and the Jacobian-pseudoinverse projection.
//!
//! A configuration `q` lives in an ambient space of dimension `n`. A
//! [`Constraint`] maps it to a residual vector of length `k`; the constraint
//! manifold is the zero set of that map, and membership is tested as
//! `‖F(q)‖₂ < tolerance`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A point in the ambient configuration space.
pub type Config = DVector<f64>;

/// Default manifold tolerance.
pub const DEFAULT_TOLERANCE: f64 = 1e-3;
/// Default projection iteration limit.
pub const DEFAULT_MAX_ITERATIONS: usize = 50;
/// Central-difference step used when no analytic jacobian is available.
pub const DEFAULT_FD_STEP: f64 = 1e-6;
/// Projection aborts when the Frobenius norm of the jacobian drops below this.
pub const SINGULAR_GRADIENT_THRESHOLD: f64 = 1e-9;

/// A smooth map `F: R^n -> R^k` whose zero set is the constraint manifold.
pub trait Constraint: Send + Sync {
    fn ambient_dim(&self) -> usize;

    fn codim(&self) -> usize;

    /// Writes `F(q)` into `out` (length `codim`).
    fn function(&self, q: &Config, out: &mut DVector<f64>);

    /// Writes the `k × n` jacobian into `out`. Returns `false` when the
    /// constraint has no closed form, in which case callers fall back to
    /// finite differences.
    fn analytic_jacobian(&self, _q: &Config, _out: &mut DMatrix<f64>) -> bool {
        false
    }
}

/// `F(q) = ‖q‖ − 1` on `R^3`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SphereConstraint;

impl Constraint for SphereConstraint {
    fn ambient_dim(&self) -> usize {
        3
    }

    fn codim(&self) -> usize {
        1
    }

    fn function(&self, q: &Config, out: &mut DVector<f64>) {
        out[0] = q.norm() - 1.0;
    }

    fn analytic_jacobian(&self, q: &Config, out: &mut DMatrix<f64>) -> bool {
        let norm = q.norm();
        // The gradient is undefined at the origin; report it as vanishing.
        let scale = if norm < SINGULAR_GRADIENT_THRESHOLD { 0.0 } else { 1.0 / norm };
        for j in 0..3 {
            out[(0, j)] = q[j] * scale;
        }
        true
    }
}

/// How [`ConstraintSystem::jacobian`] obtains derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JacobianMode {
    /// Use the constraint's closed form when it provides one.
    Analytic,
    /// Central differences with the given step.
    FiniteDifference { step: f64 },
}

/// A constraint together with its numerical settings.
#[derive(Clone)]
pub struct ConstraintSystem {
    constraint: Arc<dyn Constraint>,
    /// Manifold membership tolerance (ε).
    pub tolerance: f64,
    /// Projection iteration limit (N).
    pub max_iterations: usize,
    pub jacobian_mode: JacobianMode,
}

impl fmt::Debug for ConstraintSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintSystem")
            .field("n", &self.ambient_dim())
            .field("k", &self.codim())
            .field("tolerance", &self.tolerance)
            .field("max_iterations", &self.max_iterations)
            .field("jacobian_mode", &self.jacobian_mode)
            .finish()
    }
}

impl ConstraintSystem {
    pub fn new(constraint: Arc<dyn Constraint>) -> Result<Self> {
        let (n, k) = (constraint.ambient_dim(), constraint.codim());
        if k == 0 || k >= n {
            return Err(Error::Precondition(format!(
                "constraint count must satisfy 0 < k < n (k={k}, n={n})"
            )));
        }
        Ok(Self {
            constraint,
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            jacobian_mode: JacobianMode::Analytic,
        })
    }

    /// The unit sphere in `R^3` with default tolerances.
    pub fn sphere() -> Self {
        Self::new(Arc::new(SphereConstraint)).expect("sphere dimensions are valid")
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_max_iterations(mut self, max_iterations: usize) -> Self {
        self.max_iterations = max_iterations;
        self
    }

    pub fn with_finite_differences(mut self, step: f64) -> Self {
        self.jacobian_mode = JacobianMode::FiniteDifference { step };
        self
    }

    pub fn ambient_dim(&self) -> usize {
        self.constraint.ambient_dim()
    }

    pub fn codim(&self) -> usize {
        self.constraint.codim()
    }

    /// Dimension of the manifold, `n − k`.
    pub fn manifold_dim(&self) -> usize {
        self.ambient_dim() - self.codim()
    }

    pub fn check_config(&self, q: &Config) -> Result<()> {
        if q.len() != self.ambient_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.ambient_dim(),
                actual: q.len(),
            });
        }
        if !q.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("configuration"));
        }
        Ok(())
    }

    /// `F(q)`.
    pub fn evaluate(&self, q: &Config) -> Result<DVector<f64>> {
        self.check_config(q)?;
        Ok(self.evaluate_unchecked(q))
    }

    pub(crate) fn evaluate_unchecked(&self, q: &Config) -> DVector<f64> {
        let mut out = DVector::zeros(self.codim());
        self.constraint.function(q, &mut out);
        out
    }

    /// `‖F(q)‖₂`, the distance measure used for manifold membership.
    pub fn distance(&self, q: &Config) -> f64 {
        self.evaluate_unchecked(q).norm()
    }

    pub fn is_satisfied(&self, q: &Config) -> bool {
        q.len() == self.ambient_dim() && self.distance(q) < self.tolerance
    }

    /// The `k × n` jacobian of `F` at `q`.
    pub fn jacobian(&self, q: &Config) -> Result<DMatrix<f64>> {
        self.check_config(q)?;
        let mut out = DMatrix::zeros(self.codim(), self.ambient_dim());
        match self.jacobian_mode {
            JacobianMode::Analytic => {
                if !self.constraint.analytic_jacobian(q, &mut out) {
                    self.finite_difference_jacobian(q, DEFAULT_FD_STEP, &mut out)?;
                }
            }
            JacobianMode::FiniteDifference { step } => {
                self.finite_difference_jacobian(q, step, &mut out)?;
            }
        }
        if !out.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("jacobian"));
        }
        Ok(out)
    }

    fn finite_difference_jacobian(
        &self,
        q: &Config,
        step: f64,
        out: &mut DMatrix<f64>,
    ) -> Result<()> {
        let mut probe = q.clone();
        let mut forward = DVector::zeros(self.codim());
        let mut backward = DVector::zeros(self.codim());
        for j in 0..self.ambient_dim() {
            probe[j] = q[j] + step;
            self.constraint.function(&probe, &mut forward);
            probe[j] = q[j] - step;
            self.constraint.function(&probe, &mut backward);
            probe[j] = q[j];
            if !forward.iter().chain(backward.iter()).all(|v| v.is_finite()) {
                return Err(Error::NonFinite("constraint value near configuration"));
            }
            for i in 0..self.codim() {
                out[(i, j)] = (forward[i] - backward[i]) / (2.0 * step);
            }
        }
        Ok(())
    }

    /// Projects `q` onto the manifold by iterating `q ← q − J(q)⁺ F(q)`
    /// at most `max_iterations` times.
    pub fn project(&self, q: &Config) -> Result<Config> {
        self.project_with_limit(q, self.max_iterations)
    }

    pub fn project_with_limit(&self, q: &Config, max_iterations: usize) -> Result<Config> {
        self.check_config(q)?;
        let mut current = q.clone();
        let mut residual = f64::INFINITY;
        for _ in 0..=max_iterations {
            let value = self.evaluate_unchecked(&current);
            residual = value.norm();
            if !residual.is_finite() {
                return Err(Error::NonFinite("constraint value during projection"));
            }
            if residual < self.tolerance {
                return Ok(current);
            }
            let jac = self.jacobian(&current)?;
            let norm = jac.norm();
            if norm < SINGULAR_GRADIENT_THRESHOLD {
                return Err(Error::SingularGradient { norm });
            }
            current -= pseudoinverse(&jac) * value;
        }
        Err(Error::ProjectionFailed {
            iterations: max_iterations,
            residual,
        })
    }
}

/// Moore–Penrose pseudoinverse through the singular value decomposition.
///
/// Singular values at or below `1e-10 · σ_max` are treated as zero.
pub fn pseudoinverse(j: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = j.shape();
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(cols, rows);
    }
    if rows == 1 {
        // Rank-one row: J⁺ = Jᵀ / ‖J‖².
        let sq = j.norm_squared();
        if sq == 0.0 {
            return DMatrix::zeros(cols, 1);
        }
        return j.transpose() / sq;
    }
    let svd = j.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let threshold = 1e-10 * max_sv;
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested Vᵀ");
    let mut out = DMatrix::zeros(cols, rows);
    for (idx, &sv) in svd.singular_values.iter().enumerate() {
        if sv > threshold && sv > 0.0 {
            // out += v_i · u_iᵀ / σ_i
            let v = v_t.row(idx).transpose();
            let u_col = u.column(idx);
            out += (v * u_col.transpose()) / sv;
        }
    }
    out
}
