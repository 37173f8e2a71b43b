//! Jacobians by central differences, the analytic gradient of `V = ‖G‖²`,
//! and finite-difference cross-checks for analytic Jacobians.

use std::fmt;
use std::sync::Arc;

use crate::anchor::AnchorSystem;
use crate::error::{Error, Result};
use crate::linalg::{ensure_finite_matrix, ensure_finite_vector, Matrix, Vector};

pub type EvalFn = dyn Fn(&Vector) -> Vector + Send + Sync;
pub type JacobianFn = dyn Fn(&Vector) -> Matrix + Send + Sync;

/// A smooth map `R^dim_in -> R^dim_out`, optionally carrying its Jacobian.
#[derive(Clone)]
pub struct DifferentiableMap {
    dim_in: usize,
    dim_out: usize,
    eval: Arc<EvalFn>,
    analytic_jacobian: Option<Arc<JacobianFn>>,
}

impl fmt::Debug for DifferentiableMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DifferentiableMap")
            .field("dim_in", &self.dim_in)
            .field("dim_out", &self.dim_out)
            .field("analytic_jacobian", &self.analytic_jacobian.is_some())
            .finish()
    }
}

impl DifferentiableMap {
    pub fn new(dim_in: usize, dim_out: usize, eval: impl Fn(&Vector) -> Vector + Send + Sync + 'static) -> Self {
        Self { dim_in, dim_out, eval: Arc::new(eval), analytic_jacobian: None }
    }

    pub fn with_jacobian(mut self, jac: impl Fn(&Vector) -> Matrix + Send + Sync + 'static) -> Self {
        self.analytic_jacobian = Some(Arc::new(jac));
        self
    }

    /// Drops the analytic Jacobian so that `jacobian` falls back to finite differences.
    pub fn without_jacobian(mut self) -> Self {
        self.analytic_jacobian = None;
        self
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.analytic_jacobian.is_some()
    }

    pub fn eval(&self, x: &Vector) -> Result<Vector> {
        if x.len() != self.dim_in {
            return Err(Error::ShapeMismatch(format!("map expects input of length {}, got {}", self.dim_in, x.len())));
        }
        let y = (self.eval)(x);
        if y.len() != self.dim_out {
            return Err(Error::ShapeMismatch(format!(
                "map declared {} outputs but produced {}",
                self.dim_out,
                y.len()
            )));
        }
        ensure_finite_vector(&y, "map evaluation")?;
        Ok(y)
    }

    pub fn analytic_jacobian(&self, x: &Vector) -> Option<Result<Matrix>> {
        self.analytic_jacobian.as_ref().map(|j| {
            let m = j(x);
            if m.shape() != (self.dim_out, self.dim_in) {
                return Err(Error::ShapeMismatch(format!(
                    "analytic Jacobian is {}x{}, expected {}x{}",
                    m.nrows(),
                    m.ncols(),
                    self.dim_out,
                    self.dim_in
                )));
            }
            ensure_finite_matrix(&m, "analytic Jacobian")?;
            Ok(m)
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FdConfig {
    pub base_step: f64,
    /// Scale the step by `max(1, |x_i|)`.
    pub relative: bool,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self { base_step: f64::EPSILON.cbrt(), relative: true }
    }
}

impl FdConfig {
    fn step(&self, xi: f64) -> f64 {
        if self.relative {
            self.base_step * xi.abs().max(1.0)
        } else {
            self.base_step
        }
    }
}

/// Central-difference Jacobian of an arbitrary fallible evaluation.
pub fn central_difference<F>(f: F, x: &Vector, dim_out: usize, cfg: &FdConfig) -> Result<Matrix>
where
    F: Fn(&Vector) -> Result<Vector>,
{
    ensure_finite_vector(x, "differentiation point")?;
    let n = x.len();
    let mut jac = Matrix::zeros(dim_out, n);
    let mut probe = x.clone();
    for i in 0..n {
        let h = cfg.step(x[i]);
        probe[i] = x[i] + h;
        let fp = f(&probe)?;
        probe[i] = x[i] - h;
        let fm = f(&probe)?;
        probe[i] = x[i];
        if fp.len() != dim_out || fm.len() != dim_out {
            return Err(Error::ShapeMismatch("stencil evaluation changed length".into()));
        }
        let col = (fp - fm) / (2.0 * h);
        ensure_finite_vector(&col, "finite-difference stencil")?;
        jac.set_column(i, &col);
    }
    Ok(jac)
}

/// Analytic Jacobian when the map carries one, central differences otherwise.
pub fn jacobian(map: &DifferentiableMap, x: &Vector, cfg: &FdConfig) -> Result<Matrix> {
    ensure_finite_vector(x, "differentiation point")?;
    if x.len() != map.dim_in() {
        return Err(Error::ShapeMismatch(format!("expected point of length {}, got {}", map.dim_in(), x.len())));
    }
    match map.analytic_jacobian(x) {
        Some(j) => j,
        None => central_difference(|p| map.eval(p), x, map.dim_out(), cfg),
    }
}

/// `∇V(x) = 2 DG_xᵀ G(x)`.
pub fn grad_v(system: &AnchorSystem, x: &Vector) -> Result<Vector> {
    let g = system.constraint().eval(x)?;
    let dg = jacobian(system.constraint(), x, &system.fd_config())?;
    Ok(2.0 * dg.transpose() * g)
}

/// Largest relative Frobenius discrepancy between the analytic Jacobian and
/// its central-difference estimate over `samples`.
pub fn fd_crosscheck(map: &DifferentiableMap, samples: &[Vector]) -> Result<f64> {
    if !map.has_analytic_jacobian() {
        return Err(Error::MissingAnalyticJacobian);
    }
    let cfg = FdConfig::default();
    let mut worst = 0.0_f64;
    for x in samples {
        let analytic = map.analytic_jacobian(x).expect("checked above")?;
        let numeric = central_difference(|p| map.eval(p), x, map.dim_out(), &cfg)?;
        let err = (&analytic - &numeric).norm() / analytic.norm().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
