//! The anchoring construction.
//!
//! Given a constraint map `G: R^n -> R^(n-k)` whose zero set is the target
//! manifold `M`, a phase map `P: R^n -> R^n` retracting onto `M`, and template
//! dynamics `g` tangent to `M`, this module builds
//!
//! * the fibre projector `Π^P_x = I - DP_x⁺ DP_x`,
//! * the coordinate change `T_x = (I - DG_x⁺ DG_x) DP_x⁺ DP_x + DG_x⁺ DG_x`,
//! * the horizontal lift `f_h(x) = T_x⁻¹ [T_P(x) DP_x T_x⁻¹]⁺ T_P(x) g(P(x))`,
//! * the stabilising vertical field `f_v(x) = -α(x) Π^P_x ∇V(x)`, `V = ‖G‖²`,
//!
//! and their sum `f = f_h + f_v`, for which `M` is an attracting invariant
//! manifold whose asymptotic phase is exactly `P`.
//!
//! The abstract template manifold never appears: callers hand over `P` and
//! `g` already expressed in ambient coordinates.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::calculus::{central_difference, jacobian, DifferentiableMap, FdConfig};
use crate::error::{Error, Result};
use crate::integrate::VectorField;
use crate::linalg::{
    ensure_finite_vector, kernel_basis, projector_onto_rowspace_rank, pseudoinverse_rank, svd, Matrix, SquareSolver,
    Vector, CONDITION_CEILING,
};
use crate::verify::VerificationReport;

pub type TemplateFn = dyn Fn(&Vector) -> Vector + Send + Sync;
pub type GuardFn = dyn Fn(&Vector) -> bool + Send + Sync;
pub type ScalarFn = dyn Fn(&Vector) -> f64 + Send + Sync;
pub type RowsFn = dyn Fn(&Vector) -> Matrix + Send + Sync;

/// Relative band within which a point counts as lying on `M`.
pub const ON_MANIFOLD_TOL: f64 = 1e-10;

/// Gain `α` multiplying the vertical field.
#[derive(Clone)]
pub enum Gain {
    Constant(f64),
    /// `α(x) = s_v R / (s_v + ‖R Π^P_x ∇V(x)‖)`: caps the vertical speed at `s_v`.
    Saturating {
        s_v: f64,
        r: f64,
    },
    Custom(Arc<ScalarFn>),
}

impl fmt::Debug for Gain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gain::Constant(a) => write!(f, "Constant({a})"),
            Gain::Saturating { s_v, r } => write!(f, "Saturating {{ s_v: {s_v}, r: {r} }}"),
            Gain::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Gain {
    fn value(&self, x: &Vector, projected_grad: &Vector) -> f64 {
        match self {
            Gain::Constant(a) => *a,
            Gain::Saturating { s_v, r } => s_v * r / (s_v + r * projected_grad.norm()),
            Gain::Custom(f) => f(x),
        }
    }
}

/// One construction instance `(G, P, g, α)` on a domain `B ⊂ R^n`.
#[derive(Clone)]
pub struct AnchorSystem {
    name: String,
    n: usize,
    k: usize,
    constraint: DifferentiableMap,
    phase: DifferentiableMap,
    template: Arc<TemplateFn>,
    gain: Gain,
    alpha_floor: f64,
    guard: Arc<GuardFn>,
    phase_coordinate_jacobian: Option<Arc<RowsFn>>,
    distance: Option<Arc<ScalarFn>>,
    fd: FdConfig,
}

impl fmt::Debug for AnchorSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnchorSystem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("k", &self.k)
            .field("gain", &self.gain)
            .field("alpha_floor", &self.alpha_floor)
            .finish_non_exhaustive()
    }
}

/// `f`, its two components and `V` at a point.
#[derive(Debug, Clone)]
pub struct FieldEvaluation {
    pub x: Vector,
    pub f_h: Vector,
    pub f_v: Vector,
    pub f: Vector,
    pub v: f64,
    pub cond_t: f64,
}

/// State `(θ, ω)` of the second-order embedding with relaxation gain `μ`.
#[derive(Debug, Clone)]
pub struct SecondOrderState {
    pub theta: Vector,
    pub omega: Vector,
    pub mu: f64,
}

/// Jacobians and projectors at a point.
struct Frame {
    g: Vector,
    dg: Matrix,
    dp: Matrix,
    normal_proj: Matrix,
    phase_proj: Matrix,
}

impl AnchorSystem {
    /// Assembles a system. `constraint` must map `R^n -> R^(n-k)` and `phase`
    /// must map `R^n -> R^n`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        n: usize,
        k: usize,
        constraint: DifferentiableMap,
        phase: DifferentiableMap,
        template: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
        gain: Gain,
        guard: impl Fn(&Vector) -> bool + Send + Sync + 'static,
    ) -> Result<Self> {
        if n == 0 || k >= n {
            return Err(Error::InvalidParameters(format!("need 0 <= k < n, got n={n}, k={k}")));
        }
        if constraint.dim_in() != n || constraint.dim_out() != n - k {
            return Err(Error::ShapeMismatch(format!(
                "constraint map must be {n} -> {}, got {} -> {}",
                n - k,
                constraint.dim_in(),
                constraint.dim_out()
            )));
        }
        if phase.dim_in() != n || phase.dim_out() != n {
            return Err(Error::ShapeMismatch(format!(
                "phase map must be {n} -> {n}, got {} -> {}",
                phase.dim_in(),
                phase.dim_out()
            )));
        }
        let alpha_floor = match &gain {
            Gain::Constant(a) if *a > 0.0 && a.is_finite() => *a,
            Gain::Constant(a) => {
                return Err(Error::InvalidParameters(format!("constant gain must be positive, got {a}")))
            }
            _ => f64::MIN_POSITIVE,
        };
        Ok(Self {
            name: name.into(),
            n,
            k,
            constraint,
            phase,
            template: Arc::new(template),
            gain,
            alpha_floor,
            guard: Arc::new(guard),
            phase_coordinate_jacobian: None,
            distance: None,
            fd: FdConfig::default(),
        })
    }

    pub fn with_alpha_floor(mut self, floor: f64) -> Result<Self> {
        if !(floor > 0.0) {
            return Err(Error::InvalidParameters(format!("alpha floor must be positive, got {floor}")));
        }
        self.alpha_floor = floor;
        Ok(self)
    }

    pub fn with_gain(mut self, gain: Gain) -> Result<Self> {
        if let Gain::Constant(a) = gain {
            if !(a > 0.0) {
                return Err(Error::InvalidParameters(format!("constant gain must be positive, got {a}")));
            }
            self.alpha_floor = a;
        }
        self.gain = gain;
        Ok(self)
    }

    pub fn with_template(mut self, template: impl Fn(&Vector) -> Vector + Send + Sync + 'static) -> Self {
        self.template = Arc::new(template);
        self
    }

    pub fn with_phase(mut self, phase: DifferentiableMap) -> Result<Self> {
        if phase.dim_in() != self.n || phase.dim_out() != self.n {
            return Err(Error::ShapeMismatch("phase map must be n -> n".into()));
        }
        self.phase = phase;
        Ok(self)
    }

    pub fn with_constraint(mut self, constraint: DifferentiableMap) -> Result<Self> {
        if constraint.dim_in() != self.n || constraint.dim_out() != self.n - self.k {
            return Err(Error::ShapeMismatch("constraint map must be n -> n-k".into()));
        }
        self.constraint = constraint;
        Ok(self)
    }

    /// Rows spanning `(ker DP_x)^⊥` in the template's own coordinates (the
    /// Jacobian of the intrinsic phase map). Used by transversality scans.
    pub fn with_phase_coordinate_jacobian(mut self, jac: impl Fn(&Vector) -> Matrix + Send + Sync + 'static) -> Self {
        self.phase_coordinate_jacobian = Some(Arc::new(jac));
        self
    }

    /// Exact Euclidean distance to `M`, when the geometry makes it available.
    pub fn with_distance(mut self, distance: impl Fn(&Vector) -> f64 + Send + Sync + 'static) -> Self {
        self.distance = Some(Arc::new(distance));
        self
    }

    /// Distance from `x` to `M`: exact when known, otherwise the fibre
    /// displacement `‖x - P(x)‖`, which bounds it from above.
    pub fn distance_to_manifold(&self, x: &Vector) -> Result<f64> {
        match &self.distance {
            Some(d) => Ok(d(x)),
            None => Ok((x - self.phase.eval(x)?).norm()),
        }
    }

    /// Drops the analytic Jacobians of `G` and `P`, so every derivative in the
    /// construction comes from finite differences.
    pub fn without_analytic_jacobians(mut self) -> Self {
        self.constraint = self.constraint.without_jacobian();
        self.phase = self.phase.without_jacobian();
        self
    }

    pub fn with_fd_config(mut self, fd: FdConfig) -> Self {
        self.fd = fd;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn ambient_dim(&self) -> usize {
        self.n
    }

    pub fn manifold_dim(&self) -> usize {
        self.k
    }

    pub fn constraint(&self) -> &DifferentiableMap {
        &self.constraint
    }

    pub fn phase(&self) -> &DifferentiableMap {
        &self.phase
    }

    pub fn gain(&self) -> &Gain {
        &self.gain
    }

    pub fn alpha_floor(&self) -> f64 {
        self.alpha_floor
    }

    pub fn fd_config(&self) -> FdConfig {
        self.fd
    }

    pub fn in_domain(&self, x: &Vector) -> bool {
        x.len() == self.n && x.iter().all(|v| v.is_finite()) && (self.guard)(x)
    }

    fn require_domain(&self, x: &Vector) -> Result<()> {
        if self.in_domain(x) {
            Ok(())
        } else {
            Err(Error::OutOfDomain(x.iter().copied().collect()))
        }
    }

    /// Template vector field evaluated at a point of `M`.
    pub fn template_at(&self, p: &Vector) -> Result<Vector> {
        let v = (self.template)(p);
        if v.len() != self.n {
            return Err(Error::ShapeMismatch("template field has wrong length".into()));
        }
        ensure_finite_vector(&v, "template field")?;
        Ok(v)
    }

    pub fn phase_coordinate_jacobian(&self, x: &Vector) -> Option<Matrix> {
        self.phase_coordinate_jacobian.as_ref().map(|j| j(x))
    }

    pub fn project(&self, x: &Vector) -> Result<Vector> {
        self.phase.eval(x)
    }

    pub fn constraint_jacobian(&self, x: &Vector) -> Result<Matrix> {
        jacobian(&self.constraint, x, &self.fd)
    }

    pub fn phase_jacobian(&self, x: &Vector) -> Result<Matrix> {
        jacobian(&self.phase, x, &self.fd)
    }

    /// Whether `‖G(x)‖ ≤ 1e-10 (1 + ‖x‖)`.
    pub fn is_on_manifold(&self, x: &Vector) -> Result<bool> {
        let g = self.constraint.eval(x)?;
        Ok(g.norm() <= ON_MANIFOLD_TOL * (1.0 + x.norm()))
    }

    fn frame(&self, x: &Vector) -> Result<Frame> {
        let g = self.constraint.eval(x)?;
        let dg = self.constraint_jacobian(x)?;
        let dp = self.phase_jacobian(x)?;
        let normal_proj = projector_onto_rowspace_rank(&dg, self.n - self.k)?;
        let phase_proj = projector_onto_rowspace_rank(&dp, self.k)?;
        Ok(Frame { g, dg, dp, normal_proj, phase_proj })
    }

    fn t_matrix(&self, fr: &Frame) -> Matrix {
        let eye = Matrix::identity(self.n, self.n);
        (&eye - &fr.normal_proj) * &fr.phase_proj + &fr.normal_proj
    }

    fn t_solver(&self, fr: &Frame) -> Result<(Matrix, SquareSolver)> {
        let t = self.t_matrix(fr);
        let solver = SquareSolver::new(&t).map_err(|e| match e {
            Error::SingularMatrix { cond } => Error::ConnectionViolated { cond },
            other => other,
        })?;
        Ok((t, solver))
    }

    /// `V(x) = ‖G(x)‖²`.
    pub fn potential_v(&self, x: &Vector) -> Result<f64> {
        self.require_domain(x)?;
        Ok(self.constraint.eval(x)?.norm_squared())
    }

    /// `Π^P_x = I - DP_x⁺ DP_x`, the orthogonal projector onto `ker DP_x`.
    pub fn pi_p(&self, x: &Vector) -> Result<Matrix> {
        self.require_domain(x)?;
        let dp = self.phase_jacobian(x)?;
        Ok(Matrix::identity(self.n, self.n) - projector_onto_rowspace_rank(&dp, self.k)?)
    }

    /// `T_x` together with its condition estimate.
    pub fn coordinate_change_t(&self, x: &Vector) -> Result<(Matrix, f64)> {
        self.require_domain(x)?;
        let fr = self.frame(x)?;
        let (t, solver) = self.t_solver(&fr)?;
        Ok((t, solver.condition()))
    }

    pub fn horizontal_field(&self, x: &Vector) -> Result<Vector> {
        self.require_domain(x)?;
        let fr = self.frame(x)?;
        Ok(self.horizontal_from_frame(x, &fr)?.0)
    }

    pub fn vertical_field(&self, x: &Vector) -> Result<Vector> {
        self.require_domain(x)?;
        let fr = self.frame(x)?;
        Ok(self.vertical_from_frame(x, &fr))
    }

    pub fn anchored_field(&self, x: &Vector) -> Result<FieldEvaluation> {
        self.require_domain(x)?;
        self.evaluate_unchecked(x)
    }

    /// The anchored field without the domain guard; integrators call this at
    /// trial stages that may momentarily sit outside `B`.
    pub(crate) fn evaluate_unchecked(&self, x: &Vector) -> Result<FieldEvaluation> {
        ensure_finite_vector(x, "field argument")?;
        let fr = self.frame(x)?;
        let (f_h, cond_t) = self.horizontal_from_frame(x, &fr)?;
        let f_v = self.vertical_from_frame(x, &fr);
        let f = &f_h + &f_v;
        Ok(FieldEvaluation { x: x.clone(), v: fr.g.norm_squared(), f_h, f_v, f, cond_t })
    }

    fn horizontal_from_frame(&self, x: &Vector, fr: &Frame) -> Result<(Vector, f64)> {
        let (_, solver_x) = self.t_solver(fr)?;
        let p = self.phase.eval(x)?;
        let frp = self.frame(&p)?;
        let t_p = self.t_matrix(&frp);
        let g_p = self.template_at(&p)?;
        // [T_P(x) DP_x T_x⁻¹], rank k
        let inner = solver_x.right_solve_matrix(&(&t_p * &fr.dp));
        let inner_pinv = pseudoinverse_rank(&inner, self.k)?;
        let w = inner_pinv * (t_p * g_p);
        Ok((solver_x.solve(&w), solver_x.condition()))
    }

    fn vertical_from_frame(&self, x: &Vector, fr: &Frame) -> Vector {
        let grad = 2.0 * fr.dg.transpose() * &fr.g;
        let pi = Matrix::identity(self.n, self.n) - &fr.phase_proj;
        let projected = pi * grad;
        let alpha = self.gain.value(x, &projected);
        -alpha * projected
    }

    /// `α(x)` as used by the vertical field.
    pub fn alpha(&self, x: &Vector) -> Result<f64> {
        let fr = self.frame(x)?;
        let grad = 2.0 * fr.dg.transpose() * &fr.g;
        let projected = (Matrix::identity(self.n, self.n) - &fr.phase_proj) * grad;
        Ok(self.gain.value(x, &projected))
    }

    /// Jacobian of the anchored field by central differences.
    pub fn field_jacobian(&self, x: &Vector) -> Result<Matrix> {
        central_difference(|p| Ok(self.evaluate_unchecked(p)?.f), x, self.n, &self.fd)
    }

    /// `F(θ, ω) = (ω, Df_θ f(θ) − μ (ω − f(θ)))`.
    pub fn second_order_field(&self, s: &SecondOrderState) -> Result<Vector> {
        if s.theta.len() != self.n || s.omega.len() != self.n {
            return Err(Error::ShapeMismatch("second-order state has wrong length".into()));
        }
        self.require_domain(&s.theta)?;
        self.second_order_unchecked(&s.theta, &s.omega, s.mu)
    }

    pub(crate) fn second_order_unchecked(&self, theta: &Vector, omega: &Vector, mu: f64) -> Result<Vector> {
        let f = self.evaluate_unchecked(theta)?.f;
        let df = self.field_jacobian(theta)?;
        let accel = &df * &f - mu * (omega - &f);
        let mut out = Vector::zeros(2 * self.n);
        out.rows_mut(0, self.n).copy_from(omega);
        out.rows_mut(self.n, self.n).copy_from(&accel);
        Ok(out)
    }

    /// Checks the standing assumptions of the construction on `samples`.
    pub fn check_assumptions(&self, samples: &[Vector]) -> AssumptionReport {
        let records: Vec<AssumptionSample> = samples.par_iter().map(|x| self.assess(x)).collect();
        let pick = |f: fn(&AssumptionSample) -> Option<f64>| -> Vec<(usize, f64)> {
            records.iter().enumerate().filter_map(|(i, r)| f(r).map(|v| (i, v))).collect()
        };
        AssumptionReport {
            checks: vec![
                VerificationReport::from_indexed("constraint_rank", pick(|r| Some(r.rank_cond)), 1e8),
                VerificationReport::from_indexed("direct_sum", pick(|r| Some(r.t_cond)), CONDITION_CEILING),
                VerificationReport::from_indexed("projected_gradient_nonzero", pick(|r| r.grad_ratio), 1e8),
                VerificationReport::from_indexed("phase_retraction", pick(|r| Some(r.retraction)), 1e-9),
                VerificationReport::from_indexed("template_tangency", pick(|r| Some(r.tangency)), 1e-9),
                VerificationReport::from_indexed("alpha_floor", pick(|r| Some(r.alpha_deficit)), 0.0),
            ],
        }
    }

    fn assess(&self, x: &Vector) -> AssumptionSample {
        let bad = AssumptionSample {
            rank_cond: f64::INFINITY,
            t_cond: f64::INFINITY,
            grad_ratio: Some(f64::INFINITY),
            retraction: f64::INFINITY,
            tangency: f64::INFINITY,
            alpha_deficit: f64::INFINITY,
        };
        if !self.in_domain(x) {
            return bad;
        }
        let Ok(fr) = self.frame(x) else { return bad };
        let nk = self.n - self.k;

        let rank_cond = svd(&fr.dg)
            .map(|f| {
                let s = f.singular_values[nk - 1];
                if s > 0.0 {
                    f.sigma_max() / s
                } else {
                    f64::INFINITY
                }
            })
            .unwrap_or(f64::INFINITY);

        let t_cond = crate::linalg::condition_number(&self.t_matrix(&fr)).unwrap_or(f64::INFINITY);

        let grad = 2.0 * fr.dg.transpose() * &fr.g;
        let projected = (Matrix::identity(self.n, self.n) - &fr.phase_proj) * &grad;
        let off_manifold = fr.g.norm() > ON_MANIFOLD_TOL * (1.0 + x.norm());
        let grad_ratio = off_manifold.then(|| {
            let pn = projected.norm();
            if pn > 0.0 {
                grad.norm() / pn
            } else {
                f64::INFINITY
            }
        });

        let (retraction, tangency) = match self.phase.eval(x) {
            Ok(p) => {
                let pp = self.phase.eval(&p).map(|pp| (pp - &p).norm()).unwrap_or(f64::INFINITY);
                let gp = self.constraint.eval(&p).map(|g| g.norm()).unwrap_or(f64::INFINITY);
                let tan = match (self.constraint_jacobian(&p), self.template_at(&p)) {
                    (Ok(dgp), Ok(v)) => (dgp * v).norm(),
                    _ => f64::INFINITY,
                };
                (pp.max(gp), tan)
            }
            Err(_) => (f64::INFINITY, f64::INFINITY),
        };

        let alpha_deficit = self.alpha_floor - self.gain.value(x, &projected);

        AssumptionSample { rank_cond, t_cond, grad_ratio, retraction, tangency, alpha_deficit }
    }

    /// Orthonormal bases `(ker DG_x, ker DP_x)` as matrix columns.
    pub fn kernel_bases(&self, x: &Vector) -> Result<(Matrix, Matrix)> {
        let dg = self.constraint_jacobian(x)?;
        let dp = self.phase_jacobian(x)?;
        Ok((kernel_basis(&dg, Some(self.n - self.k))?, kernel_basis(&dp, Some(self.k))?))
    }
}

struct AssumptionSample {
    rank_cond: f64,
    t_cond: f64,
    grad_ratio: Option<f64>,
    retraction: f64,
    tangency: f64,
    alpha_deficit: f64,
}

/// Outcome of [`AnchorSystem::check_assumptions`]: one report per assumption.
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    pub checks: Vec<VerificationReport>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&VerificationReport> {
        self.checks.iter().find(|c| c.check_name == name)
    }
}

impl VectorField for AnchorSystem {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, x: &Vector) -> Result<Vector> {
        Ok(self.evaluate_unchecked(x)?.f)
    }

    fn in_domain(&self, x: &Vector) -> bool {
        AnchorSystem::in_domain(self, x)
    }

    fn jacobian(&self, x: &Vector) -> Result<Matrix> {
        self.field_jacobian(x)
    }
}
