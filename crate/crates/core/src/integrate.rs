//! Adaptive Dormand–Prince 5(4) integration.
//!
//! The stepper uses the standard DOPRI5 tableau with FSAL, an RMS error norm
//! against `atol + rtol·max(|y|, |y_new|)`, and a PI step controller. Every
//! accepted step is stored; there is no dense output.

use std::fmt;

use crate::calculus::{central_difference, FdConfig};
use crate::error::{Error, Result};
use crate::linalg::{ensure_finite_vector, Matrix, Vector};

/// An autonomous vector field `ẋ = f(x)` on `R^dim`.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;

    fn eval(&self, x: &Vector) -> Result<Vector>;

    /// Accepted states must satisfy this predicate; integration stops with
    /// [`TerminalStatus::DomainExit`] as soon as one does not.
    fn in_domain(&self, _x: &Vector) -> bool {
        true
    }

    fn jacobian(&self, x: &Vector) -> Result<Matrix> {
        central_difference(|p| self.eval(p), x, self.dim(), &FdConfig::default())
    }
}

/// A vector field given by a closure.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&Vector) -> Vector + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> VectorField for FnField<F>
where
    F: Fn(&Vector) -> Vector + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &Vector) -> Result<Vector> {
        Ok((self.f)(x))
    }
}

impl<T: VectorField + ?Sized> VectorField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval(&self, x: &Vector) -> Result<Vector> {
        (**self).eval(x)
    }

    fn in_domain(&self, x: &Vector) -> bool {
        (**self).in_domain(x)
    }

    fn jacobian(&self, x: &Vector) -> Result<Matrix> {
        (**self).jacobian(x)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    /// `None` selects the initial step automatically.
    pub initial_step: Option<f64>,
    /// `None` means unbounded (the span length).
    pub max_step: Option<f64>,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { rtol: 1e-9, atol: 1e-12, initial_step: None, max_step: None, max_steps: 1_000_000 }
    }
}

impl IntegratorConfig {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        Self { rtol, atol, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0) || !(self.atol > 0.0) || self.max_steps == 0 {
            return Err(Error::InvalidParameters(format!(
                "integrator needs rtol, atol > 0 and max_steps >= 1 (got {}, {}, {})",
                self.rtol, self.atol, self.max_steps
            )));
        }
        if matches!(self.initial_step, Some(h) if !(h > 0.0)) || matches!(self.max_step, Some(h) if !(h > 0.0)) {
            return Err(Error::InvalidParameters("step sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalStatus {
    Completed,
    DomainExit,
    /// The step budget ran out before the end of the span.
    StepFailure,
}

impl fmt::Display for TerminalStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TerminalStatus::Completed => "completed",
            TerminalStatus::DomainExit => "domain_exit",
            TerminalStatus::StepFailure => "step_failure",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    /// `true` for states produced by an accepted step (the initial state is `false`).
    pub accepted: Vec<bool>,
    pub terminal_status: TerminalStatus,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &Vector {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory holds the initial state")
    }
}

#[derive(Debug, Clone)]
pub struct VariationalTrajectory {
    pub base: Trajectory,
    /// `Dφ_t(x0)` at each stored time.
    pub transition_matrices: Vec<Matrix>,
}

// Dormand–Prince 5(4) tableau. Fields are autonomous, so the nodes c_i are unused.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const EXP_CURRENT: f64 = 0.7 / 5.0;
const EXP_PREVIOUS: f64 = 0.4 / 5.0;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

fn error_norm(err: &Vector, y: &Vector, y_new: &Vector, cfg: &IntegratorConfig) -> f64 {
    let n = err.len() as f64;
    let sum: f64 = err
        .iter()
        .zip(y.iter().zip(y_new.iter()))
        .map(|(e, (a, b))| {
            let sc = cfg.atol + cfg.rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

fn rms_scaled(v: &Vector, y: &Vector, cfg: &IntegratorConfig) -> f64 {
    let n = v.len() as f64;
    let sum: f64 = v.iter().zip(y.iter()).map(|(a, b)| (a / (cfg.atol + cfg.rtol * b.abs())).powi(2)).sum();
    (sum / n).sqrt()
}

fn initial_step<F: VectorField + ?Sized>(
    field: &F,
    y0: &Vector,
    f0: &Vector,
    span: f64,
    cfg: &IntegratorConfig,
) -> f64 {
    let d0 = rms_scaled(y0, y0, cfg);
    let d1 = rms_scaled(f0, y0, cfg);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1 = y0 + h0 * f0;
    let d2 = match field.eval(&y1) {
        Ok(f1) => rms_scaled(&(f1 - f0), y0, cfg) / h0,
        Err(_) => return h0 * 1e-3,
    };
    let dm = d1.max(d2);
    let h1 = if dm <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / dm).powf(0.2) };
    (100.0 * h0).min(h1).min(span)
}

/// Integrates `field` from `x0` over `t_span = (t0, t1)`.
pub fn integrate<F: VectorField + ?Sized>(
    field: &F,
    x0: &Vector,
    t_span: (f64, f64),
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    let (t0, t1) = t_span;
    if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::InvalidParameters(format!("need t1 > t0, got ({t0}, {t1})")));
    }
    if x0.len() != field.dim() {
        return Err(Error::ShapeMismatch(format!(
            "initial state has length {}, field dimension is {}",
            x0.len(),
            field.dim()
        )));
    }
    ensure_finite_vector(x0, "initial state")?;
    if !field.in_domain(x0) {
        return Err(Error::OutOfDomain(x0.iter().copied().collect()));
    }

    let span = t1 - t0;
    let h_min = 1e-14 * span;
    let h_max = cfg.max_step.unwrap_or(span).min(span);

    let mut t = t0;
    let mut y = x0.clone();
    let mut k1 = field.eval(&y)?;
    ensure_finite_vector(&k1, "field value")?;
    let mut h = cfg.initial_step.unwrap_or_else(|| initial_step(field, &y, &k1, span, cfg)).min(h_max);
    let mut err_prev = 1e-4_f64;
    let mut last_reject = false;

    let mut traj = Trajectory {
        times: vec![t0],
        states: vec![y.clone()],
        accepted: vec![false],
        terminal_status: TerminalStatus::Completed,
    };

    let mut steps = 0usize;
    while t < t1 {
        if steps >= cfg.max_steps {
            traj.terminal_status = TerminalStatus::StepFailure;
            return Ok(traj);
        }
        steps += 1;

        let last = t + h >= t1 || t1 - (t + h) < h_min;
        if last {
            h = t1 - t;
        }

        match dopri_step(field, &y, &k1, h) {
            Ok((y_new, k7, err_vec)) => {
                let err = error_norm(&err_vec, &y, &y_new, cfg);
                if err.is_finite() && err <= 1.0 {
                    t = if last { t1 } else { t + h };
                    y = y_new;
                    k1 = k7;
                    if !field.in_domain(&y) {
                        traj.terminal_status = TerminalStatus::DomainExit;
                        return Ok(traj);
                    }
                    traj.times.push(t);
                    traj.states.push(y.clone());
                    traj.accepted.push(true);

                    let err_c = err.max(1e-10);
                    let mut fac = SAFETY * err_c.powf(-EXP_CURRENT) * err_prev.powf(EXP_PREVIOUS);
                    fac = fac.clamp(FAC_MIN, FAC_MAX);
                    if last_reject {
                        fac = fac.min(1.0);
                    }
                    err_prev = err.max(1e-4);
                    h = (h * fac).min(h_max);
                    last_reject = false;
                } else {
                    let fac = if err.is_finite() { (SAFETY * err.powf(-0.2)).max(FAC_MIN) } else { FAC_MIN };
                    h *= fac;
                    last_reject = true;
                    if h < h_min {
                        return Err(Error::StepFailure {
                            t,
                            h,
                            reason: format!("error estimate {err:.3e} not reducible"),
                        });
                    }
                }
            }
            Err(e) => {
                // a stage evaluation failed (typically outside the field's domain); retry smaller
                h *= 0.25;
                last_reject = true;
                if h < h_min {
                    return Err(Error::StepFailure { t, h, reason: format!("field evaluation failed: {e}") });
                }
            }
        }
    }
    Ok(traj)
}

fn dopri_step<F: VectorField + ?Sized>(field: &F, y: &Vector, k1: &Vector, h: f64) -> Result<(Vector, Vector, Vector)> {
    let eval = |p: Vector| -> Result<Vector> {
        let v = field.eval(&p)?;
        ensure_finite_vector(&v, "field value")?;
        Ok(v)
    };
    let k2 = eval(y + h * (A21 * k1))?;
    let k3 = eval(y + h * (A31 * k1 + A32 * &k2))?;
    let k4 = eval(y + h * (A41 * k1 + A42 * &k2 + A43 * &k3))?;
    let k5 = eval(y + h * (A51 * k1 + A52 * &k2 + A53 * &k3 + A54 * &k4))?;
    let k6 = eval(y + h * (A61 * k1 + A62 * &k2 + A63 * &k3 + A64 * &k4 + A65 * &k5))?;
    let y_new = y + h * (A71 * k1 + A73 * &k3 + A74 * &k4 + A75 * &k5 + A76 * &k6);
    let k7 = eval(y_new.clone())?;
    let err = h * (E1 * k1 + E3 * &k3 + E4 * &k4 + E5 * &k5 + E6 * &k6 + E7 * &k7);
    Ok((y_new, k7, err))
}

/// `(x, Φ) ↦ (f(x), Df(x) Φ)` on `R^(n + n²)`, `Φ` stored column-major.
struct Variational<'a, F: ?Sized> {
    field: &'a F,
}

impl<F: VectorField + ?Sized> VectorField for Variational<'_, F> {
    fn dim(&self) -> usize {
        let n = self.field.dim();
        n + n * n
    }

    fn eval(&self, z: &Vector) -> Result<Vector> {
        let n = self.field.dim();
        let x = z.rows(0, n).into_owned();
        let phi = Matrix::from_column_slice(n, n, &z.as_slice()[n..]);
        let fx = self.field.eval(&x)?;
        let dphi = self.field.jacobian(&x)? * phi;
        let mut out = Vector::zeros(n + n * n);
        out.rows_mut(0, n).copy_from(&fx);
        out.as_mut_slice()[n..].copy_from_slice(dphi.as_slice());
        Ok(out)
    }

    fn in_domain(&self, z: &Vector) -> bool {
        let n = self.field.dim();
        self.field.in_domain(&z.rows(0, n).into_owned())
    }
}

/// Integrates the state jointly with the variational equation
/// `d/dt Dφ_t = Df(φ_t) Dφ_t`, `Dφ_0 = I`.
pub fn integrate_variational<F: VectorField + ?Sized>(
    field: &F,
    x0: &Vector,
    t_span: (f64, f64),
    cfg: &IntegratorConfig,
) -> Result<VariationalTrajectory> {
    let n = field.dim();
    if x0.len() != n {
        return Err(Error::ShapeMismatch("initial state has wrong length".into()));
    }
    let mut z0 = Vector::zeros(n + n * n);
    z0.rows_mut(0, n).copy_from(x0);
    for i in 0..n {
        z0[n + i * n + i] = 1.0;
    }
    let joint = integrate(&Variational { field }, &z0, t_span, cfg)?;
    let mut transition_matrices = Vec::with_capacity(joint.len());
    let mut states = Vec::with_capacity(joint.len());
    for z in &joint.states {
        states.push(z.rows(0, n).into_owned());
        transition_matrices.push(Matrix::from_column_slice(n, n, &z.as_slice()[n..]));
    }
    Ok(VariationalTrajectory {
        base: Trajectory {
            times: joint.times,
            states,
            accepted: joint.accepted,
            terminal_status: joint.terminal_status,
        },
        transition_matrices,
    })
}
