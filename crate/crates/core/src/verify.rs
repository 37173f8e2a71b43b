//! Numerical checks of the properties the construction guarantees.

use rayon::prelude::*;
use serde::Serialize;

use crate::anchor::{AnchorSystem, ON_MANIFOLD_TOL};
use crate::calculus::{grad_v, DifferentiableMap};
use crate::error::{Error, Result};
use crate::integrate::{integrate, integrate_variational, IntegratorConfig, TerminalStatus, Trajectory, VectorField};
use crate::linalg::{
    kernel_basis, projector_onto_rowspace_rank, rowspace_basis, stacked_determinant, svd, Matrix, Vector,
};

/// Default integrator settings for the trajectory-based checks.
pub fn verification_config() -> IntegratorConfig {
    IntegratorConfig::with_tolerances(1e-10, 1e-12)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleRecord {
    pub index: usize,
    pub residual: f64,
}

/// Pass/fail outcome of one check with the residual of every tested sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub check_name: String,
    pub samples_tested: usize,
    pub max_residual: f64,
    pub threshold: f64,
    pub passed: bool,
    pub details: Vec<SampleRecord>,
}

impl VerificationReport {
    /// NaN residuals count as infinite.
    pub fn from_indexed(name: impl Into<String>, residuals: Vec<(usize, f64)>, threshold: f64) -> Self {
        let details: Vec<SampleRecord> = residuals
            .into_iter()
            .map(|(index, r)| SampleRecord { index, residual: if r.is_nan() { f64::INFINITY } else { r } })
            .collect();
        let max_residual = details.iter().map(|d| d.residual).fold(0.0_f64, f64::max);
        Self {
            check_name: name.into(),
            samples_tested: details.len(),
            max_residual,
            threshold,
            passed: max_residual <= threshold,
            details,
        }
    }

    pub fn from_residuals(name: impl Into<String>, residuals: &[f64], threshold: f64) -> Self {
        Self::from_indexed(name, residuals.iter().copied().enumerate().collect(), threshold)
    }
}

fn per_sample<F>(samples: &[Vector], f: F) -> Vec<(usize, f64)>
where
    F: Fn(&Vector) -> Result<f64> + Sync,
{
    samples.par_iter().enumerate().map(|(i, x)| (i, f(x).unwrap_or(f64::INFINITY))).collect()
}

/// `‖DP_x f(x) − g(P(x))‖` for an arbitrary candidate field.
pub fn check_lift_with<F>(system: &AnchorSystem, field: &F, samples: &[Vector], tol: f64) -> VerificationReport
where
    F: VectorField + ?Sized,
{
    let r = per_sample(samples, |x| {
        if !system.in_domain(x) {
            return Err(Error::OutOfDomain(x.iter().copied().collect()));
        }
        let f = field.eval(x)?;
        let p = system.project(x)?;
        Ok((system.phase_jacobian(x)? * f - system.template_at(&p)?).norm())
    });
    VerificationReport::from_indexed("lift", r, tol)
}

pub fn check_lift(system: &AnchorSystem, samples: &[Vector], tol: f64) -> VerificationReport {
    check_lift_with(system, system, samples, tol)
}

/// `‖f(P(x)) − g(P(x))‖`: on `M` the field is the template.
pub fn check_restriction(system: &AnchorSystem, samples: &[Vector], tol: f64) -> VerificationReport {
    let r = per_sample(samples, |x| {
        let p = system.project(x)?;
        let e = system.anchored_field(&p)?;
        Ok((e.f - system.template_at(&p)?).norm())
    });
    VerificationReport::from_indexed("restriction", r, tol)
}

/// `‖DP_x f_v(x)‖`.
pub fn check_verticality(system: &AnchorSystem, samples: &[Vector], tol: f64) -> VerificationReport {
    let r = per_sample(samples, |x| Ok((system.phase_jacobian(x)? * system.vertical_field(x)?).norm()));
    VerificationReport::from_indexed("verticality", r, tol)
}

/// `‖DG_x f_h(x)‖`.
pub fn check_horizontality(system: &AnchorSystem, samples: &[Vector], tol: f64) -> VerificationReport {
    let r = per_sample(samples, |x| Ok((system.constraint_jacobian(x)? * system.horizontal_field(x)?).norm()));
    VerificationReport::from_indexed("horizontality", r, tol)
}

/// `|⟨∇V(x), f_h(x)⟩|`.
pub fn check_orthogonal_decay(system: &AnchorSystem, samples: &[Vector], tol: f64) -> VerificationReport {
    let r = per_sample(samples, |x| Ok(grad_v(system, x)?.dot(&system.horizontal_field(x)?).abs()));
    VerificationReport::from_indexed("gradient_orthogonality", r, tol)
}

/// `T_x` keeps `ker DG_x` inside itself and sends `ker DP_x` into
/// `(ker DG_x)^⊥`. Residual: the largest leak over orthonormal bases.
pub fn check_t_identity(system: &AnchorSystem, samples: &[Vector], tol: f64) -> VerificationReport {
    let n = system.ambient_dim();
    let nk = n - system.manifold_dim();
    let r = per_sample(samples, |x| {
        let (t, _) = system.coordinate_change_t(x)?;
        let dg = system.constraint_jacobian(x)?;
        let (ker_g, ker_p) = system.kernel_bases(x)?;
        let normal = projector_onto_rowspace_rank(&dg, nk)?;
        let tangent = Matrix::identity(n, n) - &normal;
        let leak_g = (&normal * &t * &ker_g).norm();
        let leak_p = (&tangent * &t * &ker_p).norm();
        Ok(leak_g.max(leak_p))
    });
    VerificationReport::from_indexed("t_identity", r, tol)
}

/// All six identity checks in one go.
pub fn check_identities(system: &AnchorSystem, samples: &[Vector], tol: f64) -> Vec<VerificationReport> {
    vec![
        check_lift(system, samples, tol),
        check_restriction(system, samples, tol),
        check_verticality(system, samples, tol),
        check_horizontality(system, samples, tol),
        check_orthogonal_decay(system, samples, tol),
        check_t_identity(system, samples, tol),
    ]
}

/// The anchored field with the vertical part replaced by a field that is
/// not in `ker DP`: `f_h − α(∇V + ‖∇V‖ τ)` with `τ` a unit tangent of the
/// level set. Used to confirm that the lift check can fail.
pub struct NonVerticalFault<'a> {
    pub system: &'a AnchorSystem,
}

impl VectorField for NonVerticalFault<'_> {
    fn dim(&self) -> usize {
        self.system.ambient_dim()
    }

    fn eval(&self, x: &Vector) -> Result<Vector> {
        let s = self.system;
        let f_h = s.horizontal_field(x)?;
        let grad = grad_v(s, x)?;
        let (ker_g, _) = s.kernel_bases(x)?;
        let tangent = if ker_g.ncols() > 0 { ker_g.column(0).into_owned() } else { Vector::zeros(s.ambient_dim()) };
        Ok(f_h - s.alpha(x)? * (&grad + grad.norm() * tangent))
    }

    fn in_domain(&self, x: &Vector) -> bool {
        self.system.in_domain(x)
    }
}

fn potential_along(system: &AnchorSystem, states: &[Vector]) -> Vec<f64> {
    states.iter().map(|x| system.constraint().eval(x).map(|g| g.norm_squared()).unwrap_or(f64::INFINITY)).collect()
}

/// Per step, `(V_{i+1} − V_i)/(1 + V_i)` for states with `V_i > 1e-12`;
/// passes when no step increases `V` beyond `1e-12`.
pub fn check_lyapunov_decrease(system: &AnchorSystem, trajectory: &Trajectory) -> VerificationReport {
    let v = potential_along(system, &trajectory.states);
    let r = v
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] > 1e-12)
        .map(|(i, w)| (i, (w[1] - w[0]) / (1.0 + w[0])))
        .collect();
    VerificationReport::from_indexed("lyapunov_decrease", r, 1e-12)
}

/// `x` and `y` integrated side by side so they share one time grid.
struct PairField<'a> {
    system: &'a AnchorSystem,
}

impl VectorField for PairField<'_> {
    fn dim(&self) -> usize {
        2 * self.system.ambient_dim()
    }

    fn eval(&self, z: &Vector) -> Result<Vector> {
        let n = self.system.ambient_dim();
        let a = self.system.eval(&z.rows(0, n).into_owned())?;
        let b = self.system.eval(&z.rows(n, n).into_owned())?;
        let mut out = Vector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&a);
        out.rows_mut(n, n).copy_from(&b);
        Ok(out)
    }

    fn in_domain(&self, z: &Vector) -> bool {
        let n = self.system.ambient_dim();
        self.system.in_domain(&z.rows(0, n).into_owned()) && self.system.in_domain(&z.rows(n, n).into_owned())
    }
}

/// `sup_t ‖P(φ_t(x0)) − φ_t(P(x0))‖` over `[0, t_end]`.
pub fn check_fiber_invariance(system: &AnchorSystem, x0: &Vector, t_end: f64, tol: f64) -> Result<VerificationReport> {
    let n = system.ambient_dim();
    let p0 = system.project(x0)?;
    let mut z0 = Vector::zeros(2 * n);
    z0.rows_mut(0, n).copy_from(x0);
    z0.rows_mut(n, n).copy_from(&p0);
    let tr = integrate(&PairField { system }, &z0, (0.0, t_end), &verification_config())?;
    let r = tr
        .states
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let x = z.rows(0, n).into_owned();
            let y = z.rows(n, n).into_owned();
            let res = system.project(&x).map(|px| (px - y).norm()).unwrap_or(f64::INFINITY);
            (i, res)
        })
        .collect();
    let mut report = VerificationReport::from_indexed("fiber_invariance", r, tol);
    if tr.terminal_status != TerminalStatus::Completed {
        report.passed = false;
    }
    Ok(report)
}

fn linear_fit(t: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = t.len() as f64;
    if t.len() < 2 {
        return None;
    }
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let stt: f64 = t.iter().map(|a| (a - tm) * (a - tm)).sum();
    if stt <= 0.0 {
        return None;
    }
    let sty: f64 = t.iter().zip(y).map(|(a, b)| (a - tm) * (b - ym)).sum();
    let slope = sty / stt;
    let syy: f64 = y.iter().map(|b| (b - ym) * (b - ym)).sum();
    let sse: f64 = t.iter().zip(y).map(|(a, b)| (b - ym - slope * (a - tm)).powi(2)).sum();
    let r2 = if syy > 0.0 { (1.0 - sse / syy).clamp(0.0, 1.0) } else { 1.0 };
    Some((slope, r2))
}

/// Empirical constants of the exponential-stability estimate on a set of points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityConstants {
    /// `min V/d²`
    pub k1: f64,
    /// `max V/d²`
    pub k2: f64,
    /// `min ⟨∇V, Π^P ∇V⟩/d²`
    pub k3: f64,
    /// `min α`
    pub k4: f64,
    /// `k4 k3 / (2 k2)`
    pub mu_bound: f64,
    pub points: usize,
}

fn constants_on(system: &AnchorSystem, points: &[Vector]) -> Result<StabilityConstants> {
    let rows: Vec<Option<(f64, f64, f64)>> = points
        .par_iter()
        .map(|x| -> Result<Option<(f64, f64, f64)>> {
            let d = system.distance_to_manifold(x)?;
            if !(d > 0.0) {
                return Ok(None);
            }
            let v = system.constraint().eval(x)?.norm_squared();
            let grad = grad_v(system, x)?;
            let pg = system.pi_p(x)? * &grad;
            Ok(Some((v / (d * d), grad.dot(&pg) / (d * d), system.alpha(x)?)))
        })
        .collect::<Result<_>>()?;
    let rows: Vec<(f64, f64, f64)> = rows.into_iter().flatten().collect();
    if rows.is_empty() {
        return Err(Error::DegenerateWindow("no off-manifold points to estimate constants".into()));
    }
    let k1 = rows.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let k2 = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let k3 = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let k4 = rows.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    Ok(StabilityConstants { k1, k2, k3, k4, mu_bound: k4 * k3 / (2.0 * k2), points: rows.len() })
}

/// Estimates `k1..k4` over the samples lying in the near band
/// `V < 0.25 · max V` (a heuristic stand-in for the exponential-stability
/// neighbourhood, which has no constructive size).
pub fn estimate_stability_constants(system: &AnchorSystem, samples: &[Vector]) -> Result<StabilityConstants> {
    let v: Vec<f64> = potential_along(system, samples);
    let vmax = v.iter().copied().filter(|a| a.is_finite()).fold(0.0, f64::max);
    let band: Vec<Vector> = samples
        .iter()
        .zip(&v)
        .filter(|(x, &vi)| vi < 0.25 * vmax && system.in_domain(x))
        .map(|(x, _)| x.clone())
        .collect();
    constants_on(system, &band)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateEstimate {
    /// Decay rate of `V`; distances decay at half this rate.
    pub mu_fitted: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub constants_note: String,
    pub constants: Option<StabilityConstants>,
}

/// Least-squares fit of `ln V(φ_t(x0))` against `t` over `window`.
pub fn estimate_contraction_rate(system: &AnchorSystem, x0: &Vector, window: (f64, f64)) -> Result<RateEstimate> {
    let (lo, hi) = window;
    if !(lo >= 0.0 && hi > lo) {
        return Err(Error::InvalidParameters(format!("bad fit window ({lo}, {hi})")));
    }
    let mut cfg = IntegratorConfig::with_tolerances(1e-11, 1e-15);
    cfg.max_step = Some((hi - lo) / 50.0);
    cfg.max_steps = 200_000;
    let tr = integrate(system, x0, (0.0, hi), &cfg)?;
    if tr.terminal_status != TerminalStatus::Completed {
        return Err(Error::StepFailure {
            t: tr.final_time(),
            h: 0.0,
            reason: format!("trajectory ended early ({})", tr.terminal_status),
        });
    }
    let mut ts = Vec::new();
    let mut logs = Vec::new();
    let mut pts = Vec::new();
    for (t, x) in tr.times.iter().zip(&tr.states) {
        if *t < lo - 1e-12 {
            continue;
        }
        let v = system.constraint().eval(x)?.norm_squared();
        if v < 1e-14 {
            return Err(Error::DegenerateWindow(format!("V = {v:.3e} at t = {t}")));
        }
        ts.push(*t);
        logs.push(v.ln());
        pts.push(x.clone());
    }
    if ts.len() < 3 {
        return Err(Error::DegenerateWindow(format!("only {} points in window", ts.len())));
    }
    let (slope, r_squared) =
        linear_fit(&ts, &logs).ok_or_else(|| Error::DegenerateWindow("zero time spread".into()))?;
    let constants = constants_on(system, &pts).ok();
    let constants_note = match &constants {
        Some(c) => format!(
            "along window: k1={:.6e} k2={:.6e} k3={:.6e} k4={:.6e}; bound mu=k4*k3/(2*k2)={:.6e} (distance rate)",
            c.k1, c.k2, c.k3, c.k4, c.mu_bound
        ),
        None => "constants unavailable".into(),
    };
    Ok(RateEstimate { mu_fitted: -slope, r_squared, window, constants_note, constants })
}

/// Report-only comparison `k4 > r · 2 k2 / k1 · L`, `L = max ‖Df(p)‖` over
/// sampled points of `M`. Holding for estimates proves nothing by itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PersistenceInequality {
    pub r: f64,
    pub l_estimate: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds_for_estimates: bool,
}

pub fn persistence_inequality(
    system: &AnchorSystem,
    constants: &StabilityConstants,
    manifold_samples: &[Vector],
    r: f64,
) -> Result<PersistenceInequality> {
    let norms: Vec<f64> = manifold_samples
        .par_iter()
        .map(|p| -> Result<f64> { Ok(svd(&system.field_jacobian(p)?)?.sigma_max()) })
        .collect::<Result<_>>()?;
    let l = norms.into_iter().fold(0.0, f64::max);
    let rhs = r * 2.0 * constants.k2 / constants.k1 * l;
    Ok(PersistenceInequality { r, l_estimate: l, lhs: constants.k4, rhs, holds_for_estimates: constants.k4 > rhs })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovTypeNumbers {
    pub nu: f64,
    pub sigma: f64,
    pub tau: f64,
    pub horizon: f64,
    pub base_point: Vec<f64>,
    /// Growth rates of `log‖B_t‖`, `log‖A_t‖` and `log‖A_{-t}‖`.
    pub slope_normal: f64,
    pub slope_tangent: f64,
    pub slope_tangent_inverse: f64,
    pub r_squared: f64,
    pub low_confidence: bool,
}

/// Finite-horizon surrogates for `ν, σ, τ` along the forward orbit of `p`.
///
/// `B_t = Π^N Dφ_t E_N` and the tangent block `Dφ_t E_T` use bases of the
/// normal and tangent spaces at `p`; `‖A_t‖` is the inverse of the smallest
/// singular value of the tangent block and `‖A_{-t}‖` its largest.
pub fn estimate_lyapunov_type_numbers(system: &AnchorSystem, p: &Vector, horizon: f64) -> Result<LyapunovTypeNumbers> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidParameters(format!("horizon must be positive, got {horizon}")));
    }
    let g = system.constraint().eval(p)?.norm();
    if g > ON_MANIFOLD_TOL * (1.0 + p.norm()) {
        return Err(Error::NotOnManifold(g));
    }
    let n = system.ambient_dim();
    let k = system.manifold_dim();
    let nk = n - k;
    let dg0 = system.constraint_jacobian(p)?;
    let e_n = rowspace_basis(&dg0, Some(nk))?;
    let e_t = kernel_basis(&dg0, Some(nk))?;

    let mut cfg = verification_config();
    cfg.max_step = Some(horizon / 100.0);
    let vt = integrate_variational(system, p, (0.0, horizon), &cfg)?;

    let tiny = 1e-300;
    let mut ts = Vec::new();
    let (mut lb, mut la, mut lai) = (Vec::new(), Vec::new(), Vec::new());
    for ((t, x), phi) in vt.base.times.iter().zip(&vt.base.states).zip(&vt.transition_matrices) {
        let dg = system.constraint_jacobian(x)?;
        let pn = projector_onto_rowspace_rank(&dg, nk)?;
        let b = &pn * phi * &e_n;
        lb.push(svd(&b)?.sigma_max().max(tiny).ln());
        if k == 0 {
            la.push(0.0);
            lai.push(0.0);
        } else {
            let a = (Matrix::identity(n, n) - &pn) * phi * &e_t;
            let s = svd(&a)?.singular_values;
            la.push(-s[s.len() - 1].max(tiny).ln());
            lai.push(s[0].max(tiny).ln());
        }
        ts.push(*t);
    }
    // below ~1e-9 the normal block is integration noise
    let floor = 1e-9_f64.ln();
    let keep = lb.iter().take_while(|&&v| v > floor).count().max(5).min(ts.len());
    ts.truncate(keep);
    let fit = |y: &[f64]| linear_fit(&ts, &y[..keep]).unwrap_or((0.0, 0.0));
    let (sb, r_squared) = fit(&lb);
    let (sa, _) = fit(&la);
    let (sai, _) = fit(&lai);
    let sigma = if sb < 0.0 { sa / -sb } else { f64::INFINITY };
    let tau = if sb + sa < 0.0 { sai / -(sb + sa) } else { f64::INFINITY };
    let low_confidence = ts.len() < 5 || horizon * sb.abs() < 1.0 || r_squared < 0.9;
    Ok(LyapunovTypeNumbers {
        nu: sb.exp(),
        sigma,
        tau,
        horizon,
        base_point: p.iter().copied().collect(),
        slope_normal: sb,
        slope_tangent: sa,
        slope_tangent_inverse: sai,
        r_squared,
        low_confidence,
    })
}

/// `f + ε η`.
pub struct PerturbedField<'a> {
    pub system: &'a AnchorSystem,
    pub eta: &'a DifferentiableMap,
    pub eps: f64,
}

impl VectorField for PerturbedField<'_> {
    fn dim(&self) -> usize {
        self.system.ambient_dim()
    }

    fn eval(&self, x: &Vector) -> Result<Vector> {
        let f = self.system.eval(x)?;
        if self.eps == 0.0 {
            return Ok(f);
        }
        Ok(f + self.eps * self.eta.eval(x)?)
    }

    fn in_domain(&self, x: &Vector) -> bool {
        self.system.in_domain(x)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeOutcome {
    pub probe: Vec<f64>,
    pub terminal_status: TerminalStatus,
    pub sup_constraint: f64,
    /// Gap between the first and last same-direction crossings of the
    /// half-line `x1 > 0, x2 = 0` during observation (one-dimensional `M` only).
    pub closure_gap: Option<f64>,
    pub crossings: usize,
    #[serde(skip)]
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, Serialize)]
pub struct PersistenceReport {
    pub eps: f64,
    pub proxy: VerificationReport,
    pub probes: Vec<ProbeOutcome>,
    pub closure_threshold: f64,
    pub passed: bool,
}

pub const CLOSURE_TOL: f64 = 1e-4;

/// Integrates `f + ε η` from each probe, discards `t_settle`, then records
/// `sup ‖G‖` over the next `t_observe` and, when `k = 1`, how well the limit
/// orbit closes. Passes when every probe stays in the guard, the proxy stays
/// below `bound` and every closure gap is below [`CLOSURE_TOL`].
#[allow(clippy::too_many_arguments)]
pub fn perturbation_persistence(
    system: &AnchorSystem,
    eta: &DifferentiableMap,
    eps: f64,
    probes: &[Vector],
    t_settle: f64,
    t_observe: f64,
    bound: f64,
) -> Result<PersistenceReport> {
    let n = system.ambient_dim();
    if eta.dim_in() != n || eta.dim_out() != n {
        return Err(Error::ShapeMismatch("perturbation must map R^n to R^n".into()));
    }
    if !(eps >= 0.0) || !(t_settle >= 0.0) || !(t_observe > 0.0) {
        return Err(Error::InvalidParameters("need eps >= 0, t_settle >= 0, t_observe > 0".into()));
    }
    let field = PerturbedField { system, eta, eps };
    let outcomes: Vec<ProbeOutcome> =
        probes.par_iter().map(|x0| probe_outcome(system, &field, x0, t_settle, t_observe)).collect::<Result<_>>()?;
    let proxy = VerificationReport::from_indexed(
        "invariant_manifold_proxy",
        outcomes
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let r = if o.terminal_status == TerminalStatus::Completed { o.sup_constraint } else { f64::INFINITY };
                (i, r)
            })
            .collect(),
        bound,
    );
    let closes = outcomes.iter().all(|o| o.closure_gap.map_or(system.manifold_dim() != 1, |g| g < CLOSURE_TOL));
    let passed = proxy.passed && closes;
    Ok(PersistenceReport { eps, proxy, probes: outcomes, closure_threshold: CLOSURE_TOL, passed })
}

fn probe_outcome(
    system: &AnchorSystem,
    field: &PerturbedField<'_>,
    x0: &Vector,
    t_settle: f64,
    t_observe: f64,
) -> Result<ProbeOutcome> {
    let cfg = verification_config();
    let t_end = t_settle + t_observe;
    let tr = integrate(field, x0, (0.0, t_end), &cfg)?;
    let mut sup = 0.0_f64;
    for (t, x) in tr.times.iter().zip(&tr.states) {
        if *t >= t_settle {
            sup = sup.max(system.constraint().eval(x)?.norm());
        }
    }
    let (closure_gap, crossings) = if system.manifold_dim() == 1 && tr.terminal_status == TerminalStatus::Completed {
        let c = section_crossings(field, &tr, t_settle, &cfg)?;
        let gap = if c.len() >= 2 { Some((c[c.len() - 1] - c[0]).abs()) } else { None };
        (gap, c.len())
    } else {
        (None, 0)
    };
    Ok(ProbeOutcome {
        probe: x0.iter().copied().collect(),
        terminal_status: tr.terminal_status,
        sup_constraint: sup,
        closure_gap,
        crossings,
        trajectory: tr,
    })
}

/// `x1` at each crossing of `x2 = 0, x1 > 0` in the direction of the first
/// such crossing after `t_from`, located by bisection in time.
fn section_crossings<F: VectorField>(
    field: &F,
    tr: &Trajectory,
    t_from: f64,
    cfg: &IntegratorConfig,
) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    let mut direction: Option<bool> = None;
    for i in 0..tr.len().saturating_sub(1) {
        if tr.times[i] < t_from {
            continue;
        }
        let (a, b) = (&tr.states[i], &tr.states[i + 1]);
        let upward = a[1] < 0.0 && b[1] >= 0.0;
        let downward = a[1] > 0.0 && b[1] <= 0.0;
        if !(upward || downward) || a[0] + b[0] <= 0.0 {
            continue;
        }
        if *direction.get_or_insert(upward) != upward {
            continue;
        }
        let (mut lo, mut hi) = (0.0, tr.times[i + 1] - tr.times[i]);
        let mut at = b.clone();
        while hi - lo > 1e-10 {
            let mid = 0.5 * (lo + hi);
            let y = integrate(field, a, (0.0, mid), cfg)?.final_state().clone();
            if (y[1] >= 0.0) == upward {
                hi = mid;
                at = y;
            } else {
                lo = mid;
            }
        }
        if at[0] > 0.0 {
            out.push(at[0]);
        }
    }
    Ok(out)
}

/// `W = η(P(x)) + V(x)` must not increase along `trajectory` by more than
/// `1e-10 (1 + W)` per step.
#[derive(Debug, Clone, Serialize)]
pub struct PullbackReport {
    pub monotone: VerificationReport,
    /// Every step starting from `W > 1e-10` strictly decreased `W`.
    pub strictly_decreasing: bool,
}

pub fn pullback_lyapunov_check(
    system: &AnchorSystem,
    eta_on_m: &(dyn Fn(&Vector) -> f64 + Sync),
    trajectory: &Trajectory,
) -> PullbackReport {
    let w: Vec<f64> = trajectory
        .states
        .iter()
        .map(|x| {
            let v = system.constraint().eval(x).map(|g| g.norm_squared());
            let p = system.project(x);
            match (v, p) {
                (Ok(v), Ok(p)) => eta_on_m(&p) + v,
                _ => f64::INFINITY,
            }
        })
        .collect();
    let r = w.windows(2).enumerate().map(|(i, s)| (i, (s[1] - s[0]) / (1.0 + s[0]))).collect();
    let strictly_decreasing = w.windows(2).filter(|s| s[0] > 1e-10).all(|s| s[1] < s[0]);
    PullbackReport { monotone: VerificationReport::from_indexed("pullback_lyapunov", r, 1e-10), strictly_decreasing }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanResult {
    pub points: Vec<(f64, f64)>,
    pub min_abs_det: f64,
    pub sign_changes: usize,
}

/// `det [DG; R]` along `curve(τ)`, `τ = lo + (hi − lo) j / grid`, where `R`
/// is the system's phase-coordinate Jacobian or, failing that, an
/// orthonormal basis of the row space of `DP`.
pub fn transversality_scan(
    system: &AnchorSystem,
    curve: &(dyn Fn(f64) -> Vector + Sync),
    range: (f64, f64),
    grid: usize,
) -> Result<ScanResult> {
    if grid == 0 {
        return Err(Error::InvalidParameters("scan grid must have at least one point".into()));
    }
    let (lo, hi) = range;
    let k = system.manifold_dim();
    let points: Vec<(f64, f64)> = (0..grid)
        .into_par_iter()
        .map(|j| -> Result<(f64, f64)> {
            let tau = lo + (hi - lo) * j as f64 / grid as f64;
            let x = curve(tau);
            if x.len() != system.ambient_dim() {
                return Err(Error::ShapeMismatch("scan curve has wrong dimension".into()));
            }
            let dg = system.constraint_jacobian(&x)?;
            let rows = match system.phase_coordinate_jacobian(&x) {
                Some(r) => r,
                None => rowspace_basis(&system.phase_jacobian(&x)?, Some(k))?.transpose(),
            };
            Ok((tau, stacked_determinant(&[dg, rows])?))
        })
        .collect::<Result<_>>()?;
    let min_abs_det = points.iter().map(|p| p.1.abs()).fold(f64::INFINITY, f64::min);
    let sign_changes = points.windows(2).filter(|w| w[0].1.signum() != w[1].1.signum()).count();
    Ok(ScanResult { points, min_abs_det, sign_changes })
}

/// `(θ₂, ω, θ₁)`: the second-order embedding next to the first-order flow.
struct SecondOrderPair<'a> {
    system: &'a AnchorSystem,
    mu: f64,
}

impl VectorField for SecondOrderPair<'_> {
    fn dim(&self) -> usize {
        3 * self.system.ambient_dim()
    }

    fn eval(&self, z: &Vector) -> Result<Vector> {
        let n = self.system.ambient_dim();
        let theta = z.rows(0, n).into_owned();
        let omega = z.rows(n, n).into_owned();
        let first = z.rows(2 * n, n).into_owned();
        let so = self.system.second_order_unchecked(&theta, &omega, self.mu)?;
        let mut out = Vector::zeros(3 * n);
        out.rows_mut(0, 2 * n).copy_from(&so);
        out.rows_mut(2 * n, n).copy_from(&self.system.eval(&first)?);
        Ok(out)
    }

    fn in_domain(&self, z: &Vector) -> bool {
        let n = self.system.ambient_dim();
        self.system.in_domain(&z.rows(0, n).into_owned()) && self.system.in_domain(&z.rows(2 * n, n).into_owned())
    }
}

/// For each `μ`, the sup over `t ≥ 10/μ` of `‖θ_2nd(t) − θ_1st(t)‖`, both
/// started from `θ0` (the second-order one with velocity `ω0`).
pub fn second_order_convergence(
    system: &AnchorSystem,
    mu_grid: &[f64],
    theta0: &Vector,
    omega0: &Vector,
    t_end: f64,
) -> Result<Vec<(f64, f64)>> {
    if mu_grid.is_empty() {
        return Err(Error::InvalidParameters("empty mu grid".into()));
    }
    if mu_grid.iter().any(|m| !(*m > 0.0 && m.is_finite())) || mu_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameters("mu grid must be positive and increasing".into()));
    }
    let n = system.ambient_dim();
    if theta0.len() != n || omega0.len() != n {
        return Err(Error::ShapeMismatch("initial configuration has wrong length".into()));
    }
    mu_grid
        .par_iter()
        .map(|&mu| {
            let mut z0 = Vector::zeros(3 * n);
            z0.rows_mut(0, n).copy_from(theta0);
            z0.rows_mut(n, n).copy_from(omega0);
            z0.rows_mut(2 * n, n).copy_from(theta0);
            let tr = integrate(&SecondOrderPair { system, mu }, &z0, (0.0, t_end), &verification_config())?;
            if tr.terminal_status != TerminalStatus::Completed {
                return Err(Error::StepFailure {
                    t: tr.final_time(),
                    h: 0.0,
                    reason: format!("second-order run for mu = {mu} ended early ({})", tr.terminal_status),
                });
            }
            let burn_in = 10.0 / mu;
            let gap = tr
                .times
                .iter()
                .zip(&tr.states)
                .filter(|(t, _)| **t >= burn_in)
                .map(|(_, z)| (z.rows(0, n) - z.rows(2 * n, n)).norm())
                .fold(0.0, f64::max);
            Ok((mu, gap))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_counts_nan_as_failure() {
        let r = VerificationReport::from_residuals("x", &[0.0, f64::NAN], 1.0);
        assert!(!r.passed);
        assert_eq!(r.max_residual, f64::INFINITY);
    }

    #[test]
    fn empty_report_passes() {
        let r = VerificationReport::from_residuals("x", &[], 0.0);
        assert!(r.passed);
        assert_eq!(r.samples_tested, 0);
    }

    #[test]
    fn threshold_is_inclusive() {
        assert!(VerificationReport::from_residuals("x", &[1e-8], 1e-8).passed);
        assert!(!VerificationReport::from_residuals("x", &[1.1e-8], 1e-8).passed);
    }

    #[test]
    fn fit_recovers_line() {
        let t: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = t.iter().map(|a| 3.0 - 2.0 * a).collect();
        let (s, r2) = linear_fit(&t, &y).unwrap();
        assert!((s + 2.0).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
        assert!(linear_fit(&[1.0], &[1.0]).is_none());
    }
}
