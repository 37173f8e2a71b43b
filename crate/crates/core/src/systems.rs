//! Built-in example systems and the flat `key = value` configuration format.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::path::Path;

use nalgebra::{dmatrix, dvector};
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::Serialize;

use crate::anchor::{AnchorSystem, Gain};
use crate::calculus::DifferentiableMap;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

fn radial_retraction(n: usize) -> DifferentiableMap {
    DifferentiableMap::new(n, n, |x| x / x.norm()).with_jacobian(move |x| {
        let r = x.norm();
        let u = x / r;
        (Matrix::identity(n, n) - &u * u.transpose()) / r
    })
}

fn unit_sphere_constraint(n: usize) -> DifferentiableMap {
    DifferentiableMap::new(n, 1, |x| dvector![x.norm_squared() - 1.0])
        .with_jacobian(|x| Matrix::from_row_slice(1, x.len(), (2.0 * x).as_slice()))
}

/// `0 < r <= 2`; the outer radius is closed so that `r = 2` can be evaluated.
fn shell_guard(x: &Vector) -> bool {
    let r = x.norm();
    r > 0.0 && r <= 2.0
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameters(format!("alpha must be positive, got {alpha}")))
    }
}

/// `M = {0}` in the plane: `G = (x, y)`, `P ≡ 0`, `g ≡ 0`.
pub fn build_point() -> AnchorSystem {
    build_point_with_alpha(0.5).expect("default gain is valid")
}

pub fn build_point_with_alpha(alpha: f64) -> Result<AnchorSystem> {
    check_alpha(alpha)?;
    let g = DifferentiableMap::new(2, 2, |x| x.clone()).with_jacobian(|_| Matrix::identity(2, 2));
    let p = DifferentiableMap::new(2, 2, |_| Vector::zeros(2)).with_jacobian(|_| Matrix::zeros(2, 2));
    Ok(AnchorSystem::new("point", 2, 0, g, p, |_| Vector::zeros(2), Gain::Constant(alpha), |_| true)?
        .with_distance(|x| x.norm()))
}

/// Unit circle with the unit-speed rotation as template.
pub fn build_circle(alpha: f64) -> Result<AnchorSystem> {
    check_alpha(alpha)?;
    Ok(AnchorSystem::new(
        "circle",
        2,
        1,
        unit_sphere_constraint(2),
        radial_retraction(2),
        |p| dvector![-p[1], p[0]],
        Gain::Constant(alpha),
        shell_guard,
    )?
    .with_distance(|x| (x.norm() - 1.0).abs())
    .with_phase_coordinate_jacobian(|x| {
        let r2 = x.norm_squared();
        dmatrix![-x[1] / r2, x[0] / r2]
    }))
}

/// Circle whose template `(y², −xy)` has a hyperbolic sink at angle 0.
pub fn build_circle_sink(alpha: f64) -> Result<AnchorSystem> {
    Ok(build_circle(alpha)?.with_template(|p| dvector![p[1] * p[1], -p[0] * p[1]]))
}

/// Unit sphere in `R^3`, rotating about the `z` axis.
pub fn build_sphere(alpha: f64) -> Result<AnchorSystem> {
    check_alpha(alpha)?;
    Ok(AnchorSystem::new(
        "sphere",
        3,
        2,
        unit_sphere_constraint(3),
        radial_retraction(3),
        |p| dvector![-p[1], p[0], 0.0],
        Gain::Constant(alpha),
        shell_guard,
    )?
    .with_distance(|x| (x.norm() - 1.0).abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DoublePendulumParams {
    pub a1: f64,
    pub a2: f64,
    pub delta: f64,
    pub s_h: f64,
    pub s_v: f64,
    pub r: f64,
    /// Replaces the saturating gain by a constant.
    pub alpha: Option<f64>,
}

impl Default for DoublePendulumParams {
    fn default() -> Self {
        let s_v = 5e-3;
        Self { a1: 0.5, a2: 0.3, delta: 0.5, s_h: 0.75 * s_v, s_v, r: 1e-4, alpha: None }
    }
}

impl DoublePendulumParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameters(what.to_string()));
        if !(self.a1 > 0.0 && self.a1 < PI && self.a2 > 0.0 && self.a2 < PI) {
            return bad("amplitudes a1, a2 must lie in (0, pi)");
        }
        if !(self.delta > 0.0 && self.delta < TAU) {
            return bad("delta must lie in (0, 2 pi)");
        }
        if self.delta.sin().abs() < 1e-9 || self.delta.cos().abs() < 1e-9 {
            return bad("delta makes the phase coordinates degenerate (sin or cos of delta vanishes)");
        }
        if !(self.s_h > 0.0 && self.s_v > 0.0 && self.r > 0.0) {
            return bad("s_h, s_v and R must be positive");
        }
        if let Some(a) = self.alpha {
            check_alpha(a)?;
        }
        Ok(())
    }

    /// The limit cycle `F(φ) = (a1 sin(φ − δ), a2 sin(φ + δ))`.
    pub fn cycle(&self, phi: f64) -> Vector {
        dvector![self.a1 * (phi - self.delta).sin(), self.a2 * (phi + self.delta).sin()]
    }

    /// Phase-plane coordinates `(X, Y)` and their gradients.
    fn coords(&self, th: &Vector) -> (f64, f64, Matrix, Matrix) {
        let (sd, cd) = self.delta.sin_cos();
        let (p, q) = (th[0] / self.a1, th[1] / self.a2);
        let x = (q - p) / (2.0 * sd);
        let y = (q + p) / (2.0 * cd);
        let dx = dmatrix![-1.0 / (2.0 * sd * self.a1), 1.0 / (2.0 * sd * self.a2)];
        let dy = dmatrix![1.0 / (2.0 * cd * self.a1), 1.0 / (2.0 * cd * self.a2)];
        (x, y, dx, dy)
    }

    /// Intrinsic phase `atan2(Y, X)`, the inverse of [`Self::cycle`] on `M`.
    pub fn phase_angle(&self, th: &Vector) -> f64 {
        let (x, y, _, _) = self.coords(th);
        y.atan2(x)
    }
}

pub fn build_double_pendulum(params: DoublePendulumParams) -> Result<AnchorSystem> {
    params.validate()?;
    let pr = params;
    let constraint = DifferentiableMap::new(2, 1, move |th| {
        let (x, y, _, _) = pr.coords(th);
        dvector![x * x + y * y - 1.0]
    })
    .with_jacobian(move |th| {
        let (x, y, dx, dy) = pr.coords(th);
        2.0 * x * dx + 2.0 * y * dy
    });
    let phase = DifferentiableMap::new(2, 2, move |th| {
        let (x, y, _, _) = pr.coords(th);
        th / (x * x + y * y).sqrt()
    })
    .with_jacobian(move |th| {
        let (x, y, dx, dy) = pr.coords(th);
        let d = (x * x + y * y).sqrt();
        let grad_d = (x * dx + y * dy) / d;
        Matrix::identity(2, 2) / d - th * grad_d / (d * d)
    });
    let template = move |p: &Vector| {
        let (x, y, _, _) = pr.coords(p);
        let d = (x * x + y * y).sqrt();
        let (c, s) = (x / d, y / d);
        let (sd, cd) = pr.delta.sin_cos();
        pr.s_h * dvector![pr.a1 * (c * cd + s * sd), pr.a2 * (c * cd - s * sd)]
    };
    let guard = move |th: &Vector| {
        let e = (th[0] / pr.a1).hypot(th[1] / pr.a2);
        e > 0.05 && th[0].abs() < 0.95 * PI && th[1].abs() < 0.95 * PI
    };
    let gain = match pr.alpha {
        Some(a) => Gain::Constant(a),
        None => Gain::Saturating { s_v: pr.s_v, r: pr.r },
    };
    Ok(AnchorSystem::new("double_pendulum", 2, 1, constraint, phase, template, gain, guard)?
        .with_phase_coordinate_jacobian(move |th| {
            let (x, y, dx, dy) = pr.coords(th);
            (x * dy - y * dx) / (x * x + y * y)
        }))
}

/// Deterministic uniform draws on `[0, 1)` from a 64-bit seed.
pub struct Sampler {
    rng: SplitMix64,
}

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Self { rng: SplitMix64::seed_from_u64(seed) }
    }

    pub fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform direction on the unit sphere in `R^3`.
    fn direction3(&mut self) -> Vector {
        let z = self.uniform(-1.0, 1.0);
        let phi = self.uniform(0.0, TAU);
        let rho = (1.0 - z * z).sqrt();
        dvector![rho * phi.cos(), rho * phi.sin(), z]
    }
}

/// A registered perturbation `η` with the experiment that goes with it.
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub eta: DifferentiableMap,
    pub eps: f64,
    pub probes: Vec<Vector>,
    pub t_settle: f64,
    pub t_observe: f64,
    /// Upper bound on `sup ‖G‖` after settling, frozen from a reference run.
    pub bound: f64,
}

fn circle_eta() -> DifferentiableMap {
    DifferentiableMap::new(2, 2, |v| {
        let (x, y) = (v[0], v[1]);
        dvector![x.powi(3) * (x * y).cos(), x * y * (x * y).exp()]
    })
}

fn sphere_eta() -> DifferentiableMap {
    DifferentiableMap::new(3, 3, |v| {
        let (x, y, z) = (v[0], v[1], v[2]);
        dvector![x * (x * x * y).exp() * y.cos(), x * (-z * z).exp() * z.sin(), x * y * z]
    })
}

pub const SYSTEM_NAMES: [&str; 4] = ["point", "circle", "sphere", "double_pendulum"];

const DP_KEYS: [&str; 7] = ["a1", "a2", "delta", "s_h", "s_v", "R", "alpha"];

/// A named built-in with resolved parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemDescriptor {
    pub name: String,
    pub parameters: BTreeMap<String, f64>,
}

impl SystemDescriptor {
    /// Built-in `name` with its defaults, then `overrides` applied.
    pub fn new(name: &str, overrides: &[(String, f64)]) -> Result<Self> {
        let mut parameters = BTreeMap::new();
        let allowed: &[&str] = match name {
            "point" | "circle" | "sphere" => {
                parameters.insert("alpha".to_string(), 0.5);
                &["alpha"]
            }
            "double_pendulum" => {
                let d = DoublePendulumParams::default();
                for (k, v) in [("a1", d.a1), ("a2", d.a2), ("delta", d.delta), ("s_v", d.s_v), ("R", d.r)] {
                    parameters.insert(k.to_string(), v);
                }
                &DP_KEYS
            }
            other => return Err(Error::UnknownSystem(other.to_string())),
        };
        for (k, v) in overrides {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::InvalidParameters(format!("`{k}` is not a parameter of {name}")));
            }
            parameters.insert(k.clone(), *v);
        }
        if name == "double_pendulum" && !parameters.contains_key("s_h") {
            let s_v = parameters["s_v"];
            parameters.insert("s_h".to_string(), 0.75 * s_v);
        }
        let desc = Self { name: name.to_string(), parameters };
        desc.build()?;
        Ok(desc)
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        let mut overrides: Vec<(String, f64)> = self.parameters.iter().map(|(k, v)| (k.clone(), *v)).collect();
        overrides.retain(|(k, _)| k != "alpha");
        overrides.push(("alpha".to_string(), alpha));
        Self::new(&self.name, &overrides)
    }

    pub fn double_pendulum_params(&self) -> Option<DoublePendulumParams> {
        (self.name == "double_pendulum").then(|| DoublePendulumParams {
            a1: self.parameters["a1"],
            a2: self.parameters["a2"],
            delta: self.parameters["delta"],
            s_h: self.parameters["s_h"],
            s_v: self.parameters["s_v"],
            r: self.parameters["R"],
            alpha: self.parameters.get("alpha").copied(),
        })
    }

    pub fn build(&self) -> Result<AnchorSystem> {
        let alpha = self.parameters.get("alpha").copied();
        match self.name.as_str() {
            "point" => build_point_with_alpha(alpha.unwrap_or(0.5)),
            "circle" => build_circle(alpha.unwrap_or(0.5)),
            "sphere" => build_sphere(alpha.unwrap_or(0.5)),
            "double_pendulum" => build_double_pendulum(self.double_pendulum_params().expect("name checked")),
            other => Err(Error::UnknownSystem(other.to_string())),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        if self.name == "sphere" {
            3
        } else {
            2
        }
    }

    /// Seeded points of the sampling region inside the domain guard.
    pub fn domain_samples(&self, count: usize, seed: u64) -> Vec<Vector> {
        let mut s = Sampler::new(seed);
        (0..count)
            .map(|_| match self.name.as_str() {
                "point" => dvector![s.uniform(-2.0, 2.0), s.uniform(-2.0, 2.0)],
                "circle" => {
                    let r = s.uniform(0.2, 1.9);
                    let phi = s.uniform(0.0, TAU);
                    dvector![r * phi.cos(), r * phi.sin()]
                }
                "sphere" => s.uniform(0.2, 1.9) * s.direction3(),
                _ => {
                    let p = self.double_pendulum_params().expect("known system");
                    let scale = s.uniform(0.3, 1.7);
                    scale * p.cycle(s.uniform(0.0, TAU))
                }
            })
            .collect()
    }

    /// Seeded points of `M`.
    pub fn manifold_samples(&self, count: usize, seed: u64) -> Vec<Vector> {
        let mut s = Sampler::new(seed);
        (0..count)
            .map(|_| match self.name.as_str() {
                "point" => Vector::zeros(2),
                "circle" => {
                    let phi = s.uniform(0.0, TAU);
                    dvector![phi.cos(), phi.sin()]
                }
                "sphere" => s.direction3(),
                _ => self.double_pendulum_params().expect("known system").cycle(s.uniform(0.0, TAU)),
            })
            .collect()
    }

    pub fn perturbation(&self) -> Option<Perturbation> {
        match self.name.as_str() {
            "circle" => Some(Perturbation {
                eta: circle_eta(),
                eps: 0.5,
                probes: vec![dvector![1.5, 0.0], dvector![0.5, 0.5], dvector![0.0, 1.8]],
                t_settle: 30.0,
                t_observe: 20.0,
                // reference run: sup ‖G‖ ≈ 0.2991 on all three probes
                bound: 0.35,
            }),
            "sphere" => Some(Perturbation {
                eta: sphere_eta(),
                eps: 0.7,
                probes: vec![dvector![1.5, 0.0, 0.0], dvector![0.5, 0.5, 0.5], dvector![0.0, 0.3, 1.8]],
                t_settle: 30.0,
                t_observe: 20.0,
                // reference run: sup ‖G‖ ≈ 0.4549 on all three probes
                bound: 0.5,
            }),
            _ => None,
        }
    }
}

fn parse_value(raw: &str) -> &str {
    let v = raw.trim();
    for q in ['"', '\''] {
        if v.len() >= 2 && v.starts_with(q) && v.ends_with(q) {
            return &v[1..v.len() - 1];
        }
    }
    v
}

/// Parses `key = value` lines (`#` starts a comment). `system` names the
/// built-in; every other key must be one of its numeric parameters.
pub fn parse_config(text: &str) -> Result<SystemDescriptor> {
    let mut system = None;
    let mut overrides = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) =
            line.split_once('=').ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`", lineno + 1)))?;
        let key = k.trim();
        let value = parse_value(v);
        if key.is_empty() {
            return Err(Error::Parse(format!("line {}: empty key", lineno + 1)));
        }
        if key == "system" {
            system = Some(value.to_string());
            continue;
        }
        let num: f64 =
            value.parse().map_err(|_| Error::Parse(format!("line {}: `{value}` is not a number", lineno + 1)))?;
        overrides.push((key.to_string(), num));
    }
    let system = system.ok_or_else(|| Error::Parse("missing `system` key".into()))?;
    SystemDescriptor::new(&system, &overrides)
}

pub fn load_system(config_path: impl AsRef<Path>) -> Result<SystemDescriptor> {
    let path = config_path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_stream() {
        // first outputs of SplitMix64 seeded with 0
        let mut rng = SplitMix64::seed_from_u64(0);
        assert_eq!(rng.next_u64(), 0xe220a8397b1dcdaf);
        assert_eq!(rng.next_u64(), 0x6e789e6aa1b965f4);
    }

    #[test]
    fn unit_draws_in_range() {
        let mut s = Sampler::new(3);
        for _ in 0..1000 {
            let u = s.unit();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn config_quotes_and_comments() {
        let d = parse_config("# demo\nsystem = \"circle\"\nalpha = 0.25 # gain\n").unwrap();
        assert_eq!(d.name, "circle");
        assert_eq!(d.parameters["alpha"], 0.25);
    }

    #[test]
    fn config_errors() {
        assert!(matches!(parse_config("alpha = 1"), Err(Error::Parse(_))));
        assert!(matches!(parse_config("system = circle\nalpha"), Err(Error::Parse(_))));
        assert!(matches!(parse_config("system = circle\nalpha = x"), Err(Error::Parse(_))));
        assert!(matches!(parse_config("system = torus"), Err(Error::UnknownSystem(_))));
        assert!(matches!(parse_config("system = circle\na1 = 1"), Err(Error::InvalidParameters(_))));
        assert!(matches!(parse_config("system = circle\nalpha = -1"), Err(Error::InvalidParameters(_))));
    }

    #[test]
    fn dp_s_h_follows_s_v() {
        let d = SystemDescriptor::new("double_pendulum", &[("s_v".into(), 1e-2)]).unwrap();
        assert!((d.parameters["s_h"] - 7.5e-3).abs() < 1e-18);
    }

    #[test]
    fn dp_rejects_degenerate_delta() {
        let p = DoublePendulumParams { delta: PI, ..Default::default() };
        assert!(matches!(build_double_pendulum(p), Err(Error::InvalidParameters(_))));
    }
}
