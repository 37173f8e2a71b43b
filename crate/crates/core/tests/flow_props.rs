use anchorkit::integrate::FnField;
use anchorkit::systems::*;
use anchorkit::verify::{check_lyapunov_decrease, verification_config};
use anchorkit::*;
use nalgebra::{dmatrix, dvector};

#[test]
fn circle_and_sphere_converge() {
    let c = build_circle(0.5).unwrap();
    let tr = integrate(&c, &dvector![1.5, 0.0], (0.0, 20.0), &verification_config()).unwrap();
    assert_eq!(tr.terminal_status, TerminalStatus::Completed);
    assert!((tr.final_state().norm() - 1.0).abs() < 1e-6);

    let s = build_sphere(0.5).unwrap();
    let tr = integrate(&s, &dvector![0.0, 0.0, 1.5], (0.0, 20.0), &verification_config()).unwrap();
    assert!((tr.final_state().norm() - 1.0).abs() < 1e-6);
}

#[test]
fn point_decays_like_exponential() {
    let p = build_point();
    let tr = integrate(&p, &dvector![3.0, 4.0], (0.0, 10.0), &verification_config()).unwrap();
    let expect = dvector![3.0, 4.0] * (-10.0f64).exp();
    assert!((tr.final_state() - expect).amax() < 1e-9);
    assert!(tr.final_state().norm() < 2.3e-4);
}

#[test]
fn flow_group_property() {
    let c = build_circle(0.7).unwrap();
    let cfg = IntegratorConfig::with_tolerances(1e-12, 1e-14);
    let x0 = dvector![0.4, 1.3];
    let direct = integrate(&c, &x0, (0.0, 3.0), &cfg).unwrap();
    let mid = integrate(&c, &x0, (0.0, 1.2), &cfg).unwrap();
    let split = integrate(&c, mid.final_state(), (1.2, 3.0), &cfg).unwrap();
    assert!((direct.final_state() - split.final_state()).amax() < 1e-9);
}

#[test]
fn angular_rate_is_one_everywhere() {
    // f_h = (−y, x) and f_v is radial, so the polar angle advances at rate 1
    let c = build_circle(0.5).unwrap();
    for x0 in [dvector![1.5, 0.0], dvector![0.3, 0.1], dvector![1.0, 0.0]] {
        let t_end = 2.5;
        let tr = integrate(&c, &x0, (0.0, t_end), &verification_config()).unwrap();
        let a0 = x0[1].atan2(x0[0]);
        let x = tr.final_state();
        let a1 = x[1].atan2(x[0]);
        assert!(((a1 - a0) - t_end).abs() < 1e-8);
    }
}

#[test]
fn tighter_tolerance_reduces_error() {
    let f = FnField::new(1, |x: &Vector| -x.clone());
    let exact = (-5.0f64).exp();
    let mut errs = Vec::new();
    for rtol in [1e-5, 1e-7, 1e-9] {
        let tr =
            integrate(&f, &dvector![1.0], (0.0, 5.0), &IntegratorConfig::with_tolerances(rtol, rtol * 1e-3)).unwrap();
        errs.push((tr.final_state()[0] - exact).abs());
    }
    assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
}

#[test]
fn variational_matches_closed_forms() {
    let decay = FnField::new(1, |x: &Vector| -x.clone());
    let v = integrate_variational(&decay, &dvector![2.0], (0.0, 1.0), &verification_config()).unwrap();
    assert!((v.transition_matrices.last().unwrap()[(0, 0)] - (-1.0f64).exp()).abs() < 1e-8);

    let rot = FnField::new(2, |x: &Vector| dvector![-x[1], x[0]]);
    let v =
        integrate_variational(&rot, &dvector![1.0, 0.0], (0.0, std::f64::consts::PI), &verification_config()).unwrap();
    assert!((v.transition_matrices.last().unwrap() + Matrix::identity(2, 2)).amax() < 1e-6);

    // x' = Ax with A upper triangular: Φ = e^{At}
    let lin = FnField::new(2, |x: &Vector| dmatrix![-1.0, 2.0; 0.0, -3.0] * x);
    let v = integrate_variational(&lin, &dvector![0.5, 0.5], (0.0, 1.0), &verification_config()).unwrap();
    let (e1, e3) = ((-1.0f64).exp(), (-3.0f64).exp());
    let expect = dmatrix![e1, e1 - e3; 0.0, e3];
    assert!((v.transition_matrices.last().unwrap() - expect).amax() < 1e-7);
}

#[test]
fn potential_decreases_on_ten_trajectories_per_system() {
    for name in SYSTEM_NAMES {
        let d = SystemDescriptor::new(name, &[]).unwrap();
        let s = d.build().unwrap();
        for x0 in d.domain_samples(10, 21) {
            let tr = integrate(&s, &x0, (0.0, 20.0), &verification_config()).unwrap();
            assert_eq!(tr.terminal_status, TerminalStatus::Completed, "{name} from {x0:?}");
            let r = check_lyapunov_decrease(&s, &tr);
            assert!(r.passed, "{name} from {x0:?}: {}", r.max_residual);
        }
    }
}

#[test]
fn potential_check_on_manifold_and_reversed() {
    let c = build_circle(0.5).unwrap();
    let on = integrate(&c, &dvector![0.0, 1.0], (0.0, 10.0), &verification_config()).unwrap();
    assert!(check_lyapunov_decrease(&c, &on).passed);
    assert!(on.states.iter().all(|x| c.potential_v(x).unwrap() <= 1e-10));

    let mut rev = integrate(&c, &dvector![1.5, 0.0], (0.0, 10.0), &verification_config()).unwrap();
    rev.states.reverse();
    assert!(!check_lyapunov_decrease(&c, &rev).passed);
}

#[test]
fn leaving_the_guard_stops_the_run() {
    // the unstable rest point is the origin; a time-reversed circle field runs outward
    let c = build_circle(0.5).unwrap();
    let back = FnFieldGuarded { inner: &c };
    let tr = integrate(&back, &dvector![1.5, 0.0], (0.0, 5.0), &verification_config()).unwrap();
    assert_eq!(tr.terminal_status, TerminalStatus::DomainExit);
    assert!(tr.states.iter().all(|x| c.in_domain(x)));
}

struct FnFieldGuarded<'a> {
    inner: &'a AnchorSystem,
}

impl VectorField for FnFieldGuarded<'_> {
    fn dim(&self) -> usize {
        2
    }
    fn eval(&self, x: &Vector) -> Result<Vector> {
        Ok(-self.inner.eval(x)?)
    }
    fn in_domain(&self, x: &Vector) -> bool {
        self.inner.in_domain(x)
    }
}
