use anchorkit::linalg::{projector_onto_kernel, projector_onto_rowspace};
use anchorkit::systems::*;
use anchorkit::verify::{check_t_identity, NonVerticalFault};
use anchorkit::*;
use nalgebra::{dmatrix, dvector};

fn circle() -> AnchorSystem {
    build_circle(0.5).unwrap()
}

/// Circle whose "phase map" is `(r, 0)`: `ker DP` is the tangent line, so
/// it coincides with `ker DG` and the direct sum fails everywhere.
fn broken_circle() -> AnchorSystem {
    let p = DifferentiableMap::new(2, 2, |x| dvector![x.norm(), 0.0])
        .with_jacobian(|x| dmatrix![x[0] / x.norm(), x[1] / x.norm(); 0.0, 0.0]);
    circle().with_phase(p).unwrap()
}

#[test]
fn projector_examples() {
    assert_eq!(projector_onto_kernel(&dmatrix![1.0, 0.0]).unwrap(), dmatrix![0.0, 0.0; 0.0, 1.0]);
    assert!(projector_onto_kernel(&Matrix::identity(2, 2)).unwrap().amax() < 1e-15);
    let q = projector_onto_kernel(&dmatrix![0.0, 0.0; 0.0, 0.5]).unwrap();
    assert!((q - dmatrix![1.0, 0.0; 0.0, 0.0]).amax() < 1e-15);
    assert_eq!(projector_onto_rowspace(&dmatrix![2.0, 0.0]).unwrap(), dmatrix![1.0, 0.0; 0.0, 0.0]);
}

#[test]
fn potential_examples() {
    let c = circle();
    assert_eq!(c.potential_v(&dvector![1.0, 0.0]).unwrap(), 0.0);
    assert_eq!(c.potential_v(&dvector![2.0, 0.0]).unwrap(), 9.0);
    assert_eq!(build_point().potential_v(&dvector![3.0, 4.0]).unwrap(), 25.0);
}

#[test]
fn gradient_examples() {
    let c = circle();
    assert_eq!(grad_v(&c, &dvector![1.0, 0.0]).unwrap(), dvector![0.0, 0.0]);
    assert_eq!(grad_v(&c, &dvector![2.0, 0.0]).unwrap(), dvector![24.0, 0.0]);
    let s = build_sphere(0.5).unwrap();
    assert_eq!(grad_v(&s, &dvector![0.0, 0.0, 2.0]).unwrap(), dvector![0.0, 0.0, 24.0]);
}

#[test]
fn pi_p_examples() {
    let p = build_point();
    assert_eq!(p.pi_p(&dvector![0.3, -2.0]).unwrap(), Matrix::identity(2, 2));
    let q = circle().pi_p(&dvector![2.0, 0.0]).unwrap();
    assert!((q - dmatrix![1.0, 0.0; 0.0, 0.0]).amax() < 1e-15);
    let s = build_sphere(0.5).unwrap().pi_p(&dvector![0.0, 0.0, 2.0]).unwrap();
    assert!((s - Matrix::from_diagonal(&dvector![0.0, 0.0, 1.0])).amax() < 1e-15);
}

#[test]
fn t_examples() {
    let (t, _) = circle().coordinate_change_t(&dvector![1.0, 0.0]).unwrap();
    assert!((&t * dvector![0.0, 1.0] - dvector![0.0, 1.0]).amax() < 1e-15);
    assert!((&t * dvector![1.0, 0.0] - dvector![1.0, 0.0]).amax() < 1e-15);
    let (tp, cond) = build_point().coordinate_change_t(&dvector![5.0, -1.0]).unwrap();
    assert_eq!(tp, Matrix::identity(2, 2));
    assert_eq!(cond, 1.0);
    let d = SystemDescriptor::new("circle", &[]).unwrap();
    let r = check_t_identity(&circle(), &d.domain_samples(100, 4), 1e-9);
    assert!(r.passed, "{}", r.max_residual);
}

#[test]
fn field_examples() {
    let c = circle();
    let e = c.anchored_field(&dvector![2.0, 0.0]).unwrap();
    assert!((&e.f_v - dvector![-12.0, 0.0]).amax() < 1e-12);
    assert!((&e.f - dvector![-12.0, 2.0]).amax() < 1e-12);
    assert_eq!(e.v, 9.0);
    let on = c.anchored_field(&dvector![1.0, 0.0]).unwrap();
    assert!((&on.f - dvector![0.0, 1.0]).amax() < 1e-15);
    assert!(on.f_v.amax() < 1e-15);
    assert!(build_point().horizontal_field(&dvector![1.0, 2.0]).unwrap().amax() == 0.0);
    let s = build_sphere(0.5).unwrap();
    for x in [dvector![0.3, -0.2, 1.1], dvector![1.5, 0.1, -0.4]] {
        let fh = s.horizontal_field(&x).unwrap();
        assert!((fh - dvector![-x[1], x[0], 0.0]).amax() < 1e-12);
    }
}

#[test]
fn errors_are_typed() {
    let c = circle();
    assert!(matches!(c.anchored_field(&dvector![3.0, 0.0]), Err(Error::OutOfDomain(_))));
    assert!(matches!(c.pi_p(&dvector![0.0, 0.0]), Err(Error::OutOfDomain(_))));
    assert!(matches!(broken_circle().anchored_field(&dvector![1.5, 0.0]), Err(Error::ConnectionViolated { .. })));
    assert!(matches!(c.with_phase(DifferentiableMap::new(2, 1, |x| dvector![x[0]])), Err(Error::ShapeMismatch(_))));
}

#[test]
fn assumptions_hold_on_builtins() {
    for name in SYSTEM_NAMES {
        let d = SystemDescriptor::new(name, &[]).unwrap();
        let report = d.build().unwrap().check_assumptions(&d.domain_samples(100, 8));
        for c in &report.checks {
            assert!(c.passed, "{name}: {} residual {}", c.check_name, c.max_residual);
        }
    }
}

#[test]
fn double_pendulum_direct_sum_on_unit_circle() {
    let s = SystemDescriptor::new("double_pendulum", &[]).unwrap().build().unwrap();
    let pts: Vec<Vector> = (0..360)
        .map(|j| {
            let t = std::f64::consts::TAU * j as f64 / 360.0;
            dvector![t.cos(), t.sin()]
        })
        .collect();
    assert!(s.check_assumptions(&pts).get("direct_sum").unwrap().passed);
}

#[test]
fn broken_system_fails_direct_sum() {
    let d = SystemDescriptor::new("circle", &[]).unwrap();
    let r = broken_circle().check_assumptions(&d.domain_samples(20, 1));
    assert!(!r.get("direct_sum").unwrap().passed);
    assert!(!r.passed());
}

#[test]
fn second_order_examples() {
    let d = SystemDescriptor::new("double_pendulum", &[]).unwrap();
    let s = d.build().unwrap();
    let theta = d.domain_samples(1, 2).remove(0);
    let f = s.anchored_field(&theta).unwrap().f;
    let df = s.field_jacobian(&theta).unwrap();
    let on_graph = s.second_order_field(&SecondOrderState { theta: theta.clone(), omega: f.clone(), mu: 7.0 }).unwrap();
    assert_eq!(on_graph.rows(0, 2), f.rows(0, 2));
    assert!((on_graph.rows(2, 2) - &df * &f).amax() < 1e-15);
    let off =
        s.second_order_field(&SecondOrderState { theta: theta.clone(), omega: Vector::zeros(2), mu: 0.0 }).unwrap();
    assert!((off.rows(2, 2) - &df * &f).amax() < 1e-15);
    let omega = dvector![0.01, -0.02];
    let mu10 =
        s.second_order_field(&SecondOrderState { theta: theta.clone(), omega: omega.clone(), mu: 10.0 }).unwrap();
    assert!((mu10.rows(2, 2) - (&df * &f - 10.0 * (&omega - &f))).amax() < 1e-5);
    assert!(matches!(
        s.second_order_field(&SecondOrderState { theta: dvector![0.0, 0.0], omega, mu: 1.0 }),
        Err(Error::OutOfDomain(_))
    ));
}

#[test]
fn fault_field_breaks_only_the_lift() {
    let c = circle();
    let x = dvector![1.5, 0.5];
    let fault = NonVerticalFault { system: &c };
    let f = fault.eval(&x).unwrap();
    let dp = c.phase_jacobian(&x).unwrap();
    assert!((dp * f - c.template_at(&c.project(&x).unwrap()).unwrap()).norm() > 1e-2);
}

#[test]
fn finite_difference_components_still_lift() {
    let d = SystemDescriptor::new("double_pendulum", &[]).unwrap();
    let s = d.build().unwrap().without_analytic_jacobians();
    assert!(!s.constraint().has_analytic_jacobian());
    let r = anchorkit::verify::check_lift(&s, &d.domain_samples(100, 3), 1e-5);
    assert!(r.passed, "{}", r.max_residual);
}
