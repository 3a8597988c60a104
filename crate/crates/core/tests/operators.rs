use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use pevo::grid::{apply_spatial_multiplier, differentiate, l2_norm, make_grid, GridFunction};
use pevo::operators::*;
use pevo::scalar::{bracket, c};
use pevo::Error;
use proptest::prelude::*;

fn rel(a: &GridFunction<f64>, b: &GridFunction<f64>) -> f64 {
    l2_norm(&a.sub(b).unwrap()) / l2_norm(b)
}

#[test]
fn model_m_coefficients() {
    let op = model_m::<f64>(2, 0.5).unwrap();
    assert_eq!(op.p(), 2);
    assert_eq!(op.a_p().eval(0.3), 1.0);
    let a1 = op.coefficient(1).unwrap();
    let v = a1.eval(0.0, 2.0);
    assert!((v.im - 5f64.powf(-0.25)).abs() < 1e-15 && v.re == 0.0);
    assert_eq!(a1.decay_sigma, Some(0.5));
    assert!(op.coefficient(2).is_none());
    assert!(model_m::<f64>(3, 0.4).is_err());
    assert!(model_m::<f64>(3, 0.5).is_err());
    assert!(model_m::<f64>(2, 1.0).is_err());
    assert!(model_m::<f64>(2, 0.0).is_err());
    assert!(model_m::<f64>(1, 0.5).is_err());
    let op3 = model_m::<f64>(3, 0.9).unwrap();
    assert_eq!(op3.p(), 3);
    assert!((op3.coefficient(1).unwrap().eval(0.0, 1.0).im - 2f64.powf(-0.45)).abs() < 1e-15);
    assert!(op3.coefficient(2).is_none() && op3.coefficient(3).is_none());
    assert!(!op3.is_time_dependent());
}

#[test]
fn free_op_principal_checks() {
    let p3 = free_op::<f64>(3, TimeProfile::Constant(1.0)).unwrap();
    assert!(p3.lower().is_empty());
    let ok = free_op(2, TimeProfile::function("2+sin(t)", |t: f64| 2.0 + t.sin())).unwrap();
    assert!(ok.principal_min() >= 1.0 - 1e-12);
    assert!(ok.is_time_dependent());
    let bad = PEvolutionOp::new(2, TimeProfile::function("sin(t)", |t: f64| t.sin()), vec![], PI);
    assert!(bad.is_err());
    assert!(free_op::<f64>(1, TimeProfile::Constant(1.0)).is_err());
    assert!(free_op::<f64>(2, TimeProfile::Constant(0.0)).is_err());
}

#[test]
fn operator_construction_rejects_bad_indices() {
    let a = TimeProfile::Constant(1.0f64);
    assert!(PEvolutionOp::new(2, a.clone(), vec![Coefficient::zero(3)], 1.0).is_err());
    assert!(PEvolutionOp::new(2, a.clone(), vec![Coefficient::zero(0)], 1.0).is_err());
    assert!(PEvolutionOp::new(2, a.clone(), vec![Coefficient::zero(1), Coefficient::zero(1)], 1.0).is_err());
    assert!(PEvolutionOp::new(2, a, vec![], 0.0).is_err());
}

#[test]
fn time_profiles() {
    let a = TimeProfile::function("2+sin(t)", |t: f64| 2.0 + t.sin());
    let t = 1.7;
    assert!((a.integral(t) - (2.0 * t + 1.0 - t.cos())).abs() < 1e-14);
    let r = a.reversed(3.0);
    assert!((r.eval(0.5) + a.eval(2.5)).abs() < 1e-15);
    assert_eq!(TimeProfile::Constant(2.0).integral(3.0), 6.0);
    assert_eq!(TimeProfile::Constant(2.0).reversed(1.0).eval(0.0), -2.0);
}

#[test]
fn time_reversed_operator_negates_every_coefficient() {
    let a = TimeProfile::function("2+sin(t)", |t: f64| 2.0 + t.sin());
    let coef = Coefficient::new(1, "t<x>^-1", true, |t: f64, x: f64| c(t / bracket(x)));
    let op = PEvolutionOp::new(2, a, vec![coef], 2.0).unwrap();
    let rev = op.time_reversed();
    assert!((rev.a_p().eval(0.5) + op.a_p().eval(1.5)).abs() < 1e-15);
    let (x, t) = (0.7, 0.4);
    assert!((rev.coefficient(1).unwrap().eval(t, x) + op.coefficient(1).unwrap().eval(2.0 - t, x)).norm() < 1e-15);
    assert!(op.principal_only().lower().is_empty());
}

#[test]
fn coefficient_from_expression() {
    let coef = Coefficient::<f64>::from_expr(1, "i*<x>^-0.5*(2+cos(t))").unwrap();
    assert!(coef.time_dependent);
    let v = coef.eval(0.0, 0.0);
    assert!((v - C64::new(0.0, 3.0)).norm() < 1e-15);
    assert!(Coefficient::<f64>::from_expr(1, "<x>^").is_err());
}

#[test]
fn free_op_on_plane_wave() {
    let g = make_grid(64, -PI, PI).unwrap();
    let op = free_op::<f64>(2, TimeProfile::Constant(1.0)).unwrap();
    let k = g.xi()[3];
    let u = GridFunction::from_fn(&g, |x| C64::from_polar(1.0, k * x)).unwrap();
    let out = apply_spatial_part_unchecked(&op, &u, 0.0);
    let expect = u.scaled(c(k * k));
    assert!(l2_norm(&out.sub(&expect).unwrap()) < 1e-12);
}

#[test]
fn model_m_is_the_two_term_sum() {
    let g = make_grid(512, -30.0f64, 30.0).unwrap();
    let u = GridFunction::from_real_fn(&g, |x| (-x * x / 4.0).exp() * (1.0 + 0.3 * x)).unwrap();
    let op = model_m(2, 0.5).unwrap();
    let out = apply_spatial_part(&op, &u, 0.0).unwrap();
    let d2 = differentiate(&u, 2);
    let d1 = apply_spatial_multiplier(&differentiate(&u, 1), |x| C64::new(0.0, bracket(x).powf(-0.5))).unwrap();
    let sum = d2.combine(c(1.0), &d1, c(1.0)).unwrap();
    assert!(rel(&out, &sum) < 1e-13);
}

#[test]
fn agrees_with_dense_matrix() {
    let (n, x_min, len) = (256usize, -20.0f64, 40.0f64);
    let g = make_grid(n, x_min, x_min + len).unwrap();
    let u = GridFunction::from_fn(&g, |x| {
        C64::new((-x * x / 3.0).exp(), 0.5 * x * (-(x - 1.0) * (x - 1.0) / 2.0).exp())
    })
    .unwrap();
    let cases: Vec<(PEvolutionOp<f64>, Vec<(usize, Box<dyn Fn(f64) -> C64>)>)> = vec![
        (model_m(2, 0.5).unwrap(), vec![(1, Box::new(|x: f64| C64::new(0.0, bracket(x).powf(-0.5))))]),
        (model_m(3, 0.8).unwrap(), vec![(1, Box::new(|x: f64| C64::new(0.0, bracket(x).powf(-0.8))))]),
        (
            PEvolutionOp::new(
                3,
                TimeProfile::Constant(2.0),
                vec![
                    Coefficient::new(2, "cos x", false, |_, x: f64| c(x.cos() / bracket(x))),
                    Coefficient::new(3, "0.5i", false, |_, _| C64::new(0.0, 0.5)),
                ],
                1.0,
            )
            .unwrap(),
            vec![
                (2, Box::new(|x: f64| c(x.cos() / bracket(x)))),
                (3, Box::new(|_| C64::new(0.0, 0.5))),
            ],
        ),
    ];
    for (op, lower) in cases {
        let refs: Vec<(usize, &dyn Fn(f64) -> C64)> = lower.iter().map(|(j, f)| (*j, f.as_ref())).collect();
        let a_p = op.a_p().eval(0.0);
        // the generator is -i times the spatial part
        let l = pevo_testkit::evolution_generator(n, x_min, len, op.p(), a_p, &refs) * C64::new(0.0, 1.0);
        let dense = pevo_testkit::apply(&l, u.values());
        let dense = GridFunction::new(&g, dense).unwrap();
        let out = apply_spatial_part(&op, &u, 0.0).unwrap();
        assert!(rel(&out, &dense) < 1e-10, "{}: {}", op.describe(), rel(&out, &dense));
    }
}

#[test]
fn unresolved_input_rejected() {
    let g = make_grid(64, -4.0f64, 4.0).unwrap();
    let op = free_op::<f64>(2, TimeProfile::Constant(1.0)).unwrap();
    let mut v = vec![c(0.0); 64];
    v[10] = c(1.0);
    let u = GridFunction::new(&g, v).unwrap();
    match apply_spatial_part(&op, &u, 0.0) {
        Err(Error::Unresolved { tail }) => assert!(tail > 1e-10),
        other => panic!("expected resolution failure, got {other:?}"),
    }
}

#[test]
fn decay_audit_cases() {
    let region = AuditRegion::new(2000.0, 1.0);
    let op = model_m::<f64>(2, 0.5).unwrap();
    let r = check_decay_condition(op.coefficient(1).unwrap(), 2, 0.5, 1.5, 4, &region).unwrap();
    assert!(r.pass, "{:?}", r.failures);
    let one = Coefficient::new(1, "1", false, |_, _| c(1.0f64));
    let r = check_decay_condition(&one, 2, 0.5, 1.5, 2, &region).unwrap();
    assert!(!r.pass);
    assert!(r.failures[0].starts_with("beta=0"));
    let zero = Coefficient::<f64>::zero(1);
    let r = check_decay_condition(&zero, 2, 0.5, 1.5, 3, &region).unwrap();
    assert!(r.pass && r.q.iter().all(|&q| q == 0.0));
    assert!(matches!(
        check_decay_condition(&zero, 2, 0.5, 1.5, 9, &region),
        Err(Error::DerivativeCap { .. })
    ));
    assert!(check_decay_condition(&zero, 2, 0.5, 1.0, 3, &region).is_err());
}

#[test]
fn model_m_passes_decay_audit_for_every_gevrey_order() {
    let region = AuditRegion::new(2000.0, 1.0);
    for (p, sigma) in [(2u32, 0.5f64), (2, 0.9), (3, 0.7), (3, 0.9), (5, 0.8)] {
        let op = model_m(p, sigma).unwrap();
        let coef = op.coefficient(1).unwrap();
        for theta0 in [1.1, 1.5, 2.0] {
            let r = check_decay_condition(coef, p, sigma, theta0, 8, &region).unwrap();
            assert!(r.pass, "p={p} σ={sigma} θ0={theta0}: {:?}", r.failures);
            assert!(r.c_fit.is_finite() && r.c_fit > 0.0);
            // Q_β ≤ C^{β+1} β!^{θ0}
            for (b, q) in r.q.iter().enumerate() {
                let bound = (b as f64 + 1.0) * r.c_fit.ln() + theta0 * pevo::scalar::ln_factorial(b);
                assert!(q.ln() <= bound + 1e-12);
            }
        }
    }
}

#[test]
fn decay_audit_matches_closed_form_weighted_sups() {
    // for ⟨x⟩^{-σ}: Q₀ = 1 and Q₁ = sup σ|x| ⟨x⟩^{-σ-2} ⟨x⟩^{σ+1}
    let sigma = 0.5;
    let region = AuditRegion::new(2000.0, 1.0);
    let op = model_m::<f64>(2, sigma).unwrap();
    let r = check_decay_condition(op.coefficient(1).unwrap(), 2, sigma, 1.5, 1, &region).unwrap();
    assert!((r.q[0] - 1.0).abs() < 1e-12);
    let want = region
        .samples()
        .iter()
        .map(|&x| sigma * x.abs() * bracket(x).powf(-sigma - 2.0) * bracket(x).powf(sigma + 1.0))
        .fold(0.0, f64::max);
    assert!((r.q[1] - want).abs() < 1e-6 * want, "{} vs {want}", r.q[1]);
}

#[test]
fn time_dependent_coefficient_is_sampled_in_time() {
    let region = AuditRegion::new(500.0, 2.0);
    assert_eq!(region.times(true).len(), 16);
    assert_eq!(region.times(false), vec![0.0]);
    let coef = Coefficient::new(1, "(1+t)i<x>^-0.5", true, |t: f64, x: f64| C64::new(0.0, (1.0 + t) * bracket(x).powf(-0.5)));
    let r = check_decay_condition(&coef, 2, 0.5, 1.5, 2, &region).unwrap();
    assert!(r.pass);
    assert!((r.q[0] - 3.0).abs() < 1e-12);
}

fn shift(u: &GridFunction<f64>, r: usize) -> GridFunction<f64> {
    let n = u.values().len();
    let v: Vec<C64> = (0..n).map(|i| u.values()[(i + n - r) % n]).collect();
    GridFunction::new(u.grid(), v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn free_operator_commutes_with_grid_shifts(
        p in 2u32..6, r in 0usize..256, x0 in -5.0f64..5.0, w in 0.7f64..2.0, k in -2.0f64..2.0,
    ) {
        // ξ_max = 10 keeps ξ^p roundoff amplification under the tolerance
        let g = make_grid(256, -40.0f64, 40.0).unwrap();
        let u = GridFunction::from_fn(&g, |x| c((-(x - x0) * (x - x0) / (2.0 * w * w)).exp()) * C64::from_polar(1.0, k * x)).unwrap();
        let op = free_op(p, TimeProfile::Constant(1.0)).unwrap();
        let a = apply_spatial_part_unchecked(&op, &shift(&u, r), 0.0);
        let b = shift(&apply_spatial_part_unchecked(&op, &u, 0.0), r);
        prop_assert!(l2_norm(&a.sub(&b).unwrap()) <= 1e-10 * l2_norm(&b));
    }

    #[test]
    fn spatial_part_is_linear(
        a in (-2.0f64..2.0, -2.0f64..2.0), b in (-2.0f64..2.0, -2.0f64..2.0), x0 in -3.0f64..3.0, sigma in 0.55f64..0.95,
    ) {
        let g = make_grid(256, -40.0f64, 40.0).unwrap();
        let u = GridFunction::from_real_fn(&g, |x| (-(x - x0) * (x - x0) / 2.0).exp()).unwrap();
        let v = GridFunction::from_fn(&g, |x| C64::new(0.0, x) * (-x * x / 3.0).exp()).unwrap();
        let (a, b) = (C64::new(a.0, a.1), C64::new(b.0, b.1));
        let op = model_m(3, sigma).unwrap();
        let lhs = apply_spatial_part_unchecked(&op, &u.combine(a, &v, b).unwrap(), 0.3);
        let rhs = apply_spatial_part_unchecked(&op, &u, 0.3)
            .combine(a, &apply_spatial_part_unchecked(&op, &v, 0.3), b)
            .unwrap();
        prop_assert!(l2_norm(&lhs.sub(&rhs).unwrap()) <= 1e-12 * l2_norm(&rhs).max(1e-300));
    }
}
