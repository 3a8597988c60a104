use num_complex::Complex;
use pevo::diff::*;
use pevo::expr::*;
use pevo::jet::*;
use pevo::scalar::*;
use pevo::Error;

#[test]
fn bracket_at_origin_is_one() {
    assert_eq!(bracket(0.0f64), 1.0);
    assert!((bracket(3.0f64) - 10f64.sqrt()).abs() < 1e-15);
}

#[test]
fn binomials() {
    assert_eq!(binomial(5, 2), 10);
    assert_eq!(binomial(12, 6), 924);
    assert_eq!(binomial(3, 4), 0);
    assert_eq!(factorial::<f64>(5), 120.0);
}

#[test]
fn clamp_is_finite_for_both_widths() {
    assert!(f64::exp_clamp().exp().is_finite());
    assert!(f32::exp_clamp().exp().is_finite());
}

#[test]
fn exp_of_variable() {
    let x = Jet::variable(0.5f64, 6);
    let d = x.exp().derivatives();
    for v in d {
        assert!((v - 0.5f64.exp()).abs() < 1e-14);
    }
}

#[test]
fn powf_and_ln_agree() {
    let x = Jet::variable(2.0f64, 8);
    let a = x.powf(-1.5);
    let b = x.ln().scale(-1.5).exp();
    for (p, q) in a.c.iter().zip(&b.c) {
        assert!((p - q).abs() < 1e-14);
    }
}

#[test]
fn quotient_rule() {
    let x = Jet::variable(0.3f64, 5);
    let s = Jet { c: x.c.clone() };
    let one_plus = x.add_scalar(1.0);
    let q = &s / &one_plus;
    // x/(1+x) = 1 - 1/(1+x); k-th Taylor coefficient (-1)^{k+1} / 1.3^{k+1}
    for k in 1..=5 {
        let expect = (-1.0f64).powi(k as i32 + 1) / 1.3f64.powi(k as i32 + 1);
        assert!((q.c[k] - expect).abs() < 1e-14);
    }
}

#[test]
fn window_is_plateau() {
    let (a, b) = (6.0f64, 1.0);
    assert!((erf_window(0.0, a, b) - 1.0).abs() < 1e-15);
    assert!(erf_window(12.0, a, b) < 1e-15);
}

#[test]
fn patch_derivatives_of_sine() {
    let d = PatchDiff::<f64>::new(128);
    let x0 = 0.3;
    let out = d.derivatives(|x| c(x.sin()), x0, 8.0, 6).unwrap();
    let exact = [x0.sin(), x0.cos(), -x0.sin(), -x0.cos(), x0.sin(), x0.cos(), -x0.sin()];
    for (a, b) in out.iter().zip(exact) {
        assert!((a.re - b).abs() < 1e-7 && a.im.abs() < 1e-7, "{a} vs {b}");
    }
}

#[test]
fn patch_derivatives_keep_relative_accuracy_far_out() {
    // ∂² <x>^{-1/2} = (x² (σ+2)σ... ) checked against the closed form at x = 1e4
    let d = PatchDiff::<f64>::new(128);
    let x0 = 1.0e4;
    let out = d.derivatives(|x| c(bracket(x).powf(-0.5)), x0, bracket(x0), 2).unwrap();
    let q = -0.25;
    let g = (1.0 + x0 * x0).powf(q);
    let g1 = 2.0 * q * x0 * (1.0 + x0 * x0).powf(q - 1.0);
    let g2 = 2.0 * q * (1.0 + x0 * x0).powf(q - 1.0)
        + 4.0 * q * (q - 1.0) * x0 * x0 * (1.0 + x0 * x0).powf(q - 2.0);
    assert!((out[0].re - g).abs() < 1e-13 * g);
    assert!((out[1].re - g1).abs() < 1e-10 * g1.abs());
    assert!((out[2].re - g2).abs() < 1e-8 * g2.abs());
}

#[test]
fn line_tables_of_gaussian() {
    let m = 64;
    let d = LineDiff::<f64>::new(m, 4);
    assert!(d.aligned());
    let (a, h) = (-3.0, 6.0 / m as f64);
    let t = d.tables(|x| c((-x * x).exp()), a, h, 3).unwrap();
    for i in 0..m {
        let x = a + i as f64 * h;
        let g = (-x * x).exp();
        assert!((t[0][i].re - g).abs() < 1e-12);
        assert!((t[1][i].re + 2.0 * x * g).abs() < 1e-10);
        assert!((t[2][i].re - (4.0 * x * x - 2.0) * g).abs() < 1e-9);
    }
}

#[test]
fn unresolved_patch_is_reported() {
    let d = PatchDiff::<f64>::new(32);
    let err = d.derivatives(|x| c((50.0 * x).sin()), 0.0, 10.0, 1).unwrap_err();
    assert!(matches!(err, Error::Unresolved { .. }));
}

#[test]
fn model_coefficient() {
    let e = Expr::parse("i*<x>^-0.5").unwrap();
    let v: Complex<f64> = e.eval(0.0, 3.0);
    assert!((v.im - 10f64.powf(-0.25)).abs() < 1e-15 && v.re == 0.0);
    assert!(!e.depends_on_t());
}

#[test]
fn precedence_and_functions() {
    let e = Expr::parse("2 + 3*sin(t)^2 - exp(-x)/2").unwrap();
    let (t, x) = (0.7f64, 1.3f64);
    let expect = 2.0 + 3.0 * t.sin().powi(2) - (-x).exp() / 2.0;
    assert!((e.eval(t, x).re - expect).abs() < 1e-14);
    assert!(e.depends_on_t());
    let e = Expr::parse("-2^2").unwrap();
    assert_eq!(e.eval(0.0f64, 0.0).re, -4.0);
    let e = Expr::parse("1.5e-1*br(x)").unwrap();
    assert!((e.eval(0.0f64, 0.0).re - 0.15).abs() < 1e-16);
}

#[test]
fn errors_carry_position() {
    let err = Expr::parse("1 + foo(x)").unwrap_err();
    assert_eq!(err.position, 4);
    assert!(Expr::parse("(1 + x").is_err());
    assert!(Expr::parse("1 +").is_err());
    assert!(Expr::parse("<y>").is_err());
}
