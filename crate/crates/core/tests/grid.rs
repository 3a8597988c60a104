use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use pevo::grid::*;
use pevo::scalar::{bracket, c};
use pevo::Error;
use proptest::prelude::*;

#[test]
fn small_grid_layout() {
    let g = make_grid(8, -PI, PI).unwrap();
    assert!((g.dx() - PI / 4.0).abs() < 1e-15);
    let mut xi: Vec<f64> = g.xi().to_vec();
    xi.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for (a, b) in xi.iter().zip([-4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0]) {
        assert!((a - b).abs() < 1e-14);
    }
    assert_eq!(g.nyquist_index(), 4);
    assert!((g.xi()[4] + 4.0).abs() < 1e-14);
    assert_eq!(wavenumber_index(5, 8), -3);
    assert_eq!(wavenumber_index(3, 8), 3);
}

#[test]
fn large_grid_spacing() {
    let g = make_grid(1024, -200.0f64, 200.0).unwrap();
    assert_eq!(g.dx(), 400.0 / 1024.0);
    assert_eq!(g.length(), 400.0);
    assert!((g.dxi() - 2.0 * PI / 400.0).abs() < 1e-16);
    assert_eq!(g.points().len(), 1024);
    assert_eq!(g.nearest_index(0.0), 512);
}

#[test]
fn rejects_bad_sizes_and_domains() {
    assert_eq!(make_grid(7, 0.0f64, 1.0).unwrap_err(), Error::GridSize(7));
    assert_eq!(make_grid(4, 0.0f64, 1.0).unwrap_err(), Error::GridSize(4));
    assert!(matches!(make_grid(8, 1.0f64, 1.0), Err(Error::Domain { .. })));
    assert!(matches!(make_grid(8, 2.0f64, 1.0), Err(Error::Domain { .. })));
}

#[test]
fn zero_maps_to_zero() {
    let g = make_grid(64, -5.0f64, 5.0).unwrap();
    let u = GridFunction::zeros(&g);
    assert!(forward_transform(&u).values().iter().all(|z| z.norm() == 0.0));
    let z = Spectrum::from_fn(&g, |_| c(0.0)).unwrap();
    assert_eq!(l2_norm(&inverse_transform(&z)), 0.0);
    assert_eq!(l2_norm(&u), 0.0);
}

#[test]
fn gaussian_transform_matches_closed_form() {
    let g = make_grid(1024, -40.0f64, 40.0).unwrap();
    let u = GridFunction::from_real_fn(&g, |x| (-x * x / 2.0).exp()).unwrap();
    let uh = forward_transform(&u);
    let err = g
        .xi()
        .iter()
        .zip(uh.values())
        .map(|(xi, z)| (*z - c((2.0 * PI).sqrt() * (-xi * xi / 2.0).exp())).norm())
        .fold(0.0, f64::max);
    assert!(err < 1e-10, "max error {err}");
    // ∫ e^{-x²} dx = √π
    assert!((l2_norm(&u) - PI.powf(0.25)).abs() < 1e-10);
}

#[test]
fn single_mode_lands_in_one_bin() {
    let g = make_grid(64, -PI, PI).unwrap();
    let j = 5usize;
    let xi_j = g.xi()[j];
    let u = GridFunction::from_fn(&g, |x| C64::from_polar(1.0, xi_j * x)).unwrap();
    let uh = forward_transform(&u);
    for (k, z) in uh.values().iter().enumerate() {
        if k == j {
            assert!((z.norm() - 2.0 * PI).abs() < 1e-12);
        } else {
            assert!(z.norm() < 1e-12);
        }
    }
}

#[test]
fn packet_profile_inverts_to_a_real_even_function() {
    let g = make_grid(2048, -64.0f64, 64.0).unwrap();
    let mut spec = Spectrum::from_fn(&g, |xi| c((-0.5 * bracket(xi).powf(0.5)).exp())).unwrap();
    spec.zero_nyquist();
    let phi = inverse_transform(&spec);
    let i0 = g.nearest_index(0.0);
    assert!(phi.values().iter().all(|z| z.im.abs() < 1e-12));
    assert_eq!(phi.max_abs(), phi.values()[i0].norm());
    for k in 1..100 {
        assert!((phi.values()[i0 + k] - phi.values()[i0 - k]).norm() < 1e-12);
    }
}

#[test]
fn constant_on_unit_interval_has_unit_norm() {
    let g = make_grid(64, 0.0f64, 1.0).unwrap();
    let u = GridFunction::from_real_fn(&g, |_| 1.0).unwrap();
    assert!((l2_norm(&u) - 1.0).abs() < 1e-14);
}

#[test]
fn d_squared_fixes_sine() {
    let g = make_grid(8, -PI, PI).unwrap();
    let u = GridFunction::from_real_fn(&g, f64::sin).unwrap();
    let once = apply_fourier_multiplier(&u, c).unwrap();
    let twice = apply_fourier_multiplier(&once, c).unwrap();
    assert!(l2_norm(&twice.sub(&u).unwrap()) < 1e-14);
    assert!(l2_norm(&differentiate(&u, 2).sub(&u).unwrap()) < 1e-14);
    let identity = apply_fourier_multiplier(&u, |_| c(1.0)).unwrap();
    assert!(l2_norm(&identity.sub(&u).unwrap()) < 1e-15);
}

#[test]
fn odd_derivative_of_real_data_stays_real() {
    let g = make_grid(64, -8.0f64, 8.0).unwrap();
    let u = GridFunction::from_real_fn(&g, |x| (-x * x / 2.0).exp() * (1.0 + x)).unwrap();
    // D = -i∂, so i D u = u' is real
    let du = differentiate(&u, 1).scaled(C64::new(0.0, 1.0));
    assert!(du.values().iter().all(|z| z.im.abs() < 1e-13));
    for (i, z) in du.values().iter().enumerate() {
        let x = g.x(i);
        let exact = (-x * x / 2.0).exp() * (1.0 - x - x * x);
        assert!((z.re - exact).abs() < 1e-10);
    }
}

#[test]
fn spatial_multipliers() {
    let g = make_grid(64, -8.0f64, 8.0).unwrap();
    let u = GridFunction::from_real_fn(&g, |x| (-x * x).exp()).unwrap();
    assert_eq!(apply_spatial_multiplier(&u, |_| c(1.0)).unwrap(), u);
    let w = apply_spatial_multiplier(&u, |x| c(bracket(x))).unwrap();
    let i0 = g.nearest_index(0.0);
    assert_eq!(w.values()[i0], u.values()[i0]);
    let (delta, s) = (0.7, 2.0);
    let up = apply_spatial_multiplier(&u, |x| c((delta * bracket(x).powf(1.0 / s)).exp())).unwrap();
    let back = apply_spatial_multiplier(&up, |x| c((-delta * bracket(x).powf(1.0 / s)).exp())).unwrap();
    assert!(l2_norm(&back.sub(&u).unwrap()) <= 1e-12 * l2_norm(&u));
}

#[test]
fn multiplier_overflow_reports_frequency() {
    let g = make_grid(64, -8.0f64, 8.0).unwrap();
    let u = GridFunction::from_real_fn(&g, |x| (-x * x).exp()).unwrap();
    let err = apply_fourier_multiplier(&u, |xi| c(if xi.abs() > 10.0 { f64::INFINITY } else { 1.0 })).unwrap_err();
    match err {
        Error::MultiplierOverflow { xi } => assert!(xi.abs() > 10.0),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn exponential_multiplier_against_packet_decay() {
    // e^{0.1⟨ξ⟩^{1/2}} e^{-ρ₀⟨ξ⟩^{1/2}} decays for ρ₀ = 2; for ρ₀ = 0.05 the product
    // grows, and at high n the multiplied spectrum leaves the resolved band
    let m = |xi: f64| c((0.1 * bracket(xi).sqrt()).exp());
    let g = make_grid(4096, -64.0f64, 64.0).unwrap();
    let ok = pevo::spaces::wave_packet(&g, 2.0, 2.0).unwrap();
    let v = apply_fourier_multiplier(&ok, m).unwrap();
    assert!(v.is_finite() && v.l2_norm() > ok.l2_norm());
    let g = make_grid(1 << 20, -64.0f64, 64.0).unwrap();
    let bad = pevo::spaces::wave_packet(&g, 0.05, 2.0).unwrap();
    let v = apply_fourier_multiplier(&bad, m).unwrap();
    let (tail, _) = forward_transform(&v).tail_ratio(0.1);
    assert!(tail > 1e-3, "{tail}");
    assert!(matches!(pevo::spaces::gevrey_norm(&bad, 0.0, 0.1, 2.0), Err(Error::WeightOverflow { .. })));
    let r = pevo::spaces::gevrey_norm(&ok, 0.0, 0.1, 2.0);
    assert!(r.is_ok(), "{r:?}");
}

#[test]
fn rejects_non_finite_samples() {
    let g = make_grid(8, 0.0f64, 1.0).unwrap();
    let mut v = vec![c(0.0); 8];
    v[3] = c(f64::NAN);
    assert_eq!(GridFunction::new(&g, v).unwrap_err(), Error::NonFinite { index: 3 });
    assert!(matches!(GridFunction::new(&g, vec![c(0.0); 4]), Err(Error::Length { .. })));
}

#[test]
fn single_precision_round_trip() {
    let g = make_grid(256, -20.0f32, 20.0).unwrap();
    let u = GridFunction::from_real_fn(&g, |x| (-x * x / 2.0).exp()).unwrap();
    let back = inverse_transform(&forward_transform(&u));
    assert!(l2_norm(&back.sub(&u).unwrap()) < 1e-5 * l2_norm(&u));
}

#[test]
fn grid_policy_domains() {
    assert_eq!(GridPolicy::<f64>::Auto.domain(64.0, 2), (-128.0, 512.0));
    assert_eq!(GridPolicy::<f64>::Auto.domain(64.0, 3), (-8192.0, 32768.0));
    assert_eq!(GridPolicy::<f64>::Compact.domain(8.0, 3), (128.0, 384.0));
    for (sk, p) in [(8.0f64, 2u32), (64.0, 2), (16.0, 3)] {
        let g = GridPolicy::Auto.resolve(sk, p).unwrap();
        assert!(g.xi_max() >= 2.0 * sk);
        let smaller = g.n() / 2;
        assert!(PI * smaller as f64 / g.length() < 2.0 * sk);
    }
    let fixed = GridPolicy::Fixed { n: 256, x_min: -16.0, x_max: 64.0 }.resolve(8.0, 2).unwrap();
    assert_eq!((fixed.n(), fixed.x_min(), fixed.x_max()), (256, -16.0, 64.0));
    assert!(matches!(GridPolicy::<f64>::Auto.resolve(4096.0, 3), Err(Error::GridSize(_))));
}

fn smooth(g: &Grid<f64>, a: [f64; 4]) -> GridFunction<f64> {
    GridFunction::from_fn(g, |x| {
        let e = (-(x - a[0]) * (x - a[0]) / (1.0 + a[1] * a[1])).exp();
        C64::new(e * (a[2] * x).cos(), e * a[3] * x.sin())
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_and_parseval(a in prop::array::uniform4(-3.0f64..3.0)) {
        let g = make_grid(512, -30.0f64, 30.0).unwrap();
        let u = smooth(&g, a);
        let spec = forward_transform(&u);
        let back = inverse_transform(&spec);
        prop_assert!(l2_norm(&back.sub(&u).unwrap()) <= 1e-12 * l2_norm(&u));
        prop_assert!((spec.l2_norm() - l2_norm(&u)).abs() <= 1e-10 * l2_norm(&u));
    }

    #[test]
    fn multipliers_compose_bin_by_bin(a in prop::array::uniform4(-3.0f64..3.0), r in 0.0f64..0.3) {
        let g = make_grid(256, -20.0f64, 20.0).unwrap();
        let u = smooth(&g, a);
        let m1 = |xi: f64| c(bracket(xi).powf(-1.5));
        let m2 = move |xi: f64| C64::from_polar((-r * bracket(xi)).exp(), xi);
        let both = apply_fourier_multiplier(&u, |xi| m1(xi) * m2(xi)).unwrap();
        let seq = apply_fourier_multiplier(&apply_fourier_multiplier(&u, m1).unwrap(), m2).unwrap();
        prop_assert!(l2_norm(&both.sub(&seq).unwrap()) <= 1e-14 * l2_norm(&both).max(1e-300));
    }

    #[test]
    fn multipliers_are_linear(a in prop::array::uniform4(-3.0f64..3.0), b in prop::array::uniform4(-3.0f64..3.0), al in -2.0f64..2.0, be in -2.0f64..2.0) {
        let g = make_grid(256, -20.0f64, 20.0).unwrap();
        let (u, v) = (smooth(&g, a), smooth(&g, b));
        let (alpha, beta) = (C64::new(al, 0.5), C64::new(0.0, be));
        let mix = u.combine(alpha, &v, beta).unwrap();
        let scale = l2_norm(&u) + l2_norm(&v);
        let fm = |w: &GridFunction<f64>| apply_fourier_multiplier(w, |xi| c(xi * xi + 1.0)).unwrap();
        let lhs = fm(&mix);
        let rhs = fm(&u).combine(alpha, &fm(&v), beta).unwrap();
        prop_assert!(l2_norm(&lhs.sub(&rhs).unwrap()) <= 1e-12 * scale * 400.0);
        let sm = |w: &GridFunction<f64>| apply_spatial_multiplier(w, |x| c(bracket(x))).unwrap();
        let lhs = sm(&mix);
        let rhs = sm(&u).combine(alpha, &sm(&v), beta).unwrap();
        prop_assert!(l2_norm(&lhs.sub(&rhs).unwrap()) <= 1e-12 * scale * 20.0);
    }
}
