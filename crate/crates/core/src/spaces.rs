//! Weighted Gelfand-Shilov and Gevrey-Sobolev norms, the canonical wave
//! packet, and empirical decay fitting.

use num_complex::Complex;

use crate::error::{invalid, Error, Result};
use crate::grid::{
    forward_transform, inverse_transform, l2_norm, Grid, GridFunction, Spectrum,
};
use crate::scalar::{bracket, c, Real};

/// Relative magnitude allowed in the outer band of a weighted function before
/// the weight is declared to overflow the available resolution.
pub const WEIGHT_TAIL_TOL: f64 = 1e-6;
/// Outer fraction of the frequency band (or of the domain) inspected by the
/// weight tail checks.
pub const WEIGHT_TAIL_BAND: f64 = 0.1;

/// `(m1, m2, rho1, rho2, s, theta)` of the weighted norm
/// `‖⟨x⟩^{m2} ⟨D⟩^{m1} e^{rho2 ⟨x⟩^{1/s}} e^{rho1 ⟨D⟩^{1/theta}} u‖`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GSParams<S> {
    pub m1: S,
    pub m2: S,
    pub rho1: S,
    pub rho2: S,
    pub s: S,
    pub theta: S,
}

impl<S: Real> GSParams<S> {
    pub fn new(m1: S, m2: S, rho1: S, rho2: S, s: S, theta: S) -> Result<Self> {
        let p = Self { m1, m2, rho1, rho2, s, theta };
        p.validate()?;
        Ok(p)
    }

    /// All weights off, `s` and `theta` set to 2.
    pub fn l2() -> Self {
        let two = S::lit(2.0);
        Self { m1: S::zero(), m2: S::zero(), rho1: S::zero(), rho2: S::zero(), s: two, theta: two }
    }

    pub fn gevrey(m: S, rho: S, theta: S) -> Result<Self> {
        Self::new(m, S::zero(), rho, S::zero(), S::lit(2.0), theta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s > S::one()) {
            return Err(invalid("s", format!("must exceed 1, got {}", self.s)));
        }
        if !(self.theta > S::one()) {
            return Err(invalid("theta", format!("must exceed 1, got {}", self.theta)));
        }
        if !(self.rho1 >= S::zero()) {
            return Err(invalid("rho1", format!("must be nonnegative, got {}", self.rho1)));
        }
        if !(self.rho2 >= S::zero()) {
            return Err(invalid("rho2", format!("must be nonnegative, got {}", self.rho2)));
        }
        if !(self.m1.is_finite() && self.m2.is_finite()) {
            return Err(invalid("m", "orders must be finite"));
        }
        Ok(())
    }
}

/// Outcome of [`decay_fit`]: `log|u(x)| ≈ log C - c |x - x_peak|^{1/s_fit}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayFit<S> {
    pub c: S,
    pub s_fit: S,
    pub log_c0: S,
    pub residual: S,
    pub samples: usize,
}

/// Multiplies `û` by `e^{rho ⟨ξ⟩^{1/theta}}` in place, enforcing the exponent
/// clamp and the spectral tail check.
fn fourier_exp_weight<S: Real>(spec: &mut Spectrum<S>, rho: S, theta: S) -> Result<()> {
    if rho == S::zero() {
        return Ok(());
    }
    let grid = spec.grid().clone();
    let clamp = S::exp_clamp();
    let before = spec.tail_ratio(S::lit(WEIGHT_TAIL_BAND)).0;
    for (z, &xi) in spec.values_mut().iter_mut().zip(grid.xi()) {
        let e = rho * bracket(xi).powf(S::one() / theta);
        if e > clamp {
            return Err(Error::WeightOverflow { weight: "rho1", at: xi.to_f64_lossy() });
        }
        *z = *z * e.exp();
    }
    let (after, at) = spec.tail_ratio(S::lit(WEIGHT_TAIL_BAND));
    if after > S::lit(WEIGHT_TAIL_TOL).max(before) {
        return Err(Error::WeightOverflow { weight: "rho1", at: at.to_f64_lossy() });
    }
    Ok(())
}

fn spatial_tail<S: Real>(u: &GridFunction<S>) -> (S, S) {
    let g = u.grid();
    let n = g.n();
    let band = ((n as f64) * WEIGHT_TAIL_BAND / 2.0).ceil() as usize;
    let peak = u.max_abs();
    let mut tail = S::zero();
    let mut at = g.x_min();
    for i in (0..band).chain(n - band..n) {
        let m = u.values()[i].norm();
        if m > tail {
            tail = m;
            at = g.x(i);
        }
    }
    if peak == S::zero() {
        (S::zero(), at)
    } else {
        (tail / peak, at)
    }
}

fn spatial_exp_weight<S: Real>(u: &mut GridFunction<S>, rho: S, s: S) -> Result<()> {
    if rho == S::zero() {
        return Ok(());
    }
    let grid = u.grid().clone();
    let clamp = S::exp_clamp();
    let before = spatial_tail(u).0;
    for (i, z) in u.values_mut().iter_mut().enumerate() {
        let x = grid.x(i);
        let e = rho * bracket(x).powf(S::one() / s);
        if e > clamp {
            return Err(Error::WeightOverflow { weight: "rho2", at: x.to_f64_lossy() });
        }
        *z = *z * e.exp();
    }
    let (after, at) = spatial_tail(u);
    if after > S::lit(WEIGHT_TAIL_TOL).max(before) {
        return Err(Error::WeightOverflow { weight: "rho2", at: at.to_f64_lossy() });
    }
    Ok(())
}

/// `ℱ^{-1}(e^{rho ⟨ξ⟩^{1/theta}} û)`, reporting overflow when the weighted
/// spectrum is not negligible at the edge of the frequency band.
pub fn apply_fourier_weight<S: Real>(
    u: &GridFunction<S>,
    rho: S,
    theta: S,
) -> Result<GridFunction<S>> {
    let mut spec = forward_transform(u);
    fourier_exp_weight(&mut spec, rho, theta)?;
    Ok(inverse_transform(&spec))
}

/// Weighted norm with the operators applied right to left:
/// `e^{rho1 ⟨D⟩^{1/θ}}`, then `e^{rho2 ⟨x⟩^{1/s}}`, then `⟨D⟩^{m1}`, then `⟨x⟩^{m2}`.
pub fn gs_norm<S: Real>(u: &GridFunction<S>, p: &GSParams<S>) -> Result<S> {
    p.validate()?;
    let mut spec = forward_transform(u);
    fourier_exp_weight(&mut spec, p.rho1, p.theta)?;
    let mut v = inverse_transform(&spec);
    spatial_exp_weight(&mut v, p.rho2, p.s)?;
    if p.m1 != S::zero() {
        let mut spec = forward_transform(&v);
        let grid = spec.grid().clone();
        for (z, &xi) in spec.values_mut().iter_mut().zip(grid.xi()) {
            *z = *z * bracket(xi).powf(p.m1);
        }
        v = inverse_transform(&spec);
    }
    if p.m2 != S::zero() {
        let grid = v.grid().clone();
        for (i, z) in v.values_mut().iter_mut().enumerate() {
            *z = *z * bracket(grid.x(i)).powf(p.m2);
        }
    }
    if !v.is_finite() {
        return Err(Error::WeightOverflow { weight: "m", at: f64::NAN });
    }
    Ok(l2_norm(&v))
}

/// `‖⟨D⟩^m e^{rho ⟨D⟩^{1/θ}} u‖`, evaluated on the frequency side.
pub fn gevrey_norm<S: Real>(u: &GridFunction<S>, m: S, rho: S, theta: S) -> Result<S> {
    GSParams::gevrey(m, rho, theta)?;
    let mut spec = forward_transform(u);
    fourier_exp_weight(&mut spec, rho, theta)?;
    let grid = spec.grid().clone();
    let mut sum = S::zero();
    for (z, &xi) in spec.values().iter().zip(grid.xi()) {
        let w = bracket(xi).powf(m);
        sum = sum + (*z * w).norm_sqr();
    }
    if !sum.is_finite() {
        return Err(Error::WeightOverflow { weight: "m", at: f64::NAN });
    }
    Ok((sum * grid.dxi() / (S::lit(2.0) * S::PI())).sqrt())
}

/// `ℱ^{-1}(e^{-rho0 ⟨ξ⟩^{1/theta}})`. The Nyquist bin is left empty so the
/// result is real for any domain placement.
pub fn wave_packet<S: Real>(grid: &Grid<S>, rho0: S, theta: S) -> Result<GridFunction<S>> {
    if !(rho0 > S::zero()) {
        return Err(invalid("rho0", format!("must be positive, got {rho0}")));
    }
    if !(theta > S::one()) {
        return Err(invalid("theta", format!("must exceed 1, got {theta}")));
    }
    let mut spec = Spectrum::from_fn(grid, |xi| c((-rho0 * bracket(xi).powf(S::one() / theta)).exp()))?;
    spec.zero_nyquist();
    Ok(inverse_transform(&spec))
}

/// `e^{-rho2 4^{1/s} σ_k^{(p-1)/s}} φ(x - 4σ_k^{p-1})`, with the translation
/// carried out as a frequency-side phase.
pub fn shifted_packet<S: Real>(
    phi: &GridFunction<S>,
    sigma_k: S,
    p: u32,
    rho2: S,
    s: S,
) -> Result<GridFunction<S>> {
    if !(sigma_k > S::zero()) {
        return Err(invalid("sigma_k", "must be positive"));
    }
    if !(s > S::one()) || !(rho2 >= S::zero()) {
        return Err(invalid("s", "need s > 1 and rho2 >= 0"));
    }
    if p < 2 {
        return Err(invalid("p", "order must be at least 2"));
    }
    let pm1 = S::from_usize_lossy(p as usize - 1);
    let shift = S::lit(4.0) * sigma_k.powf(pm1);
    let damp = (-rho2 * S::lit(4.0).powf(S::one() / s) * sigma_k.powf(pm1 / s)).exp();
    let mut spec = forward_transform(phi);
    let grid = spec.grid().clone();
    for (z, &xi) in spec.values_mut().iter_mut().zip(grid.xi()) {
        *z = *z * Complex::from_polar(damp, -shift * xi);
    }
    spec.zero_nyquist();
    let out = inverse_transform(&spec);
    let n = grid.n();
    let edge = out.values()[0].norm().max(out.values()[n - 1].norm());
    let peak = out.max_abs();
    if peak > S::zero() && edge > S::lit(1e-10) * peak {
        return Err(Error::BoundaryMass { relative: (edge / peak).to_f64_lossy() });
    }
    Ok(out)
}

/// Floor below which samples are ignored by [`decay_fit`], relative to the peak.
pub const DECAY_FLOOR: f64 = 1e-13;
const DECAY_BLOCKS: usize = 64;

/// Chebyshev (minimax) fit of `y ≈ a - c X`; returns `(c, a, residual)`.
fn minimax_line<S: Real>(xs: &[S], ys: &[S]) -> (S, S, S) {
    let spread = |c: S| {
        let mut lo = S::infinity();
        let mut hi = S::neg_infinity();
        for (&x, &y) in xs.iter().zip(ys) {
            let v = y + c * x;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    };
    let (xlo, xhi) = xs.iter().fold((S::infinity(), S::neg_infinity()), |(a, b), &x| (a.min(x), b.max(x)));
    let (ylo, yhi) = ys.iter().fold((S::infinity(), S::neg_infinity()), |(a, b), &y| (a.min(y), b.max(y)));
    let xr = (xhi - xlo).max(S::min_positive_value());
    let bound = S::lit(10.0) * (yhi - ylo + S::one()) / xr;
    let (mut a, mut b) = (-bound, bound);
    for _ in 0..200 {
        let m1 = a + (b - a) / S::lit(3.0);
        let m2 = b - (b - a) / S::lit(3.0);
        let f1 = { let (l, h) = spread(m1); h - l };
        let f2 = { let (l, h) = spread(m2); h - l };
        if f1 <= f2 {
            b = m2;
        } else {
            a = m1;
        }
    }
    let cfit = (a + b) / S::lit(2.0);
    let (lo, hi) = spread(cfit);
    (cfit, (lo + hi) / S::lit(2.0), (hi - lo) / S::lit(2.0))
}

/// Fits `log|u(x)| ≈ log C - c |x - x_peak|^{1/s}` over the outer quarter of
/// the usable samples for each candidate `s`, keeping the smallest minimax
/// residual. Oscillation zeros are removed by taking block maxima.
pub fn decay_fit<S: Real>(u: &GridFunction<S>, s_grid: &[S]) -> Result<DecayFit<S>> {
    if s_grid.is_empty() {
        return Err(invalid("s_grid", "needs at least one candidate"));
    }
    let grid = u.grid();
    let peak = u.max_abs();
    if peak == S::zero() {
        return Err(Error::DegenerateFit { usable: 0 });
    }
    let ipeak = u.values().iter().position(|z| z.norm() == peak).unwrap_or(0);
    let xpeak = grid.x(ipeak);
    let floor = S::lit(DECAY_FLOOR) * peak;
    let mut usable: Vec<(S, S)> = u
        .values()
        .iter()
        .enumerate()
        .filter(|(_, z)| z.norm() > floor)
        .map(|(i, z)| ((grid.x(i) - xpeak).abs(), z.norm()))
        .collect();
    usable.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let tail = &usable[usable.len() - usable.len() / 4..];
    if tail.len() < 8 || tail.iter().all(|(d, _)| *d == S::zero()) {
        return Err(Error::DegenerateFit { usable: tail.len() });
    }
    let blocks = DECAY_BLOCKS.min(tail.len());
    let per = tail.len() / blocks;
    let env: Vec<(S, S)> = tail
        .chunks(per.max(1))
        .map(|ch| {
            ch.iter()
                .copied()
                .fold((S::zero(), S::neg_infinity()), |b, v| if v.1 > b.1 { v } else { b })
        })
        .collect();
    if env.len() < 8 {
        return Err(Error::DegenerateFit { usable: env.len() });
    }
    let ys: Vec<S> = env.iter().map(|(_, m)| m.ln()).collect();
    let mut best: Option<DecayFit<S>> = None;
    for &s in s_grid {
        if !(s > S::zero()) {
            return Err(invalid("s_grid", "candidates must be positive"));
        }
        let xs: Vec<S> = env.iter().map(|(d, _)| d.powf(S::one() / s)).collect();
        let (cfit, a, res) = minimax_line(&xs, &ys);
        let fit = DecayFit { c: cfit, s_fit: s, log_c0: a, residual: res, samples: env.len() };
        if best.map_or(true, |b| res < b.residual) {
            best = Some(fit);
        }
    }
    Ok(best.expect("nonempty candidate list"))
}
