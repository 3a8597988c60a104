//! Uniform periodic grid on a truncated real line together with a
//! continuum-calibrated discrete Fourier transform.
//!
//! The transform convention is `û(ξ) = ∫ e^{-ixξ} u(x) dx`, discretised with
//! `dx` weights, so that closed-form continuum transforms can be compared
//! directly with grid spectra. The inverse uses `dξ / 2π` weights. Frequencies
//! are stored in FFT order: `0, 1, …, n/2 - 1, -n/2, …, -1` (in units of
//! `2π / (x_max - x_min)`); the bin `n/2` is the Nyquist mode.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::scalar::{is_finite_c, Real};

/// Spatial grid with its paired frequency axis and cached FFT plans.
#[derive(Clone)]
pub struct Grid<S: Real> {
    n: usize,
    x_min: S,
    x_max: S,
    dx: S,
    xi: Arc<Vec<S>>,
    /// `e^{-i ξ_k x_min}` per bin.
    shift: Arc<Vec<Complex<S>>>,
    forward: Arc<dyn Fft<S>>,
    inverse: Arc<dyn Fft<S>>,
}

impl<S: Real> fmt::Debug for Grid<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("n", &self.n)
            .field("x_min", &self.x_min)
            .field("x_max", &self.x_max)
            .finish()
    }
}

impl<S: Real> PartialEq for Grid<S> {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.x_min == other.x_min && self.x_max == other.x_max
    }
}

/// Builds a grid of `n` points on `[x_min, x_max)`.
pub fn make_grid<S: Real>(n: usize, x_min: S, x_max: S) -> Result<Grid<S>> {
    Grid::new(n, x_min, x_max)
}

impl<S: Real> Grid<S> {
    pub fn new(n: usize, x_min: S, x_max: S) -> Result<Self> {
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::GridSize(n));
        }
        if !(x_min < x_max) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::Domain { x_min: x_min.to_f64_lossy(), x_max: x_max.to_f64_lossy() });
        }
        let len = x_max - x_min;
        let dx = len / S::from_usize_lossy(n);
        let two_pi = S::lit(2.0) * S::PI();
        let xi: Vec<S> = (0..n)
            .map(|k| S::lit(wavenumber_index(k, n) as f64) * two_pi / len)
            .collect();
        // Phase computed in f64 with the integer part of k x_min / L removed.
        let ratio = x_min.to_f64_lossy() / len.to_f64_lossy();
        let shift = (0..n)
            .map(|k| {
                let turns = (wavenumber_index(k, n) as f64 * ratio).rem_euclid(1.0);
                let ang = -2.0 * std::f64::consts::PI * turns;
                Complex::new(S::lit(ang.cos()), S::lit(ang.sin()))
            })
            .collect();
        let mut planner = FftPlanner::new();
        Ok(Self {
            n,
            x_min,
            x_max,
            dx,
            xi: Arc::new(xi),
            shift: Arc::new(shift),
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn x_min(&self) -> S {
        self.x_min
    }

    pub fn x_max(&self) -> S {
        self.x_max
    }

    pub fn dx(&self) -> S {
        self.dx
    }

    pub fn length(&self) -> S {
        self.x_max - self.x_min
    }

    /// Spacing of the frequency axis, `2π / L`.
    pub fn dxi(&self) -> S {
        S::lit(2.0) * S::PI() / self.length()
    }

    /// Frequency axis in FFT order.
    pub fn xi(&self) -> &[S] {
        &self.xi
    }

    /// Magnitude of the Nyquist wavenumber, `π n / L`.
    pub fn xi_max(&self) -> S {
        S::PI() / self.dx
    }

    pub fn nyquist_index(&self) -> usize {
        self.n / 2
    }

    pub fn x(&self, i: usize) -> S {
        self.x_min + S::from_usize_lossy(i) * self.dx
    }

    pub fn points(&self) -> Vec<S> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    /// Index of the grid point closest to `x` (clamped to the grid).
    pub fn nearest_index(&self, x: S) -> usize {
        let r = ((x - self.x_min) / self.dx).round();
        r.max(S::zero()).min(S::from_usize_lossy(self.n - 1)).to_usize().unwrap_or(0)
    }

    fn fft_forward(&self, buf: &mut [Complex<S>]) {
        self.forward.process(buf);
    }

    fn fft_inverse(&self, buf: &mut [Complex<S>]) {
        self.inverse.process(buf);
    }
}

/// Signed wavenumber index of FFT bin `k`.
pub fn wavenumber_index(k: usize, n: usize) -> i64 {
    if k < n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// Complex samples of a function on a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction<S: Real> {
    grid: Grid<S>,
    values: Vec<Complex<S>>,
}

/// Frequency samples `û(ξ_k)` in FFT order, continuum-calibrated.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum<S: Real> {
    grid: Grid<S>,
    values: Vec<Complex<S>>,
}

fn check_samples<S: Real>(n: usize, values: &[Complex<S>]) -> Result<()> {
    if values.len() != n {
        return Err(Error::Length { expected: n, got: values.len() });
    }
    if let Some(index) = values.iter().position(|z| !is_finite_c(*z)) {
        return Err(Error::NonFinite { index });
    }
    Ok(())
}

impl<S: Real> GridFunction<S> {
    pub fn new(grid: &Grid<S>, values: Vec<Complex<S>>) -> Result<Self> {
        check_samples(grid.n, &values)?;
        Ok(Self { grid: grid.clone(), values })
    }

    pub(crate) fn from_raw(grid: &Grid<S>, values: Vec<Complex<S>>) -> Self {
        debug_assert_eq!(values.len(), grid.n);
        Self { grid: grid.clone(), values }
    }

    pub fn zeros(grid: &Grid<S>) -> Self {
        Self::from_raw(grid, vec![Complex::new(S::zero(), S::zero()); grid.n])
    }

    pub fn from_fn(grid: &Grid<S>, f: impl Fn(S) -> Complex<S>) -> Result<Self> {
        Self::new(grid, (0..grid.n).map(|i| f(grid.x(i))).collect())
    }

    pub fn from_real_fn(grid: &Grid<S>, f: impl Fn(S) -> S) -> Result<Self> {
        Self::from_fn(grid, |x| Complex::new(f(x), S::zero()))
    }

    pub fn grid(&self) -> &Grid<S> {
        &self.grid
    }

    pub fn values(&self) -> &[Complex<S>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex<S>] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex<S>> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|z| is_finite_c(*z))
    }

    pub fn max_abs(&self) -> S {
        self.values.iter().fold(S::zero(), |m, z| m.max(z.norm()))
    }

    pub fn scaled(&self, alpha: Complex<S>) -> Self {
        Self::from_raw(&self.grid, self.values.iter().map(|z| *z * alpha).collect())
    }

    /// `alpha * self + beta * other`.
    pub fn combine(&self, alpha: Complex<S>, other: &Self, beta: Complex<S>) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(Self::from_raw(
            &self.grid,
            self.values.iter().zip(&other.values).map(|(a, b)| *a * alpha + *b * beta).collect(),
        ))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        let one = Complex::new(S::one(), S::zero());
        self.combine(one, other, -one)
    }

    /// `(u, v)_{L²} = Σ u conj(v) dx`.
    pub fn inner(&self, other: &Self) -> Result<Complex<S>> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let s = self
            .values
            .iter()
            .zip(&other.values)
            .fold(Complex::new(S::zero(), S::zero()), |acc, (a, b)| acc + *a * b.conj());
        Ok(s * self.grid.dx)
    }

    pub fn l2_norm(&self) -> S {
        l2_norm(self)
    }
}

impl<S: Real> Spectrum<S> {
    pub fn new(grid: &Grid<S>, values: Vec<Complex<S>>) -> Result<Self> {
        check_samples(grid.n, &values)?;
        Ok(Self { grid: grid.clone(), values })
    }

    pub(crate) fn from_raw(grid: &Grid<S>, values: Vec<Complex<S>>) -> Self {
        debug_assert_eq!(values.len(), grid.n);
        Self { grid: grid.clone(), values }
    }

    /// Samples a frequency profile on the grid's axis.
    pub fn from_fn(grid: &Grid<S>, f: impl Fn(S) -> Complex<S>) -> Result<Self> {
        Self::new(grid, grid.xi.iter().map(|&xi| f(xi)).collect())
    }

    pub fn grid(&self) -> &Grid<S> {
        &self.grid
    }

    pub fn values(&self) -> &[Complex<S>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex<S>] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex<S>> {
        self.values
    }

    /// `( (2π)^{-1} Σ |û|² dξ )^{1/2}`, equal to the spatial L² norm by Parseval.
    pub fn l2_norm(&self) -> S {
        let sum = self.values.iter().fold(S::zero(), |acc, z| acc + z.norm_sqr());
        (sum * self.grid.dxi() / (S::lit(2.0) * S::PI())).sqrt()
    }

    pub fn zero_nyquist(&mut self) {
        let k = self.grid.nyquist_index();
        self.values[k] = Complex::new(S::zero(), S::zero());
    }

    /// Largest magnitude over the outer `frac` of the frequency band relative
    /// to the global peak, together with the frequency where it occurs.
    pub fn tail_ratio(&self, frac: S) -> (S, S) {
        tail_ratio(&self.grid, &self.values, frac)
    }
}

pub(crate) fn tail_ratio<S: Real>(grid: &Grid<S>, values: &[Complex<S>], frac: S) -> (S, S) {
    let cut = (S::one() - frac) * grid.xi_max();
    let mut peak = S::zero();
    let mut tail = S::zero();
    let mut at = S::zero();
    for (xi, z) in grid.xi.iter().zip(values) {
        let m = z.norm();
        peak = peak.max(m);
        if xi.abs() >= cut && m > tail {
            tail = m;
            at = *xi;
        }
    }
    if peak == S::zero() {
        (S::zero(), at)
    } else {
        (tail / peak, at)
    }
}

/// Continuum-calibrated forward transform.
pub fn forward_transform<S: Real>(u: &GridFunction<S>) -> Spectrum<S> {
    let g = &u.grid;
    let mut buf = u.values.clone();
    g.fft_forward(&mut buf);
    for (z, sh) in buf.iter_mut().zip(g.shift.iter()) {
        *z = *z * *sh * g.dx;
    }
    Spectrum::from_raw(g, buf)
}

/// Exact inverse of [`forward_transform`].
pub fn inverse_transform<S: Real>(u_hat: &Spectrum<S>) -> GridFunction<S> {
    let g = &u_hat.grid;
    let mut buf: Vec<Complex<S>> =
        u_hat.values.iter().zip(g.shift.iter()).map(|(z, sh)| *z * sh.conj()).collect();
    g.fft_inverse(&mut buf);
    let scale = S::one() / g.length();
    for z in buf.iter_mut() {
        *z = *z * scale;
    }
    GridFunction::from_raw(g, buf)
}

/// `ℱ^{-1}(m(ξ) û)`. Fails if `m` or the weighted spectrum is not finite.
pub fn apply_fourier_multiplier<S: Real>(
    u: &GridFunction<S>,
    m: impl Fn(S) -> Complex<S>,
) -> Result<GridFunction<S>> {
    let mut spec = forward_transform(u);
    multiply_spectrum(&mut spec, m)?;
    Ok(inverse_transform(&spec))
}

pub(crate) fn multiply_spectrum<S: Real>(
    spec: &mut Spectrum<S>,
    m: impl Fn(S) -> Complex<S>,
) -> Result<()> {
    let grid = spec.grid.clone();
    for (z, &xi) in spec.values.iter_mut().zip(grid.xi.iter()) {
        let w = m(xi);
        let prod = *z * w;
        if !is_finite_c(w) || !is_finite_c(prod) {
            return Err(Error::MultiplierOverflow { xi: xi.to_f64_lossy() });
        }
        *z = prod;
    }
    Ok(())
}

/// `D^k u` with `D = -i ∂_x`. The Nyquist bin is dropped for odd `k`.
pub fn differentiate<S: Real>(u: &GridFunction<S>, k: u32) -> GridFunction<S> {
    if k == 0 {
        return u.clone();
    }
    let mut spec = forward_transform(u);
    for (z, &xi) in spec.values.iter_mut().zip(u.grid.xi.iter()) {
        *z = *z * xi.powi(k as i32);
    }
    if k % 2 == 1 {
        spec.zero_nyquist();
    }
    inverse_transform(&spec)
}

/// Pointwise product `a(x) u(x)`.
pub fn apply_spatial_multiplier<S: Real>(
    u: &GridFunction<S>,
    a: impl Fn(S) -> Complex<S>,
) -> Result<GridFunction<S>> {
    let g = &u.grid;
    let mut out = Vec::with_capacity(g.n);
    for (i, z) in u.values.iter().enumerate() {
        let w = a(g.x(i));
        let prod = *z * w;
        if !is_finite_c(w) || !is_finite_c(prod) {
            return Err(Error::NonFinite { index: i });
        }
        out.push(prod);
    }
    Ok(GridFunction::from_raw(g, out))
}

/// `(Σ |u_i|² dx)^{1/2}`.
pub fn l2_norm<S: Real>(u: &GridFunction<S>) -> S {
    let sum = u.values.iter().fold(S::zero(), |acc, z| acc + z.norm_sqr());
    (sum * u.grid.dx).sqrt()
}

/// Largest grid produced by [`GridPolicy`].
pub const MAX_POLICY_N: usize = 1 << 22;

/// How a wave-packet experiment at frequency `σ_k` picks its grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GridPolicy<S> {
    /// `[-2σ_k^{p-1}, 8σ_k^{p-1}]`, smallest power of two with `ξ_max ≥ 2σ_k`.
    Auto,
    /// `[2σ_k^{p-1}, 6σ_k^{p-1}]`, same resolution rule.
    Compact,
    Fixed { n: usize, x_min: S, x_max: S },
}

impl<S: Real> GridPolicy<S> {
    /// Domain chosen for `(σ_k, p)`.
    pub fn domain(&self, sigma_k: S, p: u32) -> (S, S) {
        let scale = sigma_k.powi(p as i32 - 1);
        match *self {
            Self::Auto => (S::lit(-2.0) * scale, S::lit(8.0) * scale),
            Self::Compact => (S::lit(2.0) * scale, S::lit(6.0) * scale),
            Self::Fixed { x_min, x_max, .. } => (x_min, x_max),
        }
    }

    pub fn resolve(&self, sigma_k: S, p: u32) -> Result<Grid<S>> {
        let (x_min, x_max) = self.domain(sigma_k, p);
        if let Self::Fixed { n, .. } = *self {
            return Grid::new(n, x_min, x_max);
        }
        let len = x_max - x_min;
        let mut n = 8usize;
        // ξ_max = π n / L
        while S::PI() * S::from_usize_lossy(n) / len < S::lit(2.0) * sigma_k {
            n *= 2;
            if n > MAX_POLICY_N {
                return Err(Error::GridSize(n));
            }
        }
        Grid::new(n, x_min, x_max)
    }
}
