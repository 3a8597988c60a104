//! Spectral differentiation of functions given as closures.
//!
//! Two shapes are provided. [`PatchDiff`] differentiates at a single point
//! using a small periodic box whose width follows a caller supplied length
//! scale; the result carries relative (not absolute) roundoff, which matters
//! when derivatives are multiplied by large polynomial weights. [`LineDiff`]
//! returns derivative tables along a whole uniform line of sample points.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Smooth plateau: `≈ 1` on `|y| < a - 6b`, `≈ 0` on `|y| > a + 6b`.
pub fn erf_window<S: Real>(y: S, a: S, b: S) -> S {
    let (y, a, b) = (y.to_f64_lossy(), a.to_f64_lossy(), b.to_f64_lossy());
    S::lit(0.5 * (libm::erf((a - y) / b) + libm::erf((a + y) / b)))
}

fn pow_i<S: Real>(xi: S, k: usize) -> Complex<S> {
    // (i ξ)^k
    let mag = xi.powi(k as i32);
    match k % 4 {
        0 => Complex::new(mag, S::zero()),
        1 => Complex::new(S::zero(), mag),
        2 => Complex::new(-mag, S::zero()),
        _ => Complex::new(S::zero(), -mag),
    }
}

fn tail_fraction<S: Real>(spec: &[Complex<S>]) -> S {
    let n = spec.len();
    let cut = n / 2 - n / 20;
    let mut peak = S::zero();
    let mut tail = S::zero();
    for (k, z) in spec.iter().enumerate() {
        let m = z.norm();
        peak = peak.max(m);
        let idx = if k <= n / 2 { k } else { n - k };
        if idx >= cut {
            tail = tail.max(m);
        }
    }
    if peak == S::zero() {
        S::zero()
    } else {
        tail / peak
    }
}

/// Point derivatives on a windowed periodic patch.
#[derive(Clone)]
pub struct PatchDiff<S: Real> {
    n: usize,
    fft: Arc<dyn Fft<S>>,
    /// Relative spectral tail above which a patch counts as unresolved.
    pub tolerance: S,
}

impl<S: Real> PatchDiff<S> {
    pub fn new(n: usize) -> Self {
        assert!(n.is_power_of_two() && n >= 32);
        Self { n, fft: FftPlanner::new().plan_fft_forward(n), tolerance: S::lit(1e-9) }
    }

    /// `∂^β f(x0)` for `β = 0..=max_order`. The patch has half-width
    /// `scale`; `f` should be analytic within roughly `scale` of `x0`.
    pub fn derivatives(
        &self,
        f: impl Fn(S) -> Complex<S>,
        x0: S,
        scale: S,
        max_order: usize,
    ) -> Result<Vec<Complex<S>>> {
        let n = self.n;
        let half = scale;
        let b = half / S::lit(12.0);
        let a = S::lit(6.0) * b;
        let dy = S::lit(2.0) * half / S::from_usize_lossy(n);
        // y_j = (j - n/2) dy, so that y = 0 is sample n/2.
        let mut buf: Vec<Complex<S>> = (0..n)
            .map(|j| {
                let y = (S::from_usize_lossy(j) - S::from_usize_lossy(n / 2)) * dy;
                f(x0 + y) * erf_window(y, a, b)
            })
            .collect();
        if buf.iter().any(|z| !crate::scalar::is_finite_c(*z)) {
            return Err(Error::NonFinite { index: 0 });
        }
        self.fft.process(&mut buf);
        let tail = tail_fraction(&buf);
        if tail > self.tolerance {
            return Err(Error::Unresolved { tail: tail.to_f64_lossy() });
        }
        let len = S::lit(2.0) * half;
        let two_pi = S::lit(2.0) * S::PI();
        let inv_n = S::one() / S::from_usize_lossy(n);
        let mut out = Vec::with_capacity(max_order + 1);
        for k in 0..=max_order {
            let mut acc = Complex::new(S::zero(), S::zero());
            for (j, z) in buf.iter().enumerate() {
                if k > 0 && j == n / 2 {
                    continue;
                }
                let idx = crate::grid::wavenumber_index(j, n);
                // Shift back to y = 0 at sample n/2: phase e^{iξ (n/2) dy} = (-1)^idx.
                let sign = if idx.rem_euclid(2) == 0 { S::one() } else { -S::one() };
                let xi = S::lit(idx as f64) * two_pi / len;
                acc = acc + *z * pow_i(xi, k) * sign;
            }
            out.push(acc * inv_n);
        }
        Ok(out)
    }
}

/// Derivative tables along a uniform line of `m` points `a + i h`.
#[derive(Clone)]
pub struct LineDiff<S: Real> {
    m: usize,
    big: usize,
    forward: Arc<dyn Fft<S>>,
    inverse: Arc<dyn Fft<S>>,
    pub tolerance: S,
}

impl<S: Real> LineDiff<S> {
    /// `refine` is the oversampling factor of the working lattice relative to
    /// the output spacing.
    pub fn new(m: usize, refine: usize) -> Self {
        // Line of length W = m h is embedded in a lattice of length 2W.
        let big = (2 * m * refine).next_power_of_two().max(256);
        let mut planner = FftPlanner::new();
        Self {
            m,
            big,
            forward: planner.plan_fft_forward(big),
            inverse: planner.plan_fft_inverse(big),
            tolerance: S::lit(1e-9),
        }
    }

    /// `∂^k f` at `a + i h` for `k = 0..=max_order`, as `tables[k][i]`.
    pub fn tables(
        &self,
        f: impl Fn(S) -> Complex<S>,
        a: S,
        h: S,
        max_order: usize,
    ) -> Result<Vec<Vec<Complex<S>>>> {
        let m = S::from_usize_lossy(self.m);
        let width = m * h;
        let center = a + width / S::lit(2.0);
        let half_box = width / S::lit(2.0);
        let half = S::lit(2.0) * half_box;
        let b = half_box / S::lit(12.0);
        let aw = S::lit(1.5) * half_box;
        let nb = self.big;
        let dy = S::lit(2.0) * half / S::from_usize_lossy(nb);
        let y_of = |j: usize| -half + S::from_usize_lossy(j) * dy;
        let mut buf: Vec<Complex<S>> =
            (0..nb).map(|j| { let y = y_of(j); f(center + y) * erf_window(y, aw, b) }).collect();
        if let Some(index) = buf.iter().position(|z| !crate::scalar::is_finite_c(*z)) {
            return Err(Error::NonFinite { index });
        }
        self.forward.process(&mut buf);
        let tail = tail_fraction(&buf);
        if tail > self.tolerance {
            return Err(Error::Unresolved { tail: tail.to_f64_lossy() });
        }
        let len = S::lit(2.0) * half;
        let two_pi = S::lit(2.0) * S::PI();
        let inv_n = S::one() / S::from_usize_lossy(nb);
        let mut out = Vec::with_capacity(max_order + 1);
        for k in 0..=max_order {
            let mut work: Vec<Complex<S>> = buf
                .iter()
                .enumerate()
                .map(|(j, z)| {
                    if k > 0 && j == nb / 2 {
                        return Complex::new(S::zero(), S::zero());
                    }
                    let xi = S::lit(crate::grid::wavenumber_index(j, nb) as f64) * two_pi / len;
                    *z * pow_i(xi, k)
                })
                .collect();
            self.inverse.process(&mut work);
            let row = (0..self.m)
                .map(|i| {
                    let x = a + S::from_usize_lossy(i) * h;
                    let pos = ((x - center + half) / dy).round();
                    let j = pos.to_usize().unwrap_or(0).min(nb - 1);
                    work[j] * inv_n
                })
                .collect();
            out.push(row);
        }
        Ok(out)
    }

    /// Output points must coincide with lattice nodes, which holds when the
    /// lattice spacing divides `h`.
    pub fn aligned(&self) -> bool {
        // lattice spacing = 2W / big, output spacing = W / m
        self.big % (2 * self.m) == 0
    }
}
