//! Symbols on `ℝ_x × ℝ_ξ`, their seminorms, Kohn-Nirenberg quantization on a
//! grid, composition by the asymptotic expansion, and operator-side probes.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::diff::{erf_window, PatchDiff};
use crate::error::{invalid, Error, Result};
use crate::grid::{forward_transform, Grid, GridFunction};
use crate::illposedness::{BumpFunction, CutoffSymbol};
use crate::scalar::{bracket, factorial, is_finite_c, Real};

/// Largest grid accepted by the dense quantizer.
pub const MAX_DENSE_N: usize = 4096;
/// Largest derivative order in seminorms and expansions.
pub const MAX_SYMBOL_ORDER: usize = 6;
/// Slack `K` between the measured operator norm and the seminorm bound.
pub const PROBE_SLACK: f64 = 50.0;
/// Tail tolerance for symbol derivatives along the quantization lattice.
const AXIS_TOLERANCE: f64 = 1e-9;

type EvalFn<S> = Arc<dyn Fn(S, S) -> Complex<S> + Send + Sync>;
/// `(a, b, x, ξ) ↦ ∂_ξ^a ∂_x^b p(x, ξ)`.
type DerivFn<S> = Arc<dyn Fn(usize, usize, S, S) -> Complex<S> + Send + Sync>;
/// `(k, t) ↦ f^{(k)}(t)`.
type FactorFn<S> = Arc<dyn Fn(usize, S) -> Complex<S> + Send + Sync>;

#[derive(Clone)]
enum Shape<S> {
    General,
    /// `X(x) Ξ(ξ)` with derivative access per factor.
    Separable { x: FactorFn<S>, xi: FactorFn<S> },
}

/// A symbol `p(x, ξ)` with its `S^m_{0,0}` order and optional SG orders.
#[derive(Clone)]
pub struct Symbol<S: Real> {
    pub label: String,
    eval: EvalFn<S>,
    exact: Option<DerivFn<S>>,
    shape: Shape<S>,
    pub order_m: S,
    pub sg_orders: Option<(S, S)>,
    /// Length scales `(x, ξ)` over which the symbol varies; used to size
    /// numerical differentiation patches.
    pub scales: (S, S),
    x_independent: bool,
    xi_independent: bool,
}

impl<S: Real> fmt::Debug for Symbol<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Symbol")
            .field("label", &self.label)
            .field("order_m", &self.order_m)
            .field("sg_orders", &self.sg_orders)
            .finish()
    }
}

fn zero<S: Real>() -> Complex<S> {
    Complex::new(S::zero(), S::zero())
}

/// `d^k/dt^k t^e` for a nonnegative integer exponent.
fn monomial_derivative<S: Real>(e: u32, k: usize, t: S) -> S {
    if k > e as usize {
        return S::zero();
    }
    let mut coef = S::one();
    for j in 0..k {
        coef = coef * S::from_usize_lossy(e as usize - j);
    }
    coef * t.powi(e as i32 - k as i32)
}

impl<S: Real> Symbol<S> {
    pub fn new(
        label: impl Into<String>,
        order_m: S,
        f: impl Fn(S, S) -> Complex<S> + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            eval: Arc::new(f),
            exact: None,
            shape: Shape::General,
            order_m,
            sg_orders: None,
            scales: (S::one(), S::one()),
            x_independent: false,
            xi_independent: false,
        }
    }

    /// Attaches closed-form derivatives `∂_ξ^a ∂_x^b p`.
    pub fn with_derivatives(
        mut self,
        d: impl Fn(usize, usize, S, S) -> Complex<S> + Send + Sync + 'static,
    ) -> Self {
        self.exact = Some(Arc::new(d));
        self
    }

    pub fn with_sg_orders(mut self, m1: S, m2: S) -> Self {
        self.sg_orders = Some((m1, m2));
        self
    }

    pub fn with_scales(mut self, x: S, xi: S) -> Self {
        self.scales = (x, xi);
        self
    }

    pub fn constant(c: Complex<S>) -> Self {
        let mut s = Self::new(format!("{c}"), S::zero(), move |_, _| c)
            .with_derivatives(move |a, b, _, _| if a == 0 && b == 0 { c } else { zero() });
        s.x_independent = true;
        s.xi_independent = true;
        s
    }

    /// `ξ^k`, of order `k`.
    pub fn xi_power(k: u32) -> Self {
        let mut s = Self::new(format!("xi^{k}"), S::from_usize_lossy(k as usize), move |_, xi: S| {
            Complex::new(xi.powi(k as i32), S::zero())
        })
        .with_derivatives(move |a, b, _, xi| {
            if b > 0 {
                zero()
            } else {
                Complex::new(monomial_derivative(k, a, xi), S::zero())
            }
        });
        s.x_independent = true;
        s
    }

    /// `x^k`, which is of order 0 in `ξ`.
    pub fn x_power(k: u32) -> Self {
        let mut s = Self::new(format!("x^{k}"), S::zero(), move |x: S, _| {
            Complex::new(x.powi(k as i32), S::zero())
        })
        .with_derivatives(move |a, b, x, _| {
            if a > 0 {
                zero()
            } else {
                Complex::new(monomial_derivative(k, b, x), S::zero())
            }
        });
        s.xi_independent = true;
        s
    }

    /// Fourier multiplier `m(ξ)`.
    pub fn multiplier(
        label: impl Into<String>,
        order_m: S,
        m: impl Fn(S) -> Complex<S> + Send + Sync + 'static,
    ) -> Self {
        let mut s = Self::new(label, order_m, move |_, xi| m(xi));
        s.x_independent = true;
        s
    }

    /// Multiplication by `a(x)`.
    pub fn spatial(label: impl Into<String>, a: impl Fn(S) -> Complex<S> + Send + Sync + 'static) -> Self {
        let mut s = Self::new(label, S::zero(), move |x, _| a(x));
        s.xi_independent = true;
        s
    }

    /// `X(x) Ξ(ξ)` from factors with derivative access `(k, t) ↦ f^{(k)}(t)`.
    pub fn separable(
        label: impl Into<String>,
        order_m: S,
        x: impl Fn(usize, S) -> Complex<S> + Send + Sync + 'static,
        xi: impl Fn(usize, S) -> Complex<S> + Send + Sync + 'static,
    ) -> Self {
        let x: FactorFn<S> = Arc::new(x);
        let xi: FactorFn<S> = Arc::new(xi);
        let (xe, xie) = (x.clone(), xi.clone());
        let mut s = Self::new(label, order_m, move |a, b| xe(0, a) * xie(0, b));
        s.shape = Shape::Separable { x, xi };
        s
    }

    /// `w_k^{(αβ)}` as a separable symbol. Derivatives come from the bump's
    /// derivative jets, so the cutoff's Gevrey transitions are resolved
    /// without a lattice.
    pub fn from_cutoff(sym: &CutoffSymbol<S>) -> Self {
        let (xc, xs, sk, ks) = (sym.x_center(), sym.x_scale(), sym.sigma_k, sym.xi_scale());
        let (al, be) = (sym.alpha, sym.beta);
        let bx: BumpFunction<S> = sym.bump.clone();
        let bxi = bx.clone();
        let cap = bx.n_max;
        let factor = move |bump: &BumpFunction<S>, base: usize, k: usize, y: S, scale: S| -> Complex<S> {
            if base + k > cap {
                return Complex::new(S::nan(), S::zero());
            }
            let d = bump.derivatives(y, base + k).expect("order checked");
            Complex::new(d[base + k] / scale.powi(k as i32), S::zero())
        };
        let f2 = factor;
        Self::separable(
            format!("w_k^({al},{be})"),
            S::zero(),
            move |k, x| factor(&bx, al, k, (x - xc) / xs, xs),
            move |k, xi| f2(&bxi, be, k, (xi - sk) / ks, ks),
        )
        .with_scales(xs, ks)
    }

    pub fn eval(&self, x: S, xi: S) -> Complex<S> {
        (self.eval)(x, xi)
    }

    pub fn is_x_independent(&self) -> bool {
        self.x_independent
    }

    pub fn is_xi_independent(&self) -> bool {
        self.xi_independent
    }

    /// `∂_ξ^a ∂_x^b p(x, ξ)` at one point: closed form when available,
    /// otherwise spectral differentiation on a patch sized by [`Symbol::scales`].
    pub fn derivative(&self, a: usize, b: usize, x: S, xi: S) -> Result<Complex<S>> {
        if a > MAX_SYMBOL_ORDER || b > MAX_SYMBOL_ORDER {
            return Err(Error::DerivativeCap { order: a.max(b), cap: MAX_SYMBOL_ORDER });
        }
        if let Some(d) = &self.exact {
            return Ok(d(a, b, x, xi));
        }
        if let Shape::Separable { x: fx, xi: fxi } = &self.shape {
            return Ok(fx(b, x) * fxi(a, xi));
        }
        if a == 0 && b == 0 {
            return Ok(self.eval(x, xi));
        }
        if self.x_independent && b > 0 || self.xi_independent && a > 0 {
            return Ok(zero());
        }
        let patch = PatchDiff::new(64);
        if b == 0 {
            let d = patch.derivatives(|t| self.eval(x, t), xi, self.scales.1, a)?;
            return Ok(d[a]);
        }
        if a == 0 {
            let d = patch.derivatives(|t| self.eval(t, xi), x, self.scales.0, b)?;
            return Ok(d[b]);
        }
        // mixed: differentiate the x-derivative along ξ
        let inner = |t: S| -> Complex<S> {
            patch
                .derivatives(|s| self.eval(s, t), x, self.scales.0, b)
                .map(|d| d[b])
                .unwrap_or(Complex::new(S::nan(), S::zero()))
        };
        let d = patch.derivatives(inner, xi, self.scales.1, a)?;
        Ok(d[a])
    }
}

/// Uniform padded line used for spectral differentiation of sampled data.
struct PaddedLine<S: Real> {
    m: usize,
    big: usize,
    a: S,
    h: S,
    center: S,
    half: S,
    dy: S,
    forward: Arc<dyn Fft<S>>,
    inverse: Arc<dyn Fft<S>>,
}

impl<S: Real> PaddedLine<S> {
    /// Output points `a + i h`, `i < m` (`m` a power of two); the working
    /// lattice covers twice the output width with `refine` times finer spacing.
    fn new(a: S, h: S, m: usize, refine: usize) -> Result<Self> {
        if !m.is_power_of_two() || m < 8 {
            return Err(invalid("points", "sample count must be a power of two, at least 8"));
        }
        if !(h > S::zero()) {
            return Err(invalid("box", "box must have positive width"));
        }
        let big = (2 * m * refine).next_power_of_two().max(256);
        let width = S::from_usize_lossy(m) * h;
        let half = width;
        let mut planner = FftPlanner::new();
        Ok(Self {
            m,
            big,
            a,
            h,
            center: a + width / S::lit(2.0),
            half,
            dy: S::lit(2.0) * half / S::from_usize_lossy(big),
            forward: planner.plan_fft_forward(big),
            inverse: planner.plan_fft_inverse(big),
        })
    }

    fn node(&self, j: usize) -> S {
        self.center - self.half + S::from_usize_lossy(j) * self.dy
    }

    fn window(&self, j: usize) -> S {
        let y = self.node(j) - self.center;
        let half_box = self.half / S::lit(2.0);
        erf_window(y, S::lit(1.5) * half_box, half_box / S::lit(12.0))
    }

    fn output_index(&self, i: usize) -> usize {
        (i + self.m / 2) * (self.big / (2 * self.m))
    }

    fn outputs(&self) -> Vec<S> {
        (0..self.m).map(|i| self.a + S::from_usize_lossy(i) * self.h).collect()
    }

    /// Derivatives `0..=order` at the output points from raw lattice samples,
    /// with the spectral `(peak, tail)` magnitudes of the windowed data.
    fn differentiate(&self, mut buf: Vec<Complex<S>>, order: usize) -> Result<Lines<S>> {
        for (j, z) in buf.iter_mut().enumerate() {
            *z = *z * self.window(j);
        }
        if let Some(index) = buf.iter().position(|z| !is_finite_c(*z)) {
            return Err(Error::NonFinite { index });
        }
        self.forward.process(&mut buf);
        let nb = self.big;
        let peak = buf.iter().fold(S::zero(), |m, z| m.max(z.norm()));
        let cut = nb / 2 - nb / 20;
        let tail = buf
            .iter()
            .enumerate()
            .filter(|(k, _)| (*k).min(nb - *k) >= cut)
            .fold(S::zero(), |m, (_, z)| m.max(z.norm()));
        // roundoff-level coefficients would be amplified by (iw)^k
        let floor = peak * S::epsilon() * S::lit(64.0);
        for z in buf.iter_mut() {
            if z.norm() <= floor {
                *z = zero();
            }
        }
        let len = S::lit(2.0) * self.half;
        let two_pi = S::lit(2.0) * S::PI();
        let inv_n = S::one() / S::from_usize_lossy(nb);
        let mut values = Vec::with_capacity(order + 1);
        for k in 0..=order {
            let mut work: Vec<Complex<S>> = buf
                .iter()
                .enumerate()
                .map(|(j, z)| {
                    if k > 0 && j == nb / 2 {
                        return zero();
                    }
                    let w = S::lit(crate::grid::wavenumber_index(j, nb) as f64) * two_pi / len;
                    *z * i_pow(w, k)
                })
                .collect();
            self.inverse.process(&mut work);
            values.push((0..self.m).map(|i| work[self.output_index(i)] * inv_n).collect());
        }
        Ok(Lines { values, peak, tail })
    }
}

struct Lines<S> {
    values: Vec<Vec<Complex<S>>>,
    peak: S,
    tail: S,
}

/// Fails when the largest spectral tail over a batch of lines exceeds `tol`
/// times the largest peak.
fn check_tails<S: Real>(lines: &[Lines<S>], tol: S) -> Result<()> {
    let peak = lines.iter().fold(S::zero(), |m, l| m.max(l.peak));
    let tail = lines.iter().fold(S::zero(), |m, l| m.max(l.tail));
    if peak > S::zero() && tail > tol * peak {
        return Err(Error::Unresolved { tail: (tail / peak).to_f64_lossy() });
    }
    Ok(())
}

fn i_pow<S: Real>(w: S, k: usize) -> Complex<S> {
    let mag = w.powi(k as i32);
    match k % 4 {
        0 => Complex::new(mag, S::zero()),
        1 => Complex::new(S::zero(), mag),
        2 => Complex::new(-mag, S::zero()),
        _ => Complex::new(S::zero(), -mag),
    }
}

/// Rectangular sampling region `[x0, x1) × [ξ0, ξ1)` with `points` samples
/// per axis (a power of two).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymbolBox<S> {
    pub x: (S, S),
    pub xi: (S, S),
    pub points: usize,
    /// Oversampling of the working lattice.
    pub refine: usize,
    /// Relative spectral tail above which the lattice counts as unresolved.
    pub tolerance: S,
}

impl<S: Real> SymbolBox<S> {
    pub fn new(x: (S, S), xi: (S, S)) -> Self {
        Self { x, xi, points: 64, refine: 4, tolerance: S::lit(1e-9) }
    }

    pub fn with_points(mut self, points: usize) -> Self {
        self.points = points;
        self
    }

    pub fn with_refine(mut self, refine: usize) -> Self {
        self.refine = refine;
        self
    }

    fn lines(&self) -> Result<(PaddedLine<S>, PaddedLine<S>)> {
        let m = S::from_usize_lossy(self.points);
        let hx = (self.x.1 - self.x.0) / m;
        let hxi = (self.xi.1 - self.xi.0) / m;
        Ok((
            PaddedLine::new(self.x.0, hx, self.points, self.refine)?,
            PaddedLine::new(self.xi.0, hxi, self.points, self.refine)?,
        ))
    }
}

/// `∂_ξ^a ∂_x^b p` for `a, b ≤ ell` on the output points of a [`SymbolBox`].
#[derive(Clone, Debug)]
pub struct DerivativeTable<S: Real> {
    pub ell: usize,
    pub x: Vec<S>,
    pub xi: Vec<S>,
    /// `data[a][b][i * x.len() + j]` at `(x[j], xi[i])`.
    data: Vec<Vec<Vec<Complex<S>>>>,
}

impl<S: Real> DerivativeTable<S> {
    pub fn get(&self, a: usize, b: usize) -> &[Complex<S>] {
        &self.data[a][b]
    }

    /// `sup |∂_ξ^a ∂_x^b p| ⟨ξ⟩^{-m}` over the box.
    pub fn weighted_sup(&self, a: usize, b: usize, m: S) -> S {
        let nx = self.x.len();
        self.data[a][b]
            .iter()
            .enumerate()
            .fold(S::zero(), |acc, (k, z)| acc.max(z.norm() * bracket(self.xi[k / nx]).powf(-m)))
    }

    /// `|p|^{(m)}_ℓ = max_{a, b ≤ ℓ} sup |∂_ξ^a ∂_x^b p| ⟨ξ⟩^{-m}` for `ℓ ≤ self.ell`.
    pub fn seminorm(&self, ell: usize, m: S) -> S {
        let mut best = S::zero();
        for a in 0..=ell.min(self.ell) {
            for b in 0..=ell.min(self.ell) {
                best = best.max(self.weighted_sup(a, b, m));
            }
        }
        best
    }
}

/// Derivative tables on the box. Closed-form and separable symbols are
/// differentiated directly; general symbols by spectral differentiation in
/// each variable on a padded lattice.
pub fn derivative_table<S: Real>(p: &Symbol<S>, region: &SymbolBox<S>, ell: usize) -> Result<DerivativeTable<S>> {
    if ell > MAX_SYMBOL_ORDER {
        return Err(Error::DerivativeCap { order: ell, cap: MAX_SYMBOL_ORDER });
    }
    let (lx, lxi) = region.lines()?;
    let xs = lx.outputs();
    let xis = lxi.outputs();
    let (nx, nxi) = (xs.len(), xis.len());
    let mut data = vec![vec![vec![zero(); nx * nxi]; ell + 1]; ell + 1];
    let direct = p.exact.is_some() || matches!(p.shape, Shape::Separable { .. });
    if direct {
        for (a, row) in data.iter_mut().enumerate() {
            for (b, cell) in row.iter_mut().enumerate() {
                for (i, &xi) in xis.iter().enumerate() {
                    for (j, &x) in xs.iter().enumerate() {
                        cell[i * nx + j] = p.derivative(a, b, x, xi)?;
                    }
                }
            }
        }
    } else {
        let tol = region.tolerance;
        // stage 1: x-derivatives along every ξ node of the lattice
        let stage1: Vec<Lines<S>> = (0..lxi.big)
            .into_par_iter()
            .map(|r| {
                let xi = lxi.node(r);
                let buf: Vec<Complex<S>> = (0..lx.big).map(|j| p.eval(lx.node(j), xi)).collect();
                lx.differentiate(buf, ell)
            })
            .collect::<Result<_>>()?;
        check_tails(&stage1, tol)?;
        // stage 2: ξ-derivatives of each x-derivative at the output x points
        for b in 0..=ell {
            let cols: Vec<Lines<S>> = (0..nx)
                .into_par_iter()
                .map(|j| {
                    let buf: Vec<Complex<S>> = stage1.iter().map(|rows| rows.values[b][j]).collect();
                    lxi.differentiate(buf, ell)
                })
                .collect::<Result<_>>()?;
            check_tails(&cols, tol)?;
            for (j, col) in cols.iter().enumerate() {
                for (a, vals) in col.values.iter().enumerate() {
                    for (i, v) in vals.iter().enumerate() {
                        data[a][b][i * nx + j] = *v;
                    }
                }
            }
        }
    }
    Ok(DerivativeTable { ell, x: xs, xi: xis, data })
}

/// `|p|^{(m)}_ℓ` sampled on the box.
pub fn seminorm<S: Real>(p: &Symbol<S>, ell: usize, m: S, region: &SymbolBox<S>) -> Result<S> {
    Ok(derivative_table(p, region, ell)?.seminorm(ell, m))
}

/// Samples `p(x_j, ξ_k)` on the grid lattice, row-major in `j`.
fn lattice_values<S: Real>(grid: &Grid<S>, f: impl Fn(S, S) -> Complex<S> + Sync) -> Vec<Complex<S>> {
    let n = grid.n();
    let xi = grid.xi();
    (0..n)
        .into_par_iter()
        .flat_map_iter(|j| {
            let x = grid.x(j);
            let f = &f;
            xi.iter().map(move |&k| f(x, k))
        })
        .collect()
}

fn check_dense(n: usize) -> Result<()> {
    if n > MAX_DENSE_N {
        return Err(Error::DenseLimit { n, limit: MAX_DENSE_N });
    }
    Ok(())
}

/// `(p(x,D)u)(x_j) = (2π)^{-1} Σ_k e^{i x_j ξ_k} p(x_j, ξ_k) û(ξ_k) dξ` from
/// precomputed lattice values.
fn quantize_values<S: Real>(values: &[Complex<S>], u: &GridFunction<S>) -> Result<GridFunction<S>> {
    let grid = u.grid();
    let n = grid.n();
    let spec = forward_transform(u);
    // e^{i ξ_k x_j} = e^{i ξ_k x_min} e^{2πi jk/n}
    let two_pi = 2.0 * std::f64::consts::PI;
    let twiddle: Vec<Complex<S>> = (0..n)
        .map(|m| {
            let ang = two_pi * m as f64 / n as f64;
            Complex::new(S::lit(ang.cos()), S::lit(ang.sin()))
        })
        .collect();
    let shifted: Vec<Complex<S>> = spec
        .values()
        .iter()
        .zip(grid.xi())
        .map(|(z, &xi)| {
            let ang = (xi * grid.x_min()).to_f64_lossy();
            *z * Complex::new(S::lit(ang.cos()), S::lit(ang.sin()))
        })
        .collect();
    let scale = S::one() / grid.length();
    let out: Vec<Complex<S>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let row = &values[j * n..(j + 1) * n];
            let mut acc = zero();
            for k in 0..n {
                acc = acc + twiddle[(j * k) % n] * row[k] * shifted[k];
            }
            acc * scale
        })
        .collect();
    GridFunction::new(grid, out)
}

/// Dense Kohn-Nirenberg quantization, `O(n²)`; rejects `n > 4096`.
pub fn quantize<S: Real>(p: &Symbol<S>, u: &GridFunction<S>) -> Result<GridFunction<S>> {
    let grid = u.grid();
    check_dense(grid.n())?;
    let values = lattice_values(grid, |x, xi| p.eval(x, xi));
    quantize_values(&values, u)
}

/// Largest relative remainder `‖p₁(x,D)p₂(x,D)u - q_N(x,D)u‖ / ‖u‖` over a panel.
#[derive(Clone, Debug, PartialEq)]
pub struct RemainderReport<S> {
    pub terms: usize,
    pub per_function: Vec<S>,
    pub max: S,
}

/// Per-point derivatives of a symbol along one lattice axis.
fn axis_derivatives<S: Real>(
    p: &Symbol<S>,
    grid: &Grid<S>,
    order: usize,
    along_xi: bool,
) -> Result<Vec<Vec<Complex<S>>>> {
    let n = grid.n();
    if p.exact.is_some() || matches!(p.shape, Shape::Separable { .. }) {
        return (0..=order)
            .map(|k| {
                let mut vals = Vec::with_capacity(n * n);
                for j in 0..n {
                    for &xi in grid.xi() {
                        let (a, b) = if along_xi { (k, 0) } else { (0, k) };
                        vals.push(p.derivative(a, b, grid.x(j), xi)?);
                    }
                }
                Ok(vals)
            })
            .collect();
    }
    let mut out = vec![vec![zero(); n * n]; order + 1];
    if along_xi && p.x_independent || !along_xi && p.xi_independent {
        // one line suffices
        let line = if along_xi {
            let h = grid.dxi();
            PaddedLine::new(-S::from_usize_lossy(n / 2) * h, h, n, 4)?
        } else {
            PaddedLine::new(grid.x_min(), grid.dx(), n, 4)?
        };
        let buf = (0..line.big)
            .map(|r| if along_xi { p.eval(S::zero(), line.node(r)) } else { p.eval(line.node(r), S::zero()) })
            .collect();
        let lines = [line.differentiate(buf, order)?];
        check_tails(&lines, S::lit(AXIS_TOLERANCE))?;
        let d = &lines[0].values;
        for k in 0..=order {
            for j in 0..n {
                for (kk, _) in grid.xi().iter().enumerate() {
                    let idx = if along_xi { sorted_index(kk, n) } else { j };
                    out[k][j * n + kk] = d[k][idx];
                }
            }
        }
        return Ok(out);
    }
    if along_xi {
        let h = grid.dxi();
        let line = PaddedLine::new(-S::from_usize_lossy(n / 2) * h, h, n, 4)?;
        let rows: Vec<Lines<S>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let x = grid.x(j);
                let buf = (0..line.big).map(|r| p.eval(x, line.node(r))).collect();
                line.differentiate(buf, order)
            })
            .collect::<Result<_>>()?;
        check_tails(&rows, S::lit(AXIS_TOLERANCE))?;
        for (j, d) in rows.iter().map(|l| &l.values).enumerate() {
            for k in 0..=order {
                for kk in 0..n {
                    out[k][j * n + kk] = d[k][sorted_index(kk, n)];
                }
            }
        }
    } else {
        let line = PaddedLine::new(grid.x_min(), grid.dx(), n, 4)?;
        let cols: Vec<Lines<S>> = grid
            .xi()
            .par_iter()
            .map(|&xi| {
                let buf = (0..line.big).map(|r| p.eval(line.node(r), xi)).collect();
                line.differentiate(buf, order)
            })
            .collect::<Result<_>>()?;
        check_tails(&cols, S::lit(AXIS_TOLERANCE))?;
        for (kk, d) in cols.iter().map(|l| &l.values).enumerate() {
            for k in 0..=order {
                for j in 0..n {
                    out[k][j * n + kk] = d[k][j];
                }
            }
        }
    }
    Ok(out)
}

/// Position of FFT bin `k` on the ascending frequency line starting at `-n/2`.
fn sorted_index(k: usize, n: usize) -> usize {
    (crate::grid::wavenumber_index(k, n) + (n / 2) as i64) as usize
}

/// `q_N = Σ_{α<N} (α!)^{-1} ∂_ξ^α p₁ · D_x^α p₂` together with the
/// operator-side remainder over `panel`.
pub fn compose_expansion<S: Real>(
    p1: &Symbol<S>,
    p2: &Symbol<S>,
    terms: usize,
    panel: &[GridFunction<S>],
) -> Result<(Symbol<S>, RemainderReport<S>)> {
    if terms == 0 {
        return Err(invalid("terms", "need at least one term"));
    }
    if terms > MAX_SYMBOL_ORDER + 1 {
        return Err(Error::DerivativeCap { order: terms - 1, cap: MAX_SYMBOL_ORDER });
    }
    if panel.is_empty() {
        return Err(invalid("panel", "needs at least one test function"));
    }
    let order = terms - 1;
    let (a1, a2) = (p1.clone(), p2.clone());
    let mi = Complex::new(S::zero(), -S::one());
    let q_eval = move |x: S, xi: S| -> Complex<S> {
        let mut acc = zero();
        let mut dpow = Complex::new(S::one(), S::zero());
        for al in 0..=order {
            let d1 = a1.derivative(al, 0, x, xi).unwrap_or(Complex::new(S::nan(), S::zero()));
            let d2 = a2.derivative(0, al, x, xi).unwrap_or(Complex::new(S::nan(), S::zero()));
            acc = acc + d1 * d2 * dpow / factorial::<S>(al);
            dpow = dpow * mi;
        }
        acc
    };
    let mut q = Symbol::new(format!("({})#({})_N={terms}", p1.label, p2.label), p1.order_m + p2.order_m, q_eval)
        .with_scales(p1.scales.0.min(p2.scales.0), p1.scales.1.min(p2.scales.1));
    q.x_independent = p1.x_independent && p2.x_independent;
    q.xi_independent = p1.xi_independent && p2.xi_independent;

    let grid = panel[0].grid();
    check_dense(grid.n())?;
    let n = grid.n();
    let d1 = axis_derivatives(p1, grid, order, true)?;
    let d2 = axis_derivatives(p2, grid, order, false)?;
    let mut q_values = vec![zero(); n * n];
    let mut dpow = Complex::new(S::one(), S::zero());
    for al in 0..=order {
        let w = dpow / factorial::<S>(al);
        for (qv, (x1, x2)) in q_values.iter_mut().zip(d1[al].iter().zip(&d2[al])) {
            *qv = *qv + *x1 * *x2 * w;
        }
        dpow = dpow * mi;
    }
    let v1 = lattice_values(grid, |x, xi| p1.eval(x, xi));
    let v2 = lattice_values(grid, |x, xi| p2.eval(x, xi));
    let per_function: Vec<S> = panel
        .iter()
        .map(|u| {
            if u.grid() != grid {
                return Err(Error::GridMismatch);
            }
            let lhs = quantize_values(&v1, &quantize_values(&v2, u)?)?;
            let rhs = quantize_values(&q_values, u)?;
            Ok(lhs.sub(&rhs)?.l2_norm() / u.l2_norm())
        })
        .collect::<Result<_>>()?;
    let max = per_function.iter().fold(S::zero(), |a, &b| a.max(b));
    Ok((q, RemainderReport { terms, per_function, max }))
}

/// Deterministic panel of modulated Gaussians of several widths and centers.
pub fn standard_panel<S: Real>(grid: &Grid<S>) -> Vec<GridFunction<S>> {
    let len = grid.length();
    let mid = grid.x_min() + len / S::lit(2.0);
    let k = grid.xi_max();
    let mut panel = Vec::new();
    for c in [-S::lit(0.1), S::zero(), S::lit(0.1)] {
        for w in [S::lit(1.0 / 40.0), S::lit(1.0 / 24.0)] {
            for om in [S::zero(), S::lit(0.25), -S::lit(1.0 / 3.0)] {
                let (c, w, om) = (mid + c * len, w * len, om * k);
                let u = GridFunction::from_fn(grid, |x| {
                    let e = (-(x - c) * (x - c) / (S::lit(2.0) * w * w)).exp();
                    Complex::from_polar(e, om * x)
                })
                .expect("finite panel");
                panel.push(u);
            }
        }
    }
    panel
}

#[derive(Clone, Debug, PartialEq)]
pub struct L2BoundReport<S> {
    /// `max_u ‖p(x,D)u‖ / ‖u‖` over the panel.
    pub ratio: S,
    /// `max_{α,β ≤ 2} sup |∂_ξ^α ∂_x^β p|` on the sampling box.
    pub bound: S,
    pub slack: S,
    pub pass: bool,
}

/// Compares the panel operator norm of `p(x, D)` with the seminorm bound.
pub fn l2_bound_probe<S: Real>(
    p: &Symbol<S>,
    panel: &[GridFunction<S>],
    region: &SymbolBox<S>,
) -> Result<L2BoundReport<S>> {
    if panel.is_empty() {
        return Err(invalid("panel", "needs at least one test function"));
    }
    let grid = panel[0].grid();
    check_dense(grid.n())?;
    let values = lattice_values(grid, |x, xi| p.eval(x, xi));
    let mut ratio = S::zero();
    for u in panel {
        if u.grid() != grid {
            return Err(Error::GridMismatch);
        }
        ratio = ratio.max(quantize_values(&values, u)?.l2_norm() / u.l2_norm());
    }
    let bound = derivative_table(p, region, 2)?.seminorm(2, S::zero());
    let slack = S::lit(PROBE_SLACK);
    Ok(L2BoundReport { ratio, bound, slack, pass: ratio <= slack * bound })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PositivityReport<S> {
    /// `min_v Re(p(x,D)v, v) / ‖v‖²` over the panel.
    pub min_ratio: S,
    pub ratios: Vec<S>,
    /// Smallest sampled `Re p` on the grid lattice.
    pub min_symbol: S,
}

/// Measures how far the quantization of a symbol with `Re p ≥ 0` is from
/// being a nonnegative operator on the panel.
pub fn positivity_probe<S: Real>(p: &Symbol<S>, panel: &[GridFunction<S>]) -> Result<PositivityReport<S>> {
    if panel.is_empty() {
        return Err(invalid("panel", "needs at least one test function"));
    }
    let grid = panel[0].grid();
    check_dense(grid.n())?;
    let values = lattice_values(grid, |x, xi| p.eval(x, xi));
    let min_symbol = values.iter().fold(S::infinity(), |m, z| m.min(z.re));
    let scale = values.iter().fold(S::zero(), |m, z| m.max(z.norm()));
    if min_symbol < -S::lit(1e-12) * scale.max(S::one()) {
        return Err(invalid("p", format!("real part is negative on the lattice: {min_symbol}")));
    }
    let ratios: Vec<S> = panel
        .iter()
        .map(|v| {
            if v.grid() != grid {
                return Err(Error::GridMismatch);
            }
            let pv = quantize_values(&values, v)?;
            Ok(pv.inner(v)?.re / v.l2_norm().powi(2))
        })
        .collect::<Result<_>>()?;
    let min_ratio = ratios.iter().fold(S::infinity(), |a, &b| a.min(b));
    Ok(PositivityReport { min_ratio, ratios, min_symbol })
}

/// `(⟨x⟩^{-σ}ξ^{p-1} - Θ⟨σ_k^{p-1}⟩^{-σ}σ_k^{p-1}) ψ_k(x) χ_k(ξ)` with
/// `Θ = 7^{-σ}/4^{p-1}`, `ψ_k(x) = h((x - 4σ_k^{p-1})/(3σ_k^{p-1}))` and
/// `χ_k(ξ) = h((ξ - σ_k)/(3σ_k/4))`. Nonnegative by the choice of `Θ`.
pub fn i2k_symbol<S: Real>(bump: &BumpFunction<S>, sigma_k: S, p: u32, sigma: S) -> Result<Symbol<S>> {
    if p < 2 || !(sigma_k > S::zero()) || !(sigma > S::zero() && sigma < S::one()) {
        return Err(invalid("sigma_k", "need p >= 2, sigma_k > 0 and sigma in (0, 1)"));
    }
    let pm1 = p as i32 - 1;
    let sp = sigma_k.powi(pm1);
    let theta = S::lit(7.0).powf(-sigma) / S::lit(4.0).powi(pm1);
    let floor = theta * bracket(sp).powf(-sigma) * sp;
    let b = bump.clone();
    Ok(Symbol::new(format!("I2k(sigma_k={sigma_k})"), S::from_usize_lossy(pm1 as usize), move |x: S, xi: S| {
        let psi = b.eval((x - S::lit(4.0) * sp) / (S::lit(3.0) * sp));
        let chi = b.eval((xi - sigma_k) / (S::lit(0.75) * sigma_k));
        if psi == S::zero() || chi == S::zero() {
            return zero();
        }
        Complex::new((bracket(x).powf(-sigma) * xi.powi(pm1) - floor) * psi * chi, S::zero())
    })
    .with_sg_orders(S::from_usize_lossy(pm1 as usize), -sigma)
    .with_scales(sp, sigma_k / S::lit(4.0)))
}
