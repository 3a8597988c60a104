//! Wave-packet experiments on the model operator: Gevrey bumps, phase-space
//! cutoffs `w_k^{(αβ)}`, localized energies `E_k(t)`, growth-rate extraction,
//! the well/ill-posedness threshold and the free-flow decay probe.

use std::sync::Arc;

use num_bigint::BigInt;
use num_complex::Complex;
use num_rational::BigRational;
use num_traits::Signed;
use rayon::prelude::*;

use crate::diff::erf_window;
use crate::error::{invalid, Error, Result};
use crate::grid::{forward_transform, inverse_transform, Grid, GridFunction, GridPolicy, Spectrum};
use crate::jet::Jet;
use crate::operators::{fit_gevrey_constant, free_op, model_m, TimeProfile};
use crate::scalar::{exact_decimal, factorial, Real};
use crate::solver::{exact_free_solution, required_steps, solve_observed, EnergyTrace, Forcing, Trajectory};
use crate::spaces::{decay_fit, shifted_packet};

/// Cap on `N_k`.
pub const N_MAX: usize = 10;
/// Points of the reference table on `[-1, 1]`.
pub const REFERENCE_POINTS: usize = 1025;
/// Quadrature nodes on `[-1/2, 1/2]` for the autocorrelation bump.
const PD_NODES: usize = 2048;
/// Floor applied to per-`σ_k` rates before taking logarithms.
pub const RATE_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BumpKind {
    /// `h = 1` on `[-1/2, 1/2]`, `h = 0` off `(-1, 1)`.
    Plateau,
    /// `h = g ⋆ g̃ / ‖g‖²` with `g` supported in `[-1/2, 1/2]`, so `ĥ ≥ 0`.
    PositiveDefinite,
}

/// `exp(-w^{-a})` as a jet, zero where `w ≤ 0` or the value underflows.
fn flat_exp_jet<S: Real>(w: &Jet<S>, a: S) -> Jet<S> {
    let order = w.order();
    if !(w.value() > S::zero()) {
        return Jet::constant(S::zero(), order);
    }
    if w.value().powf(-a) > S::lit(700.0) {
        return Jet::constant(S::zero(), order);
    }
    let inv = w.ln().scale(-a).exp();
    inv.scale(-S::one()).exp()
}

struct PdData<S> {
    nodes: Vec<S>,
    /// `g^{(α)}` at the nodes, `α ≤ N_MAX`.
    g_derivs: Vec<Vec<S>>,
    dz: S,
    norm_sq: S,
    a: S,
}

impl<S: Real> PdData<S> {
    fn g(&self, y: S) -> S {
        let w = S::one() - S::lit(4.0) * y * y;
        if !(w > S::zero()) {
            return S::zero();
        }
        let e = w.powf(-self.a);
        if e > S::lit(700.0) {
            S::zero()
        } else {
            (-e).exp()
        }
    }
}

/// Compactly supported Gevrey bump on `[-1, 1]` with derivative access.
#[derive(Clone)]
pub struct BumpFunction<S: Real> {
    pub kind: BumpKind,
    pub theta_h: S,
    pub n_max: usize,
    a: S,
    reference_x: Arc<Vec<S>>,
    tables: Arc<Vec<Vec<S>>>,
    pd: Option<Arc<PdData<S>>>,
}

impl<S: Real> std::fmt::Debug for BumpFunction<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BumpFunction").field("kind", &self.kind).field("theta_h", &self.theta_h).finish()
    }
}

/// Builds the bump of the given kind in the Gevrey class `G^{θ_h}`.
pub fn make_bump<S: Real>(kind: BumpKind, theta_h: S) -> Result<BumpFunction<S>> {
    if !(theta_h > S::one()) || !theta_h.is_finite() {
        return Err(invalid("theta_h", format!("must exceed 1, got {theta_h}")));
    }
    // e^{-t^{-a}} is Gevrey of index 1 + 1/a
    let a = S::one() / (theta_h - S::one());
    let pd = match kind {
        BumpKind::Plateau => None,
        BumpKind::PositiveDefinite => {
            let dz = S::one() / S::from_usize_lossy(PD_NODES);
            let nodes: Vec<S> =
                (0..=PD_NODES).map(|j| S::from_usize_lossy(j) * dz - S::lit(0.5)).collect();
            let per_node: Vec<Vec<S>> = nodes
                .par_iter()
                .map(|&z| {
                    let y = Jet::variable(z, N_MAX);
                    let w = (&y * &y).scale(S::lit(-4.0)).add_scalar(S::one());
                    flat_exp_jet(&w, a).derivatives()
                })
                .collect();
            let g_derivs: Vec<Vec<S>> =
                (0..=N_MAX).map(|al| per_node.iter().map(|d| d[al]).collect()).collect();
            let norm_sq = g_derivs[0].iter().fold(S::zero(), |acc, &v| acc + v * v) * dz;
            Some(Arc::new(PdData { nodes, g_derivs, dz, norm_sq, a }))
        }
    };
    let mut bump = BumpFunction {
        kind,
        theta_h,
        n_max: N_MAX,
        a,
        reference_x: Arc::new(Vec::new()),
        tables: Arc::new(Vec::new()),
        pd,
    };
    let step = S::lit(2.0) / S::from_usize_lossy(REFERENCE_POINTS - 1);
    let xs: Vec<S> = (0..REFERENCE_POINTS).map(|i| S::from_usize_lossy(i) * step - S::one()).collect();
    let rows: Vec<Vec<S>> = xs.par_iter().map(|&x| bump.derivatives_unchecked(x, N_MAX)).collect();
    let tables = (0..=N_MAX).map(|al| rows.iter().map(|r| r[al]).collect()).collect();
    bump.reference_x = Arc::new(xs);
    bump.tables = Arc::new(tables);
    Ok(bump)
}

impl<S: Real> BumpFunction<S> {
    fn derivatives_unchecked(&self, x: S, order: usize) -> Vec<S> {
        let mut out = vec![S::zero(); order + 1];
        if x.abs() >= S::one() {
            return out;
        }
        match self.kind {
            BumpKind::Plateau => {
                if x.abs() <= S::lit(0.5) {
                    out[0] = S::one();
                    return out;
                }
                let sign = if x > S::zero() { -S::one() } else { S::one() };
                // u = 2(1 - |x|)
                let u = Jet::variable(x, order).scale(S::lit(2.0) * sign).add_scalar(S::lit(2.0));
                let fu = flat_exp_jet(&u, self.a);
                let fv = flat_exp_jet(&u.scale(-S::one()).add_scalar(S::one()), self.a);
                let h = &fu / &(&fu + &fv);
                h.derivatives()
            }
            BumpKind::PositiveDefinite => {
                let pd = self.pd.as_ref().expect("positive definite data");
                // h^{(α)}(x) = ∫ g^{(α)}(z) g(z - x) dz / ‖g‖²
                for (j, &z) in pd.nodes.iter().enumerate() {
                    let w = pd.g(z - x);
                    if w == S::zero() {
                        continue;
                    }
                    for (al, o) in out.iter_mut().enumerate() {
                        *o = *o + pd.g_derivs[al][j] * w;
                    }
                }
                let scale = pd.dz / pd.norm_sq;
                out.iter().map(|&v| v * scale).collect()
            }
        }
    }

    /// `[h(x), h'(x), …, h^{(order)}(x)]`.
    pub fn derivatives(&self, x: S, order: usize) -> Result<Vec<S>> {
        if order > self.n_max {
            return Err(Error::DerivativeCap { order, cap: self.n_max });
        }
        Ok(self.derivatives_unchecked(x, order))
    }

    pub fn eval(&self, x: S) -> S {
        self.derivatives_unchecked(x, 0)[0]
    }

    /// `ĥ(ξ) = ĝ(ξ)² / ‖g‖²` for the positive definite kind.
    pub fn fourier(&self, xi: S) -> Option<S> {
        let pd = self.pd.as_ref()?;
        let g_hat = pd
            .nodes
            .iter()
            .zip(&pd.g_derivs[0])
            .fold(S::zero(), |acc, (&z, &g)| acc + g * (xi * z).cos())
            * pd.dz;
        Some(g_hat * g_hat / pd.norm_sq)
    }

    pub fn reference_points(&self) -> &[S] {
        &self.reference_x
    }

    /// `h^{(α)}` on [`BumpFunction::reference_points`].
    pub fn table(&self, alpha: usize) -> Option<&[S]> {
        self.tables.get(alpha).map(|v| v.as_slice())
    }

    /// Least `C` with `sup|h^{(α)}| ≤ C^{α+1} α!^{θ_h}` for `α ≤ alpha_max`,
    /// with the per-`α` constants.
    pub fn gevrey_audit(&self, alpha_max: usize) -> Result<(S, Vec<S>)> {
        if alpha_max > self.n_max {
            return Err(Error::DerivativeCap { order: alpha_max, cap: self.n_max });
        }
        let sups: Vec<S> = (0..=alpha_max)
            .map(|al| self.tables[al].iter().fold(S::zero(), |m, v| m.max(v.abs())))
            .collect();
        Ok(fit_gevrey_constant(&sups, self.theta_h))
    }
}

/// Separable symbol `X(x) Ξ(ξ)` with
/// `X(x) = h^{(α)}((x - 4σ_k^{p-1}) / σ_k^{p-1})` and `Ξ(ξ) = h^{(β)}((ξ - σ_k) / (σ_k/4))`.
#[derive(Clone, Debug)]
pub struct CutoffSymbol<S: Real> {
    pub bump: BumpFunction<S>,
    pub sigma_k: S,
    pub p: u32,
    pub alpha: usize,
    pub beta: usize,
}

pub fn cutoff_symbol<S: Real>(
    bump: &BumpFunction<S>,
    sigma_k: S,
    p: u32,
    alpha: usize,
    beta: usize,
) -> Result<CutoffSymbol<S>> {
    let order = alpha.max(beta);
    if order > bump.n_max {
        return Err(Error::DerivativeCap { order, cap: bump.n_max });
    }
    if !(sigma_k > S::zero()) || p < 2 {
        return Err(invalid("sigma_k", "need sigma_k > 0 and p >= 2"));
    }
    Ok(CutoffSymbol { bump: bump.clone(), sigma_k, p, alpha, beta })
}

impl<S: Real> CutoffSymbol<S> {
    pub fn x_center(&self) -> S {
        S::lit(4.0) * self.x_scale()
    }

    pub fn x_scale(&self) -> S {
        self.sigma_k.powi(self.p as i32 - 1)
    }

    pub fn xi_scale(&self) -> S {
        self.sigma_k / S::lit(4.0)
    }

    pub fn x_factor(&self, x: S) -> S {
        self.bump.derivatives_unchecked((x - self.x_center()) / self.x_scale(), self.alpha)[self.alpha]
    }

    pub fn xi_factor(&self, xi: S) -> S {
        self.bump.derivatives_unchecked((xi - self.sigma_k) / self.xi_scale(), self.beta)[self.beta]
    }

    /// `[3σ_k^{p-1}, 5σ_k^{p-1}]`.
    pub fn x_support(&self) -> (S, S) {
        (self.x_center() - self.x_scale(), self.x_center() + self.x_scale())
    }

    /// `[3σ_k/4, 5σ_k/4]`.
    pub fn xi_support(&self) -> (S, S) {
        (self.sigma_k - self.xi_scale(), self.sigma_k + self.xi_scale())
    }
}

/// `X(x) ℱ^{-1}(Ξ û)`.
pub fn quantize_separable<S: Real>(sym: &CutoffSymbol<S>, u: &GridFunction<S>) -> GridFunction<S> {
    let grid = u.grid().clone();
    let mut spec = forward_transform(u);
    for (z, &xi) in spec.values_mut().iter_mut().zip(grid.xi()) {
        *z = *z * sym.xi_factor(xi);
    }
    let mut v = inverse_transform(&spec);
    for (i, z) in v.values_mut().iter_mut().enumerate() {
        *z = *z * sym.x_factor(grid.x(i));
    }
    v
}

/// `N_k = ⌊σ_k^{λ/θ₁}⌋`, robust to powers that land on an integer.
pub fn n_k<S: Real>(sigma_k: S, lambda: S, theta1: S) -> usize {
    let v = sigma_k.to_f64_lossy().powf(lambda.to_f64_lossy() / theta1.to_f64_lossy());
    let r = v.round();
    if (v - r).abs() <= 1e-9 * v.max(1.0) {
        r as usize
    } else {
        v.floor() as usize
    }
}

/// Precomputed evaluator of `E_k = Σ_{α,β ≤ N_k} (α!β!)^{-θ₁} ‖w_k^{(αβ)}(x, D) u‖`
/// on a fixed grid.
#[derive(Clone, Debug)]
pub struct LocalizedEnergy<S: Real> {
    grid: Grid<S>,
    pub sigma_k: S,
    pub lambda: S,
    pub theta1: S,
    /// Number of `α` (and `β`) indices actually used, `min(N_k, N_MAX)`.
    pub n_k: usize,
    /// `N_k` exceeded [`N_MAX`] and was truncated.
    pub capped: bool,
    x_idx: Vec<usize>,
    x_rows: Vec<Vec<S>>,
    xi_idx: Vec<usize>,
    xi_rows: Vec<Vec<S>>,
    weights: Vec<Vec<S>>,
}

impl<S: Real> LocalizedEnergy<S> {
    pub fn new(
        grid: &Grid<S>,
        bump: &BumpFunction<S>,
        sigma_k: S,
        p: u32,
        lambda: S,
        theta1: S,
    ) -> Result<Self> {
        if !(lambda > S::zero() && lambda < S::one()) {
            return Err(invalid("lambda", format!("must lie in (0, 1), got {lambda}")));
        }
        if !(theta1 >= bump.theta_h) {
            return Err(invalid("theta1", format!("must be at least theta_h = {}", bump.theta_h)));
        }
        let raw = n_k(sigma_k, lambda, theta1);
        let n = raw.min(bump.n_max);
        let sym = cutoff_symbol(bump, sigma_k, p, 0, 0)?;
        let (xc, xs, ks) = (sym.x_center(), sym.x_scale(), sym.xi_scale());
        let mut x_idx = Vec::new();
        let mut x_rows = vec![Vec::new(); n + 1];
        for i in 0..grid.n() {
            let y = (grid.x(i) - xc) / xs;
            if y.abs() < S::one() {
                x_idx.push(i);
                let d = bump.derivatives_unchecked(y, n);
                for (row, v) in x_rows.iter_mut().zip(d) {
                    row.push(v);
                }
            }
        }
        let mut xi_idx = Vec::new();
        let mut xi_rows = vec![Vec::new(); n + 1];
        for (k, &xi) in grid.xi().iter().enumerate() {
            let y = (xi - sigma_k) / ks;
            if y.abs() < S::one() {
                xi_idx.push(k);
                let d = bump.derivatives_unchecked(y, n);
                for (row, v) in xi_rows.iter_mut().zip(d) {
                    row.push(v);
                }
            }
        }
        let weights = (0..=n)
            .map(|a| (0..=n).map(|b| (factorial::<S>(a) * factorial::<S>(b)).powf(-theta1)).collect())
            .collect();
        Ok(Self {
            grid: grid.clone(),
            sigma_k,
            lambda,
            theta1,
            n_k: n,
            capped: raw > bump.n_max,
            x_idx,
            x_rows,
            xi_idx,
            xi_rows,
            weights,
        })
    }

    /// `(E_k, α = β = 0 term)` for one state.
    pub fn eval(&self, u: &GridFunction<S>) -> (S, S) {
        self.eval_spectrum(&forward_transform(u))
    }

    pub fn eval_spectrum(&self, spec: &Spectrum<S>) -> (S, S) {
        let n = self.grid.n();
        let zero = Complex::new(S::zero(), S::zero());
        let mut total = S::zero();
        let mut base = S::zero();
        for (beta, xi_row) in self.xi_rows.iter().enumerate() {
            let mut work = vec![zero; n];
            for (&k, &w) in self.xi_idx.iter().zip(xi_row) {
                work[k] = spec.values()[k] * w;
            }
            let v = inverse_transform(&Spectrum::from_raw(&self.grid, work));
            for (alpha, x_row) in self.x_rows.iter().enumerate() {
                let sum = self
                    .x_idx
                    .iter()
                    .zip(x_row)
                    .fold(S::zero(), |acc, (&i, &w)| acc + (v.values()[i] * w).norm_sqr());
                let norm = (sum * self.grid.dx()).sqrt();
                total = total + self.weights[alpha][beta] * norm;
                if alpha == 0 && beta == 0 {
                    base = norm;
                }
            }
        }
        (total, base)
    }
}

/// `E_k` along a stored trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalizedEnergyTrace<S> {
    /// Series `"E_k"` and `"E_k00"` (the `α = β = 0` term).
    pub trace: EnergyTrace<S>,
    pub n_k: usize,
    pub capped: bool,
}

pub fn localized_energy<S: Real>(
    traj: &Trajectory<S>,
    bump: &BumpFunction<S>,
    sigma_k: S,
    p: u32,
    lambda: S,
    theta1: S,
) -> Result<LocalizedEnergyTrace<S>> {
    let le = LocalizedEnergy::new(&traj.grid, bump, sigma_k, p, lambda, theta1)?;
    let (e, e0): (Vec<S>, Vec<S>) = traj.states.par_iter().map(|u| le.eval(u)).unzip();
    let trace = EnergyTrace::new(traj.times.clone(), vec![("E_k".into(), e), ("E_k00".into(), e0)])?;
    Ok(LocalizedEnergyTrace { trace, n_k: le.n_k, capped: le.capped })
}

/// Steepest `Δ log E / Δt` over windows of `window · T`, ignoring windows that
/// start before `skip · T`.
pub fn steepest_rate<S: Real>(times: &[S], values: &[S], window: S, skip: S) -> Option<S> {
    let horizon = *times.last()?;
    let w = window * horizon;
    let mut best: Option<S> = None;
    for i in 0..times.len() {
        if times[i] < skip * horizon {
            continue;
        }
        let Some(j) = (i + 1..times.len()).find(|&j| times[j] >= times[i] + w * S::lit(1.0 - 1e-9)) else {
            break;
        };
        if !(values[i] > S::zero() && values[j] > S::zero()) {
            continue;
        }
        let r = (values[j].ln() - values[i].ln()) / (times[j] - times[i]);
        best = Some(best.map_or(r, |b: S| b.max(r)));
    }
    best
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope<S: Real>(x: &[S], y: &[S]) -> S {
    let n = S::from_usize_lossy(x.len());
    let lx: Vec<S> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<S> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().fold(S::zero(), |a, &b| a + b) / n;
    let my = ly.iter().fold(S::zero(), |a, &b| a + b) / n;
    let num = lx.iter().zip(&ly).fold(S::zero(), |a, (&u, &v)| a + (u - mx) * (v - my));
    let den = lx.iter().fold(S::zero(), |a, &u| a + (u - mx) * (u - mx));
    num / den
}

/// `(ρ₀, θ)` of the packet `φ̂ = e^{-ρ₀⟨ξ⟩^{1/θ}}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PacketParams<S> {
    pub rho0: S,
    pub theta: S,
}

/// `ℱ^{-1}(e^{-ρ₀⟨ξ⟩^{1/θ}} τ(ξ))` with a smooth taper `τ` that equals 1 up
/// to `plateau` and vanishes at the band edge. The taper removes the
/// truncation ringing of an unresolved profile.
pub fn band_limited_packet<S: Real>(grid: &Grid<S>, packet: PacketParams<S>, plateau: S) -> Result<GridFunction<S>> {
    if !(packet.rho0 > S::zero()) || !(packet.theta > S::one()) {
        return Err(invalid("packet", "need rho0 > 0 and theta > 1"));
    }
    let edge = grid.xi_max();
    if !(plateau > S::zero() && plateau < edge) {
        return Err(invalid("plateau", format!("must lie in (0, {edge}), got {plateau}")));
    }
    let a = (plateau + edge) / S::lit(2.0);
    let b = (edge - plateau) / S::lit(12.0);
    let mut spec = Spectrum::from_fn(grid, |xi| {
        let prof = (-packet.rho0 * crate::scalar::bracket(xi).powf(S::one() / packet.theta)).exp();
        Complex::new(prof * erf_window(xi, a, b), S::zero())
    })?;
    spec.zero_nyquist();
    Ok(inverse_transform(&spec))
}

/// Datum `φ_k` for frequency `σ_k`: the band-limited packet (plateau
/// `1.3σ_k`, beyond the cutoff support) translated to `4σ_k^{p-1}` and damped
/// by `e^{-ρ₂4^{1/s}σ_k^{(p-1)/s}}`.
pub fn packet_datum<S: Real>(
    grid: &Grid<S>,
    packet: PacketParams<S>,
    sigma_k: S,
    p: u32,
    rho2: S,
    s: S,
) -> Result<GridFunction<S>> {
    let plateau = (S::lit(1.3) * sigma_k).min(S::lit(0.6) * grid.xi_max());
    let phi = band_limited_packet(grid, packet, plateau)?;
    shifted_packet(&phi, sigma_k, p, rho2, s)
}

/// Inputs of [`growth_experiment`].
#[derive(Clone, Debug, PartialEq)]
pub struct GrowthConfig<S> {
    pub p: u32,
    pub sigma: S,
    pub sigma_k: Vec<S>,
    pub lambda: S,
    pub theta1: S,
    pub theta_h: S,
    pub packet: PacketParams<S>,
    pub horizon: S,
    pub policy: GridPolicy<S>,
    pub min_steps: usize,
    pub samples: usize,
    /// Drop the `i⟨x⟩^{-σ}D^{p-1}` term (free flow control).
    pub control: bool,
}

impl<S: Real> GrowthConfig<S> {
    /// Defaults: `λ = min(0.4, 0.75 (p-1)(1-σ))`, `θ₁ = θ_h = 2`, packet
    /// `(0.5, 2)`, `T = 0.02`, compact grids for `p ≥ 3`, at least 100 steps
    /// and 201 samples.
    pub fn new(p: u32, sigma: S, sigma_k: Vec<S>) -> Self {
        let pm1 = S::from_usize_lossy(p.saturating_sub(1) as usize);
        let lambda = S::lit(0.4).min(S::lit(0.75) * pm1 * (S::one() - sigma));
        Self {
            p,
            sigma,
            sigma_k,
            lambda,
            theta1: S::lit(2.0),
            theta_h: S::lit(2.0),
            packet: PacketParams { rho0: S::lit(0.5), theta: S::lit(2.0) },
            horizon: S::lit(0.02),
            policy: if p == 2 { GridPolicy::Auto } else { GridPolicy::Compact },
            min_steps: 100,
            samples: 201,
            control: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(invalid("p", "order must be at least 2"));
        }
        let pm1 = S::from_usize_lossy(self.p as usize - 1);
        let lo = S::from_usize_lossy(self.p as usize - 2) / pm1;
        if !(self.sigma > lo && self.sigma < S::one()) {
            return Err(invalid("sigma", format!("σ must lie in ({lo}, 1), got {}", self.sigma)));
        }
        if self.sigma_k.len() < 4 {
            return Err(invalid("sigma_k", "needs at least 4 values"));
        }
        let ratio = self.sigma_k[1] / self.sigma_k[0];
        let geometric = self.sigma_k.windows(2).all(|w| {
            w[0] > S::zero() && ((w[1] / w[0]) - ratio).abs() <= S::lit(1e-9) * ratio
        });
        if !geometric || !(ratio > S::one()) {
            return Err(invalid("sigma_k", "must be increasing and geometrically spaced"));
        }
        if !(self.lambda > S::zero() && self.lambda < S::one()) {
            return Err(invalid("lambda", "must lie in (0, 1)"));
        }
        if !(self.lambda < pm1 * (S::one() - self.sigma)) {
            return Err(invalid("lambda", "must be below (p-1)(1-σ)"));
        }
        if !(self.theta1 >= self.theta_h) || !(self.theta_h > S::one()) {
            return Err(invalid("theta1", "need theta1 >= theta_h > 1"));
        }
        if !(self.horizon > S::zero()) {
            return Err(invalid("T", "must be positive"));
        }
        if self.samples < 10 {
            return Err(invalid("samples", "need at least 10 samples"));
        }
        Ok(())
    }
}

/// Per-`σ_k` outcome of a growth run.
#[derive(Clone, Debug, PartialEq)]
pub struct GrowthLevel<S> {
    pub sigma_k: S,
    pub n: usize,
    pub x_min: S,
    pub x_max: S,
    pub steps: usize,
    pub n_k: usize,
    pub capped: bool,
    pub rate: S,
    /// Same fit on the `α = β = 0` term alone.
    pub rate_e00: S,
    pub blow_up: Option<S>,
    pub trace: EnergyTrace<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalizedEnergyRun<S> {
    pub p: u32,
    pub sigma: S,
    pub lambda: S,
    pub theta1: S,
    pub control: bool,
    pub levels: Vec<GrowthLevel<S>>,
    /// Slope of `log max(r_k, 1e-3)` against `log σ_k`.
    pub fitted_rate: S,
    pub fitted_rate_e00: S,
    /// `(p-1)(1-σ)`.
    pub predicted: S,
}

impl<S: Real> LocalizedEnergyRun<S> {
    pub fn sigma_k(&self) -> Vec<S> {
        self.levels.iter().map(|l| l.sigma_k).collect()
    }

    pub fn rates(&self) -> Vec<S> {
        self.levels.iter().map(|l| l.rate).collect()
    }
}

fn growth_level<S: Real>(cfg: &GrowthConfig<S>, bump: &BumpFunction<S>, sigma_k: S) -> Result<GrowthLevel<S>> {
    let grid = cfg.policy.resolve(sigma_k, cfg.p)?;
    let g = packet_datum(&grid, cfg.packet, sigma_k, cfg.p, S::zero(), S::lit(2.0))?;
    let op = if cfg.control { free_op(cfg.p, TimeProfile::Constant(S::one()))? } else { model_m(cfg.p, cfg.sigma)? };
    let steps = required_steps(&op, &grid, cfg.horizon).max(cfg.min_steps);
    let le = LocalizedEnergy::new(&grid, bump, sigma_k, cfg.p, cfg.lambda, cfg.theta1)?;
    let mut times = Vec::new();
    let mut e = Vec::new();
    let mut e0 = Vec::new();
    let summary = solve_observed(&op, &Forcing::zero(), &g, cfg.horizon, steps, cfg.samples, |t, u| {
        let (a, b) = le.eval(u);
        times.push(t);
        e.push(a);
        e0.push(b);
    })?;
    let rate = steepest_rate(&times, &e, S::lit(0.1), S::lit(0.05)).unwrap_or(S::zero());
    let rate_e00 = steepest_rate(&times, &e0, S::lit(0.1), S::lit(0.05)).unwrap_or(S::zero());
    let trace = EnergyTrace::new(times, vec![("E_k".into(), e), ("E_k00".into(), e0)])?;
    Ok(GrowthLevel {
        sigma_k,
        n: grid.n(),
        x_min: grid.x_min(),
        x_max: grid.x_max(),
        steps,
        n_k: le.n_k,
        capped: le.capped,
        rate,
        rate_e00,
        blow_up: summary.blow_up,
        trace,
    })
}

/// Evolves `φ_k` under the model operator (or the free flow) for each `σ_k`
/// concurrently, extracts the steepest windowed growth rate of `E_k` and fits
/// its power law in `σ_k`.
pub fn growth_experiment<S: Real>(cfg: &GrowthConfig<S>) -> Result<LocalizedEnergyRun<S>> {
    cfg.validate()?;
    let bump = make_bump(BumpKind::Plateau, cfg.theta_h)?;
    let levels: Vec<GrowthLevel<S>> =
        cfg.sigma_k.par_iter().map(|&sk| growth_level(cfg, &bump, sk)).collect::<Result<_>>()?;
    let floor = S::lit(RATE_FLOOR);
    let xs: Vec<S> = levels.iter().map(|l| l.sigma_k).collect();
    let ys: Vec<S> = levels.iter().map(|l| l.rate.max(floor)).collect();
    let fitted_rate = log_log_slope(&xs, &ys);
    let ys: Vec<S> = levels.iter().map(|l| l.rate_e00.max(floor)).collect();
    let fitted_rate_e00 = log_log_slope(&xs, &ys);
    let pm1 = S::from_usize_lossy(cfg.p as usize - 1);
    Ok(LocalizedEnergyRun {
        p: cfg.p,
        sigma: cfg.sigma,
        lambda: cfg.lambda,
        theta1: cfg.theta1,
        control: cfg.control,
        levels,
        fitted_rate,
        fitted_rate_e00,
        predicted: pm1 * (S::one() - cfg.sigma),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Regime {
    WellPosed,
    IllPosed,
    Critical,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::WellPosed => "well_posed",
            Self::IllPosed => "ill_posed",
            Self::Critical => "critical",
        }
    }
}

fn rational<S: Real>(name: &'static str, x: S) -> Result<BigRational> {
    exact_decimal(x.to_f64_lossy()).ok_or_else(|| invalid(name, "must be finite"))
}

/// Compares `(p-1)θ` with `min{1/(1-σ), s}` in exact rational arithmetic on
/// the decimal values of the inputs; equality is the critical case.
pub fn threshold_classify<S: Real>(p: u32, sigma: S, s: S, theta: S) -> Result<Regime> {
    if p < 2 {
        return Err(invalid("p", "order must be at least 2"));
    }
    let one = BigRational::from_integer(BigInt::from(1));
    let pm1 = BigRational::from_integer(BigInt::from(p - 1));
    let lo = BigRational::new(BigInt::from(p - 2), BigInt::from(p - 1));
    let sig = rational("sigma", sigma)?;
    if !(sig > lo && sig < one) {
        return Err(invalid("sigma", format!("σ must lie in (({p}-2)/({p}-1), 1), got {sigma}")));
    }
    let s = rational("s", s)?;
    let th = rational("theta", theta)?;
    if s <= one {
        return Err(invalid("s", "must exceed 1"));
    }
    if th <= one {
        return Err(invalid("theta", "must exceed 1"));
    }
    let lhs = pm1 * th;
    let bound = (&one / (&one - sig)).min(s);
    Ok(match lhs.cmp(&bound) {
        std::cmp::Ordering::Less => Regime::WellPosed,
        std::cmp::Ordering::Greater => Regime::IllPosed,
        std::cmp::Ordering::Equal => Regime::Critical,
    })
}

/// Decay probe across a refinement ladder.
#[derive(Clone, Debug, PartialEq)]
pub struct Prop1Config<S> {
    pub p: u32,
    pub s: S,
    pub theta: S,
    pub rho0: S,
    pub horizon: S,
    pub dx: S,
    pub base_length: S,
    pub levels: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecayVerdict {
    /// `c` decreases strictly and loses more than 10% over the ladder.
    Degrading,
    /// `c` varies by at most 10% of its largest value.
    Stable,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prop1Report<S> {
    pub lengths: Vec<S>,
    pub n: Vec<usize>,
    pub c: Vec<S>,
    pub monotone_decreasing: bool,
    /// `(max c - min c) / max c`.
    pub spread: S,
    pub verdict: DecayVerdict,
    /// `s < (p-1)θ`, the side on which decay is expected to be lost.
    pub ill_posed_side: bool,
}

/// Evolves `ℱ^{-1}(e^{-ρ₀⟨ξ⟩^{1/θ}})` under `D_t + D^p` to `T` on the domains
/// `[-L/4, 3L/4]`, `L = L₀ 2^ℓ`, at fixed spacing, and fits the spatial
/// decay constant of `|u(T)|` at exponent `1/s` on each.
pub fn prop1_experiment<S: Real>(cfg: &Prop1Config<S>) -> Result<Prop1Report<S>> {
    if cfg.levels < 3 {
        return Err(invalid("levels", "need at least 3 refinement levels"));
    }
    if !(cfg.s > S::one()) || !(cfg.theta > S::one()) || !(cfg.rho0 > S::zero()) {
        return Err(invalid("s", "need s > 1, theta > 1, rho0 > 0"));
    }
    if !(cfg.horizon >= S::zero()) || !(cfg.dx > S::zero()) || !(cfg.base_length > S::zero()) {
        return Err(invalid("T", "need T >= 0, dx > 0 and a positive base length"));
    }
    let op_a = TimeProfile::Constant(S::one());
    let mut lengths = Vec::new();
    let mut ns = Vec::new();
    let mut cs = Vec::new();
    for level in 0..cfg.levels {
        let len = cfg.base_length * S::from_usize_lossy(1 << level);
        let n_f = (len / cfg.dx).round();
        let n = n_f.to_usize().ok_or_else(|| invalid("dx", "grid size not representable"))?;
        let grid = Grid::new(n, -len / S::lit(4.0), S::lit(3.0) * len / S::lit(4.0))?;
        let phi = crate::spaces::wave_packet(&grid, cfg.rho0, cfg.theta)?;
        let u = exact_free_solution(cfg.p, &op_a, &phi, cfg.horizon);
        let fit = decay_fit(&u, &[cfg.s])?;
        lengths.push(len);
        ns.push(n);
        cs.push(fit.c);
    }
    let monotone_decreasing = cs.windows(2).all(|w| w[1] < w[0]);
    let max = cs.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
    let min = cs.iter().fold(S::infinity(), |a, &b| a.min(b));
    let spread = (max - min) / max.abs();
    let last = *cs.last().expect("levels >= 3");
    let verdict = if monotone_decreasing && last < S::lit(0.9) * cs[0] {
        DecayVerdict::Degrading
    } else if spread <= S::lit(0.1) {
        DecayVerdict::Stable
    } else {
        DecayVerdict::Inconclusive
    };
    let pm1 = S::from_usize_lossy(cfg.p as usize - 1);
    Ok(Prop1Report { lengths, n: ns, c: cs, monotone_decreasing, spread, verdict, ill_posed_side: cfg.s < pm1 * cfg.theta })
}

/// Interval arithmetic behind the `E_k(0)` lower bound.
#[derive(Clone, Debug, PartialEq)]
pub struct GRegionReport {
    /// `G_{1,k} = [7σ_k/8, 7σ_k/8 + σ_k^{-p}]`.
    pub g1: (BigRational, BigRational),
    /// `G_{2,k} = [7σ_k/8 - σ_k^{-p}, 7σ_k/8 + σ_k^{-p}]`.
    pub g2: (BigRational, BigRational),
    /// Largest `|η - σ_k|` over the sampled `G_{1,k}`.
    pub max_eta_offset: BigRational,
    /// Largest `σ_k^{p-1}|ξ - η|` over the sampled `G_{1,k} × G_{2,k}`.
    pub max_scaled_gap: BigRational,
    /// `|η - σ_k| ≤ σ_k/8` at every sample.
    pub eta_bound_holds: bool,
    /// `σ_k^{p-1}|ξ - η| ≤ 2σ_k^{-1}` at every sample pair.
    pub gap_bound_holds: bool,
    pub samples: usize,
}

/// Checks the region inequalities on an exact rational lattice with `m`
/// subintervals per `σ_k^{-p}`.
pub fn g_region_witness<S: Real>(sigma_k: S, p: u32, m: usize) -> Result<GRegionReport> {
    if m < 8 {
        return Err(invalid("m", "the auxiliary lattice needs at least 8 subintervals to resolve G"));
    }
    if p < 2 {
        return Err(invalid("p", "order must be at least 2"));
    }
    let sk = rational("sigma_k", sigma_k)?;
    if sk <= BigRational::from_integer(BigInt::from(1)) {
        return Err(invalid("sigma_k", "must exceed 1"));
    }
    let width = num_traits::pow(sk.recip(), p as usize);
    let center = &sk * BigRational::new(BigInt::from(7), BigInt::from(8));
    let g1 = (center.clone(), &center + &width);
    let g2 = (&center - &width, &center + &width);
    let scale = num_traits::pow(sk.clone(), p as usize - 1);
    let eta_bound = &sk / BigRational::from_integer(BigInt::from(8));
    let gap_bound = BigRational::from_integer(BigInt::from(2)) / &sk;
    let mm = BigRational::from_integer(BigInt::from(m as u64));
    let etas: Vec<BigRational> =
        (0..=m).map(|i| &g1.0 + &width * BigRational::from_integer(BigInt::from(i as u64)) / &mm).collect();
    let xis: Vec<BigRational> = (0..=2 * m)
        .map(|j| &g2.0 + &width * BigRational::from_integer(BigInt::from(j as u64)) / &mm)
        .collect();
    let mut max_eta = BigRational::from_integer(BigInt::from(0));
    let mut max_gap = max_eta.clone();
    for eta in &etas {
        let off = (eta - &sk).abs();
        if off > max_eta {
            max_eta = off;
        }
        for xi in &xis {
            let gap = &scale * (xi - eta).abs();
            if gap > max_gap {
                max_gap = gap;
            }
        }
    }
    Ok(GRegionReport {
        eta_bound_holds: max_eta <= eta_bound,
        gap_bound_holds: max_gap <= gap_bound,
        g1,
        g2,
        max_eta_offset: max_eta,
        max_scaled_gap: max_gap,
        samples: etas.len() * xis.len(),
    })
}

/// Inputs of [`lower_bound_fit`].
#[derive(Clone, Debug, PartialEq)]
pub struct LowerBoundConfig<S> {
    pub p: u32,
    pub s: S,
    pub theta: S,
    pub rho0: S,
    pub rho2: S,
    pub sigma_k: Vec<S>,
    pub lambda: S,
    pub theta1: S,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LowerBoundFit<S> {
    pub e0: Vec<S>,
    /// Slope of `log(-log E_k(0))` against `log σ_k`.
    pub exponent: S,
    /// `max{(p-1)/s, 1/θ}`.
    pub bound: S,
    pub pass: bool,
    /// Smallest `ĥ(σ_k^{p-1}(ξ - η)) / ĥ(0)` over the G-region corners.
    pub min_hat_ratio: S,
}

/// Measures how fast `E_k(0)` of the damped packet decays in `σ_k`, using the
/// positive definite bump in both cutoff factors.
pub fn lower_bound_fit<S: Real>(cfg: &LowerBoundConfig<S>) -> Result<LowerBoundFit<S>> {
    if cfg.sigma_k.len() < 3 {
        return Err(invalid("sigma_k", "needs at least 3 values"));
    }
    let bump = make_bump(BumpKind::PositiveDefinite, S::lit(2.0).min(cfg.theta1))?;
    let packet = PacketParams { rho0: cfg.rho0, theta: cfg.theta };
    let e0: Vec<S> = cfg
        .sigma_k
        .par_iter()
        .map(|&sk| {
            let grid = GridPolicy::Auto.resolve(sk, cfg.p)?;
            let g = packet_datum(&grid, packet, sk, cfg.p, cfg.rho2, cfg.s)?;
            let le = LocalizedEnergy::new(&grid, &bump, sk, cfg.p, cfg.lambda, cfg.theta1)?;
            Ok(le.eval(&g).0)
        })
        .collect::<Result<_>>()?;
    if e0.iter().any(|&e| !(e > S::zero() && e < S::one())) {
        return Err(Error::DegenerateFit { usable: 0 });
    }
    let minus_log: Vec<S> = e0.iter().map(|e| -e.ln()).collect();
    let exponent = log_log_slope(&cfg.sigma_k, &minus_log);
    let pm1 = S::from_usize_lossy(cfg.p as usize - 1);
    let bound = (pm1 / cfg.s).max(S::one() / cfg.theta);
    let h0 = bump.fourier(S::zero()).expect("positive definite bump");
    let min_hat_ratio = cfg
        .sigma_k
        .iter()
        .map(|&sk| {
            // |ξ - η| ≤ 2σ_k^{-p} on G_{1,k} × G_{2,k}
            let arg = sk.powi(cfg.p as i32 - 1) * S::lit(2.0) * sk.powi(-(cfg.p as i32));
            bump.fourier(arg).expect("positive definite bump") / h0
        })
        .fold(S::infinity(), |a, b| a.min(b));
    Ok(LowerBoundFit {
        pass: exponent <= bound + S::lit(0.1),
        e0,
        exponent,
        bound,
        min_hat_ratio,
    })
}
