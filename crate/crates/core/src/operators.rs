//! p-evolution operators `D_t + a_p(t) D^p + Σ_j a_{p-j}(t, x) D^{p-j}` with
//! `D = -i ∂_x`, the model operators used by the experiments, and an audit of
//! the polynomial decay hypothesis on lower order coefficients.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex;

use crate::diff::PatchDiff;
use crate::error::{invalid, Error, Result};
use crate::expr::Expr;
use crate::grid::{forward_transform, inverse_transform, GridFunction, Spectrum};
use crate::scalar::{bracket, c, ci, ln_factorial, Real};

/// Relative spectral tail above which [`apply_spatial_part`] refuses the input.
pub const RESOLUTION_TOL: f64 = 1e-10;
/// Largest `β` accepted by [`check_decay_condition`].
pub const DECAY_BETA_CAP: usize = 8;
/// Time samples used by coefficient audits.
pub const AUDIT_TIMES: usize = 16;

type CoefFn<S> = dyn Fn(S, S) -> Complex<S> + Send + Sync;
type TimeFn<S> = dyn Fn(S) -> S + Send + Sync;

/// Real principal coefficient `a_p(t)`.
#[derive(Clone)]
pub enum TimeProfile<S: Real> {
    Constant(S),
    Function { f: Arc<TimeFn<S>>, label: String },
}

impl<S: Real> fmt::Debug for TimeProfile<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(v) => write!(f, "Constant({v})"),
            Self::Function { label, .. } => write!(f, "Function({label})"),
        }
    }
}

// 5-point Gauss-Legendre nodes and weights on [-1, 1].
const GL_NODES: [f64; 5] = [
    0.0,
    -0.538_469_310_105_683_1,
    0.538_469_310_105_683_1,
    -0.906_179_845_938_664,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
    0.236_926_885_056_189_1,
];
const GL_PANELS: usize = 32;

impl<S: Real> TimeProfile<S> {
    pub fn function(label: impl Into<String>, f: impl Fn(S) -> S + Send + Sync + 'static) -> Self {
        Self::Function { f: Arc::new(f), label: label.into() }
    }

    pub fn eval(&self, t: S) -> S {
        match self {
            Self::Constant(v) => *v,
            Self::Function { f, .. } => f(t),
        }
    }

    /// `A(t) = ∫_0^t a_p`, composite Gauss-Legendre for non-constant profiles.
    pub fn integral(&self, t: S) -> S {
        match self {
            Self::Constant(v) => *v * t,
            Self::Function { f, .. } => {
                let h = t / S::from_usize_lossy(GL_PANELS);
                let half = h / S::lit(2.0);
                let mut acc = S::zero();
                for k in 0..GL_PANELS {
                    let mid = h * S::from_usize_lossy(k) + half;
                    for (xn, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
                        acc = acc + S::lit(w) * f(mid + half * S::lit(*xn));
                    }
                }
                acc * half
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Self::Constant(_))
    }

    pub fn label(&self) -> String {
        match self {
            Self::Constant(v) => format!("{v}"),
            Self::Function { label, .. } => label.clone(),
        }
    }

    /// `t ↦ -a(T - t)`, the profile that retraces an evolution backwards.
    pub fn reversed(&self, horizon: S) -> Self {
        match self {
            Self::Constant(v) => Self::Constant(-*v),
            Self::Function { f, label } => {
                let f = f.clone();
                Self::Function { f: Arc::new(move |t| -f(horizon - t)), label: format!("-({label})(T-t)") }
            }
        }
    }
}

/// Lower order coefficient `a_{p-j}(t, x)` with optional decay metadata.
#[derive(Clone)]
pub struct Coefficient<S: Real> {
    eval: Arc<CoefFn<S>>,
    pub j: usize,
    pub decay_sigma: Option<S>,
    pub gevrey_theta0: Option<S>,
    pub label: String,
    pub time_dependent: bool,
}

impl<S: Real> fmt::Debug for Coefficient<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Coefficient")
            .field("j", &self.j)
            .field("label", &self.label)
            .field("decay_sigma", &self.decay_sigma)
            .field("gevrey_theta0", &self.gevrey_theta0)
            .finish()
    }
}

impl<S: Real> Coefficient<S> {
    pub fn new(
        j: usize,
        label: impl Into<String>,
        time_dependent: bool,
        f: impl Fn(S, S) -> Complex<S> + Send + Sync + 'static,
    ) -> Self {
        Self {
            eval: Arc::new(f),
            j,
            decay_sigma: None,
            gevrey_theta0: None,
            label: label.into(),
            time_dependent,
        }
    }

    pub fn zero(j: usize) -> Self {
        Self::new(j, "0", false, |_, _| Complex::new(S::zero(), S::zero()))
    }

    pub fn from_expr(j: usize, src: &str) -> std::result::Result<Self, crate::expr::ParseError> {
        let e = Expr::parse(src)?;
        let td = e.depends_on_t();
        Ok(Self::new(j, src, td, move |t, x| e.eval(t, x)))
    }

    pub fn with_decay(mut self, sigma: Option<S>, theta0: Option<S>) -> Self {
        self.decay_sigma = sigma;
        self.gevrey_theta0 = theta0;
        self
    }

    #[inline]
    pub fn eval(&self, t: S, x: S) -> Complex<S> {
        (self.eval)(t, x)
    }

    pub fn closure(&self) -> Arc<CoefFn<S>> {
        self.eval.clone()
    }

    /// Coefficient values on the grid points at time `t`.
    pub fn sample(&self, grid: &crate::grid::Grid<S>, t: S) -> Vec<Complex<S>> {
        (0..grid.n()).map(|i| self.eval(t, grid.x(i))).collect()
    }

    fn reversed(&self, horizon: S) -> Self {
        let f = self.eval.clone();
        Self {
            eval: Arc::new(move |t, x| -f(horizon - t, x)),
            j: self.j,
            decay_sigma: self.decay_sigma,
            gevrey_theta0: self.gevrey_theta0,
            label: format!("-({})(T-t)", self.label),
            time_dependent: self.time_dependent,
        }
    }
}

/// `D_t + a_p(t) D^p + Σ_{j=1..p} a_{p-j}(t, x) D^{p-j}` on `[0, horizon]`.
#[derive(Clone, Debug)]
pub struct PEvolutionOp<S: Real> {
    p: u32,
    a_p: TimeProfile<S>,
    lower: Vec<Coefficient<S>>,
    horizon: S,
}

const PRINCIPAL_SAMPLES: usize = 256;

impl<S: Real> PEvolutionOp<S> {
    /// Validates the order, the coefficient indices and that `a_p` stays away
    /// from zero on sampled times in `[0, horizon]`.
    pub fn new(p: u32, a_p: TimeProfile<S>, lower: Vec<Coefficient<S>>, horizon: S) -> Result<Self> {
        if p < 2 {
            return Err(invalid("p", format!("order must be at least 2, got {p}")));
        }
        if !(horizon > S::zero()) {
            return Err(invalid("horizon", "must be positive"));
        }
        let mut seen = vec![false; p as usize + 1];
        for c in &lower {
            if c.j == 0 || c.j > p as usize {
                return Err(invalid("lower", format!("index j = {} outside 1..={p}", c.j)));
            }
            if seen[c.j] {
                return Err(invalid("lower", format!("duplicate coefficient for j = {}", c.j)));
            }
            seen[c.j] = true;
        }
        let op = Self { p, a_p, lower, horizon };
        let min = op.principal_min();
        if !(min > S::zero()) {
            return Err(invalid("a_p", format!("|a_p| must stay positive on [0, T]; sampled minimum {min}")));
        }
        Ok(op)
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn a_p(&self) -> &TimeProfile<S> {
        &self.a_p
    }

    pub fn lower(&self) -> &[Coefficient<S>] {
        &self.lower
    }

    pub fn horizon(&self) -> S {
        self.horizon
    }

    pub fn with_horizon(mut self, horizon: S) -> Result<Self> {
        self.horizon = horizon;
        Self::new(self.p, self.a_p, self.lower, horizon)
    }

    pub fn coefficient(&self, j: usize) -> Option<&Coefficient<S>> {
        self.lower.iter().find(|c| c.j == j)
    }

    /// Sampled `inf |a_p(t)|` over `[0, horizon]`.
    pub fn principal_min(&self) -> S {
        (0..=PRINCIPAL_SAMPLES)
            .map(|k| {
                let t = self.horizon * S::from_usize_lossy(k) / S::from_usize_lossy(PRINCIPAL_SAMPLES);
                self.a_p.eval(t).abs()
            })
            .fold(S::infinity(), |a, b| a.min(b))
    }

    /// Drops every lower order term.
    pub fn principal_only(&self) -> Self {
        Self { p: self.p, a_p: self.a_p.clone(), lower: Vec::new(), horizon: self.horizon }
    }

    /// The operator whose forward evolution over `[0, T]` undoes this one.
    pub fn time_reversed(&self) -> Self {
        Self {
            p: self.p,
            a_p: self.a_p.reversed(self.horizon),
            lower: self.lower.iter().map(|c| c.reversed(self.horizon)).collect(),
            horizon: self.horizon,
        }
    }

    pub fn is_time_dependent(&self) -> bool {
        !self.a_p.is_constant() || self.lower.iter().any(|c| c.time_dependent)
    }

    pub fn describe(&self) -> String {
        let mut s = format!("D_t + ({})D^{}", self.a_p.label(), self.p);
        let mut lower: Vec<_> = self.lower.iter().collect();
        lower.sort_by_key(|c| c.j);
        for c in lower {
            s.push_str(&format!(" + ({})D^{}", c.label, self.p as usize - c.j));
        }
        s
    }
}

/// `D_t + D^p + i ⟨x⟩^{-σ} D^{p-1}` for `σ ∈ ((p-2)/(p-1), 1)`.
pub fn model_m<S: Real>(p: u32, sigma: S) -> Result<PEvolutionOp<S>> {
    if p < 2 {
        return Err(invalid("p", format!("order must be at least 2, got {p}")));
    }
    let lo = S::from_usize_lossy(p as usize - 2) / S::from_usize_lossy(p as usize - 1);
    if !(sigma > lo && sigma < S::one()) {
        return Err(invalid("sigma", format!("σ must lie in (({p}-2)/({p}-1), 1) = ({lo}, 1), got {sigma}")));
    }
    let coef = Coefficient::new(1, format!("i<x>^-{sigma}"), false, move |_: S, x: S| ci(bracket(x).powf(-sigma)))
        .with_decay(Some(sigma), None);
    PEvolutionOp::new(p, TimeProfile::Constant(S::one()), vec![coef], S::one())
}

/// `D_t + a_p(t) D^p` with no lower order terms.
pub fn free_op<S: Real>(p: u32, a_p: TimeProfile<S>) -> Result<PEvolutionOp<S>> {
    PEvolutionOp::new(p, a_p, Vec::new(), S::one())
}

fn spectral_tail<S: Real>(spec: &Spectrum<S>) -> S {
    spec.tail_ratio(S::lit(0.1)).0
}

/// `D^m u` from a precomputed spectrum; the Nyquist bin is dropped for odd `m`.
pub(crate) fn derivative_from_spectrum<S: Real>(spec: &Spectrum<S>, m: u32) -> GridFunction<S> {
    let grid = spec.grid();
    let mut work = spec.clone();
    if m > 0 {
        for (z, &xi) in work.values_mut().iter_mut().zip(grid.xi()) {
            *z = *z * xi.powi(m as i32);
        }
        if m % 2 == 1 {
            work.zero_nyquist();
        }
    }
    inverse_transform(&work)
}

/// `(P - D_t) u` without the resolution check.
pub fn apply_spatial_part_unchecked<S: Real>(
    op: &PEvolutionOp<S>,
    u: &GridFunction<S>,
    t: S,
) -> GridFunction<S> {
    let spec = forward_transform(u);
    apply_from_spectrum(op, &spec, t)
}

pub(crate) fn apply_from_spectrum<S: Real>(
    op: &PEvolutionOp<S>,
    spec: &Spectrum<S>,
    t: S,
) -> GridFunction<S> {
    let grid = spec.grid().clone();
    let ap = op.a_p.eval(t);
    let mut out: Vec<Complex<S>> =
        derivative_from_spectrum(spec, op.p).into_values().into_iter().map(|z| z * ap).collect();
    for coef in &op.lower {
        let m = op.p - coef.j as u32;
        let d = derivative_from_spectrum(spec, m);
        for (i, (o, z)) in out.iter_mut().zip(d.values()).enumerate() {
            *o = *o + coef.eval(t, grid.x(i)) * *z;
        }
    }
    GridFunction::from_raw(&grid, out)
}

/// `a_p(t) D^p u + Σ_j a_{p-j}(t, ·) D^{p-j} u`. Fails when the spectrum of
/// `u` is not negligible (relative `1e-10`) in the outer tenth of the band.
pub fn apply_spatial_part<S: Real>(
    op: &PEvolutionOp<S>,
    u: &GridFunction<S>,
    t: S,
) -> Result<GridFunction<S>> {
    let spec = forward_transform(u);
    let tail = spectral_tail(&spec);
    if tail > S::lit(RESOLUTION_TOL) {
        return Err(Error::Unresolved { tail: tail.to_f64_lossy() });
    }
    Ok(apply_from_spectrum(op, &spec, t))
}

/// Sampling region and time horizon for coefficient audits.
#[derive(Clone, Copy, Debug)]
pub struct AuditRegion<S> {
    /// Points are drawn from `[-extent, extent]`; stability is judged against
    /// the half extent.
    pub extent: S,
    pub horizon: S,
    pub points: usize,
}

impl<S: Real> AuditRegion<S> {
    pub fn new(extent: S, horizon: S) -> Self {
        Self { extent, horizon, points: 241 }
    }

    /// Symmetric sample points clustered near the origin.
    pub fn samples(&self) -> Vec<S> {
        let k = self.points / 2;
        let mut xs = Vec::with_capacity(2 * k + 1);
        xs.push(S::zero());
        for i in 1..=k {
            let r = S::from_usize_lossy(i) / S::from_usize_lossy(k);
            let x = self.extent * r * r * r;
            xs.push(x);
            xs.push(-x);
        }
        xs
    }

    pub fn times(&self, time_dependent: bool) -> Vec<S> {
        if !time_dependent {
            return vec![S::zero()];
        }
        (0..AUDIT_TIMES)
            .map(|k| self.horizon * S::from_usize_lossy(k) / S::from_usize_lossy(AUDIT_TIMES - 1))
            .collect()
    }
}

/// Per-`β` weighted sups `Q_β = sup |∂^β a| ⟨x⟩^{w + β}` over the full and the
/// half region.
pub(crate) fn weighted_sups<S: Real>(
    f: &(dyn Fn(S, S) -> Complex<S> + Sync),
    weight: S,
    beta_max: usize,
    region: &AuditRegion<S>,
    time_dependent: bool,
) -> Result<(Vec<S>, Vec<S>)> {
    let diff = PatchDiff::<S>::new(128);
    let mut full = vec![S::zero(); beta_max + 1];
    let mut half = vec![S::zero(); beta_max + 1];
    let half_extent = region.extent / S::lit(2.0);
    for t in region.times(time_dependent) {
        for x in region.samples() {
            let scale = bracket(x);
            let ds = diff.derivatives(|y| f(t, y), x, scale, beta_max)?;
            for (beta, d) in ds.iter().enumerate() {
                let q = d.norm() * bracket(x).powf(weight + S::from_usize_lossy(beta));
                full[beta] = full[beta].max(q);
                if x.abs() <= half_extent {
                    half[beta] = half[beta].max(q);
                }
            }
        }
    }
    Ok((full, half))
}

/// `C = max_β (Q_β / β!^{θ0})^{1/(β+1)}`, the least constant with
/// `Q_β ≤ C^{β+1} β!^{θ0}` for every audited `β`. Also returns the per-`β` values.
pub fn fit_gevrey_constant<S: Real>(q: &[S], theta0: S) -> (S, Vec<S>) {
    let per: Vec<S> = q
        .iter()
        .enumerate()
        .map(|(b, &v)| {
            if v == S::zero() {
                S::zero()
            } else {
                ((v.ln() - theta0 * S::lit(ln_factorial(b))) / S::from_usize_lossy(b + 1)).exp()
            }
        })
        .collect();
    (per.iter().fold(S::zero(), |a, &b| a.max(b)), per)
}

/// Outcome of [`check_decay_condition`].
#[derive(Clone, Debug, PartialEq)]
pub struct DecayReport<S> {
    pub q: Vec<S>,
    pub q_half: Vec<S>,
    pub c_fit: S,
    pub c_per_beta: Vec<S>,
    pub pass: bool,
    pub failures: Vec<String>,
}

/// Relative growth of a weighted sup between the half and the full region
/// that is accepted as "bounded".
pub const DOMAIN_GROWTH_TOL: f64 = 0.05;

/// Audits `|∂^β a_{p-j}| ≤ C^{β+1} β!^{θ0} ⟨x⟩^{-σ(p-j)/(p-1) - β}` for
/// `β ≤ beta_max`: the weighted sups must be finite and must not grow when the
/// sampled region doubles.
pub fn check_decay_condition<S: Real>(
    coef: &Coefficient<S>,
    p: u32,
    sigma: S,
    theta0: S,
    beta_max: usize,
    region: &AuditRegion<S>,
) -> Result<DecayReport<S>> {
    if beta_max > DECAY_BETA_CAP {
        return Err(Error::DerivativeCap { order: beta_max, cap: DECAY_BETA_CAP });
    }
    if !(theta0 > S::one()) {
        return Err(invalid("theta0", "must exceed 1"));
    }
    if coef.j == 0 || coef.j > p as usize {
        return Err(invalid("j", "coefficient index outside 1..=p"));
    }
    let weight = sigma * S::from_usize_lossy(p as usize - coef.j) / S::from_usize_lossy(p as usize - 1);
    let f = coef.closure();
    let (q, q_half) = weighted_sups(&*f, weight, beta_max, region, coef.time_dependent)?;
    let (c_fit, c_per_beta) = fit_gevrey_constant(&q, theta0);
    let mut failures = Vec::new();
    for (b, (&full, &half)) in q.iter().zip(&q_half).enumerate() {
        if !full.is_finite() {
            failures.push(format!("beta={b}: weighted sup not finite"));
        } else if full > half * S::lit(1.0 + DOMAIN_GROWTH_TOL) {
            failures.push(format!("beta={b}: weighted sup grows from {half} to {full} as the region doubles"));
        }
    }
    Ok(DecayReport { q, q_half, c_fit, c_per_beta, pass: failures.is_empty(), failures })
}

/// Convenience for tests and configs: `⟨x⟩^{m}` as a coefficient value.
pub fn bracket_power<S: Real>(x: S, m: S) -> Complex<S> {
    c(bracket(x).powf(m))
}
