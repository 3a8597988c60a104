//! Conjugation of a p-evolution operator by the spatial weight
//! `e^{δ⟨x⟩^{1/s}}`: `P_δ = e^{δ⟨x⟩^{1/s}} P e^{-δ⟨x⟩^{1/s}}`.
//!
//! With `E_ℓ(x) = e^{δ⟨x⟩^{1/s}} D^ℓ e^{-δ⟨x⟩^{1/s}}`, Leibniz gives
//! `e^{w} D^m e^{-w} = Σ_ℓ C(m, ℓ) E_ℓ D^{m-ℓ}`, so the coefficient of
//! `D^{p-k}` in `P_δ` is
//!
//! ```text
//! a_{p-k} + a_p C(p,k) E_k + Σ_{j<k} a_{p-j} C(p-j, k-j) E_{k-j}
//!          └── ã_{p-k} ──┘   └──────────── d_{p-k} ─────────────┘
//! ```
//!
//! `b_{p-k} = C(p,k) E_k` and `c_{p-j-ℓ} = C(p-j, ℓ) E_ℓ`.

use std::sync::Arc;

use num_complex::Complex;

use crate::error::{invalid, Error, Result};
use crate::grid::{l2_norm, Grid, GridFunction};
use crate::operators::{
    apply_spatial_part_unchecked, fit_gevrey_constant, weighted_sups, AuditRegion, Coefficient,
    PEvolutionOp,
};
use crate::scalar::{binomial, bracket, Real};

/// Largest `k` handled by the partition sum.
pub const PARTITION_CAP: usize = 12;
/// Largest `β` audited by [`verify_decay_bounds`].
pub const BOUND_BETA_CAP: usize = 6;
/// Relative change of a weighted sup under region doubling accepted as stable.
pub const BOUND_STABILITY_TOL: f64 = 0.02;

/// Integer partitions of `k` as multiplicity vectors `m[j]` (`Σ j m[j] = k`)
/// with the exact Faà di Bruno weight `k! / Π (m_j! (j!)^{m_j})`.
fn partitions(k: usize) -> Vec<(Vec<u32>, u128)> {
    fn fact(n: usize) -> u128 {
        (1..=n as u128).product()
    }
    fn rec(rem: usize, max_part: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if rem == 0 {
            out.push(cur.clone());
            return;
        }
        for part in (1..=max_part.min(rem)).rev() {
            cur[part] += 1;
            rec(rem - part, part, cur, out);
            cur[part] -= 1;
        }
    }
    let mut raw = Vec::new();
    rec(k, k, &mut vec![0; k + 1], &mut raw);
    raw.into_iter()
        .map(|m| {
            let mut denom: u128 = 1;
            for (j, &mj) in m.iter().enumerate().skip(1) {
                denom *= fact(mj as usize) * fact(j).pow(mj);
            }
            let w = fact(k) / denom;
            (m, w)
        })
        .collect()
}

/// Evaluates `E_0 .. E_kmax` at a point, sharing the bracket derivatives.
#[derive(Clone, Debug)]
pub struct WeightDerivatives<S> {
    delta: S,
    s: S,
    kmax: usize,
    parts: Vec<Vec<(Vec<u32>, u128)>>,
}

impl<S: Real> WeightDerivatives<S> {
    pub fn new(delta: S, s: S, kmax: usize) -> Result<Self> {
        if kmax > PARTITION_CAP {
            return Err(Error::DerivativeCap { order: kmax, cap: PARTITION_CAP });
        }
        if !(delta >= S::zero()) {
            return Err(invalid("delta", "must be nonnegative"));
        }
        if !(s > S::one()) {
            return Err(invalid("s", "must exceed 1"));
        }
        Ok(Self { delta, s, kmax, parts: (0..=kmax).map(partitions).collect() })
    }

    /// `∂^m ⟨x⟩^{1/s}` for `m = 0..=kmax` from the recurrence
    /// `(1+x²) g^{(m+1)} = 2(q-m) x g^{(m)} + m(2q-m+1) g^{(m-1)}`, `q = 1/(2s)`.
    pub fn bracket_power_derivatives(&self, x: S) -> Vec<S> {
        let q = S::one() / (S::lit(2.0) * self.s);
        let one_x2 = S::one() + x * x;
        let mut g = Vec::with_capacity(self.kmax + 1);
        g.push(one_x2.powf(q));
        for m in 0..self.kmax {
            let mf = S::from_usize_lossy(m);
            let mut next = S::lit(2.0) * (q - mf) * x * g[m];
            if m > 0 {
                next = next + mf * (S::lit(2.0) * q - mf + S::one()) * g[m - 1];
            }
            g.push(next / one_x2);
        }
        g
    }

    /// `[E_0(x), …, E_kmax(x)]`.
    pub fn eval_all(&self, x: S) -> Vec<Complex<S>> {
        let g = self.bracket_power_derivatives(x);
        // f^{(j)} for f = -δ ⟨x⟩^{1/s}
        let f: Vec<S> = g.iter().map(|&v| -self.delta * v).collect();
        let mut out = Vec::with_capacity(self.kmax + 1);
        for (k, parts) in self.parts.iter().enumerate() {
            let mut acc = S::zero();
            for (m, w) in parts {
                let mut term = S::lit(*w as f64);
                for (j, &mj) in m.iter().enumerate().skip(1) {
                    if mj > 0 {
                        term = term * f[j].powi(mj as i32);
                    }
                }
                acc = acc + term;
            }
            // D^k = (-i)^k ∂^k
            let z = match k % 4 {
                0 => Complex::new(acc, S::zero()),
                1 => Complex::new(S::zero(), -acc),
                2 => Complex::new(-acc, S::zero()),
                _ => Complex::new(S::zero(), acc),
            };
            out.push(z);
        }
        out
    }
}

/// `e^{δ⟨x⟩^{1/s}} D^k e^{-δ⟨x⟩^{1/s}}` at `x`, by the Faà di Bruno partition sum.
pub fn exp_weight_derivative<S: Real>(delta: S, s: S, k: usize, x: S) -> Result<Complex<S>> {
    let w = WeightDerivatives::new(delta, s, k)?;
    Ok(w.eval_all(x)[k])
}

/// `b_{p-k}(x) = C(p, k) E_k(x)` on the grid points.
pub fn conjugate_b<S: Real>(p: u32, k: usize, delta: S, s: S, grid: &Grid<S>) -> Result<Vec<Complex<S>>> {
    if k == 0 || k > p as usize {
        return Err(invalid("k", format!("must lie in 1..={p}")));
    }
    let w = WeightDerivatives::new(delta, s, k)?;
    let binom = S::lit(binomial(p as usize, k) as f64);
    Ok((0..grid.n()).map(|i| w.eval_all(grid.x(i))[k] * binom).collect())
}

/// Shared evaluation of the conjugated coefficient pieces at arbitrary `(t, x)`.
struct Kernel<S: Real> {
    op: PEvolutionOp<S>,
    weights: WeightDerivatives<S>,
}

impl<S: Real> Kernel<S> {
    fn lower(&self, j: usize, t: S, x: S) -> Complex<S> {
        self.op.coefficient(j).map_or(Complex::new(S::zero(), S::zero()), |c| c.eval(t, x))
    }

    fn a_tilde(&self, k: usize, t: S, e: &[Complex<S>]) -> Complex<S> {
        let p = self.op.p() as usize;
        e[k] * (self.op.a_p().eval(t) * S::lit(binomial(p, k) as f64))
    }

    fn d(&self, k: usize, t: S, x: S, e: &[Complex<S>]) -> Complex<S> {
        let p = self.op.p() as usize;
        let mut acc = Complex::new(S::zero(), S::zero());
        for j in 1..k {
            if self.op.coefficient(j).is_some() {
                acc = acc + self.lower(j, t, x) * e[k - j] * S::lit(binomial(p - j, k - j) as f64);
            }
        }
        acc
    }

    fn a_delta(&self, k: usize, t: S, x: S) -> Complex<S> {
        let e = self.weights.eval_all(x);
        self.lower(k, t, x) + self.a_tilde(k, t, &e) + self.d(k, t, x, &e)
    }
}

/// Conjugated operator plus sampled coefficient tables at `t = 0`.
pub struct ConjugationResult<S: Real> {
    pub p_delta: PEvolutionOp<S>,
    pub delta: S,
    pub s: S,
    /// `(k, b_{p-k})` for `k = 1..=p`.
    pub b: Vec<(usize, Vec<Complex<S>>)>,
    /// `((j, ℓ), c_{p-j-ℓ})` for lower coefficients present in `P`, `ℓ = 1..=p-j`.
    pub c: Vec<((usize, usize), Vec<Complex<S>>)>,
    /// `(k, d_{p-k})` for `k = 2..=p`.
    pub d: Vec<(usize, Vec<Complex<S>>)>,
    /// `(k, ã_{p-k} = a_p b_{p-k})` for `k = 1..=p`.
    pub a_tilde: Vec<(usize, Vec<Complex<S>>)>,
    /// `(j, a^{(δ)}_{p-j})` for `j = 1..=p`.
    pub a_delta: Vec<(usize, Vec<Complex<S>>)>,
    kernel: Arc<Kernel<S>>,
}

impl<S: Real> std::fmt::Debug for ConjugationResult<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConjugationResult")
            .field("p_delta", &self.p_delta)
            .field("delta", &self.delta)
            .field("s", &self.s)
            .finish()
    }
}

/// Builds `P_δ`, keeping the principal part and replacing each lower
/// coefficient by `a_{p-k} + ã_{p-k} + d_{p-k}`.
pub fn conjugate_operator<S: Real>(
    op: &PEvolutionOp<S>,
    delta: S,
    s: S,
    grid: &Grid<S>,
) -> Result<ConjugationResult<S>> {
    let p = op.p() as usize;
    let weights = WeightDerivatives::new(delta, s, p)?;
    let kernel = Arc::new(Kernel { op: op.clone(), weights });
    let time_dependent = op.is_time_dependent();
    let mut lower = Vec::new();
    for k in 1..=p {
        if delta == S::zero() && op.coefficient(k).is_none() {
            continue;
        }
        let kern = kernel.clone();
        let mut coef = Coefficient::new(k, format!("a^δ_{{p-{k}}}"), time_dependent, move |t, x| {
            kern.a_delta(k, t, x)
        });
        if let Some(orig) = op.coefficient(k) {
            coef = coef.with_decay(orig.decay_sigma, orig.gevrey_theta0);
        }
        lower.push(coef);
    }
    let p_delta = PEvolutionOp::new(op.p(), op.a_p().clone(), lower, op.horizon())?;

    let t0 = S::zero();
    let pts: Vec<S> = (0..grid.n()).map(|i| grid.x(i)).collect();
    let e_tab: Vec<Vec<Complex<S>>> = pts.iter().map(|&x| kernel.weights.eval_all(x)).collect();
    let b = (1..=p)
        .map(|k| {
            let bin = S::lit(binomial(p, k) as f64);
            (k, e_tab.iter().map(|e| e[k] * bin).collect())
        })
        .collect();
    let mut c = Vec::new();
    for j in 1..p {
        if op.coefficient(j).is_none() {
            continue;
        }
        for l in 1..=(p - j) {
            let bin = S::lit(binomial(p - j, l) as f64);
            c.push(((j, l), e_tab.iter().map(|e| e[l] * bin).collect()));
        }
    }
    let d = (2..=p)
        .map(|k| (k, pts.iter().zip(&e_tab).map(|(&x, e)| kernel.d(k, t0, x, e)).collect()))
        .collect();
    let a_tilde = (1..=p)
        .map(|k| (k, e_tab.iter().map(|e| kernel.a_tilde(k, t0, e)).collect()))
        .collect();
    let a_delta = (1..=p)
        .map(|k| (k, pts.iter().map(|&x| kernel.a_delta(k, t0, x)).collect()))
        .collect();
    Ok(ConjugationResult { p_delta, delta, s, b, c, d, a_tilde, a_delta, kernel })
}

/// Relative L² residual between `P_δ v` and `e^{δ⟨x⟩^{1/s}} P (e^{-δ⟨x⟩^{1/s}} v)`.
pub fn verify_conjugation_identity<S: Real>(
    op: &PEvolutionOp<S>,
    delta: S,
    s: S,
    grid: &Grid<S>,
    v: &GridFunction<S>,
    t: S,
) -> Result<S> {
    if v.grid() != grid {
        return Err(Error::GridMismatch);
    }
    let conj = conjugate_operator(op, delta, s, grid)?;
    let lhs = apply_spatial_part_unchecked(&conj.p_delta, v, t);
    let clamp = S::exp_clamp();
    let mut w = v.clone();
    let mut weights = Vec::with_capacity(grid.n());
    for (i, z) in w.values_mut().iter_mut().enumerate() {
        let e = delta * bracket(grid.x(i)).powf(S::one() / s);
        if e > clamp {
            return Err(Error::WeightOverflow { weight: "delta", at: grid.x(i).to_f64_lossy() });
        }
        weights.push(e.exp());
        *z = *z / e.exp();
    }
    let mut rhs = apply_spatial_part_unchecked(op, &w, t);
    for (z, wt) in rhs.values_mut().iter_mut().zip(&weights) {
        *z = *z * *wt;
    }
    if !rhs.is_finite() {
        return Err(Error::WeightOverflow { weight: "delta", at: f64::NAN });
    }
    let scale = l2_norm(&rhs).max(l2_norm(&lhs));
    let diff = l2_norm(&lhs.sub(&rhs)?);
    Ok(if scale == S::zero() { diff } else { diff / scale })
}

/// Audit entry for one conjugated coefficient family.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundAudit<S> {
    /// `"a_tilde"` or `"d"`.
    pub family: &'static str,
    pub k: usize,
    pub sups: Vec<S>,
    pub sups_half: Vec<S>,
    pub c_fit: S,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundsReport<S> {
    pub entries: Vec<BoundAudit<S>>,
    pub pass: bool,
}

/// Audits `sup ⟨x⟩^{k(1-1/s)+β} |D^β ã_{p-k}|` and the same for `d_{p-k}`,
/// for `β ≤ beta_max`, on `region` and on its half: sups must be finite and
/// move by less than 2% between the two.
pub fn verify_decay_bounds<S: Real>(
    result: &ConjugationResult<S>,
    s: S,
    theta0: S,
    beta_max: usize,
    region: &AuditRegion<S>,
) -> Result<BoundsReport<S>> {
    if beta_max > BOUND_BETA_CAP {
        return Err(Error::DerivativeCap { order: beta_max, cap: BOUND_BETA_CAP });
    }
    if !(s > S::one()) || !(theta0 > S::one()) {
        return Err(invalid("s", "need s > 1 and theta0 > 1"));
    }
    let p = result.p_delta.p() as usize;
    let td = result.p_delta.is_time_dependent();
    let mut entries = Vec::new();
    for k in 1..=p {
        let weight = S::from_usize_lossy(k) * (S::one() - S::one() / s);
        for family in ["a_tilde", "d"] {
            if family == "d" && k < 2 {
                continue;
            }
            let kern = result.kernel.clone();
            let f = move |t: S, x: S| {
                let e = kern.weights.eval_all(x);
                if family == "a_tilde" {
                    kern.a_tilde(k, t, &e)
                } else {
                    kern.d(k, t, x, &e)
                }
            };
            let (sups, sups_half) = weighted_sups(&f, weight, beta_max, region, td)?;
            let (c_fit, _) = fit_gevrey_constant(&sups, theta0);
            let pass = sups.iter().zip(&sups_half).all(|(&a, &b)| {
                a.is_finite() && (a - b).abs() <= S::lit(BOUND_STABILITY_TOL) * a.max(S::min_positive_value())
            });
            entries.push(BoundAudit { family, k, sups, sups_half, c_fit, pass });
        }
    }
    let pass = entries.iter().all(|e| e.pass);
    Ok(BoundsReport { entries, pass })
}
