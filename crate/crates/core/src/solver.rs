//! Time integration of `P u = f`, `u(0) = g`, by an integrating-factor RK4
//! scheme, together with the exact free evolution and energy audits.
//!
//! Writing `∂_t u = i (f - a_p D^p u - L u)` with `L` the lower order part,
//! the variable `v̂ = e^{i A(t) ξ^p} û`, `A(t) = ∫_0^t a_p`, obeys
//! `∂_t v̂ = e^{i A(t) ξ^p} ℱ(i f - i L u)`, which is integrated by classical
//! RK4 while the principal part is propagated exactly.

use std::sync::Arc;

use num_complex::Complex;

use crate::error::{invalid, Error, Result};
use crate::expr::{Expr, ParseError};
use crate::grid::{forward_transform, inverse_transform, l2_norm, Grid, GridFunction, Spectrum};
use crate::operators::{derivative_from_spectrum, PEvolutionOp, TimeProfile, AUDIT_TIMES};
use crate::scalar::Real;
use crate::spaces::{gs_norm, GSParams};

/// Growth factor of the L² norm that ends a run as a blow-up.
pub const BLOW_UP_FACTOR: f64 = 1e12;
/// Most states kept by [`solve`].
pub const MAX_SAMPLES: usize = 512;
/// Safety factor of the step bound.
pub const STEP_SAFETY: f64 = 10.0;

type ForceFn<S> = dyn Fn(S, S) -> Complex<S> + Send + Sync;

/// Right hand side `f(t, x)` of `P u = f`.
#[derive(Clone)]
pub struct Forcing<S: Real> {
    f: Option<Arc<ForceFn<S>>>,
    pub label: String,
}

impl<S: Real> std::fmt::Debug for Forcing<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Forcing({})", self.label)
    }
}

impl<S: Real> Forcing<S> {
    pub fn zero() -> Self {
        Self { f: None, label: "0".into() }
    }

    pub fn new(label: impl Into<String>, f: impl Fn(S, S) -> Complex<S> + Send + Sync + 'static) -> Self {
        Self { f: Some(Arc::new(f)), label: label.into() }
    }

    pub fn from_expr(src: &str) -> std::result::Result<Self, ParseError> {
        let e = Expr::parse(src)?;
        Ok(Self::new(src, move |t, x| e.eval(t, x)))
    }

    pub fn is_zero(&self) -> bool {
        self.f.is_none()
    }

    pub fn eval(&self, t: S, x: S) -> Complex<S> {
        self.f.as_ref().map_or(Complex::new(S::zero(), S::zero()), |f| f(t, x))
    }

    pub fn sample(&self, grid: &Grid<S>, t: S) -> GridFunction<S> {
        let vals = (0..grid.n()).map(|i| self.eval(t, grid.x(i))).collect();
        GridFunction::from_raw(grid, vals)
    }
}

/// Stored states of one run.
#[derive(Clone, Debug)]
pub struct Trajectory<S: Real> {
    pub times: Vec<S>,
    pub states: Vec<GridFunction<S>>,
    pub grid: Grid<S>,
    pub steps: usize,
    pub description: String,
    /// Time at which the norm exceeded the blow-up threshold, if it did.
    pub blow_up: Option<S>,
}

impl<S: Real> Trajectory<S> {
    pub fn final_state(&self) -> &GridFunction<S> {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn final_time(&self) -> S {
        *self.times.last().expect("trajectory holds the initial time")
    }

    pub fn l2_trace(&self) -> EnergyTrace<S> {
        let vals = self.states.iter().map(l2_norm).collect();
        EnergyTrace::new(self.times.clone(), vec![("l2".into(), vals)]).expect("l2 norms are valid")
    }
}

/// Named nonnegative series over common sample times.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyTrace<S> {
    pub times: Vec<S>,
    pub series: Vec<(String, Vec<S>)>,
}

impl<S: Real> EnergyTrace<S> {
    pub fn new(times: Vec<S>, series: Vec<(String, Vec<S>)>) -> Result<Self> {
        let mut t = Self { times, series: Vec::new() };
        for (name, vals) in series {
            t.push(name, vals)?;
        }
        Ok(t)
    }

    pub fn push(&mut self, name: impl Into<String>, values: Vec<S>) -> Result<()> {
        if values.len() != self.times.len() {
            return Err(Error::Length { expected: self.times.len(), got: values.len() });
        }
        if let Some(index) = values.iter().position(|v| !(*v >= S::zero())) {
            return Err(Error::NonFinite { index });
        }
        self.series.push((name.into(), values));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&[S]> {
        self.series.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }
}

/// `e^{±i A ξ^p}` per frequency bin; the angle is formed in `f64`.
fn phase_factors<S: Real>(grid: &Grid<S>, p: u32, a: f64, sign: f64) -> Vec<Complex<S>> {
    grid.xi()
        .iter()
        .map(|&xi| {
            let th = sign * a * xi.to_f64_lossy().powi(p as i32);
            let (s, c) = th.sin_cos();
            Complex::new(S::lit(c), S::lit(s))
        })
        .collect()
}

/// `ℱ^{-1}(e^{-i A(t) ξ^p} ĝ)`, the solution of `D_t u + a_p(t) D^p u = 0`.
pub fn exact_free_solution<S: Real>(
    p: u32,
    a_p: &TimeProfile<S>,
    g: &GridFunction<S>,
    t: S,
) -> GridFunction<S> {
    if t == S::zero() {
        return g.clone();
    }
    let mut spec = forward_transform(g);
    let ph = phase_factors(g.grid(), p, a_p.integral(t).to_f64_lossy(), -1.0);
    for (z, w) in spec.values_mut().iter_mut().zip(&ph) {
        *z = *z * *w;
    }
    inverse_transform(&spec)
}

/// Smallest step count allowed by `steps ≥ 10 T Σ_j sup|a_{p-j}| ξ_max^{p-j}`,
/// with the sup taken over grid points and sampled times.
pub fn required_steps<S: Real>(op: &PEvolutionOp<S>, grid: &Grid<S>, horizon: S) -> usize {
    let times: Vec<S> = if op.is_time_dependent() {
        (0..AUDIT_TIMES)
            .map(|k| horizon * S::from_usize_lossy(k) / S::from_usize_lossy(AUDIT_TIMES - 1))
            .collect()
    } else {
        vec![S::zero()]
    };
    let xi_max = grid.xi_max().to_f64_lossy();
    let mut total = 0.0f64;
    for coef in op.lower() {
        let mut sup = 0.0f64;
        for &t in &times {
            for i in 0..grid.n() {
                sup = sup.max(coef.eval(t, grid.x(i)).norm().to_f64_lossy());
            }
        }
        total += sup * xi_max.powi((op.p() as usize - coef.j) as i32);
    }
    (STEP_SAFETY * horizon.to_f64_lossy() * total).ceil() as usize
}

struct LowerTerm<S: Real> {
    order: u32,
    table: Option<Vec<Complex<S>>>,
    coef: crate::operators::Coefficient<S>,
}

/// Integrating-factor RK4 stepper shared by [`solve`] and [`solve_observed`].
struct Stepper<'a, S: Real> {
    op: &'a PEvolutionOp<S>,
    forcing: &'a Forcing<S>,
    grid: Grid<S>,
    terms: Vec<LowerTerm<S>>,
    cache: Vec<(S, Vec<Complex<S>>)>,
}

impl<'a, S: Real> Stepper<'a, S> {
    fn new(op: &'a PEvolutionOp<S>, forcing: &'a Forcing<S>, grid: &Grid<S>) -> Self {
        let terms = op
            .lower()
            .iter()
            .map(|c| LowerTerm {
                order: op.p() - c.j as u32,
                table: (!c.time_dependent).then(|| c.sample(grid, S::zero())),
                coef: c.clone(),
            })
            .collect();
        Self { op, forcing, grid: grid.clone(), terms, cache: Vec::new() }
    }

    /// `e^{i A(t) ξ^p}`, memoised over the few distinct stage times of a step.
    fn phase(&mut self, t: S) -> Vec<Complex<S>> {
        if let Some((_, v)) = self.cache.iter().find(|(s, _)| *s == t) {
            return v.clone();
        }
        let v = phase_factors(&self.grid, self.op.p(), self.op.a_p().integral(t).to_f64_lossy(), 1.0);
        if self.cache.len() >= 4 {
            self.cache.remove(0);
        }
        self.cache.push((t, v.clone()));
        v
    }

    fn to_physical(&mut self, t: S, v_hat: &[Complex<S>]) -> Spectrum<S> {
        let ph = self.phase(t);
        let vals = v_hat.iter().zip(&ph).map(|(z, w)| *z * w.conj()).collect();
        Spectrum::from_raw(&self.grid, vals)
    }

    fn rhs(&mut self, t: S, v_hat: &[Complex<S>]) -> Vec<Complex<S>> {
        if self.terms.is_empty() && self.forcing.is_zero() {
            return vec![Complex::new(S::zero(), S::zero()); v_hat.len()];
        }
        let u_hat = self.to_physical(t, v_hat);
        let n = self.grid.n();
        let mut acc = if self.forcing.is_zero() {
            vec![Complex::new(S::zero(), S::zero()); n]
        } else {
            self.forcing.sample(&self.grid, t).into_values()
        };
        for term in &self.terms {
            let d = derivative_from_spectrum(&u_hat, term.order);
            match &term.table {
                Some(tab) => {
                    for ((a, c), z) in acc.iter_mut().zip(tab).zip(d.values()) {
                        *a = *a - *c * *z;
                    }
                }
                None => {
                    for (i, (a, z)) in acc.iter_mut().zip(d.values()).enumerate() {
                        *a = *a - term.coef.eval(t, self.grid.x(i)) * *z;
                    }
                }
            }
        }
        let i = Complex::new(S::zero(), S::one());
        let w = GridFunction::from_raw(&self.grid, acc.into_iter().map(|z| z * i).collect());
        let ph = self.phase(t);
        forward_transform(&w).into_values().into_iter().zip(&ph).map(|(z, p)| z * *p).collect()
    }

    fn step(&mut self, t: S, h: S, v: &mut [Complex<S>]) {
        let half = h / S::lit(2.0);
        let axpy = |v: &[Complex<S>], k: &[Complex<S>], a: S| -> Vec<Complex<S>> {
            v.iter().zip(k).map(|(x, y)| *x + *y * a).collect()
        };
        let k1 = self.rhs(t, v);
        let k2 = self.rhs(t + half, &axpy(v, &k1, half));
        let k3 = self.rhs(t + half, &axpy(v, &k2, half));
        let k4 = self.rhs(t + h, &axpy(v, &k3, h));
        let sixth = h / S::lit(6.0);
        for (i, z) in v.iter_mut().enumerate() {
            *z = *z + (k1[i] + (k2[i] + k3[i]) * S::lit(2.0) + k4[i]) * sixth;
        }
    }
}

/// Sample indices kept out of `0..=steps`: a uniform stride plus the last step.
pub fn sample_schedule(steps: usize, max_samples: usize) -> Vec<usize> {
    let max_samples = max_samples.max(2);
    let stride = steps.div_ceil(max_samples - 1).max(1);
    let mut idx: Vec<usize> = (0..=steps).step_by(stride).collect();
    if *idx.last().unwrap_or(&0) != steps {
        if idx.len() >= max_samples {
            idx.pop();
        }
        idx.push(steps);
    }
    idx
}

/// Outcome of [`solve_observed`].
#[derive(Clone, Debug)]
pub struct SolveSummary<S: Real> {
    pub steps: usize,
    pub final_time: S,
    pub final_state: GridFunction<S>,
    pub blow_up: Option<S>,
}

fn check_inputs<S: Real>(op: &PEvolutionOp<S>, g: &GridFunction<S>, horizon: S, steps: usize) -> Result<()> {
    if !(horizon > S::zero()) || !horizon.is_finite() {
        return Err(invalid("T", "horizon must be positive and finite"));
    }
    if steps == 0 {
        return Err(invalid("steps", "must be positive"));
    }
    if !g.is_finite() {
        return Err(Error::NonFinite { index: g.values().iter().position(|z| !crate::scalar::is_finite_c(*z)).unwrap_or(0) });
    }
    let required = required_steps(op, g.grid(), horizon);
    if steps < required {
        return Err(Error::StepBound { steps, required });
    }
    Ok(())
}

/// Integrates to `horizon` in `steps` equal steps and hands each scheduled
/// state (at most `max_samples`) to `observe` without storing it.
pub fn solve_observed<S: Real>(
    op: &PEvolutionOp<S>,
    forcing: &Forcing<S>,
    g: &GridFunction<S>,
    horizon: S,
    steps: usize,
    max_samples: usize,
    mut observe: impl FnMut(S, &GridFunction<S>),
) -> Result<SolveSummary<S>> {
    check_inputs(op, g, horizon, steps)?;
    let grid = g.grid().clone();
    let schedule = sample_schedule(steps, max_samples);
    let mut next = 0;
    let mut stepper = Stepper::new(op, forcing, &grid);
    let mut v = forward_transform(g).into_values();
    let norm0 = l2_norm(g);
    let limit = norm0 * S::lit(BLOW_UP_FACTOR);
    let h = horizon / S::from_usize_lossy(steps);
    observe(S::zero(), g);
    next += 1;
    let mut state = g.clone();
    let mut t = S::zero();
    for k in 1..=steps {
        let t_prev = S::from_usize_lossy(k - 1) * h;
        stepper.step(t_prev, h, &mut v);
        t = if k == steps { horizon } else { S::from_usize_lossy(k) * h };
        let spec_norm = Spectrum::from_raw(&grid, v.clone()).l2_norm();
        let blown = !spec_norm.is_finite() || (norm0 > S::zero() && spec_norm > limit);
        if blown || (next < schedule.len() && schedule[next] == k) {
            let u = inverse_transform(&stepper.to_physical(t, &v));
            if blown {
                if u.is_finite() {
                    observe(t, &u);
                    state = u;
                }
                return Ok(SolveSummary { steps: k, final_time: t, final_state: state, blow_up: Some(t) });
            }
            observe(t, &u);
            state = u;
            next += 1;
        }
    }
    Ok(SolveSummary { steps, final_time: t, final_state: state, blow_up: None })
}

/// Integrates `P u = f`, `u(0) = g` on `[0, horizon]` and keeps at most
/// [`MAX_SAMPLES`] uniformly thinned states.
pub fn solve<S: Real>(
    op: &PEvolutionOp<S>,
    forcing: &Forcing<S>,
    g: &GridFunction<S>,
    horizon: S,
    steps: usize,
) -> Result<Trajectory<S>> {
    let mut times = Vec::new();
    let mut states = Vec::new();
    let summary = solve_observed(op, forcing, g, horizon, steps, MAX_SAMPLES, |t, u| {
        times.push(t);
        states.push(u.clone());
    })?;
    Ok(Trajectory {
        times,
        states,
        grid: g.grid().clone(),
        steps: summary.steps,
        description: op.describe(),
        blow_up: summary.blow_up,
    })
}

/// Convergence measurement at step counts `N, 2N, 4N`.
#[derive(Clone, Debug, PartialEq)]
pub struct OrderReport<S> {
    pub steps: Vec<usize>,
    /// Relative errors against the reference (or successive differences).
    pub errors: Vec<S>,
    /// Least-squares slope of `-log error` against `log steps`.
    pub order: S,
    /// Every error is at roundoff level: the scheme is exact on this problem
    /// and no order can be measured.
    pub exact: bool,
}

/// Relative error below which [`order_test`] reports exactness.
pub const ORDER_EXACT_TOL: f64 = 1e-12;

/// Measures the temporal order from `base_steps, 2·base_steps, 4·base_steps`.
/// With `reference = Some(u_T)` errors are taken against it; otherwise the
/// finest level `8·base_steps` is the reference (self-convergence).
pub fn order_test<S: Real>(
    op: &PEvolutionOp<S>,
    forcing: &Forcing<S>,
    g: &GridFunction<S>,
    horizon: S,
    base_steps: usize,
    reference: Option<&GridFunction<S>>,
) -> Result<OrderReport<S>> {
    let run = |steps: usize| -> Result<GridFunction<S>> {
        let s = solve_observed(op, forcing, g, horizon, steps, 2, |_, _| {})?;
        if s.blow_up.is_some() {
            return Err(invalid("order_test", "run blew up"));
        }
        Ok(s.final_state)
    };
    let steps: Vec<usize> = (0..3).map(|k| base_steps << k).collect();
    let sols = steps.iter().map(|&s| run(s)).collect::<Result<Vec<_>>>()?;
    let refsol = match reference {
        Some(r) => r.clone(),
        None => run(base_steps << 3)?,
    };
    let scale = l2_norm(&refsol).max(S::min_positive_value());
    let errors: Vec<S> = sols.iter().map(|u| Ok(l2_norm(&u.sub(&refsol)?) / scale)).collect::<Result<_>>()?;
    let exact = errors.iter().all(|&e| e < S::lit(ORDER_EXACT_TOL));
    let order = if exact {
        S::nan()
    } else {
        // slope of log e vs log N, negated
        let xs: Vec<f64> = steps.iter().map(|&s| (s as f64).ln()).collect();
        let ys: Vec<f64> = errors.iter().map(|e| e.to_f64_lossy().max(1e-300).ln()).collect();
        let mx = xs.iter().sum::<f64>() / 3.0;
        let my = ys.iter().sum::<f64>() / 3.0;
        let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        S::lit(-num / den)
    };
    Ok(OrderReport { steps, errors, order, exact })
}

/// Outcome of [`energy_audit`].
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyAudit<S> {
    /// `max_t C(t)` over times before the first overflow.
    pub c_fit: S,
    /// `C(t) = ‖u(t)‖² / (‖g‖²_datum + ∫_0^t ‖f‖²)`.
    pub c_series: Vec<S>,
    /// No overflow and the second half of the run never exceeds twice the
    /// largest `C` of the first half.
    pub uniform: bool,
    pub first_overflow_time: Option<S>,
    pub trace: EnergyTrace<S>,
}

/// Smallest `C(t)` with `‖u(t)‖²_norm ≤ C(t)(‖g‖²_datum + ∫_0^t ‖f‖²)` along
/// the stored states.
pub fn energy_audit<S: Real>(
    traj: &Trajectory<S>,
    norm_params: &GSParams<S>,
    forcing: &Forcing<S>,
    datum_params: &GSParams<S>,
) -> Result<EnergyAudit<S>> {
    norm_params.validate()?;
    datum_params.validate()?;
    let g = &traj.states[0];
    let datum = gs_norm(g, datum_params)?;
    let grid = &traj.grid;
    let mut f_int = S::zero();
    let mut f_prev = l2_norm(&forcing.sample(grid, traj.times[0])).powi(2);
    let mut times = Vec::new();
    let mut norms = Vec::new();
    let mut cs = Vec::new();
    let mut overflow = None;
    for (k, (&t, u)) in traj.times.iter().zip(&traj.states).enumerate() {
        if k > 0 {
            let f_now = l2_norm(&forcing.sample(grid, t)).powi(2);
            f_int = f_int + (f_now + f_prev) * (t - traj.times[k - 1]) / S::lit(2.0);
            f_prev = f_now;
        }
        let nu = match gs_norm(u, norm_params) {
            Ok(v) => v,
            Err(Error::WeightOverflow { .. }) => {
                overflow = Some(t);
                break;
            }
            Err(e) => return Err(e),
        };
        let denom = datum * datum + f_int;
        let c = if denom > S::zero() { nu * nu / denom } else { S::zero() };
        times.push(t);
        norms.push(nu);
        cs.push(c);
    }
    let c_fit = cs.iter().fold(S::zero(), |a, &b| a.max(b));
    let horizon = traj.final_time();
    let half = horizon / S::lit(2.0);
    let first = times.iter().zip(&cs).filter(|(t, _)| **t <= half).fold(S::zero(), |a, (_, &b)| a.max(b));
    let second = times.iter().zip(&cs).filter(|(t, _)| **t > half).fold(S::zero(), |a, (_, &b)| a.max(b));
    let uniform = overflow.is_none() && traj.blow_up.is_none() && second <= S::lit(2.0) * first;
    let trace = EnergyTrace::new(times, vec![("norm".into(), norms), ("C".into(), cs.clone())])?;
    Ok(EnergyAudit { c_fit, c_series: cs, uniform, first_overflow_time: overflow, trace })
}
