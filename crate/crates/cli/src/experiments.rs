//! Experiment bodies: each turns a validated config into a trace table and a
//! JSON report.

use std::collections::BTreeMap;

use num_complex::Complex64 as C64;
use pevo::conjugation::verify_conjugation_identity;
use pevo::expr::Expr;
use pevo::grid::{make_grid, GridFunction};
use pevo::illposedness::{
    cutoff_symbol, growth_experiment, make_bump, prop1_experiment, threshold_classify, BumpKind, Prop1Config, Regime,
};
use pevo::psido::{compose_expansion, derivative_table, l2_bound_probe, standard_panel, Symbol, SymbolBox};
use pevo::scalar::bracket;
use pevo::solver::{exact_free_solution, required_steps, solve_observed, Forcing, MAX_SAMPLES};
use serde_json::{json, Value};

use crate::config::{growth_config, resolve_steps, Experiment, GridSpec, OperatorKind, RunConfig};

/// Rows of decimal numbers under named columns; the first column is time.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    /// CSV with every value in scientific notation with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub trace: Table,
    pub report: Value,
    pub verdicts: BTreeMap<String, bool>,
    /// Time at which the solver flagged blow-up, if it did.
    pub blow_up: Option<f64>,
}

pub fn execute(cfg: &RunConfig) -> pevo::Result<Outcome> {
    match cfg.experiment {
        Experiment::Solve => solve(cfg),
        Experiment::Conjugate => conjugate(cfg),
        Experiment::Growth => growth(cfg),
        Experiment::ThresholdScan => threshold_scan(cfg),
        Experiment::Prop1 => prop1(cfg),
        Experiment::PsidoCheck => psido_check(cfg),
    }
}

fn grid_of(cfg: &RunConfig) -> pevo::Result<pevo::Grid> {
    let spec = cfg.grid.as_ref().expect("validated");
    match *spec {
        GridSpec::Fixed { n, x_min, x_max } => make_grid(n, x_min, x_max),
        GridSpec::Policy(_) => spec.policy().resolve(cfg.sigma_k[0], cfg.operator.p),
    }
}

fn datum(cfg: &RunConfig, grid: &pevo::Grid) -> pevo::Result<GridFunction<f64>> {
    let e = Expr::parse(cfg.datum()).map_err(|e| pevo::Error::InvalidParameter { name: "datum", reason: e.to_string() })?;
    GridFunction::from_fn(grid, |x| e.eval(0.0, x))
}

fn solve(cfg: &RunConfig) -> pevo::Result<Outcome> {
    let time = cfg.time.as_ref().expect("validated");
    let op = cfg.build_operator(time.horizon)?;
    let grid = grid_of(cfg)?;
    let g = datum(cfg, &grid)?;
    let steps = resolve_steps(&time.steps, required_steps(&op, &grid, time.horizon));
    let mut trace = Table::new(&["time", "l2", "sup"]);
    let summary = solve_observed(&op, &Forcing::zero(), &g, time.horizon, steps, MAX_SAMPLES, |t, u| {
        trace.rows.push(vec![t, u.l2_norm(), u.max_abs()]);
    })?;
    let l2_0 = g.l2_norm();
    let drift = trace.rows.iter().map(|r| (r[1] - l2_0).abs()).fold(0.0, f64::max) / l2_0.max(f64::MIN_POSITIVE);
    let mut report = json!({
        "steps": summary.steps,
        "final_time": summary.final_time,
        "n": grid.n(),
        "x_min": grid.x_min(),
        "x_max": grid.x_max(),
        "l2_initial": l2_0,
        "l2_final": summary.final_state.l2_norm(),
        "l2_relative_drift": drift,
        "blow_up": summary.blow_up,
    });
    let mut verdicts = BTreeMap::from([("completed".to_string(), summary.blow_up.is_none())]);
    if cfg.operator.kind == OperatorKind::Free && summary.blow_up.is_none() {
        let exact = exact_free_solution(op.p(), op.a_p(), &g, time.horizon);
        let err = summary.final_state.sub(&exact)?.l2_norm() / exact.l2_norm().max(f64::MIN_POSITIVE);
        report["exact_relative_error"] = json!(err);
        verdicts.insert("exact_error_below_1e-8".into(), err < 1e-8);
        verdicts.insert("l2_conserved_to_1e-10".into(), drift < 1e-10);
    }
    Ok(Outcome { trace, report, verdicts, blow_up: summary.blow_up })
}

fn conjugate(cfg: &RunConfig) -> pevo::Result<Outcome> {
    let horizon = cfg.time.as_ref().map_or(0.0, |t| t.horizon);
    let op = cfg.build_operator(if horizon > 0.0 { horizon } else { 1.0 })?;
    let grid = grid_of(cfg)?;
    let v = datum(cfg, &grid)?;
    let (delta, s) = (cfg.space.delta.expect("validated"), cfg.space.s.expect("validated"));
    let times: Vec<f64> = if horizon > 0.0 { (0..=10).map(|k| horizon * k as f64 / 10.0).collect() } else { vec![0.0] };
    let mut trace = Table::new(&["time", "residual"]);
    for &t in &times {
        trace.rows.push(vec![t, verify_conjugation_identity(&op, delta, s, &grid, &v, t)?]);
    }
    let max = trace.rows.iter().map(|r| r[1]).fold(0.0, f64::max);
    let report = json!({ "delta": delta, "s": s, "n": grid.n(), "max_residual": max });
    let verdicts = BTreeMap::from([("identity_residual_below_1e-8".to_string(), max < 1e-8)]);
    Ok(Outcome { trace, report, verdicts, blow_up: None })
}

fn growth(cfg: &RunConfig) -> pevo::Result<Outcome> {
    let gc = growth_config(cfg);
    let run = growth_experiment(&gc)?;
    let mut trace = Table::new(&["time", "sigma_k", "E_k", "E_k00"]);
    let mut levels = Vec::new();
    for l in &run.levels {
        let e = l.trace.get("E_k").expect("E_k column");
        let e0 = l.trace.get("E_k00").expect("E_k00 column");
        for (i, &t) in l.trace.times.iter().enumerate() {
            trace.rows.push(vec![t, l.sigma_k, e[i], e0[i]]);
        }
        levels.push(json!({
            "sigma_k": l.sigma_k,
            "n": l.n,
            "x_min": l.x_min,
            "x_max": l.x_max,
            "steps": l.steps,
            "n_k": l.n_k,
            "capped": l.capped,
            "rate": l.rate,
            "rate_base_term": l.rate_e00,
            "blow_up": l.blow_up,
        }));
    }
    let blow_up = run.levels.iter().filter_map(|l| l.blow_up).reduce(f64::min);
    let within = |slope: f64| (slope - run.predicted).abs() <= 0.2 * run.predicted;
    let mut verdicts = BTreeMap::new();
    if run.control {
        verdicts.insert("control_slope_below_0.1".into(), run.fitted_rate < 0.1);
        verdicts.insert("control_base_term_slope_below_0.1".into(), run.fitted_rate_e00 < 0.1);
    } else {
        verdicts.insert("slope_within_20pct".into(), within(run.fitted_rate));
        verdicts.insert("base_term_slope_within_20pct".into(), within(run.fitted_rate_e00));
    }
    let report = json!({
        "p": run.p,
        "sigma": run.sigma,
        "lambda": run.lambda,
        "theta1": run.theta1,
        "horizon": gc.horizon,
        "control": run.control,
        "fitted_slope": run.fitted_rate,
        "fitted_slope_base_term": run.fitted_rate_e00,
        "predicted_slope": run.predicted,
        "levels": levels,
    });
    Ok(Outcome { trace, report, verdicts, blow_up })
}

fn regime_code(r: Regime) -> f64 {
    match r {
        Regime::WellPosed => 1.0,
        Regime::Critical => 0.0,
        Regime::IllPosed => -1.0,
    }
}

fn threshold_scan(cfg: &RunConfig) -> pevo::Result<Outcome> {
    let scan = cfg.scan.as_ref().expect("validated");
    let (p, sigma) = (cfg.operator.p, cfg.operator.sigma.expect("validated"));
    let mut trace = Table::new(&["time", "s", "theta", "regime"]);
    let mut cells = Vec::new();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for &s in &scan.s.values() {
        for &theta in &scan.theta.values() {
            let r = threshold_classify(p, sigma, s, theta)?;
            trace.rows.push(vec![0.0, s, theta, regime_code(r)]);
            cells.push(json!({ "s": s, "theta": theta, "verdict": r.as_str() }));
            *counts.entry(r.as_str()).or_default() += 1;
        }
    }
    let report = json!({ "p": p, "sigma": sigma, "counts": counts, "cells": cells });
    Ok(Outcome { trace, report, verdicts: BTreeMap::new(), blow_up: None })
}

fn prop1(cfg: &RunConfig) -> pevo::Result<Outcome> {
    let Some(GridSpec::Fixed { n, x_min, x_max }) = cfg.grid else { unreachable!("validated") };
    let len = x_max - x_min;
    let pc = Prop1Config {
        p: cfg.operator.p,
        s: cfg.space.s.expect("validated"),
        theta: cfg.space.theta.expect("validated"),
        rho0: cfg.space.rho1.expect("validated"),
        horizon: cfg.time.as_ref().expect("validated").horizon,
        dx: len / n as f64,
        base_length: len,
        levels: cfg.levels.unwrap_or(3),
    };
    let rep = prop1_experiment(&pc)?;
    let mut trace = Table::new(&["time", "length", "n", "c"]);
    for i in 0..rep.c.len() {
        trace.rows.push(vec![pc.horizon, rep.lengths[i], rep.n[i] as f64, rep.c[i]]);
    }
    let verdict = format!("{:?}", rep.verdict).to_lowercase();
    let report = json!({
        "lengths": rep.lengths,
        "n": rep.n,
        "c": rep.c,
        "spread": rep.spread,
        "monotone_decreasing": rep.monotone_decreasing,
        "ill_posed_side": rep.ill_posed_side,
        "verdict": verdict,
    });
    let verdicts = BTreeMap::from([
        ("degrading".to_string(), rep.verdict == pevo::illposedness::DecayVerdict::Degrading),
        ("stable_within_10pct".to_string(), rep.verdict == pevo::illposedness::DecayVerdict::Stable),
    ]);
    Ok(Outcome { trace, report, verdicts, blow_up: None })
}

fn monotone(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] >= w[0])
}

fn psido_check(cfg: &RunConfig) -> pevo::Result<Outcome> {
    let mut verdicts = BTreeMap::new();
    let bump = make_bump(BumpKind::Plateau, 2.0)?;

    let mixed = Symbol::new("mixed", 0.0, |x: f64, xi: f64| {
        C64::new((-(x * x) / 8.0).exp() * (xi / 3.0).sin(), (x * xi / 10.0).cos() / bracket(x))
    });
    let table = derivative_table(&mixed, &SymbolBox::new((-6.0, 6.0), (-6.0, 6.0)), 6)?;
    let seminorms: Vec<f64> = (0..=6).map(|l| table.seminorm(l, 0.0)).collect();
    verdicts.insert("seminorm_monotone_in_ell".into(), monotone(&seminorms));

    let grid = make_grid(256, -40.0, 40.0)?;
    let panel = standard_panel(&grid);
    let p1 = Symbol::multiplier("gauss", 0.0, |k: f64| C64::new((-(k * k) / 16.0).exp(), 0.0));
    let p2 = Symbol::spatial("<x>^-1/2", |x: f64| C64::new(bracket(x).powf(-0.5), 0.0));
    let mut trace = Table::new(&["time", "terms", "remainder"]);
    for n in 1..=4 {
        let (_, rep) = compose_expansion(&p1, &p2, n, &panel)?;
        trace.rows.push(vec![0.0, n as f64, rep.max]);
    }
    let remainders: Vec<f64> = trace.rows.iter().map(|r| r[2]).collect();
    verdicts.insert("remainder_strictly_decreasing".into(), remainders.windows(2).all(|w| w[1] < w[0]));

    let poly_grid = make_grid(256, -20.0, 20.0)?;
    let (_, poly) = compose_expansion(&Symbol::xi_power(1), &Symbol::x_power(1), 2, &standard_panel(&poly_grid))?;
    verdicts.insert("polynomial_remainder_below_1e-10".into(), poly.max < 1e-10);

    let probe_grid = make_grid(256, -32.0, 32.0)?;
    let (b1, b2) = (bump.clone(), bump.clone());
    let quarter = Symbol::separable(
        "bump/4",
        0.0,
        move |k, x: f64| C64::new(b1.derivatives(x / 16.0, k).expect("cap")[k] / 16f64.powi(k as i32) / 4.0, 0.0),
        move |k, xi: f64| C64::new(b2.derivatives(xi / 4.0, k).expect("cap")[k] / 4f64.powi(k as i32), 0.0),
    );
    let l2 = l2_bound_probe(&quarter, &standard_panel(&probe_grid), &SymbolBox::new((-32.0, 32.0), (-12.0, 12.0)))?;
    verdicts.insert("l2_ratio_within_50x_bound".into(), l2.pass);

    // sup |∂_ξ^γ ∂_x^δ w_k| σ_k^{γ + δ(p-1)} for γ, δ ≤ 2, per σ_k
    let p = cfg.operator.p;
    let mut scaled = Vec::new();
    for &sk in &cfg.sigma_k {
        let c = cutoff_symbol(&bump, sk, p, 0, 0)?;
        let t = derivative_table(&Symbol::from_cutoff(&c), &SymbolBox::new(c.x_support(), c.xi_support()), 2)?;
        let mut row = Vec::new();
        for g in 0..=2 {
            for d in 0..=2 {
                row.push(t.weighted_sup(g, d, 0.0) * sk.powi(g as i32 + d as i32 * (p as i32 - 1)));
            }
        }
        scaled.push(row);
    }
    let spread = (0..9)
        .map(|j| {
            let col: Vec<f64> = scaled.iter().map(|r| r[j]).collect();
            let max = col.iter().cloned().fold(0.0, f64::max);
            let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
            1.0 - min / max
        })
        .fold(0.0, f64::max);
    verdicts.insert("w_k_scaling_within_10pct".into(), spread <= 0.1);

    let report = json!({
        "seminorms": seminorms,
        "composition_remainders": remainders,
        "polynomial_remainder": poly.max,
        "l2_ratio": l2.ratio,
        "l2_bound": l2.bound,
        "l2_slack": l2.slack,
        "w_k_scaled_sups": scaled,
        "w_k_scaling_spread": spread,
    });
    Ok(Outcome { trace, report, verdicts, blow_up: None })
}
