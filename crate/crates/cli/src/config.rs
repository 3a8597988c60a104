//! Run configuration and its validation.

use std::fmt;

use pevo::expr::Expr;
use pevo::illposedness::{threshold_classify, GrowthConfig, Regime};
use pevo::operators::{free_op, model_m, Coefficient, PEvolutionOp, TimeProfile};
use pevo::{Error, GridPolicy};
use serde::{Deserialize, Serialize};

/// Fewest steps an `auto` step count resolves to.
pub const AUTO_MIN_STEPS: usize = 100;

/// Datum used when a config does not name one.
pub const DEFAULT_DATUM: &str = "exp(-x^2)";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Solve,
    Conjugate,
    Growth,
    ThresholdScan,
    Prop1,
    PsidoCheck,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    #[default]
    ModelM,
    Free,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSpec {
    /// Order drop: the coefficient multiplies `D^{p-j}`.
    pub j: usize,
    pub expr: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    #[serde(default)]
    pub kind: OperatorKind,
    pub p: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Principal coefficient `a_p(t)`; real part of the expression at `x = 0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_p: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coefficients: Vec<CoefficientSpec>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyName {
    Auto,
    Compact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Policy(PolicyName),
    Fixed { n: usize, x_min: f64, x_max: f64 },
}

impl GridSpec {
    pub fn policy(&self) -> GridPolicy {
        match *self {
            Self::Policy(PolicyName::Auto) => GridPolicy::Auto,
            Self::Policy(PolicyName::Compact) => GridPolicy::Compact,
            Self::Fixed { n, x_min, x_max } => GridPolicy::Fixed { n, x_min, x_max },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoName {
    Auto,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepsSpec {
    Count(usize),
    Auto(AutoName),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default = "auto_steps")]
    pub steps: StepsSpec,
}

fn auto_steps() -> StepsSpec {
    StepsSpec::Auto(AutoName::Auto)
}

/// `count` values `from + i·step`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub from: f64,
    pub step: f64,
    pub count: usize,
}

impl Axis {
    /// Values rounded to nine decimals so that lattice points keep their
    /// decimal meaning in the exact threshold arithmetic.
    pub fn values(&self) -> Vec<f64> {
        (0..self.count).map(|i| ((self.from + i as f64 * self.step) * 1e9).round() / 1e9).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSpec {
    pub s: Axis,
    pub theta: Axis,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub tag: String,
    pub operator: OperatorSpec,
    #[serde(default)]
    pub space: SpaceParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<TimeSpec>,
    /// Initial datum as an expression in `x` (solve, conjugate).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub datum: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sigma_k: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanSpec>,
    /// Refinement levels of the decay probe.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<usize>,
    /// Not part of the content hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn datum(&self) -> &str {
        self.datum.as_deref().unwrap_or(DEFAULT_DATUM)
    }

    /// Builds the operator with horizon `horizon`.
    pub fn build_operator(&self, horizon: f64) -> pevo::Result<PEvolutionOp<f64>> {
        let op = &self.operator;
        let base = match op.kind {
            OperatorKind::ModelM => model_m(op.p, op.sigma.unwrap_or(f64::NAN))?,
            OperatorKind::Free => free_op(op.p, principal(op.a_p.as_deref())?)?,
            OperatorKind::Custom => {
                let lower = op
                    .coefficients
                    .iter()
                    .map(|c| {
                        Coefficient::from_expr(c.j, &c.expr).map_err(|e| Error::InvalidParameter {
                            name: "coefficients",
                            reason: e.to_string(),
                        })
                    })
                    .collect::<pevo::Result<Vec<_>>>()?;
                PEvolutionOp::new(op.p, principal(op.a_p.as_deref())?, lower, 1.0)?
            }
        };
        base.with_horizon(horizon)
    }
}

fn principal(src: Option<&str>) -> pevo::Result<TimeProfile<f64>> {
    let Some(src) = src else {
        return Ok(TimeProfile::Constant(1.0));
    };
    let e = Expr::parse(src).map_err(|e| Error::InvalidParameter { name: "a_p", reason: e.to_string() })?;
    if !e.depends_on_t() {
        return Ok(TimeProfile::Constant(e.eval(0.0, 0.0).re));
    }
    Ok(TimeProfile::function(src, move |t| e.eval(t, 0.0).re))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
    pub severity: Severity,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}: {}", self.field, self.message)
    }
}

/// Grid an auto policy resolves to for one `σ_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedGrid {
    pub sigma_k: Option<f64>,
    pub n: usize,
    pub x_min: f64,
    pub x_max: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub items: Vec<Diagnostic>,
    pub grids: Vec<ResolvedGrid>,
    /// Step count the stability bound requires (solve and conjugate).
    pub required_steps: Option<usize>,
    /// Step count the run will use.
    pub steps: Option<usize>,
}

impl Diagnostics {
    pub fn is_ok(&self) -> bool {
        self.errors().next().is_none()
    }

    pub fn errors(&self) -> impl Iterator<Item = &Diagnostic> {
        self.items.iter().filter(|d| d.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Diagnostic> {
        self.items.iter().filter(|d| d.severity == Severity::Warning)
    }

    fn error(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.items.push(Diagnostic { field: field.into(), message: message.into(), severity: Severity::Error });
    }

    fn warn(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.items.push(Diagnostic { field: field.into(), message: message.into(), severity: Severity::Warning });
    }
}

fn sigma_interval(p: u32) -> (f64, f64) {
    ((p as f64 - 2.0) / (p as f64 - 1.0), 1.0)
}

/// Checks every domain constraint of `cfg` and resolves its auto policies.
/// Nothing is integrated.
pub fn validate(cfg: &RunConfig) -> Diagnostics {
    let mut d = Diagnostics::default();
    if cfg.tag.is_empty() || !cfg.tag.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.') {
        d.error("tag", "must be a nonempty name of ASCII letters, digits, '-', '_' or '.'");
    }
    check_operator(cfg, &mut d);
    check_space(cfg, &mut d);
    if let Some(t) = &cfg.time {
        if !(t.horizon > 0.0 && t.horizon.is_finite()) {
            d.error("time.T", format!("must be positive and finite, got {}", t.horizon));
        }
        if t.steps == StepsSpec::Count(0) {
            d.error("time.steps", "must be positive");
        }
    }
    for (i, &sk) in cfg.sigma_k.iter().enumerate() {
        if !(sk > 0.0 && sk.is_finite()) {
            d.error(format!("sigma_k[{i}]"), format!("must be positive, got {sk}"));
        }
    }
    match cfg.experiment {
        Experiment::Solve | Experiment::Conjugate => check_evolution(cfg, &mut d),
        Experiment::Growth => check_growth(cfg, &mut d),
        Experiment::ThresholdScan => check_scan(cfg, &mut d),
        Experiment::Prop1 => check_prop1(cfg, &mut d),
        Experiment::PsidoCheck => check_psido(cfg, &mut d),
    }
    d
}

fn check_operator(cfg: &RunConfig, d: &mut Diagnostics) {
    let op = &cfg.operator;
    if op.p < 2 {
        d.error("operator.p", format!("order must be at least 2, got {}", op.p));
        return;
    }
    let (lo, hi) = sigma_interval(op.p);
    match (op.kind, op.sigma) {
        (OperatorKind::ModelM, None) => d.error("operator.sigma", "required for model_m"),
        (_, Some(s)) if !(s > lo && s < hi) => {
            d.error("operator.sigma", format!("σ must lie in ((p−2)/(p−1), 1) = ({lo}, 1), got {s}"))
        }
        _ => {}
    }
    if let Some(src) = &op.a_p {
        match Expr::parse(src) {
            Err(e) => d.error("operator.a_p", e.to_string()),
            Ok(_) if op.kind == OperatorKind::ModelM => d.error("operator.a_p", "model_m fixes a_p = 1"),
            Ok(_) => {}
        }
    }
    if op.kind != OperatorKind::Custom && !op.coefficients.is_empty() {
        d.error("operator.coefficients", "only custom operators take coefficient expressions");
    }
    for (i, c) in op.coefficients.iter().enumerate() {
        if c.j == 0 || c.j > op.p as usize {
            d.error(format!("operator.coefficients[{i}].j"), format!("must lie in 1..={}", op.p));
        }
        if let Err(e) = Expr::parse(&c.expr) {
            d.error(format!("operator.coefficients[{i}].expr"), e.to_string());
        }
        if op.coefficients[..i].iter().any(|o| o.j == c.j) {
            d.error(format!("operator.coefficients[{i}].j"), "duplicate order");
        }
    }
}

fn check_space(cfg: &RunConfig, d: &mut Diagnostics) {
    let sp = &cfg.space;
    if let Some(s) = sp.s {
        if !(s > 1.0 && s.is_finite()) {
            d.error("space.s", format!("must exceed 1, got {s}"));
        }
    }
    if let Some(t) = sp.theta {
        if !(t > 1.0 && t.is_finite()) {
            d.error("space.theta", format!("must exceed 1, got {t}"));
        }
    }
    for (name, v) in [("space.rho1", sp.rho1), ("space.rho2", sp.rho2), ("space.delta", sp.delta)] {
        if let Some(v) = v {
            if !(v >= 0.0 && v.is_finite()) {
                d.error(name, format!("must be nonnegative, got {v}"));
            }
        }
    }
    if let (Some(s), Some(theta), Some(sigma)) = (sp.s, sp.theta, cfg.operator.sigma) {
        if d.is_ok() {
            if let Ok(Regime::Critical) = threshold_classify(cfg.operator.p, sigma, s, theta) {
                d.warn(
                    "space",
                    "critical case: (p−1)θ = min{1/(1−σ), s}, where neither well- nor ill-posedness is known",
                );
            }
        }
    }
}

fn resolve_grid(cfg: &RunConfig, spec: &GridSpec, sigma_k: Option<f64>, field: &str, d: &mut Diagnostics) {
    match (spec, sigma_k) {
        (GridSpec::Fixed { n, x_min, x_max }, _) => {
            if *n < 8 || !n.is_power_of_two() {
                d.error(format!("{field}.n"), format!("must be a power of two and at least 8, got {n}"));
            } else if !(x_min < x_max) || !x_min.is_finite() || !x_max.is_finite() {
                d.error(field, format!("empty domain [{x_min}, {x_max}]"));
            } else {
                d.grids.push(ResolvedGrid { sigma_k, n: *n, x_min: *x_min, x_max: *x_max });
            }
        }
        (GridSpec::Policy(_), None) => d.error(field, "auto grid policies need sigma_k"),
        (GridSpec::Policy(_), Some(sk)) => match spec.policy().resolve(sk, cfg.operator.p) {
            Ok(g) => d.grids.push(ResolvedGrid { sigma_k: Some(sk), n: g.n(), x_min: g.x_min(), x_max: g.x_max() }),
            Err(e) => d.error(field, format!("cannot resolve for σ_k = {sk}: {e}")),
        },
    }
}

fn check_evolution(cfg: &RunConfig, d: &mut Diagnostics) {
    let Some(spec) = &cfg.grid else {
        d.error("grid", "required");
        return;
    };
    resolve_grid(cfg, spec, cfg.sigma_k.first().copied(), "grid", d);
    if let Err(e) = Expr::parse(cfg.datum()) {
        d.error("datum", e.to_string());
    }
    if cfg.experiment == Experiment::Conjugate {
        if cfg.space.delta.is_none() {
            d.error("space.delta", "required for conjugate");
        }
        if cfg.space.s.is_none() {
            d.error("space.s", "required for conjugate");
        }
    }
    let Some(time) = &cfg.time else {
        if cfg.experiment == Experiment::Solve {
            d.error("time", "required for solve");
        }
        return;
    };
    if !d.is_ok() {
        return;
    }
    let (Ok(op), Some(g)) = (cfg.build_operator(time.horizon), d.grids.first()) else {
        d.error("operator", "cannot be built");
        return;
    };
    let Ok(grid) = pevo::grid::make_grid(g.n, g.x_min, g.x_max) else { return };
    let required = pevo::solver::required_steps(&op, &grid, time.horizon);
    d.required_steps = Some(required);
    d.steps = Some(resolve_steps(&time.steps, required));
    if let StepsSpec::Count(n) = time.steps {
        if n < required {
            d.error("time.steps", format!("{n} steps violate the stability bound of {required}"));
        }
    }
}

/// `auto` is the stability bound, but at least [`AUTO_MIN_STEPS`].
pub fn resolve_steps(spec: &StepsSpec, required: usize) -> usize {
    match *spec {
        StepsSpec::Count(n) => n,
        StepsSpec::Auto(_) => required.max(AUTO_MIN_STEPS),
    }
}

fn growth_config_field(name: &str) -> &str {
    match name {
        "sigma" => "operator.sigma",
        "T" => "time.T",
        other => other,
    }
}

/// Growth inputs implied by `cfg`.
pub fn growth_config(cfg: &RunConfig) -> GrowthConfig<f64> {
    let mut g = GrowthConfig::new(cfg.operator.p, cfg.operator.sigma.unwrap_or(f64::NAN), cfg.sigma_k.clone());
    if let Some(l) = cfg.lambda {
        g.lambda = l;
    }
    if let Some(t) = cfg.theta1 {
        g.theta1 = t;
    }
    if let Some(t) = &cfg.time {
        g.horizon = t.horizon;
        if let StepsSpec::Count(n) = t.steps {
            g.min_steps = n;
        }
    }
    if let Some(spec) = &cfg.grid {
        g.policy = spec.policy();
    }
    g.control = cfg.operator.kind == OperatorKind::Free;
    g
}

fn check_growth(cfg: &RunConfig, d: &mut Diagnostics) {
    if cfg.operator.kind == OperatorKind::Custom {
        d.error("operator.kind", "growth runs use model_m or its free control");
    }
    if cfg.operator.kind == OperatorKind::Free {
        if cfg.operator.sigma.is_none() {
            d.error("operator.sigma", "the free control still needs σ for λ and the predicted slope");
        }
        if cfg.operator.a_p.is_some() {
            d.error("operator.a_p", "the free control uses a_p = 1");
        }
    }
    if !d.is_ok() {
        return;
    }
    if let Err(Error::InvalidParameter { name, reason }) = growth_config(cfg).validate() {
        d.error(growth_config_field(name), reason);
        return;
    }
    let spec = cfg.grid.clone().unwrap_or(GridSpec::Policy(if cfg.operator.p == 2 {
        PolicyName::Auto
    } else {
        PolicyName::Compact
    }));
    for (i, &sk) in cfg.sigma_k.iter().enumerate() {
        resolve_grid(cfg, &spec, Some(sk), &format!("grid (sigma_k[{i}])"), d);
    }
}

fn check_scan(cfg: &RunConfig, d: &mut Diagnostics) {
    let Some(scan) = &cfg.scan else {
        d.error("scan", "required for threshold_scan");
        return;
    };
    for (name, axis) in [("scan.s", &scan.s), ("scan.theta", &scan.theta)] {
        if axis.count == 0 {
            d.error(format!("{name}.count"), "must be positive");
        }
        if !(axis.step >= 0.0 && axis.step.is_finite()) {
            d.error(format!("{name}.step"), "must be nonnegative");
        }
        if let Some(&v) = axis.values().iter().find(|&&v| !(v > 1.0 && v.is_finite())) {
            d.error(name, format!("every value must exceed 1, got {v}"));
        }
    }
    if cfg.operator.sigma.is_none() {
        d.error("operator.sigma", "required for threshold_scan");
    }
}

fn check_prop1(cfg: &RunConfig, d: &mut Diagnostics) {
    if cfg.operator.kind != OperatorKind::Free {
        d.error("operator.kind", "the decay probe evolves the free flow");
    }
    for (name, v) in [("space.s", cfg.space.s), ("space.theta", cfg.space.theta)] {
        if v.is_none() {
            d.error(name, "required for prop1");
        }
    }
    match cfg.space.rho1 {
        Some(r) if r > 0.0 => {}
        _ => d.error("space.rho1", "datum weight must be positive"),
    }
    match &cfg.grid {
        Some(spec @ GridSpec::Fixed { .. }) => resolve_grid(cfg, spec, None, "grid", d),
        _ => d.error("grid", "prop1 needs a fixed base grid"),
    }
    if cfg.time.is_none() {
        d.error("time", "required for prop1");
    }
    if cfg.levels.unwrap_or(3) < 3 {
        d.error("levels", "need at least 3 refinement levels");
    }
}

fn check_psido(cfg: &RunConfig, d: &mut Diagnostics) {
    if cfg.sigma_k.len() < 2 {
        d.error("sigma_k", "the scaling check needs at least two values");
    }
}
