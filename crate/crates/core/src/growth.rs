//! Scalar growth functions and the tests built on them.
//!
//! A [`GrowthFunction`] is a positive nondecreasing `h` on `[0, ∞)`. It is
//! the object of the Osgood condition `∫_c^∞ 1/h = ∞`, bounds the reaction
//! term (`|f(u)| ≤ h(|u|)`) and, through the exponent `γ`, the noise
//! coefficient (`|σ(u)| ≤ |u|^{1-γ} h(|u|)^γ` for `|u| > 1`).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, ExprError, LogReal};

/// Largest supported depth for [`make_iterated_log`]. `E_4 = exp(E_3)` is
/// about `exp(3.8e6)`, so `h_4` is not representable as an `f64`.
pub const MAX_ITERATED_LOG_DEPTH: u32 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrowthError {
    #[error("h is not monotone: h({lower}) = {h_lower} > h({upper}) = {h_upper}")]
    Monotonicity {
        lower: f64,
        upper: f64,
        h_lower: f64,
        h_upper: f64,
    },
    #[error("cannot evaluate h at {abscissa}: {reason}")]
    Evaluation { abscissa: String, reason: String },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

fn eval_error(abscissa: impl ToString, reason: impl Into<String>) -> GrowthError {
    GrowthError::Evaluation {
        abscissa: abscissa.to_string(),
        reason: reason.into(),
    }
}

/// Serializable description of a growth function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GrowthSpec {
    Expr {
        expr: Expr,
        #[serde(default)]
        floor: f64,
    },
    IteratedLog {
        n: u32,
    },
    Trapezoid {
        g: Box<GrowthSpec>,
        count: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub u: f64,
    pub g: f64,
}

#[derive(Debug, Clone)]
pub struct Trapezoid {
    g: Box<GrowthFunction>,
    breakpoints: Vec<Breakpoint>,
    requested: usize,
}

impl Trapezoid {
    pub fn breakpoints(&self) -> &[Breakpoint] {
        &self.breakpoints
    }

    /// Number of breakpoints actually stored (smaller than requested when the
    /// recurrence overflowed).
    pub fn effective_count(&self) -> usize {
        self.breakpoints.len()
    }

    pub fn requested_count(&self) -> usize {
        self.requested
    }

    pub fn truncated(&self) -> bool {
        self.breakpoints.len() < self.requested
    }

    pub fn base(&self) -> &GrowthFunction {
        &self.g
    }

    /// `∫_{u_n}^{u_{n+1}} 1/h`, the trapezoid area, for each stored segment.
    pub fn segment_integrals(&self) -> Vec<f64> {
        self.breakpoints
            .windows(2)
            .map(|w| 0.5 * (w[1].u - w[0].u) * (1.0 / w[0].g + 1.0 / w[1].g))
            .collect()
    }

    fn next(&self, bp: Breakpoint) -> Result<Breakpoint, GrowthError> {
        let u = bp.u + 1.0 + bp.g;
        let g = self.g.eval(u)?;
        if !u.is_finite() || !g.is_finite() {
            return Err(eval_error(u, "breakpoint recurrence overflowed"));
        }
        Ok(Breakpoint { u, g })
    }

    fn interpolate(lo: Breakpoint, hi: Breakpoint, u: f64) -> f64 {
        let w = (u - lo.u) / (hi.u - lo.u);
        1.0 / ((1.0 - w) / lo.g + w / hi.g)
    }

    fn eval(&self, u: f64) -> Result<f64, GrowthError> {
        let first = self.breakpoints[0];
        if u <= first.u {
            return Ok(first.g);
        }
        let last = *self.breakpoints.last().unwrap();
        if u <= last.u {
            let k = self.breakpoints.partition_point(|b| b.u < u);
            let (lo, hi) = (self.breakpoints[k - 1], self.breakpoints[k]);
            if hi.u == u {
                return Ok(hi.g);
            }
            return Ok(Trapezoid::interpolate(lo, hi, u));
        }
        // Lazy extension beyond the stored breakpoints.
        let mut lo = last;
        loop {
            let hi = self.next(lo)?;
            if u <= hi.u {
                return Ok(if u == hi.u {
                    hi.g
                } else {
                    Trapezoid::interpolate(lo, hi, u)
                });
            }
            lo = hi;
        }
    }
}

#[derive(Debug, Clone)]
pub enum GrowthKind {
    Expr(Expr),
    IteratedLog(u32),
    Trapezoid(Trapezoid),
}

/// A positive nondecreasing function `h: [0, ∞) → (0, ∞)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GrowthSpec", into = "GrowthSpec")]
pub struct GrowthFunction {
    kind: GrowthKind,
    floor: f64,
    spec: GrowthSpec,
}

impl PartialEq for GrowthFunction {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

impl TryFrom<GrowthSpec> for GrowthFunction {
    type Error = GrowthError;
    fn try_from(spec: GrowthSpec) -> Result<Self, Self::Error> {
        GrowthFunction::from_spec(&spec)
    }
}

impl From<GrowthFunction> for GrowthSpec {
    fn from(h: GrowthFunction) -> GrowthSpec {
        h.spec
    }
}

/// `E_n`: `E_1 = e`, `E_{n+1} = exp(E_n)`.
pub fn iterated_exp_constant(n: u32) -> f64 {
    (1..n).fold(std::f64::consts::E, |e, _| e.exp())
}

impl GrowthFunction {
    pub fn from_spec(spec: &GrowthSpec) -> Result<GrowthFunction, GrowthError> {
        match spec {
            GrowthSpec::Expr { expr, floor } => {
                if !floor.is_finite() || *floor < 0.0 {
                    return Err(GrowthError::Parameter(format!(
                        "domain floor must be a finite nonnegative number, got {floor}"
                    )));
                }
                Ok(GrowthFunction {
                    kind: GrowthKind::Expr(expr.clone()),
                    floor: *floor,
                    spec: spec.clone(),
                })
            }
            GrowthSpec::IteratedLog { n } => make_iterated_log(*n),
            GrowthSpec::Trapezoid { g, count } => {
                make_trapezoid_h(GrowthFunction::from_spec(g)?, *count)
            }
        }
    }

    pub fn from_expr(src: &str) -> Result<GrowthFunction, GrowthError> {
        GrowthFunction::from_spec(&GrowthSpec::Expr {
            expr: Expr::parse(src)?,
            floor: 0.0,
        })
    }

    pub fn from_expr_with_floor(src: &str, floor: f64) -> Result<GrowthFunction, GrowthError> {
        GrowthFunction::from_spec(&GrowthSpec::Expr {
            expr: Expr::parse(src)?,
            floor,
        })
    }

    pub fn spec(&self) -> &GrowthSpec {
        &self.spec
    }

    pub fn kind(&self) -> &GrowthKind {
        &self.kind
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn as_trapezoid(&self) -> Option<&Trapezoid> {
        match &self.kind {
            GrowthKind::Trapezoid(t) => Some(t),
            _ => None,
        }
    }

    /// `h(u)`, with `u` clamped to the domain floor. Errors when the value is
    /// not a finite positive number.
    pub fn eval(&self, u: f64) -> Result<f64, GrowthError> {
        let x = u.max(self.floor);
        let v = match &self.kind {
            GrowthKind::Expr(e) => e.eval(x),
            GrowthKind::IteratedLog(n) => {
                let y = x + iterated_exp_constant(*n);
                let mut l = y;
                let mut prod = y;
                for _ in 0..*n {
                    l = l.ln();
                    prod *= l;
                }
                prod
            }
            GrowthKind::Trapezoid(t) => t.eval(x)?,
        };
        if !(v.is_finite() && v > 0.0) {
            return Err(eval_error(
                u,
                format!("value {v} is not finite and positive"),
            ));
        }
        Ok(v)
    }

    /// `ln h(exp(ln_u))`, evaluated without forming `exp(ln_u)` where the
    /// kind permits. Trapezoid functions fall back to direct evaluation and
    /// fail past the `f64` range.
    pub fn ln_eval_at_ln(&self, ln_u: f64) -> Result<f64, GrowthError> {
        let ln_x = if self.floor > 0.0 {
            ln_u.max(self.floor.ln())
        } else {
            ln_u
        };
        let ln_v = match &self.kind {
            GrowthKind::Expr(e) => {
                let v = e
                    .eval_log(LogReal::from_ln(ln_x))
                    .map_err(|err| eval_error(format!("exp({ln_u})"), err.to_string()))?;
                if v.sign <= 0 {
                    return Err(eval_error(format!("exp({ln_u})"), "value is not positive"));
                }
                v.ln
            }
            GrowthKind::IteratedLog(n) => {
                // ln(u + E_n) = logaddexp(ln u, ln E_n)
                let ln_e = if *n == 1 {
                    1.0
                } else {
                    iterated_exp_constant(*n - 1)
                };
                let (big, small) = if ln_x >= ln_e {
                    (ln_x, ln_e)
                } else {
                    (ln_e, ln_x)
                };
                let l1 = big + (small - big).exp().ln_1p();
                let mut l = l1;
                let mut acc = l1;
                for _ in 0..*n {
                    acc += l.ln();
                    l = l.ln();
                }
                // acc = ln y + ln L_1 + ... + ln L_n, with L_1 = ln y.
                acc
            }
            GrowthKind::Trapezoid(t) => {
                let x = ln_x.exp();
                if !x.is_finite() {
                    return Err(eval_error(
                        format!("exp({ln_u})"),
                        "trapezoid growth function has no log-space form",
                    ));
                }
                t.eval(x)?.ln()
            }
        };
        if !ln_v.is_finite() {
            return Err(eval_error(format!("exp({ln_u})"), "log-value not finite"));
        }
        Ok(ln_v)
    }
}

/// `h_n(u) = (u + E_n) ∏_{k=1..n} L_k(u + E_n)` with `L_1 = log`,
/// `L_{k+1} = log ∘ L_k`. Every inner logarithm is at least 1 on `u ≥ 0`.
pub fn make_iterated_log(n: u32) -> Result<GrowthFunction, GrowthError> {
    if n == 0 || n > MAX_ITERATED_LOG_DEPTH {
        return Err(GrowthError::Parameter(format!(
            "iterated-log depth must be in 1..={MAX_ITERATED_LOG_DEPTH}, got {n}"
        )));
    }
    Ok(GrowthFunction {
        kind: GrowthKind::IteratedLog(n),
        floor: 0.0,
        spec: GrowthSpec::IteratedLog { n },
    })
}

/// Closed-form antiderivative of `1/h_n`: `L_{n+1}(u + E_n)`.
pub fn iterated_log_antiderivative(n: u32, u: f64) -> f64 {
    let mut l = u + iterated_exp_constant(n);
    for _ in 0..=n {
        l = l.ln();
    }
    l
}

/// Breakpoints `u_1 = 1`, `u_{n+1} = u_n + 1 + g(u_n)`, with `h(u_n) = g(u_n)`
/// and `1/h` affine between consecutive breakpoints. Below `u_1` the function
/// is held at `g(u_1)`; past the last stored breakpoint the recurrence is
/// continued on demand. Overflow of the recurrence truncates the stored list
/// (see [`Trapezoid::effective_count`]).
pub fn make_trapezoid_h(g: GrowthFunction, count: usize) -> Result<GrowthFunction, GrowthError> {
    if count < 2 {
        return Err(GrowthError::Parameter(format!(
            "trapezoid construction needs at least 2 breakpoints, got {count}"
        )));
    }
    let spec = GrowthSpec::Trapezoid {
        g: Box::new(g.spec.clone()),
        count,
    };
    let mut t = Trapezoid {
        g: Box::new(g),
        breakpoints: Vec::with_capacity(count),
        requested: count,
    };
    let first = Breakpoint {
        u: 1.0,
        g: t.g.eval(1.0)?,
    };
    t.breakpoints.push(first);
    while t.breakpoints.len() < count {
        let last = *t.breakpoints.last().unwrap();
        match t.next(last) {
            Ok(bp) if bp.g >= last.g => t.breakpoints.push(bp),
            Ok(bp) => {
                return Err(GrowthError::Monotonicity {
                    lower: last.u,
                    upper: bp.u,
                    h_lower: last.g,
                    h_upper: bp.g,
                })
            }
            Err(_) => break,
        }
    }
    if t.breakpoints.len() < 2 {
        return Err(eval_error(
            1.0,
            "breakpoint recurrence overflowed immediately",
        ));
    }
    Ok(GrowthFunction {
        kind: GrowthKind::Trapezoid(t),
        floor: 0.0,
        spec,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OsgoodVerdict {
    DivergesWithinHorizon,
    ConvergesNumerically,
    Inconclusive,
}

/// Which rule produced the verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OsgoodStage {
    LowerSumThreshold,
    UpperTailTolerance,
    LogScaleTail,
    Undecided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialSum {
    pub n: usize,
    pub lower_sum: f64,
    pub upper_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OsgoodOptions {
    pub base_point: f64,
    pub divergence_threshold: f64,
    pub tail_tolerance: f64,
    /// Window `[lo, hi]` of `ln ln u` over which the log-scale tail probe
    /// measures the decay exponent of `u/h(u)` in the variable `ln u`.
    pub probe_window: (f64, f64),
    pub probe_points: usize,
    /// Exponents at or below this are treated as harmonic-like (diverging).
    pub divergent_exponent: f64,
    /// Exponents at or above this are treated as summable (converging).
    pub convergent_exponent: f64,
}

impl Default for OsgoodOptions {
    fn default() -> Self {
        OsgoodOptions {
            base_point: 1.0,
            divergence_threshold: 1e3,
            tail_tolerance: 1e-9,
            probe_window: (24.0, 28.0),
            probe_points: 17,
            divergent_exponent: 1.06,
            convergent_exponent: 1.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OsgoodReport {
    pub verdict: OsgoodVerdict,
    pub stage: OsgoodStage,
    pub base_point: f64,
    pub horizon: usize,
    pub trace: Vec<PartialSum>,
    /// Decay exponent `ρ` of `s ↦ e^s / h(e^s)` far out, when probed.
    pub tail_exponent: Option<f64>,
}

impl OsgoodReport {
    pub fn lower(&self) -> f64 {
        self.trace.last().map_or(0.0, |p| p.lower_sum)
    }

    pub fn upper(&self) -> f64 {
        self.trace.last().map_or(0.0, |p| p.upper_sum)
    }
}

/// Three-valued numerical test of `∫_c^∞ 1/h = ∞`.
///
/// The dyadic sums `L_N = Σ 2^{n-1}c / h(2^n c)` and
/// `U_N = Σ 2^{n-1}c / h(2^{n-1}c)` bracket `∫_c^{2^N c} 1/h`. The verdict is
/// `diverges` when `L_N` passes the divergence threshold and `converges` when
/// `U_N - U_{N/2}` is below the tail tolerance. Otherwise the tail is probed
/// on a log scale: with `s = ln u` the integral becomes `∫ e^s/h(e^s) ds`,
/// whose integrand is fitted to `s^{-ρ}` over a window far beyond the `f64`
/// range; `ρ` near or below 1 reads as divergence, `ρ` clearly above 1 as
/// convergence, anything between is inconclusive.
pub fn osgood_test(
    h: &GrowthFunction,
    horizon: usize,
    opts: &OsgoodOptions,
) -> Result<OsgoodReport, GrowthError> {
    let c = opts.base_point;
    if !(c > 0.0 && c.is_finite()) {
        return Err(GrowthError::Parameter(format!(
            "base point must be positive, got {c}"
        )));
    }
    if horizon < 2 {
        return Err(GrowthError::Parameter(format!(
            "horizon must be at least 2, got {horizon}"
        )));
    }
    let ln_c = c.ln();
    let ln2 = std::f64::consts::LN_2;
    let mut ln_h_prev = h.ln_eval_at_ln(ln_c)?;
    let mut lower = 0.0;
    let mut upper = 0.0;
    let mut trace = Vec::with_capacity(horizon);
    for n in 1..=horizon {
        let ln_u = ln_c + n as f64 * ln2;
        let ln_h = h.ln_eval_at_ln(ln_u)?;
        if ln_h < ln_h_prev - 1e-12 * ln_h_prev.abs().max(1.0) {
            return Err(GrowthError::Monotonicity {
                lower: (ln_u - ln2).exp(),
                upper: ln_u.exp(),
                h_lower: ln_h_prev.exp(),
                h_upper: ln_h.exp(),
            });
        }
        let ln_width = ln_u - ln2; // 2^{n-1} c
        lower += (ln_width - ln_h).exp();
        upper += (ln_width - ln_h_prev).exp();
        trace.push(PartialSum {
            n,
            lower_sum: lower,
            upper_sum: upper,
        });
        ln_h_prev = ln_h;
    }
    let mut report = OsgoodReport {
        verdict: OsgoodVerdict::Inconclusive,
        stage: OsgoodStage::Undecided,
        base_point: c,
        horizon,
        trace,
        tail_exponent: None,
    };
    let half = report.trace[horizon / 2 - 1].upper_sum;
    if lower >= opts.divergence_threshold {
        report.verdict = OsgoodVerdict::DivergesWithinHorizon;
        report.stage = OsgoodStage::LowerSumThreshold;
    } else if upper - half <= opts.tail_tolerance {
        report.verdict = OsgoodVerdict::ConvergesNumerically;
        report.stage = OsgoodStage::UpperTailTolerance;
    } else if let Some(rho) = log_scale_tail_exponent(h, opts) {
        report.tail_exponent = Some(rho);
        if rho <= opts.divergent_exponent {
            report.verdict = OsgoodVerdict::DivergesWithinHorizon;
            report.stage = OsgoodStage::LogScaleTail;
        } else if rho >= opts.convergent_exponent {
            report.verdict = OsgoodVerdict::ConvergesNumerically;
            report.stage = OsgoodStage::LogScaleTail;
        }
    }
    Ok(report)
}

/// Run [`osgood_test`] at each base point (the Osgood condition is required
/// for every `c > 0`).
pub fn osgood_test_all(
    h: &GrowthFunction,
    horizon: usize,
    base_points: &[f64],
    opts: &OsgoodOptions,
) -> Result<Vec<OsgoodReport>, GrowthError> {
    base_points
        .iter()
        .map(|&c| {
            let o = OsgoodOptions {
                base_point: c,
                ..opts.clone()
            };
            osgood_test(h, horizon, &o)
        })
        .collect()
}

/// Least-squares slope of `-ln φ(s)` against `ln s`, `φ(s) = e^s / h(e^s)`,
/// for `ln s` in the probe window. `None` when `h` cannot be evaluated there.
fn log_scale_tail_exponent(h: &GrowthFunction, opts: &OsgoodOptions) -> Option<f64> {
    let (lo, hi) = opts.probe_window;
    let m = opts.probe_points.max(2);
    let mut xs = Vec::with_capacity(m);
    let mut ys = Vec::with_capacity(m);
    for i in 0..m {
        let r = lo + (hi - lo) * i as f64 / (m - 1) as f64;
        let s = r.exp();
        let ln_h = h.ln_eval_at_ln(s).ok()?;
        xs.push(r);
        ys.push(s - ln_h);
    }
    Some(-crate::stats::least_squares_slope(&xs, &ys))
}

/// Reaction term `f` with its dominating growth function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionSpec {
    pub f: Expr,
    pub h: GrowthFunction,
    /// Optional claimed Lipschitz constants `(a, b, L)` on intervals `[a, b]`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lipschitz: Vec<(f64, f64, f64)>,
}

/// Noise coefficient `σ` with its exponent `γ` and growth function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaSpec {
    pub sigma: Expr,
    pub gamma: f64,
    pub h: GrowthFunction,
}

impl SigmaSpec {
    /// `|u|^{1-γ} h(|u|)^γ`.
    pub fn bound(&self, u: f64) -> Result<f64, GrowthError> {
        let a = u.abs();
        Ok(a.powf(1.0 - self.gamma) * self.h.eval(a)?.powf(self.gamma))
    }

    /// Smallest `h(|u|)` compatible with `|σ(u)| ≤ |u|^{1-γ} h(|u|)^γ`.
    pub fn required_h(&self, u: f64) -> f64 {
        (self.sigma.eval(u).abs() / u.abs().powf(1.0 - self.gamma)).powf(1.0 / self.gamma)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub passed: bool,
    pub points: usize,
    pub first_violation: Option<f64>,
    /// `min (bound - |value|)` over the grid.
    pub min_margin: f64,
    /// `max |value| / bound` over the grid: the empirical constant.
    pub max_ratio: f64,
    pub worst_u: f64,
}

fn scan_bound(
    grid: &[f64],
    mut value: impl FnMut(f64) -> f64,
    mut bound: impl FnMut(f64) -> Result<f64, GrowthError>,
) -> Result<BoundReport, GrowthError> {
    let mut report = BoundReport {
        passed: true,
        points: grid.len(),
        first_violation: None,
        min_margin: f64::INFINITY,
        max_ratio: 0.0,
        worst_u: f64::NAN,
    };
    for &u in grid {
        let v = value(u).abs();
        let b = bound(u)?;
        if !v.is_finite() {
            return Err(eval_error(u, "function value is not finite"));
        }
        let margin = b - v;
        report.min_margin = report.min_margin.min(margin);
        let ratio = if b > 0.0 { v / b } else { f64::INFINITY };
        if ratio > report.max_ratio || report.worst_u.is_nan() {
            report.max_ratio = ratio;
            report.worst_u = u;
        }
        // Relative slack so that σ defined as exactly the bound passes.
        if v > b * (1.0 + 1e-12) && report.first_violation.is_none() {
            report.passed = false;
            report.first_violation = Some(u);
        }
    }
    Ok(report)
}

/// Check `|σ(u)| ≤ |u|^{1-γ} h(|u|)^γ` on grid points with `|u| > 1`.
pub fn check_sigma_bound(
    sigma: &SigmaSpec,
    grid: &[f64],
    eta: f64,
) -> Result<BoundReport, GrowthError> {
    let gamma_max = (1.0 - eta) / 2.0;
    if !(sigma.gamma > 0.0 && sigma.gamma < gamma_max) {
        return Err(GrowthError::Parameter(format!(
            "gamma = {} must lie in (0, {gamma_max}) for eta = {eta}",
            sigma.gamma
        )));
    }
    if let Some(&u) = grid.iter().find(|u| u.abs() <= 1.0) {
        return Err(GrowthError::Parameter(format!(
            "sigma bound applies only for |u| > 1, grid contains {u}"
        )));
    }
    scan_bound(grid, |u| sigma.sigma.eval(u), |u| sigma.bound(u))
}

/// Check `|f(u)| ≤ h(|u|)` on the grid.
pub fn check_reaction_bound(
    reaction: &ReactionSpec,
    grid: &[f64],
) -> Result<BoundReport, GrowthError> {
    scan_bound(grid, |u| reaction.f.eval(u), |u| reaction.h.eval(u.abs()))
}

/// Largest difference quotient of `expr` over `samples` equally spaced
/// points in `[a, b]`: empirical evidence for local Lipschitz continuity.
pub fn lipschitz_evidence(expr: &Expr, a: f64, b: f64, samples: usize) -> f64 {
    let n = samples.max(2);
    let step = (b - a) / (n - 1) as f64;
    let mut prev = expr.eval(a);
    let mut best: f64 = 0.0;
    for i in 1..n {
        let x = a + step * i as f64;
        let v = expr.eval(x);
        best = best.max(((v - prev) / step).abs());
        prev = v;
    }
    best
}

/// `f_n`: `f` frozen at `f(±3^n)` outside `[-3^n, 3^n]`.
pub fn cutoff(f: &Expr, n: u32) -> Expr {
    f.clamp_composed(3f64.powi(n as i32))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ASequence {
    pub a: Vec<f64>,
    pub partial_sums: Vec<f64>,
    /// Set when `h(3^n)` could not be evaluated; the sequence stops before it.
    pub truncated_at: Option<usize>,
}

/// `a_n = min{3^{n-1} / h(3^n), 1/n}` for `n = 1..=count`, evaluated in log
/// space so that `3^n` never has to be formed.
pub fn a_sequence(h: &GrowthFunction, count: usize) -> ASequence {
    let ln3 = 3f64.ln();
    let mut out = ASequence {
        a: Vec::with_capacity(count),
        partial_sums: Vec::with_capacity(count),
        truncated_at: None,
    };
    let mut sum = 0.0;
    for n in 1..=count {
        let ln_h = match h.ln_eval_at_ln(n as f64 * ln3) {
            Ok(v) => v,
            Err(_) => {
                out.truncated_at = Some(n);
                break;
            }
        };
        let first = ((n - 1) as f64 * ln3 - ln_h).exp();
        let a = first.min(1.0 / n as f64);
        sum += a;
        out.a.push(a);
        out.partial_sums.push(sum);
    }
    out
}

/// Noise exponent `q ∈ [2, ∞]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseExponent {
    Finite(f64),
    Infinite,
}

impl Serialize for NoiseExponent {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            NoiseExponent::Finite(q) => s.serialize_f64(*q),
            NoiseExponent::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for NoiseExponent {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(q) => Ok(NoiseExponent::Finite(q)),
            Raw::Text(t) if t == "inf" || t == "infinity" => Ok(NoiseExponent::Infinite),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "expected a number or \"inf\", got \"{t}\""
            ))),
        }
    }
}

/// `η = θ(q-2)/q`, or `η = θ` for `q = ∞`.
pub fn eta_from_noise(q: NoiseExponent, theta: f64) -> Result<f64, GrowthError> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(GrowthError::Parameter(format!(
            "theta must lie in (0, 1), got {theta}"
        )));
    }
    let eta = match q {
        NoiseExponent::Infinite => theta,
        NoiseExponent::Finite(q) if q >= 2.0 => theta * (q - 2.0) / q,
        NoiseExponent::Finite(q) => {
            return Err(GrowthError::Parameter(format!("q must be >= 2, got {q}")))
        }
    };
    assert!(eta < 1.0, "eta = {eta} must be below 1");
    Ok(eta)
}
