//! Spectral exponential Euler for `∂_t u = Δu + f(u) + σ(u) Ẇ`, with the
//! sup-norm ladder `τ_n = inf{t : |u(t)|_∞ ≥ base^n}` and the cutoff systems
//! in which `f`, `σ` are frozen outside `[-base^n, base^n]`.

pub mod ode;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::Expr;
use crate::growth::{ReactionSpec, SigmaSpec};
use crate::rng::{trajectory_rng, TrajectoryRng};
use crate::spectral::{
    noise_increment, NoiseSpec, OperatorSpec, SpectralError, SpectralOperator, Workspace,
};

pub use ode::{simulate_ode, OdeOptions, OdeOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// Expression in `x` (and `y`, `z` in higher dimension), sampled on the grid.
    Expr { expr: String },
    /// Sine coefficients in sorted mode order; missing modes are zero.
    Coefficients { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default)]
    pub operator: OperatorSpec,
    pub noise: NoiseSpec,
    pub reaction: ReactionSpec,
    pub sigma: SigmaSpec,
    pub initial: InitialCondition,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_ladder_base")]
    pub ladder_base: f64,
    #[serde(default = "default_ladder_depth")]
    pub ladder_depth: u32,
    /// Halve the step when the sup-norm changes by more than 10% in one step.
    #[serde(default)]
    pub adaptive: bool,
    /// Record the sup-norm every `trace_stride` steps.
    #[serde(default = "default_stride")]
    pub trace_stride: usize,
}

fn default_ladder_base() -> f64 {
    3.0
}

fn default_ladder_depth() -> u32 {
    12
}

fn default_stride() -> usize {
    1
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: String| Err(SolverError::Config(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end must be positive, got {}", self.t_end));
        }
        if !(self.ladder_base > 1.0) {
            return bad(format!(
                "ladder base must exceed 1, got {}",
                self.ladder_base
            ));
        }
        if self.ladder_depth < 1 {
            return bad("ladder depth must be at least 1".into());
        }
        if self.trace_stride == 0 {
            return bad("trace stride must be at least 1".into());
        }
        self.noise
            .eta()
            .map_err(|e| SolverError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn explosion_threshold(&self) -> f64 {
        self.ladder_base.powi(self.ladder_depth as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderHit {
    pub n: u32,
    pub level: f64,
    pub time: f64,
    /// The level was already reached by the initial datum.
    pub initial: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub steps: u64,
    pub halvings: u64,
    pub min_dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub index: u64,
    /// Cutoff level `n` when the record comes from a truncated system.
    pub truncation: Option<u32>,
    pub ladder: Vec<LadderHit>,
    pub exploded: bool,
    /// Explosion was signalled by non-finite values rather than the cap.
    pub overflow: bool,
    pub explosion_threshold: f64,
    /// End time, or the last finite time when the run exploded.
    pub final_time: f64,
    pub final_sup: f64,
    pub sup_trace: Vec<(f64, f64)>,
    pub stats: StepStats,
}

impl TrajectoryRecord {
    /// `τ_n`, if observed.
    pub fn tau(&self, n: u32) -> Option<&LadderHit> {
        self.ladder.iter().find(|h| h.n == n)
    }
}

/// Per-mode factors of one exponential Euler step of size `dt`.
#[derive(Debug, Clone)]
struct StepFactors {
    dt: f64,
    decay: Vec<f64>,
    phi: Vec<f64>,
    /// `sqrt((1 - e^{-2αΔt}) / (2αΔt))`, the exact OU correction of `ΔW_k`.
    noise: Vec<f64>,
}

impl StepFactors {
    fn new(alphas: &[f64], dt: f64) -> StepFactors {
        let decay = alphas.iter().map(|a| (-a * dt).exp()).collect();
        let phi = alphas.iter().map(|a| -(-a * dt).exp_m1() / a).collect();
        let noise = alphas
            .iter()
            .map(|a| (-(-2.0 * a * dt).exp_m1() / (2.0 * a * dt)).sqrt())
            .collect();
        StepFactors {
            dt,
            decay,
            phi,
            noise,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Coefficient {
    Zero,
    Constant(f64),
    Field,
}

fn classify(e: &Expr) -> Coefficient {
    match e.as_constant() {
        Some(0.0) => Coefficient::Zero,
        Some(c) => Coefficient::Constant(c),
        None => Coefficient::Field,
    }
}

/// Immutable, shareable solver built from a [`SolverConfig`].
#[derive(Debug, Clone)]
pub struct Solver {
    config: SolverConfig,
    op: SpectralOperator,
    f: Expr,
    sigma: Expr,
    f_kind: Coefficient,
    sigma_kind: Coefficient,
    lambdas: Vec<f64>,
    alphas: Vec<f64>,
    base: StepFactors,
    initial: Vec<f64>,
    truncation: Option<u32>,
}

/// Mutable per-trajectory state.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub t: f64,
    pub coeffs: Vec<f64>,
    pub grid: Vec<f64>,
    pub sup: f64,
    ws: Workspace,
    f_grid: Vec<f64>,
    f_coeffs: Vec<f64>,
    g_grid: Vec<f64>,
    g_coeffs: Vec<f64>,
}

fn sup_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |m, v| {
        if v.is_nan() || m.is_nan() {
            f64::NAN
        } else {
            m.max(v.abs())
        }
    })
}

impl Solver {
    pub fn new(config: &SolverConfig) -> Result<Solver, SolverError> {
        config.validate()?;
        let op = SpectralOperator::from_spec(&config.operator)?;
        let initial = match &config.initial {
            InitialCondition::Expr { expr } => {
                let e = Expr::parse_spatial(expr, op.dim())
                    .map_err(|e| SolverError::Config(format!("initial condition: {e}")))?;
                let values = op.sample(&e);
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(SolverError::Config(
                        "initial condition is not bounded on the grid".into(),
                    ));
                }
                op.from_grid(&values)?.coeffs
            }
            InitialCondition::Coefficients { values } => {
                if values.len() > op.num_modes() {
                    return Err(SolverError::Config(format!(
                        "{} initial coefficients for {} modes",
                        values.len(),
                        op.num_modes()
                    )));
                }
                let mut c = values.clone();
                c.resize(op.num_modes(), 0.0);
                c
            }
        };
        let alphas = op.alphas();
        let lambdas = config.noise.lambdas(&op);
        let base = StepFactors::new(&alphas, config.dt);
        let f = config.reaction.f.clone();
        let sigma = config.sigma.sigma.clone();
        Ok(Solver {
            f_kind: classify(&f),
            sigma_kind: if config.noise.is_zero() {
                Coefficient::Zero
            } else {
                classify(&sigma)
            },
            f,
            sigma,
            lambdas,
            alphas,
            base,
            initial,
            op,
            config: config.clone(),
            truncation: None,
        })
    }

    /// The cutoff system: `f`, `σ` frozen outside `[-base^n, base^n]`.
    pub fn truncated(&self, n: u32) -> Solver {
        let c = self.config.ladder_base.powi(n as i32);
        let f = self.config.reaction.f.clamp_composed(c);
        let sigma = self.config.sigma.sigma.clamp_composed(c);
        Solver {
            f_kind: classify(&f),
            sigma_kind: if self.sigma_kind == Coefficient::Zero {
                Coefficient::Zero
            } else {
                classify(&sigma)
            },
            f,
            sigma,
            truncation: Some(n),
            ..self.clone()
        }
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn operator(&self) -> &SpectralOperator {
        &self.op
    }

    pub fn initial_coefficients(&self) -> &[f64] {
        &self.initial
    }

    /// Whether steps consume random numbers.
    pub fn is_stochastic(&self) -> bool {
        self.sigma_kind != Coefficient::Zero
    }

    pub fn initial_state(&self) -> SolverState {
        self.state_from(self.initial.clone(), 0.0)
    }

    pub fn state_from(&self, coeffs: Vec<f64>, t: f64) -> SolverState {
        let n = self.op.grid_len();
        let k = self.op.num_modes();
        let mut s = SolverState {
            t,
            coeffs,
            grid: vec![0.0; n],
            sup: 0.0,
            ws: self.op.workspace(),
            f_grid: vec![0.0; n],
            f_coeffs: vec![0.0; k],
            g_grid: vec![0.0; n],
            g_coeffs: vec![0.0; k],
        };
        self.op.to_grid_into(&s.coeffs, &mut s.grid, &mut s.ws);
        s.sup = sup_abs(&s.grid);
        s
    }

    /// Draw the Brownian coefficient increments `λ_j √Δt ξ_j` for one step.
    pub fn draw_noise<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R, out: &mut [f64]) {
        noise_increment(&self.lambdas, dt, rng, out);
    }

    fn factors(&self, dt: f64) -> std::borrow::Cow<'_, StepFactors> {
        if dt == self.base.dt {
            std::borrow::Cow::Borrowed(&self.base)
        } else {
            std::borrow::Cow::Owned(StepFactors::new(&self.alphas, dt))
        }
    }

    /// One exponential Euler step with the given Brownian increments `dw`
    /// (ignored when the noise coefficient vanishes). Updates coefficients,
    /// grid values and the sup-norm.
    pub fn step_with_noise(&self, state: &mut SolverState, dt: f64, dw: &[f64]) {
        let fac = self.factors(dt);
        let op = &self.op;
        match self.f_kind {
            Coefficient::Zero => state.f_coeffs.fill(0.0),
            _ => {
                self.f.eval_into(&state.grid, &mut state.f_grid);
                op.from_grid_into(&state.f_grid, &mut state.f_coeffs, &mut state.ws);
            }
        }
        match self.sigma_kind {
            Coefficient::Zero => state.g_coeffs.fill(0.0),
            Coefficient::Constant(c) => {
                for (g, w) in state.g_coeffs.iter_mut().zip(dw) {
                    *g = c * w;
                }
            }
            Coefficient::Field => {
                self.sigma.eval_into(&state.grid, &mut state.g_grid);
                op.to_grid_into(dw, &mut state.f_grid, &mut state.ws);
                for (s, w) in state.g_grid.iter_mut().zip(&state.f_grid) {
                    *s *= w;
                }
                op.from_grid_into(&state.g_grid, &mut state.g_coeffs, &mut state.ws);
            }
        }
        for k in 0..state.coeffs.len() {
            state.coeffs[k] = fac.decay[k] * state.coeffs[k]
                + fac.phi[k] * state.f_coeffs[k]
                + fac.noise[k] * state.g_coeffs[k];
        }
        op.to_grid_into(&state.coeffs, &mut state.grid, &mut state.ws);
        state.sup = sup_abs(&state.grid);
        state.t += dt;
    }

    /// One step drawing its noise from `rng`.
    pub fn step<R: Rng + ?Sized>(&self, state: &mut SolverState, dt: f64, rng: &mut R) {
        let mut dw = vec![0.0; self.op.num_modes()];
        if self.is_stochastic() {
            self.draw_noise(dt, rng, &mut dw);
        }
        self.step_with_noise(state, dt, &dw);
    }

    /// Step lengths covering `[0, t_end]`: `dt` repeated, the last one
    /// shortened to land on `t_end`.
    pub fn schedule(&self) -> (usize, f64) {
        let dt = self.config.dt;
        let t_end = self.config.t_end;
        let n = ((t_end / dt) - 1e-9).ceil().max(1.0) as usize;
        let last = t_end - (n - 1) as f64 * dt;
        (n, last)
    }

    fn step_len(&self, i: usize) -> f64 {
        let (n, last) = self.schedule();
        if i + 1 == n {
            last
        } else {
            self.config.dt
        }
    }

    fn step_time(&self, i: usize) -> f64 {
        let (n, _) = self.schedule();
        if i == n {
            self.config.t_end
        } else {
            i as f64 * self.config.dt
        }
    }

    /// Adaptive step: retake as two halves (Brownian bridge split of `dw`)
    /// while the sup-norm moves by more than 10%.
    fn step_adaptive(
        &self,
        state: &mut SolverState,
        dt: f64,
        dw: &[f64],
        rng: &mut TrajectoryRng,
        depth: u32,
        run: &mut Run,
    ) {
        const MAX_DEPTH: u32 = 20;
        let before = state.coeffs.clone();
        let (t0, sup0) = (state.t, state.sup);
        self.step_with_noise(state, dt, dw);
        let change = (state.sup - sup0).abs() / sup0.max(f64::MIN_POSITIVE);
        if depth >= MAX_DEPTH || (state.sup.is_finite() && change <= 0.1) {
            run.record.stats.min_dt = run.record.stats.min_dt.min(dt);
            run.advance(t0, sup0, state, false);
            return;
        }
        run.record.stats.halvings += 1;
        *state = SolverState {
            t: t0,
            ..self.state_from(before, t0)
        };
        let half = 0.5 * dt;
        let mut first = vec![0.0; dw.len()];
        if self.is_stochastic() {
            let s = 0.5 * dt.sqrt();
            for ((f, w), l) in first.iter_mut().zip(dw).zip(&self.lambdas) {
                let xi: f64 = rng.sample(StandardNormal);
                *f = 0.5 * w + l * s * xi;
            }
        }
        let second: Vec<f64> = dw.iter().zip(&first).map(|(w, f)| w - f).collect();
        self.step_adaptive(state, half, &first, rng, depth + 1, run);
        if !run.done {
            self.step_adaptive(state, half, &second, rng, depth + 1, run);
        }
    }

    /// Simulate trajectory `index` of the family keyed by `seed`.
    pub fn simulate(&self, seed: u64, index: u64) -> TrajectoryRecord {
        let mut rng = trajectory_rng(seed, index);
        let mut run = Run::new(self, seed, index);
        let mut state = self.initial_state();
        run.start(&state);
        let (n_steps, _) = self.schedule();
        let mut dw = vec![0.0; self.op.num_modes()];
        for i in 0..n_steps {
            if run.done {
                break;
            }
            let dt = self.step_len(i);
            if self.is_stochastic() {
                self.draw_noise(dt, &mut rng, &mut dw);
            }
            let last = i + 1 == n_steps;
            run.record.stats.steps += 1;
            if self.config.adaptive {
                // Ladder crossings are located on the accepted sub-steps.
                self.step_adaptive(&mut state, dt, &dw, &mut rng, 0, &mut run);
                if !run.done {
                    state.t = self.step_time(i + 1);
                    run.record.final_time = state.t;
                    let traced = run.record.sup_trace.last().map(|&(t, _)| t);
                    if last && traced.is_none_or(|t| (t - state.t).abs() > 1e-12) {
                        run.record.sup_trace.push((state.t, state.sup));
                    }
                }
                continue;
            }
            let (t0, sup0) = (state.t, state.sup);
            self.step_with_noise(&mut state, dt, &dw);
            run.record.stats.min_dt = run.record.stats.min_dt.min(dt);
            // Pin the clock to the schedule to avoid drift from summation.
            if state.sup.is_finite() {
                state.t = self.step_time(i + 1);
            }
            run.advance(t0, sup0, &state, last);
        }
        run.finish(&state)
    }
}

/// Ladder bookkeeping for one trajectory.
struct Run {
    record: TrajectoryRecord,
    levels: Vec<f64>,
    next: usize,
    stride: usize,
    steps_since_trace: usize,
    done: bool,
}

impl Run {
    fn new(solver: &Solver, seed: u64, index: u64) -> Run {
        let cfg = &solver.config;
        let levels = (0..=cfg.ladder_depth)
            .map(|n| cfg.ladder_base.powi(n as i32))
            .collect();
        Run {
            record: TrajectoryRecord {
                seed,
                index,
                truncation: solver.truncation,
                ladder: Vec::new(),
                exploded: false,
                overflow: false,
                explosion_threshold: cfg.explosion_threshold(),
                final_time: 0.0,
                final_sup: 0.0,
                sup_trace: Vec::new(),
                stats: StepStats {
                    steps: 0,
                    halvings: 0,
                    min_dt: f64::INFINITY,
                },
            },
            levels,
            next: 0,
            stride: cfg.trace_stride,
            steps_since_trace: 0,
            done: false,
        }
    }

    fn hit(&mut self, time: f64, initial: bool) {
        let n = self.next as u32;
        self.record.ladder.push(LadderHit {
            n,
            level: self.levels[self.next],
            time,
            initial,
        });
        self.next += 1;
        if self.next == self.levels.len() {
            self.record.exploded = true;
            self.done = true;
        }
    }

    fn start(&mut self, state: &SolverState) {
        self.record.sup_trace.push((state.t, state.sup));
        if !state.sup.is_finite() {
            self.record.exploded = true;
            self.record.overflow = true;
            self.done = true;
            return;
        }
        while !self.done && state.sup >= self.levels[self.next] {
            self.hit(0.0, true);
        }
    }

    fn advance(&mut self, t0: f64, sup0: f64, state: &SolverState, last: bool) {
        if !state.sup.is_finite() {
            self.record.exploded = true;
            self.record.overflow = true;
            self.record.final_time = t0;
            self.record.final_sup = sup0;
            self.done = true;
            self.record.sup_trace.push((t0, sup0));
            return;
        }
        let (t1, sup1) = (state.t, state.sup);
        while !self.done && sup1 >= self.levels[self.next] {
            let level = self.levels[self.next];
            let time = if sup1 == sup0 {
                t1
            } else {
                t0 + (t1 - t0) * ((level - sup0) / (sup1 - sup0)).clamp(0.0, 1.0)
            };
            self.hit(time, false);
        }
        self.steps_since_trace += 1;
        if self.steps_since_trace == self.stride || last || self.done {
            self.steps_since_trace = 0;
            self.record.sup_trace.push((t1, sup1));
        }
        self.record.final_time = t1;
        self.record.final_sup = sup1;
    }

    fn finish(mut self, state: &SolverState) -> TrajectoryRecord {
        if self.record.stats.steps == 0 {
            self.record.final_time = state.t;
            self.record.final_sup = state.sup;
        }
        self.record
    }
}

/// [`Solver::simulate`] on a freshly built solver.
pub fn simulate_trajectory(
    cfg: &SolverConfig,
    seed: u64,
    index: u64,
) -> Result<TrajectoryRecord, SolverError> {
    Ok(Solver::new(cfg)?.simulate(seed, index))
}

/// Trajectory of the cutoff system `u_n`, driven by the same stream.
pub fn simulate_truncated(
    cfg: &SolverConfig,
    n: u32,
    seed: u64,
    index: u64,
) -> Result<TrajectoryRecord, SolverError> {
    if n > cfg.ladder_depth {
        return Err(SolverError::Config(format!(
            "cutoff level {n} exceeds ladder depth {}",
            cfg.ladder_depth
        )));
    }
    Ok(Solver::new(cfg)?.truncated(n).simulate(seed, index))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub n: u32,
    /// `τ_n` of `u_{n+1}`, when reached before the end time.
    pub tau_n: Option<f64>,
    /// Largest grid sup-distance between `u_n` and `u_{n+1}` over steps
    /// ending no later than `τ_n` (or the whole run when `τ_n` is absent).
    pub max_discrepancy: f64,
    pub steps_compared: u64,
    /// First grid sup-distance after `τ_n`, for contrast.
    pub discrepancy_after: Option<f64>,
}

/// Run `u_n` and `u_{n+1}` in lockstep on one noise stream and measure how
/// far apart they are up to `τ_n`.
pub fn cutoff_consistency(
    cfg: &SolverConfig,
    n: u32,
    seed: u64,
    index: u64,
) -> Result<ConsistencyReport, SolverError> {
    let solver = Solver::new(cfg)?;
    let lo = solver.truncated(n);
    let hi = solver.truncated(n + 1);
    let level = cfg.ladder_base.powi(n as i32);
    let mut rng = trajectory_rng(seed, index);
    let mut a = lo.initial_state();
    let mut b = hi.initial_state();
    let mut report = ConsistencyReport {
        n,
        tau_n: if b.sup >= level { Some(0.0) } else { None },
        max_discrepancy: 0.0,
        steps_compared: 0,
        discrepancy_after: None,
    };
    let (n_steps, _) = solver.schedule();
    let mut dw = vec![0.0; solver.op.num_modes()];
    for i in 0..n_steps {
        let dt = solver.step_len(i);
        if solver.is_stochastic() {
            solver.draw_noise(dt, &mut rng, &mut dw);
        }
        let (t0, sup0) = (b.t, b.sup);
        lo.step_with_noise(&mut a, dt, &dw);
        hi.step_with_noise(&mut b, dt, &dw);
        let diff = a
            .grid
            .iter()
            .zip(&b.grid)
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        if report.tau_n.is_some() {
            report.discrepancy_after = Some(diff);
            break;
        }
        report.max_discrepancy = report.max_discrepancy.max(diff);
        report.steps_compared += 1;
        if !b.sup.is_finite() {
            break;
        }
        if b.sup >= level {
            let t1 = b.t;
            report.tau_n = Some(t0 + (t1 - t0) * ((level - sup0) / (b.sup - sup0)).clamp(0.0, 1.0));
        }
    }
    Ok(report)
}
