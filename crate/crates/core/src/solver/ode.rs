//! Scalar ODE `v' = f(v)`, integrated in `w = ln v` so that growth far past
//! the `f64` range stays representable.

use serde::{Deserialize, Serialize};

use crate::expr::{Expr, LogReal};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeOptions {
    /// Blow-up is declared when `ln v` reaches this value.
    pub log_threshold: f64,
    /// Local error tolerance per step, in `ln v`.
    pub tol: f64,
    /// Ladder levels `base^n` whose first crossing times are recorded.
    pub ladder_base: f64,
    /// Times at which the value is reported exactly (steps land on them).
    pub output_times: Vec<f64>,
    /// Most doubling and ladder times recorded, each.
    pub crossing_limit: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            log_threshold: 1e12f64.ln(),
            tol: 1e-10,
            ladder_base: 3.0,
            output_times: Vec::new(),
            crossing_limit: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeOutcome {
    pub exploded: bool,
    /// Time at which `ln v` reached the threshold, bracketed to `tol`.
    pub explosion_time: Option<f64>,
    pub final_time: f64,
    pub final_log_value: f64,
    /// `(t, ln v)` at every output time reached.
    pub outputs: Vec<(f64, f64)>,
    /// First times `t_n` with `v(t_n) = 2^n v_0`, `n = 1, 2, …`.
    pub doubling_times: Vec<f64>,
    /// First times `v` reaches `base^n`, as `(n, t)`, for levels above `v_0`.
    pub ladder_times: Vec<(u32, f64)>,
    pub steps: u64,
}

/// `w' = f(e^w) e^{-w}`.
fn rhs(f: &Expr, w: f64) -> f64 {
    if w < 700.0 {
        let v = w.exp();
        return f.eval(v) / v;
    }
    match f.eval_log(LogReal::from_ln(w)) {
        Ok(fv) if fv.sign > 0 => (fv.ln - w).exp(),
        Ok(fv) if fv.sign == 0 => 0.0,
        Ok(fv) => -(fv.ln - w).exp(),
        Err(_) => f64::NAN,
    }
}

fn rk4(f: &Expr, w: f64, h: f64) -> f64 {
    let k1 = rhs(f, w);
    let k2 = rhs(f, w + 0.5 * h * k1);
    let k3 = rhs(f, w + 0.5 * h * k2);
    let k4 = rhs(f, w + h * k3);
    w + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Time in `[t0, t0 + h]` at which `w` reaches `target`, by bisection on the
/// sub-step length with fresh RK4 integration from `(t0, w0)`.
fn crossing(f: &Expr, t0: f64, w0: f64, h: f64, target: f64, tol: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, h);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let mut w = w0;
        let sub = 8;
        for _ in 0..sub {
            w = rk4(f, w, mid / sub as f64);
        }
        if w.is_finite() && w < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    t0 + hi
}

/// Adaptive RK4 with step doubling (Richardson error estimate) for
/// `v' = f(v)`, `v(0) = v0 > 0`, on `[0, t_end]`.
///
/// Explosion is declared when `ln v` reaches `opts.log_threshold`; the
/// crossing time is bisected on the last step to within `tol`. A collapsing
/// step size also counts as explosion at the current time.
pub fn simulate_ode(f: &Expr, v0: f64, t_end: f64, tol: f64, opts: &OdeOptions) -> OdeOutcome {
    assert!(v0 > 0.0, "initial value must be positive");
    let mut t = 0.0;
    let mut w = v0.ln();
    let w_start = w;
    let ln2 = std::f64::consts::LN_2;
    let ln_base = opts.ladder_base.ln();
    let mut next_doubling = 1u32;
    let mut next_level = (w / ln_base).floor() as i64 + 1;
    let mut out = OdeOutcome {
        exploded: false,
        explosion_time: None,
        final_time: t_end,
        final_log_value: w,
        outputs: Vec::new(),
        doubling_times: Vec::new(),
        ladder_times: Vec::new(),
        steps: 0,
    };
    let mut outputs: Vec<f64> = opts
        .output_times
        .iter()
        .copied()
        .filter(|&s| s <= t_end)
        .collect();
    outputs.sort_by(f64::total_cmp);
    let mut next_output = 0;
    let mut h = (t_end * 1e-3).min(1e-3);
    while t < t_end {
        let mut stop = t_end;
        if next_output < outputs.len() {
            stop = stop.min(outputs[next_output]);
        }
        let step = h.min(stop - t);
        let full = rk4(f, w, step);
        let half = rk4(f, rk4(f, w, 0.5 * step), 0.5 * step);
        let err = (half - full).abs() / 15.0;
        let scale = opts.tol * w.abs().max(1.0);
        if !half.is_finite() || err > scale {
            h = 0.25 * step;
            if h < 1e-15 * t.max(1.0) {
                out.exploded = true;
                out.explosion_time = Some(t);
                out.final_time = t;
                out.final_log_value = w;
                return out;
            }
            continue;
        }
        let w_new = half + (half - full) / 15.0;
        let t_new = if step == stop - t { stop } else { t + step };
        out.steps += 1;
        while out.doubling_times.len() < opts.crossing_limit
            && w_new >= w_start + next_doubling as f64 * ln2
        {
            let target = w_start + next_doubling as f64 * ln2;
            out.doubling_times
                .push(crossing(f, t, w, step, target, tol * 1e-3));
            next_doubling += 1;
        }
        while out.ladder_times.len() < opts.crossing_limit
            && next_level >= 0
            && w_new >= next_level as f64 * ln_base
        {
            let target = next_level as f64 * ln_base;
            out.ladder_times.push((
                next_level as u32,
                crossing(f, t, w, step, target, tol * 1e-3),
            ));
            next_level += 1;
        }
        if w_new >= opts.log_threshold {
            let t_cross = crossing(f, t, w, step, opts.log_threshold, tol * 1e-3);
            out.exploded = true;
            out.explosion_time = Some(t_cross);
            out.final_time = t_cross;
            out.final_log_value = opts.log_threshold;
            return out;
        }
        t = t_new;
        w = w_new;
        if next_output < outputs.len() && t == outputs[next_output] {
            out.outputs.push((t, w));
            next_output += 1;
        }
        let grow = if err == 0.0 {
            4.0
        } else {
            (0.9 * (scale / err).powf(0.2)).clamp(0.2, 4.0)
        };
        h = step * grow;
    }
    out.final_time = t_end;
    out.final_log_value = w;
    out
}
