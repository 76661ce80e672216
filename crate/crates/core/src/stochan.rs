//! Stochastic convolution diagnostics: sup-norm moments of
//! `Z(t) = ∫_0^t S(t-s) M dw(s)`, per-mode Itô isometry, and the
//! factorization identity
//! `Z(t) = (sin απ / π) ∫_0^t (t-s)^{α-1} S(t-s) Z_α(s) ds` with
//! `Z_α(s) = ∫_0^s (s-r)^{-α} S(s-r) dw(r)`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::trajectory_rng;
use crate::spectral::{NoiseSpec, OperatorSpec, SpectralOperator};
use crate::stats::{linear_fit, mean, standard_error};

pub const MIN_MOMENT_SAMPLES: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StochanError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("{got} samples requested, at least {MIN_MOMENT_SAMPLES} are required")]
    TooFewSamples { got: usize },
}

/// `λ² (1 - e^{-2αt}) / (2α)`, the variance of an OU mode started at 0.
pub fn mode_variance(alpha: f64, lambda: f64, t: f64) -> f64 {
    lambda * lambda * -(-2.0 * alpha * t).exp_m1() / (2.0 * alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentExperiment {
    #[serde(default)]
    pub operator: OperatorSpec,
    pub noise: NoiseSpec,
    /// Constant integrand `Φ ≡ M`.
    pub m: f64,
    pub p: f64,
    pub zeta: f64,
    pub epsilons: Vec<f64>,
    pub samples: usize,
    /// Time step of the mode recursion; every `ε` must be a multiple of it.
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisCheck {
    pub zeta_in_range: bool,
    /// `max{2/(1-η-ζ), d/ζ}`.
    pub p_min: f64,
    pub p_ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub epsilon: f64,
    pub estimate: f64,
    pub stderr: f64,
    /// `estimate / (M^p ε^{p(1-η-ζ)/2})`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub rows: Vec<MomentRow>,
    pub slope: f64,
    pub slope_stderr: f64,
    pub reference_slope: f64,
    pub eta: f64,
    /// Range of the empirical constant over the `ε` list.
    pub c_min: f64,
    pub c_max: f64,
    pub hypothesis: HypothesisCheck,
    pub samples: usize,
}

impl MomentExperiment {
    pub fn eta(&self) -> Result<f64, StochanError> {
        self.noise
            .eta()
            .map_err(|e| StochanError::Parameter(e.to_string()))
    }

    pub fn reference_slope(&self) -> Result<f64, StochanError> {
        Ok(self.p * (1.0 - self.eta()? - self.zeta) / 2.0)
    }

    pub fn hypothesis(&self) -> Result<HypothesisCheck, StochanError> {
        let eta = self.eta()?;
        let d = self.operator.lengths.len() as f64;
        let gap = 1.0 - eta - self.zeta;
        let p_min = (2.0 / gap).max(d / self.zeta);
        Ok(HypothesisCheck {
            zeta_in_range: self.zeta > 0.0 && gap > 0.0,
            p_min,
            p_ok: self.p > p_min,
        })
    }

    /// Steps of size `δ` to reach each `ε`.
    fn checkpoints(&self) -> Result<Vec<usize>, StochanError> {
        self.epsilons
            .iter()
            .map(|&e| {
                let k = (e / self.delta).round();
                if k < 1.0 || ((k * self.delta - e) / e).abs() > 1e-9 {
                    Err(StochanError::Parameter(format!(
                        "epsilon {e} is not a positive multiple of delta {}",
                        self.delta
                    )))
                } else {
                    Ok(k as usize)
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), StochanError> {
        if self.samples < MIN_MOMENT_SAMPLES {
            return Err(StochanError::TooFewSamples { got: self.samples });
        }
        let bad = |m: String| Err(StochanError::Parameter(m));
        if !(self.delta > 0.0) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        if !(self.p > 0.0) {
            return bad(format!("p must be positive, got {}", self.p));
        }
        if !(self.m >= 0.0 && self.m.is_finite()) {
            return bad(format!("M must be finite and nonnegative, got {}", self.m));
        }
        if self.epsilons.len() < 2 || self.epsilons.windows(2).any(|w| w[1] <= w[0]) {
            return bad("epsilon list must hold at least two strictly increasing values".into());
        }
        let eta = self.eta()?;
        if !(self.zeta > 0.0 && self.zeta < 1.0 - eta) {
            return bad(format!(
                "zeta must lie in (0, {}), got {}",
                1.0 - eta,
                self.zeta
            ));
        }
        self.checkpoints()?;
        Ok(())
    }
}

fn powp(x: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p.abs() < 64.0 {
        x.powi(p as i32)
    } else {
        x.powf(p)
    }
}

/// Running `sup_{t ≤ ε} |Z(t)|_∞` at each `ε` of the experiment, for one
/// sample path. `Z` is advanced by the exact OU recursion per mode.
pub fn sample_sup_path(
    exp: &MomentExperiment,
    op: &SpectralOperator,
    seed: u64,
    index: u64,
) -> Vec<f64> {
    let checkpoints = exp.checkpoints().expect("validated experiment");
    let mut rng = trajectory_rng(seed, index);
    let k = op.num_modes();
    let lambdas = exp.noise.lambdas(op);
    let decay: Vec<f64> = op
        .modes()
        .iter()
        .map(|m| (-m.alpha * exp.delta).exp())
        .collect();
    let scale: Vec<f64> = op
        .modes()
        .iter()
        .zip(&lambdas)
        .map(|(m, l)| exp.m * mode_variance(m.alpha, *l, exp.delta).sqrt())
        .collect();
    let mut z = vec![0.0; k];
    let mut grid = vec![0.0; op.grid_len()];
    let mut ws = op.workspace();
    let mut sup = 0.0f64;
    let mut out = Vec::with_capacity(checkpoints.len());
    let last = *checkpoints.last().unwrap();
    let mut next = 0;
    for step in 1..=last {
        for j in 0..k {
            let xi: f64 = rng.sample(StandardNormal);
            z[j] = decay[j] * z[j] + scale[j] * xi;
        }
        op.to_grid_into(&z, &mut grid, &mut ws);
        sup = grid.iter().fold(sup, |s, v| s.max(v.abs()));
        while next < checkpoints.len() && checkpoints[next] == step {
            out.push(sup);
            next += 1;
        }
    }
    out
}

/// Monte Carlo estimate of `E sup_{t≤ε} |Z(t)|_∞^p` for each `ε`, with the
/// least-squares slope of `log estimate` against `log ε`.
pub fn estimate_sup_moment(
    exp: &MomentExperiment,
    seed: u64,
) -> Result<MomentReport, StochanError> {
    exp.validate()?;
    let op = SpectralOperator::from_spec(&exp.operator)
        .map_err(|e| StochanError::Parameter(e.to_string()))?;
    let eta = exp.eta()?;
    let reference_slope = exp.reference_slope()?;
    let paths: Vec<Vec<f64>> = (0..exp.samples as u64)
        .into_par_iter()
        .map(|i| sample_sup_path(exp, &op, seed, i))
        .collect();
    let mut rows = Vec::with_capacity(exp.epsilons.len());
    for (c, &eps) in exp.epsilons.iter().enumerate() {
        let values: Vec<f64> = paths.iter().map(|p| powp(p[c], exp.p)).collect();
        let estimate = mean(&values);
        rows.push(MomentRow {
            epsilon: eps,
            estimate,
            stderr: standard_error(&values),
            ratio: estimate / (powp(exp.m, exp.p) * eps.powf(reference_slope)),
        });
    }
    let (slope, slope_stderr) = if rows.iter().all(|r| r.estimate > 0.0) {
        let xs: Vec<f64> = rows.iter().map(|r| r.epsilon.ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.estimate.ln()).collect();
        let fit = linear_fit(&xs, &ys);
        (fit.slope, fit.slope_stderr)
    } else {
        (f64::NAN, f64::NAN)
    };
    let c_min = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    let c_max = rows
        .iter()
        .map(|r| r.ratio)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(MomentReport {
        rows,
        slope,
        slope_stderr,
        reference_slope,
        eta,
        c_min,
        c_max,
        hypothesis: exp.hypothesis()?,
        samples: exp.samples,
    })
}

/// Discretization of the factorization identity for one scalar mode
/// `dZ = -a Z dt + dB` on `[0, t]` with `n` equal cells.
///
/// `Z_α` is evaluated at the nodes from the Brownian cell increments, with
/// `(s-r)^{-α}` integrated exactly over each cell and the exponential frozen
/// at the cell midpoint. The outer integral uses exact weights for
/// `(t-s)^{α-1}` on each cell against the average of the two nodal values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorizationProbe {
    pub alpha: f64,
    pub a: f64,
    pub t: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizationResult {
    pub reconstructed: f64,
    pub direct: f64,
    pub discrepancy: f64,
    /// `|Z_rec(n) - Z_rec(n/2)|` on the same path.
    pub quadrature_error_estimate: f64,
    pub warning: Option<String>,
}

impl FactorizationProbe {
    pub fn new(
        alpha: f64,
        a: f64,
        t: f64,
        n: usize,
        eta: f64,
    ) -> Result<FactorizationProbe, StochanError> {
        let hi = (1.0 - eta) / 2.0;
        if !(alpha > 0.0 && alpha < hi) {
            return Err(StochanError::Parameter(format!(
                "alpha must lie in (0, {hi}), got {alpha}"
            )));
        }
        if !(a >= 0.0 && t > 0.0) {
            return Err(StochanError::Parameter(format!(
                "need a >= 0 and t > 0, got a = {a}, t = {t}"
            )));
        }
        if n < 2 || !n.is_multiple_of(2) {
            return Err(StochanError::Parameter(format!(
                "cell count must be even and >= 2, got {n}"
            )));
        }
        Ok(FactorizationProbe { alpha, a, t, n })
    }

    fn h(&self) -> f64 {
        self.t / self.n as f64
    }

    /// Outer weights `W_i`.
    fn outer_weights(&self) -> Vec<f64> {
        let h = self.h();
        let al = self.alpha;
        (0..self.n)
            .map(|i| {
                let (s0, s1) = (i as f64 * h, (i + 1) as f64 * h);
                let mid = 0.5 * (s0 + s1);
                let (d0, d1) = (self.t - s0, (self.t - s1).max(0.0));
                (-self.a * (self.t - mid)).exp() * (d0.powf(al) - d1.powf(al)) / al
            })
            .collect()
    }

    /// Weight of the increment of cell `j` in `Z_α` at the node `m` cells
    /// after it (`g(m)`, `m ≥ 1`).
    fn inner_weights(&self) -> Vec<f64> {
        let h = self.h();
        let b = 1.0 - self.alpha;
        let mut g = vec![0.0; self.n + 1];
        for (m, gm) in g.iter_mut().enumerate().skip(1) {
            let mf = m as f64;
            *gm = (-self.a * h * (mf - 0.5)).exp()
                * h.powf(-self.alpha)
                * (mf.powf(b) - (mf - 1.0).powf(b))
                / b;
        }
        g
    }

    /// Per-cell weights `(reconstructed, direct)`: both `Z` values are
    /// `Σ_j ΔB_j K(j)`.
    pub fn kernels(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let h = self.h();
        let w = self.outer_weights();
        let g = self.inner_weights();
        let c = (self.alpha * std::f64::consts::PI).sin() / std::f64::consts::PI;
        let gi = |m: isize| if m >= 1 { g[m as usize] } else { 0.0 };
        let rec = (0..n)
            .map(|j| {
                c * (j..n)
                    .map(|i| {
                        let m = i as isize - j as isize;
                        w[i] * 0.5 * (gi(m) + gi(m + 1))
                    })
                    .sum::<f64>()
            })
            .collect();
        let direct = (0..n)
            .map(|j| {
                let (s0, s1) = (j as f64 * h, (j + 1) as f64 * h);
                if self.a == 0.0 {
                    1.0
                } else {
                    ((-self.a * (self.t - s1)).exp() - (-self.a * (self.t - s0)).exp())
                        / (self.a * h)
                }
            })
            .collect();
        (rec, direct)
    }

    /// Root-mean-square discrepancy `sqrt(h Σ (K_rec - K_dir)²)`, the exact
    /// standard deviation of the reconstruction error.
    pub fn kernel_rms(&self) -> f64 {
        let (rec, dir) = self.kernels();
        (self.h()
            * rec
                .iter()
                .zip(&dir)
                .map(|(r, d)| (r - d).powi(2))
                .sum::<f64>())
        .sqrt()
    }

    /// Reconstruct `Z(t)` from cell increments `db` (length `n`) and compare
    /// with the direct stochastic integral on the same increments.
    pub fn reconstruct(&self, db: &[f64]) -> Result<FactorizationResult, StochanError> {
        if db.len() != self.n {
            return Err(StochanError::Parameter(format!(
                "{} increments for {} cells",
                db.len(),
                self.n
            )));
        }
        let (rec, dir) = self.kernels();
        let reconstructed: f64 = db.iter().zip(&rec).map(|(b, k)| b * k).sum();
        let direct: f64 = db.iter().zip(&dir).map(|(b, k)| b * k).sum();
        let coarse = FactorizationProbe {
            n: self.n / 2,
            ..*self
        };
        let (rec2, _) = coarse.kernels();
        let coarse_value: f64 = db
            .chunks(2)
            .zip(&rec2)
            .map(|(b, k)| (b[0] + b[1]) * k)
            .sum();
        let quadrature_error_estimate = (reconstructed - coarse_value).abs();
        let scale = mode_variance(self.a.max(1e-300), 1.0, self.t).sqrt();
        let warning = (quadrature_error_estimate > 0.1 * scale).then(|| {
            format!(
                "quadrature too coarse for alpha = {}: estimated error {quadrature_error_estimate:.3e} at {} cells",
                self.alpha, self.n
            )
        });
        Ok(FactorizationResult {
            reconstructed,
            direct,
            discrepancy: (reconstructed - direct).abs(),
            quadrature_error_estimate,
            warning,
        })
    }
}

/// `(sin απ / π) ∫_0^t (t-s)^{α-1} s^{-α} ds` by the factorization
/// quadrature (exact outer weights, cell averages of `s^{-α}`). Equals 1.
pub fn beta_identity(alpha: f64, t: f64, n: usize) -> f64 {
    let probe = FactorizationProbe {
        alpha,
        a: 0.0,
        t,
        n,
    };
    let h = t / n as f64;
    let b = 1.0 - alpha;
    let w = probe.outer_weights();
    let c = (alpha * std::f64::consts::PI).sin() / std::f64::consts::PI;
    c * w
        .iter()
        .enumerate()
        .map(|(i, wi)| {
            let (s0, s1) = (i as f64 * h, (i + 1) as f64 * h);
            wi * (s1.powf(b) - s0.powf(b)) / (b * h)
        })
        .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRow {
    pub n: usize,
    /// Discrepancy on the first path.
    pub discrepancy: f64,
    /// Root mean square of the discrepancy over all paths.
    pub discrepancy_rms: f64,
    pub kernel_rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub rows: Vec<RefinementRow>,
    pub paths: usize,
    /// Fitted order of `kernel_rms` in the cell width.
    pub observed_order: f64,
}

/// Reconstruction error at each cell count in `levels`. Path `k` is drawn
/// at the finest level from stream `k` of `seed` and summed down to the
/// coarser levels, so every level sees the same Brownian motion.
pub fn factorization_refinement(
    alpha: f64,
    a: f64,
    t: f64,
    levels: &[usize],
    paths: usize,
    seed: u64,
) -> Result<RefinementReport, StochanError> {
    let finest = *levels
        .iter()
        .max()
        .ok_or_else(|| StochanError::Parameter("no levels".into()))?;
    if levels.iter().any(|&n| finest % n != 0) {
        return Err(StochanError::Parameter(
            "levels must divide the finest level".into(),
        ));
    }
    if paths == 0 {
        return Err(StochanError::Parameter(
            "at least one path is required".into(),
        ));
    }
    let sd = (t / finest as f64).sqrt();
    let fine: Vec<Vec<f64>> = (0..paths as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = trajectory_rng(seed, k);
            (0..finest)
                .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let mut rows = Vec::with_capacity(levels.len());
    for &n in levels {
        let probe = FactorizationProbe::new(alpha, a, t, n, 0.0)?;
        let (rec, dir) = probe.kernels();
        let diff: Vec<f64> = rec.iter().zip(&dir).map(|(r, d)| r - d).collect();
        let errs: Vec<f64> = fine
            .iter()
            .map(|path| {
                path.chunks(finest / n)
                    .zip(&diff)
                    .map(|(c, k)| c.iter().sum::<f64>() * k)
                    .sum::<f64>()
                    .abs()
            })
            .collect();
        rows.push(RefinementRow {
            n,
            discrepancy: errs[0],
            discrepancy_rms: (errs.iter().map(|e| e * e).sum::<f64>() / paths as f64).sqrt(),
            kernel_rms: (probe.h() * diff.iter().map(|d| d * d).sum::<f64>()).sqrt(),
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| (t / r.n as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.kernel_rms.ln()).collect();
    Ok(RefinementReport {
        observed_order: linear_fit(&xs, &ys).slope,
        paths,
        rows,
    })
}
