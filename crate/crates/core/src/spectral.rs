//! Dirichlet sine basis on a box, coloured noise, and the sine transform
//! between coefficients and the interior collocation grid.
//!
//! On `[0, L_1] × … × [0, L_d]` the eigenfunctions of `-Δ` are
//! `e_k(x) = ∏ √(2/L_i) sin(k_i π x_i / L_i)` with eigenvalues
//! `α_k = π² Σ (k_i/L_i)²`. Modes are stored in ascending `α`, ties broken
//! lexicographically on the index tuple. The grid has `M` interior points per
//! axis at `x_j = L (j+1)/(M+1)`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rustdct::{DctPlanner, Dst1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::Expr;
use crate::growth::{eta_from_noise, NoiseExponent};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("grid size mismatch: expected {expected} values, got {got}")]
    GridSize { expected: usize, got: usize },
    #[error("weighted series {series} does not settle at the mode cap (term decay exponent {exponent:.4})")]
    Divergent { series: String, exponent: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    /// One-based index tuple.
    pub index: Vec<usize>,
    pub alpha: f64,
    /// Position of the mode in the `M^d` transform tensor.
    pub tensor_pos: usize,
}

/// Serializable operator description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    #[serde(default = "default_lengths")]
    pub lengths: Vec<f64>,
    #[serde(default = "default_modes")]
    pub modes: usize,
    /// Interior grid points per axis; `2K + 2` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
}

fn default_lengths() -> Vec<f64> {
    vec![1.0]
}

fn default_modes() -> usize {
    256
}

impl Default for OperatorSpec {
    fn default() -> Self {
        OperatorSpec {
            lengths: default_lengths(),
            modes: default_modes(),
            grid: None,
        }
    }
}

#[derive(Clone)]
pub struct SpectralOperator {
    lengths: Vec<f64>,
    modes_per_axis: usize,
    grid_points: usize,
    modes: Vec<Mode>,
    dst: Arc<dyn Dst1<f64>>,
}

impl fmt::Debug for SpectralOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralOperator")
            .field("lengths", &self.lengths)
            .field("modes_per_axis", &self.modes_per_axis)
            .field("grid_points", &self.grid_points)
            .finish()
    }
}

/// Exact Dirichlet eigenpairs on the box with the default grid `2K + 2`.
pub fn dirichlet_eigenpairs(lengths: &[f64], k: usize) -> Result<SpectralOperator, SpectralError> {
    SpectralOperator::new(lengths, k, 2 * k + 2)
}

impl SpectralOperator {
    pub fn new(
        lengths: &[f64],
        k: usize,
        grid_points: usize,
    ) -> Result<SpectralOperator, SpectralError> {
        if lengths.is_empty() || lengths.len() > 3 {
            return Err(SpectralError::Parameter(format!(
                "dimension must be 1, 2 or 3, got {}",
                lengths.len()
            )));
        }
        if let Some(l) = lengths.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(SpectralError::Parameter(format!(
                "side length must be positive, got {l}"
            )));
        }
        if k == 0 {
            return Err(SpectralError::Parameter(
                "mode cap must be at least 1".into(),
            ));
        }
        if grid_points < k {
            return Err(SpectralError::Parameter(format!(
                "grid of {grid_points} points cannot resolve {k} modes"
            )));
        }
        let d = lengths.len();
        let total = k.pow(d as u32);
        let mut modes = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rest = flat;
            let mut index = vec![0; d];
            for i in (0..d).rev() {
                index[i] = rest % k + 1;
                rest /= k;
            }
            let alpha = std::f64::consts::PI.powi(2)
                * index
                    .iter()
                    .zip(lengths)
                    .map(|(&ki, &l)| (ki as f64 / l).powi(2))
                    .sum::<f64>();
            let tensor_pos = index
                .iter()
                .fold(0, |acc, &ki| acc * grid_points + (ki - 1));
            modes.push(Mode {
                index,
                alpha,
                tensor_pos,
            });
        }
        modes.sort_by(|a, b| {
            a.alpha
                .total_cmp(&b.alpha)
                .then_with(|| a.index.cmp(&b.index))
        });
        let dst = DctPlanner::new().plan_dst1(grid_points);
        Ok(SpectralOperator {
            lengths: lengths.to_vec(),
            modes_per_axis: k,
            grid_points,
            modes,
            dst,
        })
    }

    pub fn from_spec(spec: &OperatorSpec) -> Result<SpectralOperator, SpectralError> {
        let grid = spec.grid.unwrap_or(2 * spec.modes + 2);
        SpectralOperator::new(&spec.lengths, spec.modes, grid)
    }

    pub fn dim(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn modes_per_axis(&self) -> usize {
        self.modes_per_axis
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.alpha).collect()
    }

    pub fn grid_points_per_axis(&self) -> usize {
        self.grid_points
    }

    pub fn grid_len(&self) -> usize {
        self.grid_points.pow(self.dim() as u32)
    }

    /// `|e_k|_∞ = ∏ √(2/L_i)`, the same for every mode.
    pub fn sup_norm_factor(&self) -> f64 {
        self.lengths.iter().map(|l| (2.0 / l).sqrt()).product()
    }

    /// Grid cell volume `∏ L_i/(M+1)`.
    pub fn cell_volume(&self) -> f64 {
        self.lengths
            .iter()
            .map(|l| l / (self.grid_points + 1) as f64)
            .product()
    }

    pub fn axis_points(&self, axis: usize) -> Vec<f64> {
        let l = self.lengths[axis];
        let m1 = (self.grid_points + 1) as f64;
        (1..=self.grid_points).map(|j| l * j as f64 / m1).collect()
    }

    /// Coordinates of grid point `flat` (row-major, first axis slowest).
    pub fn grid_point(&self, flat: usize) -> Vec<f64> {
        let d = self.dim();
        let m1 = (self.grid_points + 1) as f64;
        let mut rest = flat;
        let mut x = vec![0.0; d];
        for i in (0..d).rev() {
            x[i] = self.lengths[i] * (rest % self.grid_points + 1) as f64 / m1;
            rest /= self.grid_points;
        }
        x
    }

    /// `e_k(x)` for the mode at sorted position `mode`.
    pub fn eigenfunction(&self, mode: usize, x: &[f64]) -> f64 {
        let m = &self.modes[mode];
        m.index
            .iter()
            .zip(&self.lengths)
            .zip(x)
            .map(|((&k, &l), &xi)| {
                (2.0 / l).sqrt() * (k as f64 * std::f64::consts::PI * xi / l).sin()
            })
            .product()
    }

    pub fn workspace(&self) -> Workspace {
        Workspace {
            tensor: vec![0.0; self.grid_len()],
            line: vec![0.0; self.grid_points],
            scratch: vec![0.0; self.dst.get_scratch_len()],
        }
    }

    fn transform_axes(&self, data: &mut [f64], ws: &mut Workspace) {
        let m = self.grid_points;
        let d = self.dim();
        // The FFT-backed DST-I reads padding cells of the scratch without
        // writing them first, so the scratch must be zeroed before every call.
        if d == 1 {
            ws.scratch.fill(0.0);
            self.dst.process_dst1_with_scratch(data, &mut ws.scratch);
            return;
        }
        let lines = m.pow(d as u32 - 1);
        for axis in 0..d {
            let stride = m.pow((d - 1 - axis) as u32);
            for l in 0..lines {
                let base = (l / stride) * stride * m + l % stride;
                for i in 0..m {
                    ws.line[i] = data[base + i * stride];
                }
                ws.scratch.fill(0.0);
                self.dst
                    .process_dst1_with_scratch(&mut ws.line, &mut ws.scratch);
                for i in 0..m {
                    data[base + i * stride] = ws.line[i];
                }
            }
        }
    }

    /// Grid values `u(x_j) = Σ_k a_k e_k(x_j)`.
    pub fn to_grid_into(&self, coeffs: &[f64], out: &mut [f64], ws: &mut Workspace) {
        debug_assert_eq!(coeffs.len(), self.num_modes());
        out.fill(0.0);
        for (m, &a) in self.modes.iter().zip(coeffs) {
            out[m.tensor_pos] = a;
        }
        self.transform_axes(out, ws);
        let scale = self.sup_norm_factor();
        out.iter_mut().for_each(|v| *v *= scale);
    }

    /// Sine coefficients `a_k = ∫ u e_k`, by the exact discrete inverse.
    pub fn from_grid_into(&self, values: &[f64], coeffs: &mut [f64], ws: &mut Workspace) {
        debug_assert_eq!(values.len(), self.grid_len());
        let mut tensor = std::mem::take(&mut ws.tensor);
        tensor.copy_from_slice(values);
        self.transform_axes(&mut tensor, ws);
        let m1 = (self.grid_points + 1) as f64;
        let scale: f64 = self.lengths.iter().map(|l| (2.0 * l).sqrt() / m1).product();
        for (m, a) in self.modes.iter().zip(coeffs.iter_mut()) {
            *a = tensor[m.tensor_pos] * scale;
        }
        ws.tensor = tensor;
    }

    pub fn to_grid(&self, field: &CoefficientField) -> Vec<f64> {
        let mut out = vec![0.0; self.grid_len()];
        self.to_grid_into(&field.coeffs, &mut out, &mut self.workspace());
        out
    }

    pub fn from_grid(&self, values: &[f64]) -> Result<CoefficientField, SpectralError> {
        if values.len() != self.grid_len() {
            return Err(SpectralError::GridSize {
                expected: self.grid_len(),
                got: values.len(),
            });
        }
        let mut coeffs = vec![0.0; self.num_modes()];
        self.from_grid_into(values, &mut coeffs, &mut self.workspace());
        Ok(CoefficientField::new(coeffs))
    }

    /// Sample a spatial expression (variables `x`, `y`, `z`) on the grid.
    pub fn sample(&self, expr: &Expr) -> Vec<f64> {
        if self.dim() == 1 {
            let xs = self.axis_points(0);
            let mut out = vec![0.0; xs.len()];
            expr.eval_into(&xs, &mut out);
            return out;
        }
        (0..self.grid_len())
            .map(|j| expr.eval_vars(&self.grid_point(j)))
            .collect()
    }

    /// `S(t)` applied mode-wise.
    pub fn apply_semigroup(
        &self,
        field: &CoefficientField,
        t: f64,
    ) -> Result<CoefficientField, SpectralError> {
        if !(t >= 0.0) {
            return Err(SpectralError::Parameter(format!(
                "semigroup time must be >= 0, got {t}"
            )));
        }
        let coeffs = field
            .coeffs
            .iter()
            .zip(&self.modes)
            .map(|(a, m)| a * (-m.alpha * t).exp())
            .collect();
        Ok(CoefficientField {
            coeffs,
            grid: None,
            t: field.t + t,
        })
    }

    /// Grid quadrature `∫ u²` (the grid omits the boundary, where `u` vanishes).
    pub fn grid_l2_norm(&self, values: &[f64]) -> f64 {
        (values.iter().map(|v| v * v).sum::<f64>() * self.cell_volume()).sqrt()
    }
}

/// Scratch buffers for the sine transform, one per worker.
#[derive(Debug, Clone)]
pub struct Workspace {
    tensor: Vec<f64>,
    line: Vec<f64>,
    scratch: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    pub coeffs: Vec<f64>,
    grid: Option<Vec<f64>>,
    pub t: f64,
}

impl CoefficientField {
    pub fn new(coeffs: Vec<f64>) -> CoefficientField {
        CoefficientField {
            coeffs,
            grid: None,
            t: 0.0,
        }
    }

    pub fn zeros(op: &SpectralOperator) -> CoefficientField {
        CoefficientField::new(vec![0.0; op.num_modes()])
    }

    /// Single mode at sorted position `mode` with amplitude `a`.
    pub fn single_mode(op: &SpectralOperator, mode: usize, a: f64) -> CoefficientField {
        let mut f = CoefficientField::zeros(op);
        f.coeffs[mode] = a;
        f
    }

    /// Grid values, computed on first use.
    pub fn grid(&mut self, op: &SpectralOperator) -> &[f64] {
        if self.grid.is_none() {
            self.grid = Some(op.to_grid(self));
        }
        self.grid.as_deref().unwrap()
    }

    pub fn cached_grid(&self) -> Option<&[f64]> {
        self.grid.as_deref()
    }

    pub fn invalidate(&mut self) {
        self.grid = None;
    }

    /// `L²` norm by Parseval.
    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn sup_norm(&mut self, op: &SpectralOperator) -> f64 {
        self.grid(op).iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Rule for the noise weights `λ_j`, indexed by the sorted mode position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseWeights {
    White,
    PowerLaw {
        beta: f64,
    },
    /// `λ_1, λ_2, …`; weights past the list are zero.
    List {
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub weights: NoiseWeights,
    pub q: NoiseExponent,
    pub theta: f64,
}

impl NoiseSpec {
    pub fn white(theta: f64) -> NoiseSpec {
        NoiseSpec {
            weights: NoiseWeights::White,
            q: NoiseExponent::Infinite,
            theta,
        }
    }

    pub fn list(values: Vec<f64>) -> NoiseSpec {
        NoiseSpec {
            weights: NoiseWeights::List { values },
            q: NoiseExponent::Finite(2.0),
            theta: 0.6,
        }
    }

    pub fn eta(&self) -> Result<f64, SpectralError> {
        eta_from_noise(self.q, self.theta).map_err(|e| SpectralError::Parameter(e.to_string()))
    }

    /// `λ_j` for the one-based sorted mode index `j`.
    pub fn lambda(&self, j: usize) -> f64 {
        match &self.weights {
            NoiseWeights::White => 1.0,
            NoiseWeights::PowerLaw { beta } => (j as f64).powf(-beta),
            NoiseWeights::List { values } => values.get(j - 1).copied().unwrap_or(0.0),
        }
    }

    pub fn lambdas(&self, op: &SpectralOperator) -> Vec<f64> {
        (1..=op.num_modes()).map(|j| self.lambda(j)).collect()
    }

    pub fn is_zero(&self) -> bool {
        match &self.weights {
            NoiseWeights::List { values } => values.iter().all(|v| *v == 0.0),
            _ => false,
        }
    }

    /// Convergence evidence for the series behind `η`.
    pub fn admissibility(&self, op: &SpectralOperator) -> Result<Admissibility, SpectralError> {
        let eta = self.eta()?;
        let e2 = op.sup_norm_factor().powi(2);
        let lambdas = self.lambdas(op);
        let (weight_series, sup_lambda) = match self.q {
            NoiseExponent::Finite(q) => {
                let terms: Vec<f64> = lambdas.iter().map(|l| l.abs().powf(q) * e2).collect();
                (Some(series_diagnostic(&terms)), None)
            }
            NoiseExponent::Infinite => (
                None,
                Some(lambdas.iter().fold(0.0f64, |m, l| m.max(l.abs()))),
            ),
        };
        let kernel: Vec<f64> = op
            .modes()
            .iter()
            .map(|m| m.alpha.powf(-self.theta) * e2)
            .collect();
        Ok(Admissibility {
            eta,
            weight_series,
            sup_lambda,
            kernel_series: series_diagnostic(&kernel),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesDiagnostic {
    pub partial_sum: f64,
    /// `S_K - S_{K/2}`.
    pub last_half_increment: f64,
    /// Fitted `ρ` in `term_j ≈ C j^{-ρ}` over the upper half of the cap.
    pub decay_exponent: f64,
    pub cauchy: bool,
}

pub fn series_diagnostic(terms: &[f64]) -> SeriesDiagnostic {
    let n = terms.len();
    let partial_sum: f64 = terms.iter().sum();
    let half: f64 = terms[..n / 2].iter().sum();
    let (xs, ys): (Vec<f64>, Vec<f64>) = terms
        .iter()
        .enumerate()
        .skip(n / 2)
        .filter(|(_, t)| **t > 0.0)
        .map(|(j, t)| (((j + 1) as f64).ln(), t.ln()))
        .unzip();
    let decay_exponent = if xs.len() >= 2 {
        -crate::stats::least_squares_slope(&xs, &ys)
    } else {
        f64::INFINITY
    };
    SeriesDiagnostic {
        partial_sum,
        last_half_increment: partial_sum - half,
        decay_exponent,
        cauchy: decay_exponent > 1.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Admissibility {
    pub eta: f64,
    pub weight_series: Option<SeriesDiagnostic>,
    pub sup_lambda: Option<f64>,
    pub kernel_series: SeriesDiagnostic,
}

/// `c_θ = sup_{x>0} x^θ e^{-x}`, by golden-section search.
pub fn c_theta(theta: f64) -> f64 {
    let f = |x: f64| theta * x.ln() - x;
    let (mut a, mut b) = (1e-12, 50.0);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    f(0.5 * (a + b)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelRow {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
}

/// Rows `(t, Σ e^{-2α_k t}|e_k|²_∞, c_θ (2t)^{-θ} Σ α_k^{-θ}|e_k|²_∞)`.
pub fn kernel_bound_check(
    op: &SpectralOperator,
    theta: f64,
    ts: &[f64],
) -> Result<Vec<KernelRow>, SpectralError> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(SpectralError::Parameter(format!(
            "theta must lie in (0, 1), got {theta}"
        )));
    }
    let e2 = op.sup_norm_factor().powi(2);
    let weighted: Vec<f64> = op
        .modes()
        .iter()
        .map(|m| m.alpha.powf(-theta) * e2)
        .collect();
    let diag = series_diagnostic(&weighted);
    if !diag.cauchy {
        return Err(SpectralError::Divergent {
            series: format!("sum alpha_k^-{theta} |e_k|^2"),
            exponent: diag.decay_exponent,
        });
    }
    let c = c_theta(theta);
    ts.iter()
        .map(|&t| {
            if !(t > 0.0) {
                return Err(SpectralError::Parameter(format!(
                    "t must be positive, got {t}"
                )));
            }
            let lhs = op
                .modes()
                .iter()
                .map(|m| (-2.0 * m.alpha * t).exp() * e2)
                .sum();
            Ok(KernelRow {
                t,
                lhs,
                rhs: c * (2.0 * t).powf(-theta) * diag.partial_sum,
            })
        })
        .collect()
}

/// Brownian coefficient increments `λ_j √Δt ξ_j`. A standard normal is drawn
/// for every mode, so the stream position depends only on the mode count.
pub fn noise_increment<R: Rng + ?Sized>(lambdas: &[f64], dt: f64, rng: &mut R, out: &mut [f64]) {
    let s = dt.sqrt();
    for (o, l) in out.iter_mut().zip(lambdas) {
        let xi: f64 = rng.sample(StandardNormal);
        *o = l * s * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::trajectory_rng;
    use crate::stats::{mean, variance};
    use crate::testutil::integrate;
    use approx::assert_relative_eq;
    use proptest::prelude::{prop_assert, proptest};
    use std::f64::consts::PI;

    /// Sup of `|Σ a_k e_k|` over the interval: dense scan, then golden-section
    /// refinement around the best point.
    fn continuous_sup(op: &SpectralOperator, coeffs: &[f64]) -> f64 {
        let u = |x: f64| {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, a)| a * op.eigenfunction(k, &[x]))
                .sum::<f64>()
                .abs()
        };
        let n = 2048;
        let best = (0..=n)
            .max_by(|&i, &j| u(i as f64 / n as f64).total_cmp(&u(j as f64 / n as f64)))
            .unwrap();
        let (mut a, mut b) = (
            (best as f64 - 1.0) / n as f64,
            (best as f64 + 1.0) / n as f64,
        );
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..60 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if u(c) > u(d) {
                b = d;
            } else {
                a = c;
            }
        }
        u(0.5 * (a + b)).max(u(best as f64 / n as f64))
    }

    fn unit(k: usize) -> SpectralOperator {
        dirichlet_eigenpairs(&[1.0], k).unwrap()
    }

    #[test]
    fn unit_interval_eigenvalues() {
        let op = unit(64);
        assert_relative_eq!(op.modes()[0].alpha, PI * PI);
        for (i, m) in op.modes().iter().enumerate() {
            assert_eq!(m.index, vec![i + 1]);
            assert_relative_eq!(
                m.alpha / ((i + 1) * (i + 1)) as f64,
                PI * PI,
                max_relative = 1e-15
            );
        }
        assert_relative_eq!(op.sup_norm_factor(), 2f64.sqrt());
    }

    #[test]
    fn eigenfunctions_vanish_and_are_normalized() {
        let op = unit(8);
        for k in 0..8 {
            assert!(op.eigenfunction(k, &[0.0]).abs() < 1e-15);
            assert!(op.eigenfunction(k, &[1.0]).abs() < 1e-14);
            let q = integrate(|x| op.eigenfunction(k, &[x]).powi(2), 0.0, 1.0, 1e-13);
            assert!((q - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn box_ordering_ascending_with_lexicographic_ties() {
        let op = dirichlet_eigenpairs(&[1.0, 1.0], 4).unwrap();
        let m = op.modes();
        assert_eq!(m[0].index, vec![1, 1]);
        assert_eq!(m[1].index, vec![1, 2]);
        assert_eq!(m[2].index, vec![2, 1]);
        assert!(m.windows(2).all(|w| w[0].alpha <= w[1].alpha));
        assert_relative_eq!(op.sup_norm_factor(), 2.0);
    }

    #[test]
    fn pure_mode_samples_sine() {
        let op = unit(16);
        let f = CoefficientField::single_mode(&op, 0, 1.0);
        let g = op.to_grid(&f);
        for (x, v) in op.axis_points(0).iter().zip(&g) {
            assert!((v - 2f64.sqrt() * (PI * x).sin()).abs() < 1e-13);
        }
        assert!(op
            .to_grid(&CoefficientField::zeros(&op))
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn box_transform_matches_eigenfunctions() {
        let op = dirichlet_eigenpairs(&[1.0, 2.0], 5).unwrap();
        let f = CoefficientField::single_mode(&op, 3, 0.7);
        let g = op.to_grid(&f);
        for j in [0, 7, 33, g.len() - 1] {
            let x = op.grid_point(j);
            assert!((g[j] - 0.7 * op.eigenfunction(3, &x)).abs() < 1e-12);
        }
        let back = op.from_grid(&g).unwrap();
        for (i, a) in back.coeffs.iter().enumerate() {
            let e = if i == 3 { 0.7 } else { 0.0 };
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn workspace_reuse_is_stateless() {
        let op = unit(32);
        let mut ws = op.workspace();
        let vals: Vec<f64> = (0..op.grid_len())
            .map(|i| (i as f64 * 0.37).sin())
            .collect();
        let mut first = vec![0.0; 32];
        op.from_grid_into(&vals, &mut first, &mut ws);
        let mut grid = vec![0.0; op.grid_len()];
        for _ in 0..5 {
            op.to_grid_into(&first, &mut grid, &mut ws);
        }
        let fresh = op.to_grid(&CoefficientField::new(first.clone()));
        assert_eq!(grid, fresh);
        let mut again = vec![0.0; 32];
        op.from_grid_into(&vals, &mut again, &mut ws);
        assert_eq!(first, again);
    }

    #[test]
    fn from_grid_rejects_wrong_size() {
        let op = unit(4);
        assert!(matches!(
            op.from_grid(&[0.0; 3]),
            Err(SpectralError::GridSize { .. })
        ));
    }

    #[test]
    fn semigroup_single_mode_decay() {
        let op = unit(8);
        let f = CoefficientField::single_mode(&op, 0, 1.0);
        let g = op.apply_semigroup(&f, 0.1).unwrap();
        assert_relative_eq!(g.coeffs[0], (-PI * PI * 0.1).exp(), max_relative = 1e-15);
        assert_eq!(op.apply_semigroup(&f, 0.0).unwrap().coeffs, f.coeffs);
        assert!(op.apply_semigroup(&f, -1.0).is_err());
    }

    #[test]
    fn grid_cache_tracks_coefficients() {
        let op = unit(8);
        let mut f = CoefficientField::single_mode(&op, 1, 2.0);
        let s = f.sup_norm(&op);
        assert!(f.cached_grid().is_some());
        let g = op.apply_semigroup(&f, 0.01).unwrap();
        assert!(g.cached_grid().is_none());
        assert!(s > 2.0 * 2f64.sqrt() * 0.99);
    }

    #[test]
    fn kernel_sum_checks() {
        let op = unit(4096);
        let ts: Vec<f64> = (0..=8).map(|i| 10f64.powf(-4.0 + 0.5 * i as f64)).collect();
        let rows = kernel_bound_check(&op, 0.6, &ts).unwrap();
        assert!(rows.iter().all(|r| r.lhs <= r.rhs));
        assert!(rows.windows(2).all(|w| w[1].lhs < w[0].lhs));
        let r = kernel_bound_check(&op, 0.6, &[0.5]).unwrap()[0];
        let first = 2.0 * (-2.0 * PI * PI * 0.5).exp();
        assert!((r.lhs / first - 1.0).abs() < 0.01);
    }

    #[test]
    fn kernel_check_rejects_divergent_series() {
        let op = unit(256);
        assert!(matches!(
            kernel_bound_check(&op, 0.45, &[0.1]),
            Err(SpectralError::Divergent { .. })
        ));
    }

    #[test]
    fn c_theta_matches_closed_form() {
        for theta in [0.1f64, 0.5, 0.6, 0.99] {
            let exact = theta.powf(theta) * (-theta).exp();
            assert_relative_eq!(c_theta(theta), exact, max_relative = 1e-10);
        }
    }

    #[test]
    fn white_noise_admissibility() {
        let op = unit(512);
        let a = NoiseSpec::white(0.6).admissibility(&op).unwrap();
        assert_eq!(a.eta, 0.6);
        assert_eq!(a.sup_lambda, Some(1.0));
        assert!(a.kernel_series.cauchy);
        assert!((a.kernel_series.decay_exponent - 1.2).abs() < 1e-6);
        // Admissible γ < (1 - η)/2 < 1/4 for every θ in (1/2, 1).
        for theta in [0.51, 0.7, 0.99] {
            let eta = NoiseSpec::white(theta).eta().unwrap();
            assert!((1.0 - eta) / 2.0 < 0.25);
        }
        let finite = NoiseSpec {
            weights: NoiseWeights::White,
            q: NoiseExponent::Finite(4.0),
            theta: 0.6,
        };
        assert!(
            !finite
                .admissibility(&op)
                .unwrap()
                .weight_series
                .unwrap()
                .cauchy
        );
        let decaying = NoiseSpec {
            weights: NoiseWeights::PowerLaw { beta: 0.5 },
            q: NoiseExponent::Finite(4.0),
            theta: 0.6,
        };
        assert!(
            decaying
                .admissibility(&op)
                .unwrap()
                .weight_series
                .unwrap()
                .cauchy
        );
    }

    #[test]
    fn noise_increment_zero_weights() {
        let op = unit(8);
        let spec = NoiseSpec::list(vec![0.0]);
        let mut out = vec![1.0; 8];
        noise_increment(
            &spec.lambdas(&op),
            0.01,
            &mut trajectory_rng(1, 0),
            &mut out,
        );
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn noise_increment_moments() {
        let lambdas = [1.0, 0.5];
        let dt = 0.01;
        let mut rng = trajectory_rng(42, 0);
        let n = 100_000;
        let mut cols = [Vec::with_capacity(n), Vec::with_capacity(n)];
        let mut out = [0.0; 2];
        for _ in 0..n {
            noise_increment(&lambdas, dt, &mut rng, &mut out);
            cols[0].push(out[0]);
            cols[1].push(out[1]);
        }
        for (j, c) in cols.iter().enumerate() {
            let target = lambdas[j] * lambdas[j] * dt;
            let se_mean = (target / n as f64).sqrt();
            assert!(mean(c).abs() < 4.0 * se_mean);
            // Var of the sample variance of a normal: 2σ⁴/(n-1).
            let se_var = (2.0 * target * target / (n - 1) as f64).sqrt();
            assert!((variance(c) - target).abs() < 4.0 * se_var);
        }
    }

    #[test]
    fn spec_json() {
        let n: NoiseSpec = serde_json::from_str(
            r#"{"weights":{"kind":"power_law","beta":1.5},"q":4,"theta":0.7}"#,
        )
        .unwrap();
        assert_eq!(n.lambda(4), 0.125);
        let w: NoiseSpec =
            serde_json::from_str(r#"{"weights":{"kind":"white"},"q":"inf","theta":0.51}"#).unwrap();
        assert_eq!(w, NoiseSpec::white(0.51));
        let o: OperatorSpec = serde_json::from_str(r#"{"modes":32}"#).unwrap();
        assert_eq!(
            SpectralOperator::from_spec(&o)
                .unwrap()
                .grid_points_per_axis(),
            66
        );
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(seed in 0u64..1000, k in 1usize..64) {
            let op = unit(k);
            let mut rng = trajectory_rng(seed, 0);
            let coeffs: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f = CoefficientField::new(coeffs.clone());
            let back = op.from_grid(&op.to_grid(&f)).unwrap();
            let norm = f.l2_norm().max(1e-300);
            let err: f64 = coeffs.iter().zip(&back.coeffs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            prop_assert!(err <= 1e-10 * norm);
        }

        #[test]
        fn parseval(seed in 0u64..1000, k in 1usize..64) {
            let op = SpectralOperator::new(&[1.0], k, 4 * k).unwrap();
            let mut rng = trajectory_rng(seed, 1);
            let f = CoefficientField::new((0..k).map(|_| rng.random_range(-1.0..1.0)).collect());
            let g = op.to_grid(&f);
            prop_assert!((op.grid_l2_norm(&g) - f.l2_norm()).abs() <= 1e-8 * f.l2_norm());
        }

        #[test]
        fn semigroup_property(s in 0.0f64..0.1, t in 0.0f64..0.1, seed in 0u64..100) {
            let op = unit(32);
            let mut rng = trajectory_rng(seed, 2);
            let f = CoefficientField::new((0..32).map(|_| rng.random_range(-1.0..1.0)).collect());
            let two = op.apply_semigroup(&op.apply_semigroup(&f, s).unwrap(), t).unwrap();
            let one = op.apply_semigroup(&f, s + t).unwrap();
            for (a, b) in two.coeffs.iter().zip(&one.coeffs) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300) + 1e-300);
            }
        }

        #[test]
        fn semigroup_contracts(t in 0.0f64..0.5, seed in 0u64..100) {
            let op = unit(32);
            let mut rng = trajectory_rng(seed, 3);
            let f = CoefficientField::new((0..32).map(|_| rng.random_range(-1.0..1.0) / 4.0).collect());
            let mut g = op.apply_semigroup(&f, t).unwrap();
            prop_assert!(g.l2_norm() <= f.l2_norm() * (1.0 + 1e-15));
            prop_assert!(g.sup_norm(&op) <= continuous_sup(&op, &f.coeffs) + 1e-8);
        }
    }
}
