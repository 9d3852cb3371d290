//! Linear quantile regression by pinball-loss minimization.
//!
//! The solver runs iteratively reweighted least squares on a smoothed check
//! function (the smoothing width is annealed from 1e-2 to 1e-6 of the
//! response scale) and then polishes the result to an exact optimum: the
//! observations with the smallest residuals seed an interpolating basis and
//! a vertex descent walks along the edges of the piecewise-linear objective
//! until no edge direction decreases it.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::AnnualClock;
use crate::features::{self, BasisSpec, DesignMatrix, FeatureError, LAYOUT_VERSION};
use crate::linalg::weighted_normal_equations;

/// Quantile levels of every forecast: the nine deciles.
pub const TAU_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Debug, Error, PartialEq)]
pub enum QuantRegError {
    #[error("quantile level {0} is not in (0, 1)")]
    InvalidTau(f64),
    #[error("quantile level {0} is not on the decile grid")]
    UnknownTau(f64),
    #[error("hour {0} is not in 0..24")]
    InvalidHour(usize),
    #[error("design has {rows} rows but response has {len} values")]
    DimensionMismatch { rows: usize, len: usize },
    #[error("need more observations ({rows}) than coefficients ({cols})")]
    Underdetermined { rows: usize, cols: usize },
    #[error("non-finite value in design or response")]
    NonFinite,
    #[error("design is rank deficient")]
    RankDeficient,
    #[error("solver stopped after {iterations} iterations with relative objective change {rel_change:e}")]
    SolverDiverged { iterations: usize, rel_change: f64 },
    #[error("hour {hour}, tau {tau}: {source}")]
    Model { hour: usize, tau: f64, source: Box<QuantRegError> },
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

pub type Result<T, E = QuantRegError> = std::result::Result<T, E>;

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(QuantRegError::InvalidTau(tau))
    }
}

/// Index of `tau` on [`TAU_GRID`].
pub fn tau_index(tau: f64) -> Result<usize> {
    TAU_GRID
        .iter()
        .position(|&g| (g - tau).abs() < 1e-9)
        .ok_or(QuantRegError::UnknownTau(tau))
}

/// Pinball score `(y - q) * (tau - 1{y < q})`.
pub fn pinball(y: f64, q: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(pinball_loss(y, q, tau))
}

/// [`pinball`] without the range check on `tau`.
#[inline]
pub fn pinball_loss(y: f64, q: f64, tau: f64) -> f64 {
    let u = y - q;
    if u < 0.0 {
        // Equals `-u * (1 - tau)`.
        -u - tau * -u
    } else {
        u * tau
    }
}

/// Total pinball loss of `beta` on `(design, y)`.
pub fn objective(design: &DesignMatrix, y: &[f64], beta: &[f64], tau: f64) -> f64 {
    (0..design.rows()).map(|i| pinball_loss(y[i], design.row_dot(i, beta), tau)).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverSettings {
    /// Smoothing widths relative to the response scale, largest first.
    pub anneal: Vec<f64>,
    /// Iteration cap over all annealing stages.
    pub max_iterations: usize,
    /// Stop a stage when the largest coefficient change (relative to the
    /// response scale) falls below this.
    pub coef_tol: f64,
    /// Relative objective change tolerated when the iteration cap is hit.
    pub objective_tol: f64,
    /// Pivot cap of the exact vertex descent that follows the smoothed stages.
    pub max_pivots: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            anneal: vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
            max_iterations: 500,
            coef_tol: 1e-9,
            objective_tol: 1e-7,
            max_pivots: 20_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QrFit {
    pub coef: Vec<f64>,
    pub objective: f64,
    pub irls_iterations: usize,
    pub pivots: usize,
}

/// Fitted coefficients minimizing total pinball loss at level `tau`.
pub fn qr_fit(design: &DesignMatrix, y: &[f64], tau: f64) -> Result<Vec<f64>> {
    qr_fit_with(design, y, tau, &SolverSettings::default()).map(|f| f.coef)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    crate::stats::quantile_sorted(&v, 0.5)
}

/// Robust response scale: MAD, falling back to mean absolute deviation and
/// then to the largest magnitude.
fn response_scale(y: &[f64]) -> f64 {
    // Below this, differences in y are lost to round-off.
    let floor = 1e-8 * y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    robust_scale(y).max(floor)
}

fn robust_scale(y: &[f64]) -> f64 {
    let m = median(y);
    let dev: Vec<f64> = y.iter().map(|v| (v - m).abs()).collect();
    let mad = median(&dev);
    if mad > 0.0 {
        return mad;
    }
    let mean_dev = dev.iter().sum::<f64>() / y.len() as f64;
    if mean_dev > 0.0 {
        return mean_dev;
    }
    let max = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if max > 0.0 {
        max
    } else {
        1.0
    }
}

fn solve_spd(gram: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let diag_max = gram.diagonal().iter().fold(0.0f64, |a, v| a.max(*v));
    let p = gram.nrows();
    let diag: Vec<f64> = (0..p).map(|i| gram[(i, i)]).collect();
    let chol = gram.cholesky().ok_or(QuantRegError::RankDeficient)?;
    let l = chol.l_dirty();
    for (i, d) in diag.iter().enumerate() {
        let pivot = l[(i, i)] * l[(i, i)];
        if !(pivot > 1e-13 * d.max(1e-300)) || !(pivot > 1e-300 * diag_max) {
            return Err(QuantRegError::RankDeficient);
        }
    }
    Ok(chol.solve(rhs))
}

pub fn qr_fit_with(
    design: &DesignMatrix,
    y: &[f64],
    tau: f64,
    settings: &SolverSettings,
) -> Result<QrFit> {
    check_tau(tau)?;
    let (n, p) = (design.rows(), design.cols());
    if n != y.len() {
        return Err(QuantRegError::DimensionMismatch { rows: n, len: y.len() });
    }
    if n <= p {
        return Err(QuantRegError::Underdetermined { rows: n, cols: p });
    }
    if !design.all_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(QuantRegError::NonFinite);
    }
    let scale = response_scale(y);

    let (gram, rhs) = weighted_normal_equations(design, &vec![1.0; n], y);
    let mut beta: Vec<f64> = solve_spd(gram, &rhs)?.iter().cloned().collect();

    let mut weights = vec![0.0; n];
    let mut iterations = 0;
    let mut obj = objective(design, y, &beta, tau);
    // Objective changes below this are round-off, e.g. at an exact fit.
    let obj_floor = 1e-8 * n as f64 * scale;
    let mut last_rel_change = f64::INFINITY;
    let stages = settings.anneal.len().max(1);
    let per_stage = (settings.max_iterations / stages).max(1);
    let mut capped = false;
    let mut stalled = false;
    'stages: for (stage, &width) in settings.anneal.iter().enumerate() {
        let gamma = width * scale;
        let last_stage = stage + 1 == stages;
        let remaining = settings.max_iterations - iterations;
        let budget = if last_stage { remaining } else { per_stage.min(remaining) };
        let mut converged = false;
        for _ in 0..budget {
            for i in 0..n {
                let r = y[i] - design.row_dot(i, &beta);
                let psi = if r >= 0.0 { tau } else { 1.0 - tau };
                weights[i] = psi / r.abs().max(gamma);
            }
            let (gram, rhs) = weighted_normal_equations(design, &weights, y);
            // Extreme weights can defeat the factorization of a full-rank
            // design; the exact descent below takes over from here.
            let Ok(next) = solve_spd(gram, &rhs) else {
                stalled = true;
                break 'stages;
            };
            let change = next
                .iter()
                .zip(&beta)
                .fold(0.0f64, |a, (b1, b0)| a.max((b1 - b0).abs()));
            beta.iter_mut().zip(next.iter()).for_each(|(b, v)| *b = *v);
            iterations += 1;
            let new_obj = objective(design, y, &beta, tau);
            last_rel_change = (new_obj - obj).abs() / obj.abs().max(obj_floor);
            obj = new_obj;
            if change < settings.coef_tol * scale {
                converged = true;
                break;
            }
        }
        if last_stage && !converged {
            capped = true;
        }
    }
    let polished = polish(design, y, tau, &beta, scale, settings.max_pivots)?;
    if (stalled || (capped && last_rel_change > settings.objective_tol)) && !polished.optimal {
        return Err(QuantRegError::SolverDiverged { iterations, rel_change: last_rel_change });
    }
    let polished_obj = objective(design, y, &polished.coef, tau);
    let (coef, objective) = if polished_obj <= obj { (polished.coef, polished_obj) } else { (beta, obj) };
    Ok(QrFit { coef, objective, irls_iterations: iterations, pivots: polished.pivots })
}

/// Pick `p` linearly independent rows, preferring small residuals.
///
/// A first pass only accepts rows well separated from those already chosen,
/// so that near-duplicate rows do not make the basis ill-conditioned; a
/// second pass fills any remaining slots.
fn initial_basis(design: &DesignMatrix, residuals: &[f64]) -> Option<Vec<usize>> {
    let p = design.cols();
    let mut order: Vec<usize> = (0..design.rows()).collect();
    order.sort_by(|&a, &b| residuals[a].abs().total_cmp(&residuals[b].abs()).then(a.cmp(&b)));
    let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut basis = Vec::with_capacity(p);
    let mut taken = vec![false; design.rows()];
    for threshold in [1e-3, 1e-8] {
        for &i in &order {
            if taken[i] {
                continue;
            }
            let mut v = design.dense_row(i);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            for _ in 0..2 {
                for q in &ortho {
                    let dot: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(q).for_each(|(x, qi)| *x -= dot * qi);
                }
            }
            let rest = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if rest > threshold * norm {
                v.iter_mut().for_each(|x| *x /= rest);
                ortho.push(v);
                basis.push(i);
                taken[i] = true;
                if basis.len() == p {
                    return Some(basis);
                }
            }
        }
    }
    None
}

fn basis_inverse(design: &DesignMatrix, basis: &[usize]) -> Option<DMatrix<f64>> {
    let p = design.cols();
    let mut xb = DMatrix::zeros(p, p);
    for (k, &i) in basis.iter().enumerate() {
        let (idx, vals) = design.row(i);
        for (&c, &v) in idx.iter().zip(vals) {
            xb[(k, c as usize)] = v;
        }
    }
    xb.try_inverse()
}

/// Coefficients interpolating the basis rows: LU solve with one step of
/// iterative refinement.
fn vertex(design: &DesignMatrix, basis: &[usize], y: &[f64]) -> Option<Vec<f64>> {
    let p = design.cols();
    let xb = DMatrix::from_fn(p, p, |r, c| design.get(basis[r], c));
    let yb = DVector::from_iterator(p, basis.iter().map(|&i| y[i]));
    let lu = xb.clone().lu();
    let mut beta = lu.solve(&yb)?;
    let r = &yb - &xb * &beta;
    beta += lu.solve(&r)?;
    beta.iter().all(|v| v.is_finite()).then(|| beta.iter().cloned().collect())
}

fn basis_solution(inv: &DMatrix<f64>, basis: &[usize], y: &[f64]) -> Vec<f64> {
    let yb = DVector::from_iterator(basis.len(), basis.iter().map(|&i| y[i]));
    (inv * yb).iter().cloned().collect()
}

/// Exact vertex descent from the smoothed solution `start`.
///
/// At a vertex the basis rows are interpolated; in the coordinates
/// `u = X_B * delta` the objective is separable, so it is optimal iff none of
/// the `2p` edge directions has negative slope.
struct Polished {
    coef: Vec<f64>,
    pivots: usize,
    /// No descent direction remains at the final vertex.
    optimal: bool,
}

fn polish(
    design: &DesignMatrix,
    y: &[f64],
    tau: f64,
    start: &[f64],
    scale: f64,
    max_pivots: usize,
) -> Result<Polished> {
    let (n, p) = (design.rows(), design.cols());
    let mut optimal = false;
    let start_res: Vec<f64> = (0..n).map(|i| y[i] - design.row_dot(i, start)).collect();
    let mut basis = initial_basis(design, &start_res).ok_or(QuantRegError::RankDeficient)?;
    let mut inv = basis_inverse(design, &basis).ok_or(QuantRegError::RankDeficient)?;
    let mut beta = basis_solution(&inv, &basis, y);
    let mut slot = vec![usize::MAX; n];
    for (k, &i) in basis.iter().enumerate() {
        slot[i] = k;
    }

    let ymax = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let zero_tol = 1e-11 * (ymax + scale);
    let slope_tol = 1e-10 * n as f64;
    let psi = |r: f64| if r > 0.0 { tau } else { tau - 1.0 };

    let mut residuals = vec![0.0; n];
    let refresh = |beta: &[f64], residuals: &mut Vec<f64>, slot: &[usize]| {
        for i in 0..n {
            residuals[i] = if slot[i] != usize::MAX { 0.0 } else { y[i] - design.row_dot(i, beta) };
        }
    };
    refresh(&beta, &mut residuals, &slot);

    let mut a = vec![0.0; n];
    let mut pivots = 0;
    let mut breakpoints: Vec<(f64, f64, usize)> = Vec::new();
    loop {
        // Gradient of the linear part over nonbasic, nonzero residuals.
        let mut g = DVector::zeros(p);
        let mut zero_set = Vec::new();
        for i in 0..n {
            if slot[i] != usize::MAX {
                continue;
            }
            if residuals[i].abs() <= zero_tol {
                zero_set.push(i);
                continue;
            }
            let s = psi(residuals[i]);
            let (idx, vals) = design.row(i);
            for (&c, &v) in idx.iter().zip(vals) {
                g[c as usize] += s * v;
            }
        }
        let v = inv.tr_mul(&g);
        let mut slope_up: Vec<f64> = (0..p).map(|j| -v[j] + (1.0 - tau)).collect();
        let mut slope_down: Vec<f64> = (0..p).map(|j| v[j] + tau).collect();
        for &i in &zero_set {
            let (idx, vals) = design.row(i);
            for j in 0..p {
                let z: f64 = idx.iter().zip(vals).map(|(&c, &x)| x * inv[(c as usize, j)]).sum();
                if z > 0.0 {
                    slope_up[j] += (1.0 - tau) * z;
                    slope_down[j] += tau * z;
                } else {
                    slope_up[j] -= tau * z;
                    slope_down[j] -= (1.0 - tau) * z;
                }
            }
        }
        let mut best = (0.0, 0usize, 1.0f64);
        for j in 0..p {
            if slope_up[j] < best.0 {
                best = (slope_up[j], j, 1.0);
            }
            if slope_down[j] < best.0 {
                best = (slope_down[j], j, -1.0);
            }
        }
        let (slope0, leave, sigma) = best;
        if slope0 >= -slope_tol {
            optimal = true;
            break;
        }
        if pivots >= max_pivots {
            break;
        }

        let delta: Vec<f64> = (0..p).map(|k| sigma * inv[(k, leave)]).collect();
        breakpoints.clear();
        for i in 0..n {
            a[i] = design.row_dot(i, &delta);
            if slot[i] != usize::MAX || residuals[i].abs() <= zero_tol || a[i] == 0.0 {
                continue;
            }
            let t = residuals[i] / a[i];
            if t > 0.0 {
                breakpoints.push((t, a[i].abs(), i));
            }
        }
        breakpoints.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.2.cmp(&y.2)));
        let mut slope = slope0;
        let mut entering = None;
        for &(t, w, i) in &breakpoints {
            slope += w;
            if slope >= 0.0 {
                entering = Some((t, i));
                break;
            }
        }
        let Some((step, enter)) = entering else {
            return Err(QuantRegError::RankDeficient);
        };

        beta.iter_mut().zip(&delta).for_each(|(b, d)| *b += step * d);
        let leaving_obs = basis[leave];
        for i in 0..n {
            if slot[i] == usize::MAX {
                residuals[i] -= step * a[i];
            }
        }
        residuals[enter] = 0.0;
        residuals[leaving_obs] = -sigma * step;
        slot[leaving_obs] = usize::MAX;
        slot[enter] = leave;
        basis[leave] = enter;

        // Product-form update of the basis inverse.
        let (idx, vals) = design.row(enter);
        let mut w = vec![0.0; p];
        for k in 0..p {
            w[k] = idx.iter().zip(vals).map(|(&c, &x)| x * inv[(c as usize, k)]).sum();
        }
        let col: Vec<f64> = (0..p).map(|r| inv[(r, leave)] / w[leave]).collect();
        for k in 0..p {
            if k == leave {
                continue;
            }
            for r in 0..p {
                inv[(r, k)] -= col[r] * w[k];
            }
        }
        for r in 0..p {
            inv[(r, leave)] = col[r];
        }
        pivots += 1;

        if pivots % 64 == 0 {
            inv = basis_inverse(design, &basis).ok_or(QuantRegError::RankDeficient)?;
            beta = basis_solution(&inv, &basis, y);
            refresh(&beta, &mut residuals, &slot);
        }
    }
    Ok(Polished { coef: vertex(design, &basis, y).ok_or(QuantRegError::RankDeficient)?, pivots, optimal })
}

/// Coefficients for all 24 hours × 9 quantile levels of one zone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileModelSet {
    pub zone: String,
    pub tau_grid: Vec<f64>,
    pub layout_version: u32,
    /// `coef[hour][tau_index]`, each of design width.
    pub coef: Vec<Vec<Vec<f64>>>,
    /// In-sample pinball sums, same indexing as `coef`.
    pub objective: Vec<Vec<f64>>,
}

impl QuantileModelSet {
    pub fn model_count(&self) -> usize {
        self.coef.iter().map(Vec::len).sum()
    }

    pub fn coefficients(&self, hour: usize, tau: f64) -> Result<&[f64]> {
        if hour >= 24 {
            return Err(QuantRegError::InvalidHour(hour));
        }
        Ok(&self.coef[hour][tau_index(tau)?])
    }
}

/// Fit every (hour, tau) model on a remainder series laid out day-major
/// (24 values per day) over `n_days` days starting at day index `first_day`.
pub fn fit_model_set(
    zone: &str,
    remainder: &[f64],
    first_day: i64,
    clock: &AnnualClock,
    spec: &BasisSpec,
) -> Result<QuantileModelSet> {
    if remainder.is_empty() || !remainder.len().is_multiple_of(24) {
        return Err(QuantRegError::DimensionMismatch { rows: remainder.len() / 24 * 24, len: remainder.len() });
    }
    let n_days = remainder.len() / 24;
    let days: Vec<i64> = (0..n_days as i64).map(|d| first_day + d).collect();
    let designs: Vec<DesignMatrix> = (0..24)
        .map(|h| features::build_quantreg_design(clock, &days, h, spec))
        .collect::<std::result::Result<_, _>>()?;
    let jobs: Vec<(usize, usize)> = (0..24).flat_map(|h| (0..TAU_GRID.len()).map(move |k| (h, k))).collect();
    let fits: Vec<Result<QrFit>> = jobs
        .par_iter()
        .map(|&(h, k)| {
            let y: Vec<f64> = (0..n_days).map(|d| remainder[d * 24 + h]).collect();
            let tau = TAU_GRID[k];
            qr_fit_with(&designs[h], &y, tau, &SolverSettings::default()).map_err(|e| {
                QuantRegError::Model { hour: h, tau, source: Box::new(e) }
            })
        })
        .collect();
    let mut coef = (0..24).map(|_| Vec::with_capacity(9)).collect::<Vec<_>>();
    let mut objective = (0..24).map(|_| Vec::with_capacity(9)).collect::<Vec<_>>();
    for (&(h, _), fit) in jobs.iter().zip(fits) {
        let fit = fit?;
        coef[h].push(fit.coef);
        objective[h].push(fit.objective);
    }
    Ok(QuantileModelSet {
        zone: zone.to_string(),
        tau_grid: TAU_GRID.to_vec(),
        layout_version: LAYOUT_VERSION,
        coef,
        objective,
    })
}

/// Remainder quantile at level `tau` for each day index at a fixed hour.
pub fn qr_predict(
    model: &QuantileModelSet,
    clock: &AnnualClock,
    days: &[i64],
    hour: usize,
    tau: f64,
    spec: &BasisSpec,
) -> Result<Vec<f64>> {
    let coef = model.coefficients(hour, tau)?;
    let design = features::build_quantreg_design(clock, days, hour, spec)?;
    Ok(design.mul_vec(coef))
}
