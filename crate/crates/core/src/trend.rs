//! Long-term trend of log-load.
//!
//! An OLS pre-fit on seasonal and temperature regressors yields residuals;
//! the trend is their trailing moving average over 52 weeks. Its forecast
//! uncertainty comes from sample quantiles of H-hour trend increments,
//! re-centred on their median and shifted to the last trend value.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{self, BasisSpec, DesignMatrix, FeatureError, TemperatureScaling};
use crate::ingest::HourlySeries;
use crate::linalg;
use crate::quantreg::TAU_GRID;
use crate::stats::quantiles_select;

/// Moving-average window: 52 weeks of hours.
pub const TREND_WINDOW: usize = 52 * 7 * 24;

/// Relative singular-value cutoff of the OLS solve.
pub const OLS_RCOND: f64 = 1e-10;

/// Minimum number of trend increments per horizon.
pub const MIN_INCREMENT_SAMPLES: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum TrendError {
    #[error("design has {rows} rows but response has {len} values")]
    DimensionMismatch { rows: usize, len: usize },
    #[error("design has fewer rows ({rows}) than columns ({cols})")]
    Underdetermined { rows: usize, cols: usize },
    #[error("degenerate design: column group `{group}` is entirely zero")]
    DegenerateDesign { group: String },
    #[error("non-finite value in design or response")]
    NonFinite,
    #[error("moving-average window {window} needs more than {len} residuals")]
    WindowTooLong { window: usize, len: usize },
    #[error("horizon {horizon}: only {available} trend increments (need {MIN_INCREMENT_SAMPLES})")]
    TooFewSamples { horizon: usize, available: usize },
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// OLS coefficients and residuals.
#[derive(Clone, Debug, PartialEq)]
pub struct OlsFit {
    pub beta: Vec<f64>,
    pub residuals: Vec<f64>,
    pub rank: usize,
}

pub fn ols_fit(design: &DesignMatrix, y: &[f64]) -> Result<OlsFit, TrendError> {
    if design.rows() != y.len() {
        return Err(TrendError::DimensionMismatch { rows: design.rows(), len: y.len() });
    }
    if design.rows() < design.cols() {
        return Err(TrendError::Underdetermined { rows: design.rows(), cols: design.cols() });
    }
    if let Some(g) = design.zero_groups().first() {
        return Err(TrendError::DegenerateDesign { group: g.name.clone() });
    }
    if !design.all_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(TrendError::NonFinite);
    }
    let sol = linalg::lstsq(design, y, OLS_RCOND);
    let fitted = design.mul_vec(&sol.beta);
    let residuals = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    Ok(OlsFit { beta: sol.beta, residuals, rank: sol.rank })
}

/// Trailing mean of the previous `window` residuals; the first `window`
/// entries repeat the value at `window`.
pub fn moving_average_trend(residuals: &[f64], window: usize) -> Result<Vec<f64>, TrendError> {
    let n = residuals.len();
    if window == 0 || n <= window {
        return Err(TrendError::WindowTooLong { window, len: n });
    }
    // Neumaier-compensated running sum.
    let mut sum = 0.0;
    let mut comp = 0.0;
    let add = |sum: &mut f64, comp: &mut f64, v: f64| {
        let t = *sum + v;
        if sum.abs() >= v.abs() {
            *comp += (*sum - t) + v;
        } else {
            *comp += (v - t) + *sum;
        }
        *sum = t;
    };
    for &r in &residuals[..window] {
        add(&mut sum, &mut comp, r);
    }
    let k = window as f64;
    let mut path = vec![0.0; n];
    path[window] = (sum + comp) / k;
    for t in (window + 1)..n {
        add(&mut sum, &mut comp, residuals[t - 1]);
        add(&mut sum, &mut comp, -residuals[t - 1 - window]);
        path[t] = (sum + comp) / k;
    }
    let head = path[window];
    path[..window].iter_mut().for_each(|v| *v = head);
    Ok(path)
}

/// Fitted long-term trend of one zone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendFit {
    pub beta: Vec<f64>,
    /// OLS residuals; not persisted with a saved model.
    #[serde(skip)]
    pub residuals: Vec<f64>,
    pub trend_path: Vec<f64>,
    pub window: usize,
    pub last_trend: f64,
    pub temperature: TemperatureScaling,
    pub rank: usize,
}

impl TrendFit {
    /// OLS pre-fit on log-load, then the moving-average trend.
    pub fn fit(series: &HourlySeries, spec: &BasisSpec) -> Result<Self, TrendError> {
        Self::fit_with_window(series, spec, TREND_WINDOW)
    }

    pub fn fit_with_window(
        series: &HourlySeries,
        spec: &BasisSpec,
        window: usize,
    ) -> Result<Self, TrendError> {
        let temperature = TemperatureScaling::fit(series.temperature())?;
        let design = features::build_trend_design_scaled(series, spec, &temperature)?;
        let ols = ols_fit(&design, series.log_load())?;
        let trend_path = moving_average_trend(&ols.residuals, window)?;
        let last_trend = *trend_path.last().expect("nonempty path");
        Ok(Self {
            beta: ols.beta,
            residuals: ols.residuals,
            trend_path,
            window,
            last_trend,
            temperature,
            rank: ols.rank,
        })
    }

    /// OLS fitted values `y - residual`.
    pub fn fitted(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.residuals).map(|(a, r)| a - r).collect()
    }
}

/// Trend quantiles per forecast horizon, ordered as [`TAU_GRID`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrendQuantiles {
    pub horizons: Vec<usize>,
    pub values: Vec<[f64; 9]>,
}

impl TrendQuantiles {
    pub fn get(&self, horizon: usize) -> Option<&[f64; 9]> {
        self.horizons.iter().position(|&h| h == horizon).map(|i| &self.values[i])
    }
}

/// Median-anchored quantile band of the trend `H` hours past the last
/// in-sample hour, from the increments `trend[t] - trend[t - H]` with
/// `t >= window + H`.
pub fn trend_quantiles(fit: &TrendFit, horizons: &[usize]) -> Result<TrendQuantiles, TrendError> {
    let path = &fit.trend_path;
    let n = path.len();
    let mut values = Vec::with_capacity(horizons.len());
    let mut increments = Vec::with_capacity(n);
    for &h in horizons {
        let first = fit.window + h;
        let available = n.saturating_sub(first);
        if h == 0 || available < MIN_INCREMENT_SAMPLES {
            return Err(TrendError::TooFewSamples { horizon: h, available });
        }
        increments.clear();
        increments.extend((first..n).map(|t| path[t] - path[t - h]));
        let q = quantiles_select(&mut increments, &TAU_GRID);
        let median = q[4];
        let mut row = [0.0; 9];
        for (slot, v) in row.iter_mut().zip(&q) {
            *slot = fit.last_trend + (v - median);
        }
        values.push(row);
    }
    Ok(TrendQuantiles { horizons: horizons.to_vec(), values })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit_from_path(path: Vec<f64>, window: usize) -> TrendFit {
        TrendFit {
            beta: vec![],
            residuals: vec![0.0; path.len()],
            last_trend: *path.last().unwrap(),
            trend_path: path,
            window,
            temperature: TemperatureScaling { mean: 0.0, sd: 1.0 },
            rank: 0,
        }
    }

    #[test]
    fn constant_residuals_give_constant_trend() {
        let path = moving_average_trend(&vec![0.25; 50], 10).unwrap();
        assert!(path.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn head_is_constant_and_window_checked() {
        let r: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let path = moving_average_trend(&r, 10).unwrap();
        assert!(path[..10].iter().all(|&v| v == path[10]));
        assert_eq!(path[10], 4.5);
        assert_eq!(path[29], (19..29).sum::<i32>() as f64 / 10.0);
        assert!(matches!(moving_average_trend(&r, 30), Err(TrendError::WindowTooLong { .. })));
        assert_eq!(TREND_WINDOW, 8736);
    }

    #[test]
    fn constant_trend_collapses_band() {
        let fit = fit_from_path(vec![0.3; 400], 100);
        let q = trend_quantiles(&fit, &[1, 24, 150]).unwrap();
        for row in &q.values {
            assert!(row.iter().all(|&v| v == 0.3));
        }
    }

    #[test]
    fn linear_trend_collapses_to_last_value() {
        let path: Vec<f64> = (0..600).map(|t| 1e-3 * t as f64).collect();
        let fit = fit_from_path(path, 100);
        let q = trend_quantiles(&fit, &[5, 50]).unwrap();
        for row in &q.values {
            for &v in row {
                assert!((v - fit.last_trend).abs() < 1e-12);
            }
            assert_eq!(row[4], fit.last_trend);
        }
    }

    #[test]
    fn too_few_increments() {
        let fit = fit_from_path(vec![0.0; 250], 100);
        assert!(matches!(
            trend_quantiles(&fit, &[60]),
            Err(TrendError::TooFewSamples { horizon: 60, available: 90 })
        ));
    }

    #[test]
    fn ols_univariate_projection() {
        // Orthonormal single column; y = 5 * column.
        let n = 8;
        let col: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 0.5 } else { -0.5 }).collect();
        let design = DesignMatrix::from_dense(n, 1, &col).unwrap();
        let y: Vec<f64> = col.iter().map(|c| 5.0 * c).collect();
        let fit = ols_fit(&design, &y).unwrap();
        assert!((fit.beta[0] - 5.0).abs() < 1e-12);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn ols_errors() {
        let design = DesignMatrix::from_dense(3, 2, &[1.0, 0.0, 2.0, 0.0, 3.0, 0.0]).unwrap();
        assert!(matches!(ols_fit(&design, &[1.0, 2.0]), Err(TrendError::DimensionMismatch { .. })));
        let mut grouped = DesignMatrix::with_groups(vec![
            features::ColumnGroup { name: "a".into(), start: 0, len: 1 },
            features::ColumnGroup { name: "temp_poly".into(), start: 1, len: 1 },
        ]);
        for v in [1.0, 2.0, 3.0] {
            grouped.push_row(&[(0, v), (1, 0.0)]);
        }
        assert_eq!(
            ols_fit(&grouped, &[1.0, 2.0, 3.0]).unwrap_err(),
            TrendError::DegenerateDesign { group: "temp_poly".into() }
        );
    }
}
