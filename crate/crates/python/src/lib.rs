//! Python bindings for `qrload`.
//!
//! Timestamps cross the boundary as `"YYYY-MM-DD HH:MM"` strings and
//! matrices as lists of rows.

use std::path::PathBuf;

use chrono::{NaiveDate, NaiveDateTime};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use qrload::calendar::DstRule;
use qrload::features::{self, BasisSpec, DesignMatrix};
use qrload::ingest::{self, TIMESTAMP_FORMAT};
use qrload::pipeline::{self, QuantileForecastGrid};
use qrload::{model_io, quantreg, scoring, synth, trend};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_ts(s: &str) -> PyResult<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
        .map_err(|e| value_err(format!("timestamp `{s}`: {e} (expected YYYY-MM-DD HH:MM)")))
}

fn parse_date(s: &str) -> PyResult<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| value_err(format!("date `{s}`: {e}")))
}

fn fmt_ts(ts: &NaiveDateTime) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}

/// Pinball loss of quantile `q` for outcome `y` at level `tau`.
#[pyfunction]
fn pinball(y: f64, q: f64, tau: f64) -> PyResult<f64> {
    quantreg::pinball(y, q, tau).map_err(value_err)
}

/// Relative improvement in percent of `model` over `benchmark`.
#[pyfunction]
fn improvement(model: f64, benchmark: f64) -> PyResult<f64> {
    scoring::improvement(model, benchmark).map_err(value_err)
}

#[pyfunction]
fn tau_grid() -> Vec<f64> {
    quantreg::TAU_GRID.to_vec()
}

/// Coefficients minimizing total pinball loss of `y` on the rows of `x`.
#[pyfunction]
fn qr_fit(x: Vec<Vec<f64>>, y: Vec<f64>, tau: f64) -> PyResult<Vec<f64>> {
    let p = x.first().map_or(0, Vec::len);
    if x.iter().any(|r| r.len() != p) {
        return Err(value_err("rows of x differ in length"));
    }
    let flat: Vec<f64> = x.into_iter().flatten().collect();
    let design = DesignMatrix::from_dense(y.len(), p, &flat).map_err(value_err)?;
    quantreg::qr_fit(&design, &y, tau).map_err(value_err)
}

/// Trailing moving average of `residuals` over `window` values.
#[pyfunction]
fn moving_average_trend(residuals: Vec<f64>, window: usize) -> PyResult<Vec<f64>> {
    trend::moving_average_trend(&residuals, window).map_err(value_err)
}

/// Annual Fourier terms (sin/cos pairs up to order 2) at hour indices `t`.
#[pyfunction]
fn fourier_basis(t: Vec<f64>) -> Vec<Vec<f64>> {
    let spec = BasisSpec::default();
    let m = features::fourier_basis(&t, &spec);
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

/// Twelve periodic cubic B-splines over the year at hour indices `t`; the
/// last one is omitted with `drop_last`.
#[pyfunction]
#[pyo3(signature = (t, drop_last = false))]
fn bspline_basis(t: Vec<f64>, drop_last: bool) -> Vec<Vec<f64>> {
    let spec = BasisSpec { drop_last_bspline: drop_last, ..BasisSpec::default() };
    let m = features::periodic_bspline_basis(&t, &spec);
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

/// `(task id, due date, window start, window end, weight)` of the six tasks.
#[pyfunction]
fn task_schedule() -> Vec<(u8, String, String, String, f64)> {
    scoring::task_schedule()
        .into_iter()
        .map(|t| (t.id, t.due.to_string(), t.window_start.to_string(), t.window_end.to_string(), t.weight))
        .collect()
}

/// Clock-change-adjusted hourly load and temperature of one zone.
#[pyclass(name = "HourlySeries", frozen)]
struct PySeries {
    inner: ingest::HourlySeries,
}

#[pymethods]
impl PySeries {
    /// Read one zone from a CSV file and repair clock-change hours.
    #[staticmethod]
    fn from_csv(path: PathBuf, zone: &str) -> PyResult<Self> {
        let records = ingest::parse_csv(&path, zone).map_err(value_err)?;
        let inner = ingest::dst_adjust(&records).map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Deterministic synthetic series.
    #[staticmethod]
    #[pyo3(signature = (zone, start, days, seed = 7, noise_sd = 0.05))]
    fn synthetic(zone: &str, start: &str, days: usize, seed: u64, noise_sd: f64) -> PyResult<Self> {
        let spec = synth::SyntheticSpec {
            zone: zone.to_string(),
            start: parse_date(start)?,
            days,
            seed,
            noise_sd,
            ..Default::default()
        };
        Ok(Self { inner: synth::generate(&spec) })
    }

    #[getter]
    fn zone(&self) -> String {
        self.inner.zone().to_string()
    }

    #[getter]
    fn start(&self) -> String {
        self.inner.start().to_string()
    }

    #[getter]
    fn load(&self) -> Vec<f64> {
        self.inner.load().to_vec()
    }

    #[getter]
    fn temperature(&self) -> Vec<f64> {
        self.inner.temperature().to_vec()
    }

    fn timestamps(&self) -> Vec<String> {
        (0..self.inner.len()).map(|i| fmt_ts(&self.inner.timestamp(i))).collect()
    }

    /// Days up to and including `last` (a `YYYY-MM-DD` date).
    fn up_to(&self, last: &str) -> PyResult<Self> {
        Ok(Self { inner: self.inner.up_to(parse_date(last)?).map_err(value_err)? })
    }

    /// The trailing `days` days ending at `last`.
    fn window(&self, last: &str, days: usize) -> PyResult<Self> {
        Ok(Self { inner: ingest::select_window(&self.inner, parse_date(last)?, days).map_err(value_err)? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Quantile forecasts of one zone, in MW.
#[pyclass(name = "ForecastGrid", frozen)]
struct PyGrid {
    inner: QuantileForecastGrid,
}

#[pymethods]
impl PyGrid {
    #[getter]
    fn zone(&self) -> String {
        self.inner.zone.clone()
    }

    #[getter]
    fn timestamps(&self) -> Vec<String> {
        self.inner.timestamps.iter().map(fmt_ts).collect()
    }

    #[getter]
    fn quantiles(&self) -> Vec<Vec<f64>> {
        self.inner.q.iter().map(|r| r.to_vec()).collect()
    }

    /// Rows whose levels crossed before rearrangement.
    #[getter]
    fn crossings(&self) -> usize {
        self.inner.crossings
    }

    /// Mean pinball score against realized load taken from `series`.
    fn score(&self, series: &PySeries) -> PyResult<f64> {
        let mut grid = self.inner.clone();
        grid.attach_realized(&series.inner).map_err(value_err)?;
        scoring::score_grid(&grid).map_err(value_err)
    }

    /// Forecast CSV text with civil timestamps (`dst` is `us` or `none`).
    #[pyo3(signature = (dst = "us"))]
    fn to_csv(&self, dst: &str) -> PyResult<String> {
        let rule: DstRule = dst.parse().map_err(value_err)?;
        let mut buf = Vec::new();
        pipeline::write_forecast_csv(&mut buf, std::slice::from_ref(&self.inner), rule).map_err(value_err)?;
        String::from_utf8(buf).map_err(value_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Seasonal-naive benchmark deciles for hourly `start..=end`.
#[pyfunction]
fn seasonal_naive_benchmark(history: &PySeries, start: &str, end: &str) -> PyResult<PyGrid> {
    let inner = scoring::seasonal_naive_benchmark(&history.inner, parse_ts(start)?, parse_ts(end)?).map_err(value_err)?;
    Ok(PyGrid { inner })
}

/// Fitted trend and remainder quantile models of one zone.
#[pyclass(name = "ZoneModel", frozen)]
struct PyModel {
    inner: pipeline::ZoneModel,
}

#[pymethods]
impl PyModel {
    /// Fit on a training window. `window` is the moving-average length in hours.
    #[staticmethod]
    #[pyo3(signature = (series, window = trend::TREND_WINDOW))]
    fn fit(py: Python<'_>, series: &PySeries, window: usize) -> PyResult<Self> {
        let s = series.inner.clone();
        let inner = py
            .detach(move || pipeline::fit_zone_with_window(&s, &BasisSpec::default(), window))
            .map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = model_io::load(&path).map_err(|e| match e {
            model_io::ModelIoError::Io { .. } => PyIOError::new_err(e.to_string()),
            other => value_err(other),
        })?;
        Ok(Self { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        model_io::save(&self.inner, &path, "python").map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn zone(&self) -> String {
        self.inner.zone.clone()
    }

    #[getter]
    fn t_last(&self) -> String {
        fmt_ts(&self.inner.t_last)
    }

    #[getter]
    fn last_trend(&self) -> f64 {
        self.inner.trend.last_trend
    }

    /// Number of fitted (hour, level) models.
    #[getter]
    fn model_count(&self) -> usize {
        self.inner.qmodels.model_count()
    }

    /// Remainder coefficients for `hour` and `tau`.
    fn coefficients(&self, hour: usize, tau: f64) -> PyResult<Vec<f64>> {
        self.inner.qmodels.coefficients(hour, tau).map(<[f64]>::to_vec).map_err(value_err)
    }

    /// In-sample pinball sums, indexed `[hour][tau]`.
    fn objectives(&self) -> Vec<Vec<f64>> {
        self.inner.qmodels.objective.clone()
    }

    #[pyo3(signature = (start, end, rearrange = true))]
    fn forecast(&self, start: &str, end: &str, rearrange: bool) -> PyResult<PyGrid> {
        let inner = pipeline::forecast(&self.inner, parse_ts(start)?, parse_ts(end)?, rearrange).map_err(value_err)?;
        Ok(PyGrid { inner })
    }
}

#[pymodule]
fn pyqrload(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(pinball, m)?)?;
    m.add_function(wrap_pyfunction!(improvement, m)?)?;
    m.add_function(wrap_pyfunction!(tau_grid, m)?)?;
    m.add_function(wrap_pyfunction!(qr_fit, m)?)?;
    m.add_function(wrap_pyfunction!(moving_average_trend, m)?)?;
    m.add_function(wrap_pyfunction!(fourier_basis, m)?)?;
    m.add_function(wrap_pyfunction!(bspline_basis, m)?)?;
    m.add_function(wrap_pyfunction!(task_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(seasonal_naive_benchmark, m)?)?;
    m.add_class::<PySeries>()?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PyModel>()?;
    Ok(())
}
