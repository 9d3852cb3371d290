//! Deterministic regressors: calendar dummies, annual Fourier terms,
//! periodic cubic B-splines and temperature polynomials, plus the two design
//! matrices built from them (the hourly trend pre-fit and the per-hour
//! quantile regressions).

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::calendar::AnnualClock;
use crate::ingest::HourlySeries;

/// Meteorological year in hours.
pub const ANNUAL_PERIOD_HOURS: f64 = 365.24 * 24.0;

/// Version tag of the column layout produced by the design builders.
pub const LAYOUT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("invalid basis spec: {0}")]
    InvalidSpec(String),
    #[error("temperature missing at entry {index}")]
    MissingTemperature { index: usize },
    #[error("design dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub annual_period_hours: f64,
    pub fourier_order: usize,
    pub bspline_count: usize,
    pub bspline_degree: usize,
    pub drop_last_bspline: bool,
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self {
            annual_period_hours: ANNUAL_PERIOD_HOURS,
            fourier_order: 2,
            bspline_count: 12,
            bspline_degree: 3,
            drop_last_bspline: true,
        }
    }
}

impl BasisSpec {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.fourier_order < 1 {
            return Err(FeatureError::InvalidSpec("fourier_order must be at least 1".into()));
        }
        if self.bspline_count <= self.bspline_degree + 1 {
            return Err(FeatureError::InvalidSpec(format!(
                "bspline_count {} must exceed degree + 1 = {}",
                self.bspline_count,
                self.bspline_degree + 1
            )));
        }
        if !(self.annual_period_hours > 0.0 && self.annual_period_hours.is_finite()) {
            return Err(FeatureError::InvalidSpec("annual period must be positive".into()));
        }
        Ok(())
    }

    pub fn fourier_columns(&self) -> usize {
        2 * self.fourier_order
    }

    /// B-spline columns kept in the designs.
    pub fn spline_columns(&self) -> usize {
        self.bspline_count - usize::from(self.drop_last_bspline)
    }

    /// Hex SHA-256 of the canonical JSON form; stored in model files.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Annual Fourier terms `[sin(2πkt/P), cos(2πkt/P)]` for `k = 1..=order`.
pub fn fourier_row(t: f64, spec: &BasisSpec, out: &mut [f64]) {
    for k in 0..spec.fourier_order {
        let angle = TAU * (k + 1) as f64 * t / spec.annual_period_hours;
        out[2 * k] = angle.sin();
        out[2 * k + 1] = angle.cos();
    }
}

pub fn fourier_basis(t: &[f64], spec: &BasisSpec) -> DMatrix<f64> {
    let cols = spec.fourier_columns();
    let mut m = DMatrix::zeros(t.len(), cols);
    let mut row = vec![0.0; cols];
    for (i, &ti) in t.iter().enumerate() {
        fourier_row(ti, spec, &mut row);
        for (j, v) in row.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    m
}

/// Nonzero periodic B-spline values at `t`: `(spline index, value)` pairs.
///
/// Knots sit at `k * P / count` from the epoch; function `j` is supported on
/// `[j, j + degree + 1)` knot intervals, wrapped modulo `count`.
pub fn bspline_nonzeros(t: f64, spec: &BasisSpec) -> Vec<(usize, f64)> {
    let m = spec.bspline_count;
    let d = spec.bspline_degree;
    let phase = t.rem_euclid(spec.annual_period_hours) / spec.annual_period_hours;
    let x = phase * m as f64;
    let i = (x.floor() as usize).min(m - 1);
    let u = (x - i as f64).clamp(0.0, 1.0);

    // Cox-de Boor on unit-spaced knots: b[r] holds N_{i-k+r, k}(x).
    let mut b = vec![0.0; d + 1];
    b[0] = 1.0;
    for k in 1..=d {
        let kf = k as f64;
        let mut next = vec![0.0; d + 1];
        for r in 0..=k {
            let left = if r >= 1 { b[r - 1] } else { 0.0 };
            let right = if r < k { b[r] } else { 0.0 };
            next[r] = (u + kf - r as f64) / kf * left + (r as f64 + 1.0 - u) / kf * right;
        }
        b = next;
    }
    (0..=d)
        .map(|r| (((i + m) - d + r) % m, b[r]))
        .collect()
}

/// Periodic B-spline basis; the last column is omitted when
/// `spec.drop_last_bspline` is set.
pub fn periodic_bspline_basis(t: &[f64], spec: &BasisSpec) -> DMatrix<f64> {
    let cols = spec.spline_columns();
    let mut m = DMatrix::zeros(t.len(), cols);
    for (row, &ti) in t.iter().enumerate() {
        for (j, v) in bspline_nonzeros(ti, spec) {
            if j < cols {
                m[(row, j)] += v;
            }
        }
    }
    m
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DummyKind {
    HourOfDay,
    HourOfWeek,
    DayOfWeek,
}

impl DummyKind {
    pub fn width(self) -> usize {
        match self {
            Self::HourOfDay => 24,
            Self::HourOfWeek => 168,
            Self::DayOfWeek => 7,
        }
    }

    /// Hour-of-week index is `hour + 24 * day_of_week`, the column-major
    /// vectorization of the hour-of-day ⊗ day-of-week outer product.
    pub fn index(self, hour: usize, day_of_week: usize) -> usize {
        match self {
            Self::HourOfDay => hour,
            Self::HourOfWeek => hour + 24 * day_of_week,
            Self::DayOfWeek => day_of_week,
        }
    }
}

pub fn dummies(series: &HourlySeries, kind: DummyKind) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(series.len(), kind.width());
    for i in 0..series.len() {
        m[(i, kind.index(series.hour_of_day(i), series.day_of_week(i)))] = 1.0;
    }
    m
}

/// Named contiguous range of design columns.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnGroup {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

/// Row-compressed regressor matrix with named column groups.
///
/// Only nonzero entries are stored; the seasonal designs have a handful of
/// nonzeros per row.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
    groups: Vec<ColumnGroup>,
}

impl DesignMatrix {
    /// Empty matrix with the given column layout; fill with [`push_row`](Self::push_row).
    pub fn with_groups(groups: Vec<ColumnGroup>) -> Self {
        let cols = groups.iter().map(|g| g.start + g.len).max().unwrap_or(0);
        Self { rows: 0, cols, row_ptr: vec![0], col_idx: Vec::new(), values: Vec::new(), groups }
    }

    /// Single unnamed group covering all columns.
    pub fn from_dense(rows: usize, cols: usize, row_major: &[f64]) -> Result<Self, FeatureError> {
        if row_major.len() != rows * cols {
            return Err(FeatureError::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                row_major.len()
            )));
        }
        let mut m = Self::with_groups(vec![ColumnGroup { name: "x".into(), start: 0, len: cols }]);
        for r in row_major.chunks(cols.max(1)).take(rows) {
            m.push_dense_row(r);
        }
        Ok(m)
    }

    pub fn from_nalgebra(x: &DMatrix<f64>) -> Self {
        let mut m =
            Self::with_groups(vec![ColumnGroup { name: "x".into(), start: 0, len: x.ncols() }]);
        let mut row = vec![0.0; x.ncols()];
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                row[j] = x[(i, j)];
            }
            m.push_dense_row(&row);
        }
        m
    }

    pub fn push_dense_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.cols);
        for (j, &v) in row.iter().enumerate() {
            if v != 0.0 {
                self.col_idx.push(j as u32);
                self.values.push(v);
            }
        }
        self.row_ptr.push(self.values.len());
        self.rows += 1;
    }

    /// Append a row given as `(column, value)` pairs in increasing column order.
    pub fn push_row(&mut self, entries: &[(usize, f64)]) {
        for &(j, v) in entries {
            debug_assert!(j < self.cols);
            if v != 0.0 {
                self.col_idx.push(j as u32);
                self.values.push(v);
            }
        }
        self.row_ptr.push(self.values.len());
        self.rows += 1;
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn groups(&self) -> &[ColumnGroup] {
        &self.groups
    }

    pub fn group(&self, name: &str) -> Option<&ColumnGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    /// Stored entries of row `i` as parallel column/value slices.
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (idx, vals) = self.row(i);
        idx.iter().position(|&c| c as usize == j).map_or(0.0, |k| vals[k])
    }

    pub fn dense_row(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        let (idx, vals) = self.row(i);
        for (&c, &v) in idx.iter().zip(vals) {
            out[c as usize] = v;
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let (idx, vals) = self.row(i);
            for (&c, &v) in idx.iter().zip(vals) {
                m[(i, c as usize)] = v;
            }
        }
        m
    }

    pub fn row_dot(&self, i: usize, beta: &[f64]) -> f64 {
        let (idx, vals) = self.row(i);
        idx.iter().zip(vals).map(|(&c, &v)| v * beta[c as usize]).sum()
    }

    pub fn mul_vec(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| self.row_dot(i, beta)).collect()
    }

    /// Number of stored (nonzero) entries per column.
    pub fn column_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.cols];
        for &c in &self.col_idx {
            counts[c as usize] += 1;
        }
        counts
    }

    pub fn zero_columns(&self) -> Vec<usize> {
        self.column_counts()
            .iter()
            .enumerate()
            .filter_map(|(j, &n)| (n == 0).then_some(j))
            .collect()
    }

    /// Groups with no nonzero entry at all.
    pub fn zero_groups(&self) -> Vec<&ColumnGroup> {
        let counts = self.column_counts();
        self.groups
            .iter()
            .filter(|g| g.len > 0 && counts[g.start..g.start + g.len].iter().all(|&n| n == 0))
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Centering and scaling applied to temperature before taking powers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureScaling {
    pub mean: f64,
    pub sd: f64,
}

impl TemperatureScaling {
    pub fn fit(temperature: &[f64]) -> Result<Self, FeatureError> {
        if let Some(index) = temperature.iter().position(|t| !t.is_finite()) {
            return Err(FeatureError::MissingTemperature { index });
        }
        let n = temperature.len().max(1) as f64;
        let mean = temperature.iter().sum::<f64>() / n;
        let var = temperature.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
        Ok(Self { mean, sd: var.sqrt() })
    }

    /// Standardized value; a constant temperature maps to zero.
    pub fn apply(&self, t: f64) -> f64 {
        if self.sd > 0.0 {
            (t - self.mean) / self.sd
        } else {
            0.0
        }
    }
}

pub mod group_names {
    pub const HOUR_OF_WEEK: &str = "hour_of_week";
    pub const FOURIER_X_HOUR_OF_WEEK: &str = "fb2×hour_of_week";
    pub const SPLINE_X_HOUR_OF_DAY: &str = "bs12×hour_of_day";
    pub const TEMP_POLY: &str = "temp_poly";
    pub const FOURIER_X_TEMP_POLY: &str = "fb2×temp_poly";
    pub const DAY_OF_WEEK: &str = "day_of_week";
    pub const FOURIER_X_DAY_OF_WEEK: &str = "fb2×day_of_week";
    pub const SPLINE: &str = "bs12";
}

fn layout(parts: &[(&str, usize)]) -> Vec<ColumnGroup> {
    let mut start = 0;
    parts
        .iter()
        .map(|&(name, len)| {
            let g = ColumnGroup { name: name.to_string(), start, len };
            start += len;
            g
        })
        .collect()
}

/// Trend pre-fit design: hour-of-week dummies, their annual Fourier
/// interactions, splines × hour-of-day, temperature cubic and its Fourier
/// interactions. Interaction blocks are basis-major.
pub fn build_trend_design(series: &HourlySeries, spec: &BasisSpec) -> Result<DesignMatrix, FeatureError> {
    let scaling = TemperatureScaling::fit(series.temperature())?;
    build_trend_design_scaled(series, spec, &scaling)
}

pub fn build_trend_design_scaled(
    series: &HourlySeries,
    spec: &BasisSpec,
    scaling: &TemperatureScaling,
) -> Result<DesignMatrix, FeatureError> {
    spec.validate()?;
    use group_names::*;
    let nf = spec.fourier_columns();
    let ns = spec.spline_columns();
    let groups = layout(&[
        (HOUR_OF_WEEK, 168),
        (FOURIER_X_HOUR_OF_WEEK, nf * 168),
        (SPLINE_X_HOUR_OF_DAY, ns * 24),
        (TEMP_POLY, 3),
        (FOURIER_X_TEMP_POLY, nf * 3),
    ]);
    let (fw, sh, tp, ft) = (groups[1].start, groups[2].start, groups[3].start, groups[4].start);
    let mut m = DesignMatrix::with_groups(groups);

    let clock = series.annual_clock();
    let t0 = clock.hour_index(series.timestamp(0));
    let mut fourier = vec![0.0; nf];
    let mut entries = Vec::with_capacity(1 + nf + spec.bspline_degree + 1 + 3 + 3 * nf);
    for i in 0..series.len() {
        let temp = series.temperature()[i];
        if !temp.is_finite() {
            return Err(FeatureError::MissingTemperature { index: i });
        }
        let h = series.hour_of_day(i);
        let w = DummyKind::HourOfWeek.index(h, series.day_of_week(i));
        let t = (t0 + i as i64) as f64;
        fourier_row(t, spec, &mut fourier);
        let z = scaling.apply(temp);
        let poly = [z, z * z, z * z * z];

        entries.clear();
        entries.push((w, 1.0));
        for (j, f) in fourier.iter().enumerate() {
            entries.push((fw + j * 168 + w, *f));
        }
        let mut splines: Vec<_> = bspline_nonzeros(t, spec).into_iter().filter(|&(j, _)| j < ns).collect();
        splines.sort_by_key(|&(j, _)| j);
        for (j, v) in splines {
            entries.push((sh + j * 24 + h, v));
        }
        for (k, p) in poly.iter().enumerate() {
            entries.push((tp + k, *p));
        }
        for (j, f) in fourier.iter().enumerate() {
            for (k, p) in poly.iter().enumerate() {
                entries.push((ft + j * 3 + k, f * p));
            }
        }
        m.push_row(&entries);
    }
    Ok(m)
}

/// Per-hour quantile regression design, one row per day: day-of-week
/// dummies, their annual Fourier interactions and the kept splines, with the
/// annual bases evaluated at `t = 24 * day + hour`.
pub fn build_quantreg_design(
    clock: &AnnualClock,
    days: &[i64],
    hour: usize,
    spec: &BasisSpec,
) -> Result<DesignMatrix, FeatureError> {
    spec.validate()?;
    if hour >= 24 {
        return Err(FeatureError::Dimension(format!("hour {hour} out of range")));
    }
    use group_names::*;
    let nf = spec.fourier_columns();
    let ns = spec.spline_columns();
    let groups = layout(&[(DAY_OF_WEEK, 7), (FOURIER_X_DAY_OF_WEEK, nf * 7), (SPLINE, ns)]);
    let (fd, sp) = (groups[1].start, groups[2].start);
    let mut m = DesignMatrix::with_groups(groups);
    let mut fourier = vec![0.0; nf];
    let mut entries = Vec::with_capacity(1 + nf + spec.bspline_degree + 1);
    for &d in days {
        let dow = clock.day_of_week(d);
        let t = (24 * d + hour as i64) as f64;
        fourier_row(t, spec, &mut fourier);
        entries.clear();
        entries.push((dow, 1.0));
        for (j, f) in fourier.iter().enumerate() {
            entries.push((fd + j * 7 + dow, *f));
        }
        let mut splines: Vec<_> = bspline_nonzeros(t, spec).into_iter().filter(|&(j, _)| j < ns).collect();
        splines.sort_by_key(|&(j, _)| j);
        for (j, v) in splines {
            entries.push((sp + j, v));
        }
        m.push_row(&entries);
    }
    Ok(m)
}
