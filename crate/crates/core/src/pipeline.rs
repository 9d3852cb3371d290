//! Per-zone fit and forecast.
//!
//! Log-load is split into the moving-average trend and the remainder
//! `Y = L - trend`. Forecast quantiles of log-load are the sum of remainder
//! and trend quantiles at the same level, exponentiated, and optionally
//! sorted across levels to remove crossings.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use chrono::{Duration, NaiveDate, NaiveDateTime, Timelike};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::{AnnualClock, DstRule};
use crate::features::BasisSpec;
use crate::ingest::{HourlySeries, TIMESTAMP_FORMAT};
use crate::quantreg::{self, QuantRegError, QuantileModelSet, TAU_GRID};
use crate::trend::{self, TrendError, TrendFit};

/// Header of forecast CSV files.
pub const FORECAST_HEADER: &str = "zone,timestamp,q10,q20,q30,q40,q50,q60,q70,q80,q90";

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("zone {zone}: trend fit failed: {source}")]
    Trend { zone: String, source: TrendError },
    #[error("zone {zone}: quantile regression failed: {source}")]
    QuantReg { zone: String, source: QuantRegError },
    #[error("forecast window starts at {start}, not after the last in-sample hour {t_last}")]
    WindowBeforeTrainingEnd { start: NaiveDateTime, t_last: NaiveDateTime },
    #[error("invalid forecast window {start} .. {end}")]
    InvalidWindow { start: NaiveDateTime, end: NaiveDateTime },
    #[error("no realized load for {timestamp}")]
    MissingRealized { timestamp: NaiveDateTime },
    #[error("forecast file line {line}: {reason}")]
    MalformedForecast { line: usize, reason: String },
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// Everything needed to forecast one zone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoneModel {
    pub zone: String,
    pub spec: BasisSpec,
    /// Origin of the annual bases.
    pub epoch: NaiveDate,
    /// First day of the training window.
    pub first_day: NaiveDate,
    pub t_last: NaiveDateTime,
    pub trend: TrendFit,
    pub qmodels: QuantileModelSet,
}

impl ZoneModel {
    pub fn clock(&self) -> AnnualClock {
        AnnualClock::new(self.epoch)
    }
}

/// Fit trend and remainder quantile models on a training window.
pub fn fit_zone(series: &HourlySeries, spec: &BasisSpec) -> Result<ZoneModel> {
    fit_zone_with_window(series, spec, trend::TREND_WINDOW)
}

pub fn fit_zone_with_window(series: &HourlySeries, spec: &BasisSpec, window: usize) -> Result<ZoneModel> {
    let zone = series.zone().to_string();
    let trend = TrendFit::fit_with_window(series, spec, window)
        .map_err(|source| PipelineError::Trend { zone: zone.clone(), source })?;
    let remainder = remainder(series, &trend);
    let clock = series.annual_clock();
    let first_day = clock.day_index(series.start());
    let qmodels = quantreg::fit_model_set(&zone, &remainder, first_day, &clock, spec)
        .map_err(|source| PipelineError::QuantReg { zone: zone.clone(), source })?;
    Ok(ZoneModel {
        zone,
        spec: spec.clone(),
        epoch: clock.epoch(),
        first_day: series.start(),
        t_last: series.last_timestamp(),
        trend,
        qmodels,
    })
}

/// `Y_t = L_t - trend_t` over the training window.
pub fn remainder(series: &HourlySeries, trend: &TrendFit) -> Vec<f64> {
    series.log_load().iter().zip(&trend.trend_path).map(|(l, t)| l - t).collect()
}

/// Fit zones independently and concurrently; results keep input order.
pub fn fit_zones(series: &[HourlySeries], spec: &BasisSpec) -> Vec<Result<ZoneModel>> {
    series.par_iter().map(|s| fit_zone(s, spec)).collect()
}

/// Hourly quantile forecasts of one zone in the 24-hour calendar.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileForecastGrid {
    pub zone: String,
    pub timestamps: Vec<NaiveDateTime>,
    /// Load quantiles in MW, one row per timestamp ordered as [`TAU_GRID`].
    pub q: Vec<[f64; 9]>,
    pub realized: Option<Vec<f64>>,
    /// Rows that were not nondecreasing before rearrangement.
    pub crossings: usize,
}

impl QuantileForecastGrid {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Look up realized load for every row in `series`.
    pub fn attach_realized(&mut self, series: &HourlySeries) -> Result<()> {
        let origin = series.timestamp(0);
        let mut realized = Vec::with_capacity(self.len());
        for &ts in &self.timestamps {
            let offset = (ts - origin).num_hours();
            if offset < 0 || offset as usize >= series.len() {
                return Err(PipelineError::MissingRealized { timestamp: ts });
            }
            realized.push(series.load()[offset as usize]);
        }
        self.realized = Some(realized);
        Ok(())
    }
}

/// Hourly timestamps `start..=end`.
pub fn hourly_range(start: NaiveDateTime, end: NaiveDateTime) -> Result<Vec<NaiveDateTime>> {
    if end < start || start.minute() != 0 || end.minute() != 0 || start.second() != 0 || end.second() != 0 {
        return Err(PipelineError::InvalidWindow { start, end });
    }
    let n = (end - start).num_hours() + 1;
    Ok((0..n).map(|h| start + Duration::hours(h)).collect())
}

/// Rows not nondecreasing across levels.
pub fn count_crossings(rows: &[[f64; 9]]) -> usize {
    rows.iter().filter(|r| r.windows(2).any(|w| w[1] < w[0])).count()
}

/// Log-load quantiles `q(Y) + q(trend)` for each timestamp, unsorted.
pub fn forecast_log(model: &ZoneModel, timestamps: &[NaiveDateTime]) -> Result<Vec<[f64; 9]>> {
    let Some(&start) = timestamps.first() else {
        return Ok(Vec::new());
    };
    if start <= model.t_last {
        return Err(PipelineError::WindowBeforeTrainingEnd { start, t_last: model.t_last });
    }
    let zone = &model.zone;
    let horizons: Vec<usize> = timestamps.iter().map(|&ts| (ts - model.t_last).num_hours() as usize).collect();
    let mut distinct = horizons.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let band = trend::trend_quantiles(&model.trend, &distinct)
        .map_err(|source| PipelineError::Trend { zone: zone.clone(), source })?;

    let clock = model.clock();
    let mut rows = vec![[0.0; 9]; timestamps.len()];
    for hour in 0..24 {
        let idx: Vec<usize> = (0..timestamps.len()).filter(|&i| timestamps[i].hour() as usize == hour).collect();
        if idx.is_empty() {
            continue;
        }
        let days: Vec<i64> = idx.iter().map(|&i| clock.day_index(timestamps[i].date())).collect();
        for (k, &tau) in TAU_GRID.iter().enumerate() {
            let y = quantreg::qr_predict(&model.qmodels, &clock, &days, hour, tau, &model.spec)
                .map_err(|source| PipelineError::QuantReg { zone: zone.clone(), source })?;
            for (&i, v) in idx.iter().zip(y) {
                rows[i][k] = v;
            }
        }
    }
    for (row, h) in rows.iter_mut().zip(&horizons) {
        let t = band.get(*h).expect("horizon in band");
        for (v, tq) in row.iter_mut().zip(t) {
            *v += tq;
        }
    }
    Ok(rows)
}

/// Load quantile forecasts for hourly `start..=end`.
pub fn forecast(model: &ZoneModel, start: NaiveDateTime, end: NaiveDateTime, rearrange: bool) -> Result<QuantileForecastGrid> {
    let timestamps = hourly_range(start, end)?;
    if start <= model.t_last {
        return Err(PipelineError::WindowBeforeTrainingEnd { start, t_last: model.t_last });
    }
    let log_rows = forecast_log(model, &timestamps)?;
    let crossings = count_crossings(&log_rows);
    let q = log_rows
        .into_iter()
        .map(|mut row| {
            if rearrange {
                row.sort_by(f64::total_cmp);
            }
            row.map(f64::exp)
        })
        .collect();
    Ok(QuantileForecastGrid { zone: model.zone.clone(), timestamps, q, realized: None, crossings })
}

/// Write grids as forecast CSV rows in civil time under `rule`.
pub fn write_forecast_csv<W: Write>(mut w: W, grids: &[QuantileForecastGrid], rule: DstRule) -> io::Result<()> {
    writeln!(w, "{FORECAST_HEADER}")?;
    for g in grids {
        for (ts, i) in rule.to_civil(&g.timestamps) {
            write!(w, "{},{}", g.zone, ts.format(TIMESTAMP_FORMAT))?;
            for v in &g.q[i] {
                write!(w, ",{v:.2}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Read forecast CSV rows back into per-zone grids in the 24-hour calendar.
///
/// Lines starting with `#` are skipped. A repeated timestamp is averaged and
/// a single missing hour is interpolated, mirroring ingest.
pub fn read_forecast_csv<R: BufRead>(r: R) -> Result<Vec<QuantileForecastGrid>> {
    let malformed = |line: usize, reason: String| PipelineError::MalformedForecast { line, reason };
    let mut zones: BTreeMap<String, Vec<(NaiveDateTime, [f64; 9])>> = BTreeMap::new();
    let mut header_seen = false;
    for (n, line) in r.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| malformed(line_no, e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            if line != FORECAST_HEADER {
                return Err(malformed(line_no, format!("expected header `{FORECAST_HEADER}`")));
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(malformed(line_no, format!("expected 11 fields, found {}", fields.len())));
        }
        let ts = NaiveDateTime::parse_from_str(fields[1], TIMESTAMP_FORMAT)
            .map_err(|e| malformed(line_no, format!("timestamp `{}`: {e}", fields[1])))?;
        let mut row = [0.0; 9];
        for (k, f) in fields[2..].iter().enumerate() {
            row[k] = f.parse().map_err(|_| malformed(line_no, format!("value `{f}`")))?;
        }
        zones.entry(fields[0].to_string()).or_default().push((ts, row));
    }
    if !header_seen {
        return Err(malformed(0, "empty forecast file".into()));
    }
    let mut grids = Vec::new();
    for (zone, rows) in zones {
        let mut timestamps: Vec<NaiveDateTime> = Vec::new();
        let mut q: Vec<[f64; 9]> = Vec::new();
        let mut counts: Vec<f64> = Vec::new();
        for (ts, row) in rows {
            match timestamps.last() {
                Some(&last) if ts == last => {
                    let k = q.len() - 1;
                    q[k].iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    counts[k] += 1.0;
                }
                Some(&last) if ts == last + Duration::hours(2) => {
                    let k = q.len() - 1;
                    let prev = q[k].map(|v| v / counts[k]);
                    q[k] = prev;
                    counts[k] = 1.0;
                    let mid: [f64; 9] = std::array::from_fn(|j| 0.5 * (prev[j] + row[j]));
                    timestamps.push(last + Duration::hours(1));
                    q.push(mid);
                    counts.push(1.0);
                    timestamps.push(ts);
                    q.push(row);
                    counts.push(1.0);
                }
                Some(&last) if ts != last + Duration::hours(1) => {
                    return Err(malformed(0, format!("zone {zone}: rows jump from {last} to {ts}")));
                }
                _ => {
                    timestamps.push(ts);
                    q.push(row);
                    counts.push(1.0);
                }
            }
        }
        for (row, c) in q.iter_mut().zip(&counts) {
            row.iter_mut().for_each(|v| *v /= c);
        }
        let crossings = count_crossings(&q);
        grids.push(QuantileForecastGrid { zone, timestamps, q, realized: None, crossings });
    }
    Ok(grids)
}
