//! Pinball scoring, relative improvement and the seasonal-naive benchmark.

use std::fmt::Write as _;
use std::io::{self, Write};

use chrono::{Datelike, Duration, Months, NaiveDate, NaiveDateTime, Timelike};
use thiserror::Error;

use crate::ingest::HourlySeries;
use crate::pipeline::{self, QuantileForecastGrid};
use crate::quantreg::{pinball_loss, TAU_GRID};
use crate::stats;

/// Header of score report files.
pub const REPORT_HEADER: &str = "zone,task,model_pb_mw,benchmark_pb_mw,improvement_pct";

/// Label of the benchmark shipped with this crate.
pub const BENCHMARK_LABEL: &str = "seasonal-naive (same hour of week, ±21 days, 3 prior years)";

/// Years of history the benchmark draws from.
pub const BENCHMARK_YEARS: u32 = 3;
/// Half-width in days of the benchmark's seasonal window.
pub const BENCHMARK_HALF_WIDTH_DAYS: i64 = 21;

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("no realized load for forecast row {row}")]
    MissingRealized { row: usize },
    #[error("forecast grid is empty")]
    EmptyGrid,
    #[error("benchmark score {0} is not positive")]
    NonPositiveBenchmark(f64),
    #[error("benchmark needs {required_days} days of history, found {available_days}")]
    InsufficientHistory { available_days: usize, required_days: usize },
    #[error("no benchmark history for {timestamp}")]
    NoMatchingHistory { timestamp: NaiveDateTime },
    #[error(transparent)]
    Pipeline(#[from] pipeline::PipelineError),
}

pub type Result<T, E = ScoringError> = std::result::Result<T, E>;

/// Mean pinball score over all rows and all nine levels, in MW.
pub fn score_grid(grid: &QuantileForecastGrid) -> Result<f64> {
    if grid.is_empty() {
        return Err(ScoringError::EmptyGrid);
    }
    let realized = grid.realized.as_ref().ok_or(ScoringError::MissingRealized { row: 0 })?;
    if realized.len() != grid.len() {
        return Err(ScoringError::MissingRealized { row: realized.len().min(grid.len()) });
    }
    let mut total = 0.0;
    for (row, (&y, q)) in realized.iter().zip(&grid.q).enumerate() {
        if !y.is_finite() {
            return Err(ScoringError::MissingRealized { row });
        }
        total += q.iter().zip(TAU_GRID).map(|(&qk, tau)| pinball_loss(y, qk, tau)).sum::<f64>();
    }
    Ok(total / (grid.len() * TAU_GRID.len()) as f64)
}

/// Relative improvement in percent of `model` over `benchmark`.
pub fn improvement(model: f64, benchmark: f64) -> Result<f64> {
    if benchmark > 0.0 {
        Ok(100.0 * (benchmark - model) / benchmark)
    } else {
        Err(ScoringError::NonPositiveBenchmark(benchmark))
    }
}

/// Deciles of load observed at the same hour of week within ±21 days of
/// the target date in each of the three preceding years.
///
/// Only hours inside `history` are used, so the forecast never looks past
/// the last in-sample hour.
pub fn seasonal_naive_benchmark(
    history: &HourlySeries,
    start: NaiveDateTime,
    end: NaiveDateTime,
) -> Result<QuantileForecastGrid> {
    let required_days = 365 * BENCHMARK_YEARS as usize;
    if history.days() < required_days {
        return Err(ScoringError::InsufficientHistory { available_days: history.days(), required_days });
    }
    let timestamps = pipeline::hourly_range(start, end)?;
    let mut q = Vec::with_capacity(timestamps.len());
    let mut sample = Vec::new();
    for &ts in &timestamps {
        benchmark_sample(history, ts, &mut sample);
        if sample.is_empty() {
            return Err(ScoringError::NoMatchingHistory { timestamp: ts });
        }
        let d = stats::quantiles_select(&mut sample, &TAU_GRID);
        q.push(std::array::from_fn(|k| d[k]));
    }
    Ok(QuantileForecastGrid { zone: history.zone().to_string(), timestamps, q, realized: None, crossings: 0 })
}

/// Historical loads matching `ts` for the benchmark.
pub fn benchmark_sample(history: &HourlySeries, ts: NaiveDateTime, out: &mut Vec<f64>) {
    out.clear();
    let target = ts.date();
    let hour = ts.hour() as usize;
    for k in 1..=BENCHMARK_YEARS {
        let Some(center) = target.checked_sub_months(Months::new(12 * k)) else { continue };
        for offset in -BENCHMARK_HALF_WIDTH_DAYS..=BENCHMARK_HALF_WIDTH_DAYS {
            let day = center + Duration::days(offset);
            if day.weekday() != target.weekday() {
                continue;
            }
            if let Some(d) = history.day_offset(day) {
                out.push(history.load()[d * 24 + hour]);
            }
        }
    }
}

/// One competition task.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub id: u8,
    pub due: NaiveDate,
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
    pub weight: f64,
}

impl Task {
    /// Last day whose data is published by the due date. A month's data
    /// becomes available on the 14th of the following month.
    pub fn last_in_sample(&self) -> NaiveDate {
        let mut month_start = self.due.with_day(1).expect("day 1 exists");
        loop {
            let published = month_start.with_day(14).expect("day 14 exists");
            if published <= self.due {
                return month_start - Duration::days(1);
            }
            month_start = month_start.checked_sub_months(Months::new(1)).expect("in range");
        }
    }

    pub fn window(&self) -> (NaiveDateTime, NaiveDateTime) {
        (
            self.window_start.and_hms_opt(0, 0, 0).expect("midnight"),
            self.window_end.and_hms_opt(23, 0, 0).expect("valid hour"),
        )
    }

    pub fn name(&self) -> String {
        format!("task{}", self.id)
    }
}

/// The six tasks of the competition; the last one counts double.
pub fn task_schedule() -> Vec<Task> {
    let d = |y, m, day| NaiveDate::from_ymd_opt(y, m, day).expect("valid date");
    let rows = [
        (1, d(2016, 12, 15), d(2017, 1, 1), d(2017, 1, 31), 1.0),
        (2, d(2016, 12, 31), d(2017, 2, 1), d(2017, 2, 28), 1.0),
        (3, d(2017, 1, 15), d(2017, 2, 1), d(2017, 2, 28), 1.0),
        (4, d(2017, 1, 31), d(2017, 3, 1), d(2017, 3, 31), 1.0),
        (5, d(2017, 2, 14), d(2017, 3, 1), d(2017, 3, 31), 1.0),
        (6, d(2017, 2, 28), d(2017, 4, 1), d(2017, 4, 30), 2.0),
    ];
    rows.into_iter()
        .map(|(id, due, window_start, window_end, weight)| Task { id, due, window_start, window_end, weight })
        .collect()
}

/// Scores of one zone on one task.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreReport {
    pub zone: String,
    pub task: String,
    pub model_score: f64,
    pub benchmark_score: f64,
    pub improvement_pct: f64,
}

impl ScoreReport {
    pub fn new(zone: &str, task: &str, model_score: f64, benchmark_score: f64) -> Result<Self> {
        Ok(Self {
            zone: zone.to_string(),
            task: task.to_string(),
            model_score,
            benchmark_score,
            improvement_pct: improvement(model_score, benchmark_score)?,
        })
    }
}

pub fn write_report_csv<W: Write>(mut w: W, reports: &[ScoreReport]) -> io::Result<()> {
    writeln!(w, "{REPORT_HEADER}")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{:.4},{:.4},{:.4}",
            r.zone, r.task, r.model_score, r.benchmark_score, r.improvement_pct
        )?;
    }
    Ok(())
}

/// Weighted mean improvement over reports, weighting by `weight(task)`.
pub fn weighted_improvement(reports: &[ScoreReport], weight: impl Fn(&str) -> f64) -> Option<f64> {
    let (num, den) = reports.iter().fold((0.0, 0.0), |(n, d), r| {
        let w = weight(&r.task);
        (n + w * r.improvement_pct, d + w)
    });
    (den > 0.0).then(|| num / den)
}

/// Plain-text summary: one line per report, then per-task means and the
/// schedule-weighted overall improvement.
pub fn summary(reports: &[ScoreReport], benchmark_label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "benchmark: {benchmark_label}");
    let _ = writeln!(s, "{:<12} {:<8} {:>12} {:>12} {:>9}", "zone", "task", "model PB", "bench PB", "impr %");
    for r in reports {
        let _ = writeln!(
            s,
            "{:<12} {:<8} {:>12.3} {:>12.3} {:>9.2}",
            r.zone, r.task, r.model_score, r.benchmark_score, r.improvement_pct
        );
    }
    let mut tasks: Vec<&str> = reports.iter().map(|r| r.task.as_str()).collect();
    tasks.sort_unstable();
    tasks.dedup();
    for t in &tasks {
        let sel: Vec<&ScoreReport> = reports.iter().filter(|r| r.task == *t).collect();
        let beaten = sel.iter().filter(|r| r.model_score < r.benchmark_score).count();
        let mean = sel.iter().map(|r| r.improvement_pct).sum::<f64>() / sel.len() as f64;
        let _ = writeln!(s, "{t}: mean improvement {mean:.2}%, model better in {beaten} of {} zones", sel.len());
    }
    let schedule = task_schedule();
    let weight = |task: &str| schedule.iter().find(|t| t.name() == task).map_or(1.0, |t| t.weight);
    if let Some(w) = weighted_improvement(reports, weight) {
        let _ = writeln!(s, "weighted mean improvement: {w:.2}%");
    }
    s
}
