//! Hourly load/temperature ingestion.
//!
//! Input files are plain CSV with the header `timestamp,zone,load_mw,drybulb_f`
//! and local civil timestamps `YYYY-MM-DD HH:00`. Clock changes are repaired
//! so that every calendar day carries exactly 24 observations: the repeated
//! autumn hour is averaged and the skipped spring hour is linearly
//! interpolated from its two neighbours.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use thiserror::Error;

use crate::calendar::AnnualClock;
use crate::features::ANNUAL_PERIOD_HOURS;

pub const CSV_HEADER: &str = "timestamp,zone,load_mw,drybulb_f";
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M";

/// In-sample window length in days: ten years plus one quarter.
pub const TRAINING_DAYS: usize = 365 * 10 + 92;
pub const TRAINING_HOURS: usize = TRAINING_DAYS * 24;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("empty input: missing header row")]
    Empty,
    #[error("line 1: unexpected header `{found}` (expected `{CSV_HEADER}`)")]
    BadHeader { found: String },
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("line {line}: non-positive load {value} MW")]
    NonPositiveLoad { line: usize, value: f64 },
    #[error("line {line}: timestamp {timestamp} is earlier than the preceding row")]
    OutOfOrderTimestamps { line: usize, timestamp: NaiveDateTime },
    #[error("line {line}: timestamp {timestamp} occurs more than twice")]
    DuplicateTimestamp { line: usize, timestamp: NaiveDateTime },
    #[error("more than one repeated hour on {date}")]
    RepeatedClockChange { date: NaiveDate },
    #[error("unrepairable gap on {}: {missing} hour(s) missing from {from}", from.date())]
    UnrepairableGap { from: NaiveDateTime, missing: i64 },
    #[error("no complete days of data for zone `{zone}`")]
    NoRecords { zone: String },
    #[error("insufficient history: {available_hours} hours available, {required_hours} required")]
    InsufficientHistory { available_hours: usize, required_hours: usize },
    #[error("last in-sample day {last} is outside the series ({start} .. {end})")]
    OutOfRange { last: NaiveDate, start: NaiveDate, end: NaiveDate },
    #[error("invalid series: {0}")]
    InvalidSeries(String),
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

/// One parsed CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecord {
    pub timestamp: NaiveDateTime,
    pub zone: String,
    pub load_mw: f64,
    /// Dry-bulb temperature in °F; NaN when the field was empty.
    pub drybulb: f64,
}

/// Clock-change-adjusted hourly observations for one zone.
///
/// Entries are contiguous hours starting at `start` 00:00 with exactly 24
/// entries per calendar day.
#[derive(Clone, Debug, PartialEq)]
pub struct HourlySeries {
    zone: String,
    start: NaiveDate,
    load: Vec<f64>,
    log_load: Vec<f64>,
    temperature: Vec<f64>,
}

impl HourlySeries {
    pub fn new(
        zone: impl Into<String>,
        start: NaiveDate,
        load: Vec<f64>,
        temperature: Vec<f64>,
    ) -> Result<Self> {
        if load.len() != temperature.len() {
            return Err(IngestError::InvalidSeries(format!(
                "load has {} entries, temperature {}",
                load.len(),
                temperature.len()
            )));
        }
        if load.is_empty() || !load.len().is_multiple_of(24) {
            return Err(IngestError::InvalidSeries(format!(
                "{} entries is not a positive whole number of days",
                load.len()
            )));
        }
        if let Some(i) = load.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(IngestError::InvalidSeries(format!(
                "load at entry {i} is {} (must be positive and finite)",
                load[i]
            )));
        }
        let log_load = load.iter().map(|v| v.ln()).collect();
        Ok(Self { zone: zone.into(), start, load, log_load, temperature })
    }

    pub fn zone(&self) -> &str {
        &self.zone
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn len(&self) -> usize {
        self.load.len()
    }

    pub fn is_empty(&self) -> bool {
        self.load.is_empty()
    }

    pub fn days(&self) -> usize {
        self.load.len() / 24
    }

    pub fn end_date(&self) -> NaiveDate {
        self.start + Duration::days(self.days() as i64 - 1)
    }

    pub fn load(&self) -> &[f64] {
        &self.load
    }

    pub fn log_load(&self) -> &[f64] {
        &self.log_load
    }

    pub fn temperature(&self) -> &[f64] {
        &self.temperature
    }

    pub fn timestamp(&self, i: usize) -> NaiveDateTime {
        self.start.and_time(NaiveTime::MIN) + Duration::hours(i as i64)
    }

    pub fn last_timestamp(&self) -> NaiveDateTime {
        self.timestamp(self.len() - 1)
    }

    pub fn hour_of_day(&self, i: usize) -> usize {
        i % 24
    }

    /// 0 = Monday.
    pub fn day_of_week(&self, i: usize) -> usize {
        AnnualClock::new(self.start).day_of_week((i / 24) as i64)
    }

    /// Clock anchored at January 1 of the first year in the series.
    pub fn annual_clock(&self) -> AnnualClock {
        AnnualClock::for_first_day(self.start)
    }

    /// Sub-series covering `n_days` whole days starting at day offset `first_day`.
    pub fn days_slice(&self, first_day: usize, n_days: usize) -> Self {
        let (a, b) = (first_day * 24, (first_day + n_days) * 24);
        Self {
            zone: self.zone.clone(),
            start: self.start + Duration::days(first_day as i64),
            load: self.load[a..b].to_vec(),
            log_load: self.log_load[a..b].to_vec(),
            temperature: self.temperature[a..b].to_vec(),
        }
    }

    /// Day offset of `date` within the series, if covered.
    pub fn day_offset(&self, date: NaiveDate) -> Option<usize> {
        let d = (date - self.start).num_days();
        (d >= 0 && (d as usize) < self.days()).then_some(d as usize)
    }

    /// Every whole day up to and including `last`.
    pub fn up_to(&self, last: NaiveDate) -> Result<Self> {
        let end = self.day_offset(last).ok_or(IngestError::OutOfRange {
            last,
            start: self.start,
            end: self.end_date(),
        })?;
        Ok(self.days_slice(0, end + 1))
    }
}

fn parse_row(line_no: usize, line: &str) -> Result<RawRecord> {
    let malformed = |reason: String| IngestError::MalformedRow { line: line_no, reason };
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 4 {
        return Err(malformed(format!("expected 4 fields, found {}", fields.len())));
    }
    let timestamp = NaiveDateTime::parse_from_str(fields[0], TIMESTAMP_FORMAT)
        .map_err(|e| malformed(format!("timestamp `{}`: {e}", fields[0])))?;
    if timestamp.minute() != 0 || timestamp.second() != 0 {
        return Err(malformed(format!("timestamp `{}` is not on the hour", fields[0])));
    }
    if fields[1].is_empty() {
        return Err(malformed("empty zone".into()));
    }
    let load_mw: f64 = fields[2]
        .parse()
        .map_err(|_| malformed(format!("load `{}` is not a number", fields[2])))?;
    if !load_mw.is_finite() {
        return Err(malformed(format!("load `{}` is not finite", fields[2])));
    }
    if load_mw <= 0.0 {
        return Err(IngestError::NonPositiveLoad { line: line_no, value: load_mw });
    }
    let drybulb = if fields[3].is_empty() {
        f64::NAN
    } else {
        fields[3]
            .parse()
            .map_err(|_| malformed(format!("temperature `{}` is not a number", fields[3])))?
    };
    Ok(RawRecord { timestamp, zone: fields[1].to_string(), load_mw, drybulb })
}

/// Parse CSV text, keeping rows whose zone is in `zones` (all zones when `None`).
///
/// Records are returned per zone in file order. Per zone, timestamps must be
/// nondecreasing and no timestamp may occur more than twice.
pub fn parse_csv_str(
    text: &str,
    zones: Option<&[String]>,
) -> Result<BTreeMap<String, Vec<RawRecord>>> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            None => return Err(IngestError::Empty),
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((_, l)) => break l.trim().trim_start_matches('\u{feff}'),
        }
    };
    if header != CSV_HEADER {
        return Err(IngestError::BadHeader { found: header.to_string() });
    }
    let mut out: BTreeMap<String, Vec<RawRecord>> = BTreeMap::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let rec = parse_row(line_no, line)?;
        if let Some(z) = zones {
            if !z.contains(&rec.zone) {
                continue;
            }
        }
        let recs = out.entry(rec.zone.clone()).or_default();
        if let Some(prev) = recs.last() {
            if rec.timestamp < prev.timestamp {
                return Err(IngestError::OutOfOrderTimestamps { line: line_no, timestamp: rec.timestamp });
            }
            if rec.timestamp == prev.timestamp
                && recs.len() >= 2
                && recs[recs.len() - 2].timestamp == rec.timestamp
            {
                return Err(IngestError::DuplicateTimestamp { line: line_no, timestamp: rec.timestamp });
            }
        }
        recs.push(rec);
    }
    Ok(out)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })
}

/// Records for one zone, in timestamp order.
pub fn parse_csv(path: impl AsRef<Path>, zone: &str) -> Result<Vec<RawRecord>> {
    let text = read_text(path.as_ref())?;
    let wanted = [zone.to_string()];
    let mut by_zone = parse_csv_str(&text, Some(&wanted))?;
    Ok(by_zone.remove(zone).unwrap_or_default())
}

/// Records for all (or the listed) zones.
pub fn parse_csv_zones(
    path: impl AsRef<Path>,
    zones: Option<&[String]>,
) -> Result<BTreeMap<String, Vec<RawRecord>>> {
    parse_csv_str(&read_text(path.as_ref())?, zones)
}

/// Clock-change repairs applied while building a 24-hours-per-day series.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RepairReport {
    /// Hours whose two observations were averaged.
    pub averaged: Vec<NaiveDateTime>,
    /// Hours filled by linear interpolation.
    pub interpolated: Vec<NaiveDateTime>,
    /// Observations dropped from partial leading/trailing days.
    pub trimmed_hours: usize,
}

/// Repair an hourly stream of value vectors into whole 24-hour days.
///
/// Returns the first day and one value vector per hour.
pub(crate) fn repair_hourly(
    rows: &[(NaiveDateTime, Vec<f64>)],
) -> Result<(NaiveDate, Vec<Vec<f64>>, RepairReport)> {
    let mut out: Vec<(NaiveDateTime, Vec<f64>)> = Vec::with_capacity(rows.len());
    let mut report = RepairReport::default();
    let mut dup_days = HashSet::new();
    let mut fill_days = HashSet::new();
    let mut dup_count = 1usize;

    for (ts, vals) in rows {
        if let Some((last_ts, last_vals)) = out.last_mut() {
            if ts == last_ts {
                if dup_count >= 2 {
                    return Err(IngestError::DuplicateTimestamp { line: 0, timestamp: *ts });
                }
                if !dup_days.insert(ts.date()) {
                    return Err(IngestError::RepeatedClockChange { date: ts.date() });
                }
                for (a, b) in last_vals.iter_mut().zip(vals) {
                    *a = (*a + b) / 2.0;
                }
                dup_count = 2;
                report.averaged.push(*ts);
                continue;
            }
            let gap = (*ts - *last_ts).num_hours();
            if gap <= 0 {
                return Err(IngestError::OutOfOrderTimestamps { line: 0, timestamp: *ts });
            }
            if gap == 2 {
                let missing = *last_ts + Duration::hours(1);
                if !fill_days.insert(missing.date()) {
                    return Err(IngestError::UnrepairableGap { from: missing, missing: 1 });
                }
                let filled: Vec<f64> =
                    last_vals.iter().zip(vals).map(|(a, b)| a + 0.5 * (b - a)).collect();
                out.push((missing, filled));
                report.interpolated.push(missing);
            } else if gap > 2 {
                return Err(IngestError::UnrepairableGap {
                    from: *last_ts + Duration::hours(1),
                    missing: gap - 1,
                });
            }
        }
        out.push((*ts, vals.clone()));
        dup_count = 1;
    }

    let first = out.iter().position(|(ts, _)| ts.hour() == 0);
    let last = out.iter().rposition(|(ts, _)| ts.hour() == 23);
    let (first, last) = match (first, last) {
        (Some(a), Some(b)) if b > a => (a, b),
        _ => return Err(IngestError::NoRecords { zone: String::new() }),
    };
    report.trimmed_hours = first + (out.len() - 1 - last);
    let start = out[first].0.date();
    let values = out.drain(first..=last).map(|(_, v)| v).collect();
    Ok((start, values, report))
}

/// Build the adjusted series and report which hours were repaired.
pub fn dst_adjust_with_report(records: &[RawRecord]) -> Result<(HourlySeries, RepairReport)> {
    let zone = records.first().map(|r| r.zone.clone()).unwrap_or_default();
    if let Some(r) = records.iter().find(|r| r.zone != zone) {
        return Err(IngestError::InvalidSeries(format!(
            "mixed zones `{zone}` and `{}` in one series",
            r.zone
        )));
    }
    let rows: Vec<_> =
        records.iter().map(|r| (r.timestamp, vec![r.load_mw, r.drybulb])).collect();
    let (start, values, report) = repair_hourly(&rows).map_err(|e| match e {
        IngestError::NoRecords { .. } => IngestError::NoRecords { zone: zone.clone() },
        other => other,
    })?;
    let (load, temperature) = values.into_iter().map(|v| (v[0], v[1])).unzip();
    Ok((HourlySeries::new(zone, start, load, temperature)?, report))
}

/// Average the repeated autumn hour, interpolate the skipped spring hour.
pub fn dst_adjust(records: &[RawRecord]) -> Result<HourlySeries> {
    dst_adjust_with_report(records).map(|(s, _)| s)
}

/// Trailing `n_days` whole days ending at `last_in_sample` 23:00.
pub fn select_window(series: &HourlySeries, last_in_sample: NaiveDate, n_days: usize) -> Result<HourlySeries> {
    let end = series.day_offset(last_in_sample).ok_or(IngestError::OutOfRange {
        last: last_in_sample,
        start: series.start(),
        end: series.end_date(),
    })?;
    let available = end + 1;
    if available < n_days {
        return Err(IngestError::InsufficientHistory {
            available_hours: available * 24,
            required_hours: n_days * 24,
        });
    }
    Ok(series.days_slice(available - n_days, n_days))
}

/// The standard in-sample window of [`TRAINING_DAYS`] days.
pub fn select_training_window(series: &HourlySeries, last_in_sample: NaiveDate) -> Result<HourlySeries> {
    select_window(series, last_in_sample, TRAINING_DAYS)
}

/// Polar coordinates of load (in GW) with respect to the annual period.
///
/// The angle is `2πt/P` with `t` in hours since January 1 of the series'
/// first year; the radius is the load.
pub fn polar_transform(series: &HourlySeries) -> Vec<(f64, f64)> {
    let clock = series.annual_clock();
    let t0 = clock.hour_index(series.timestamp(0));
    series
        .load()
        .iter()
        .enumerate()
        .map(|(i, &mw)| polar_point(mw, (t0 + i as i64) as f64))
        .collect()
}

pub fn polar_point(load_mw: f64, t_hours: f64) -> (f64, f64) {
    let gw = load_mw / 1000.0;
    let angle = std::f64::consts::TAU * t_hours / ANNUAL_PERIOD_HOURS;
    (gw * angle.cos(), gw * angle.sin())
}

/// Write one or more series in the input CSV format.
pub fn write_csv<W: Write>(mut w: W, series: &[&HourlySeries]) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for s in series {
        for i in 0..s.len() {
            let t = s.temperature()[i];
            let temp = if t.is_nan() { String::new() } else { t.to_string() };
            writeln!(
                w,
                "{},{},{},{}",
                s.timestamp(i).format(TIMESTAMP_FORMAT),
                s.zone(),
                s.load()[i],
                temp
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dt(y: i32, m: u32, d: u32, h: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(y, m, d).unwrap().and_hms_opt(h, 0, 0).unwrap()
    }

    fn rec(ts: NaiveDateTime, load: f64) -> RawRecord {
        RawRecord { timestamp: ts, zone: "ME".into(), load_mw: load, drybulb: 40.0 }
    }

    fn day(y: i32, m: u32, d: u32) -> Vec<RawRecord> {
        (0..24).map(|h| rec(dt(y, m, d, h), 100.0 + h as f64)).collect()
    }

    fn to_csv(recs: &[RawRecord]) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in recs {
            s += &format!("{},{},{},{}\n", r.timestamp.format(TIMESTAMP_FORMAT), r.zone, r.load_mw, r.drybulb);
        }
        s
    }

    #[test]
    fn parses_two_days() {
        let mut recs = day(2016, 1, 4);
        recs.extend(day(2016, 1, 5));
        let parsed = parse_csv_str(&to_csv(&recs), None).unwrap();
        assert_eq!(parsed["ME"].len(), 48);
        assert_eq!(parsed["ME"], recs);
    }

    #[test]
    fn rejects_zero_load_and_shuffled_rows() {
        let mut recs = day(2016, 1, 4);
        recs[5].load_mw = 0.0;
        assert!(matches!(
            parse_csv_str(&to_csv(&recs), None),
            Err(IngestError::NonPositiveLoad { line: 7, .. })
        ));
        let mut recs = day(2016, 1, 4);
        recs.swap(3, 10);
        assert!(matches!(
            parse_csv_str(&to_csv(&recs), None),
            Err(IngestError::OutOfOrderTimestamps { .. })
        ));
    }

    #[test]
    fn rejects_triplicate_and_bad_header() {
        let mut recs = day(2016, 11, 6);
        recs.insert(1, recs[1].clone());
        recs.insert(1, recs[1].clone());
        assert!(matches!(
            parse_csv_str(&to_csv(&recs), None),
            Err(IngestError::DuplicateTimestamp { .. })
        ));
        assert!(matches!(parse_csv_str("", None), Err(IngestError::Empty)));
        assert!(matches!(parse_csv_str("a,b\n", None), Err(IngestError::BadHeader { .. })));
        let bad = format!("{CSV_HEADER}\n2016-01-01 00:30,ME,1,2\n");
        assert!(matches!(parse_csv_str(&bad, None), Err(IngestError::MalformedRow { line: 2, .. })));
    }

    #[test]
    fn foreign_zones_are_skipped() {
        let mut recs = day(2016, 1, 4);
        let mut other = day(2016, 1, 4);
        for r in &mut other {
            r.zone = "VT".into();
        }
        recs.extend(other);
        let parsed = parse_csv_str(&to_csv(&recs), Some(&["VT".to_string()])).unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed["VT"].len(), 24);
    }

    #[test]
    fn fall_back_hour_is_averaged() {
        let mut recs = day(2016, 11, 6);
        recs[1].load_mw = 10.0;
        let mut dup = recs[1].clone();
        dup.load_mw = 20.0;
        dup.drybulb = 50.0;
        recs.insert(2, dup);
        let (s, report) = dst_adjust_with_report(&recs).unwrap();
        assert_eq!(s.len(), 24);
        assert_eq!(s.load()[1], 15.0);
        assert_eq!(s.temperature()[1], 45.0);
        assert_eq!(report.averaged, vec![dt(2016, 11, 6, 1)]);
    }

    #[test]
    fn spring_forward_hour_is_interpolated() {
        let mut recs = day(2016, 3, 13);
        recs[1].load_mw = 3.0;
        recs[3].load_mw = 5.0;
        recs.remove(2);
        let (s, report) = dst_adjust_with_report(&recs).unwrap();
        assert_eq!(s.len(), 24);
        assert_eq!(s.load()[2], 4.0);
        assert_eq!(report.interpolated, vec![dt(2016, 3, 13, 2)]);
    }

    #[test]
    fn long_outage_is_unrepairable() {
        let mut recs = day(2016, 5, 2);
        recs.drain(5..8);
        assert!(matches!(
            dst_adjust(&recs),
            Err(IngestError::UnrepairableGap { missing: 3, .. })
        ));
    }

    #[test]
    fn partial_days_are_trimmed() {
        let mut recs = day(2016, 5, 2);
        recs.extend(day(2016, 5, 3));
        recs.extend(day(2016, 5, 4));
        let (s, report) = dst_adjust_with_report(&recs[5..60]).unwrap();
        assert_eq!(s.len(), 24);
        assert_eq!(s.start(), NaiveDate::from_ymd_opt(2016, 5, 3).unwrap());
        assert_eq!(report.trimmed_hours, 19 + 12);
        assert!(dst_adjust(&recs[5..30]).is_err());
    }

    #[test]
    fn window_selection_boundaries() {
        let start = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        let n = TRAINING_DAYS * 24;
        let s = HourlySeries::new("Z", start, vec![1.0; n], vec![0.0; n]).unwrap();
        let last = s.end_date();
        assert_eq!(select_training_window(&s, last).unwrap(), s);
        let short = s.days_slice(0, 1826);
        assert!(matches!(
            select_training_window(&short, short.end_date()),
            Err(IngestError::InsufficientHistory { available_hours: 43_824, .. })
        ));
    }

    #[test]
    fn polar_examples() {
        let (x, y) = polar_point(14_000.0, 0.0);
        assert_eq!((x, y), (14.0, 0.0));
        let (x, y) = polar_point(14_000.0, ANNUAL_PERIOD_HOURS / 4.0);
        assert!(x.abs() < 1e-9 && (y - 14.0).abs() < 1e-9);
    }
}
