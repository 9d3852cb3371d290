//! Deterministic synthetic load series.
//!
//! Log-load is a sum of a slow drift, a weekly profile, an annual cycle,
//! an annual-by-weekday interaction, a mild temperature response and iid
//! Gaussian noise, so the seasonal model is correctly specified.

use std::f64::consts::PI;

use chrono::{Duration, NaiveDate, NaiveDateTime, Timelike};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::calendar::DstRule;
use crate::features::ANNUAL_PERIOD_HOURS;
use crate::ingest::{HourlySeries, RawRecord};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub zone: String,
    pub start: NaiveDate,
    pub days: usize,
    pub base_mw: f64,
    /// Log-load drift per year.
    pub drift_per_year: f64,
    pub weekly_amplitude: f64,
    pub annual_amplitude: f64,
    pub interaction_amplitude: f64,
    /// Log-load change per °F away from 65 °F.
    pub temperature_effect: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            zone: "SYN".into(),
            start: NaiveDate::from_ymd_opt(2006, 1, 1).unwrap(),
            days: 365,
            base_mw: 1500.0,
            drift_per_year: 0.01,
            weekly_amplitude: 0.15,
            annual_amplitude: 0.1,
            interaction_amplitude: 0.03,
            temperature_effect: 0.0,
            noise_sd: 0.05,
            seed: 7,
        }
    }
}

/// Noise-free log-load offset of hour `t` (hours since `start`) on weekday `dow`.
fn seasonal(spec: &SyntheticSpec, t: f64, hour: usize, dow: usize) -> f64 {
    let daily = (2.0 * PI * (hour as f64 - 5.0) / 24.0).sin() + 0.4 * (4.0 * PI * hour as f64 / 24.0).cos();
    let weekend = if dow >= 5 { -0.6 } else { 0.0 };
    let weekly = spec.weekly_amplitude * (0.8 * daily + weekend);
    let w = 2.0 * PI * t / ANNUAL_PERIOD_HOURS;
    let annual = spec.annual_amplitude * ((2.0 * w).cos() + 0.5 * w.sin());
    let inter = spec.interaction_amplitude * (dow as f64 - 3.0) / 3.0 * w.cos();
    let drift = spec.drift_per_year * t / ANNUAL_PERIOD_HOURS;
    weekly + annual + inter + drift
}

fn temperature(t: f64, hour: usize) -> f64 {
    let w = 2.0 * PI * t / ANNUAL_PERIOD_HOURS;
    55.0 - 22.0 * w.cos() + 8.0 * (2.0 * PI * (hour as f64 - 9.0) / 24.0).sin()
}

/// Generate a clock-change-free hourly series.
pub fn generate(spec: &SyntheticSpec) -> HourlySeries {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sd.max(0.0)).expect("finite sd");
    let temp_noise = Normal::new(0.0, 3.0).expect("finite sd");
    let n = spec.days * 24;
    let mut load = Vec::with_capacity(n);
    let mut temp = Vec::with_capacity(n);
    let start_dow = chrono::Datelike::weekday(&spec.start).num_days_from_monday() as usize;
    for i in 0..n {
        let hour = i % 24;
        let dow = (start_dow + i / 24) % 7;
        let t = i as f64;
        let tf = temperature(t, hour) + temp_noise.sample(&mut rng);
        let e = if spec.noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        let log = spec.base_mw.ln()
            + seasonal(spec, t, hour, dow)
            + spec.temperature_effect * (tf - 65.0).abs()
            + e;
        load.push(log.exp());
        temp.push(tf);
    }
    HourlySeries::new(spec.zone.clone(), spec.start, load, temp).expect("valid synthetic series")
}

/// Render a series as civil-time records: the skipped spring hour is
/// dropped and the repeated fall hour appears twice, the second copy
/// scaled by `1 + repeat_jitter`.
pub fn to_civil_records(series: &HourlySeries, rule: DstRule, repeat_jitter: f64) -> Vec<RawRecord> {
    let mut out = Vec::with_capacity(series.len());
    for i in 0..series.len() {
        let ts: NaiveDateTime = series.timestamp(i);
        let rec = |ts: NaiveDateTime, scale: f64| RawRecord {
            timestamp: ts,
            zone: series.zone().to_string(),
            load_mw: series.load()[i] * scale,
            drybulb: series.temperature()[i],
        };
        if let Some((spring, fall)) = rule.transitions(chrono::Datelike::year(&ts)) {
            if ts == spring {
                continue;
            }
            out.push(rec(ts, 1.0));
            if ts == fall {
                out.push(rec(ts, 1.0 + repeat_jitter));
            }
        } else {
            out.push(rec(ts, 1.0));
        }
    }
    debug_assert!(out.iter().all(|r| r.timestamp.minute() == 0));
    out
}

/// CSV text of `records` in the ingest format.
pub fn records_to_csv(records: &[RawRecord]) -> String {
    let mut s = String::with_capacity(records.len() * 40);
    s.push_str(crate::ingest::CSV_HEADER);
    s.push('\n');
    for r in records {
        let temp = if r.drybulb.is_finite() { format!("{:.2}", r.drybulb) } else { String::new() };
        s.push_str(&format!(
            "{},{},{:.4},{}\n",
            r.timestamp.format(crate::ingest::TIMESTAMP_FORMAT),
            r.zone,
            r.load_mw,
            temp
        ));
    }
    s
}

/// Timestamp `hours` after midnight of `start`.
pub fn hour_after(start: NaiveDate, hours: i64) -> NaiveDateTime {
    start.and_hms_opt(0, 0, 0).unwrap() + Duration::hours(hours)
}
