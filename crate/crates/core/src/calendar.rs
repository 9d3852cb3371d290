//! Calendar helpers: the annual phase clock used by the seasonal bases and
//! the daylight-saving rule used to map the 24-hour modelling calendar back
//! to civil timestamps.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, NaiveTime, Weekday};
use serde::{Deserialize, Serialize};

/// Hours since the start of the annual phase epoch (January 1, 00:00).
///
/// All seasonal regressors are functions of this hour index, so a model and
/// its forecasts must share the same clock.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnualClock {
    epoch: NaiveDate,
}

impl AnnualClock {
    pub fn new(epoch: NaiveDate) -> Self {
        Self { epoch }
    }

    /// Clock anchored at January 1 of the year containing `first_day`.
    pub fn for_first_day(first_day: NaiveDate) -> Self {
        Self::new(NaiveDate::from_ymd_opt(first_day.year(), 1, 1).expect("January 1 exists"))
    }

    pub fn epoch(&self) -> NaiveDate {
        self.epoch
    }

    /// Day index relative to the epoch (0 on the epoch itself).
    pub fn day_index(&self, date: NaiveDate) -> i64 {
        (date - self.epoch).num_days()
    }

    pub fn date_of(&self, day: i64) -> NaiveDate {
        self.epoch + Duration::days(day)
    }

    /// Hour index `24 * day + hour` in the clock-change-adjusted calendar.
    pub fn hour_index(&self, ts: NaiveDateTime) -> i64 {
        (ts - self.epoch.and_time(NaiveTime::MIN)).num_hours()
    }

    /// Day of week for a day index, 0 = Monday.
    pub fn day_of_week(&self, day: i64) -> usize {
        let base = self.epoch.weekday().num_days_from_monday() as i64;
        (base + day).rem_euclid(7) as usize
    }
}

/// Daylight-saving convention of the civil timestamps in input and output files.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum DstRule {
    /// United States rules (second Sunday of March / first Sunday of November
    /// from 2007, first Sunday of April / last Sunday of October before).
    #[default]
    UnitedStates,
    /// Civil time never shifts.
    None,
}

impl FromStr for DstRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "us" | "united-states" | "unitedstates" => Ok(Self::UnitedStates),
            "none" | "off" => Ok(Self::None),
            other => Err(format!("unknown dst rule `{other}` (expected `us` or `none`)")),
        }
    }
}

impl fmt::Display for DstRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UnitedStates => f.write_str("us"),
            Self::None => f.write_str("none"),
        }
    }
}

fn nth_weekday(year: i32, month: u32, weekday: Weekday, n: u8) -> NaiveDate {
    NaiveDate::from_weekday_of_month_opt(year, month, weekday, n).expect("valid nth weekday")
}

fn last_weekday(year: i32, month: u32, weekday: Weekday) -> NaiveDate {
    let mut d = NaiveDate::from_ymd_opt(year, month + 1, 1).expect("valid month") - Duration::days(1);
    while d.weekday() != weekday {
        d -= Duration::days(1);
    }
    d
}

impl DstRule {
    /// The skipped spring hour (02:00) and the repeated autumn hour (01:00).
    pub fn transitions(&self, year: i32) -> Option<(NaiveDateTime, NaiveDateTime)> {
        match self {
            Self::None => None,
            Self::UnitedStates => {
                let (spring, fall) = if year >= 2007 {
                    (nth_weekday(year, 3, Weekday::Sun, 2), nth_weekday(year, 11, Weekday::Sun, 1))
                } else {
                    (nth_weekday(year, 4, Weekday::Sun, 1), last_weekday(year, 10, Weekday::Sun))
                };
                Some((
                    spring.and_hms_opt(2, 0, 0).expect("valid time"),
                    fall.and_hms_opt(1, 0, 0).expect("valid time"),
                ))
            }
        }
    }

    /// Map adjusted-calendar hours to civil hours.
    ///
    /// Returns `(civil timestamp, index into the input)` pairs: the skipped
    /// spring hour is dropped and the repeated autumn hour is emitted twice.
    pub fn to_civil(&self, hours: &[NaiveDateTime]) -> Vec<(NaiveDateTime, usize)> {
        let mut out = Vec::with_capacity(hours.len() + 2);
        let mut cached_year = None;
        let mut transitions = None;
        for (i, &ts) in hours.iter().enumerate() {
            if cached_year != Some(ts.year()) {
                cached_year = Some(ts.year());
                transitions = self.transitions(ts.year());
            }
            match transitions {
                Some((spring, _)) if ts == spring => {}
                Some((_, fall)) if ts == fall => {
                    out.push((ts, i));
                    out.push((ts, i));
                }
                _ => out.push((ts, i)),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dt(y: i32, m: u32, d: u32, h: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(y, m, d).unwrap().and_hms_opt(h, 0, 0).unwrap()
    }

    #[test]
    fn us_transitions_match_known_dates() {
        let (s, f) = DstRule::UnitedStates.transitions(2016).unwrap();
        assert_eq!(s, dt(2016, 3, 13, 2));
        assert_eq!(f, dt(2016, 11, 6, 1));
        let (s, f) = DstRule::UnitedStates.transitions(2005).unwrap();
        assert_eq!(s, dt(2005, 4, 3, 2));
        assert_eq!(f, dt(2005, 10, 30, 1));
    }

    #[test]
    fn civil_mapping_drops_and_repeats() {
        let spring: Vec<_> = (0..24).map(|h| dt(2017, 3, 12, h)).collect();
        let civil = DstRule::UnitedStates.to_civil(&spring);
        assert_eq!(civil.len(), 23);
        assert!(civil.iter().all(|(ts, _)| *ts != dt(2017, 3, 12, 2)));

        let fall: Vec<_> = (0..24).map(|h| dt(2017, 11, 5, h)).collect();
        let civil = DstRule::UnitedStates.to_civil(&fall);
        assert_eq!(civil.len(), 25);
        assert_eq!(civil[1], (dt(2017, 11, 5, 1), 1));
        assert_eq!(civil[2], (dt(2017, 11, 5, 1), 1));

        assert_eq!(DstRule::None.to_civil(&fall).len(), 24);
    }

    #[test]
    fn clock_indices() {
        let clock = AnnualClock::for_first_day(NaiveDate::from_ymd_opt(2006, 9, 15).unwrap());
        assert_eq!(clock.epoch(), NaiveDate::from_ymd_opt(2006, 1, 1).unwrap());
        // 2006-01-01 was a Sunday.
        assert_eq!(clock.day_of_week(0), 6);
        assert_eq!(clock.day_of_week(1), 0);
        assert_eq!(clock.hour_index(dt(2006, 1, 2, 5)), 29);
        assert_eq!(clock.day_index(NaiveDate::from_ymd_opt(2005, 12, 31).unwrap()), -1);
        assert_eq!(clock.day_of_week(-1), 5);
    }
}
