//! Run configuration: a flat `key = value` file with `#` comments, with
//! every key overridable on the command line.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use sha2::{Digest, Sha256};

use crate::calendar::DstRule;

use super::CliError;

/// Which forecaster produces the forecast CSV.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ModelKind {
    #[default]
    Qr,
    Benchmark,
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "qr" => Ok(Self::Qr),
            "benchmark" => Ok(Self::Benchmark),
            other => Err(format!("unknown model `{other}` (expected qr or benchmark)")),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Qr => "qr",
            Self::Benchmark => "benchmark",
        })
    }
}

/// Keys accepted in config files and as `--key` flags.
pub const KEYS: &[&str] = &[
    "data",
    "zones",
    "last_in_sample",
    "forecast_start",
    "forecast_end",
    "rearrange",
    "output",
    "dst",
    "allow_short_history",
    "model",
    "task",
    "jobs",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    /// Zones to process; empty means every zone in the data or output.
    pub zones: Vec<String>,
    pub last_in_sample: Option<NaiveDateTime>,
    pub forecast_start: Option<NaiveDateTime>,
    pub forecast_end: Option<NaiveDateTime>,
    pub rearrange: bool,
    pub output: PathBuf,
    pub dst: DstRule,
    pub allow_short_history: bool,
    pub model: ModelKind,
    pub task: String,
    pub jobs: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            zones: Vec::new(),
            last_in_sample: None,
            forecast_start: None,
            forecast_end: None,
            rearrange: true,
            output: PathBuf::from("qrload-out"),
            dst: DstRule::UnitedStates,
            allow_short_history: false,
            model: ModelKind::Qr,
            task: "custom".into(),
            jobs: None,
        }
    }
}

/// Parse `key = value` lines; blank lines and `#` comments are ignored.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("config line {}: expected `key = value`", n + 1)))?;
        let key = k.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(CliError::Config(format!("config line {}: unknown key `{}`", n + 1, k.trim())));
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

fn parse_bool(key: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::Config(format!("{key}: expected true or false, found `{v}`"))),
    }
}

/// Accept `YYYY-MM-DD HH:MM` or a bare date, which takes `default_hour`.
pub fn parse_datetime(key: &str, v: &str, default_hour: u32) -> Result<NaiveDateTime, CliError> {
    let bad = || CliError::Config(format!("{key}: expected `YYYY-MM-DD` or `YYYY-MM-DD HH:MM`, found `{v}`"));
    let v = v.trim().replace('T', " ");
    if let Ok(ts) = NaiveDateTime::parse_from_str(&v, "%Y-%m-%d %H:%M") {
        return Ok(ts);
    }
    let date = NaiveDate::parse_from_str(&v, "%Y-%m-%d").map_err(|_| bad())?;
    Ok(date.and_time(NaiveTime::from_hms_opt(default_hour, 0, 0).expect("valid hour")))
}

impl RunConfig {
    /// Apply parsed pairs on top of `self`.
    pub fn apply(&mut self, pairs: &BTreeMap<String, String>) -> Result<(), CliError> {
        for (key, v) in pairs {
            match key.as_str() {
                "data" => self.data = Some(PathBuf::from(v)),
                "zones" => {
                    self.zones = v.split(',').map(str::trim).filter(|z| !z.is_empty()).map(String::from).collect()
                }
                "last_in_sample" => self.last_in_sample = Some(parse_datetime(key, v, 23)?),
                "forecast_start" => self.forecast_start = Some(parse_datetime(key, v, 0)?),
                "forecast_end" => self.forecast_end = Some(parse_datetime(key, v, 23)?),
                "rearrange" => self.rearrange = parse_bool(key, v)?,
                "output" => self.output = PathBuf::from(v),
                "dst" => self.dst = v.parse().map_err(|e: String| CliError::Config(format!("dst: {e}")))?,
                "allow_short_history" => self.allow_short_history = parse_bool(key, v)?,
                "model" => self.model = v.parse().map_err(|e: String| CliError::Config(format!("model: {e}")))?,
                "task" => self.task = v.clone(),
                "jobs" => {
                    let n: usize = v.parse().map_err(|_| CliError::Config(format!("jobs: expected a count, found `{v}`")))?;
                    self.jobs = (n > 0).then_some(n);
                }
                other => return Err(CliError::Config(format!("unknown key `{other}`"))),
            }
        }
        Ok(())
    }

    /// Canonical text of every setting that affects outputs.
    pub fn canonical(&self) -> String {
        let dt = |t: &Option<NaiveDateTime>| t.map(|t| t.format("%Y-%m-%d %H:%M").to_string()).unwrap_or_default();
        format!(
            "data={}\nzones={}\nlast_in_sample={}\nforecast_start={}\nforecast_end={}\nrearrange={}\ndst={}\nallow_short_history={}\nmodel={}\ntask={}\n",
            self.data.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            self.zones.join(","),
            dt(&self.last_in_sample),
            dt(&self.forecast_start),
            dt(&self.forecast_end),
            self.rearrange,
            self.dst,
            self.allow_short_history,
            self.model,
            self.task,
        )
    }

    /// Short digest of [`RunConfig::canonical`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))[..16].to_string()
    }

    pub fn require_data(&self) -> Result<&PathBuf, CliError> {
        self.data.as_ref().ok_or_else(|| CliError::Config("missing required setting `data`".into()))
    }

    /// Last in-sample hour; must close a day.
    pub fn require_last_in_sample(&self) -> Result<NaiveDateTime, CliError> {
        let t = self.last_in_sample.ok_or_else(|| CliError::Config("missing required setting `last_in_sample`".into()))?;
        if t.hour() != 23 || t.minute() != 0 {
            return Err(CliError::Config(format!("last_in_sample {t} must be the 23:00 hour of a day")));
        }
        Ok(t)
    }

    pub fn require_window(&self) -> Result<(NaiveDateTime, NaiveDateTime), CliError> {
        let start = self.forecast_start.ok_or_else(|| CliError::Config("missing required setting `forecast_start`".into()))?;
        let end = self.forecast_end.ok_or_else(|| CliError::Config("missing required setting `forecast_end`".into()))?;
        if end < start {
            return Err(CliError::Config(format!("forecast_end {end} precedes forecast_start {start}")));
        }
        if let Some(last) = self.last_in_sample {
            if start <= last {
                return Err(CliError::Config(format!("forecast_start {start} must be after last_in_sample {last}")));
            }
        }
        Ok((start, end))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let pairs = parse_pairs("# run\ndata = x.csv  # file\nzones = CT, ME\nrearrange=false\n\nlast_in_sample = 2016-11-30\n").unwrap();
        let mut cfg = RunConfig::default();
        cfg.apply(&pairs).unwrap();
        assert_eq!(cfg.zones, vec!["CT", "ME"]);
        assert!(!cfg.rearrange);
        assert_eq!(cfg.last_in_sample.unwrap().to_string(), "2016-11-30 23:00:00");
        let mut flags = BTreeMap::new();
        flags.insert("zones".to_string(), "NH".to_string());
        cfg.apply(&flags).unwrap();
        assert_eq!(cfg.zones, vec!["NH"]);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(parse_pairs("colour = red"), Err(CliError::Config(_))));
        assert!(matches!(parse_pairs("no equals sign"), Err(CliError::Config(_))));
        let mut cfg = RunConfig::default();
        let pairs = parse_pairs("rearrange = maybe").unwrap();
        assert!(cfg.apply(&pairs).is_err());
    }

    #[test]
    fn hash_ignores_jobs() {
        let a = RunConfig::default();
        let b = RunConfig { jobs: Some(3), ..RunConfig::default() };
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig { rearrange: false, ..RunConfig::default() };
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn window_must_follow_training_end() {
        let cfg = RunConfig {
            last_in_sample: Some(parse_datetime("l", "2016-11-30", 23).unwrap()),
            forecast_start: Some(parse_datetime("s", "2016-11-30 12:00", 0).unwrap()),
            forecast_end: Some(parse_datetime("e", "2016-12-31", 23).unwrap()),
            ..RunConfig::default()
        };
        assert!(cfg.require_window().is_err());
    }
}
