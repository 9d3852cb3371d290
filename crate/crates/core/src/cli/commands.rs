use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use rayon::prelude::*;

use crate::calendar::DstRule;
use crate::features::BasisSpec;
use crate::ingest::{self, HourlySeries, IngestError, RepairReport};
use crate::model_io;
use crate::pipeline::{self, QuantileForecastGrid, ZoneModel};
use crate::quantreg::TAU_GRID;
use crate::scoring::{self, ScoreReport};

use super::{CliError, ModelKind, RunConfig};

const FORECAST_FILE: &str = "forecast.csv";
const REPORT_STEM: &str = "report";

fn header_comment(kind: &str, cfg: &RunConfig) -> String {
    format!("# qrload {} {kind} config={}\n", env!("CARGO_PKG_VERSION"), cfg.hash())
}

fn write_output(path: &Path, text: &str) -> Result<(), CliError> {
    model_io::write_atomic(path, text.as_bytes()).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

/// Parse and repair every selected zone, in config order (else file order).
fn load_series(cfg: &RunConfig) -> Result<Vec<(HourlySeries, RepairReport)>, CliError> {
    let path = cfg.require_data()?;
    let filter = (!cfg.zones.is_empty()).then_some(cfg.zones.as_slice());
    let mut by_zone = ingest::parse_csv_zones(path, filter)?;
    let order: Vec<String> = if cfg.zones.is_empty() { by_zone.keys().cloned().collect() } else { cfg.zones.clone() };
    if order.is_empty() {
        return Err(IngestError::NoRecords { zone: "(any)".into() }.into());
    }
    order
        .iter()
        .map(|zone| {
            let records = by_zone.remove(zone).ok_or_else(|| IngestError::NoRecords { zone: zone.clone() })?;
            Ok(ingest::dst_adjust_with_report(&records)?)
        })
        .collect()
}

fn training_window(series: &HourlySeries, last: NaiveDateTime, allow_short: bool) -> Result<HourlySeries, CliError> {
    match ingest::select_training_window(series, last.date()) {
        Ok(s) => Ok(s),
        Err(IngestError::InsufficientHistory { .. }) if allow_short => Ok(series.up_to(last.date())?),
        Err(e) => Err(e.into()),
    }
}

fn fit_all(series: &[HourlySeries], last: NaiveDateTime, allow_short: bool) -> Result<Vec<ZoneModel>, CliError> {
    let windows = series
        .iter()
        .map(|s| training_window(s, last, allow_short))
        .collect::<Result<Vec<_>, _>>()?;
    let spec = BasisSpec::default();
    let fits: Vec<_> = windows.par_iter().map(|w| pipeline::fit_zone(w, &spec)).collect();
    fits.into_iter().map(|f| f.map_err(CliError::from)).collect()
}

fn print_objectives(model: &ZoneModel) {
    println!("zone,hour,tau,objective");
    for (h, row) in model.qmodels.objective.iter().enumerate() {
        for (k, obj) in row.iter().enumerate() {
            println!("{},{h},{:.1},{obj:.9}", model.zone, TAU_GRID[k]);
        }
    }
}

fn save_models(models: &[ZoneModel], dir: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    for m in models {
        let path = dir.join(model_io::model_file_name(&m.zone));
        model_io::save(m, &path, &cfg.hash()).map_err(|e| CliError::Output(e.to_string()))?;
    }
    Ok(())
}

fn forecast_text(grids: &[QuantileForecastGrid], dst: DstRule, header: &str) -> String {
    let mut buf = header.as_bytes().to_vec();
    pipeline::write_forecast_csv(&mut buf, grids, dst).expect("writing to memory");
    String::from_utf8(buf).expect("utf-8 csv")
}

/// Grids as they read back from a written forecast file.
fn through_csv(grids: &[QuantileForecastGrid], dst: DstRule) -> Result<Vec<QuantileForecastGrid>, CliError> {
    Ok(pipeline::read_forecast_csv(forecast_text(grids, dst, "").as_bytes())?)
}

fn model_dir_zones(dir: &Path) -> Vec<String> {
    let mut zones: Vec<String> = fs::read_dir(dir)
        .into_iter()
        .flatten()
        .flatten()
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().to_string();
            name.strip_prefix("model_").and_then(|s| s.strip_suffix(".json")).map(String::from)
        })
        .collect();
    zones.sort();
    zones
}

fn load_models(dir: &Path, zones: &[String]) -> Result<Vec<ZoneModel>, CliError> {
    let zones = if zones.is_empty() { model_dir_zones(dir) } else { zones.to_vec() };
    if zones.is_empty() {
        return Err(CliError::MissingArtifact(format!("no model files in {}", dir.display())));
    }
    zones
        .iter()
        .map(|z| {
            let path = dir.join(model_io::model_file_name(z));
            if !path.exists() {
                return Err(CliError::MissingArtifact(format!("model file {} not found", path.display())));
            }
            model_io::load(&path).map_err(|e| CliError::MissingArtifact(e.to_string()))
        })
        .collect()
}

/// Score grids (as read from a forecast file) against realized load and the
/// benchmark built from history up to `last`.
fn score(
    grids: Vec<QuantileForecastGrid>,
    series: &[(HourlySeries, RepairReport)],
    last: NaiveDateTime,
    task: &str,
    dst: DstRule,
) -> Result<Vec<ScoreReport>, CliError> {
    let mut reports = Vec::with_capacity(grids.len());
    for mut grid in grids {
        let Some((s, _)) = series.iter().find(|(s, _)| s.zone() == grid.zone) else {
            return Err(IngestError::NoRecords { zone: grid.zone.clone() }.into());
        };
        grid.attach_realized(s)?;
        let model_score = scoring::score_grid(&grid)?;
        let history = s.up_to(last.date())?;
        let (start, end) = (grid.timestamps[0], *grid.timestamps.last().expect("nonempty"));
        let bench = scoring::seasonal_naive_benchmark(&history, start, end)?;
        let mut bench = through_csv(&[bench], dst)?.remove(0);
        bench.realized = grid.realized.clone();
        let benchmark_score = scoring::score_grid(&bench)?;
        reports.push(ScoreReport::new(&grid.zone, task, model_score, benchmark_score)?);
    }
    Ok(reports)
}

fn write_reports(dir: &Path, reports: &[ScoreReport], cfg: &RunConfig, stem: &str) -> Result<(), CliError> {
    let mut csv = header_comment("report", cfg).into_bytes();
    scoring::write_report_csv(&mut csv, reports).expect("writing to memory");
    write_output(&dir.join(format!("{stem}.csv")), &String::from_utf8(csv).expect("utf-8"))?;
    let text = format!("{}{}", header_comment("summary", cfg), scoring::summary(reports, scoring::BENCHMARK_LABEL));
    write_output(&dir.join(format!("{stem}.txt")), &text)?;
    print!("{}", scoring::summary(reports, scoring::BENCHMARK_LABEL));
    Ok(())
}

pub fn ingest(cfg: &RunConfig) -> Result<(), CliError> {
    let series = load_series(cfg)?;
    println!("zone,rows,days,first,last,averaged,interpolated,trimmed");
    for (s, r) in &series {
        println!(
            "{},{},{},{},{},{},{},{}",
            s.zone(),
            s.len(),
            s.days(),
            s.timestamp(0).format(ingest::TIMESTAMP_FORMAT),
            s.last_timestamp().format(ingest::TIMESTAMP_FORMAT),
            r.averaged.len(),
            r.interpolated.len(),
            r.trimmed_hours
        );
        for ts in &r.averaged {
            println!("# {} averaged {}", s.zone(), ts.format(ingest::TIMESTAMP_FORMAT));
        }
        for ts in &r.interpolated {
            println!("# {} interpolated {}", s.zone(), ts.format(ingest::TIMESTAMP_FORMAT));
        }
    }
    Ok(())
}

pub fn fit(cfg: &RunConfig) -> Result<(), CliError> {
    let last = cfg.require_last_in_sample()?;
    let series: Vec<HourlySeries> = load_series(cfg)?.into_iter().map(|(s, _)| s).collect();
    let models = fit_all(&series, last, cfg.allow_short_history)?;
    save_models(&models, &cfg.output, cfg)?;
    for m in &models {
        print_objectives(m);
    }
    Ok(())
}

pub fn forecast(cfg: &RunConfig) -> Result<(), CliError> {
    let (start, end) = cfg.require_window()?;
    let grids: Vec<QuantileForecastGrid> = match cfg.model {
        ModelKind::Qr => {
            let models = load_models(&cfg.output, &cfg.zones)?;
            let grids: Vec<_> = models.par_iter().map(|m| pipeline::forecast(m, start, end, cfg.rearrange)).collect();
            grids.into_iter().collect::<Result<_, _>>()?
        }
        ModelKind::Benchmark => {
            let last = cfg.require_last_in_sample()?;
            let series = load_series(cfg)?;
            series
                .iter()
                .map(|(s, _)| Ok(scoring::seasonal_naive_benchmark(&s.up_to(last.date())?, start, end)?))
                .collect::<Result<_, CliError>>()?
        }
    };
    let text = forecast_text(&grids, cfg.dst, &header_comment(&format!("forecast model={}", cfg.model), cfg));
    write_output(&cfg.output.join(FORECAST_FILE), &text)?;
    println!("zone,rows,crossed_rows");
    for g in &grids {
        println!("{},{},{}", g.zone, g.len(), g.crossings);
    }
    Ok(())
}

pub fn evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let last = cfg.require_last_in_sample()?;
    let path: PathBuf = cfg.output.join(FORECAST_FILE);
    let file = fs::File::open(&path)
        .map_err(|e| CliError::MissingArtifact(format!("forecast file {}: {e}", path.display())))?;
    let mut grids = pipeline::read_forecast_csv(BufReader::new(file))?;
    if !cfg.zones.is_empty() {
        grids.retain(|g| cfg.zones.contains(&g.zone));
    }
    let zones: Vec<String> = grids.iter().map(|g| g.zone.clone()).collect();
    let series = load_series(&RunConfig { zones, ..cfg.clone() })?;
    let reports = score(grids, &series, last, &cfg.task, cfg.dst)?;
    write_reports(&cfg.output, &reports, cfg, REPORT_STEM)
}

pub fn backtest(cfg: &RunConfig) -> Result<(), CliError> {
    let series = load_series(cfg)?;
    let plain: Vec<HourlySeries> = series.iter().map(|(s, _)| s.clone()).collect();
    let mut reports = Vec::new();
    for task in scoring::task_schedule() {
        let last = task.last_in_sample().and_hms_opt(23, 0, 0).expect("valid hour");
        let (start, end) = task.window();
        let dir = cfg.output.join(task.name());
        let models = fit_all(&plain, last, cfg.allow_short_history)?;
        save_models(&models, &dir, cfg)?;
        let grids: Vec<_> = models.par_iter().map(|m| pipeline::forecast(m, start, end, cfg.rearrange)).collect();
        let grids: Vec<QuantileForecastGrid> = grids.into_iter().collect::<Result<_, _>>()?;
        let text = forecast_text(&grids, cfg.dst, &header_comment("forecast model=qr", cfg));
        write_output(&dir.join(FORECAST_FILE), &text)?;
        let written = pipeline::read_forecast_csv(text.as_bytes())?;
        reports.extend(score(written, &series, last, &task.name(), cfg.dst)?);
    }
    write_reports(&cfg.output, &reports, cfg, "backtest_report")
}
