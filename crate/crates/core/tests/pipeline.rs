mod support;

use std::sync::OnceLock;

use chrono::Duration;
use qrload::calendar::DstRule;
use qrload::features::BasisSpec;
use qrload::ingest::HourlySeries;
use qrload::model_io;
use qrload::pipeline::{self, PipelineError, ZoneModel};
use qrload::quantreg::{qr_predict, TAU_GRID};
use qrload::synth::{self, SyntheticSpec};
use support::{at, date, rel_close, synthetic};

/// 2013-06-01 ..= 2015-11-30, fitted on everything.
fn shared() -> &'static (HourlySeries, ZoneModel) {
    static CELL: OnceLock<(HourlySeries, ZoneModel)> = OnceLock::new();
    CELL.get_or_init(|| {
        let s = synthetic("A", date(2013, 6, 1), 913, 11);
        assert_eq!(s.last_timestamp(), at(2015, 11, 30, 23));
        let m = pipeline::fit_zone(&s, &BasisSpec::default()).unwrap();
        (s, m)
    })
}

#[test]
fn task_one_geometry() {
    let (_, m) = shared();
    assert_eq!(m.t_last, at(2015, 11, 30, 23));
    let g = pipeline::forecast(m, at(2016, 1, 1, 0), at(2016, 1, 31, 23), true).unwrap();
    assert_eq!(g.len(), 744);
    assert_eq!(g.timestamps[0], at(2016, 1, 1, 0));
    assert_eq!((g.timestamps[0] - m.t_last).num_hours(), 745);
    assert!(g.q.iter().flatten().all(|v| *v > 0.0 && v.is_finite()));
    assert!(g.q.iter().all(|r| r.windows(2).all(|w| w[0] <= w[1])));

    match pipeline::forecast(m, at(2015, 11, 30, 23), at(2015, 12, 2, 0), true) {
        Err(PipelineError::WindowBeforeTrainingEnd { t_last, .. }) => assert_eq!(t_last, m.t_last),
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        pipeline::forecast(m, at(2016, 1, 2, 0), at(2016, 1, 1, 0), true),
        Err(PipelineError::InvalidWindow { .. })
    ));
}

#[test]
fn forecast_sums_remainder_and_trend_quantiles() {
    let (_, m) = shared();
    let ts = pipeline::hourly_range(at(2015, 12, 1, 0), at(2015, 12, 3, 23)).unwrap();
    let log = pipeline::forecast_log(m, &ts).unwrap();
    let horizons: Vec<usize> = (1..=ts.len()).collect();
    let band = qrload::trend::trend_quantiles(&m.trend, &horizons).unwrap();
    let clock = m.clock();
    for (i, t) in ts.iter().enumerate() {
        let day = clock.day_index(t.date());
        let hour = i % 24;
        for (k, &tau) in TAU_GRID.iter().enumerate() {
            let y = qr_predict(&m.qmodels, &clock, &[day], hour, tau, &m.spec).unwrap()[0];
            assert_eq!(log[i][k], y + band.values[i][k]);
        }
    }
    let raw = pipeline::forecast(m, ts[0], *ts.last().unwrap(), false).unwrap();
    assert_eq!(raw.crossings, pipeline::count_crossings(&log));
    for (row, lrow) in raw.q.iter().zip(&log) {
        for (v, l) in row.iter().zip(lrow) {
            assert_eq!(*v, l.exp());
        }
    }
}

#[test]
fn constant_trend_reduces_to_remainder_forecast() {
    let (_, m) = shared();
    let mut flat = m.clone();
    flat.trend.last_trend = 0.25;
    flat.trend.trend_path.iter_mut().for_each(|v| *v = 0.25);
    let start = at(2015, 12, 10, 0);
    let g = pipeline::forecast(&flat, start, start + Duration::hours(47), false).unwrap();
    let clock = flat.clock();
    for (i, t) in g.timestamps.iter().enumerate() {
        for (k, &tau) in TAU_GRID.iter().enumerate() {
            let y = qr_predict(&flat.qmodels, &clock, &[clock.day_index(t.date())], i % 24, tau, &flat.spec).unwrap()[0];
            assert!(rel_close(g.q[i][k], (y + 0.25).exp(), 1e-14));
        }
    }
}

#[test]
fn remainder_identity() {
    let (s, m) = shared();
    let y = pipeline::remainder(s, &m.trend);
    assert_eq!(y.len(), s.len());
    let fitted = m.trend.fitted(s.log_load());
    let k = m.trend.window;
    let n = (s.len() - k) as f64;
    let mean_y = y[k..].iter().sum::<f64>() / n;
    let mean_parts =
        (k..s.len()).map(|t| fitted[t] + m.trend.residuals[t] - m.trend.trend_path[t]).sum::<f64>() / n;
    assert!((mean_y - mean_parts).abs() < 1e-9);
    for t in 0..s.len() {
        assert_eq!(y[t], s.log_load()[t] - m.trend.trend_path[t]);
    }
}

#[test]
fn forecasts_are_deterministic() {
    let (s, m) = shared();
    let a = pipeline::forecast(m, at(2016, 1, 1, 0), at(2016, 1, 31, 23), true).unwrap();
    let b = pipeline::forecast(m, at(2016, 1, 1, 0), at(2016, 1, 31, 23), true).unwrap();
    assert_eq!(a, b);
    let refit = pipeline::fit_zone(&s.days_slice(0, s.days()), &BasisSpec::default()).unwrap();
    assert_eq!(&refit, m);
}

#[test]
fn constant_load_forecasts_its_level() {
    let spec = SyntheticSpec {
        zone: "C".into(),
        start: date(2012, 1, 1),
        days: 420,
        drift_per_year: 0.0,
        weekly_amplitude: 0.0,
        annual_amplitude: 0.0,
        interaction_amplitude: 0.0,
        noise_sd: 0.0,
        ..Default::default()
    };
    let s = synth::generate(&spec);
    let m = pipeline::fit_zone_with_window(&s, &BasisSpec::default(), 24 * 28).unwrap();
    assert!(m.trend.trend_path.iter().all(|v| v.abs() < 1e-9));
    let start = s.last_timestamp() + Duration::hours(1);
    let g = pipeline::forecast(&m, start, start + Duration::hours(24 * 14 - 1), true).unwrap();
    for v in g.q.iter().flatten() {
        assert!(rel_close(*v, spec.base_mw, 1e-6), "{v}");
    }
}

#[test]
fn scaling_load_scales_forecasts() {
    let s = synthetic("S", date(2012, 3, 1), 420, 5);
    let c = 3.7f64;
    let scaled = HourlySeries::new("S", s.start(), s.load().iter().map(|v| v * c).collect(), s.temperature().to_vec())
        .unwrap();
    let window = 24 * 28;
    let a = pipeline::fit_zone_with_window(&s, &BasisSpec::default(), window).unwrap();
    let b = pipeline::fit_zone_with_window(&scaled, &BasisSpec::default(), window).unwrap();
    let start = s.last_timestamp() + Duration::hours(1);
    let end = start + Duration::hours(24 * 21 - 1);
    let ga = pipeline::forecast(&a, start, end, true).unwrap();
    let gb = pipeline::forecast(&b, start, end, true).unwrap();
    for (ra, rb) in ga.q.iter().zip(&gb.q) {
        for (u, v) in ra.iter().zip(rb) {
            assert!(rel_close(u * c, *v, 1e-8), "{} vs {v}", u * c);
        }
    }
}

#[test]
fn zones_are_fitted_independently() {
    let series: Vec<HourlySeries> =
        (0..10).map(|i| synthetic(&format!("Z{i}"), date(2012, 1, 1), 370, 100 + i)).collect();
    let spec = BasisSpec::default();
    let batch: Vec<ZoneModel> = pipeline::fit_zones(&series, &spec).into_iter().map(Result::unwrap).collect();
    assert_eq!(batch.len(), 10);
    for (s, m) in series.iter().zip(&batch) {
        assert_eq!(m.zone, s.zone());
    }
    for i in [0, 9] {
        assert_eq!(pipeline::fit_zone(&series[i], &spec).unwrap(), batch[i]);
    }
    // Replacing one zone leaves the others untouched.
    let mut changed = series.clone();
    changed[4] = synthetic("Z4", date(2012, 1, 1), 370, 999);
    let again = pipeline::fit_zones(&changed[3..6], &spec);
    assert_eq!(again[0].as_ref().unwrap(), &batch[3]);
    assert_ne!(again[1].as_ref().unwrap(), &batch[4]);
    assert_eq!(again[2].as_ref().unwrap(), &batch[5]);
}

#[test]
fn model_files_round_trip() {
    let (_, m) = shared();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(model_io::model_file_name(&m.zone));
    model_io::save(m, &path, "abc").unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with(&format!("# qrload {} model format=1", env!("CARGO_PKG_VERSION"))));
    assert!(text.lines().next().unwrap().ends_with("config=abc"));
    let back = model_io::load(&path).unwrap();
    let mut expected = m.clone();
    expected.trend.residuals.clear();
    assert_eq!(back, expected);
    let start = at(2016, 1, 1, 0);
    let end = at(2016, 1, 31, 23);
    assert_eq!(pipeline::forecast(&back, start, end, true).unwrap(), pipeline::forecast(m, start, end, true).unwrap());
    assert_eq!(model_io::encode(&back, "abc"), text);

    let broken = text.replace("\"coef\":[[[", "\"coef\":[[[1e999,");
    assert!(matches!(model_io::decode(&broken, &path), Err(model_io::ModelIoError::Invalid { .. })));
    assert!(matches!(model_io::load(&dir.path().join("missing.json")), Err(model_io::ModelIoError::Io { .. })));
}

#[test]
fn forecast_csv_round_trips_through_civil_time() {
    let (s, m) = shared();
    // March 13 2016 skips 02:00; November 6 2016 repeats 01:00.
    let g = pipeline::forecast(m, at(2015, 12, 1, 0), at(2016, 11, 10, 23), true).unwrap();
    let mut buf = Vec::new();
    pipeline::write_forecast_csv(&mut buf, std::slice::from_ref(&g), DstRule::UnitedStates).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next(), Some(pipeline::FORECAST_HEADER));
    assert_eq!(text.lines().count(), 1 + g.len());
    assert!(!text.contains("2016-03-13 02:00"));
    assert_eq!(text.matches("A,2016-11-06 01:00,").count(), 2);

    let back = pipeline::read_forecast_csv(text.as_bytes()).unwrap();
    assert_eq!(back.len(), 1);
    assert_eq!(back[0].timestamps, g.timestamps);
    let skipped = g.timestamps.iter().position(|t| *t == at(2016, 3, 13, 2)).unwrap();
    for (i, (ra, rb)) in g.q.iter().zip(&back[0].q).enumerate() {
        for (k, (u, v)) in ra.iter().zip(rb).enumerate() {
            if i == skipped {
                let mid = (g.q[i - 1][k] + g.q[i + 1][k]) / 2.0;
                assert!((v - mid).abs() <= 0.005 + 1e-9);
            } else {
                assert!((u - v).abs() <= 0.005 + 1e-9, "row {i}: {u} vs {v}");
            }
        }
    }
    let mut truth = back[0].clone();
    assert!(matches!(truth.attach_realized(s), Err(PipelineError::MissingRealized { .. })));
}
