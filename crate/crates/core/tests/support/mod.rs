//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use nalgebra::{DMatrix, DVector};
use qrload::ingest::HourlySeries;
use qrload::synth::{self, SyntheticSpec};

/// Two-branch pinball: `tau (y - q)` when `y >= q`, `(1 - tau)(q - y)` otherwise.
pub fn pinball_two_branch(y: f64, q: f64, tau: f64) -> f64 {
    if y >= q {
        tau * (y - q)
    } else {
        (1.0 - tau) * (q - y)
    }
}

/// Exact quantile regression by a dense-tableau primal simplex.
///
/// minimize tau * sum(u+) + (1 - tau) * sum(u-)
/// subject to X b+ - X b- + u+ - u- = y, all variables >= 0.
/// Bland's rule guards against cycling.
pub struct SimplexSolution {
    pub beta: Vec<f64>,
    pub objective: f64,
}

pub fn lp_quantile_regression(x: &[Vec<f64>], y: &[f64], tau: f64) -> SimplexSolution {
    let n = y.len();
    let p = x[0].len();
    let nv = 2 * p + 2 * n;
    let width = nv + 1;
    let mut t = vec![0.0; n * width];
    let mut basis = vec![0usize; n];
    for i in 0..n {
        let sign = if y[i] < 0.0 { -1.0 } else { 1.0 };
        let row = &mut t[i * width..(i + 1) * width];
        for j in 0..p {
            row[j] = sign * x[i][j];
            row[p + j] = -sign * x[i][j];
        }
        row[2 * p + i] = sign;
        row[2 * p + n + i] = -sign;
        row[nv] = sign * y[i];
        basis[i] = if sign > 0.0 { 2 * p + i } else { 2 * p + n + i };
    }
    let cost = |j: usize| -> f64 {
        if j < 2 * p {
            0.0
        } else if j < 2 * p + n {
            tau
        } else {
            1.0 - tau
        }
    };
    let eps = 1e-10;
    for _iter in 0..200_000 {
        // Reduced costs.
        let mut entering = None;
        for j in 0..nv {
            if basis.contains(&j) {
                continue;
            }
            let mut r = cost(j);
            for i in 0..n {
                r -= cost(basis[i]) * t[i * width + j];
            }
            if r < -eps {
                entering = Some(j);
                break;
            }
        }
        let Some(e) = entering else { break };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..n {
            let a = t[i * width + e];
            if a > eps {
                let ratio = t[i * width + nv] / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((li, lr)) => {
                        if ratio < lr - 1e-12 || ((ratio - lr).abs() <= 1e-12 && basis[i] < basis[li]) {
                            Some((i, ratio))
                        } else {
                            Some((li, lr))
                        }
                    }
                };
            }
        }
        let (r, _) = leave.expect("objective is bounded below");
        let piv = t[r * width + e];
        for j in 0..width {
            t[r * width + j] /= piv;
        }
        for i in 0..n {
            if i == r {
                continue;
            }
            let f = t[i * width + e];
            if f != 0.0 {
                for j in 0..width {
                    t[i * width + j] -= f * t[r * width + j];
                }
            }
        }
        basis[r] = e;
    }
    let mut vars = vec![0.0; nv];
    for i in 0..n {
        vars[basis[i]] = t[i * width + nv];
    }
    let beta: Vec<f64> = (0..p).map(|j| vars[j] - vars[p + j]).collect();
    let objective = (0..n)
        .map(|i| {
            let q: f64 = x[i].iter().zip(&beta).map(|(a, b)| a * b).sum();
            pinball_two_branch(y[i], q, tau)
        })
        .sum();
    SimplexSolution { beta, objective }
}

/// Cox-de Boor recursion on arbitrary knots.
pub fn de_boor(knots: &[f64], i: usize, k: usize, x: f64) -> f64 {
    if k == 0 {
        return if knots[i] <= x && x < knots[i + 1] { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let d1 = knots[i + k] - knots[i];
    if d1 > 0.0 {
        v += (x - knots[i]) / d1 * de_boor(knots, i, k - 1, x);
    }
    let d2 = knots[i + k + 1] - knots[i + 1];
    if d2 > 0.0 {
        v += (knots[i + k + 1] - x) / d2 * de_boor(knots, i + 1, k - 1, x);
    }
    v
}

/// Periodic cubic B-spline `j` of `m` over period `period` at hour `t`.
pub fn periodic_spline_oracle(t: f64, j: usize, m: usize, period: f64) -> f64 {
    let x = t.rem_euclid(period) / period * m as f64;
    let u = (x - j as f64).rem_euclid(m as f64);
    let knots: Vec<f64> = (0..=4).map(|k| k as f64).collect();
    de_boor(&knots, 0, 3, u)
}

/// Trailing mean by direct summation; head repeats the first full value.
pub fn moving_average_oracle(r: &[f64], k: usize) -> Vec<f64> {
    let n = r.len();
    let mut out = vec![0.0; n];
    for t in k..n {
        let mut s = 0.0;
        for v in &r[t - k..t] {
            s += v;
        }
        out[t] = s / k as f64;
    }
    let head = out[k];
    out[..k].iter_mut().for_each(|v| *v = head);
    out
}

/// Minimum-norm least squares from a dense SVD of the whole design.
pub fn dense_lstsq(x: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let svd = x.clone().svd(true, true);
    let b = DVector::from_column_slice(y);
    svd.solve(&b, 1e-10 * svd.singular_values.max()).expect("svd solve").iter().cloned().collect()
}

/// Benchmark deciles by scanning the whole history for matching hours.
pub fn benchmark_oracle(history: &HourlySeries, ts: NaiveDateTime) -> Option<Vec<f64>> {
    let mut sample = Vec::new();
    for i in 0..history.len() {
        let h = history.timestamp(i);
        if h.hour() != ts.hour() || h.weekday() != ts.weekday() {
            continue;
        }
        let ok = (1..=3).any(|k| {
            let center = shift_years(ts.date(), k);
            (h.date() - center).num_days().abs() <= 21
        });
        if ok {
            sample.push(history.load()[i]);
        }
    }
    if sample.is_empty() {
        return None;
    }
    sample.sort_by(f64::total_cmp);
    let n = sample.len();
    Some(
        (1..=9)
            .map(|k| {
                let tau = k as f64 / 10.0;
                let h = (n - 1) as f64 * tau;
                let lo = h.floor() as usize;
                let hi = (lo + 1).min(n - 1);
                sample[lo] + (h - lo as f64) * (sample[hi] - sample[lo])
            })
            .collect(),
    )
}

fn shift_years(d: NaiveDate, k: i32) -> NaiveDate {
    let y = d.year() - k;
    NaiveDate::from_ymd_opt(y, d.month(), d.day())
        .unwrap_or_else(|| NaiveDate::from_ymd_opt(y, d.month(), d.day() - 1).unwrap())
}

pub fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

pub fn at(y: i32, m: u32, d: u32, h: u32) -> NaiveDateTime {
    date(y, m, d).and_hms_opt(h, 0, 0).unwrap()
}

/// Synthetic series starting at `start` spanning `days` days.
pub fn synthetic(zone: &str, start: NaiveDate, days: usize, seed: u64) -> HourlySeries {
    synth::generate(&SyntheticSpec { zone: zone.into(), start, days, seed, ..Default::default() })
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

/// Civil-time CSV from 2016-03-12 to 2016-11-07 spanning one spring-forward
/// and one fall-back day.
///
/// Spring: 01:00 and 03:00 on March 13 carry loads 3 and 5, 02:00 is absent.
/// Fall: 01:00 on November 6 appears twice with loads 10 and 20 and
/// temperatures 40 and 50. Every other hour has load `100 + hour`.
pub fn dst_fixture_csv() -> String {
    let mut s = String::from("timestamp,zone,load_mw,drybulb_f\n");
    let mut row = |ts: NaiveDateTime, load: f64, temp: f64| {
        s.push_str(&format!("{},Z,{load},{temp}\n", ts.format("%Y-%m-%d %H:%M")));
    };
    let (spring, fall) = (date(2016, 3, 13), date(2016, 11, 6));
    for d in date(2016, 3, 12).iter_days().take_while(|d| *d <= date(2016, 11, 7)) {
        for h in 0..24 {
            let ts = d.and_hms_opt(h, 0, 0).unwrap();
            match h {
                1 if d == spring => row(ts, 3.0, 30.0),
                2 if d == spring => {}
                3 if d == spring => row(ts, 5.0, 32.0),
                1 if d == fall => {
                    row(ts, 10.0, 40.0);
                    row(ts, 20.0, 50.0);
                }
                _ => row(ts, 100.0 + h as f64, 45.0),
            }
        }
    }
    s
}
