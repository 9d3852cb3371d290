//! Small order-statistic helpers shared by the trend band and the benchmark.

/// Sample quantile of already sorted data by linear interpolation between
/// order statistics at 1-based position `(n - 1) * tau + 1`.
///
/// Panics on empty input.
pub fn quantile_sorted(sorted: &[f64], tau: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let n = sorted.len();
    let h = (n - 1) as f64 * tau;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    if frac == 0.0 || lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Sort a copy of `values` (NaN-free) and evaluate several quantile levels.
pub fn quantiles(values: &[f64], taus: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    taus.iter().map(|&t| quantile_sorted(&sorted, t)).collect()
}

/// Same values as [`quantiles`], found by repeated selection instead of a
/// full sort. `values` is reordered.
pub fn quantiles_select(values: &mut [f64], taus: &[f64]) -> Vec<f64> {
    assert!(!values.is_empty(), "quantile of an empty sample");
    let n = values.len();
    let mut positions: Vec<usize> = taus
        .iter()
        .flat_map(|&t| {
            let lo = ((n - 1) as f64 * t).floor() as usize;
            [lo, (lo + 1).min(n - 1)]
        })
        .collect();
    positions.sort_unstable();
    positions.dedup();
    let mut order_stats = Vec::with_capacity(positions.len());
    let mut base = 0;
    for &pos in &positions {
        let (_, v, _) = values[base..].select_nth_unstable_by(pos - base, f64::total_cmp);
        order_stats.push((pos, *v));
        base = pos + 1;
    }
    let at = |pos: usize| order_stats[order_stats.binary_search_by_key(&pos, |e| e.0).unwrap()].1;
    taus.iter()
        .map(|&t| {
            let h = (n - 1) as f64 * t;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = h - lo as f64;
            if frac == 0.0 || lo == hi {
                at(lo)
            } else {
                at(lo) + frac * (at(hi) - at(lo))
            }
        })
        .collect()
}
