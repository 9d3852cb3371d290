"""Smoke test for the pyqrload extension module.

Build the module and put it next to this script first:

    cargo build --release -p qrload-python --features extension-module
    cp target/release/libpyqrload.so python/pyqrload.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import pyqrload as q  # noqa: E402


def check(cond, what):
    if not cond:
        raise SystemExit(f"FAIL: {what}")
    print(f"ok   {what}")


def main():
    check(q.pinball(100.0, 90.0, 0.9) == 9.0, "pinball upper branch")
    check(q.pinball(90.0, 100.0, 0.9) == 1.0, "pinball lower branch")
    check(abs(q.improvement(358.44, 402.68) - 10.99) < 0.01, "improvement arithmetic")
    check([round(t, 1) for t in q.tau_grid()] == [k / 10 for k in range(1, 10)], "decile grid")

    x = [[1.0] for _ in range(5)]
    check(abs(q.qr_fit(x, [1, 2, 3, 4, 5], 0.5)[0] - 3.0) < 1e-9, "intercept-only median")

    rows = q.bspline_basis([0.0, 1234.5, 8000.0])
    check(all(abs(sum(r) - 1.0) < 1e-10 for r in rows), "spline partition of unity")
    check(len(q.task_schedule()) == 6, "six tasks")

    series = q.HourlySeries.synthetic("SYN", "2014-01-01", 3 * 365 + 60, seed=3)
    train = series.up_to("2016-12-31")
    check(len(train) % 24 == 0, "whole days")

    model = q.ZoneModel.fit(train, window=24 * 7 * 8)
    check(model.model_count == 216, "216 quantile models")
    check(len(model.coefficients(12, 0.5)) == 46, "46 coefficients per model")

    grid = model.forecast("2017-01-08 00:00", "2017-01-14 23:00")
    check(len(grid) == 7 * 24, "one week of hourly rows")
    check(all(r == sorted(r) and r[0] > 0 for r in grid.quantiles), "rows positive and sorted")
    score = grid.score(series)
    check(math.isfinite(score) and score > 0, f"pinball score {score:.2f} MW")

    bench = q.seasonal_naive_benchmark(train, "2017-01-08 00:00", "2017-01-14 23:00")
    print(f"     benchmark score {bench.score(series):.2f} MW")

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "model.json")
        model.save(path)
        again = q.ZoneModel.load(path)
        g2 = again.forecast("2017-01-08 00:00", "2017-01-14 23:00")
        check(g2.quantiles == grid.quantiles, "model file round trip")

    check(grid.to_csv().startswith("zone,timestamp,q10"), "csv export")
    print("all smoke checks passed")


if __name__ == "__main__":
    main()
