import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import PchipInterpolator

from varfc.bench import (DisjointRates, RACPoint, RACurve, TimingRecord, bench_csv, default_lambda_grid,
                         delta_accuracy, read_bench_csv, read_sweep_csv, report, report_csv, summary_table,
                         sweep_csv)

from oracles import dense_delta, pchip_slopes


def curve(bpp, acc, k=1):
    return RACurve.from_points([RACPoint(0.01, b, a, k) for b, a in zip(bpp, acc)])


def random_curve(rng, n=None):
    n = n or int(rng.integers(3, 8))
    bpp = np.sort(rng.uniform(0.02, 3.0, n))
    acc = np.sort(rng.uniform(30, 98, n)) if rng.random() < 0.8 else rng.uniform(30, 98, n)
    return curve(bpp, acc)


def test_oracle_slopes_agree_with_reference_pchip():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = np.sort(rng.uniform(0, 5, 6))
        y = rng.uniform(0, 1, 6)
        np.testing.assert_allclose(pchip_slopes(x, y), PchipInterpolator(x, y).derivative()(x), atol=1e-10)


def test_identical_curves_give_zero():
    a = curve([0.1, 0.5, 1.0], [60.0, 80.0, 90.0])
    assert delta_accuracy(a, a) == 0.0


def test_constant_offset():
    a = curve([0.1, 0.5, 1.0], [60.0, 80.0, 90.0])
    b = curve([0.1, 0.5, 1.0], [61.0, 81.0, 91.0])
    assert delta_accuracy(b, a) == pytest.approx(1.0, abs=1e-12)


def test_three_point_curves_match_dense_oracle():
    a = curve([0.05, 0.2, 0.8], [50.0, 70.0, 75.0])
    b = curve([0.1, 0.3, 1.2], [45.0, 72.0, 80.0])
    assert abs(delta_accuracy(a, b) - dense_delta(a.bpp, a.top1, b.bpp, b.top1)) < 1e-6


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_antisymmetry_and_oracle(seed):
    rng = np.random.default_rng(seed)
    a, b = random_curve(rng), random_curve(rng)
    try:
        d = delta_accuracy(a, b)
    except DisjointRates:
        return
    assert d == -delta_accuracy(b, a)
    assert abs(d - dense_delta(a.bpp, a.top1, b.bpp, b.top1)) < 1e-6


def test_trapezoid_variant_is_close():
    a, b = curve([0.05, 0.3, 2.0], [40.0, 70.0, 90.0]), curve([0.04, 0.25, 1.5], [42.0, 65.0, 88.0])
    assert delta_accuracy(a, b, n=1000) == pytest.approx(delta_accuracy(a, b), abs=1e-3)
    assert delta_accuracy(a, b, n=1000) == -delta_accuracy(b, a, n=1000)


def test_disjoint_and_short_curves():
    a = curve([0.1, 0.2], [50.0, 60.0])
    b = curve([0.3, 0.4], [50.0, 60.0])
    with pytest.raises(DisjointRates, match="disjoint rate ranges"):
        delta_accuracy(a, b)
    with pytest.raises(ValueError):
        delta_accuracy(curve([0.1], [50.0]), a)


def test_curve_merges_duplicate_rates():
    c = curve([0.5, 0.2, 0.5, 0.9], [70.0, 60.0, 75.0, 80.0])
    assert c.bpp.tolist() == [0.2, 0.5, 0.9]
    assert c.top1.tolist() == [60.0, 75.0, 80.0]
    assert np.all(np.diff(c.bpp) > 0)


def test_default_grid():
    g = default_lambda_grid()
    assert len(g) == 12
    assert g[0] == pytest.approx(1e-4) and g[-1] == pytest.approx(5.12)
    np.testing.assert_allclose(np.diff(np.log(g)), np.log(5.12 / 1e-4) / 11)


def test_sweep_csv_round_trip():
    pts = [RACPoint(1e-4, 1.25, 97.5, 1, 1.0, 0.0), RACPoint(5.12, 0.4, 70.0, 1, 0.2, 0.001)]
    back = read_sweep_csv(sweep_csv(pts))
    assert [(p.lam, p.bpp, p.top1, p.est_bpp, p.clamp_rate) for p in back] == \
        [(p.lam, p.bpp, p.top1, p.est_bpp, p.clamp_rate) for p in pts]


def test_bench_csv_round_trip():
    t = {1: TimingRecord(1.0, 0.5, 2.0), 2: TimingRecord(1.5, 0.5, 2.5)}
    back = read_bench_csv(bench_csv(t))
    assert back[2].classifier_ms == 1.5 and set(back) == {1, 2}


@pytest.fixture
def curves_and_timings():
    rng = np.random.default_rng(2)
    curves = {k: random_curve(rng, 5) for k in (1, 2, 3)}
    timings = {k: TimingRecord(0.5 * k, 0.3, 0.5 * k + 0.9) for k in (1, 2, 3)}
    return curves, timings


def test_report_csv_rows_and_columns(curves_and_timings):
    curves, timings = curves_and_timings
    lines = report_csv(curves, timings).strip().splitlines()
    assert lines[0] == "config_k,lambda,bpp,top1,classifier_ms,compression_ms,encoding_ms"
    assert len(lines) - 1 == sum(len(c) for c in curves.values())


def test_summary_table_layout(curves_and_timings):
    curves, timings = curves_and_timings
    text, deltas = summary_table(curves, timings)
    rows = [r.split(",")[0] for r in text.strip().splitlines()]
    assert rows == ["Configuration", "Delta-Acc. (%)", "Classifier Latency (ms)", "Compression Time (ms)",
                    "Encoding Latency (ms)"]
    assert deltas[1] == 0.0


def test_report_writes_well_formed_svg(tmp_path, curves_and_timings):
    curves, timings = curves_and_timings
    paths = report(curves, timings, tmp_path)
    for name in ("ra_curves.svg", "delta_latency.svg"):
        root = ET.parse(paths[name]).getroot()
        assert root.tag.endswith("svg")
    assert paths["report.csv"].read_text().startswith("config_k,")


def test_report_is_reproducible(tmp_path, curves_and_timings):
    curves, timings = curves_and_timings
    a = report(curves, timings, tmp_path / "a")
    b = report(curves, timings, tmp_path / "b")
    for name in a:
        assert a[name].read_bytes() == b[name].read_bytes()


def test_report_needs_a_curve(tmp_path):
    with pytest.raises(ValueError):
        report({}, {}, tmp_path)
