import json
import math

import numpy as np
import pytest

from cyclicbp.metrics import (
    IoFailure,
    MetricsSeries,
    congested,
    metrics_csv,
    metrics_json,
    render_svg,
    write_metrics,
)
from cyclicbp.scenarios import generate_two_junction, run_scenario


def series(n=3):
    q = np.arange(n * 2, dtype=float).reshape(n, 2)
    return MetricsSeries(("a", "b"), np.arange(n, dtype=float), q, np.zeros(n, dtype=int), np.ones(n),
                         np.cumsum(np.ones(n)))


def test_congested_rule():
    assert congested(43, 50)
    assert not congested(42.5, 50)
    assert not congested(0, 50)
    assert not congested(1e9, None)
    assert not congested(1e9, math.inf)


def test_csv_shape():
    text = metrics_csv(series(3))
    lines = text.splitlines()
    assert len(lines) == 4
    assert lines[0] == "t,q_sigma,congested_links,exits_cum,a,b"
    assert lines[2] == "1,5,0,2,2,3"


def test_json_mirrors_csv():
    doc = json.loads(metrics_json(series(3)))
    assert doc["q_sigma"] == [1.0, 5.0, 9.0]
    assert doc["q"]["b"] == [1.0, 3.0, 5.0]


def test_empty_series_rejected(tmp_path):
    with pytest.raises(ValueError):
        metrics_csv(series(0))
    with pytest.raises(ValueError):
        render_svg(series(0), tmp_path / "x.svg")


def test_svg_is_byte_stable(tmp_path):
    s = series(50)
    render_svg(s, tmp_path / "a.svg", title="t")
    render_svg(s, tmp_path / "b.svg", title="t")
    a = (tmp_path / "a.svg").read_bytes()
    assert a == (tmp_path / "b.svg").read_bytes()
    assert a.startswith(b"<?xml") and b"<polyline" in a and b"time (cycles)" in a


def test_write_failure(tmp_path):
    with pytest.raises(IoFailure):
        write_metrics(series(2), tmp_path / "missing" / "m.csv")
    with pytest.raises(ValueError):
        write_metrics(series(2), tmp_path / "m.txt", "xml")


def test_run_metrics_consistency():
    sc = generate_two_junction(horizon_cycles=300)
    for mode in ("fluid", "integer"):
        from dataclasses import replace
        run = run_scenario(replace(sc, mode=mode))
        m = run.metrics
        assert len(m) == 300
        assert np.array_equal(m.q_sigma, m.q.sum(axis=1))
        assert m.exits_cum[-1] == pytest.approx(run.exits.sum())
        assert m.travel_time_method == ("vehicle_tags" if mode == "integer" else "littles_law")
        assert m.avg_travel_time > 0
        assert set(m.avg_density) == {r.id for r in sc.topology.in_roads if not r.is_ingress}
