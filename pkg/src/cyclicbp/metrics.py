"""Per-epoch metrics and their CSV / JSON / SVG emitters."""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

CONGESTION_SHARE = 0.85
CSV_HEADER = ("t", "q_sigma", "congested_links", "exits_cum")


class IoFailure(OSError):
    pass


def congested(queue: float, capacity: float | None) -> bool:
    """A link is congested when its queue exceeds 85% of a bounded capacity."""
    if capacity is None or math.isinf(capacity):
        return False
    return queue > CONGESTION_SHARE * capacity


@dataclass
class MetricsSeries:
    road_ids: tuple[str, ...]
    t: np.ndarray              # epoch start, in cycles
    q: np.ndarray              # (epochs, roads) queues at epoch start
    congested_links: np.ndarray
    exits: np.ndarray          # during the epoch
    exits_cum: np.ndarray
    cycle_length: float = 30.0
    avg_density: dict = field(default_factory=dict)
    max_density: float = 0.0
    avg_travel_time: float = math.nan  # seconds
    travel_time_method: str = ""

    @property
    def q_sigma(self) -> np.ndarray:
        return self.q.sum(axis=1)

    def __len__(self) -> int:
        return int(self.t.shape[0])

    def cesaro(self) -> np.ndarray:
        """Running time-average of the total queue."""
        qs = self.q_sigma
        return np.cumsum(qs) / np.arange(1, qs.shape[0] + 1)

    def summary(self) -> dict:
        return {
            "epochs": len(self),
            "mean_q_sigma": float(self.q_sigma.mean()) if len(self) else math.nan,
            "mean_congested_links": float(self.congested_links.mean()) if len(self) else math.nan,
            "exits_total": float(self.exits_cum[-1]) if len(self) else 0.0,
            "avg_travel_time_s": self.avg_travel_time,
            "travel_time_method": self.travel_time_method,
            "max_density": self.max_density,
        }


def collect_metrics(run) -> MetricsSeries:
    net = run.net
    hold = run.steps_per_decision
    n_steps = run.exits.shape[0]
    epochs = np.arange(0, n_steps, hold)
    q = run.q[epochs]
    cap = net.capacity
    bounded = np.isfinite(cap)
    congested_links = (q[:, bounded] > CONGESTION_SHARE * cap[bounded]).sum(axis=1)
    exits = np.add.reduceat(run.exits, epochs) if n_steps else np.zeros(0)
    density = q[:, bounded] / cap[bounded] if bounded.any() else np.zeros((len(epochs), 0))
    avg_density = {net.road_ids[i]: float(d) for i, d in zip(np.flatnonzero(bounded), density.mean(axis=0))}
    T = net.topology.cycle_length
    if run.mode == "integer":
        tt = float(np.mean(run.travel_times)) * T if run.travel_times else math.nan
        method = "vehicle_tags"
    else:
        horizon = n_steps * run.frac
        throughput = run.exits.sum() / horizon  # vehicles per cycle
        tt = float(run.q[:-1].sum(axis=1).mean() / throughput * T) if throughput > 0 else math.nan
        method = "littles_law"
    return MetricsSeries(
        road_ids=tuple(net.road_ids),
        t=epochs * run.frac,
        q=q,
        congested_links=congested_links.astype(np.int64),
        exits=exits,
        exits_cum=np.cumsum(exits),
        cycle_length=T,
        avg_density=avg_density,
        max_density=float(density.max()) if density.size else 0.0,
        avg_travel_time=tt,
        travel_time_method=method,
    )


def _fmt(x) -> str:
    x = float(x)
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def metrics_csv(series: MetricsSeries) -> str:
    if len(series) == 0:
        raise ValueError("metrics series is empty")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER + tuple(series.road_ids))
    qs = series.q_sigma
    for k in range(len(series)):
        w.writerow([_fmt(series.t[k]), _fmt(qs[k]), str(int(series.congested_links[k])), _fmt(series.exits_cum[k])]
                   + [_fmt(v) for v in series.q[k]])
    return buf.getvalue()


def metrics_json(series: MetricsSeries) -> str:
    if len(series) == 0:
        raise ValueError("metrics series is empty")
    doc = {
        "road_ids": list(series.road_ids),
        "cycle_length": series.cycle_length,
        "t": series.t.tolist(),
        "q_sigma": series.q_sigma.tolist(),
        "congested_links": series.congested_links.tolist(),
        "exits": series.exits.tolist(),
        "exits_cum": series.exits_cum.tolist(),
        "q": {rid: series.q[:, k].tolist() for k, rid in enumerate(series.road_ids)},
        "avg_density": series.avg_density,
        "summary": _json_safe(series.summary()),
    }
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n"


def _json_safe(d: dict) -> dict:
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


def _write(path, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def write_metrics(series: MetricsSeries, path, format: str = "csv") -> None:
    if format == "csv":
        _write(path, metrics_csv(series))
    elif format == "json":
        _write(path, metrics_json(series))
    else:
        raise ValueError(f"unknown metrics format {format!r}")


# --- SVG ---------------------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")
_MAX_POINTS = 2000


def _thin(x: np.ndarray, y: np.ndarray):
    if x.shape[0] <= _MAX_POINTS:
        return x, y
    idx = np.unique(np.linspace(0, x.shape[0] - 1, _MAX_POINTS).round().astype(int))
    return x[idx], y[idx]


def _nice_max(v: float) -> float:
    if v <= 0 or not math.isfinite(v):
        return 1.0
    mag = 10 ** math.floor(math.log10(v))
    for m in (1, 2, 2.5, 5, 10):
        if m * mag >= v:
            return m * mag
    return 10 * mag


def svg_panels(panels: list[dict], title: str = "", width: int = 800, panel_height: int = 260) -> str:
    """Stacked line charts. Each panel: ``{"ylabel", "xlabel", "series": [(label, x, y), ...]}``."""
    margin_l, margin_r, margin_t, margin_b = 70, 20, 30, 45
    height = margin_t + len(panels) * (panel_height + margin_b) + 10
    out = [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="14">{_esc(title)}</text>')
    for p_idx, panel in enumerate(panels):
        top = margin_t + p_idx * (panel_height + margin_b)
        x0, x1 = margin_l, width - margin_r
        y0, y1 = top + panel_height - 20, top + 10
        xs = [np.asarray(s[1], dtype=float) for s in panel["series"]]
        ys = [np.asarray(s[2], dtype=float) for s in panel["series"]]
        xmax = max([float(x.max()) for x in xs if x.size] + [1.0])
        xmin = min([float(x.min()) for x in xs if x.size] + [0.0])
        ymax = _nice_max(max([float(np.nanmax(y)) for y in ys if y.size] + [0.0]))
        span = xmax - xmin or 1.0

        def px(v):
            return x0 + (v - xmin) / span * (x1 - x0)

        def py(v):
            return y0 - v / ymax * (y0 - y1)

        out.append(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>')
        out.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>')
        for k in range(5):
            yv = ymax * k / 4
            out.append(f'<line x1="{x0 - 4}" y1="{py(yv):.2f}" x2="{x0}" y2="{py(yv):.2f}" stroke="black"/>')
            out.append(f'<text x="{x0 - 6}" y="{py(yv) + 4:.2f}" text-anchor="end">{_tick(yv)}</text>')
            xv = xmin + span * k / 4
            out.append(f'<line x1="{px(xv):.2f}" y1="{y0}" x2="{px(xv):.2f}" y2="{y0 + 4}" stroke="black"/>')
            out.append(f'<text x="{px(xv):.2f}" y="{y0 + 16}" text-anchor="middle">{_tick(xv)}</text>')
        out.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{y0 + 32}" text-anchor="middle">{_esc(panel.get("xlabel", ""))}</text>')
        cy = (y0 + y1) / 2
        out.append(f'<text x="16" y="{cy:.1f}" text-anchor="middle" transform="rotate(-90 16 {cy:.1f})">'
                   f'{_esc(panel.get("ylabel", ""))}</text>')
        for s_idx, (label, x, y) in enumerate(panel["series"]):
            x, y = _thin(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
            color = _PALETTE[s_idx % len(_PALETTE)]
            pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>')
            ly = y1 + 4 + 14 * s_idx
            out.append(f'<line x1="{x1 - 150}" y1="{ly:.1f}" x2="{x1 - 130}" y2="{ly:.1f}" stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{x1 - 125}" y="{ly + 4:.1f}">{_esc(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _tick(v: float) -> str:
    if v == int(v):
        return str(int(v))
    return f"{v:.3g}"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def render_svg(series: MetricsSeries, path, title: str = "") -> None:
    if len(series) == 0:
        raise ValueError("metrics series is empty")
    panels = [
        {"ylabel": "vehicles in network", "xlabel": "time (cycles)",
         "series": [("total queue", series.t, series.q_sigma)]},
        {"ylabel": "congested links", "xlabel": "time (cycles)",
         "series": [("links above 85% capacity", series.t, series.congested_links)]},
    ]
    _write(path, svg_panels(panels, title))


def render_comparison_svg(runs: dict, path, title: str = "") -> None:
    """Overlay the total queue of several runs; ``runs`` maps label -> MetricsSeries."""
    if not runs or any(len(s) == 0 for s in runs.values()):
        raise ValueError("comparison needs non-empty series")
    panels = [
        {"ylabel": "vehicles in network", "xlabel": "time (cycles)",
         "series": [(name, s.t, s.q_sigma) for name, s in runs.items()]},
        {"ylabel": "congested links", "xlabel": "time (cycles)",
         "series": [(name, s.t, s.congested_links) for name, s in runs.items()]},
    ]
    _write(path, svg_panels(panels, title))


def ensure_dir(path) -> None:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {path}: {exc}") from exc
