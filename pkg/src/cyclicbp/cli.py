"""Command-line front end: simulate, sweep, stability, compare, generate.

Exit codes: 0 success, 2 invalid configuration, 3 scenario fails validation,
4 runtime failure. Artifacts go to ``--out``, else ``$CYCLICBP_OUT``, else
``./cyclicbp-out``. Every run writes ``manifest.json`` embedding the fully
resolved scenario; passing that manifest back as the scenario reproduces the
run.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .controllers import POLICIES
from .dynamics import MODES, MeasurementModel, NonIntegralInterval, step_schedule
from .kernels import BACKEND
from .metrics import IoFailure, ensure_dir, render_comparison_svg, render_svg, write_metrics
from .scenarios import (
    SchemaError,
    generate_grid,
    generate_two_junction,
    rescale_cycle,
    run_scenario,
    save,
    scenario_from_dict,
    scenario_to_dict,
)

EXIT_OK, EXIT_CONFIG, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3, 4
OUT_ENV = "CYCLICBP_OUT"
DIVERGENCE_SHARE = 0.01  # slope threshold as a share of the mean total arrival rate


class ConfigError(Exception):
    pass


class ValidationFailure(Exception):
    pass


def _positive(kind):
    def conv(text):
        v = kind(text)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
        return v
    return conv


def _non_negative(text):
    v = float(text)
    if not (v >= 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


def _csv_list(kind):
    def conv(text):
        return [kind(x) for x in text.split(",") if x.strip()]
    return conv


def _add_overrides(p, policy=True):
    if policy:
        p.add_argument("--policy", choices=sorted(POLICIES))
    p.add_argument("--eta", type=_positive(float), help="softmax inverse temperature")
    p.add_argument("--cycle", type=_positive(float), help="cycle length in seconds (rescales per-cycle rates)")
    p.add_argument("--slot", type=_positive(float), help="decision interval in seconds")
    p.add_argument("--horizon", type=_positive(int), help="horizon in cycles")
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--delta-max", type=_non_negative, dest="delta_max")
    p.add_argument("--k", type=_positive(int), help="turning estimator window")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cyclicbp", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"cyclicbp {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one scenario and write metrics, plots and a manifest")
    p.add_argument("scenario")
    p.add_argument("--out")
    _add_overrides(p)

    p = sub.add_parser("sweep", help="policies x decision intervals (x cycle lengths) summary table")
    p.add_argument("scenario")
    p.add_argument("--out")
    p.add_argument("--policies", type=_csv_list(str), default=sorted(POLICIES))
    p.add_argument("--intervals", type=_csv_list(float), default=None, help="seconds, e.g. 10,30,60,90")
    p.add_argument("--cycles", type=_csv_list(float), default=None, help="cycle lengths in seconds")
    p.add_argument("--jobs", type=_positive(int), default=1)
    _add_overrides(p, policy=False)

    p = sub.add_parser("stability", help="stability margin, witness and bound per demand segment")
    p.add_argument("scenario")
    p.add_argument("--out")
    p.add_argument("--brute-force", type=_positive(float), dest="brute_force", metavar="RESOLUTION",
                   help="also run the grid oracle at this resolution")
    _add_overrides(p, policy=False)

    p = sub.add_parser("compare", help="run all four policies on the same seeded scenario")
    p.add_argument("scenario")
    p.add_argument("--out")
    _add_overrides(p, policy=False)

    p = sub.add_parser("generate", help="write a generated scenario file")
    p.add_argument("kind", choices=["two-junction", "grid"])
    p.add_argument("path")
    p.add_argument("--rows", type=int, default=4)
    p.add_argument("--cols", type=int, default=4)
    p.add_argument("--rate", type=_non_negative, default=3.0, help="grid ingress rate per cycle")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--horizon", type=_positive(int))
    return ap


# --- config resolution -----------------------------------------------------------

def load_scenario(path):
    """Read a scenario file, or the scenario embedded in a run manifest."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc.strerror or exc}") from exc
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if isinstance(doc, dict) and doc.get("tool") == "cyclicbp" and "scenario" in doc:
        doc = doc["scenario"]
    try:
        sc = scenario_from_dict(doc)
    except SchemaError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return sc, hashlib.sha256(raw).hexdigest()


def apply_overrides(sc, args):
    if getattr(args, "cycle", None) is not None:
        try:
            sc = rescale_cycle(sc, args.cycle)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    ctrl = sc.controller
    if getattr(args, "policy", None) is not None:
        ctrl = replace(ctrl, policy=args.policy)
    if args.eta is not None:
        ctrl = replace(ctrl, eta=args.eta)
    if args.k is not None:
        ctrl = replace(ctrl, k=args.k)
    if args.slot is not None:
        ctrl = replace(ctrl, decision_interval=args.slot)
    sc = replace(sc, controller=ctrl)
    if args.horizon is not None:
        sc = replace(sc, horizon_cycles=args.horizon)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be >= 0")
        sc = replace(sc, seed=args.seed)
    if args.mode is not None:
        sc = replace(sc, mode=args.mode)
    if args.delta_max is not None:
        sc = replace(sc, measurement=MeasurementModel(args.delta_max))
    check_schedule(sc)
    return sc


def check_schedule(sc):
    try:
        _, hold = step_schedule(sc.topology.cycle_length, sc.controller.decision_interval, True)
    except NonIntegralInterval as exc:
        raise ConfigError(str(exc)) from exc
    if sc.horizon_cycles % hold:
        raise ConfigError(f"horizon of {sc.horizon_cycles} cycles is not a whole number of decision intervals")


def validate(sc):
    bad = sc.problems()
    if bad:
        raise ValidationFailure("; ".join(bad))


def out_dir(args) -> str:
    return args.out or os.environ.get(OUT_ENV) or "cyclicbp-out"


def manifest(command, sc, source_sha, outputs, extra=None) -> dict:
    doc = {
        "tool": "cyclicbp",
        "version": __version__,
        "backend": BACKEND,
        "command": command,
        "source_sha256": source_sha,
        "scenario": scenario_to_dict(sc),
        "outputs": sorted(outputs),
    }
    if extra:
        doc.update(extra)
    return doc


def _write_json(path, doc):
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=False)
            fh.write("\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _write_text(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


# --- diagnostics -------------------------------------------------------------------

def divergence(run) -> dict:
    """Second-half slope of the total queue against the mean arrival rate (both per cycle)."""
    qs = run.q_sigma
    t = run.step_times
    half = qs.shape[0] // 2
    slope = float(np.polyfit(t[half:], qs[half:], 1)[0]) if qs.shape[0] - half >= 2 else 0.0
    horizon = run.exits.shape[0] * run.frac
    arrival_rate = float(run.arrivals.sum() / horizon) if horizon else 0.0
    return {
        "slope": slope,
        "arrival_rate": arrival_rate,
        "growth_rate": float(qs[-1] / t[-1]) if t[-1] > 0 else 0.0,
        "diverging": bool(slope > DIVERGENCE_SHARE * max(arrival_rate, 1e-12)),
    }


# --- subcommands -------------------------------------------------------------------

def cmd_simulate(args) -> int:
    sc, sha = load_scenario(args.scenario)
    sc = apply_overrides(sc, args)
    validate(sc)
    out = out_dir(args)
    ensure_dir(out)
    run = run_scenario(sc)
    series = run.metrics
    write_metrics(series, os.path.join(out, "metrics.csv"), "csv")
    write_metrics(series, os.path.join(out, "metrics.json"), "json")
    render_svg(series, os.path.join(out, "q_sigma.svg"), title=f"{sc.name or 'scenario'}: {sc.controller.policy}")
    summary = {k: _clean(v) for k, v in series.summary().items()}
    summary.update(divergence(run))
    files = ["metrics.csv", "metrics.json", "q_sigma.svg", "manifest.json"]
    _write_json(os.path.join(out, "manifest.json"), manifest("simulate", sc, sha, files, {"summary": summary}))
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


SWEEP_HEADER = ("policy", "cycle_s", "interval_s", "mean_q_sigma", "mean_congested_links", "avg_travel_time_s")


def _sweep_cell(sc):
    series = run_scenario(sc).metrics
    return series.summary()


def cmd_sweep(args) -> int:
    sc, sha = load_scenario(args.scenario)
    base = apply_overrides(sc, args)
    policies = args.policies
    cycles = args.cycles if args.cycles is not None else [base.topology.cycle_length]
    intervals = args.intervals if args.intervals is not None else [base.topology.cycle_length]
    if not policies or not cycles or not intervals:
        raise ConfigError("sweep grid is empty")
    for p in policies:
        if p not in POLICIES:
            raise ConfigError(f"unknown policy {p!r}; choose from {sorted(POLICIES)}")
    if any(not (v > 0) for v in list(cycles) + list(intervals)):
        raise ConfigError("cycle lengths and intervals must be positive")
    validate(base)
    cells = []
    for cyc in cycles:
        try:
            sc_c = rescale_cycle(base, cyc)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        for policy in policies:
            for iv in intervals:
                cell = replace(sc_c, controller=replace(sc_c.controller, policy=policy, decision_interval=iv))
                check_schedule(cell)
                cells.append((policy, cyc, iv, cell))
    if args.jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            summaries = list(ex.map(_sweep_cell, [c[3] for c in cells]))
    else:
        summaries = [_sweep_cell(c[3]) for c in cells]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for (policy, cyc, iv, _), s in zip(cells, summaries):
        w.writerow([policy, repr(float(cyc)), repr(float(iv)), repr(s["mean_q_sigma"]),
                    repr(s["mean_congested_links"]), repr(s["avg_travel_time_s"])])
    out = out_dir(args)
    ensure_dir(out)
    _write_text(os.path.join(out, "sweep.csv"), buf.getvalue())
    _write_json(os.path.join(out, "manifest.json"), manifest(
        "sweep", base, sha, ["sweep.csv", "manifest.json"],
        {"grid": {"policies": list(policies), "cycles": [float(c) for c in cycles],
                  "intervals": [float(i) for i in intervals]}}))
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_stability(args) -> int:
    from .stability import InfeasibleDemand, TooLarge, brute_force_region, max_epsilon, max_load_factor

    sc, sha = load_scenario(args.scenario)
    sc = apply_overrides(sc, args)
    validate(sc)
    from .network import compile_network
    net = compile_network(sc.topology, sc.turning)
    reports = []
    for seg, rates in zip(sc.demand.segments, sc.demand.segment_rates(net.road_ids)):
        try:
            rep = max_epsilon(net, None, rates).to_json()
        except InfeasibleDemand as exc:
            raise ConfigError(str(exc)) from exc
        rep["segment"] = [seg.start, seg.end]
        rep["load_factor_boundary"] = _clean(max_load_factor(net, None, rates))
        if args.brute_force:
            try:
                bf = brute_force_region(sc.topology, sc.turning, rates, args.brute_force)
            except TooLarge as exc:
                raise ConfigError(str(exc)) from exc
            rep["brute_force_epsilon"] = bf.epsilon
        reports.append({k: _clean(v) for k, v in rep.items()})
    doc = {"segments": reports, "margin": min(r["epsilon_star"] for r in reports)}
    out = out_dir(args)
    ensure_dir(out)
    _write_json(os.path.join(out, "stability.json"), doc)
    _write_json(os.path.join(out, "manifest.json"),
                manifest("stability", sc, sha, ["stability.json", "manifest.json"]))
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


RANKING_HEADER = ("rank", "policy", "mean_q_sigma", "final_cesaro", "slope_per_cycle", "decisions", "status")


def cmd_compare(args) -> int:
    sc, sha = load_scenario(args.scenario)
    sc = apply_overrides(sc, args)
    validate(sc)
    rows, series = [], {}
    for policy in sorted(POLICIES):
        cell = replace(sc, controller=replace(sc.controller, policy=policy))
        run = run_scenario(cell)
        series[policy] = run.metrics
        d = divergence(run)
        rows.append({"policy": policy, "mean_q_sigma": float(run.metrics.q_sigma.mean()),
                     "final_cesaro": float(run.metrics.cesaro()[-1]), "slope_per_cycle": d["slope"],
                     "decisions": run.decisions, "status": "diverging" if d["diverging"] else "stable"})
    rows.sort(key=lambda r: (r["mean_q_sigma"], r["policy"]))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RANKING_HEADER)
    for rank, r in enumerate(rows, 1):
        w.writerow([rank, r["policy"], repr(r["mean_q_sigma"]), repr(r["final_cesaro"]),
                    repr(r["slope_per_cycle"]), r["decisions"], r["status"]])
    out = out_dir(args)
    ensure_dir(out)
    _write_text(os.path.join(out, "ranking.csv"), buf.getvalue())
    render_comparison_svg(series, os.path.join(out, "compare.svg"), title=f"{sc.name or 'scenario'}: policy comparison")
    _write_json(os.path.join(out, "manifest.json"),
                manifest("compare", sc, sha, ["ranking.csv", "compare.svg", "manifest.json"], {"ranking": rows}))
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_generate(args) -> int:
    kw = {"seed": args.seed}
    if args.horizon:
        kw["horizon_cycles"] = args.horizon
    if args.kind == "two-junction":
        sc = generate_two_junction(**kw)
    else:
        try:
            sc = generate_grid(args.rows, args.cols, demand=args.rate, **kw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    try:
        save(sc, args.path)
    except OSError as exc:
        raise IoFailure(f"cannot write {args.path}: {exc}") from exc
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "stability": cmd_stability,
            "compare": cmd_compare, "generate": cmd_generate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValidationFailure as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (IoFailure, Exception) as exc:  # noqa: BLE001 - anything else is a runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
