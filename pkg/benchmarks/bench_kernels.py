"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--rows 4 --cols 4 --repeat 2000]

Each kernel is fed the arrays of a generated grid, so sizes match what a
simulation step actually passes. A full short run is timed per backend too.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from cyclicbp.kernels import available_backends, get_backend
from cyclicbp.network import compile_network
from cyclicbp.scenarios import generate_grid


def kernel_calls(k, net, rng):
    n_links = net.link_src.shape[0]
    q = rng.uniform(0, 40, net.n_roads)
    qbar = rng.uniform(0, 0.5, n_links)
    w = k.bp_weights(q, net.link_src, net.link_dst, qbar, net.ent_phase, net.ent_road, net.ent_rate, net.n_phases)
    alloc = k.softmax_alloc(w, net.junction_ptr, 2.5, 1.0)
    s = k.service_means(alloc, net.ent_phase, net.ent_road, net.ent_rate, net.n_roads, 1.0)
    arrivals = rng.uniform(0, 3, net.n_roads)
    return {
        "bp_weights": lambda: k.bp_weights(q, net.link_src, net.link_dst, qbar, net.ent_phase, net.ent_road,
                                           net.ent_rate, net.n_phases),
        "softmax_alloc": lambda: k.softmax_alloc(w, net.junction_ptr, 2.5, 1.0),
        "argmax_alloc": lambda: k.argmax_alloc(w, net.junction_ptr, 1.0),
        "service_means": lambda: k.service_means(alloc, net.ent_phase, net.ent_road, net.ent_rate, net.n_roads, 1.0),
        "fluid_transfer": lambda: k.fluid_transfer(q, s, arrivals, net.link_src, net.link_dst, net.p_bar,
                                                   net.exit_share),
    }


def time_run(backend, rows, cols, cycles):
    # the backend is fixed at import, so each full run gets its own interpreter
    code = ("import time; from cyclicbp.scenarios import generate_grid, run_scenario;"
            f"sc = generate_grid({rows}, {cols}, horizon_cycles={cycles});"
            "t = time.perf_counter(); run_scenario(sc); print(time.perf_counter() - t)")
    env = dict(os.environ, CYCLICBP_BACKEND=backend)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=4)
    ap.add_argument("--cols", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=2000)
    ap.add_argument("--cycles", type=int, default=2000)
    args = ap.parse_args(argv)

    sc = generate_grid(args.rows, args.cols)
    net = compile_network(sc.topology, sc.turning)
    backends = available_backends()
    print(f"grid {args.rows}x{args.cols}: {net.n_roads} roads, {net.n_phases} phases, {net.link_src.shape[0]} links")
    if "cython" not in backends:
        print("compiled extension not built; timing the fallback only")
    per_call = {}
    for name in backends:
        calls = kernel_calls(get_backend(name), net, np.random.default_rng(0))
        per_call[name] = {kn: min(timeit.repeat(fn, number=args.repeat, repeat=3)) / args.repeat * 1e6
                          for kn, fn in calls.items()}
    print(f"{'kernel':<16}" + "".join(f"{b + ' (us)':>14}" for b in backends) + ("   speedup" if len(backends) > 1 else ""))
    for kn in per_call[backends[0]]:
        row = f"{kn:<16}" + "".join(f"{per_call[b][kn]:>14.2f}" for b in backends)
        if len(backends) > 1:
            row += f"{per_call['python'][kn] / per_call['cython'][kn]:>10.1f}x"
        print(row)
    for b in backends:
        print(f"full fluid run, {args.cycles} cycles, {b}: {time_run(b, args.rows, args.cols, args.cycles):.2f} s")


if __name__ == "__main__":
    main()
