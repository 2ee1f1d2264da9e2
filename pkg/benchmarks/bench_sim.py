#!/usr/bin/env python3
"""Benchmark the hot simulation kernels: numba vs pure-numpy fallback.

Default mode re-runs itself in two subprocesses (RANLOOP_NUMBA=1 and =0)
and prints a comparison table. --inner runs one measurement in-process.

    python benchmarks/bench_sim.py [--windows N] [--bs N]
"""

import argparse
import os
import subprocess
import sys
import time


def measure(n_windows: int, n_bs: int) -> dict:
    from ranloop import accel
    from ranloop.ran_sim import BaseStation, SimConfig

    config = SimConfig(n_bs=n_bs, rng_seed=42)
    stations = [BaseStation(config, f"bs{i+1}", i) for i in range(n_bs)]

    # warm-up window compiles the kernels on the numba path
    for bs in stations:
        bs.step_window()
        bs.collect_kpms()

    start = time.perf_counter()
    for _ in range(n_windows):
        for bs in stations:
            bs.step_window()
            bs.collect_kpms()
    elapsed = time.perf_counter() - start
    ttis = n_windows * n_bs * config.report_ttis
    return {
        "numba": accel.NUMBA_ENABLED,
        "elapsed_s": elapsed,
        "ttis": ttis,
        "us_per_tti": elapsed / ttis * 1e6,
    }


def run_child(flag: str, n_windows: int, n_bs: int) -> dict:
    env = dict(os.environ, RANLOOP_NUMBA=flag)
    out = subprocess.run(
        [
            sys.executable,
            os.path.abspath(__file__),
            "--inner",
            "--windows",
            str(n_windows),
            "--bs",
            str(n_bs),
        ],
        capture_output=True,
        text=True,
        env=env,
        check=True,
    )
    parts = out.stdout.strip().split()
    return {"elapsed_s": float(parts[0]), "ttis": int(parts[1])}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--windows", type=int, default=400, help="report windows per BS")
    parser.add_argument("--bs", type=int, default=7, help="number of base stations")
    parser.add_argument("--inner", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()

    if args.inner:
        result = measure(args.windows, args.bs)
        print(f"{result['elapsed_s']:.6f} {result['ttis']}")
        return 0

    # fewer windows on the fallback path or this takes minutes
    pure_windows = max(args.windows // 10, 10)
    jit = run_child("1", args.windows, args.bs)
    pure = run_child("0", pure_windows, args.bs)

    jit_rate = jit["elapsed_s"] / jit["ttis"] * 1e6
    pure_rate = pure["elapsed_s"] / pure["ttis"] * 1e6
    print(f"{'path':<12} {'TTIs':>10} {'seconds':>10} {'us/TTI':>10}")
    print(f"{'numba':<12} {jit['ttis']:>10} {jit['elapsed_s']:>10.3f} {jit_rate:>10.2f}")
    print(f"{'pure numpy':<12} {pure['ttis']:>10} {pure['elapsed_s']:>10.3f} {pure_rate:>10.2f}")
    print(f"speedup: {pure_rate / jit_rate:.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
