"""Compiled vs pure-Python event kernel on the default 30-channel pool.

    python3 benchmarks/bench_simengine.py [--arrivals N] [--repeat R]

Both backends see the same pre-drawn call streams, so their counts must match
exactly; the script asserts that before printing timings.
"""

import argparse
import time

from caclab._jit import BACKEND, python_impl
from caclab.config import parse_config_text
from caclab.experiments import fncac_params
from caclab.policies import FuzzyPolicy, ThresholdPolicy
from caclab.rrbfn import FncacPolicy
from caclab.simengine import horizon_for_arrivals, run, simulate_kernel


def best_of(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--arrivals", type=float, default=5e4)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    cfg = parse_config_text("[system]\nchannels = 30\n")
    system = cfg.system.with_utilization(0.9)
    horizon = horizon_for_arrivals(system, args.arrivals)
    params, _ = fncac_params(cfg)
    policies = {
        "conventional": ThresholdPolicy(system.thresholds),
        "fuzzy": FuzzyPolicy(),
        "fncac": FncacPolicy(params),
    }
    slow_kernel = python_impl(simulate_kernel)
    run(system, policies["fncac"], 0.0, 10.0, 0)  # trigger compilation

    print(f"backend selected by CACLAB_NUMBA: {BACKEND}")
    print(f"{'policy':<14}{'events':>10}{'compiled s':>12}{'python s':>11}"
          f"{'compiled ev/s':>15}{'python ev/s':>13}{'speedup':>9}")
    for name, policy in policies.items():
        t_fast, fast = best_of(lambda: run(system, policy, 0.0, horizon, 1), args.repeat)
        t_slow, slow = best_of(
            lambda: run(system, policy, 0.0, horizon, 1, kernel=slow_kernel), 1)
        assert fast == slow, f"{name}: backends disagree"
        print(f"{name:<14}{fast.events:>10}{t_fast:>12.4f}{t_slow:>11.3f}"
              f"{fast.events / t_fast:>15.3g}{fast.events / t_slow:>13.3g}"
              f"{t_slow / t_fast:>8.0f}x")


if __name__ == "__main__":
    main()
