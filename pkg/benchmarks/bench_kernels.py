"""Compiled kernels vs the numpy fallback, per kernel and per training step.

    python3 benchmarks/bench_kernels.py [--repeat 200]

The fallback is loaded in a subprocess with ESMER_PURE_PYTHON=1 so both
backends go through the same public wrappers.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np


def measure(repeat):
    from esmer import kernels
    from esmer.buffer import EpisodicBuffer
    from esmer.learners import HyperParams, esmer_step, init_learner
    from esmer.nn import NetworkSpec
    from esmer.streams import SampleSet

    rng = np.random.default_rng(0)
    logits = rng.standard_normal((32, 10))
    labels = rng.integers(0, 10, 32)
    losses = rng.exponential(1.0, 32)
    draws = rng.integers(0, 1000, 32)
    samples = SampleSet(np.arange(32), rng.standard_normal((32, 32)), labels)

    cases = {
        "row_ce": lambda: kernels.row_ce(logits, labels),
        "filtered_mean": lambda: kernels.filtered_mean(losses),
        "loss_weights": lambda: kernels.loss_weights(losses, 0.8, 1.0),
        "below_margin": lambda: kernels.below_margin(losses, 0.8, 1.0),
        "reservoir_slots": lambda: kernels.reservoir_slots(32, 100, 100, draws),
    }
    buf = EpisodicBuffer(100, 32, seed=0)
    buf.offer(samples)
    cases["buffer_offer"] = lambda: buf.offer(samples)

    state = init_learner("esmer", NetworkSpec(32, (128, 128), 10), HyperParams(), 0)
    for _ in range(5):
        esmer_step(state, samples)
    cases["esmer_step"] = lambda: esmer_step(state, samples)

    out = {"backend": kernels.BACKEND}
    for name, fn in cases.items():
        n = max(1, repeat // 10) if name == "esmer_step" else repeat
        out[name] = min(timeit.repeat(fn, number=n, repeat=5)) / n * 1e6
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=2000)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        print(json.dumps(measure(args.repeat)))
        return

    results = []
    for pure in ("0", "1"):
        env = {**os.environ, "ESMER_PURE_PYTHON": pure}
        r = subprocess.run([sys.executable, __file__, "--child", "--repeat", str(args.repeat)],
                           env=env, capture_output=True, text=True, check=True)
        results.append(json.loads(r.stdout))
    a, b = results
    print(f"{'kernel':<16}{a['backend'] + ' us':>14}{b['backend'] + ' us':>14}{'speedup':>10}")
    for key in a:
        if key == "backend":
            continue
        print(f"{key:<16}{a[key]:>14.2f}{b[key]:>14.2f}{b[key] / a[key]:>9.2f}x")


if __name__ == "__main__":
    main()
