"""Command-line entry point: ``esmer run|compare|plotdata|gradcheck|selftest``.

Failures exit nonzero with a JSON object on stderr::

    {"error": "<exception class>", "message": "...", "details": [...]}
"""

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import harness
from .errors import ConfigError, EsmerError

log = logging.getLogger("esmer")


def _cmd_run(args):
    from .config import load_config

    cfg = load_config(args.config)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    if args.workers:
        cfg.workers = args.workers
    records = harness.run(cfg)
    run_dir = os.path.join(cfg.output_dir, cfg.hash())
    done = [r for r in records if r.fault is None]
    print(f"run directory: {run_dir}")
    for r in records:
        status = f"fault: {r.fault}" if r.fault else \
            f"class_il {r.final_accuracy():.4f}  task_il {r.final_accuracy(head='task_il'):.4f}"
        print(f"  seed {r.seed}: {status}  ({r.wall_clock:.1f}s)")
    if done:
        cil = np.array([r.final_accuracy() for r in done])
        print(f"  {cfg.method_label}: class_il {cil.mean():.4f} ± {cil.std():.4f} over {len(done)} seeds")
    return 0 if done else 1


def _cmd_compare(args):
    summaries = harness.compare_dirs(args.dirs)
    table = harness.summary_table(summaries)
    print(table)
    os.makedirs(args.out_dir, exist_ok=True)
    harness.write_comparison(summaries, os.path.join(args.out_dir, "comparison.csv"))
    with open(os.path.join(args.out_dir, "comparison.txt"), "w") as f:
        f.write(table + "\n")
    return 0


def _run_dirs(path):
    if os.path.exists(os.path.join(path, "config.json")):
        return [path]
    subs = sorted(os.path.join(path, d) for d in os.listdir(path)
                  if os.path.exists(os.path.join(path, d, "config.json")))
    if not subs:
        raise FileNotFoundError(f"{path}: no run directories found")
    return subs


def _cmd_plotdata(args):
    records = []
    for d in _run_dirs(args.dir):
        records += harness.load_run_dir(d)[1]
    out = args.out or os.path.join(args.dir, f"plot_{args.figure}.csv")
    harness.emit_plot_data(records, args.figure, out)
    print(out)
    return 0


def _cmd_gradcheck(args):
    from .nn import NetworkSpec, grad_check

    t0 = time.perf_counter()
    err = grad_check(NetworkSpec(4, (8, 8), 3), args.seed)
    result = {"spec": [4, [8, 8], 3], "seed": args.seed, "max_rel_error": err,
              "tolerance": 1e-6, "passed": err < 1e-6,
              "seconds": round(time.perf_counter() - t0, 3)}
    print(json.dumps(result))
    return 0 if result["passed"] else 1


def _selftest_checks():
    from . import error_memory as em
    from . import kernels
    from .buffer import EpisodicBuffer
    from .nn import NetworkSpec, ema_update, grad_check, init_params
    from .streams import SampleSet

    def gradients():
        return grad_check(NetworkSpec(4, (8, 8), 3), 0) < 1e-6

    def arithmetic():
        mem = em.ErrorMemory(decay=0.99, margin=1.2, mu=1.0, initialized=True)
        ok = abs(em.compute_weights([2.0], mem)[0] - 0.5) < 1e-12
        ok &= abs(em.filter_outliers([1.0, 1.0, 1.0, 10.0]) - 1.0) < 1e-12
        em.update(mem, 2.0)
        return ok and abs(mem.mu - 1.01) < 1e-12

    def reservoir():
        hits = np.zeros(100)
        items = SampleSet(np.arange(100), np.zeros((100, 1)), np.zeros(100))
        for t in range(2000):
            buf = EpisodicBuffer(10, 1, seed=t)
            buf.offer(items)
            hits[buf.ids[:buf.size]] += 1
        freq = hits / 2000
        return bool(np.all(np.abs(freq - 0.1) < 0.03))

    def ema():
        spec = NetworkSpec(3, (4,), 2)
        w, s = init_params(spec, 1), init_params(spec, 2)
        gap = s.max_abs_diff(w)
        for _ in range(100):
            s = ema_update(s, w, 0.999)
        return abs(s.max_abs_diff(w) - 0.999 ** 100 * gap) < 1e-10

    return [("gradient check", gradients), ("error-memory arithmetic", arithmetic),
            ("reservoir uniformity (quick)", reservoir), ("EMA contraction", ema),
            (f"kernel backend: {kernels.BACKEND}", lambda: True)]


def _cmd_selftest(args):
    failed = 0
    for name, check in _selftest_checks():
        ok = bool(check())
        failed += not ok
        print(f"[{'PASS' if ok else 'FAIL'}] {name}")
    return 1 if failed else 0


def build_parser():
    p = argparse.ArgumentParser(prog="esmer", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train every seed of a JSON config")
    r.add_argument("config")
    r.add_argument("--output-dir", help="override config output_dir")
    r.add_argument("--workers", type=int, help="override config workers")
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("compare", help="mean ± std table over run directories")
    c.add_argument("dirs", nargs="+")
    c.add_argument("--out-dir", default=".", help="where comparison.csv/.txt are written")
    c.set_defaults(func=_cmd_compare)

    pd = sub.add_parser("plotdata", help="tidy CSV behind one analysis figure")
    pd.add_argument("dir", help="a run directory, or a folder of run directories")
    pd.add_argument("--figure", required=True, choices=harness.FIGURES)
    pd.add_argument("--out", help="output CSV path (default <dir>/plot_<figure>.csv)")
    pd.set_defaults(func=_cmd_plotdata)

    g = sub.add_parser("gradcheck", help="finite-difference check of both backward paths")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=_cmd_gradcheck)

    s = sub.add_parser("selftest", help="fast mechanical checks")
    s.set_defaults(func=_cmd_selftest)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (EsmerError, OSError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, ConfigError):
            err["details"] = exc.errors
        print(json.dumps(err), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
