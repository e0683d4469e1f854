"""The twelve acceptance criteria, one test each.

Every test prints a single ``[PASS]``/``[FAIL]`` line (shown even without
``-s``), repeated as a block in the terminal summary. Run standalone with
``python3 tests/test_acceptance.py`` for just the summary lines.
"""

import functools
import json
import os
import subprocess
import sys
import tempfile
import time
from dataclasses import replace

import numpy as np
import pytest

from esmer import harness, learners
from esmer.buffer import EpisodicBuffer
from esmer.config import load_config
from esmer.learners import Ablation
from esmer.nn import NetworkSpec, ema_update, grad_check, init_params
from esmer.streams import SampleSet, derive_seed, epoch_batches
from conftest import ACCEPTANCE_LINES

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, "configs")
SEEDS = [0, 1, 2, 3, 4]

pytestmark = pytest.mark.slow


def _config(name, **changes):
    cfg = load_config(os.path.join(CONFIGS, name))
    return replace(cfg, **changes) if changes else cfg


@functools.lru_cache(maxsize=None)
def _records(name, method):
    cfg = _config(name, method=method)
    return [harness.train(cfg, s)[1] for s in SEEDS]


def _line(number, title, ok, detail):
    return f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}: {detail}"


def _wins(a, b, strict=True):
    a, b = np.asarray(a), np.asarray(b)
    return int(np.sum(a > b) if strict else np.sum(a >= b))


# -- criteria ------------------------------------------------------------------

def criterion_1():
    t0 = time.perf_counter()
    err = grad_check(NetworkSpec(4, (8, 8), 3), 0,
                     weights=np.array([0.0, 0.5, 1.0, 1.0, 0.5, 0.0]))
    dt = time.perf_counter() - t0
    return err < 1e-6 and dt < 10, f"max rel error {err:.2e}, {dt:.2f}s"


def criterion_2():
    t0 = time.perf_counter()
    n, cap, trials = 200, 20, 20_000
    items = SampleSet(np.arange(n), np.zeros((n, 1)), np.zeros(n))
    chunks = [items[np.arange(i, i + 10)] for i in range(0, n, 10)]
    hits = np.zeros(n)
    for t in range(trials):
        buf = EpisodicBuffer(cap, 1, seed=derive_seed(2024, t))
        for c in chunks:
            buf.offer(c)
        hits[buf.ids] += 1
    freq = hits / trials
    dt = time.perf_counter() - t0
    ok = bool(np.all(np.abs(freq - 0.1) <= 0.01)) and dt < 30
    return ok, f"inclusion frequency in [{freq.min():.4f}, {freq.max():.4f}], {dt:.1f}s"


def _gate_violations(offers_csv):
    with open(offers_csv) as f:
        header = f.readline().strip().split(",")
        rows = [dict(zip(header, line.strip().split(","))) for line in f]
    bad = 0
    for r in rows:
        if int(r["slot"]) >= 0 and float(r["loss"]) > float(r["threshold"]):
            bad += 1
    return bad, len(rows), sum(int(r["slot"]) >= 0 for r in rows)


def criterion_3():
    results = []
    for _ in range(2):
        with tempfile.TemporaryDirectory() as d:
            cfg = _config("noisy.json", seeds=[0, 1], output_dir=d)
            cfg.probes.record_offers = True
            harness.run(cfg)
            run = os.path.join(d, cfg.hash())
            results.append([_gate_violations(os.path.join(run, f"seed_{s}", "offers.csv"))
                            for s in cfg.seeds])
    bad = sum(r[0] for r in results[0])
    offered = sum(r[1] for r in results[0])
    inserted = sum(r[2] for r in results[0])
    ok = bad == 0 and results[0] == results[1] and inserted > 0
    return ok, f"{bad} violations over {offered} arrivals ({inserted} insertions), " \
               f"replay {'deterministic' if results[0] == results[1] else 'NOT deterministic'}"


def criterion_4():
    from esmer import error_memory as em

    mem = em.ErrorMemory(decay=0.99, margin=1.2, mu=1.0, initialized=True)
    lam = em.compute_weights([2.0], mem)[0]
    lam_oracle = 1.0 / 2.0 if 2.0 > 1.2 * 1.0 else 1.0
    xs = [1.0, 1.0, 1.0, 10.0]
    m = sum(xs) / 4
    sd = (sum((x - m) ** 2 for x in xs) / 4) ** 0.5
    kept = [x for x in xs if x <= m + sd]
    fm, fm_oracle = em.filter_outliers(xs), sum(kept) / len(kept)
    mem2 = em.ErrorMemory(decay=0.99, margin=1.0, mu=1.0, initialized=True)
    em.update(mem2, 2.0)
    mu_oracle = 0.99 * 1.0 + 0.01 * 2.0
    errs = [abs(lam - lam_oracle), abs(fm - fm_oracle), abs(mem2.mu - mu_oracle)]
    ok = max(errs) < 1e-12 and lam_oracle == 0.5 and fm_oracle == 1.0
    return ok, f"lambda={float(lam)!r} filtered={float(fm)!r} mu={mem2.mu!r}, max error {max(errs):.1e}"


def criterion_5():
    steps = 0
    for seed in (0, 1):
        off = _config("default.json", method="esmer",
                      ablation=Ablation(weighting=False, stable=False, sensitive_sampling=False))
        er = _config("default.json", method="er")
        stream = harness.build_stream(off, seed)
        dims = (stream.tasks[0].train.features.shape[1], stream.num_classes_total)
        a, b = harness.init_for(off, seed, *dims), harness.init_for(er, seed, *dims)
        for t, task in enumerate(stream):
            learners.begin_task(a, t)
            learners.begin_task(b, t)
            for e in range(off.hyper.epochs_per_task):
                for batch in epoch_batches(task.train, off.hyper.batch_size,
                                           derive_seed(seed, 100, t, e)):
                    learners.train_step(a, batch)
                    learners.train_step(b, batch)
                    steps += 1
                    if not a.working.bitwise_equal(b.working):
                        return False, f"seed {seed}: trajectories diverge at step {a.step}"
                learners.end_epoch(a)
                learners.end_epoch(b)
        if learners.inference_params(a) is not a.working:
            return False, "ablated ESMER does not infer with the working model"
    return True, f"bitwise-identical parameters at all {steps} steps (2 seeds)"


def criterion_6():
    t0 = time.perf_counter()
    es = [r.buffer_noise for r in _records("purity.json", "esmer")]
    er = [r.buffer_noise for r in _records("purity.json", "er")]
    gap = np.asarray(er) - np.asarray(es)
    wins = int(np.sum(gap >= 0.10))
    dt = time.perf_counter() - t0
    return wins >= 4 and dt < 300, (f"noise fraction ESMER {np.round(es, 3).tolist()} vs "
                                    f"reservoir {np.round(er, 3).tolist()}; "
                                    f"{wins}/5 seeds >= 10 points lower, {dt:.0f}s")


def criterion_7():
    es = [r.final_accuracy() for r in _records("default.json", "esmer")]
    er = [r.final_accuracy() for r in _records("default.json", "er")]
    wins = _wins(es, er, strict=False)
    return wins >= 4, (f"Class-IL ESMER {np.mean(es):.3f} vs ER {np.mean(er):.3f}; "
                       f"ESMER >= ER in {wins}/5 seeds")


def _drift_at(rec, model, local=50):
    vals = [acc for m, _, step, acc in rec.drift if m == model and step == local]
    return vals[0]


def criterion_8():
    es = [_drift_at(r, "stable") for r in _records("default.json", "esmer")]
    er = [_drift_at(r, "working") for r in _records("default.json", "er")]
    wins = _wins(es, er)
    return wins >= 4, (f"task-1 accuracy 50 steps into task 2: ESMER {np.mean(es):.3f} vs "
                       f"ER {np.mean(er):.3f}; higher in {wins}/5 seeds")


def criterion_9():
    es = [np.std(r.recency["stable"]) for r in _records("default.json", "esmer")]
    er = [np.std(r.recency["working"]) for r in _records("default.json", "er")]
    wins = _wins(er, es)
    return wins >= 4, (f"recency std ESMER {np.mean(es):.3f} vs ER {np.mean(er):.3f}; "
                       f"lower in {wins}/5 seeds")


def criterion_10():
    recs = _records("noisy.json", "esmer")
    st = [r.final_accuracy("stable") for r in recs]
    wk = [r.final_accuracy("working") for r in recs]
    wins = _wins(st, wk, strict=False)
    return wins >= 3, (f"Class-IL stable {np.mean(st):.3f} vs working {np.mean(wk):.3f}; "
                       f"stable >= working in {wins}/5 seeds")


def criterion_11():
    spec = NetworkSpec(8, (16, 16), 4)
    w, s = init_params(spec, 1), init_params(spec, 2)
    gap0 = s.max_abs_diff(w)
    worst = 0.0
    for k in range(1, 101):
        s = ema_update(s, w, 0.999)
        worst = max(worst, abs(s.max_abs_diff(w) - 0.999 ** k * gap0))
    # the same contraction through the learner: frozen working model, r = 1
    st = learners.init_learner("esmer", spec, learners.HyperParams(update_rate=1.0,
                                                                   ema_decay=0.999), 0)
    st.stable = init_params(spec, 2)
    gap1 = st.stable.max_abs_diff(st.working)
    for k in range(1, 101):
        if st.rng_ema.random() < st.hp.update_rate:
            st.stable = ema_update(st.stable, st.working, st.hp.ema_decay)
        worst = max(worst, abs(st.stable.max_abs_diff(st.working) - 0.999 ** k * gap1))
    return worst < 1e-10, f"max deviation from 0.999^k decay over 100 steps {worst:.1e}"


def criterion_12():
    with tempfile.TemporaryDirectory() as d:
        cfg_path = os.path.join(d, "cfg.json")
        with open(cfg_path, "w") as f:
            json.dump({"seeds": [0, 1], "stream": {"noise_rate": 0.2},
                       "probes": {"record_offers": True}}, f)
        outs = []
        for k in range(2):
            out = os.path.join(d, f"out{k}")
            r = subprocess.run([sys.executable, "-m", "esmer", "run", cfg_path,
                                "--output-dir", out], capture_output=True, text=True)
            if r.returncode:
                return False, f"run failed: {r.stderr.strip()}"
            files = {}
            for root, _, names in os.walk(out):
                for n in names:
                    if n.endswith(".csv"):
                        p = os.path.join(root, n)
                        with open(p, "rb") as fh:
                            files[os.path.relpath(p, out)] = fh.read()
            outs.append(files)
    same = outs[0] == outs[1] and len(outs[0]) > 0
    return same, f"{len(outs[0])} CSV files {'byte-identical' if same else 'DIFFER'}"


CRITERIA = [
    (1, "gradient correctness", criterion_1),
    (2, "reservoir uniformity", criterion_2),
    (3, "error-gate exactness", criterion_3),
    (4, "weight/filter/momentum arithmetic", criterion_4),
    (5, "reduction to ER", criterion_5),
    (6, "buffer purity under 40% noise", criterion_6),
    (7, "ESMER >= ER on Class-IL", criterion_7),
    (8, "drift mitigation", criterion_8),
    (9, "recency bias", criterion_9),
    (10, "stable vs working model", criterion_10),
    (11, "EMA contraction", criterion_11),
    (12, "reproducibility", criterion_12),
]


@pytest.mark.parametrize("number,title,fn", CRITERIA, ids=[f"c{n}" for n, _, _ in CRITERIA])
def test_criterion(number, title, fn, capsys, request):
    ok, detail = fn()
    line = _line(number, title, ok, detail)
    with capsys.disabled():
        print("\n" + line)
    request.config.stash.setdefault(ACCEPTANCE_LINES, []).append(line)
    assert ok, line


if __name__ == "__main__":
    failed = 0
    for number, title, fn in CRITERIA:
        ok, detail = fn()
        print(_line(number, title, ok, detail), flush=True)
        failed += not ok
    sys.exit(1 if failed else 0)
