"""Experiment runner, result files, method comparison and figure data.

Output layout of ``run``::

    <output_dir>/<config hash>/
        config.json           normalized config (all defaults filled in)
        summary.json          per-seed finals, wall-clock, faults
        seed_<s>/metrics.csv  long-format metrics, see METRIC_COLUMNS
        seed_<s>/buffer.csv   final buffer: slot, id, label, true_label, is_noisy, insert_step
        seed_<s>/offers.csv   per-arrival gate log (only with probes.record_offers)
        seed_<s>/record.json  the full RunRecord

``metrics.csv`` columns: run_id, seed, method, model, metric, i, j, step, value.
Metrics and the meaning of i/j/step:

    acc_class_il, acc_task_il   i = task just finished, j = evaluated task
    final_acc_class_il/task_il  i = last task; value = mean over all tasks
    forgetting                  j = task;  mean_forgetting has no index
    recency                     j = task
    drift_task1                 step = global step, i = step within task 2
    mem_clean, mem_noisy        i = task, j = epoch (0 = before training)
    buffer_noise                step = candidates offered so far
    buffer_noise_final          no index

Empty index cells are written as empty strings. Floats use ``repr`` so files
are exact and byte-stable.
"""

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import learners
from .config import ExperimentConfig, parse_config
from .errors import AbsentProbeError, ComparisonError, NumericFaultError
from .metrics import Probes, accuracy_rows, final_profile, forgetting
from .nn import NetworkSpec
from .streams import (IdxSource, SyntheticSource, add_label_noise, build_pool, derive_seed,
                      epoch_batches, make_class_il_stream, make_gcil_stream)

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("run_id", "seed", "method", "model", "metric", "i", "j", "step", "value")
FIGURES = ("drift", "recency", "purity", "memorization", "taskwise")


@dataclass
class RunRecord:
    config_hash: str
    seed: int
    method: str
    models: list = field(default_factory=list)
    acc: dict = field(default_factory=dict)      # "model/head" -> T x T matrix (list of rows)
    final: dict = field(default_factory=dict)    # "model/head" -> mean final accuracy
    recency: dict = field(default_factory=dict)  # model -> per-task probability mass
    drift: list = None          # (model, global step, local step, task-1 accuracy)
    memorization: list = None   # (model, task, epoch, clean acc, noisy acc)
    purity: list = None         # (offers, noise fraction)
    buffer_noise: float = 0.0
    steps: int = 0
    wall_clock: float = 0.0
    fault: str = None

    @property
    def run_id(self):
        return f"{self.config_hash}-s{self.seed}"

    @property
    def inference_model(self):
        return self.models[0] if self.models else "working"

    def matrix(self, model=None, head="class_il"):
        return np.array(self.acc[f"{model or self.inference_model}/{head}"])

    def final_accuracy(self, model=None, head="class_il"):
        return self.final[f"{model or self.inference_model}/{head}"]

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, d):
        return cls(**d)


def build_stream(cfg, seed):
    dseed = cfg.stream.dataset_seed if cfg.stream.dataset_seed is not None else seed
    src = cfg.source
    if src.kind == "idx":
        source = IdxSource(src.train_images, src.train_labels, src.test_images, src.test_labels)
    else:
        source = SyntheticSource(src.num_classes, src.dim, src.separation, src.std,
                                 src.train_per_class, src.test_per_class)
    pool = build_pool(source, derive_seed(dseed, 11))
    st = cfg.stream
    if st.mode == "class_il":
        stream = make_class_il_stream(pool, st.n_tasks, derive_seed(dseed, 12))
    else:
        stream = make_gcil_stream(pool, st.n_tasks, st.c_max, st.samples_per_task,
                                  st.mode.split("_", 1)[1], dseed, st.zipf_exponent)
    return add_label_noise(stream, st.noise_rate, derive_seed(dseed, 13))


def init_for(cfg, seed, input_dim, num_classes):
    spec = NetworkSpec(input_dim, tuple(cfg.network.hidden_dims), num_classes)
    return learners.init_learner(cfg.method, spec, cfg.hyper, seed,
                                 ablation=cfg.ablation,
                                 replay_weights=(cfg.logit_replay.w_mse, cfg.logit_replay.w_ce),
                                 record_offers=cfg.probes.record_offers)


def train(cfg, seed, stream=None, probes=None, state=None):
    """Train one seed; return ``(state, record, stream)`` with metrics filled in."""
    t0 = time.perf_counter()
    stream = stream or build_stream(cfg, seed)
    state = state or init_for(cfg, seed, stream.tasks[0].train.features.shape[1],
                              stream.num_classes_total)
    if probes is None:
        p = cfg.probes
        probes = Probes(p.drift_every, p.memorization, p.purity_every)
    probes.start(stream)
    record = RunRecord(cfg.hash(), seed, cfg.method_label,
                       models=["stable", "working"] if state.uses_stable else ["working"])
    n = len(stream)
    rows = {}
    try:
        for t, task in enumerate(stream):
            learners.begin_task(state, t)
            local = 0
            for e in range(cfg.hyper.epochs_per_task):
                probes.epoch(state, t, e, task.train)
                for batch in epoch_batches(task.train, cfg.hyper.batch_size,
                                           derive_seed(seed, 100, t, e)):
                    probes.before_step(state, t, local)
                    learners.train_step(state, batch)
                    local += 1
                    probes.after_step(state, t, local)
                learners.end_epoch(state)
            probes.epoch(state, t, cfg.hyper.epochs_per_task, task.train)
            probes.task_end(state, t, local)
            for key, accs in accuracy_rows(state, stream).items():
                rows.setdefault(key, []).append(accs)
    except NumericFaultError as exc:
        record.fault = f"{exc} {json.dumps(exc.diagnostics)[:500]}"
        log.error("seed %d aborted: %s", seed, exc)
    for (model, head), mat in rows.items():
        record.acc[f"{model}/{head}"] = [list(map(float, r)) for r in mat]
        if len(mat) == n:
            record.final[f"{model}/{head}"] = float(np.nanmean(mat[-1]))
    if record.fault is None:
        record.recency = {k: list(map(float, v)) for k, v in final_profile(state, stream).items()}
    record.drift = probes.drift
    record.memorization = probes.memo
    record.purity = probes.purity
    record.buffer_noise = state.buffer.noise_fraction()
    record.steps = state.step
    record.wall_clock = time.perf_counter() - t0
    return state, record, stream


def _fmt(v):
    if v is None or v == "":
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def metric_rows(record):
    base = (record.run_id, record.seed, record.method)

    def row(model, metric, value, i="", j="", step=""):
        return [*map(_fmt, (*base, model, metric, i, j, step)), _fmt(value)]

    out = []
    for key, mat in record.acc.items():
        model, head = key.split("/")
        for i, r in enumerate(mat):
            for j, v in enumerate(r):
                out.append(row(model, f"acc_{head}", v, i, j))
    for key, v in record.final.items():
        model, head = key.split("/")
        out.append(row(model, f"final_acc_{head}", v, len(record.acc[key]) - 1))
    for key, mat in record.acc.items():
        model, head = key.split("/")
        if head != "class_il" or key not in record.final:
            continue
        fg = forgetting(mat)
        if fg is not None:
            for j, v in enumerate(fg[0]):
                out.append(row(model, "forgetting", v, j=j))
            out.append(row(model, "mean_forgetting", fg[1]))
    for model, prof in record.recency.items():
        for j, v in enumerate(prof):
            out.append(row(model, "recency", v, j=j))
    for model, gstep, lstep, acc in record.drift or []:
        out.append(row(model, "drift_task1", acc, i=lstep, step=gstep))
    for model, t, e, clean, noisy in record.memorization or []:
        out.append(row(model, "mem_clean", clean, t, e))
        out.append(row(model, "mem_noisy", noisy, t, e))
    for offers, frac in record.purity or []:
        out.append(row("", "buffer_noise", frac, step=offers))
    out.append(row("", "buffer_noise_final", record.buffer_noise))
    return out


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_seed_outputs(directory, state, record):
    os.makedirs(directory, exist_ok=True)
    _write_csv(os.path.join(directory, "metrics.csv"), METRIC_COLUMNS, metric_rows(record))
    state.buffer.dump_csv(os.path.join(directory, "buffer.csv"))
    if state.offer_log is not None:
        a = state.offer_log.arrays()
        _write_csv(os.path.join(directory, "offers.csv"), a.keys(),
                   zip(*[[_fmt(v.item()) for v in col] for col in a.values()]))
    rec = record.to_json()
    rec.pop("wall_clock")
    with open(os.path.join(directory, "record.json"), "w") as f:
        json.dump(rec, f, indent=1, sort_keys=True)


def _run_one(args):
    cfg_dict, seed, run_dir = args
    cfg = parse_config(cfg_dict)
    state, record, _ = train(cfg, seed)
    write_seed_outputs(os.path.join(run_dir, f"seed_{seed}"), state, record)
    return record


def run(cfg):
    """Train every seed of ``cfg``; write the output tree; return the records."""
    if isinstance(cfg, dict):
        cfg = parse_config(cfg)
    run_dir = os.path.join(cfg.output_dir, cfg.hash())
    os.makedirs(run_dir, exist_ok=True)
    cfg_dict = cfg.to_dict()
    with open(os.path.join(run_dir, "config.json"), "w") as f:
        json.dump(cfg_dict, f, indent=2, sort_keys=True)
    jobs = [(cfg_dict, s, run_dir) for s in cfg.seeds]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            records = list(pool.map(_run_one, jobs))
    else:
        records = [_run_one(j) for j in jobs]
    summary = {
        "config_hash": cfg.hash(),
        "method": cfg.method_label,
        "runs": [{"seed": r.seed, "run_id": r.run_id, "final": r.final, "fault": r.fault,
                  "buffer_noise": r.buffer_noise, "wall_clock": r.wall_clock}
                 for r in records],
        "faults": [r.seed for r in records if r.fault],
    }
    with open(os.path.join(run_dir, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    return records


def load_run_dir(directory):
    """Config and records of a run directory (the ``<config hash>`` folder)."""
    with open(os.path.join(directory, "config.json")) as f:
        cfg = parse_config(json.load(f))
    records = []
    for s in cfg.seeds:
        path = os.path.join(directory, f"seed_{s}", "record.json")
        if os.path.exists(path):
            with open(path) as f:
                records.append(RunRecord.from_json(json.load(f)))
    return cfg, records


# -- comparison ----------------------------------------------------------------

def comparable_key(cfg):
    h = cfg.hyper
    return json.dumps({"source": asdict(cfg.source), "stream": asdict(cfg.stream),
                       "network": asdict(cfg.network),
                       "schedule": [h.epochs_per_task, h.batch_size, h.memory_batch_size,
                                    h.buffer_capacity]}, sort_keys=True)


@dataclass
class MethodSummary:
    method: str
    n: int
    class_il_mean: float
    class_il_std: float
    task_il_mean: float
    task_il_std: float
    per_task: list   # mean final Class-IL accuracy per task


def compare(groups):
    """Summaries per method from ``{method: (config, [records])}``.

    Std is the population std over seeds. Groups must share data, network
    and schedule settings; seeds missing from a group only log a warning.
    """
    keys = {comparable_key(cfg) for cfg, _ in groups.values()}
    if len(keys) > 1:
        raise ComparisonError("run groups differ in source, stream, network or schedule settings")
    all_seeds = set().union(*({r.seed for r in recs} for _, recs in groups.values()))
    out = []
    for method, (cfg, recs) in groups.items():
        recs = [r for r in recs if r.fault is None and r.final]
        if not recs:
            raise ComparisonError(f"{method}: no completed records")
        missing = all_seeds - {r.seed for r in recs}
        if missing:
            log.warning("%s: missing seeds %s; comparing on the rest", method, sorted(missing))
        cil = np.array([r.final_accuracy() for r in recs])
        til = np.array([r.final_accuracy(head="task_il") for r in recs])
        per_task = np.mean([r.matrix()[-1] for r in recs], axis=0)
        out.append(MethodSummary(method, len(recs), float(cil.mean()), float(cil.std()),
                                 float(til.mean()), float(til.std()), per_task.tolist()))
    return out


def summary_table(summaries):
    head = ["method", "n", "class_il", "task_il"]
    ntask = max(len(s.per_task) for s in summaries)
    head += [f"task{j}" for j in range(ntask)]
    rows = []
    for s in summaries:
        rows.append([s.method, str(s.n), f"{100 * s.class_il_mean:.2f} ± {100 * s.class_il_std:.2f}",
                     f"{100 * s.task_il_mean:.2f} ± {100 * s.task_il_std:.2f}",
                     *[f"{100 * v:.2f}" for v in s.per_task]])
    widths = [max(len(r[i]) for r in [head, *rows]) for i in range(len(head))]
    fmt = lambda r: "  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()  # noqa: E731
    return "\n".join([fmt(head), fmt(["-" * w for w in widths]), *map(fmt, rows)])


def write_comparison(summaries, path):
    ntask = max(len(s.per_task) for s in summaries)
    rows = [[s.method, s.n, _fmt(s.class_il_mean), _fmt(s.class_il_std), _fmt(s.task_il_mean),
             _fmt(s.task_il_std), *map(_fmt, s.per_task)] for s in summaries]
    _write_csv(path, ["method", "n", "class_il_mean", "class_il_std", "task_il_mean",
                      "task_il_std", *[f"task{j}" for j in range(ntask)]], rows)


def compare_dirs(directories):
    groups = {}
    for d in directories:
        cfg, recs = load_run_dir(d)
        name = cfg.method_label
        if name in groups:
            name = f"{name}@{cfg.hash()}"
        groups[name] = (cfg, recs)
    return compare(groups)


# -- figure data ---------------------------------------------------------------

PLOT_COLUMNS = {
    "drift": ("run_id", "method", "model", "step", "task1_accuracy"),
    "recency": ("run_id", "method", "model", "task", "probability"),
    "purity": ("run_id", "method", "offer_count", "noise_fraction"),
    "memorization": ("run_id", "method", "model", "task", "epoch", "clean_accuracy",
                     "noisy_accuracy"),
    "taskwise": ("run_id", "method", "model", "after_task", "eval_task", "accuracy"),
}

_PROBE_KEYS = {"drift": "probes.drift_every", "purity": "probes.purity_every",
               "memorization": "probes.memorization", "recency": "stream.mode (class_il only)"}


def emit_plot_data(records, figure, path):
    """Write the tidy CSV behind ``figure``; raise if its probe was off."""
    if figure not in PLOT_COLUMNS:
        raise ValueError(f"unknown figure {figure!r}; choose from {FIGURES}")
    rows = []
    for r in records:
        if figure == "drift":
            if r.drift is None:
                raise AbsentProbeError(figure, _PROBE_KEYS[figure])
            rows += [[r.run_id, r.method, m, g, _fmt(a)] for m, g, _, a in r.drift]
        elif figure == "recency":
            if not r.recency:
                raise AbsentProbeError(figure, _PROBE_KEYS[figure])
            for m, prof in r.recency.items():
                rows += [[r.run_id, r.method, m, j, _fmt(v)] for j, v in enumerate(prof)]
        elif figure == "purity":
            if r.purity is None:
                raise AbsentProbeError(figure, _PROBE_KEYS[figure])
            rows += [[r.run_id, r.method, n, _fmt(v)] for n, v in r.purity]
        elif figure == "memorization":
            if r.memorization is None:
                raise AbsentProbeError(figure, _PROBE_KEYS[figure])
            rows += [[r.run_id, r.method, m, t, e, _fmt(c), _fmt(nz)]
                     for m, t, e, c, nz in r.memorization]
        else:
            for key, mat in r.acc.items():
                model, head = key.split("/")
                if head == "class_il":
                    rows += [[r.run_id, r.method, model, i, j, _fmt(v)]
                             for i, row in enumerate(mat) for j, v in enumerate(row)]
    _write_csv(path, PLOT_COLUMNS[figure], rows)
    return path
