"""Evaluation quantities: accuracy matrices, forgetting, recency bias and probes.

Probes observe a run through read-only hooks and never touch learner RNGs
or parameters, so enabling them leaves the trajectory unchanged.
"""

import numpy as np

from .errors import RejectedInputError
from .learners import inference_params, predict, predict_proba


def evaluate_accuracy(params, test_sets, head_mode="class_il", class_sets=None):
    """Accuracy per test set. ``task_il`` restricts each set to its own class mask."""
    accs = []
    for j, ts in enumerate(test_sets):
        if len(ts) == 0:
            accs.append(float("nan"))
            continue
        mask = class_sets[j] if head_mode == "task_il" else None
        accs.append(float(np.mean(predict(params, ts.features, mask) == ts.labels)))
    return np.array(accs)


def recency_profile(params, test_set, class_map):
    """Mean softmax mass per task group over ``test_set``."""
    num_classes = params.biases[-1].shape[0]
    flat = [c for group in class_map for c in group]
    if sorted(flat) != list(range(num_classes)):
        raise RejectedInputError("task->classes map must partition the class space")
    probs = predict_proba(params, test_set.features)
    mass = np.stack([probs[:, list(g)].sum(axis=1) for g in class_map], axis=1)
    return mass.mean(axis=0)


def forgetting(matrix):
    """Per-task best-minus-final drop and its mean; ``None`` when fewer than 2 tasks.

    The best includes the final row, so a task that only improves scores 0.
    """
    a = np.asarray(matrix, dtype=np.float64)
    t = a.shape[0]
    if t < 2:
        return None
    per_task = np.array([a[:, j].max() - a[t - 1, j] for j in range(t - 1)])
    return per_task, float(per_task.mean())


def accuracy_on(params, samples, mask):
    """Agreement with observed labels on the rows selected by ``mask``; NaN if none."""
    if not mask.any():
        return float("nan")
    return float(np.mean(predict(params, samples.features[mask]) == samples.labels[mask]))


def model_views(state):
    """(name, params) pairs to evaluate: the stable model first when it is in use."""
    if state.uses_stable:
        return [("stable", state.stable), ("working", state.working)]
    return [("working", state.working)]


class Probes:
    """Run hooks collecting drift, memorization and buffer-purity traces.

    ``drift_every``: evaluate task-1 accuracy every that many steps of the
    second task (including its first step); ``memorization``: per-epoch
    accuracy on clean vs mislabelled training samples of the current task;
    ``purity_every``: buffer noise fraction each time that many more
    candidates have been offered. ``None``/``False`` disables a probe.
    """

    def __init__(self, drift_every=20, memorization=True, purity_every=50):
        self.drift_every = drift_every
        self.memorization = memorization
        self.purity_every = purity_every
        self.drift = [] if drift_every else None
        self.memo = [] if memorization else None
        self.purity = [] if purity_every else None
        self._probe_set = None
        self._purity_mark = 0

    def start(self, stream):
        if len(stream) > 1:
            self._probe_set = stream.tasks[0].test

    def before_step(self, state, task_index, local_step):
        if self.drift is None or task_index != 1 or self._probe_set is None:
            return
        if local_step % self.drift_every == 0:
            self._record_drift(state, local_step)

    def after_step(self, state, task_index, local_step):
        if self.purity is not None:
            mark = state.buffer.candidates_seen // self.purity_every
            if mark > self._purity_mark:
                self._purity_mark = mark
                self.purity.append((state.buffer.candidates_seen, state.buffer.noise_fraction()))

    def task_end(self, state, task_index, local_steps):
        # closes the window when the step count is a multiple of the interval
        if self.drift is not None and task_index == 1 and self._probe_set is not None \
                and local_steps % self.drift_every == 0 and local_steps > 0:
            self._record_drift(state, local_steps)

    def _record_drift(self, state, local_step):
        for name, params in model_views(state):
            acc = evaluate_accuracy(params, [self._probe_set])[0]
            self.drift.append((name, state.step, local_step, acc))

    def epoch(self, state, task_index, epoch, train):
        if self.memo is None:
            return
        clean = train.labels == train.true_labels
        for name, params in model_views(state):
            self.memo.append((name, task_index, epoch, accuracy_on(params, train, clean),
                              accuracy_on(params, train, ~clean)))


def final_profile(state, stream):
    """Recency profiles of every model view at the end of training (Class-IL streams)."""
    if stream.mode != "class_il":
        return {}
    test = stream.full_test()
    return {name: recency_profile(params, test, stream.class_map())
            for name, params in model_views(state)}


def accuracy_rows(state, stream):
    """One row per (model, head) of accuracies on every task's test set."""
    tests = [t.test for t in stream.tasks]
    classes = stream.class_map()
    rows = {}
    for name, params in model_views(state):
        for head in ("class_il", "task_il"):
            rows[(name, head)] = evaluate_accuracy(params, tests, head, classes)
    return rows


__all__ = ["evaluate_accuracy", "recency_profile", "forgetting", "Probes", "final_profile",
           "accuracy_rows", "model_views", "inference_params"]
