"""Training-step state machines for ESMER, ER and logit replay.

All three learners share one state type and one update path: per-sample CE
on the task batch (optionally reweighted), a memory term, a single SGD step.
That sharing is what makes ESMER with every component switched off
reproduce ER exactly.

Randomness is split into independent streams derived from the run seed:
parameter init, memory-batch draws, the EMA coin and the reservoir. Turning
a component off therefore never shifts the draws of another component.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from . import error_memory as em
from .buffer import EpisodicBuffer
from .errors import NumericFaultError, RejectedInputError
from .nn import (backward, ce_dlogits, ema_update, forward, init_params, logits_of,
                 mse, mse_dlogits, per_sample_ce, sgd_step, softmax)
from .streams import derive_seed

METHODS = ("esmer", "er", "logit_replay")


@dataclass
class HyperParams:
    lr: float = 0.03
    ema_decay: float = 0.98
    update_rate: float = 0.5
    consistency_weight: float = 0.15
    margin: float = 1.0
    error_decay: float = 0.9
    warmup_epochs: int = 1
    batch_size: int = 32
    memory_batch_size: int = 32
    buffer_capacity: int = 100
    epochs_per_task: int = 5

    def validate(self):
        problems = []
        if not self.lr > 0:
            problems.append("lr must be > 0")
        for name in ("ema_decay", "error_decay"):
            if not 0.0 < getattr(self, name) < 1.0:
                problems.append(f"{name} must lie in (0, 1)")
        if not 0.0 <= self.update_rate <= 1.0:
            problems.append("update_rate must lie in [0, 1]")
        if self.consistency_weight < 0:
            problems.append("consistency_weight must be >= 0")
        if not self.margin > 0:
            problems.append("margin must be > 0")
        for name in ("batch_size", "memory_batch_size", "buffer_capacity"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        for name in ("warmup_epochs", "epochs_per_task"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0")
        return problems


@dataclass
class Ablation:
    """Component switches; all False turns ESMER into ER."""

    weighting: bool = True
    stable: bool = True
    sensitive_sampling: bool = True

    @property
    def label(self):
        off = [k for k, v in asdict(self).items() if not v]
        return "" if not off else "[-" + ",-".join(off) + "]"


@dataclass
class StepReport:
    task_loss: float
    memory_loss: float
    total_loss: float
    mean_weight: float
    inserted: int
    mu: float
    ema_updated: bool = False


class OfferLog:
    """Per-arrival record of the buffer gate: loss, threshold, candidacy, slot."""

    fields = ("step", "id", "loss", "threshold", "candidate", "slot")

    def __init__(self):
        self._chunks = []

    def record(self, step, ids, losses, threshold, candidate, slots):
        self._chunks.append((np.full(len(ids), step), ids.copy(), losses.copy(),
                             np.full(len(ids), threshold), candidate.copy(), slots.copy()))

    def arrays(self):
        if not self._chunks:
            return {f: np.empty(0) for f in self.fields}
        return {f: np.concatenate([c[i] for c in self._chunks]) for i, f in enumerate(self.fields)}

    def __len__(self):
        return sum(len(c[0]) for c in self._chunks)


@dataclass
class LearnerState:
    method: str
    spec: object
    hp: HyperParams
    working: object
    buffer: EpisodicBuffer
    rng_memory: np.random.Generator
    rng_ema: np.random.Generator
    stable: object = None
    error_mem: em.ErrorMemory = None
    ablation: Ablation = field(default_factory=Ablation)
    replay_weights: tuple = (0.2, 0.5)
    step: int = 0
    task_index: int = -1
    offer_log: OfferLog = None

    @property
    def uses_stable(self):
        return self.method == "esmer" and self.ablation.stable


def init_learner(method, spec, hp, seed, ablation=None, replay_weights=(0.2, 0.5),
                 record_offers=False):
    if method not in METHODS:
        raise RejectedInputError(f"unknown method {method!r}; expected one of {METHODS}")
    problems = hp.validate()
    if problems:
        raise RejectedInputError("; ".join(problems))
    working = init_params(spec, derive_seed(seed, 1))
    state = LearnerState(
        method=method, spec=spec, hp=hp, working=working,
        buffer=EpisodicBuffer(hp.buffer_capacity, spec.input_dim, derive_seed(seed, 4),
                              logit_dim=spec.num_classes if method == "logit_replay" else None),
        rng_memory=np.random.default_rng(derive_seed(seed, 2)),
        rng_ema=np.random.default_rng(derive_seed(seed, 3)),
        ablation=ablation or Ablation(),
        replay_weights=tuple(replay_weights),
        offer_log=OfferLog() if record_offers else None,
    )
    if method == "esmer":
        state.stable = working.copy()
        state.error_mem = em.ErrorMemory(hp.error_decay, hp.margin)
    return state


def begin_task(state, task_index):
    state.task_index = task_index
    if state.error_mem is not None:
        em.on_task_boundary(state.error_mem, state.hp.warmup_epochs)


def end_epoch(state):
    if state.error_mem is not None:
        state.error_mem.end_epoch()


def _check_finite(state, **values):
    bad = {k: v for k, v in values.items() if not np.all(np.isfinite(v))}
    if bad:
        raise NumericFaultError(f"non-finite loss at step {state.step}: {sorted(bad)}",
                                diagnostics={"step": state.step, "task": state.task_index,
                                             **{k: np.asarray(v).tolist() for k, v in bad.items()}})


def _draw_memory(state):
    idx = state.buffer.sample_batch(state.hp.memory_batch_size, state.rng_memory)
    return idx if len(idx) else None


def _task_term(state, batch, weights):
    z, trace = forward(state.working, batch.features)
    ce = per_sample_ce(z, batch.labels)
    _check_finite(state, task_ce=ce)
    loss = float(np.mean(weights * ce))
    return loss, backward(state.working, trace, ce_dlogits(z, batch.labels, weights)), z


def _replay_term(state, idx, ce_weight=1.0, targets=None, mse_weight=0.0):
    """CE on buffer items ``idx`` plus optional logit MSE against ``targets``."""
    mb = state.buffer.take(idx)
    z, trace = forward(state.working, mb.features)
    ce = per_sample_ce(z, mb.labels)
    _check_finite(state, memory_ce=ce)
    dz = ce_dlogits(z, mb.labels, np.full(len(idx), ce_weight))
    loss = ce_weight * float(np.mean(ce))
    if mse_weight > 0:
        dz = dz + mse_dlogits(z, targets, mse_weight)
        loss += mse_weight * mse(z, targets)
    return loss, backward(state.working, trace, dz)


def _offer(state, batch, mask, losses, threshold, logits=None):
    cand = batch[mask]
    slots = state.buffer.offer(cand, state.step,
                               None if logits is None else logits[mask])
    if state.offer_log is not None:
        full = np.full(len(batch), -1, dtype=np.int64)
        full[mask] = slots
        state.offer_log.record(state.step, batch.ids,
                               np.full(len(batch), np.nan) if losses is None else losses,
                               threshold, mask, full)
    return int(np.sum(slots >= 0))


def esmer_step(state, batch):
    """One ESMER iteration on a task batch (a :class:`SampleSet`)."""
    hp, ab, mem = state.hp, state.ablation, state.error_mem
    mem_idx = _draw_memory(state)

    judge = state.stable if ab.stable else state.working
    stable_losses = per_sample_ce(logits_of(judge, batch.features), batch.labels)
    _check_finite(state, stable_ce=stable_losses)
    weights = em.compute_weights(stable_losses, mem) if ab.weighting \
        else np.ones(len(batch))

    task_loss, grads, _ = _task_term(state, batch, weights)
    memory_loss = 0.0
    if mem_idx is not None:
        gamma = hp.consistency_weight if ab.stable else 0.0
        targets = logits_of(state.stable, state.buffer.features[mem_idx]) if gamma > 0 else None
        memory_loss, mgrads = _replay_term(state, mem_idx, targets=targets, mse_weight=gamma)
        grads = grads + mgrads
    state.working = sgd_step(state.working, grads, hp.lr)

    ema_updated = False
    if ab.stable and hp.update_rate > state.rng_ema.random():
        state.stable = ema_update(state.stable, state.working, hp.ema_decay)
        ema_updated = True

    threshold = mem.threshold
    mask = em.low_loss_mask(stable_losses, mem) if ab.sensitive_sampling \
        else np.ones(len(batch), dtype=bool)
    inserted = _offer(state, batch, mask, stable_losses, threshold)

    em.update(mem, em.filter_outliers(stable_losses))
    state.step += 1
    return state, StepReport(task_loss, memory_loss, task_loss + memory_loss,
                             float(np.mean(weights)), inserted, mem.mu, ema_updated)


def er_step(state, batch):
    """Experience replay: mean CE on the task batch plus mean CE on a memory batch."""
    mem_idx = _draw_memory(state)
    ones = np.ones(len(batch))
    task_loss, grads, _ = _task_term(state, batch, ones)
    memory_loss = 0.0
    if mem_idx is not None:
        memory_loss, mgrads = _replay_term(state, mem_idx)
        grads = grads + mgrads
    state.working = sgd_step(state.working, grads, state.hp.lr)
    inserted = _offer(state, batch, np.ones(len(batch), dtype=bool), None, np.inf)
    state.step += 1
    return state, StepReport(task_loss, memory_loss, task_loss + memory_loss, 1.0, inserted,
                             float("nan"))


def logit_replay_step(state, batch):
    """CE on the task batch + logit MSE and CE on two independent memory draws."""
    w_mse, w_ce = state.replay_weights
    idx_mse, idx_ce = _draw_memory(state), _draw_memory(state)
    ones = np.ones(len(batch))
    task_loss, grads, z = _task_term(state, batch, ones)
    memory_loss = 0.0
    if idx_mse is not None:
        if w_mse > 0:
            loss, g = _replay_term(state, idx_mse, ce_weight=0.0,
                                   targets=state.buffer.logits[idx_mse], mse_weight=w_mse)
            memory_loss += loss
            grads = grads + g
        if w_ce > 0:
            loss, g = _replay_term(state, idx_ce, ce_weight=w_ce)
            memory_loss += loss
            grads = grads + g
    state.working = sgd_step(state.working, grads, state.hp.lr)
    inserted = _offer(state, batch, np.ones(len(batch), dtype=bool), None, np.inf, logits=z)
    state.step += 1
    return state, StepReport(task_loss, memory_loss, task_loss + memory_loss, 1.0, inserted,
                             float("nan"))


_STEPS = {"esmer": esmer_step, "er": er_step, "logit_replay": logit_replay_step}


def train_step(state, batch):
    return _STEPS[state.method](state, batch)


def inference_params(state):
    """Stable model for ESMER (unless ablated), the single model otherwise."""
    return state.stable if state.uses_stable else state.working


# -- prediction ----------------------------------------------------------------

def masked_argmax(logits, mask=None):
    """Row-wise argmax over allowed classes; ties go to the lowest index."""
    logits = np.atleast_2d(logits)
    if mask is None:
        return np.argmax(logits, axis=1)
    allowed = np.zeros(logits.shape[1], dtype=bool)
    allowed[list(mask)] = True
    if not allowed.any():
        raise RejectedInputError("class mask is empty")
    return np.argmax(np.where(allowed, logits, -np.inf), axis=1)


def predict(params, features, head_mode=None):
    """Predicted class per row. ``head_mode`` is None (all classes) or a class mask."""
    if head_mode is not None and len(head_mode) == 0:
        raise RejectedInputError("class mask is empty")
    return masked_argmax(logits_of(params, features), head_mode)


def predict_proba(params, features):
    return softmax(logits_of(params, features))
