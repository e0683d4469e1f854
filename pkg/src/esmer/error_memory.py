"""Running memory of task-batch errors and the low-loss predicate built on it."""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import RejectedInputError


@dataclass
class ErrorMemory:
    """Momentum estimate of the filtered stable-model task loss.

    Until the first post-warm-up update the memory is *uninitialized*: all
    samples get weight 1 and every sample is a buffer candidate.
    """

    decay: float = 0.99
    margin: float = 1.0
    mu: float = 0.0
    warmup_epochs_remaining: int = 0
    initialized: bool = False

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise RejectedInputError("error decay must lie in (0, 1)")
        if not self.margin > 0:
            raise RejectedInputError("margin must be > 0")

    @property
    def threshold(self):
        """Loss bound ``margin * mu`` below which a sample counts as low-loss."""
        return self.margin * self.mu if self.initialized else np.inf

    def end_epoch(self):
        if self.warmup_epochs_remaining > 0:
            self.warmup_epochs_remaining -= 1


def _losses(losses):
    losses = np.asarray(losses, dtype=np.float64)
    if np.any(losses < 0):
        raise RejectedInputError("per-sample losses must be nonnegative")
    return losses


def compute_weights(losses, mem):
    losses = _losses(losses)
    if not mem.initialized:
        return np.ones_like(losses)
    return kernels.loss_weights(losses, mem.mu, mem.margin)


def low_loss_mask(losses, mem):
    losses = _losses(losses)
    if not mem.initialized:
        return np.ones(losses.shape, dtype=bool)
    return kernels.below_margin(losses, mem.mu, mem.margin)


def select_candidates(samples, losses, mem):
    return samples[low_loss_mask(losses, mem)]


def filter_outliers(losses):
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size == 0:
        raise RejectedInputError("cannot filter an empty loss vector")
    return kernels.filtered_mean(losses)


def update(mem, filtered_mean):
    """Fold one filtered batch mean into ``mem`` (in place) unless warming up."""
    if filtered_mean < 0:
        raise RejectedInputError("filtered mean must be nonnegative")
    if mem.warmup_epochs_remaining > 0:
        return mem
    if not mem.initialized:
        mem.mu = float(filtered_mean)
        mem.initialized = True
    else:
        mem.mu = mem.decay * mem.mu + (1.0 - mem.decay) * filtered_mean
    return mem


def on_task_boundary(mem, warmup_epochs):
    if warmup_epochs < 0:
        raise RejectedInputError("warmup_epochs must be >= 0")
    mem.warmup_epochs_remaining = int(warmup_epochs)
    return mem
