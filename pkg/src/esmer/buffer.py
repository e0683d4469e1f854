"""Fixed-capacity episodic memory filled by reservoir sampling."""

import csv

import numpy as np

from . import kernels
from .errors import RejectedInputError
from .streams import SampleSet


class EpisodicBuffer:
    """Reservoir over the candidates offered to it.

    ``candidates_seen`` counts offered items only; deciding which items are
    offered (error-sensitive pre-selection) is the caller's job. Items are
    stored column-wise; ``stored_logits`` is kept only when ``logit_dim`` is
    set.
    """

    def __init__(self, capacity, dim, seed=0, logit_dim=None):
        if capacity < 1:
            raise RejectedInputError("buffer capacity must be >= 1")
        self.capacity = int(capacity)
        self.candidates_seen = 0
        self.size = 0
        self.rng = np.random.default_rng(seed)
        self.ids = np.full(capacity, -1, dtype=np.int64)
        self.features = np.zeros((capacity, dim))
        self.labels = np.zeros(capacity, dtype=np.int64)
        self.true_labels = np.zeros(capacity, dtype=np.int64)
        self.is_noisy = np.zeros(capacity, dtype=bool)
        self.insert_step = np.zeros(capacity, dtype=np.int64)
        self.logits = None if logit_dim is None else np.zeros((capacity, logit_dim))

    def __len__(self):
        return self.size

    def offer(self, samples, step=0, logits=None):
        """Offer every row of ``samples``; return the slot each landed in (-1 = rejected)."""
        k = len(samples)
        if k == 0:
            return np.empty(0, dtype=np.int64)
        if self.logits is not None and logits is None:
            raise RejectedInputError("this buffer stores logits; pass them with the samples")
        free = max(0, min(k, self.capacity - self.size))
        n_seen = self.candidates_seen + np.arange(free + 1, k + 1)
        draws = self.rng.integers(0, n_seen) if len(n_seen) else np.empty(0, dtype=np.int64)
        slots = kernels.reservoir_slots(k, self.size, self.capacity, draws)
        self.candidates_seen += k
        self.size += free
        # later arrivals overwrite earlier ones that drew the same slot
        src = np.flatnonzero(slots >= 0)[::-1]
        dst, first = np.unique(slots[src], return_index=True)
        src = src[first]
        self.ids[dst] = samples.ids[src]
        self.features[dst] = samples.features[src]
        self.labels[dst] = samples.labels[src]
        self.true_labels[dst] = samples.true_labels[src]
        self.is_noisy[dst] = samples.is_noisy[src]
        self.insert_step[dst] = step
        if self.logits is not None:
            self.logits[dst] = np.asarray(logits)[src]
        return slots

    def contents(self):
        n = self.size
        return SampleSet(self.ids[:n], self.features[:n], self.labels[:n],
                         self.true_labels[:n], self.is_noisy[:n])

    def sample_batch(self, k, rng):
        """Indices of ``k`` stored items; empty when the buffer is empty.

        Draws without replacement when ``k <= len(self)``, with replacement
        otherwise.
        """
        if self.size == 0:
            return np.empty(0, dtype=np.int64)
        if k > self.size:
            return rng.integers(0, self.size, k)
        return rng.choice(self.size, k, replace=False)

    def take(self, idx):
        return SampleSet(self.ids[idx], self.features[idx], self.labels[idx],
                         self.true_labels[idx], self.is_noisy[idx])

    def noise_fraction(self):
        return float(self.is_noisy[:self.size].mean()) if self.size else 0.0

    def dump_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["slot", "id", "label", "true_label", "is_noisy", "insert_step"])
            for i in range(self.size):
                w.writerow([i, int(self.ids[i]), int(self.labels[i]), int(self.true_labels[i]),
                            int(self.is_noisy[i]), int(self.insert_step[i])])

    def state_dict(self):
        state = {"capacity": self.capacity, "candidates_seen": self.candidates_seen,
                 "size": self.size, "ids": self.ids, "features": self.features,
                 "labels": self.labels, "true_labels": self.true_labels,
                 "is_noisy": self.is_noisy, "insert_step": self.insert_step,
                 "rng": self.rng.bit_generator.state}
        if self.logits is not None:
            state["logits"] = self.logits
        return state

    @classmethod
    def from_state(cls, state):
        logits = state.get("logits")
        buf = cls(state["capacity"], state["features"].shape[1],
                  logit_dim=None if logits is None else logits.shape[1])
        for key in ("ids", "features", "labels", "true_labels", "is_noisy", "insert_step"):
            getattr(buf, key)[:] = state[key]
        if logits is not None:
            buf.logits[:] = logits
        buf.candidates_seen = int(state["candidates_seen"])
        buf.size = int(state["size"])
        buf.rng.bit_generator.state = state["rng"]
        return buf


def reservoir_offer(buffer, samples, step=0, logits=None):
    buffer.offer(samples, step, logits)
    return buffer


def noise_fraction(buffer):
    return buffer.noise_fraction()
