"""Pure-numpy implementations of the per-step kernels.

Used when the compiled ``_kernels`` extension is unavailable, or when
``ESMER_PURE_PYTHON=1`` is set. Signatures match the extension exactly.
"""

import numpy as np


def row_ce(logits, labels):
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    return lse - shifted[np.arange(shifted.shape[0]), labels]


def filtered_mean(losses):
    mean = losses.mean()
    threshold = mean + losses.std()
    keep = losses <= threshold
    # rounding in mean/std can exclude the minimum on near-constant batches
    keep |= losses == losses.min()
    return float(losses[keep].mean())


def loss_weights(losses, mu, beta):
    out = np.ones_like(losses)
    high = losses > beta * mu
    out[high] = mu / losses[high]
    return out


def below_margin(losses, mu, beta):
    return losses <= beta * mu


def reservoir_slots(count, size, capacity, draws):
    free = max(0, min(count, capacity - size))
    slots = np.empty(count, dtype=np.int64)
    slots[:free] = np.arange(size, size + free)
    tail = np.asarray(draws, dtype=np.int64)
    slots[free:] = np.where(tail < capacity, tail, -1)
    return slots
