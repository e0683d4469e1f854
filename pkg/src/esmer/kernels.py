"""Backend selection for the per-step kernels.

The compiled extension is preferred; the numpy fallback is used when it is
missing or when ``ESMER_PURE_PYTHON`` is set to a non-empty value other than
``0``. ``BACKEND`` names the active one.
"""

import os

import numpy as np

from . import _kernels_py

_force_py = os.environ.get("ESMER_PURE_PYTHON", "") not in ("", "0")

try:
    if _force_py:
        raise ImportError("pure-python backend requested")
    from . import _kernels as _impl
    BACKEND = "compiled"
except ImportError:
    _impl = _kernels_py
    BACKEND = "python"


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def row_ce(logits, labels):
    """Per-row softmax cross-entropy with max subtraction."""
    return _impl.row_ce(_f64(logits), np.ascontiguousarray(labels, dtype=np.int64))


def filtered_mean(losses):
    """Mean of the entries lying at most one population std above the mean."""
    return _impl.filtered_mean(_f64(losses))


def loss_weights(losses, mu, beta):
    return _impl.loss_weights(_f64(losses), float(mu), float(beta))


def below_margin(losses, mu, beta):
    return _impl.below_margin(_f64(losses), float(mu), float(beta))


def reservoir_slots(count, size, capacity, draws):
    """Slot index per offered item, or -1 for items the reservoir rejects.

    ``draws`` carries one uniform integer in ``[0, N)`` for every item that
    arrives after the buffer is full, in arrival order.
    """
    return _impl.reservoir_slots(
        int(count), int(size), int(capacity), np.ascontiguousarray(draws, dtype=np.int64)
    )
