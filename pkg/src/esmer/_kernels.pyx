# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-step kernels; see ``_kernels_py`` for the reference versions."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt

cnp.import_array()


def row_ce(const double[:, ::1] logits, const cnp.int64_t[::1] labels):
    cdef Py_ssize_t n = logits.shape[0], c = logits.shape[1], i, j
    cdef double m, s
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] res = out
    for i in range(n):
        m = logits[i, 0]
        for j in range(1, c):
            if logits[i, j] > m:
                m = logits[i, j]
        s = 0.0
        for j in range(c):
            s += exp(logits[i, j] - m)
        res[i] = log(s) - (logits[i, labels[i]] - m)
    return out


def filtered_mean(const double[::1] losses):
    cdef Py_ssize_t n = losses.shape[0], i, kept = 0
    cdef double total = 0.0, mean, var = 0.0, threshold, lo, acc = 0.0
    lo = losses[0]
    for i in range(n):
        total += losses[i]
        if losses[i] < lo:
            lo = losses[i]
    mean = total / n
    for i in range(n):
        var += (losses[i] - mean) * (losses[i] - mean)
    threshold = mean + sqrt(var / n)
    for i in range(n):
        if losses[i] <= threshold or losses[i] == lo:
            acc += losses[i]
            kept += 1
    return acc / kept


def loss_weights(const double[::1] losses, double mu, double beta):
    cdef Py_ssize_t n = losses.shape[0], i
    cdef double bound = beta * mu
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] res = out
    for i in range(n):
        if losses[i] > bound:
            res[i] = mu / losses[i]
        else:
            res[i] = 1.0
    return out


def below_margin(const double[::1] losses, double mu, double beta):
    cdef Py_ssize_t n = losses.shape[0], i
    cdef double bound = beta * mu
    out = np.empty(n, dtype=np.bool_)
    cdef cnp.npy_bool[::1] res = out
    for i in range(n):
        res[i] = losses[i] <= bound
    return out


def reservoir_slots(Py_ssize_t count, Py_ssize_t size, Py_ssize_t capacity, const cnp.int64_t[::1] draws):
    cdef Py_ssize_t free = capacity - size, i
    if free > count:
        free = count
    if free < 0:
        free = 0
    out = np.empty(count, dtype=np.int64)
    cdef cnp.int64_t[::1] res = out
    for i in range(free):
        res[i] = size + i
    for i in range(free, count):
        res[i] = draws[i - free] if draws[i - free] < capacity else -1
    return out
