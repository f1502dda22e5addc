# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled O(L^3) pair-additive MFE fill and traceback.

``V[i, j]`` is the optimal energy of the half-open interval ``[i, j)``.
Candidate sums are formed as ``(e + inner) + outer`` in exactly the order used
by the numpy fallback so both backends agree bit-for-bit.
"""

import numpy as np

from libc.math cimport INFINITY


def mfe_fill(const signed char[::1] seq, const double[:, ::1] pair_e, int hairpin_min):
    cdef Py_ssize_t L = seq.shape[0]
    V = np.zeros((L + 1, L + 1), dtype=np.float64)
    cdef double[:, ::1] v = V
    cdef Py_ssize_t i, j, k
    cdef double best, cand, e
    cdef signed char si
    for i in range(L - 1, -1, -1):
        si = seq[i]
        for j in range(i + 1, L + 1):
            best = v[i + 1, j]
            for k in range(i + hairpin_min + 1, j):
                e = pair_e[si, seq[k]]
                if e == INFINITY:
                    continue
                cand = e + v[i + 1, k]
                cand = cand + v[k + 1, j]
                if cand < best:
                    best = cand
            v[i, j] = best
    return V


def mfe_traceback(const signed char[::1] seq, const double[:, ::1] pair_e, int hairpin_min,
                  const double[:, ::1] v):
    cdef Py_ssize_t L = seq.shape[0]
    pt = np.full(L, -1, dtype=np.int64)
    cdef long long[::1] p = pt
    cdef Py_ssize_t i, j, k
    cdef double target, cand, e
    cdef bint paired
    stack = [(0, L)]
    while stack:
        i, j = stack.pop()
        while i < j:
            target = v[i, j]
            paired = False
            for k in range(i + hairpin_min + 1, j):
                e = pair_e[seq[i], seq[k]]
                if e == INFINITY:
                    continue
                cand = e + v[i + 1, k]
                cand = cand + v[k + 1, j]
                if cand == target:
                    p[i] = k
                    p[k] = i
                    stack.append((k + 1, j))
                    stack.append((i + 1, k))
                    paired = True
                    break
            if paired:
                break
            i += 1
    return pt
