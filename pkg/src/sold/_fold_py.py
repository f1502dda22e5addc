"""Pure-Python fallback for the MFE kernels (numpy-vectorised over ``j``).

Mirrors ``_fold_ext`` exactly, including the summation order of candidate
energies, so the two backends return identical tables.
"""

from __future__ import annotations

import numpy as np


def mfe_fill(seq: np.ndarray, pair_e: np.ndarray, hairpin_min: int) -> np.ndarray:
    L = len(seq)
    V = np.zeros((L + 1, L + 1))
    cols = np.arange(L + 1)
    for i in range(L - 1, -1, -1):
        row = V[i + 1].copy()
        e_row = pair_e[seq[i], seq]
        ks = np.nonzero(np.isfinite(e_row))[0]
        ks = ks[ks >= i + hairpin_min + 1]
        if len(ks):
            c = e_row[ks] + V[i + 1, ks]
            cand = c[:, None] + V[ks + 1, :]
            cand[cols[None, :] <= ks[:, None]] = np.inf
            row = np.minimum(row, cand.min(axis=0))
        row[: i + 1] = 0.0
        V[i] = row
    return V


def mfe_traceback(seq: np.ndarray, pair_e: np.ndarray, hairpin_min: int, V: np.ndarray) -> np.ndarray:
    L = len(seq)
    pt = np.full(L, -1, dtype=np.int64)
    stack = [(0, L)]
    while stack:
        i, j = stack.pop()
        while i < j:
            target = V[i, j]
            paired = False
            for k in range(i + hairpin_min + 1, j):
                e = pair_e[seq[i], seq[k]]
                if not np.isfinite(e):
                    continue
                if (e + V[i + 1, k]) + V[k + 1, j] == target:
                    pt[i], pt[k] = k, i
                    stack.append((k + 1, j))
                    stack.append((i + 1, k))
                    paired = True
                    break
            if paired:
                break
            i += 1
    return pt
