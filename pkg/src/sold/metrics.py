"""Evaluation metrics: Kabsch RMSD, lDDT, sequence and nucleotide recovery."""

from __future__ import annotations

import math

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError, UndefinedMetricError
from .model import BASES, argmax_bases, seq_to_index

RMSD_EPS = 1e-6
LDDT_CUTOFF = 15.0
LDDT_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)


def _coords(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 3:
        raise InvalidArgumentError(f"{name} must be (L, 3), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError(f"{name} contains non-finite coordinates")
    return x


def kabsch_rotation(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Proper rotation ``R`` minimising ``|P @ R.T - Q|`` for centred ``P``, ``Q``."""
    H = P.T @ Q
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    if d == 0:
        d = 1.0
    D = np.diag([1.0, 1.0, d])
    return Vt.T @ D @ U.T


def kabsch_rmsd(truth, pred) -> float:
    """RMSD after optimal superposition; ``sqrt(msd + 1e-6)`` so the floor is 1e-3."""
    truth, pred = _coords(truth, "truth"), _coords(pred, "pred")
    if len(truth) != len(pred):
        raise InvalidArgumentError(f"length mismatch: {len(truth)} vs {len(pred)}")
    if len(truth) < 3:
        raise DegenerateInputError(f"Kabsch needs L >= 3, got {len(truth)}")
    P = pred - pred.mean(axis=0)
    Q = truth - truth.mean(axis=0)
    R = kabsch_rotation(P, Q)
    diff = P @ R.T - Q
    msd = float(np.mean(np.sum(diff * diff, axis=1)))
    return math.sqrt(msd + RMSD_EPS)


def _pairwise(x):
    d = x[:, None, :] - x[None, :, :]
    return np.sqrt(np.sum(d * d, axis=-1))


def lddt(truth, pred, cutoff: float = LDDT_CUTOFF) -> float:
    """Superposition-free local distance agreement over pairs closer than ``cutoff`` in truth."""
    truth, pred = _coords(truth, "truth"), _coords(pred, "pred")
    if len(truth) != len(pred):
        raise InvalidArgumentError(f"length mismatch: {len(truth)} vs {len(pred)}")
    if len(truth) < 2:
        raise InvalidArgumentError("lDDT needs at least two residues")
    dt, dp = _pairwise(truth), _pairwise(pred)
    iu = np.triu_indices(len(truth), k=1)
    ref, mod = dt[iu], dp[iu]
    keep = ref < cutoff
    if not np.any(keep):
        raise UndefinedMetricError("no residue pairs within the lDDT cutoff")
    dev = np.abs(ref[keep] - mod[keep])
    score = np.mean([(dev < th).astype(np.float64) for th in LDDT_THRESHOLDS], axis=0)
    return float(score.mean())


def _argmax_matches(target: str, probs) -> np.ndarray:
    probs = np.asarray(probs)
    idx = seq_to_index(target)
    if probs.ndim != 2 or probs.shape != (len(idx), 4):
        raise InvalidArgumentError(f"probs must be ({len(idx)}, 4), got {probs.shape}")
    return argmax_bases(probs) == idx


def sequence_recovery(target: str, probs) -> float:
    if not target:
        raise InvalidArgumentError("empty target")
    return float(np.mean(_argmax_matches(target, probs)))


def nt_recovery(dataset) -> float:
    """Correct positions pooled over the whole dataset (length-weighted)."""
    dataset = list(dataset)
    if not dataset:
        raise InvalidArgumentError("nt_recovery of an empty dataset")
    correct = total = 0
    for target, probs in dataset:
        m = _argmax_matches(target, probs)
        correct += int(m.sum())
        total += len(m)
    return correct / total


def one_hot(seq: str) -> np.ndarray:
    out = np.zeros((len(seq), 4))
    out[np.arange(len(seq)), seq_to_index(seq)] = 1.0
    return out


def identity_recovery(target: str, designed: str) -> float:
    """Recovery between two sequences (argmax of a one-hot is the sequence itself)."""
    if len(target) != len(designed):
        raise InvalidArgumentError("length mismatch")
    return sequence_recovery(target, one_hot(designed))


__all__ = ["kabsch_rmsd", "kabsch_rotation", "lddt", "sequence_recovery", "nt_recovery",
           "identity_recovery", "one_hot", "BASES"]
