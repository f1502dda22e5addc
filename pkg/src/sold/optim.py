"""AdamW with decoupled weight decay and global-norm gradient clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ModelState


@dataclass
class AdamW:
    lr: float = 1e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def step(self, state: ModelState, grads: dict[str, np.ndarray]) -> None:
        """Apply one update in place; moments are kept in ``state.m``/``state.v``."""
        state.step += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** state.step
        bc2 = 1.0 - b2 ** state.step
        for name, g in grads.items():
            p = state.params[name]
            g = np.asarray(g, dtype=np.float64)
            m = state.m.get(name)
            v = state.v.get(name)
            m = np.zeros(p.shape) if m is None else m.astype(np.float64)
            v = np.zeros(p.shape) if v is None else v.astype(np.float64)
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            upd = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            new = p.astype(np.float64) * (1.0 - self.lr * self.weight_decay) - self.lr * upd
            p[...] = new.astype(p.dtype)
            state.m[name] = m.astype(p.dtype)
            state.v[name] = v.astype(p.dtype)


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict, float]:
    norm = global_norm(grads)
    if max_norm is None or max_norm <= 0 or norm <= max_norm:
        return grads, norm
    scale = max_norm / (norm + 1e-12)
    return {k: g * scale for k, g in grads.items()}, norm
