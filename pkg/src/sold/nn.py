"""Row-wise layers with explicit reverse-mode gradients.

Every forward returns ``(out, cache)``; the matching backward takes the
upstream gradient and the cache, writes parameter gradients into a dict and
returns the gradient w.r.t. the layer input. All layers act on 2-D arrays
whose rows are independent residues, so a batch is simply stacked rows.
"""

from __future__ import annotations

import math

import numpy as np


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def act_forward(x: np.ndarray, kind: str):
    if kind == "silu":
        s = sigmoid(x)
        return x * s, (x, s)
    if kind == "relu":
        return np.maximum(x, 0), (x, None)
    raise ValueError(f"unknown activation {kind!r}")


def act_backward(g: np.ndarray, cache, kind: str) -> np.ndarray:
    x, s = cache
    if kind == "silu":
        return g * (s * (1 + x * (1 - s)))
    return g * (x > 0)


def linear_forward(x, w, b):
    return x @ w + b, x


def linear_backward(g, x, w, grads, wname, bname):
    grads[wname] = grads.get(wname, 0) + x.T @ g
    grads[bname] = grads.get(bname, 0) + g.sum(axis=0)
    return g @ w.T


def mlp3_forward(x, params, prefix, act):
    """Three affine layers, activation after the first two."""
    caches = []
    h = x
    for i in (1, 2, 3):
        h, xc = linear_forward(h, params[f"{prefix}.w{i}"], params[f"{prefix}.b{i}"])
        ac = None
        if i < 3:
            h, ac = act_forward(h, act)
        caches.append((xc, ac))
    return h, caches


def mlp3_backward(g, caches, params, prefix, act, grads):
    for i in (3, 2, 1):
        xc, ac = caches[i - 1]
        if ac is not None:
            g = act_backward(g, ac, act)
        g = linear_backward(g, xc, params[f"{prefix}.w{i}"], grads, f"{prefix}.w{i}", f"{prefix}.b{i}")
    return g


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def timestep_embedding(t: np.ndarray, width: int, dtype=np.float64) -> np.ndarray:
    """Sinusoidal embedding of integer steps, one row per entry of ``t``."""
    half = width // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if width % 2:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=1)
    return emb.astype(dtype)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out)).astype(dtype)
