"""Reverse-process sampling: DDPM steps, DDIM jumps and full trajectories.

Every function takes an optional ``predictor(z_t, t, c) -> z0_hat`` so the
denoiser can be swapped for a stub; by default it is ``denoise_predict`` with
the given state.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import InvalidArgumentError
from .model import ModelState, argmax_bases, decode, denoise_predict, index_to_seq
from .schedule import NoiseSchedule, ddim_coeffs, posterior_params


def _predictor(state, predictor):
    if predictor is not None:
        return predictor
    return lambda z, t, c: denoise_predict(z, t, c, state)


def ddpm_step(z_t, t, c, state: ModelState, sched: NoiseSchedule, rng, predictor=None):
    """One stochastic reverse transition ``z_t -> z_{t-1}``; at ``t=1`` the mean itself."""
    t = sched.check_step(t, lo=1)
    z0_hat = _predictor(state, predictor)(z_t, t, c)
    mean, var = posterior_params(np.asarray(z_t, dtype=np.float64), z0_hat, t, sched)
    if t == 1 or var == 0.0:
        return mean
    return mean + math.sqrt(var) * rng.standard_normal(mean.shape)


def ddim_jump(z_t, t, k, eta, c, state: ModelState, sched: NoiseSchedule, rng, predictor=None):
    """Jump from ``t`` to ``t-k`` through the predicted clean latent."""
    t = sched.check_step(t, lo=1)
    a, gamma, sigma = ddim_coeffs(t, k, eta, sched)
    z_t = np.asarray(z_t, dtype=np.float64)
    z0_hat = _predictor(state, predictor)(z_t, t, c)
    ab = sched.bar_alpha[t]
    eps_theta = (z_t - z0_hat * math.sqrt(ab)) / math.sqrt(1.0 - ab)
    out = a * z0_hat + gamma * eps_theta
    if sigma > 0.0:
        out = out + sigma * rng.standard_normal(out.shape)
    return out


def reverse_trajectory(z_T, c, state, sched, rng, method="ddpm", eta=1.0, k=1,
                       predictor=None, trace=None):
    """Run the reverse chain from ``z_T`` down to ``t = 0``.

    ``trace`` (a list) receives ``(t, z0_hat)`` for every visited step when
    given, which lets a deterministic run be replayed step by step.
    """
    pred = _predictor(state, predictor)
    if trace is not None:
        inner = pred

        def pred(z, t, cc):
            out = inner(z, t, cc)
            trace.append((t, out.copy()))
            return out

    z, t = np.asarray(z_T, dtype=np.float64), sched.T
    while t > 0:
        if method == "ddpm":
            z = ddpm_step(z, t, c, state, sched, rng, predictor=pred)
            t -= 1
        elif method == "ddim":
            step = min(k, t)
            z = ddim_jump(z, t, step, eta, c, state, sched, rng, predictor=pred)
            t -= step
        else:
            raise InvalidArgumentError(f"unknown sampling method {method!r}")
    return z


def sample_sequences(c, n: int, state: ModelState, sched: NoiseSchedule, eta: float = 1.0,
                     rng=None, method: str = "ddpm", k: int = 1, predictor=None):
    """Draw ``n`` designs for one backbone; returns ``[(sequence, probs L x 4), ...]``.

    The ``n`` chains run stacked as one ``(n*L, D)`` array; the denoiser is
    row-wise so this is equivalent to ``n`` independent chains.
    """
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng() if rng is None else rng
    c = np.asarray(c, dtype=np.float64)
    L = len(c)
    cs = np.tile(c, (n, 1))
    z_T = rng.standard_normal((n * L, state.config.latent_dim))
    z0 = reverse_trajectory(z_T, cs, state, sched, rng, method=method, eta=eta, k=k,
                            predictor=predictor)
    probs = decode(z0, state)
    out = []
    for i in range(n):
        p = probs[i * L:(i + 1) * L]
        out.append((index_to_seq(argmax_bases(p)), p))
    return out


def sample_batch(conds, state, sched, rng, method="ddpm", eta=1.0, k=1):
    """One design per conditioning matrix, all chains stacked into a single run."""
    sizes = [len(c) for c in conds]
    cs = np.concatenate([np.asarray(c, dtype=np.float64) for c in conds])
    z_T = rng.standard_normal((len(cs), state.config.latent_dim))
    z0 = reverse_trajectory(z_T, cs, state, sched, rng, method=method, eta=eta, k=k)
    probs = decode(z0, state)
    out, at = [], 0
    for L in sizes:
        p = probs[at:at + L]
        out.append((index_to_seq(argmax_bases(p)), p))
        at += L
    return out


def write_fasta(path, entries):
    """``entries`` is an iterable of ``(id, sequence)``."""
    with open(path, "w") as fh:
        for name, seq in entries:
            fh.write(f">{name}\n")
            for i in range(0, len(seq), 80):
                fh.write(seq[i:i + 80] + "\n")


def write_prob_sidecar(path, entries):
    """Tab-separated ``position pA pU pC pG`` per residue, one ``#id`` header per design."""
    with open(path, "w") as fh:
        for name, probs in entries:
            fh.write(f"#{name}\n")
            for i, row in enumerate(probs):
                fh.write(f"{i + 1}\t" + "\t".join(f"{p:.6f}" for p in row) + "\n")
