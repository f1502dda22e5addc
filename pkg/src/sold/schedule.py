"""Variance schedule and closed-form diffusion coefficients.

Index convention: ``t = 0`` is clean data. ``beta`` and ``alpha`` are stored
with a dummy slot at index 0 so that ``beta[t]`` reads naturally for
``t in 1..T``; ``bar_alpha`` covers ``0..T`` with ``bar_alpha[0] == 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, NumericDomainError

BETA_MAX = 0.999
# radicand slack tolerated before the DDIM gamma is declared undefined
GAMMA_TOL = 1e-9


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed float64 tables for a discrete diffusion of ``T`` steps."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    bar_alpha: np.ndarray

    def __post_init__(self):
        for arr in (self.beta, self.alpha, self.bar_alpha):
            arr.setflags(write=False)

    def check_step(self, t: int, lo: int = 0) -> int:
        t = int(t)
        if not lo <= t <= self.T:
            raise InvalidArgumentError(f"step {t} outside [{lo}, {self.T}]")
        return t

    def posterior_variance(self, t: int) -> float:
        t = self.check_step(t, lo=1)
        ab, ab_prev = self.bar_alpha[t], self.bar_alpha[t - 1]
        return float((1.0 - ab_prev) * (1.0 - self.alpha[t]) / (1.0 - ab))


def _cosine_f(t, T: int, s: float):
    return np.cos(((np.asarray(t, dtype=np.float64) / T + s) / (1.0 + s)) * math.pi / 2) ** 2


def cosine_schedule(T: int, s: float = 0.008) -> NoiseSchedule:
    """Build the cosine schedule ``bar_alpha(t) = f(t) / f(0)``.

    ``beta`` is recovered from consecutive ratios and clamped to ``BETA_MAX``;
    ``bar_alpha`` is then rebuilt as the running product of ``alpha`` so the
    product identity holds exactly even where the clamp bites.
    """
    if isinstance(T, bool) or int(T) != T or T < 1:
        raise InvalidArgumentError(f"T must be a positive integer, got {T!r}")
    if not 0.0 < s < 1.0:
        raise InvalidArgumentError(f"offset s must lie in (0, 1), got {s!r}")
    T = int(T)
    f = _cosine_f(np.arange(T + 1), T, s)
    ab_raw = f / f[0]
    beta = np.zeros(T + 1)
    beta[1:] = np.clip(1.0 - ab_raw[1:] / ab_raw[:-1], 0.0, BETA_MAX)
    alpha = 1.0 - beta
    alpha[0] = 1.0
    bar_alpha = np.cumprod(alpha)
    bar_alpha[0] = 1.0
    if np.any(beta[1:] <= 0.0) or np.any(np.diff(bar_alpha) >= 0.0):
        raise NumericDomainError(f"cosine schedule degenerate for T={T}, s={s}")
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, bar_alpha=bar_alpha)


def forward_noise(z0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Sample ``q(z_t | z_0)`` given the noise draw ``eps``."""
    t = sched.check_step(t)
    if z0.shape != eps.shape:
        raise InvalidArgumentError(f"z0 shape {z0.shape} != eps shape {eps.shape}")
    if t == 0:
        return z0.copy()
    ab = sched.bar_alpha[t]
    dtype = np.result_type(z0, eps)
    return (math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * eps).astype(dtype, copy=False)


def posterior_coeffs(t: int, sched: NoiseSchedule) -> tuple[float, float, float]:
    """Return ``(coef_zt, coef_z0, var)`` of ``q(z_{t-1} | z_t, z_0)``."""
    t = sched.check_step(t, lo=1)
    a, ab, ab_prev = sched.alpha[t], sched.bar_alpha[t], sched.bar_alpha[t - 1]
    denom = 1.0 - ab
    c_zt = math.sqrt(a) * (1.0 - ab_prev) / denom
    c_z0 = math.sqrt(ab_prev) * (1.0 - a) / denom
    var = (1.0 - ab_prev) * (1.0 - a) / denom
    return float(c_zt), float(c_z0), float(max(var, 0.0))


def posterior_params(z_t: np.ndarray, z0_hat: np.ndarray, t: int, sched: NoiseSchedule):
    """Mean and variance of the DDPM reverse step from ``t`` to ``t-1``."""
    if z_t.shape != z0_hat.shape:
        raise InvalidArgumentError(f"z_t shape {z_t.shape} != z0_hat shape {z0_hat.shape}")
    c_zt, c_z0, var = posterior_coeffs(t, sched)
    mean = c_zt * z_t + c_z0 * z0_hat
    return mean.astype(np.result_type(z_t, z0_hat), copy=False), var


def ddim_coeffs(t: int, k: int, eta: float, sched: NoiseSchedule) -> tuple[float, float, float]:
    """Coefficients ``(a, gamma, sigma)`` of a DDIM jump from ``t`` to ``t-k``.

    ``z' = a * z0_hat + gamma * eps_theta + sigma * eps``.
    """
    t = sched.check_step(t, lo=1)
    k = int(k)
    if not 1 <= k <= t:
        raise InvalidArgumentError(f"jump size {k} must satisfy 1 <= k <= t={t}")
    if eta < 0:
        raise InvalidArgumentError(f"eta must be >= 0, got {eta}")
    ab_t, ab_s = sched.bar_alpha[t], sched.bar_alpha[t - k]
    sigma2 = eta * (1.0 - ab_s) * (1.0 - sched.alpha[t]) / (1.0 - ab_t)
    rad = 1.0 - ab_s - sigma2
    if rad < -GAMMA_TOL:
        raise NumericDomainError(
            f"DDIM gamma undefined (radicand {rad:.3e}) at t={t}, k={k}, eta={eta}"
        )
    gamma = math.sqrt(max(rad, 0.0))
    return float(math.sqrt(ab_s)), float(gamma), float(math.sqrt(sigma2))
