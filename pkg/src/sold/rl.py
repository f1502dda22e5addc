"""Step-wise policy-gradient fine-tuning of the denoiser.

Each sample draws ``t``, noises the encoded sequence and predicts ``z0_hat``
once. Two one-step actions come out of that prediction:

* long-term: ``z0' ~ N(z0_hat, sigma_long(t)^2 I)`` (a ``k = t`` jump with a
  floored policy std), decoded and scored;
* short-term: ``z_{t-1} ~ N(mu_post(z_t, z0_hat), sigma_short(t)^2 I)``,
  decoded and scored.

The piecewise rule picks which reward (and which action's log-density) the
sample trains on. Rewards are constants; only the Gaussian log-densities are
differentiated, through the denoiser.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, TrainingDivergedError
from .model import (ModelState, argmax_bases, decode, denoiser_vjp, embed, encode,
                    finite_difference_check, index_to_seq, seq_to_index)
from .optim import AdamW, clip_by_global_norm
from .rewards import RewardSpec, batch_rewards, normalize_batch
from .schedule import NoiseSchedule, posterior_coeffs

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class PPOConfig:
    clip: float = 1e-4
    lambda_ref: float = 1.0
    lr: float = 1e-5
    weight_decay: float = 1e-3
    grad_accum: int = 32
    grad_clip: float = 1.0
    batch_size: int = 32
    epochs: int = 100
    sigma_min: float = 1e-2
    # optimisation passes over one rollout before the reference is refreshed
    inner_steps: int = 1

    def validate(self) -> "PPOConfig":
        if not 0 < self.clip < 1:
            raise InvalidArgumentError(f"ppo.clip must lie in (0, 1), got {self.clip}")
        for name in ("lr", "grad_clip", "sigma_min"):
            if getattr(self, name) <= 0:
                raise InvalidArgumentError(f"ppo.{name} must be > 0")
        if self.lambda_ref < 0 or self.weight_decay < 0 or self.epochs < 0:
            raise InvalidArgumentError("ppo.lambda_ref, weight_decay and epochs must be >= 0")
        for name in ("grad_accum", "batch_size", "inner_steps"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"ppo.{name} must be >= 1")
        return self


def gaussian_logprob(x, mean, sigma: float) -> float:
    """Sum of isotropic normal log-densities over all entries."""
    if not sigma > 0:
        raise InvalidArgumentError(f"sigma must be > 0, got {sigma}")
    d = np.asarray(x, dtype=np.float64) - np.asarray(mean, dtype=np.float64)
    n = d.size
    return float(-0.5 * np.sum(d * d) / sigma ** 2 - n * math.log(sigma) - 0.5 * n * LOG_2PI)


@dataclass
class PolicyPair:
    """Current parameters plus a frozen snapshot used for ratios and the KL term."""

    current: ModelState
    reference: ModelState = field(default=None)
    sched: NoiseSchedule = field(default=None)
    eta: float = 1.0
    sigma_min: float = 1e-2

    def __post_init__(self):
        if self.reference is None:
            self.reference = self.current.copy()

    def refresh(self) -> None:
        self.reference = self.current.copy()

    def sigma_long(self, t: int) -> float:
        return math.sqrt(max(self.eta * float(self.sched.beta[t]), self.sigma_min ** 2))

    def sigma_short(self, t: int) -> float:
        return max(math.sqrt(posterior_coeffs(t, self.sched)[2]), self.sigma_min)

    def drift(self) -> float:
        return math.sqrt(sum(float(np.sum((self.current.params[k].astype(np.float64)
                                           - self.reference.params[k]) ** 2))
                             for k in self.current.names(("den",))))


@dataclass
class Rollout:
    """One sample's frozen inputs, chosen action and scores."""

    t: int
    z_t: np.ndarray
    c: np.ndarray
    action: np.ndarray
    short: bool  # True if the short-term action is the trained one
    sigma: float
    r_short: float
    r_long: float
    r_total: float
    mean_ref: np.ndarray | None = None


def _action_mean(z0_hat, ro: Rollout, sched):
    if ro.short:
        c_zt, c_z0, _ = posterior_coeffs(ro.t, sched)
        return c_zt * ro.z_t + c_z0 * z0_hat, c_z0
    return z0_hat, 1.0


def action_mean(state: ModelState, ro: Rollout, sched) -> np.ndarray:
    z0_hat = denoiser_vjp(state, ro.z_t, np.full(len(ro.z_t), ro.t), ro.c, np.zeros_like(ro.z_t))[0]
    return _action_mean(z0_hat, ro, sched)[0]


def log_ratio(action, mean, mean_ref, sigma: float) -> float:
    """``log N(x; mean, s) - log N(x; mean_ref, s)`` without forming either density.

    Written as a product with the mean difference so it is exactly zero when
    the means agree and free of cancellation when they are close.
    """
    diff = mean - np.asarray(mean_ref)
    return float(np.sum(diff * (2.0 * action - mean - mean_ref)) / (2.0 * sigma ** 2))


def sample_policy_terms(delta, adv, clip):
    """Ratio, clipped surrogate, KL estimate and d(-surrogate)/d(logp) for one sample.

    ``delta`` is ``logp_theta - logp_ref`` of the sampled action.
    """
    ratio = math.exp(delta)
    unclipped = ratio * adv
    clipped = min(max(ratio, 1.0 - clip), 1.0 + clip) * adv
    surrogate = min(unclipped, clipped)
    d_neg_surr = -unclipped if unclipped <= clipped else 0.0
    return ratio, surrogate, 0.5 * delta * delta, d_neg_surr


def _sample_terms(state: ModelState, ro: Rollout, sched, adv, cfg, scale, with_grads):
    t_rows = np.full(len(ro.z_t), ro.t)
    z0_hat = denoiser_vjp(state, ro.z_t, t_rows, ro.c, np.zeros_like(ro.z_t))[0]
    mean, mcoef = _action_mean(z0_hat, ro, sched)
    delta = log_ratio(ro.action, mean, ro.mean_ref, ro.sigma)
    ratio, surr, kl, d_neg_surr = sample_policy_terms(delta, adv, cfg.clip)
    coef = (d_neg_surr + cfg.lambda_ref * delta) * scale
    grads = {}
    if with_grads and coef != 0.0:
        # d logp / d z0_hat = mean_coef * (x - mean) / sigma^2
        g_out = coef * mcoef * (ro.action - mean) / ro.sigma ** 2
        grads = denoiser_vjp(state, ro.z_t, t_rows, ro.c, g_out)[1]
    return ratio, surr, kl, grads


def policy_loss_and_grads(state: ModelState, rollouts, advantages, sched, cfg: PPOConfig,
                          batch_size: int | None = None, with_grads: bool = True):
    """Loss ``mean(-surrogate) + lambda_ref * mean(0.5 * dlogp^2)`` over ``rollouts``.

    ``batch_size`` is the divisor of the means (the full batch when the
    rollouts are one micro-batch of it). Returns ``(loss, grads, stats)``.
    """
    B = batch_size or len(rollouts)
    loss, grads = 0.0, {}
    stats = {"ratio": [], "kl": []}
    for ro, adv in zip(rollouts, advantages):
        ratio, surr, kl, g = _sample_terms(state, ro, sched, adv, cfg, 1.0 / B, with_grads)
        loss += (-surr + cfg.lambda_ref * kl) / B
        stats["ratio"].append(ratio)
        stats["kl"].append(kl)
        for k, v in g.items():
            grads[k] = grads.get(k, 0.0) + v
    return loss, grads, stats


def collect_rollouts(records, policies: PolicyPair, spec: RewardSpec, rng, workers: int = 1):
    """Sample one (t, noise, action) per record and score both candidate actions."""
    state, sched = policies.current, policies.sched
    rollouts, jobs = [], []
    for rec in records:
        idx = seq_to_index(rec.sequence)
        z0 = encode(embed(idx, state), state)
        t = int(rng.integers(1, sched.T + 1))
        ab = sched.bar_alpha[t]
        z_t = math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * rng.standard_normal(z0.shape)
        c = np.asarray(rec.features, dtype=np.float64)
        z0_hat = denoiser_vjp(state, z_t, np.full(len(z_t), t), c, np.zeros_like(z_t))[0]
        s_long = policies.sigma_long(t)
        x_long = z0_hat + s_long * rng.standard_normal(z0_hat.shape)
        c_zt, c_z0, _ = posterior_coeffs(t, sched)
        s_short = policies.sigma_short(t)
        x_short = c_zt * z_t + c_z0 * z0_hat + s_short * rng.standard_normal(z0_hat.shape)
        seq_long = index_to_seq(argmax_bases(decode(x_long, state)))
        seq_short = index_to_seq(argmax_bases(decode(x_short, state)))
        short = t >= spec.tau
        rollouts.append(Rollout(t=t, z_t=z_t, c=c, action=x_short if short else x_long, short=short,
                                sigma=s_short if short else s_long, r_short=0.0, r_long=0.0, r_total=0.0))
        jobs += [(seq_short, rec.truth_db, rec.coords), (seq_long, rec.truth_db, rec.coords)]
    scores = batch_rewards(jobs, spec, workers=workers)
    for i, ro in enumerate(rollouts):
        ro.r_short, ro.r_long = scores[2 * i], scores[2 * i + 1]
        ro.r_total = ro.r_short if ro.short else ro.r_long
        ro.mean_ref = action_mean(policies.reference, ro, sched)
    return rollouts


def sold_update(records, policies: PolicyPair, spec: RewardSpec, cfg: PPOConfig, rng,
                optimizer: AdamW | None = None, workers: int = 1) -> dict:
    """One rollout round on ``records`` followed by ``inner_steps`` optimisation passes.

    Gradients of micro-batches are accumulated and applied every
    ``cfg.grad_accum`` samples (and at the end of each pass). The reference
    snapshot is refreshed once the round is over.
    """
    optimizer = optimizer or AdamW(lr=cfg.lr, weight_decay=cfg.weight_decay)
    sched = policies.sched
    rollouts = collect_rollouts(records, policies, spec, rng, workers=workers)
    adv = normalize_batch([ro.r_total for ro in rollouts])
    B = len(rollouts)
    ratios, kls, first_ratio, first_kl, updates = [], [], None, None, 0
    for _ in range(cfg.inner_steps):
        for lo in range(0, B, cfg.grad_accum):
            chunk = slice(lo, lo + cfg.grad_accum)
            loss, grads, st = policy_loss_and_grads(policies.current, rollouts[chunk], adv[chunk],
                                                    sched, cfg, batch_size=B)
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"policy loss became {loss} after {updates} updates")
            if first_ratio is None:
                first_ratio, first_kl = st["ratio"][0], st["kl"][0]
            ratios += st["ratio"]
            kls += st["kl"]
            # parameters move through weight decay even when every advantage is zero
            full = {k: grads.get(k, np.zeros(policies.current.params[k].shape))
                    for k in policies.current.names(("den",))}
            full, _ = clip_by_global_norm(full, cfg.grad_clip)
            optimizer.step(policies.current, full)
            updates += 1
    drift = policies.drift()
    policies.refresh()
    r_total = np.array([ro.r_total for ro in rollouts])
    return {
        "mean_r_total": float(r_total.mean()),
        "std_r_total": float(r_total.std()),
        "mean_r_short": float(np.mean([ro.r_short for ro in rollouts])),
        "mean_r_long": float(np.mean([ro.r_long for ro in rollouts])),
        "mean_kl": float(np.mean(kls)),
        "mean_ratio": float(np.mean(ratios)),
        "first_ratio": first_ratio,
        "first_kl": first_kl,
        "drift": drift,
        "updates": updates,
    }


CURVE_COLUMNS = ("epoch", "mean_r_total", "std_r_total", "mean_r_short", "mean_r_long",
                 "mean_kl", "mean_ratio")


def write_curves(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write("\t".join(CURVE_COLUMNS) + "\n")
        for row in rows:
            fh.write("\t".join([str(row["epoch"])] + [f"{row[c]:.10g}" for c in CURVE_COLUMNS[1:]]) + "\n")


def finetune(records, state: ModelState, sched: NoiseSchedule, spec: RewardSpec, cfg: PPOConfig,
             rng, workers: int = 1, on_epoch=None):
    """Run ``cfg.epochs`` epochs of batched updates; returns ``(state, curve_rows)``.

    With zero epochs the input state is returned untouched.
    """
    cfg.validate()
    spec.validate(sched.T)
    if not records:
        raise InvalidArgumentError("empty fine-tuning set")
    if cfg.epochs == 0:
        return state, []
    policies = PolicyPair(current=state.copy(), sched=sched, eta=spec.eta, sigma_min=cfg.sigma_min)
    policies.current.m, policies.current.v, policies.current.step = {}, {}, 0
    policies.refresh()
    opt = AdamW(lr=cfg.lr, weight_decay=cfg.weight_decay)
    rows = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(records))
        epoch_stats = []
        for lo in range(0, len(records), cfg.batch_size):
            batch = [records[i] for i in order[lo:lo + cfg.batch_size]]
            epoch_stats.append(sold_update(batch, policies, spec, cfg, rng, optimizer=opt, workers=workers))
        row = {"epoch": epoch}
        for key in CURVE_COLUMNS[1:]:
            row[key] = float(np.mean([s[key] for s in epoch_stats]))
        row["first_ratio"] = [s["first_ratio"] for s in epoch_stats]
        row["first_kl"] = [s["first_kl"] for s in epoch_stats]
        row["drift"] = float(np.mean([s["drift"] for s in epoch_stats]))
        rows.append(row)
        log.info("epoch %d mean reward %.4f kl %.3g", epoch, row["mean_r_total"], row["mean_kl"])
        if on_epoch is not None:
            on_epoch(row)
    return policies.current, rows


def _logratio_sensitivity(state, rollouts, sched):
    """Per-sample ``|d delta_i / d theta|`` for every denoiser tensor."""
    out = []
    for ro in rollouts:
        t_rows = np.full(len(ro.z_t), ro.t)
        z0_hat = denoiser_vjp(state, ro.z_t, t_rows, ro.c, np.zeros_like(ro.z_t))[0]
        mean, mcoef = _action_mean(z0_hat, ro, sched)
        g = denoiser_vjp(state, ro.z_t, t_rows, ro.c, mcoef * (ro.action - mean) / ro.sigma ** 2)[1]
        out.append({k: np.abs(v) for k, v in g.items()})
    return out


def check_policy_gradients(state: ModelState, records, sched: NoiseSchedule, spec: RewardSpec,
                           cfg: PPOConfig, rng, n_params: int = 200, perturb: float = 0.0,
                           corrupt=None, h: float = 1e-3) -> float:
    """Finite-difference audit of the policy loss w.r.t. denoiser parameters.

    Rewards are frozen after the rollout. ``perturb`` shifts the current
    parameters away from the reference first, so the ratio and KL terms are
    exercised as well. The clipped surrogate has kinks at ``ratio = 1 +- clip``;
    each entry's step is shrunk so that no sample's log-ratio moves more than a
    quarter of its distance to the nearest kink across the stencil.
    """
    policies = PolicyPair(current=state.copy(), sched=sched, eta=spec.eta, sigma_min=cfg.sigma_min)
    rollouts = collect_rollouts(records, policies, spec, rng)
    adv = normalize_batch([ro.r_total for ro in rollouts])
    if perturb > 0:
        for k in policies.current.names(("den",)):
            p = policies.current.params[k]
            p[...] = p + perturb * rng.standard_normal(p.shape).astype(p.dtype)
    cur = policies.current
    _, grads, stats = policy_loss_and_grads(cur, rollouts, adv, sched, cfg)
    kinks = (math.log1p(cfg.clip), math.log1p(-cfg.clip))
    dist = [min(abs(math.log(r) - k) for k in kinks) for r in stats["ratio"]]
    sens = _logratio_sensitivity(cur, rollouts, sched)

    def step_for(name, idx):
        steps = [0.25 * d / (2.0 * s[name][idx]) for d, s in zip(dist, sens) if s[name][idx] > 0]
        return min(steps, default=h)

    def loss_fn(s64):
        return policy_loss_and_grads(s64, rollouts, adv, sched, cfg, with_grads=False)[0]

    return finite_difference_check(loss_fn, cur, grads, cur.names(("den",)), rng,
                                   n_params=n_params, corrupt=corrupt, h=h, step_for=step_for)
