"""Pre-training: autoencoder phase, then latent diffusion with the frozen decoder."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, TrainingDivergedError
from .metrics import sequence_recovery
from .model import (ModelConfig, ModelState, autoencoder_loss_and_grads, decode, encode,
                    embed, init_state, ldm_loss_and_grads, seq_to_index)
from .optim import AdamW, clip_by_global_norm
from .sampler import sample_batch
from .schedule import NoiseSchedule

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 8
    lr: float = 1e-4
    weight_decay: float = 0.01
    grad_clip: float = 0.0  # 0 disables clipping
    ae_epochs: int = 50
    ae_lr: float = 1e-3
    patience: int = 10
    min_delta: float = 0.005
    # noise draws per record and step; each is a separate row block in the batch
    t_draws: int = 1
    val_every: int = 1

    def validate(self) -> "TrainConfig":
        if self.batch_size < 1:
            raise InvalidArgumentError(f"train.batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0 or self.ae_epochs < 0 or self.patience < 1:
            raise InvalidArgumentError("train.epochs/ae_epochs must be >= 0 and patience >= 1")
        if self.lr <= 0 or self.ae_lr <= 0 or self.weight_decay < 0:
            raise InvalidArgumentError("learning rates must be > 0 and weight decay >= 0")
        if self.t_draws < 1 or self.val_every < 1:
            raise InvalidArgumentError("train.t_draws and train.val_every must be >= 1")
        return self


def _batches(n, size, rng):
    order = rng.permutation(n)
    return [order[i:i + size] for i in range(0, n, size)]


def _check_loss(loss, phase, epoch, step):
    if not math.isfinite(loss):
        raise TrainingDivergedError(f"{phase} loss became {loss} at epoch {epoch}, step {step}")


def reconstruction_recovery(records, state: ModelState) -> float:
    """Mean per-sequence recovery of decode(encode(embed(seq)))."""
    recs = [sequence_recovery(r.sequence, decode(encode(embed(seq_to_index(r.sequence), state), state), state))
            for r in records]
    return float(np.mean(recs))


def train_autoencoder(records, state: ModelState, cfg: TrainConfig, rng, epochs=None,
                      log_rows=None) -> ModelState:
    """Cross-entropy reconstruction through embedding, encoder and decoder."""
    opt = AdamW(lr=cfg.ae_lr, weight_decay=cfg.weight_decay)
    epochs = cfg.ae_epochs if epochs is None else epochs
    step = 0
    for epoch in range(1, epochs + 1):
        total = 0.0
        for idx in _batches(len(records), cfg.batch_size, rng):
            seq_idx = np.concatenate([seq_to_index(records[i].sequence) for i in idx])
            loss, grads = autoencoder_loss_and_grads(state, seq_idx, batch_size=len(idx))
            step += 1
            _check_loss(loss, "autoencoder", epoch, step)
            if cfg.grad_clip > 0:
                grads, _ = clip_by_global_norm(grads, cfg.grad_clip)
            opt.step(state, grads)
            total += loss * len(idx)
        if log_rows is not None:
            log_rows.append({"phase": "ae", "epoch": epoch, "loss": total / len(records)})
    return state


def standardize_latents(records, state: ModelState) -> tuple[np.ndarray, float]:
    """Rescale latents to zero mean, unit std without changing decoded outputs.

    The encoder's last layer absorbs ``(z - mu) / s`` and the decoder's first
    layer absorbs the inverse, so ``decode(encode(h))`` is unchanged while the
    latents match the ``N(0, I)`` prior scale that the diffusion assumes.
    """
    z = np.concatenate([encode(embed(seq_to_index(r.sequence), state), state) for r in records])
    mu = z.mean(axis=0)
    s = float((z - mu).std()) or 1.0
    p = state.params
    w1 = p["dec.w1"].astype(np.float64)
    dt = p["enc.w3"].dtype
    p["dec.b1"] = (p["dec.b1"] + mu @ w1).astype(dt)
    p["dec.w1"] = (w1 * s).astype(dt)
    p["enc.w3"] = (p["enc.w3"] / s).astype(dt)
    p["enc.b3"] = ((p["enc.b3"] - mu) / s).astype(dt)
    return mu, s


def validation_recovery(records, state, sched, seed: int = 0) -> float:
    """Mean recovery of one full-trajectory sample per record (fixed noise seed)."""
    designs = sample_batch([r.features for r in records], state, sched, np.random.default_rng(seed))
    return float(np.mean([sequence_recovery(r.sequence, p) for r, (_, p) in zip(records, designs)]))


def train_ldm(train_records, state: ModelState, sched: NoiseSchedule, cfg: TrainConfig, rng,
              val_records=None, val_seed: int = 0):
    """Diffusion phase; updates only the denoiser and returns ``(best_state, log_rows)``.

    Each step draws ``t ~ U[1, T]`` and noise per record, predicts the clean
    latent and minimises the squared error plus the frozen decoder's
    cross-entropy. Early stopping watches validation recovery of sampled
    sequences (``val_records``, falling back to the training records).
    """
    cfg.validate()
    if not train_records:
        raise InvalidArgumentError("empty training set")
    val_records = val_records or train_records
    opt = AdamW(lr=cfg.lr, weight_decay=cfg.weight_decay)
    state.m, state.v, state.step = {}, {}, 0
    z0_cache = [encode(embed(seq_to_index(r.sequence), state), state) for r in train_records]
    rows: list[dict] = []
    best, best_state, wait, step = -np.inf, state.copy(), 0, 0
    for epoch in range(1, cfg.epochs + 1):
        total = 0.0
        for idx in _batches(len(train_records), cfg.batch_size, rng):
            picks = [i for i in idx for _ in range(cfg.t_draws)]
            seq_idx = np.concatenate([seq_to_index(train_records[i].sequence) for i in picks])
            z0 = np.concatenate([z0_cache[i] for i in picks])
            c = np.concatenate([train_records[i].features for i in picks])
            t_rows = np.concatenate([np.full(len(train_records[i].sequence), rng.integers(1, sched.T + 1))
                                     for i in picks])
            eps = rng.standard_normal(z0.shape)
            loss, grads = ldm_loss_and_grads(state, seq_idx, t_rows, c, eps, sched, z0=z0,
                                             batch_size=len(picks), groups=("den",))
            step += 1
            _check_loss(loss, "diffusion", epoch, step)
            if cfg.grad_clip > 0:
                grads, _ = clip_by_global_norm(grads, cfg.grad_clip)
            opt.step(state, grads)
            if not all(np.all(np.isfinite(state.params[k])) for k in grads):
                raise TrainingDivergedError(f"non-finite parameters at epoch {epoch}, step {step}")
            total += loss * len(picks)
        row = {"phase": "ldm", "epoch": epoch, "loss": total / (len(train_records) * cfg.t_draws)}
        if epoch % cfg.val_every == 0 or epoch == cfg.epochs:
            rec = validation_recovery(val_records, state, sched, seed=val_seed)
            row["val_recovery"] = rec
            if rec > best + cfg.min_delta:
                best, best_state, wait = rec, state.copy(), 0
            else:
                wait += 1
            log.info("epoch %d loss %.4f val recovery %.4f", epoch, row["loss"], rec)
        rows.append(row)
        if wait >= cfg.patience:
            log.info("early stop at epoch %d (best recovery %.4f)", epoch, best)
            break
    if cfg.epochs == 0:
        best_state = state
    return best_state, rows


def pretrain(train_records, model_cfg: ModelConfig, sched: NoiseSchedule, cfg: TrainConfig,
             init_rng, train_rng, val_records=None, seed=None):
    """Autoencoder phase followed by diffusion training; returns ``(state, log_rows)``."""
    cfg.validate()
    if not train_records:
        raise InvalidArgumentError("empty training set")
    state = init_state(model_cfg, init_rng, seed=seed)
    rows: list[dict] = []
    train_autoencoder(train_records, state, cfg, train_rng, log_rows=rows)
    standardize_latents(train_records, state)
    state.m, state.v, state.step = {}, {}, 0
    best, ldm_rows = train_ldm(train_records, state, sched, cfg, train_rng, val_records=val_records)
    return best, rows + ldm_rows
