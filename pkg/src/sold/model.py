"""Latent diffusion model: embedding table, encoder, decoder, denoiser.

Parameters live in a flat ``dict[str, ndarray]`` owned by :class:`ModelState`.
Group prefixes (``emb``, ``enc``, ``dec``, ``den``) decide what a training
phase may touch: the autoencoder phase updates ``emb``/``enc``/``dec``, the
diffusion and RL phases update ``den`` only.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .errors import InvalidArgumentError
from .schedule import NoiseSchedule, forward_noise

BASES = "AUCG"
BASE_INDEX = {b: i for i, b in enumerate(BASES)}


def seq_to_index(seq: str) -> np.ndarray:
    try:
        return np.fromiter((BASE_INDEX[c] for c in seq), dtype=np.int64, count=len(seq))
    except KeyError as exc:
        raise InvalidArgumentError(f"symbol {exc.args[0]!r} not in {{A,U,C,G}}") from None


def index_to_seq(idx) -> str:
    return "".join(BASES[int(i)] for i in idx)


def argmax_bases(probs: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties resolve in A<U<C<G order
    return np.argmax(probs, axis=-1)


@dataclass
class ModelConfig:
    embed_dim: int = 64  # E
    hidden: int = 128  # H, encoder/decoder hidden width
    latent_dim: int = 32  # D
    time_dim: int = 64  # W
    den_hidden: int = 128  # denoiser residual width
    blocks: int = 4  # B
    cond_dim: int = 28  # per-residue conditioning feature width (input)
    activation: str = "silu"

    def validate(self):
        for name in ("hidden", "latent_dim", "time_dim", "den_hidden", "cond_dim"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"model.{name} must be >= 1")
        if self.embed_dim < 8:
            raise InvalidArgumentError("model.embed_dim must be >= 8")
        if self.blocks < 0:
            raise InvalidArgumentError("model.blocks must be >= 0")
        if self.activation not in ("silu", "relu"):
            raise InvalidArgumentError(f"unknown activation {self.activation!r}")


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    E, H, D, W, Hd, C = (cfg.embed_dim, cfg.hidden, cfg.latent_dim, cfg.time_dim,
                         cfg.den_hidden, cfg.cond_dim)
    shapes = {"emb": (4, E)}
    for prefix, dims in (("enc", (E, H, H, D)), ("dec", (D, H, H, 4))):
        for i in range(3):
            shapes[f"{prefix}.w{i + 1}"] = (dims[i], dims[i + 1])
            shapes[f"{prefix}.b{i + 1}"] = (dims[i + 1],)
    shapes.update({
        "den.w_in": (D, Hd), "den.b_in": (Hd,),
        "den.w_time": (W, Hd), "den.b_time": (Hd,),
        "den.w_cond": (C, Hd), "den.b_cond": (Hd,),
    })
    for k in range(cfg.blocks):
        shapes[f"den.blk{k}.w1"] = (Hd, Hd)
        shapes[f"den.blk{k}.b1"] = (Hd,)
        shapes[f"den.blk{k}.w2"] = (Hd, Hd)
        shapes[f"den.blk{k}.b2"] = (Hd,)
    shapes["den.w_out"] = (Hd, D)
    shapes["den.b_out"] = (D,)
    return shapes


def group_of(name: str) -> str:
    return name.split(".", 1)[0]


@dataclass
class ModelState:
    """All trainable tensors plus optimizer moments and a step counter."""

    config: ModelConfig
    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    seed: int | None = None

    @property
    def dtype(self):
        """Storage dtype of the parameters (arithmetic is always float64)."""
        return self.params["emb"].dtype

    def compute_params(self) -> dict[str, np.ndarray]:
        return {k: a.astype(np.float64, copy=False) for k, a in self.params.items()}

    def copy(self) -> "ModelState":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "ModelState":
        out = self.copy()
        out.params = {k: a.astype(dtype) for k, a in self.params.items()}
        out.m = {k: a.astype(dtype) for k, a in self.m.items()}
        out.v = {k: a.astype(dtype) for k, a in self.v.items()}
        return out

    def names(self, groups=None) -> list[str]:
        return [n for n in self.params if groups is None or group_of(n) in groups]

    def zero(self) -> "ModelState":
        out = self.copy()
        for a in out.params.values():
            a[...] = 0
        return out

    def hyperparameters(self) -> dict:
        return asdict(self.config)


def init_state(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32, seed=None) -> ModelState:
    """Glorot-uniform weights, zero biases."""
    cfg.validate()
    params = {}
    for name, shape in param_shapes(cfg).items():
        if len(shape) == 2:
            params[name] = nn.glorot(rng, shape[0], shape[1], dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    return ModelState(config=cfg, params=params, seed=seed)


def _check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError(f"{what} contains non-finite values")


# ---------------------------------------------------------------- forward ---

def embed(seq_idx: np.ndarray, state: ModelState) -> np.ndarray:
    return state.params["emb"][seq_idx]


def encode(h: np.ndarray, state: ModelState) -> np.ndarray:
    """Compress per-residue embeddings ``(L, E)`` to latents ``(L, D)``."""
    _check_finite(h, "encoder input")
    out, _ = nn.mlp3_forward(np.asarray(h, dtype=np.float64), state.compute_params(), "enc",
                             state.config.activation)
    return out


def encode_seq(seq: str, state: ModelState) -> np.ndarray:
    return encode(embed(seq_to_index(seq), state), state)


def decoder_logits(z: np.ndarray, state: ModelState) -> np.ndarray:
    out, _ = nn.mlp3_forward(np.asarray(z, dtype=np.float64), state.compute_params(), "dec",
                             state.config.activation)
    return out


def decode(z: np.ndarray, state: ModelState) -> np.ndarray:
    """Per-residue probabilities over (A, U, C, G)."""
    _check_finite(z, "decoder input")
    return nn.softmax(decoder_logits(z, state))


def _denoise_forward(z_t, t_rows, c, params, cfg, dtype):
    p = params
    temb = nn.timestep_embedding(t_rows, cfg.time_dim, dtype)
    h0, x_in = nn.linear_forward(z_t, p["den.w_in"], p["den.b_in"])
    h1, x_time = nn.linear_forward(temb, p["den.w_time"], p["den.b_time"])
    h2, x_cond = nn.linear_forward(c, p["den.w_cond"], p["den.b_cond"])
    h = h0 + h1 + h2
    blocks = []
    for k in range(cfg.blocks):
        a, ac0 = nn.act_forward(h, "silu")
        u, xa = nn.linear_forward(a, p[f"den.blk{k}.w1"], p[f"den.blk{k}.b1"])
        u2, ac1 = nn.act_forward(u, "silu")
        r, xu = nn.linear_forward(u2, p[f"den.blk{k}.w2"], p[f"den.blk{k}.b2"])
        h = h + r
        blocks.append((ac0, xa, ac1, xu))
    a, acf = nn.act_forward(h, "silu")
    out, xf = nn.linear_forward(a, p["den.w_out"], p["den.b_out"])
    return out, (x_in, x_time, x_cond, blocks, acf, xf)


def _denoise_backward(g, cache, params, cfg, grads):
    p = params
    x_in, x_time, x_cond, blocks, acf, xf = cache
    g = nn.linear_backward(g, xf, p["den.w_out"], grads, "den.w_out", "den.b_out")
    gh = nn.act_backward(g, acf, "silu")
    for k in reversed(range(cfg.blocks)):
        ac0, xa, ac1, xu = blocks[k]
        gr = nn.linear_backward(gh, xu, p[f"den.blk{k}.w2"], grads, f"den.blk{k}.w2", f"den.blk{k}.b2")
        gr = nn.act_backward(gr, ac1, "silu")
        gr = nn.linear_backward(gr, xa, p[f"den.blk{k}.w1"], grads, f"den.blk{k}.w1", f"den.blk{k}.b1")
        gh = gh + nn.act_backward(gr, ac0, "silu")
    nn.linear_backward(gh, x_time, p["den.w_time"], grads, "den.w_time", "den.b_time")
    nn.linear_backward(gh, x_cond, p["den.w_cond"], grads, "den.w_cond", "den.b_cond")
    return nn.linear_backward(gh, x_in, p["den.w_in"], grads, "den.w_in", "den.b_in")


def _rows_t(t, n: int) -> np.ndarray:
    t_arr = np.asarray(t)
    return np.full(n, int(t_arr)) if t_arr.ndim == 0 else t_arr.astype(np.int64)


def denoise_predict(z_t: np.ndarray, t, c: np.ndarray, state: ModelState) -> np.ndarray:
    """Predict the clean latent from ``z_t``; ``t`` may be a scalar or one step per row."""
    cfg = state.config
    if z_t.ndim != 2 or z_t.shape[1] != cfg.latent_dim:
        raise InvalidArgumentError(f"z_t must be (L, {cfg.latent_dim}), got {z_t.shape}")
    if c.ndim != 2 or c.shape != (z_t.shape[0], cfg.cond_dim):
        raise InvalidArgumentError(f"conditioning must be ({z_t.shape[0]}, {cfg.cond_dim}), got {c.shape}")
    out, _ = _denoise_forward(np.asarray(z_t, dtype=np.float64), _rows_t(t, len(z_t)),
                              np.asarray(c, dtype=np.float64), state.compute_params(), cfg, np.float64)
    return out


# ------------------------------------------------------------------- loss ---

def ldm_loss(z0: np.ndarray, z0_hat: np.ndarray, target_seq: str, state: ModelState,
             batch_size: int = 1) -> float:
    """MSE (summed over entries) minus the decoder log-likelihood of the target.

    Both terms are divided by ``batch_size`` when several sequences are stacked.
    """
    idx = seq_to_index(target_seq)
    if not len(idx) == len(z0) == len(z0_hat):
        raise InvalidArgumentError("z0, z0_hat and target lengths disagree")
    mse = float(np.sum((z0.astype(np.float64) - z0_hat) ** 2))
    logp = nn.log_softmax(decoder_logits(z0_hat, state).astype(np.float64))
    ce = -float(np.sum(logp[np.arange(len(idx)), idx]))
    return (mse + ce) / batch_size


def ldm_loss_and_grads(state: ModelState, seq_idx: np.ndarray, t_rows: np.ndarray,
                       c: np.ndarray, eps: np.ndarray, sched: NoiseSchedule,
                       z0: np.ndarray | None = None, batch_size: int = 1,
                       groups=("den", "dec", "enc", "emb")):
    """Loss of the latent diffusion objective and gradients for ``groups``.

    Rows may come from several sequences (``t_rows`` holds each row's step).
    When ``z0`` is None it is produced by the encoder, and gradients flow back
    into ``enc``/``emb`` through both the MSE target and the noised input.
    """
    cfg, p, dt = state.config, state.compute_params(), np.float64
    grads: dict[str, np.ndarray] = {}
    enc_cache = None
    if z0 is None:
        h = p["emb"][seq_idx]
        z0, enc_cache = nn.mlp3_forward(h, p, "enc", cfg.activation)
    z0 = z0.astype(dt, copy=False)
    ab = sched.bar_alpha[t_rows].astype(dt)[:, None]
    sa, sb = np.sqrt(ab), np.sqrt(1 - ab)
    z_t = sa * z0 + sb * eps.astype(dt, copy=False)
    z0_hat, den_cache = _denoise_forward(z_t, t_rows, c.astype(dt, copy=False), p, cfg, dt)
    diff = z0_hat - z0
    logits, dec_cache = nn.mlp3_forward(z0_hat, p, "dec", cfg.activation)
    logp = nn.log_softmax(logits)
    rows = np.arange(len(seq_idx))
    loss = (float(np.sum(diff.astype(np.float64) ** 2)) - float(np.sum(logp[rows, seq_idx], dtype=np.float64))) / batch_size

    g_logits = np.exp(logp)
    g_logits[rows, seq_idx] -= 1
    g_logits /= batch_size
    g_zhat = nn.mlp3_backward(g_logits, dec_cache, p, "dec", cfg.activation, grads)
    g_zhat = g_zhat + 2 * diff / batch_size
    g_zt = _denoise_backward(g_zhat, den_cache, p, cfg, grads)
    if enc_cache is not None and ({"enc", "emb"} & set(groups)):
        g_z0 = -2 * diff / batch_size + sa * g_zt
        g_h = nn.mlp3_backward(g_z0, enc_cache, p, "enc", cfg.activation, grads)
        g_emb = np.zeros_like(p["emb"])
        np.add.at(g_emb, seq_idx, g_h)
        grads["emb"] = g_emb
    grads = {k: np.asarray(g, dtype=dt) for k, g in grads.items() if group_of(k) in groups}
    return loss, grads


def autoencoder_loss_and_grads(state: ModelState, seq_idx: np.ndarray, batch_size: int = 1):
    """Cross-entropy reconstruction through embedding, encoder and decoder."""
    cfg, p = state.config, state.compute_params()
    grads: dict[str, np.ndarray] = {}
    h = p["emb"][seq_idx]
    z, enc_cache = nn.mlp3_forward(h, p, "enc", cfg.activation)
    logits, dec_cache = nn.mlp3_forward(z, p, "dec", cfg.activation)
    logp = nn.log_softmax(logits)
    rows = np.arange(len(seq_idx))
    loss = -float(np.sum(logp[rows, seq_idx], dtype=np.float64)) / batch_size
    g = np.exp(logp)
    g[rows, seq_idx] -= 1
    g /= batch_size
    g = nn.mlp3_backward(g, dec_cache, p, "dec", cfg.activation, grads)
    g = nn.mlp3_backward(g, enc_cache, p, "enc", cfg.activation, grads)
    g_emb = np.zeros_like(p["emb"])
    np.add.at(g_emb, seq_idx, g)
    grads["emb"] = g_emb
    return loss, {k: np.asarray(v, dtype=np.float64) for k, v in grads.items()}


def denoiser_vjp(state: ModelState, z_t, t_rows, c, g_out):
    """Gradients of ``sum(g_out * denoise_predict(...))`` w.r.t. denoiser params."""
    cfg, p = state.config, state.compute_params()
    out, cache = _denoise_forward(np.asarray(z_t, dtype=np.float64), t_rows,
                                  np.asarray(c, dtype=np.float64), p, cfg, np.float64)
    grads: dict[str, np.ndarray] = {}
    _denoise_backward(np.asarray(g_out, dtype=np.float64), cache, p, cfg, grads)
    return out, grads


# ------------------------------------------------------- gradient checking ---

def finite_difference_check(loss_fn, state: ModelState, analytic: dict, names: list[str],
                            rng: np.random.Generator, n_params: int = 200, h: float = 1e-3,
                            corrupt: tuple[str, tuple] | None = None, step_for=None) -> float:
    """Max relative error between ``analytic`` and float64 finite differences.

    Uses the fourth-order central stencil.
    ``loss_fn(state64) -> float`` is evaluated on a float64 copy of ``state``;
    the analytic gradients may come from any precision. ``corrupt`` doubles one
    analytic entry first (the entry is always among those checked).
    ``step_for(name, idx)`` may return a smaller step for a given entry, for
    losses that are only piecewise smooth.
    """
    analytic = {k: np.array(v, dtype=np.float64) for k, v in analytic.items()}
    base = state.astype(np.float64)
    sizes = np.array([base.params[n].size for n in names])
    picks = []
    total = int(sizes.sum())
    flat = rng.choice(total, size=min(n_params, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    for f in np.sort(flat):
        gi = int(np.searchsorted(offsets, f, side="right") - 1)
        picks.append((names[gi], np.unravel_index(int(f - offsets[gi]), base.params[names[gi]].shape)))
    if corrupt is not None:
        cname, cidx = corrupt
        cidx = tuple(cidx)
        analytic.setdefault(cname, np.zeros_like(base.params[cname]))[cidx] *= 2.0
        picks = [pk for pk in picks if not (pk[0] == cname and tuple(pk[1]) == cidx)]
        picks.append((cname, cidx))
    worst = 0.0
    for name, idx in picks:
        arr = base.params[name]
        orig = arr[idx]
        hi = h if step_for is None else min(h, step_for(name, idx))
        f = []
        for step in (2 * hi, hi, -hi, -2 * hi):
            arr[idx] = orig + step
            f.append(loss_fn(base))
        arr[idx] = orig
        num = (8 * (f[1] - f[2]) - (f[0] - f[3])) / (12 * hi)
        a = float(analytic.get(name, np.zeros_like(arr))[idx])
        worst = max(worst, abs(a - num) / (abs(a) + 1e-8))
    return worst


def check_gradients(state: ModelState, sample, sched: NoiseSchedule, n_params: int = 200,
                    rng: np.random.Generator | None = None, corrupt=None) -> float:
    """Finite-difference audit of the latent diffusion loss gradients.

    ``sample`` is ``(z0, t, c, target)``; ``z0`` may be None to route the
    target through embedding and encoder so every parameter group is covered.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    z0, t, c, target = sample
    seq_idx = seq_to_index(target)
    t_rows = _rows_t(t, len(seq_idx))
    eps = rng.standard_normal((len(seq_idx), state.config.latent_dim))
    groups = ("den", "dec") if z0 is not None else ("den", "dec", "enc", "emb")
    _, grads = ldm_loss_and_grads(state, seq_idx, t_rows, c, eps, sched, z0=z0, groups=groups)

    def loss_fn(s64):
        z = None if z0 is None else np.asarray(z0, dtype=np.float64)
        return ldm_loss_and_grads(s64, seq_idx, t_rows, c, eps, sched, z0=z, groups=())[0]

    return finite_difference_check(loss_fn, state, grads, state.names(groups), rng,
                                   n_params=n_params, corrupt=corrupt)


def sample_forward_noise(z0, t, rng, sched):
    """Convenience: draw ``eps`` and return ``(z_t, eps)``."""
    eps = rng.standard_normal(z0.shape)
    return forward_noise(z0, t, eps, sched), eps
