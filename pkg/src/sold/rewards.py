"""Reward composition for fine-tuning.

A reward is a weighted sum of secondary-structure agreement, a stability term
derived from the folding energy, and lDDT of the layout surrogate against the
target coordinates. ``piecewise_total`` switches between the short-term reward
(one reverse step) and the long-term reward (a jump to ``t = 0``).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidArgumentError
from .fold import DEFAULT_ENERGY, EnergyModel, fold_mfe, helix_layout, ss_similarity
from .metrics import lddt


@dataclass
class RewardSpec:
    w_ss: float = 0.0
    w_mfe: float = 1.0
    w_lddt: float = 0.0
    tau: int = 90
    eta: float = 1.0
    # "mapped": exp(1/(mfe - 1/4)) in (0, 1); "raw": -mfe
    mfe_mode: str = "mapped"
    folder: str = "nussinov"
    layout: str = "helix"

    def validate(self, T: int | None = None) -> "RewardSpec":
        ws = (self.w_ss, self.w_mfe, self.w_lddt)
        if any(w < 0 for w in ws) or not any(w > 0 for w in ws):
            raise InvalidArgumentError(f"reward weights must be >= 0 with one > 0, got {ws}")
        if self.tau < 0 or (T is not None and self.tau > T):
            raise InvalidArgumentError(f"tau={self.tau} outside [0, T]")
        if self.eta < 0:
            raise InvalidArgumentError("eta must be >= 0")
        if self.mfe_mode not in ("mapped", "raw"):
            raise InvalidArgumentError(f"unknown mfe_mode {self.mfe_mode!r}")
        if self.folder != "nussinov" or self.layout != "helix":
            raise InvalidArgumentError(f"unknown oracle selection {self.folder}/{self.layout}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def mfe_reward(mfe: float) -> float:
    """Map a folding energy in (-inf, 0] to (0, e^-4] via ``exp(1 / (mfe - 1/4))``."""
    if mfe > 0:
        raise InvalidArgumentError(f"mfe must be <= 0, got {mfe}")
    return math.exp(1.0 / (mfe - 0.25))


def stability_term(mfe: float, spec: RewardSpec) -> float:
    return mfe_reward(mfe) if spec.mfe_mode == "mapped" else -mfe


def composite_reward(seq: str, truth_db: str, truth_coords, spec: RewardSpec,
                     em: EnergyModel = DEFAULT_ENERGY) -> float:
    """Weighted structural reward of a designed sequence against its target."""
    if not len(seq) == len(truth_db) == len(truth_coords):
        raise InvalidArgumentError("sequence, structure and coordinates differ in length")
    db, mfe = fold_mfe(seq, em)
    total = 0.0
    if spec.w_ss:
        total += spec.w_ss * ss_similarity(db, truth_db)
    if spec.w_mfe:
        total += spec.w_mfe * stability_term(mfe, spec)
    if spec.w_lddt:
        total += spec.w_lddt * lddt(truth_coords, helix_layout(db))
    return total


def reward_components(seq: str, truth_db: str, truth_coords) -> dict:
    db, mfe = fold_mfe(seq)
    return {
        "ss": ss_similarity(db, truth_db),
        "mfe": mfe,
        "mfe_mapped": mfe_reward(mfe),
        "lddt": lddt(truth_coords, helix_layout(db)),
    }


def piecewise_total(t: int, r_short: float, r_long: float, spec: RewardSpec) -> float:
    """Short-term reward while ``t >= tau``, long-term reward below."""
    return r_short if t >= spec.tau else r_long


def normalize_batch(rewards) -> np.ndarray:
    r = np.asarray(rewards, dtype=np.float64)
    if r.size == 0:
        raise InvalidArgumentError("empty reward batch")
    return (r - r.mean()) / (r.std() + 1e-8)


def _reward_job(args):
    seq, db, coords, spec = args
    return composite_reward(seq, db, coords, spec)


def batch_rewards(jobs, spec: RewardSpec, workers: int = 1) -> list[float]:
    """Evaluate ``(seq, truth_db, truth_coords)`` jobs, in worker processes if ``workers > 1``."""
    payload = [(s, db, np.asarray(x), spec) for s, db, x in jobs]
    if workers <= 1 or len(payload) < 2:
        return [_reward_job(p) for p in payload]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_reward_job, payload, chunksize=max(1, len(payload) // (4 * workers))))
