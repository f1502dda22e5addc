"""Secondary-structure oracle: MFE folding, SS similarity, 3D layout surrogate.

The DP kernels come from the compiled ``_fold_ext`` module when it was built
and from ``_fold_py`` otherwise; ``KERNEL_BACKEND`` says which one is live.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, TooLargeError

log = logging.getLogger(__name__)

try:
    from . import _fold_ext as _kernels

    KERNEL_BACKEND = "cython"
except ImportError:  # pragma: no cover - depends on the build
    from . import _fold_py as _kernels

    KERNEL_BACKEND = "python"

ALPHABET = "AUCG"
MAX_FOLD_LEN = 512
MAX_BRUTE_LEN = 14


@dataclass(frozen=True)
class EnergyModel:
    """Pair-additive energies in kcal/mol; unlisted pairs are forbidden."""

    pair_energies: dict = field(default_factory=lambda: {"GC": -3.0, "AU": -2.0, "GU": -1.0})
    hairpin_min: int = 3

    def __post_init__(self):
        if any(e >= 0 for e in self.pair_energies.values()):
            raise InvalidArgumentError("allowed pair energies must be negative")
        if self.hairpin_min < 0:
            raise InvalidArgumentError("hairpin_min must be >= 0")

    def pair_matrix(self) -> np.ndarray:
        m = np.full((4, 4), np.inf)
        for pair, e in self.pair_energies.items():
            a, b = ALPHABET.index(pair[0]), ALPHABET.index(pair[1])
            m[a, b] = m[b, a] = float(e)
        return m

    def pair_energy(self, a: str, b: str) -> float:
        return float(self.pair_matrix()[ALPHABET.index(a), ALPHABET.index(b)])


DEFAULT_ENERGY = EnergyModel()


def encode_seq(seq: str) -> np.ndarray:
    try:
        return np.array([ALPHABET.index(c) for c in seq], dtype=np.int8)
    except ValueError:
        bad = sorted(set(seq) - set(ALPHABET))
        raise InvalidArgumentError(f"sequence contains symbols outside {{A,U,C,G}}: {bad}") from None


def pairs_to_dotbracket(pt) -> str:
    return "".join("." if p < 0 else ("(" if p > i else ")") for i, p in enumerate(pt))


def dotbracket_to_pairs(db: str) -> np.ndarray:
    """Pair table (partner index or -1); raises on unbalanced input."""
    pt = np.full(len(db), -1, dtype=np.int64)
    stack = []
    for i, ch in enumerate(db):
        if ch == "(":
            stack.append(i)
        elif ch == ")":
            if not stack:
                raise InvalidArgumentError(f"unbalanced ')' at {i} in {db!r}")
            j = stack.pop()
            pt[i], pt[j] = j, i
        elif ch != ".":
            raise InvalidArgumentError(f"invalid dot-bracket symbol {ch!r}")
    if stack:
        raise InvalidArgumentError(f"unbalanced '(' at {stack[-1]} in {db!r}")
    return pt


def validate_dotbracket(db: str, hairpin_min: int = 3) -> np.ndarray:
    pt = dotbracket_to_pairs(db)
    for i, j in enumerate(pt):
        if j > i and j - i - 1 < hairpin_min:
            raise InvalidArgumentError(f"pair ({i},{j}) closes a loop shorter than {hairpin_min}")
    return pt


def structure_energy(seq: str, db: str, em: EnergyModel = DEFAULT_ENERGY) -> float:
    """Re-evaluate the energy of a given structure (inf if it uses a forbidden pair)."""
    codes = encode_seq(seq)
    pm = em.pair_matrix()
    total = 0.0
    for i, j in enumerate(dotbracket_to_pairs(db)):
        if j > i:
            total += pm[codes[i], codes[j]]
    return float(total)


def fold_mfe(seq: str, em: EnergyModel = DEFAULT_ENERGY) -> tuple[str, float]:
    """Minimum-energy non-crossing pairing of ``seq`` and its energy."""
    codes = encode_seq(seq)
    if not 1 <= len(codes) <= MAX_FOLD_LEN:
        raise InvalidArgumentError(f"sequence length {len(codes)} outside [1, {MAX_FOLD_LEN}]")
    pm = np.ascontiguousarray(em.pair_matrix())
    V = _kernels.mfe_fill(codes, pm, em.hairpin_min)
    pt = _kernels.mfe_traceback(codes, pm, em.hairpin_min, V)
    return pairs_to_dotbracket(pt), float(V[0, len(codes)]) + 0.0


def brute_force_fold(seq: str, em: EnergyModel = DEFAULT_ENERGY) -> tuple[str, float]:
    """Exhaustive enumeration of every valid pairing; test oracle for ``fold_mfe``."""
    codes = encode_seq(seq)
    L = len(codes)
    if L > MAX_BRUTE_LEN:
        raise TooLargeError(f"brute force refuses L={L} > {MAX_BRUTE_LEN}")
    pm = em.pair_matrix()
    hp = em.hairpin_min

    def structures(i, j):
        # every pairing of the half-open interval [i, j) as (energy, pairs)
        if i >= j:
            yield 0.0, ()
            return
        yield from structures(i + 1, j)
        for k in range(i + hp + 1, j):
            e = pm[codes[i], codes[k]]
            if not np.isfinite(e):
                continue
            for e_in, p_in in structures(i + 1, k):
                for e_out, p_out in structures(k + 1, j):
                    yield e + e_in + e_out, ((i, k),) + p_in + p_out

    best_e, best_p = 0.0, ()
    for e, pairs in structures(0, L):
        if e < best_e:
            best_e, best_p = e, pairs
    pt = np.full(L, -1)
    for i, k in best_p:
        pt[i], pt[k] = k, i
    return pairs_to_dotbracket(pt), float(best_e) + 0.0


def ss_similarity(pred: str, truth: str) -> float:
    """Fraction of positions whose paired/unpaired category agrees."""
    if len(pred) != len(truth):
        raise InvalidArgumentError(f"length mismatch: {len(pred)} vs {len(truth)}")
    if not pred:
        raise InvalidArgumentError("empty structures")
    match = sum((a == ".") == (b == ".") for a, b in zip(pred, truth))
    return match / len(pred)


# ------------------------------------------------------------ 3D surrogate ---

RISE = 2.8
TWIST = math.radians(32.7)
RADIUS = 9.0
STEP = 5.9


def _elements(pt, lo, hi):
    """Split ``[lo, hi)`` of one loop into unpaired residues and stem starts."""
    out = []
    p = lo
    while p < hi:
        if pt[p] < 0:
            out.append(("u", p))
            p += 1
        else:
            out.append(("s", p))
            p = int(pt[p]) + 1
    return out


def helix_layout(db: str) -> np.ndarray:
    """Deterministic C4'-like coordinates (Angstrom) for a dot-bracket string.

    Stems become ideal double helices (rise 2.8, twist 32.7 deg, radius 9.0)
    growing along +y; unpaired residues of the exterior loop sit on a straight
    line 5.9 apart, and loop residues inside a stem follow a sine arc bridging
    the closing pair. Child stems inherit the closing pair's orientation.
    """
    pt = dotbracket_to_pairs(db)
    L = len(db)
    X = np.zeros((L, 3))
    up = np.array([0.0, 1.0, 0.0])

    def place_stem(i0, base, u):
        w = np.cross(u, up)
        n = 0
        while True:
            i, j = i0 + n, int(pt[i0 + n])
            theta = n * TWIST
            axis = base + RADIUS * u + n * RISE * up
            radial = math.cos(theta) * u - math.sin(theta) * w
            X[i] = axis - RADIUS * radial
            X[j] = axis + RADIUS * radial
            if pt[i + 1] == j - 1 and i + 1 < j - 1:
                n += 1
                continue
            return i, j

    def width(el):
        return 2 * RADIUS if el[0] == "s" else 0.0

    def place_loop(elements, start, direction, arc_to=None):
        # lay elements along a line (exterior) or an arc ending at ``arc_to``
        spans = []
        s = 0.0 if arc_to is None else STEP
        for el in elements:
            spans.append(s)
            s += width(el) + STEP
        total = s if arc_to is not None else max(s - STEP, 0.0)
        chord = None if arc_to is None else arc_to - start
        for el, s0 in zip(elements, spans):
            if arc_to is None:
                pos = start + s0 * direction
                u = direction
            else:
                frac = s0 / total
                height = max(STEP, total / math.pi)
                pos = start + frac * chord + height * math.sin(math.pi * frac) * up
                u = chord / (np.linalg.norm(chord) + 1e-12)
            if el[0] == "u":
                X[el[1]] = pos
            else:
                close_i, close_j = place_stem(el[1], pos, u)
                inner = _elements(pt, close_i + 1, close_j)
                place_loop(inner, X[close_i], None, arc_to=X[close_j])

    def place_root():
        place_loop(_elements(pt, 0, L), np.zeros(3), np.array([1.0, 0.0, 0.0]))

    place_root()
    return X
