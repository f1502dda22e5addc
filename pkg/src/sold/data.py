"""Records, PDB backbone parsing, geometric features, FASTA, synthesis, splits."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import FilteredRecordError, InvalidArgumentError, ParseError
from .fold import MAX_FOLD_LEN, fold_mfe, helix_layout

log = logging.getLogger(__name__)

NUCLEOTIDES = frozenset("AUCG")
RBF_COUNT = 16
RBF_MAX = 20.0
POS_FREQS = (1, 2, 4)
FEATURE_DIM = RBF_COUNT + 2 * len(POS_FREQS) + 6
DEFAULT_K = 16


@dataclass
class RnaRecord:
    id: str
    sequence: str
    coords: np.ndarray
    truth_db: str = ""
    features: np.ndarray | None = field(default=None, repr=False)

    def validate(self) -> "RnaRecord":
        L = len(self.sequence)
        if not 1 <= L <= MAX_FOLD_LEN:
            raise FilteredRecordError(f"{self.id}: length {L} outside [1, {MAX_FOLD_LEN}]")
        bad = set(self.sequence) - NUCLEOTIDES
        if bad:
            raise FilteredRecordError(f"{self.id}: non-standard nucleotides {sorted(bad)}")
        if self.coords.shape != (L, 3) or not np.all(np.isfinite(self.coords)):
            raise InvalidArgumentError(f"{self.id}: coords must be finite ({L}, 3)")
        if self.truth_db and len(self.truth_db) != L:
            raise InvalidArgumentError(f"{self.id}: structure length differs from sequence")
        if self.features is not None and (len(self.features) != L or not np.all(np.isfinite(self.features))):
            raise InvalidArgumentError(f"{self.id}: features must be finite with {L} rows")
        return self


# ------------------------------------------------------------------- PDB ---

def _residue_name(raw: str) -> str:
    name = raw.strip()
    # RNA residues appear as "A", "RA" or "  A" depending on the writer
    if len(name) == 2 and name[0] == "R" and name[1] in NUCLEOTIDES:
        return name[1]
    return name


def parse_pdb_backbone(text: str, chain: str | None = None, record_id: str = "pdb") -> RnaRecord:
    """Extract one C4' atom per residue of ``chain`` (first chain if None).

    Only the first model is read. HETATM groups without backbone atoms
    (waters, ions, ligands) are ignored; any other residue that is not
    A/U/C/G rejects the whole record.
    """
    residues: dict[tuple, dict] = {}
    order = []
    for lineno, line in enumerate(text.splitlines(), 1):
        rec = line[:6]
        if rec.startswith("ENDMDL"):
            break
        if rec not in ("ATOM  ", "HETATM"):
            continue
        if len(line) < 54:
            raise ParseError(f"line {lineno}: ATOM record shorter than 54 columns")
        ch = line[21]
        if chain is None:
            chain = ch
        if ch != chain:
            continue
        atom = line[12:16].strip().replace("*", "'")
        try:
            key = (int(line[22:26]), line[26])
            xyz = (float(line[30:38]), float(line[38:46]), float(line[46:54]))
        except ValueError:
            raise ParseError(f"line {lineno}: malformed residue number or coordinates") from None
        if line[16] not in (" ", "A"):
            continue  # alternate location other than the first
        if key not in residues:
            residues[key] = {"name": _residue_name(line[17:20]), "het": rec == "HETATM",
                             "atoms": {}, "line": lineno}
            order.append(key)
        residues[key]["atoms"].setdefault(atom, xyz)
    seq, coords = [], []
    for key in order:
        res = residues[key]
        if res["het"] and not ({"C4'", "P"} & res["atoms"].keys()):
            continue
        label = f"{res['name']}{key[0]}{key[1].strip()} (chain {chain})"
        if res["name"] not in NUCLEOTIDES:
            raise FilteredRecordError(f"{record_id}: non-standard residue {label}")
        if "C4'" not in res["atoms"]:
            raise ParseError(f"{record_id}: residue {label} has no C4' atom")
        seq.append(res["name"])
        coords.append(res["atoms"]["C4'"])
    if not seq:
        raise ParseError(f"{record_id}: no residues found for chain {chain!r}")
    return RnaRecord(id=record_id, sequence="".join(seq), coords=np.array(coords, dtype=np.float64))


def read_pdb(path, chain=None) -> RnaRecord:
    with open(path) as fh:
        rec_id = os.path.splitext(os.path.basename(path))[0]
        return parse_pdb_backbone(fh.read(), chain=chain, record_id=rec_id)


def write_pdb(path, sequence: str, coords, chain: str = "A"):
    """Minimal C4'-only PDB that :func:`parse_pdb_backbone` reads back."""
    with open(path, "w") as fh:
        for i, (base, (x, y, z)) in enumerate(zip(sequence, coords)):
            fh.write(f"ATOM  {i + 1:5d}  C4' {base:>3s} {chain}{i + 1:4d}    "
                     f"{x:8.3f}{y:8.3f}{z:8.3f}  1.00  0.00           C\n")
        fh.write("END\n")


# -------------------------------------------------------------- features ---

def rbf_centers() -> np.ndarray:
    return np.linspace(0.0, RBF_MAX, RBF_COUNT)


def rbf(d) -> np.ndarray:
    """Gaussian radial basis expansion; width equals the center spacing."""
    centers = rbf_centers()
    width = centers[1] - centers[0]
    return np.exp(-(((np.asarray(d)[..., None] - centers) / width) ** 2))


def _angle(a, b, c):
    u, v = a - b, c - b
    cos = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v) + 1e-12)
    return math.acos(float(np.clip(cos, -1.0, 1.0)))


def _dihedral(p0, p1, p2, p3):
    b0, b1, b2 = p0 - p1, p2 - p1, p3 - p2
    b1n = b1 / (np.linalg.norm(b1) + 1e-12)
    v = b0 - np.dot(b0, b1n) * b1n
    w = b2 - np.dot(b2, b1n) * b1n
    return math.atan2(float(np.dot(np.cross(b1n, v), w)), float(np.dot(v, w)))


def featurize_backbone(coords, k: int = DEFAULT_K, noise: float = 0.0, rng=None) -> np.ndarray:
    """Per-residue rigid-motion invariant features, ``(L, FEATURE_DIM)``.

    Columns: mean RBF expansion of the distances to the ``k`` nearest
    residues (16), sin/cos position encodings of ``i / (L-1)`` (6), then
    bond angle and dihedral as (cos, sin, defined-mask) triples (6).
    ``noise`` adds isotropic Gaussian jitter (Angstrom) to the coordinates first.
    """
    x = np.asarray(coords, dtype=np.float64)
    L = len(x)
    if x.ndim != 2 or x.shape[1] != 3 or L < 2:
        raise InvalidArgumentError(f"coords must be (L>=2, 3), got {x.shape}")
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    if k >= L:
        log.warning("k=%d >= L=%d; using k=%d", k, L, L - 1)
        k = L - 1
    if noise > 0:
        x = x + noise * (rng if rng is not None else np.random.default_rng()).standard_normal(x.shape)
    d = np.sqrt(np.sum((x[:, None] - x[None]) ** 2, axis=-1))
    np.fill_diagonal(d, np.inf)
    near = np.sort(d, axis=1)[:, :k]
    feats = np.zeros((L, FEATURE_DIM))
    feats[:, :RBF_COUNT] = rbf(near).mean(axis=1)
    rel = np.arange(L) / (L - 1)
    col = RBF_COUNT
    for f in POS_FREQS:
        feats[:, col] = np.sin(math.pi * f * rel)
        feats[:, col + 1] = np.cos(math.pi * f * rel)
        col += 2
    for i in range(1, L - 1):
        a = _angle(x[i - 1], x[i], x[i + 1])
        feats[i, col:col + 3] = (math.cos(a), math.sin(a), 1.0)
    for i in range(1, L - 2):
        phi = _dihedral(x[i - 1], x[i], x[i + 1], x[i + 2])
        feats[i, col + 3:col + 6] = (math.cos(phi), math.sin(phi), 1.0)
    return feats


def complete_record(rec: RnaRecord, k: int = DEFAULT_K, noise: float = 0.0, rng=None) -> RnaRecord:
    """Fill in the structure and features of a parsed record and validate it."""
    rec.validate()
    if not rec.truth_db:
        rec.truth_db = fold_mfe(rec.sequence)[0]
    if rec.features is None:
        rec.features = featurize_backbone(rec.coords, k=k, noise=noise, rng=rng)
    return rec.validate()


# ----------------------------------------------------------------- FASTA ---

def read_fasta(path) -> list[tuple[str, str]]:
    entries, name, chunks = [], None, []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith(";"):
                continue
            if line.startswith(">"):
                if name is not None:
                    entries.append((name, "".join(chunks)))
                name, chunks = line[1:].split()[0] if line[1:].strip() else f"seq{len(entries) + 1}", []
            elif name is None:
                raise ParseError(f"{path}:{lineno}: sequence data before the first '>' header")
            else:
                chunks.append(line.upper().replace("T", "U"))
    if name is not None:
        entries.append((name, "".join(chunks)))
    return entries


# ------------------------------------------------------------- synthesis ---

def gen_synthetic(n: int, min_len: int = 24, max_len: int = 64, seed: int = 0,
                  k: int = DEFAULT_K) -> list[RnaRecord]:
    """Random sequences with their MFE structure, layout coordinates and features."""
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}")
    if not 2 <= min_len <= max_len <= MAX_FOLD_LEN:
        raise InvalidArgumentError(f"length range [{min_len}, {max_len}] invalid")
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        L = int(rng.integers(min_len, max_len + 1))
        seq = "".join(rng.choice(list("AUCG"), size=L))
        db, _ = fold_mfe(seq)
        coords = helix_layout(db)
        rec = RnaRecord(id=f"syn{i:04d}", sequence=seq, coords=coords, truth_db=db,
                        features=featurize_backbone(coords, k=k))
        records.append(rec.validate())
    return records


def split_dataset(records, ratios=(7, 1, 2), seed: int = 0):
    """Deterministic ``(train, finetune, test)`` partition, duplicates kept together.

    Records sharing a sequence string form one group; groups are shuffled and
    assigned greedily so split sizes follow ``ratios`` as closely as possible.
    """
    records = list(records)
    ratios = np.asarray(ratios, dtype=np.float64)
    if len(ratios) != 3 or np.any(ratios <= 0):
        raise InvalidArgumentError(f"ratios must be three positive numbers, got {ratios}")
    groups: dict[str, list] = {}
    for r in records:
        groups.setdefault(r.sequence, []).append(r)
    if len(groups) < 3:
        raise InvalidArgumentError(f"need at least 3 distinct sequences to split, got {len(groups)}")
    keys = sorted(groups)
    np.random.default_rng(seed).shuffle(keys)
    frac = ratios / ratios.sum()
    target = np.maximum(np.round(frac * len(records)), 1.0)
    splits = ([], [], [])
    counts = np.zeros(3)
    for key in keys:
        # largest remaining deficit wins; ties go to the earlier split
        j = int(np.argmax(target - counts))
        splits[j].extend(groups[key])
        counts[j] += len(groups[key])
    return splits


SPLIT_NAMES = ("train", "finetune", "test")


def write_manifest(path, splits, coords_dir):
    """Write coordinates as PDB files plus a ``id, sequence, coords, split`` TSV."""
    os.makedirs(coords_dir, exist_ok=True)
    written = [path]
    with open(path, "w") as fh:
        fh.write("id\tsequence\tcoords\tsplit\n")
        for name, recs in zip(SPLIT_NAMES, splits):
            for r in recs:
                cpath = os.path.join(coords_dir, f"{r.id}.pdb")
                write_pdb(cpath, r.sequence, r.coords)
                written.append(cpath)
                rel = os.path.relpath(cpath, os.path.dirname(os.path.abspath(path)))
                fh.write(f"{r.id}\t{r.sequence}\t{rel}\t{name}\n")
    return written


def read_manifest(path, k: int = DEFAULT_K, noise: float = 0.0, rng=None) -> dict[str, list[RnaRecord]]:
    """Load every record of a manifest, grouped by split label."""
    base = os.path.dirname(os.path.abspath(path))
    out: dict[str, list[RnaRecord]] = {name: [] for name in SPLIT_NAMES}
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != ["id", "sequence", "coords", "split"]:
            raise ParseError(f"{path}: unexpected manifest header {header}")
        for lineno, line in enumerate(fh, 2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 tab-separated fields")
            rid, seq, cpath, split = parts
            rec = read_pdb(os.path.join(base, cpath))
            rec.id = rid
            if rec.sequence != seq:
                raise ParseError(f"{path}:{lineno}: sequence differs from {cpath}")
            out.setdefault(split, []).append(complete_record(rec, k=k, noise=noise, rng=rng))
    return out
