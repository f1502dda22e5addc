"""Command-line entry point: ``sold <subcommand> [--config PATH] [--seed N] ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .checkpoint import file_sha256, load_checkpoint, save_checkpoint
from .config import RunConfig, load_config, substream
from .data import (SPLIT_NAMES, complete_record, gen_synthetic, read_fasta, read_manifest,
                   read_pdb, split_dataset, write_manifest)
from .errors import DataError, InvalidArgumentError, SoldError
from .fold import fold_mfe, helix_layout, ss_similarity
from .metrics import kabsch_rmsd, lddt, nt_recovery, sequence_recovery
from .rl import finetune, write_curves
from .sampler import sample_sequences, write_fasta, write_prob_sidecar
from .schedule import cosine_schedule
from .train import pretrain, reconstruction_recovery, validation_recovery

log = logging.getLogger("sold")

TAU_ARMS = {"long_only": None, "short_only": 0, "tau60": 60, "tau90": 90}


class Run:
    """Output directory plus the manifest of every file a command writes."""

    def __init__(self, command, cfg: RunConfig, out_dir, argv):
        self.command, self.cfg, self.out = command, cfg, out_dir
        self.argv = list(argv)
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        os.makedirs(out_dir, exist_ok=True)

    def path(self, *parts) -> str:
        p = os.path.join(self.out, *parts)
        os.makedirs(os.path.dirname(p), exist_ok=True)
        return p

    def wrote(self, *paths):
        self.outputs.extend(paths)

    def finish(self, extra=None):
        manifest = {
            "command": self.command,
            "argv": self.argv,
            "version": __version__,
            "seed": self.cfg.seed,
            "config": self.cfg.to_dict(),
            "inputs": {k: {"path": v, "sha256": file_sha256(v)} for k, v in self.inputs.items()},
            "outputs": [{"path": os.path.relpath(p, self.out), "sha256": file_sha256(p)}
                        for p in self.outputs],
            "extra": extra or {},
        }
        with open(os.path.join(self.out, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)


def _split(data, name):
    recs = data.get(name) or []
    if not recs:
        raise DataError(f"split {name!r} is empty")
    return recs


def _load_data(run: Run, path):
    if not path:
        raise DataError("--data manifest is required")
    run.inputs["data"] = path
    d = run.cfg.data
    return read_manifest(path, k=d.k_neighbors, noise=d.coord_noise,
                         rng=substream(run.cfg.seed, "data-noise"))


def _sched(cfg):
    return cosine_schedule(cfg.schedule.T, cfg.schedule.s)


def _write_rows(path, rows, columns):
    with open(path, "w") as fh:
        fh.write("\t".join(columns) + "\n")
        for r in rows:
            fh.write("\t".join("" if r.get(c) is None else
                               (f"{r[c]:.10g}" if isinstance(r[c], float) else str(r[c]))
                               for c in columns) + "\n")


# ------------------------------------------------------------- commands ---

def cmd_gen_data(run: Run, args):
    d = run.cfg.data
    records = gen_synthetic(d.n, d.min_len, d.max_len, seed=int(substream(run.cfg.seed, "data").integers(2**31)),
                            k=d.k_neighbors)
    splits = split_dataset(records, d.ratio_tuple(), seed=run.cfg.seed)
    run.wrote(*write_manifest(run.path("manifest.tsv"), splits, os.path.join(run.out, "coords")))
    log.info("wrote %d records (%s)", len(records), ", ".join(f"{n}={len(s)}" for n, s in zip(SPLIT_NAMES, splits)))


def _pretrain(run: Run, data, model_cfg=None):
    cfg = run.cfg
    train = _split(data, "train")
    return pretrain(train, model_cfg or cfg.model, _sched(cfg), cfg.train,
                    substream(cfg.seed, "init"), substream(cfg.seed, "diffusion-noise"),
                    val_records=data.get("finetune") or None, seed=cfg.seed)


def cmd_pretrain(run: Run, args):
    data = _load_data(run, args.data)
    state, rows = _pretrain(run, data)
    ckpt = run.path("ldm.ckpt")
    save_checkpoint(ckpt, state, extra={"stage": "pretrain"})
    log_path = run.path("pretrain_log.tsv")
    _write_rows(log_path, rows, ("phase", "epoch", "loss", "val_recovery"))
    run.wrote(ckpt, log_path)


def _finetune(run: Run, records, state, spec, curve_name):
    cfg = run.cfg
    tuned, rows = finetune(records, state, _sched(cfg), spec, cfg.ppo, substream(cfg.seed, "rl-sampling"),
                           workers=cfg.workers)
    curves = run.path(curve_name)
    write_curves(curves, rows)
    run.wrote(curves)
    return tuned, rows


def cmd_finetune(run: Run, args):
    run.inputs["checkpoint"] = args.checkpoint
    state, header = load_checkpoint(args.checkpoint)
    data = _load_data(run, args.data)
    records = data.get("finetune") or _split(data, "train")
    tuned, rows = _finetune(run, records, state, run.cfg.reward, "curves.tsv")
    ckpt = run.path("sold.ckpt")
    if rows:
        extra = dict(header.get("extra", {}), stage="finetune", reward_spec=run.cfg.reward.to_dict())
        save_checkpoint(ckpt, tuned, extra=extra)
    else:
        # zero epochs: hand the input through byte for byte
        with open(args.checkpoint, "rb") as src, open(ckpt, "wb") as dst:
            dst.write(src.read())
    run.wrote(ckpt)


def _targets(run: Run, args):
    if args.pdb:
        run.inputs["pdb"] = args.pdb
        d = run.cfg.data
        return [complete_record(read_pdb(args.pdb, chain=args.chain), k=d.k_neighbors)]
    data = _load_data(run, args.data)
    return _split(data, args.split)


def cmd_sample(run: Run, args):
    cfg = run.cfg
    run.inputs["checkpoint"] = args.checkpoint
    state, _ = load_checkpoint(args.checkpoint)
    sched = _sched(cfg)
    rng = substream(cfg.seed, "diffusion-noise")
    seqs, probs = [], []
    for rec in _targets(run, args):
        for i, (seq, p) in enumerate(sample_sequences(rec.features, cfg.sample.n, state, sched, eta=cfg.sample.eta,
                                                      rng=rng, method=cfg.sample.method, k=cfg.sample.k)):
            name = f"{rec.id}_{i}"
            seqs.append((name, seq))
            probs.append((name, p))
    fasta = run.path("designs.fasta")
    write_fasta(fasta, seqs)
    run.wrote(fasta)
    if cfg.sample.probs:
        side = run.path("designs.probs.tsv")
        write_prob_sidecar(side, probs)
        run.wrote(side)


def cmd_fold(run: Run, args):
    run.inputs["fasta"] = args.input
    out = run.path("folds.tsv")
    with open(out, "w") as fh:
        for name, seq in read_fasta(args.input):
            try:
                db, e = fold_mfe(seq)
            except InvalidArgumentError as exc:
                raise DataError(f"{args.input}: record {name}: {exc}") from None
            fh.write(f"{name}\t{db}\t{e:.1f}\n")
    run.wrote(out)


def cmd_evaluate(run: Run, args):
    cfg = run.cfg
    run.inputs["checkpoint"] = args.checkpoint
    state, _ = load_checkpoint(args.checkpoint)
    sched = _sched(cfg)
    rng = substream(cfg.seed, "diffusion-noise")
    rows, pooled = [], []
    for rec in _targets(run, args):
        seq, p = sample_sequences(rec.features, 1, state, sched, eta=cfg.sample.eta, rng=rng,
                                  method=cfg.sample.method, k=cfg.sample.k)[0]
        db, mfe = fold_mfe(seq)
        layout = helix_layout(db)
        rows.append({"id": rec.id, "seq_recovery": sequence_recovery(rec.sequence, p),
                     "ss": ss_similarity(db, rec.truth_db), "mfe": mfe,
                     "rmsd": kabsch_rmsd(rec.coords, layout) if len(seq) >= 3 else None,
                     "lddt": lddt(rec.coords, layout), "designed": seq})
        pooled.append((rec.sequence, p))
    cols = ("id", "seq_recovery", "ss", "mfe", "rmsd", "lddt", "designed")
    report = run.path("report.tsv")
    _write_rows(report, rows, cols)
    summary = {c: float(np.mean([r[c] for r in rows if r[c] is not None])) for c in cols[1:6]}
    summary["nt_recovery"] = nt_recovery(pooled)
    with open(report, "a") as fh:
        for k, v in summary.items():
            fh.write(f"#mean_{k}\t{v:.6f}\n" if k != "nt_recovery" else f"#nt_recovery\t{v:.6f}\n")
    run.wrote(report)
    return summary


def cmd_ablate_tau(run: Run, args):
    run.inputs["checkpoint"] = args.checkpoint
    state, _ = load_checkpoint(args.checkpoint)
    data = _load_data(run, args.data)
    records = data.get("finetune") or _split(data, "train")
    T = run.cfg.schedule.T
    arms = [a.strip() for a in run.cfg.ablation.tau_arms.split(",") if a.strip()]
    finals = {}
    for arm in arms:
        if arm not in TAU_ARMS:
            raise DataError(f"unknown tau arm {arm!r}; choose from {sorted(TAU_ARMS)}")
        tau = T if TAU_ARMS[arm] is None else min(TAU_ARMS[arm], T)
        spec = type(run.cfg.reward)(**dict(run.cfg.reward.to_dict(), tau=tau))
        _, rows = _finetune(run, records, state, spec, f"curves_{arm}.tsv")
        finals[arm] = rows[-1]["mean_r_total"] if rows else None
    return finals


def cmd_ablate_dim(run: Run, args):
    data = _load_data(run, args.data)
    cfg = run.cfg
    train = _split(data, "train")
    held = data.get("test") or train
    dims = [int(x) for x in cfg.ablation.dims.split(",") if x.strip()]
    rows = []
    for D in dims:
        model_cfg = type(cfg.model)(**dict(vars(cfg.model), latent_dim=D))
        state, _ = _pretrain(run, data, model_cfg=model_cfg)
        rows.append({"latent_dim": D, "reconstruction_recovery": reconstruction_recovery(held, state),
                     "generation_recovery": validation_recovery(held, state, _sched(cfg), seed=cfg.seed)})
        log.info("D=%d reconstruction %.4f generation %.4f", D, rows[-1]["reconstruction_recovery"],
                 rows[-1]["generation_recovery"])
    out = run.path("ablate_dim.tsv")
    _write_rows(out, rows, ("latent_dim", "reconstruction_recovery", "generation_recovery"))
    run.wrote(out)


COMMANDS = {
    "gen-data": (cmd_gen_data, "synthesize a corpus and its split manifest"),
    "pretrain": (cmd_pretrain, "train the autoencoder and the latent diffusion model"),
    "finetune": (cmd_finetune, "policy-gradient fine-tuning from a pre-trained checkpoint"),
    "sample": (cmd_sample, "design sequences for backbones"),
    "fold": (cmd_fold, "fold a FASTA file to id, dot-bracket, energy"),
    "evaluate": (cmd_evaluate, "sample and score designs against their targets"),
    "ablate-tau": (cmd_ablate_tau, "fine-tune once per reward-switch arm"),
    "ablate-dim": (cmd_ablate_dim, "pre-train across latent widths"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sold", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="INI config file")
        p.add_argument("--seed", type=int, help="root seed (overrides the config)")
        p.add_argument("--workers", type=int, help="reward/evaluation worker processes")
        p.add_argument("--out", default=os.path.join("runs", name), help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("pretrain", "finetune", "ablate-tau", "ablate-dim", "sample", "evaluate"):
            p.add_argument("--data", help="dataset manifest written by gen-data")
        if name in ("finetune", "ablate-tau", "sample", "evaluate"):
            p.add_argument("--checkpoint", required=True)
        if name in ("sample", "evaluate"):
            p.add_argument("--split", default="test", choices=SPLIT_NAMES)
            p.add_argument("--pdb", help="design for a single PDB file instead of a manifest split")
            p.add_argument("--chain", help="chain identifier inside --pdb")
        if name == "fold":
            p.add_argument("input", help="FASTA file")
    return parser


def run_command(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, {"seed": args.seed, "workers": args.workers})
        run = Run(args.command, cfg, args.out, argv)
        if args.config:
            run.inputs["config"] = args.config
        started = time.time()
        extra = COMMANDS[args.command][0](run, args)
        run.finish({"result": extra, "seconds": round(time.time() - started, 3)})
    except SoldError as exc:
        print(f"sold {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"sold {args.command}: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
