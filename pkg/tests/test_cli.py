import json
import os

import pytest

from sold.cli import run_command

TINY = """\
[run]
seed = 5
[model]
embed_dim = 8
hidden = 16
latent_dim = 4
time_dim = 8
den_hidden = 16
blocks = 1
[data]
n = 30
min_len = 10
max_len = 16
k_neighbors = 6
[train]
epochs = 2
ae_epochs = 3
batch_size = 8
lr = 1e-3
[ppo]
epochs = 2
batch_size = 4
grad_accum = 4
sigma_min = 0.3
[ablation]
dims = 4,8
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.ini"
    cfg.write_text(TINY)
    assert run_command(["gen-data", "--config", str(cfg), "--out", str(root / "data")]) == 0
    assert run_command(["pretrain", "--config", str(cfg), "--data", str(root / "data/manifest.tsv"),
                        "--out", str(root / "pre")]) == 0
    return root, cfg


def args(root, cfg, cmd, out, *extra):
    return [cmd, "--config", str(cfg), "--data", str(root / "data/manifest.tsv"), "--out", str(root / out), *extra]


def test_fold_command(tmp_path):
    (tmp_path / "g.fa").write_text(">hp\nGGGAAACCC\n")
    assert run_command(["fold", str(tmp_path / "g.fa"), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o/folds.tsv").read_text() == "hp\t(((...)))\t-9.0\n"


def test_manifest_lists_every_output(workspace):
    root, _ = workspace
    man = json.loads((root / "pre/manifest.json").read_text())
    assert man["seed"] == 5 and man["command"] == "pretrain"
    listed = {o["path"] for o in man["outputs"]}
    assert listed == {"ldm.ckpt", "pretrain_log.tsv"}
    assert man["inputs"]["data"]["sha256"]


def test_zero_epoch_finetune_is_bit_identical(workspace):
    root, cfg = workspace
    zero = root / "zero.ini"
    zero.write_text(TINY.replace("[ppo]\nepochs = 2", "[ppo]\nepochs = 0"))
    assert run_command(args(root, zero, "finetune", "ft0", "--checkpoint", str(root / "pre/ldm.ckpt"))) == 0
    assert (root / "ft0/sold.ckpt").read_bytes() == (root / "pre/ldm.ckpt").read_bytes()


def test_finetune_sample_evaluate(workspace):
    root, cfg = workspace
    assert run_command(args(root, cfg, "finetune", "ft", "--checkpoint", str(root / "pre/ldm.ckpt"))) == 0
    ck = str(root / "ft/sold.ckpt")
    assert run_command(args(root, cfg, "sample", "s", "--checkpoint", ck)) == 0
    fasta = (root / "s/designs.fasta").read_text()
    assert fasta.startswith(">") and os.path.exists(root / "s/designs.probs.tsv")
    assert run_command(args(root, cfg, "evaluate", "e", "--checkpoint", ck)) == 0
    lines = (root / "e/report.tsv").read_text().splitlines()
    assert lines[0] == "id\tseq_recovery\tss\tmfe\trmsd\tlddt\tdesigned"
    assert any(line.startswith("#nt_recovery") for line in lines)


def test_ablate_tau_files(workspace):
    root, cfg = workspace
    assert run_command(args(root, cfg, "ablate-tau", "tau", "--checkpoint", str(root / "pre/ldm.ckpt"))) == 0
    names = sorted(p for p in os.listdir(root / "tau") if p.startswith("curves_"))
    assert names == ["curves_long_only.tsv", "curves_short_only.tsv", "curves_tau60.tsv", "curves_tau90.tsv"]


def test_ablate_dim(workspace):
    root, cfg = workspace
    assert run_command(args(root, cfg, "ablate-dim", "dim")) == 0
    rows = (root / "dim/ablate_dim.tsv").read_text().splitlines()
    assert [r.split("\t")[0] for r in rows[1:]] == ["4", "8"]


def test_exit_codes(workspace, tmp_path, capsys):
    root, cfg = workspace
    assert run_command(["bogus"]) == 2
    assert run_command(["fold", "--frobnicate", "x.fa"]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[model]\nnope = 1\n")
    assert run_command(["fold", "--config", str(bad), str(tmp_path / "x.fa"), "--out", str(tmp_path / "o")]) == 2
    missing = args(root, cfg, "finetune", "x", "--checkpoint", str(tmp_path / "none.ckpt"))
    assert run_command(missing) == 3
    (tmp_path / "broken.fa").write_text(">x\nACGZ\n")
    assert run_command(["fold", str(tmp_path / "broken.fa"), "--out", str(tmp_path / "o2")]) == 3
    assert run_command(["fold", str(tmp_path / "absent.fa"), "--out", str(tmp_path / "o3")]) == 3
    assert "usage" in capsys.readouterr().err
