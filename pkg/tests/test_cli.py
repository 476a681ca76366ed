import csv
import json

import pytest

from privsemcom import cli
from privsemcom.config import load_config
from privsemcom.training import TrainingDivergence

SMOKE = """\
dataset = synthetic
latent_dim = 8
epochs = 1
eve_epochs = 1
batch_size = 16
subset_size = 48
test_subset_size = 24
cls_hidden = 32, 16
n_real = 1
eval_snr_list_db = 0, 10
"""


@pytest.fixture
def smoke_cfg(tmp_path):
    path = tmp_path / "smoke.cfg"
    path.write_text(SMOKE)
    return path


def _run_dir(capsys):
    return capsys.readouterr().out.strip().splitlines()[-1]


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_usage_errors(capsys):
    assert cli.main(["frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err
    assert cli.main([]) == 2
    assert cli.main(["eval"]) == 2          # needs --checkpoint
    assert cli.main(["plot"]) == 2          # needs --csv
    assert cli.main(["train-baseline", "stray"]) == 2


def test_config_errors_are_categorized(smoke_cfg, tmp_path, capsys):
    assert cli.main(["train-baseline", "--config", str(smoke_cfg), "--out", str(tmp_path), "--no_such_key=1"]) == 1
    assert "config error" in capsys.readouterr().err
    assert cli.main(["train-baseline", "--config", str(smoke_cfg), "--out", str(tmp_path), "--batch_size=0"]) == 1
    assert "config error" in capsys.readouterr().err


def test_data_and_io_errors(smoke_cfg, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("PRIVSEMCOM_DATA_ROOT", str(tmp_path / "nowhere"))
    assert cli.main(["train-baseline", "--config", str(smoke_cfg), "--out", str(tmp_path), "--dataset=mnist"]) == 1
    assert "data error" in capsys.readouterr().err
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "missing.pt"), "--out", str(tmp_path)]) == 1
    assert "IO error" in capsys.readouterr().err


def test_divergence_is_categorized(smoke_cfg, tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise TrainingDivergence("loss became nan")

    monkeypatch.setattr(cli, "train_baseline", boom)
    assert cli.main(["train-baseline", "--config", str(smoke_cfg), "--out", str(tmp_path)]) == 1
    assert "training diverged" in capsys.readouterr().err
    # the resolved config was persisted before compute started
    (run_dir,) = list(tmp_path.glob("baseline-*"))
    assert load_config(run_dir / "config").epochs == 1


def test_train_baseline_writes_run_directory(smoke_cfg, tmp_path, capsys):
    code = cli.main(["train-baseline", "--config", str(smoke_cfg), "--seed", "7", "--out", str(tmp_path),
                     "--latent_dim=4", "--latent_dim=6"])
    assert code == 0
    run = tmp_path / _run_dir(capsys).split("/")[-1]
    assert (run / "checkpoints" / "bundle.pt").stat().st_size > 0
    assert _rows(run / "metrics.csv")
    cfg = load_config(run / "config")
    assert cfg.seed == 7 and cfg.latent_dim == 6          # last override wins
    manifest = json.loads((run / "run.json").read_text())
    assert manifest["seed"] == 7 and manifest["config_hash"] == cfg.config_hash()


def test_full_pipeline(smoke_cfg, tmp_path, capsys):
    out = tmp_path / "out"
    ckpts = []
    for verb, w in (("train-baseline", "0"), ("train-minmax", "1"), ("train-minmax", "10")):
        assert cli.main([verb, "--config", str(smoke_cfg), "--out", str(out), f"--privacy_weight={w}"]) == 0
        ckpts.append(f"{_run_dir(capsys)}/checkpoints/bundle.pt")

    assert cli.main(["train-eve", "--checkpoint", ckpts[0], "--out", str(out)]) == 0
    eve_ckpt = f"{_run_dir(capsys)}/checkpoints/bundle.pt"

    assert cli.main(["eval", "--checkpoint", eve_ckpt, "--out", str(out)]) == 0
    rows = _rows(_run_dir(capsys))
    assert [float(r["bob_snr_db"]) for r in rows] == [0.0, 10.0]
    assert all(r["eve_acc"] for r in rows)

    args = ["gap-sweep", "--out", str(out)]
    for c in ckpts:
        args += ["--checkpoint", c]
    assert cli.main(args) == 0
    sweep = _rows(_run_dir(capsys))
    assert sorted({float(r["w_P"]) for r in sweep}) == [0.0, 1.0, 10.0]
    assert len(sweep) == 3 * 2
    for r in sweep:
        assert float(r["gap"]) == float(r["bob_acc"]) - float(r["eve_acc"])

    assert cli.main(["perturb-eval", "--checkpoint", ckpts[0], "--out", str(out), "--ladder=fgsm,pgd2",
                     "--perturb.method=pgd", "--perturb.steps=3", "--perturb.epsilon=0.05"]) == 0
    csv_path = _run_dir(capsys)
    tags = [r["perturb"] for r in _rows(csv_path)]
    assert sorted(set(tags)) == ["fgsm", "none", "pgd2", "pgd3"]

    plots = tmp_path / "plots"
    assert cli.main(["plot", "--csv", csv_path, "--out", str(plots)]) == 0
    capsys.readouterr()
    assert sorted(p.name for p in plots.glob("*.png")) == ["bob_acc.png", "eve_acc.png", "gap.png",
                                                          "psnr_db.png", "ssim.png"]


def test_duplicate_weights_rejected(smoke_cfg, tmp_path, capsys):
    assert cli.main(["train-baseline", "--config", str(smoke_cfg), "--out", str(tmp_path)]) == 0
    ckpt = f"{_run_dir(capsys)}/checkpoints/bundle.pt"
    assert cli.main(["gap-sweep", "--checkpoint", ckpt, "--checkpoint", ckpt, "--out", str(tmp_path)]) == 2
