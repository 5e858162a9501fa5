import csv

import numpy as np
import pytest

from mgcap import net
from mgcap.cli import main
from mgcap.config import load_config
from mgcap.data import SyntheticSpec, generate_synthetic, read_manifest
from mgcap.model import MgcapModel
from mgcap.train import (evaluate, load_split, model_from_checkpoint, read_metrics, train,
                         train_epoch)

TINY = {"image_size": "16", "crop_size": "14", "input_size": "12", "transforms": "2",
        "granularities": "1.0", "channels": "4", "epochs_stage1": "2", "epochs_stage2": "1"}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    generate_synthetic(SyntheticSpec(samples_per_class=4, image_size=16), root, 0.5, 0)
    return root / "manifest.csv"


def _cfg(dataset, **extra):
    return load_config(None, {**TINY, "manifest": str(dataset), **extra})


def _args(dataset, **extra):
    return [f"--{k}={v}" for k, v in {**TINY, "manifest": str(dataset), **extra}.items()]


def test_metrics_layout(dataset, tmp_path):
    res = train(_cfg(dataset), read_manifest(dataset), tmp_path)
    rows = list(csv.reader((tmp_path / "metrics.csv").open()))
    assert rows[0] == ["epoch", "stage", "split", "loss", "top1"]
    assert [(r[0], r[1], r[2]) for r in rows[1:]] == [
        ("1", "1", "train"), ("1", "1", "test"), ("2", "1", "train"), ("2", "1", "test"),
        ("3", "2", "train"), ("3", "2", "test")]
    assert all(len(r[3].split(".")[1]) == 6 for r in rows[1:])
    assert res.test_top1 == float(rows[-1][4])
    assert (tmp_path / "config.txt").exists()


def test_identical_runs_identical_bytes(dataset, tmp_path):
    for name in ("a", "b"):
        train(_cfg(dataset), read_manifest(dataset), tmp_path / name)
    for f in ("metrics.csv", "checkpoint.bin"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_resume_replays_exactly(dataset, tmp_path):
    train(_cfg(dataset), read_manifest(dataset), tmp_path / "full")
    train(_cfg(dataset, epochs_stage1="1", epochs_stage2="0"), read_manifest(dataset), tmp_path / "cut")
    train(_cfg(dataset), read_manifest(dataset), tmp_path / "cut", resume=True)
    for f in ("metrics.csv", "checkpoint.bin"):
        assert (tmp_path / "full" / f).read_bytes() == (tmp_path / "cut" / f).read_bytes()


def test_stage_one_trains_head_only(dataset):
    cfg = _cfg(dataset, epochs_stage2="0")
    res = train(cfg, read_manifest(dataset))
    init = MgcapModel(res.model.cfg, seed=cfg.seed)
    for k, v in init.params.items():
        if k.startswith("g"):
            np.testing.assert_array_equal(res.model.params[k], v.astype(np.float32))
    assert not np.array_equal(res.model.params["head.w"], init.params["head.w"])


def test_zero_lr_leaves_loss_unchanged(dataset):
    cfg = _cfg(dataset, batch_size="100", weight_decay="0", augment="false")
    man = read_manifest(dataset)
    split = load_split(man, "train", cfg)
    model = MgcapModel(cfg.pipeline(man.num_classes, 1), seed=0)
    opt = net.OptimizerState(0.0, 0.9, 0.0)
    losses = [train_epoch(model, split, cfg, 2, e, opt)[0] for e in range(2)]
    assert losses[0] == losses[1]


def test_eval_matches_logged_train_accuracy(dataset, tmp_path):
    cfg = _cfg(dataset)
    res = train(cfg, read_manifest(dataset), tmp_path)
    logged = [m for m in read_metrics(tmp_path / "metrics.csv") if m[2] == "train"][-1]
    model = MgcapModel(res.model.cfg)
    model.params = model_from_checkpoint(tmp_path / "checkpoint.bin", model)[0]
    _, top1, _ = evaluate(model, load_split(read_manifest(dataset), "train", cfg), cfg)
    assert abs(top1 - logged[4]) <= 1e-3


def test_checkpoint_shape_mismatch_rejected(dataset, tmp_path):
    train(_cfg(dataset), read_manifest(dataset), tmp_path)
    code = main(["eval", "--checkpoint", str(tmp_path / "checkpoint.bin"), "--channels=5"])
    assert code == 1


def test_cli_round_trip(dataset, tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", "--out", str(run), *_args(dataset)]) == 0
    assert main(["train", "--out", str(tmp_path / "run2"), *_args(dataset)]) == 0
    assert (run / "metrics.csv").read_bytes() == (tmp_path / "run2" / "metrics.csv").read_bytes()
    assert main(["eval", "--checkpoint", str(run / "checkpoint.bin")]) == 0
    rows = list(csv.reader((run / "confusion_test.csv").open()))
    man = read_manifest(dataset)
    for k, row in enumerate(rows[1:]):
        assert sum(map(int, row[1:])) == sum(r.label == k for r in man.subset("test"))
    capsys.readouterr()
    image = dataset.parent / man.records[0].path
    assert main(["inspect", "--checkpoint", str(run / "checkpoint.bin"), "--image", str(image)]) == 0
    out = capsys.readouterr().out.splitlines()
    probs = np.array(out[0].split(":")[1].split(), dtype=float)
    assert abs(probs.sum() - 1.0) < 1e-4
    before = np.array(out[3].split(":")[1].split(), dtype=float)
    after = np.array(out[4].split(":")[1].split(), dtype=float)
    np.testing.assert_allclose(after, np.sqrt(np.clip(before, 1e-5, 1e5)), rtol=1e-5)


def test_inspect_single_transform_angle_zero(dataset, tmp_path, capsys):
    run = tmp_path / "one"
    assert main(["train", "--out", str(run), *_args(dataset, transforms="1")]) == 0
    image = dataset.parent / read_manifest(dataset).records[3].path
    capsys.readouterr()
    assert main(["inspect", "--checkpoint", str(run / "checkpoint.bin"), "--image", str(image)]) == 0
    assert "canonical angle 0 deg" in capsys.readouterr().out


def test_cli_errors(tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.bin")]) == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("mgcap: error:") and "\n" not in err
    assert main(["train", "--out", str(tmp_path), "--nonsense=1"]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["gradcheck", "spectral_sqr"])
    assert exc.value.code == 2
    assert "spectral_sqrt" in capsys.readouterr().err


def test_cli_synth(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path), "--samples-per-class", "2", "--image-size", "12",
                 "--classes", "3"]) == 0
    assert len(read_manifest(tmp_path / "manifest.csv").records) == 6


def test_cli_gradcheck(capsys):
    assert main(["gradcheck", "maxout", "--trials", "10", "--seed", "7"]) == 0
    assert "maxout: PASS" in capsys.readouterr().out
    assert main(["gradcheck", "spectral_sqrt", "--degenerate", "--trials", "3"]) == 0
    assert "finite=True" in capsys.readouterr().out
