import csv
import math

import numpy as np
import pytest

from ctn import cli, gradcheck
from ctn.config import RunConfig, parse_config_file, resolve
from ctn.data import read_dmap, read_image, write_image
from ctn.fixtures import write_fixture


@pytest.fixture(scope="module")
def fixture_manifest(tmp_path_factory):
    return write_fixture(tmp_path_factory.mktemp("fixture"), n_images=2, size=64, n_dots=20, seed=0)


@pytest.fixture(scope="module")
def trained(tmp_path_factory, fixture_manifest):
    out = tmp_path_factory.mktemp("run")
    code = cli.main(["train", "--profile", "smoke", "--manifest", str(fixture_manifest), "--max-iters", "2",
                     "--out", str(out)])
    assert code == 0
    return out


# ---------------------------------------------------------------- config

def test_defaults_follow_training_recipe():
    run = resolve()
    assert (run.batch, run.crop, run.crops_per_image, run.epochs, run.lr) == (3, 384, 100, 10, 1e-4)
    assert (run.heads, run.width) == (12, 240)


def test_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nbatch = 5\ncrops-per-image = 7\nlr = 0.5  # inline\nprofile = smoke\n")
    assert parse_config_file(cfg)["crops_per_image"] == "7"
    run = resolve(cfg, {"batch": 9, "lr": None})
    assert run.batch == 9            # flag beats file
    assert run.crops_per_image == 7  # file beats profile
    assert run.lr == 0.5
    assert run.crop == 64            # profile beats default
    assert run.epochs == 2 and run.sigma == RunConfig().sigma


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense = 1\n")
    assert cli.main(["train", "--config", str(bad)]) == 2
    bad.write_text("just words\n")
    assert cli.main(["train", "--config", str(bad)]) == 2
    assert cli.main(["train", "--crop", "60", "--manifest", "x"]) == 2


def test_parser_accepts_documented_flags():
    args = cli.build_parser().parse_args([
        "train", "--config", "c", "--manifest", "m", "--checkpoint", "k", "--variant", "mha", "--context-m", "2",
        "--heads", "4", "--width", "24", "--crop", "64", "--crops-per-image", "3", "--batch", "1", "--epochs", "1",
        "--lr", "0.01", "--sigma", "3", "--tile", "32", "--seed", "7", "--out", "o"])
    assert (args.variant, args.context_m, args.heads, args.tile) == ("mha", 2, 4, 32)


# ---------------------------------------------------------------- commands

def test_train_writes_outputs(trained):
    rows = list(csv.reader((trained / "loss.csv").open()))
    assert rows[0] == ["iteration", "loss"] and len(rows) == 3
    assert all(math.isfinite(float(r[1])) for r in rows[1:])
    assert (trained / "model.ckpt").read_bytes().startswith(b"CTN-CHECKPOINT v1\n")


def test_eval_writes_metrics(trained, fixture_manifest, capsys):
    code = cli.main(["eval", "--manifest", str(fixture_manifest), "--checkpoint", str(trained / "model.ckpt"),
                     "--tile", "64", "--out", str(trained / "eval")])
    assert code == 0
    rows = list(csv.reader((trained / "eval" / "metrics.csv").open()))
    assert rows[0] == ["image_id", "y", "y_hat", "abs_error"] and len(rows) == 3
    assert "MAE" in capsys.readouterr().out


def test_empty_manifest_fails(tmp_path, trained, capsys):
    empty = tmp_path / "empty.txt"
    empty.write_text("")
    code = cli.main(["eval", "--manifest", str(empty), "--checkpoint", str(trained / "model.ckpt")])
    assert code != 0
    assert "no images" in capsys.readouterr().err


def test_missing_checkpoint_fails(tmp_path, fixture_manifest):
    assert cli.main(["eval", "--manifest", str(fixture_manifest), "--checkpoint", str(tmp_path / "nope")]) == 2


def test_predict_random_model_on_zero_image(tmp_path, capsys):
    write_image(tmp_path / "zero.ppm", np.zeros((3, 40, 24), dtype=np.uint8))
    code = cli.main(["predict", str(tmp_path / "zero.ppm"), "--tile", "16", "--out", str(tmp_path)])
    assert code == 0
    count = float(capsys.readouterr().out.split("count")[1])
    assert count >= 0.0
    dens = read_dmap(tmp_path / "zero.dmap")
    assert dens.shape == (40, 24)
    assert read_image(tmp_path / "zero_density.pgm").shape == (3, 40, 24)
    assert count == pytest.approx(dens.sum(), rel=1e-6, abs=1e-6)


def test_predict_with_checkpoint(trained, fixture_manifest, capsys):
    image = fixture_manifest.parent / "img000.ppm"
    assert cli.main(["predict", str(image), "--checkpoint", str(trained / "model.ckpt"), "--tile", "64",
                     "--out", str(trained / "pred")]) == 0
    count = float(capsys.readouterr().out.split("count")[1])
    assert count == pytest.approx(read_dmap(trained / "pred" / "img000.dmap").sum(), rel=1e-5)


def test_predict_unreadable_image(tmp_path, capsys):
    (tmp_path / "x.ppm").write_text("not an image")
    assert cli.main(["predict", str(tmp_path / "x.ppm"), "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_sweep_context_smoke(tmp_path, fixture_manifest, capsys):
    code = cli.main(["sweep-context", "--m-list", "0,1", "--profile", "smoke", "--manifest", str(fixture_manifest),
                     "--max-iters", "1", "--out", str(tmp_path)])
    assert code == 0
    rows = list(csv.DictReader((tmp_path / "sweep_context.csv").open()))
    assert [r["context"] for r in rows] == ["0", "2"]
    assert rows[0]["attention"] == "standard MHA"
    assert rows[0]["ref_MAE"] == "108.3" and rows[1]["ref_MAE"] == "105.7"
    assert all(math.isfinite(float(r["MAE"])) for r in rows)
    assert "not reproducible" in capsys.readouterr().out


def test_gradcheck_command_reports_every_primitive(capsys):
    assert cli.main(["gradcheck", "--seeds", "1", "--skip-model"]) == 0
    out = capsys.readouterr().out
    for name in gradcheck.OPS:
        assert f" {name} " in out


def test_gradcheck_command_catches_corruption(capsys):
    assert cli.main(["gradcheck", "--seeds", "1", "--skip-model", "--corrupt", "conv1d"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_make_fixture(tmp_path, capsys):
    assert cli.main(["make-fixture", "--out", str(tmp_path), "--images", "3", "--size", "32", "--dots", "4"]) == 0
    assert (tmp_path / "manifest.txt").read_text().count("\n") == 3


def test_ablate_smoke(tmp_path, fixture_manifest):
    code = cli.main(["ablate", "--variants", "local,nonlocal,mha,full", "--profile", "smoke",
                     "--manifest", str(fixture_manifest), "--max-iters", "1", "--out", str(tmp_path)])
    assert code == 0
    rows = list(csv.DictReader((tmp_path / "ablation.csv").open()))
    assert [r["variant"] for r in rows] == ["local-only", "nonlocal-only", "standard-mha", "full-ctn"]


def test_crossval_smoke(tmp_path):
    manifest = write_fixture(tmp_path / "data", n_images=4, size=32, n_dots=3, seed=1)
    code = cli.main(["crossval", "--folds", "2", "--profile", "smoke", "--crop", "32", "--tile", "32",
                     "--manifest", str(manifest), "--max-iters", "1", "--out", str(tmp_path)])
    assert code == 0
    rows = list(csv.DictReader((tmp_path / "crossval.csv").open()))
    assert [r["fold"] for r in rows] == ["0", "1", "mean"]
    assert len(list(csv.DictReader((tmp_path / "metrics.csv").open()))) == 4
