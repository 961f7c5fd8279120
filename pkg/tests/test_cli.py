import json

import numpy as np
import pytest

from specalign import cli, dataio
from specalign.evaluate import GradcheckReport


def run(*args):
    return cli.main([str(a) for a in args])


@pytest.fixture(scope="module")
def linear_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("lin") / "data"
    assert run("synth", "--out-dir", d) == 0
    return d


@pytest.fixture(scope="module")
def nonlinear_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("nl")
    cfg = root / "synth.json"
    cfg.write_text(json.dumps({"nonlinearity": "tanh"}))
    d = root / "data"
    assert run("synth", "--config", cfg, "--out-dir", d) == 0
    return d


def test_synth_files(linear_dir):
    sizes = {s: dataio.read_embeddings(linear_dir / f"{s}_x.uemb").shape for s in ("train", "val", "test")}
    assert sizes == {"train": (40, 480), "val": (40, 60), "test": (40, 60)}
    assert dataio.read_embeddings(linear_dir / "train_y.uemb").shape == (30, 480)
    assert (linear_dir / "train_pairs.csv").read_text().startswith("i,j\n0,0\n")
    assert (linear_dir / "train_labels.csv").read_text().startswith("index,label\n")


def test_synth_refuses_non_empty(linear_dir, capsys):
    assert run("synth", "--out-dir", linear_dir) == 2
    assert "--force" in capsys.readouterr().err


def test_synth_byte_identical(tmp_path):
    assert run("synth", "--out-dir", tmp_path / "a", "--seed", 5) == 0
    assert run("synth", "--out-dir", tmp_path / "b", "--seed", 5) == 0
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_synth_bad_config(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"clusters": 3}))
    assert run("synth", "--config", tmp_path / "c.json", "--out-dir", tmp_path / "o") == 2


def test_fit_linear_and_eval(linear_dir, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"rank": 10, "fixed_point": {"rel_tol": 1e-3}}))
    model = tmp_path / "m.umdl"
    assert run("fit", "--x", linear_dir / "train_x.uemb", "--y", linear_dir / "train_y.uemb",
               "--config", cfg, "--mode", "linear", "--out-model", model) == 0
    report = json.loads((tmp_path / "m.report.json").read_text())
    assert report["matching_accuracy_avg"] == 1.0
    assert report["iterations"] >= 1 and "wall_time_seconds" in report
    assert report["config"]["rank"] == 10
    for fig in ("convergence", "spectrum", "weights", "recall"):
        assert (tmp_path / f"m.report_{fig}.png").stat().st_size > 0
    assert (tmp_path / "m.report.csv").exists()

    out = tmp_path / "train_eval.json"
    assert run("eval", "--model", model, "--x", linear_dir / "train_x.uemb", "--y",
               linear_dir / "train_y.uemb", "--ks", "1", "--out", out) == 0
    ev = json.loads(out.read_text())
    assert ev["r_at_1_i2t"] == report["matching_accuracy_i2t"]

    out = tmp_path / "test_eval.json"
    assert run("eval", "--model", model, "--x", linear_dir / "test_x.uemb", "--y",
               linear_dir / "test_y.uemb", "--ks", "1,10", "--out", out) == 0
    ev = json.loads(out.read_text())
    assert sorted(k for k in ev if k.startswith("r_at_")) == ["r_at_10_i2t", "r_at_10_t2i",
                                                             "r_at_1_i2t", "r_at_1_t2i"]
    assert run("eval", "--model", model, "--x", linear_dir / "test_x.uemb", "--y",
               linear_dir / "test_y.uemb", "--ks", "1,100", "--out", out) == 2

    inf = tmp_path / "inf"
    assert run("infer", "--model", model, "--x", linear_dir / "test_x.uemb", "--y",
               linear_dir / "test_y.uemb", "--out-dir", inf) == 0
    assert dataio.read_embeddings(inf / "x_embed.uemb").shape == (10, 60)


def test_fit_kernel_nonlinear(nonlinear_dir, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"rank": 10, "fixed_point": {"max_iters": 5}}))
    model = tmp_path / "k.umdl"
    assert run("fit", "--x", nonlinear_dir / "train_x.uemb", "--y", nonlinear_dir / "train_y.uemb",
               "--config", cfg, "--mode", "kernel", "--out-model", model, "--no-figures") == 0
    out = tmp_path / "t.json"
    assert run("eval", "--model", model, "--x", nonlinear_dir / "test_x.uemb", "--y",
               nonlinear_dir / "test_y.uemb", "--out", out, "--no-figures") == 0
    assert json.loads(out.read_text())["matching_accuracy_avg"] >= 0.80


def test_aggregation_needs_validation(linear_dir, tmp_path):
    cfg = tmp_path / "agg.json"
    cfg.write_text(json.dumps({"aggregation": {"batch_size": 160}}))
    args = ["fit", "--x", linear_dir / "train_x.uemb", "--y", linear_dir / "train_y.uemb",
            "--config", cfg, "--out-model", tmp_path / "e.umdl", "--no-figures"]
    assert run(*args) == 1
    assert run(*args, "--val-x", linear_dir / "val_x.uemb", "--val-y", linear_dir / "val_y.uemb") == 0
    report = json.loads((tmp_path / "e.report.json").read_text())
    assert report["batches"] == 3 and abs(sum(report["batch_weights"]) - 1) < 1e-10


def test_zero_shot_transfer(linear_dir, tmp_path):
    other = tmp_path / "other"
    assert run("synth", "--out-dir", other, "--seed", 11) == 0
    model = tmp_path / "m.umdl"
    assert run("fit", "--x", linear_dir / "train_x.uemb", "--y", linear_dir / "train_y.uemb",
               "--out-model", model, "--no-figures") == 0
    assert run("eval", "--model", model, "--x", other / "test_x.uemb", "--y", other / "test_y.uemb",
               "--out", tmp_path / "zs.json", "--no-figures") == 0


def test_shape_mismatch_names_files(linear_dir, tmp_path, capsys):
    assert run("fit", "--x", linear_dir / "train_x.uemb", "--y", linear_dir / "val_y.uemb",
               "--out-model", tmp_path / "m.umdl") == 2
    err = capsys.readouterr().err
    assert "train_x.uemb" in err and "val_y.uemb" in err


def test_bad_file_is_data_error(tmp_path):
    (tmp_path / "x.uemb").write_bytes(b"nope")
    assert run("fit", "--x", tmp_path / "x.uemb", "--y", tmp_path / "x.uemb",
               "--out-model", tmp_path / "m.umdl") == 2


def test_gradcheck_commands(capsys):
    assert run("gradcheck", "--loss", "clip", "--n", 5) == 0
    assert "PASS" in capsys.readouterr().out
    assert run("gradcheck", "--loss", "identity", "--n", 3) == 0
    assert run("gradcheck", "--loss", "triplet", "--n", 8, "--seed", 4) == 0
    assert run("gradcheck", "--n", 9) == 1


def test_gradcheck_failure_exit(monkeypatch):
    monkeypatch.setattr(cli, "gradcheck", lambda *a, **k: GradcheckReport("clip", 5, 0, 1.0, 0.0, 1,
                                                                         False, True))
    assert run("gradcheck") == 3


def test_usage_errors():
    with pytest.raises(SystemExit) as exc:
        run("bogus")
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        run("fit", "--x", "a")
    assert exc.value.code == 1
