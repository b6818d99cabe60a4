import json

import jsonschema
import numpy as np
import pytest
from PIL import Image

from scribblevs.cli import REPORT_SCHEMA, main
from scribblevs.panels import INACTIVE_INDEX, column, compose_panel, pseudo_label_maps
from scribblevs.trainer import load_checkpoint, model_from_checkpoint, read_log
from scribblevs.data import load_split


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data") / "ds"
    assert main(["synth", "--out", str(root), "--n", "8", "--size", "32", "--classes", "3", "--seed", "1"]) == 0
    return root


def write_config(path, data, out, **extra):
    cfg = dict(data_dir=str(data), out_dir=str(out), batch_size=2, max_iters=6, t_warm=3, eval_every=3,
               base_width=4, depth=3, save_iters=[2, 6])
    cfg.update(extra)
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    tmp = tmp_path_factory.mktemp("train")
    cfg = write_config(tmp / "cfg.json", dataset, tmp / "run")
    assert main(["train", "--config", str(cfg), "--tau", "0.6", "--seed", "3"]) == 0
    return tmp / "run"


class TestSynth:
    def test_layout(self, tmp_path):
        out = tmp_path / "s"
        assert main(["synth", "--out", str(out), "--n", "32", "--size", "64", "--classes", "4"]) == 0
        for sub in ("images", "scribbles", "masks"):
            assert len(list((out / sub).glob("*.png"))) == 32
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["num_classes"] == 4
        assert sum(len(v) for v in manifest["splits"].values()) == 32

    def test_rerun_identical(self, tmp_path):
        for name in ("a", "b"):
            assert main(["synth", "--out", str(tmp_path / name), "--n", "4", "--size", "32", "--seed", "9"]) == 0
        for f in sorted((tmp_path / "a").rglob("*")):
            if f.is_file():
                assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()

    def test_one_class_rejected(self, tmp_path, capsys):
        assert main(["synth", "--out", str(tmp_path / "x"), "--classes", "1"]) == 2
        assert "classes" in capsys.readouterr().err

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert main(["synth", "--out", str(blocker / "sub"), "--n", "2", "--size", "32"]) == 1


class TestTrain:
    def test_overrides_echoed(self, trained):
        echo = json.loads((trained / "config.json").read_text())
        assert echo["tau"] == 0.6 and echo["seed"] == 3
        log = read_log(trained / "metrics.jsonl")
        assert log[0]["tau"] == 0.6

    def test_missing_config(self, tmp_path, capsys):
        assert main(["train", "--config", str(tmp_path / "none.json")]) == 2

    def test_missing_key_named(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text(json.dumps({"data_dir": "x"}))
        assert main(["train", "--config", str(tmp_path / "c.json")]) == 2
        assert "out_dir" in capsys.readouterr().err

    def test_schema_diagnostics(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text(json.dumps({"data_dir": "x", "out_dir": "y", "tau": 2}))
        assert main(["train", "--config", str(tmp_path / "c.json")]) == 2
        assert "tau" in capsys.readouterr().err

    def test_pce_variant(self, dataset, tmp_path):
        cfg = write_config(tmp_path / "c.json", dataset, tmp_path / "run", max_iters=3, t_warm=3, save_iters=[])
        assert main(["train", "--config", str(cfg), "--variant", "pce"]) == 0
        recs = [r for r in read_log(tmp_path / "run" / "metrics.jsonl") if r["event"] == "iter"]
        assert all(r["l_pl"] == 0.0 and r["pseudo_active_fraction"] is None for r in recs)

    def test_missing_dataset(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", tmp_path / "nodata", tmp_path / "run")
        assert main(["train", "--config", str(cfg)]) == 2


class TestEval:
    def test_report_matches_training(self, trained, dataset, tmp_path):
        report = tmp_path / "report.json"
        assert main(["eval", "--checkpoint", str(trained / "checkpoints" / "best.pt"), "--data", str(dataset),
                     "--report", str(report)]) == 0
        data = json.loads(report.read_text())
        jsonschema.validate(data, REPORT_SCHEMA)
        final = read_log(trained / "metrics.jsonl")[-1]
        assert final["event"] == "final"
        assert data["mean_dice"] == final["mean_dice"]
        assert data["dice_per_class"] == final["dice_per_class"]
        assert data["hd95_per_class"] == final["hd95_per_class"]

    def test_class_mismatch(self, trained, tmp_path):
        other = tmp_path / "k4"
        assert main(["synth", "--out", str(other), "--n", "4", "--size", "32", "--classes", "4"]) == 0
        assert main(["eval", "--checkpoint", str(trained / "checkpoints" / "best.pt"), "--data", str(other)]) == 2

    def test_empty_split(self, trained, dataset, tmp_path):
        assert main(["eval", "--checkpoint", str(trained / "checkpoints" / "best.pt"), "--data", str(dataset),
                     "--split", "nonexistent", "--report", str(tmp_path / "r.json")]) == 2


class TestDump:
    def test_panels(self, trained, dataset, tmp_path):
        out = tmp_path / "pl"
        assert main(["dump-pseudolabels", "--checkpoint", str(trained / "checkpoints"), "--data", str(dataset),
                     "--out", str(out), "--iters", "2,6"]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert [s["iter"] for s in summary] == [2, 6]
        for s in summary:
            with Image.open(out / s["panel"]) as im:
                assert im.mode == "P"

    def test_missing_checkpoint_listed(self, trained, dataset, tmp_path, capsys):
        code = main(["dump-pseudolabels", "--checkpoint", str(trained / "checkpoints"), "--data", str(dataset),
                     "--out", str(tmp_path / "pl"), "--iters", "2,99"])
        assert code == 1
        err = capsys.readouterr().err
        assert "iter_000099.pt" in err and "iter_000002.pt" not in err

    def test_argmax_column_has_no_inactive(self, trained, dataset):
        payload = load_checkpoint(trained / "checkpoints" / "iter_000002.pt")
        samples = load_split(dataset, "train")
        rpd_maps, arg_maps = pseudo_label_maps(model_from_checkpoint(payload), samples, 0.99)
        panel = compose_panel(samples, rpd_maps, arg_maps)
        assert not (column(panel, "argmax") == INACTIVE_INDEX).any()
        assert (column(panel, "rpd") == INACTIVE_INDEX).any()
        assert np.array_equal(column(panel, "rpd") == INACTIVE_INDEX, rpd_maps == -1)


def test_ablate(dataset, tmp_path):
    cfg = write_config(tmp_path / "c.json", dataset, tmp_path / "abl", max_iters=2, t_warm=2, eval_every=2, save_iters=[])
    assert main(["ablate", "--config", str(cfg), "--variants", "arg,rpd,full", "--taus", "0.3,0.5",
                 "--train-sizes", "2,4", "--seeds", "0,1"]) == 0
    lines = (tmp_path / "abl" / "ablation.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + 3 * 2 * 2
    assert lines[0].startswith("variant,tau,train_size,n_seeds,mean_dice,mean_dice_std")
    runs = (tmp_path / "abl" / "runs.csv").read_text().strip().splitlines()
    assert len(runs) == 1 + 3 * 2 * 2 * 2


def test_module_entry_point():
    import subprocess
    import sys

    out = subprocess.run([sys.executable, "-m", "scribblevs", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("train", "eval", "synth", "ablate", "dump-pseudolabels"):
        assert cmd in out.stdout
