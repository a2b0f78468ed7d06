import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from mriprime.cli import main
from mriprime.phantoms import read_image, write_image
from mriprime.plotting import read_png


def _digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_no_args_usage_exit_1(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err.lower()


def test_unknown_subcommand_and_flag(capsys):
    assert main(["frobnicate"]) == 1
    assert main(["mask", "--width", "32", "--r", "4", "--cf", "0.08", "--bogus"]) == 1
    assert main(["mask", "--width", "32"]) == 1


def test_mask_example(capsys):
    assert main(["mask", "--width", "32", "--r", "4", "--cf", "0.08", "--pattern", "random", "--seed", "7"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["num_sampled"] == 8 and len(doc["sampled_indices"]) == 8
    assert doc["num_central"] == 3 and doc["central_indices"] == [15, 16, 17]
    assert set(doc["central_indices"]) <= set(doc["sampled_indices"])


def test_mask_preview_and_bad_spec(tmp_path, capsys):
    assert main(["mask", "--width", "32", "--r", "4", "--cf", "0.08", "--preview", str(tmp_path / "m.png"), "--height", "8"]) == 0
    assert read_png(tmp_path / "m.png").shape == (8, 32)
    assert main(["mask", "--width", "32", "--r", "1", "--cf", "0.08"]) == 1


def test_gen_data_twice_identical(tmp_path, capsys):
    cfg = tmp_path / "data.json"
    cfg.write_text(json.dumps({"height": 32, "width": 32, "counts": {"train": {"A": 3}, "val": {"A": 1}, "test": {"A": 1, "B": 1}}}))
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
    assert len(json.loads((tmp_path / "a" / "manifest.json").read_text())["samples"]) == 6


def test_bad_config_is_usage_error(tmp_path):
    assert main(["gen-data", "--config", str(tmp_path / "nope.json")]) == 1
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["gen-data", "--config", str(tmp_path / "bad.json")]) == 1


def test_runtime_failure_exit_2(tmp_path):
    assert main(["export-png", "--image", str(tmp_path / "missing.bin"), "--height", "4", "--width", "4"]) == 2
    assert main(["train", "--manifest", str(tmp_path / "missing.json"), "--out", str(tmp_path / "t")]) == 2


def test_cs_recon_and_export(tmp_path, capsys):
    img = np.random.default_rng(0).random((32, 32)).astype(np.float32)
    write_image(tmp_path / "x.bin", img)
    rc = main(["cs-recon", "--image", str(tmp_path / "x.bin"), "--height", "32", "--width", "32", "--iters", "3",
               "--out", str(tmp_path / "r.bin"), "--png", str(tmp_path / "r.png")])
    assert rc == 0
    assert read_image(tmp_path / "r.bin", 32, 32).shape == (32, 32)
    assert main(["export-png", "--image", str(tmp_path / "x.bin"), "--height", "32", "--width", "32",
                 "--box", "1,1,10,10", "--out", str(tmp_path / "x.png")]) == 0
    assert read_png(tmp_path / "x.png").shape == (32, 32, 3)
    assert main(["export-png", "--image", str(tmp_path / "x.bin"), "--height", "32", "--width", "32", "--box", "a,b"]) == 1


def test_train_and_eval(tmp_path, capsys):
    assert main(["gen-data", "--out", str(tmp_path / "d"), "--height", "32", "--width", "32",
                 "--n-train", "4", "--n-val", "2", "--n-test", "2"]) == 0
    tcfg = tmp_path / "t.json"
    tcfg.write_text(json.dumps({"depth": 1, "base_channels": 2, "batch_size": 4, "warmup_steps": 1}))
    assert main(["train", "--config", str(tcfg), "--kind", "Mask", "--manifest", str(tmp_path / "d" / "manifest.json"),
                 "--epochs", "1", "--out", str(tmp_path / "ck")]) == 0
    capsys.readouterr()
    ecfg = tmp_path / "e.json"
    ecfg.write_text(json.dumps({"max_test": 1}))
    rc = main(["eval", "--config", str(ecfg), "--manifest", str(tmp_path / "d" / "manifest.json"),
               "--ckpt", f"Mask={tmp_path / 'ck' / 'best.ckpt'}", "--scenario", "A-random-R8", "--out", str(tmp_path / "ev")])
    assert rc == 0
    agg = json.loads((tmp_path / "ev" / "aggregates.json").read_text())
    assert set(agg["A-random-R8"]) == {"zero-fill", "CS", "Mask"}
    assert main(["eval", "--manifest", str(tmp_path / "d" / "manifest.json"), "--scenario", "nope"]) == 1


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "mriprime"], capture_output=True, text=True)
    assert r.returncode == 1 and "usage" in r.stderr.lower()
