import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from porodiff import __version__
from porodiff.cli import main
from porodiff.voxel import load_volume

DATA_CONFIG = {
    "synth": {"dims": [48, 48, 32], "radius_range": [2.5, 4.5], "seed": 3},
    "crop": 16,
    "counts": [3, 0, 2],
    "split_seed": 1,
}
TINY_TRAIN = ["--epochs", "1", "--T", "4", "--d", "8", "--n-blocks", "1", "--n-freq", "4", "--n-vox", "128", "--limit", "2"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "data.json").write_text(json.dumps(DATA_CONFIG))
    assert run("gen-data", "--config", root / "data.json", "--out", root / "data") == 0
    assert run("train", "--data", root / "data", *TINY_TRAIN, "--out", root / "ckpt") == 0
    test = root / "data" / "test" / "0000.gtpv"
    assert run("boundary", "--in", test, "--out", root / "gb.json") == 0
    assert run("sample", "--ckpt", root / "ckpt", "--gb", root / "gb.json", "-K", 2, "--out", root / "samples") == 0
    for k in range(2):
        assert run("decode", "--graph", root / "samples" / f"sample_{k:03d}.json", "--obs", test,
                   "--out", root / "samples" / f"rec_{k:03d}.gtpv") == 0
    return root


def hashes(manifest_path):
    return json.loads(Path(manifest_path).read_text())["outputs"]


def test_gen_data_layout_and_determinism(work, tmp_path):
    data = work / "data"
    assert sorted(p.name for p in (data / "train").iterdir()) == ["0000.gtpv", "0001.gtpv", "0002.gtpv"]
    assert len(list((data / "test").iterdir())) == 2
    assert load_volume(data / "train" / "0000.gtpv").dims == (16, 16, 16)
    assert run("gen-data", "--config", work / "data.json", "--out", tmp_path / "again") == 0
    assert hashes(tmp_path / "again" / "run_manifest.json") == hashes(data / "run_manifest.json")


def test_extract_writes_graph(work, tmp_path):
    out = tmp_path / "g.json"
    assert run("extract", "--in", work / "data" / "parent.gtpv", "--n-max", 64, "--out", out) == 0
    g = json.loads(out.read_text())
    assert g["n_max"] == 64 and (tmp_path / "g.json.run.json").exists()


def test_train_outputs(work):
    ck = work / "ckpt"
    assert (ck / "manifest.json").exists() and (ck / "params.bin").exists()
    trace = (ck / "loss_trace.csv").read_text().splitlines()
    assert trace[0].startswith("epoch,total") and len(trace) == 2


def test_samples_are_clamped_and_recorded(work):
    summary = json.loads((work / "samples" / "samples.json").read_text())
    assert summary["K"] == 2 and len(summary["digests"]) == 2


def test_eval_self_comparison_is_zero(work, tmp_path):
    test = work / "data" / "test" / "0001.gtpv"
    assert run("eval", "--rec", test, "--ref", test, "--out", tmp_path / "self.json") == 0
    mean = json.loads((tmp_path / "self.json").read_text())["mean"]
    assert mean["tpcf_error"] == 0.0 and mean["gte"] == 0.0 and mean["psd_jsd"] == 0.0


def test_eval_posterior_set(work, tmp_path):
    test = work / "data" / "test" / "0000.gtpv"
    out = tmp_path / "post.json"
    assert run("eval", "--rec", work / "samples", "--ref", test, "--gb", work / "gb.json", "--out", out) == 0
    rep = json.loads(out.read_text())
    assert rep["n"] == 2 and rep["posterior"]["violation_rate"] == 0.0


def test_flow_report(work, tmp_path):
    out = tmp_path / "flow.json"
    assert run("flow", "--in", work / "data" / "parent.gtpv", "--axis", "z", "--out", out) == 0
    rep = json.loads(out.read_text())
    assert rep["conductance_model"] == "poiseuille-min-radius" and rep["K"] >= 0


def test_gap_sweep_rows(work, tmp_path):
    out = tmp_path / "sweep"
    assert run("gap-sweep", "--ckpt", work / "ckpt", "--M", "14,18", "--size", 16, "--out", out) == 0
    rows = list(csv.reader((out / "gap_sweep.csv").open()))
    assert rows[0][:3] == ["M", "depth", "n_observed"]
    assert [r[0] for r in rows[1:]] == ["14", "18"]


@pytest.mark.parametrize("which", ["data/run_manifest.json", "ckpt/run_manifest.json", "samples/run_manifest.json",
                                   "gb.json.run.json"])
def test_replay_is_bit_identical(work, which, capsys):
    assert run("replay", work / which) == 0
    assert "replay OK" in capsys.readouterr().out


def test_replay_detects_changed_input(work, tmp_path):
    src = work / "data" / "test" / "0001.gtpv"
    copy = tmp_path / "v.gtpv"
    copy.write_bytes(src.read_bytes())
    assert run("flow", "--in", copy, "--out", tmp_path / "f.json") == 0
    copy.write_bytes((work / "data" / "test" / "0000.gtpv").read_bytes())
    assert run("replay", tmp_path / "f.json.run.json") == 2


def test_exit_codes(work, tmp_path):
    assert run("flow", "--in", tmp_path / "missing.gtpv", "--out", tmp_path / "x.json") == 2
    blocker = tmp_path / "file"
    blocker.write_text("")
    good = work / "data" / "test" / "0000.gtpv"
    assert run("flow", "--in", good, "--out", blocker / "x.json") == 1  # output cannot be written
    bad = tmp_path / "bad.gtpv"
    bad.write_bytes(b"nope")
    assert run("flow", "--in", bad, "--out", tmp_path / "x.json") == 2
    assert run("train", "--data", work / "data", "--T", 0, "--out", tmp_path / "ck") == 2
    assert run("train", "--data", work / "data", "--n-max", 100, "--out", tmp_path / "ck") == 2
    assert run("gap-sweep", "--ckpt", work / "ckpt", "--M", "0", "--out", tmp_path / "s") == 2
    assert run("flow", "--axis", "w", "--in", bad, "--out", tmp_path / "x.json") == 2
    assert run("no-such-command") == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "porodiff", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and __version__ in res.stdout
