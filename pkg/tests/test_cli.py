import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from helpers import FIXTURES
from molgnn.cli import main
from molgnn.dataset import read_records
from molgnn.featurize import FeatureConfig, encode_molecule
from molgnn.layers import GnnModel

SMALL = {
    "features": {"atom_features": ["symbol", "aromatic", "degree"], "bond_features": ["bond_type"]},
    "data": {"label_columns": ["y"], "split": [0.6, 0.2, 0.2]},
    "model": {"units": 8, "dense_units": [8]},
    "training": {"lr_start": 0.01, "lr_end": 0.0001, "max_epochs": 4, "batch_size": 4},
}
MOLS = ["CCO", "c1ccccc1", "CC(=O)O", "CCN", "c1ccncc1", "CCCC", "O=C=O", "c1ccoc1", "CC(C)O", "NCCO"]


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps(SMALL))
    rows = "\n".join(f"{s},{0.3 * i - 1:.2f}" for i, s in enumerate(MOLS))
    (tmp_path / "data.csv").write_text("smiles,y\n" + rows + "\n")
    return tmp_path


def _run(*argv):
    return main([str(a) for a in argv])


def test_encode_lenient_reports_bad_row(tmp_path, capsys):
    src = tmp_path / "three.csv"
    src.write_text("smiles,y\nCCO,1\nC1CC,2\nc1ccccc1,3\n")
    out = tmp_path / "three.mgrf"
    assert _run("encode", "--input", src, "--output", out, "--data.label_columns", '["y"]',
                "--data.strict", "false") == 0
    records = list(read_records(out, FeatureConfig()))
    assert len(records) == 2 and [r[1][0] for r in records] == [1.0, 3.0]
    report = list(csv.DictReader(open(f"{out}.report.csv")))
    assert [r["row"] for r in report] == ["2"] and "UnclosedRing" in report[0]["reason"]
    manifest = json.loads(open(f"{out}.manifest.json").read())
    assert manifest["command"] == "encode" and len(manifest["checksums"]) == 2


def test_encode_strict_fails_with_exit_1(tmp_path, capsys):
    src = tmp_path / "three.csv"
    src.write_text("smiles,y\nCCO,1\nC1CC,2\n")
    assert _run("encode", "--input", src, "--output", tmp_path / "x.mgrf", "--data.label_columns", '["y"]') == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "BatchParseError" and err["failures"][0]["index"] == 2


def test_config_errors_exit_2(workdir, capsys):
    assert _run("train", "--config", workdir / "cfg.json", "--input", workdir / "data.csv",
                "--out-dir", workdir / "o", "--training.momentum", "0.9") == 2
    assert "unknown config key" in json.loads(capsys.readouterr().err)["message"]
    bad = workdir / "bad.json"
    bad.write_text(json.dumps({"model": {"kind": "rgcn"}}))
    assert _run("train", "--config", bad, "--input", workdir / "data.csv", "--out-dir", workdir / "o") == 2
    bad.write_text("{not json")
    assert _run("train", "--config", bad) == 2
    assert _run("predict", "--smiles", "CCO") == 2  # missing --checkpoint
    assert _run("evaluate", "--checkpoint", workdir / "missing.ckpt", "--input", workdir / "data.csv") == 1


def test_train_is_deterministic_and_downstream_commands(workdir, capsys):
    a, b = workdir / "a", workdir / "b"
    for out in (a, b):
        assert _run("train", "--config", workdir / "cfg.json", "--input", workdir / "data.csv",
                    "--out-dir", out, "--quiet") == 0
    assert (a / "model.ckpt").read_bytes() == (b / "model.ckpt").read_bytes()
    assert (a / "history.csv").read_text() == (b / "history.csv").read_text()
    for name in ("history.png", "metrics.json", "split.json", "manifest.json"):
        assert (a / name).exists()
    assert (a / "history.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    man = json.loads((a / "manifest.json").read_text())
    assert man["seed"] == 0 and set(man["checksums"]) >= {str(a / "model.ckpt")}

    # a different seed changes the weights
    assert _run("train", "--config", workdir / "cfg.json", "--input", workdir / "data.csv",
                "--out-dir", workdir / "c", "--seed", "5", "--quiet") == 0
    assert (workdir / "c" / "model.ckpt").read_bytes() != (a / "model.ckpt").read_bytes()

    ckpt = a / "model.ckpt"
    assert _run("evaluate", "--checkpoint", ckpt, "--input", workdir / "data.csv",
                "--config", workdir / "cfg.json", "--output", workdir / "m.json") == 0
    assert set(json.loads((workdir / "m.json").read_text())) >= {"rmse", "mae", "mre"}

    assert _run("predict", "--checkpoint", ckpt, "--smiles", "CCO", "--smiles", "c1ccccc1",
                "--output", workdir / "p.csv") == 0
    rows = list(csv.DictReader(open(workdir / "p.csv")))
    model = GnnModel.load(ckpt)
    assert [r["smiles"] for r in rows] == ["CCO", "c1ccccc1"]
    assert float(rows[0]["prediction"]) == float(model.predict(encode_molecule("CCO", model.feature_config))[0, 0])

    assert _run("explain", "--checkpoint", ckpt, "--smiles", "CC(=O)Nc1ccc(O)cc1",
                "--out-dir", workdir / "ex", "--explain.method", "saliency", "--quiet") == 0
    assert (workdir / "ex" / "mol0000.saliency.svg").read_text().startswith("<?xml")
    assert len(list(csv.DictReader(open(workdir / "ex" / "mol0000.saliency.csv")))) == 11


def test_pretrain_then_finetune(workdir, capsys):
    corpus = workdir / "corpus.txt"
    corpus.write_text("\n".join(MOLS) + "\n")
    core = workdir / "core.ckpt"
    assert _run("pretrain", "--config", workdir / "cfg.json", "--input", corpus, "--output", core,
                "--pretrain.epochs", "3", "--quiet") == 0
    pre = GnnModel.load(core)
    assert _run("train", "--config", workdir / "cfg.json", "--input", workdir / "data.csv",
                "--out-dir", workdir / "ft", "--model.init_checkpoint", json.dumps(str(core)),
                "--training.max_epochs", "1", "--quiet") == 0
    assert set(pre.core_weights()) <= set(GnnModel.load(workdir / "ft" / "model.ckpt").params)


def test_rtfilter_on_reference_candidates(tmp_path, capsys):
    out = tmp_path / "rt"
    assert _run("rtfilter", "--candidates", FIXTURES / "rt_candidates.csv", "--out-dir", out,
                "--rtfilter.bounds", "[-1.313, 1.337]", "--quiet") == 0
    verdicts = {r["candidate_smiles"]: r["filtered_out"] for r in csv.DictReader(open(out / "verdicts.csv"))}
    expected = {r["candidate_smiles"]: r["expected_filtered_out"]
                for r in csv.DictReader(open(FIXTURES / "rt_candidates.csv"))}
    assert verdicts == expected
    assert (out / "rtfilter.png").exists() and (out / "summary.csv").exists()

    res = tmp_path / "res.csv"
    res.write_text("residual\n" + "\n".join(str(x) for x in np.linspace(-1, 1, 21)) + "\n")
    assert _run("rtfilter", "--candidates", FIXTURES / "rt_candidates.csv", "--out-dir", tmp_path / "r2",
                "--residuals", res, "--rtfilter.figure", "false", "--quiet") == 0
    assert not (tmp_path / "r2" / "rtfilter.png").exists()
    assert _run("rtfilter", "--candidates", FIXTURES / "rt_candidates.csv",
                "--out-dir", tmp_path / "r3") == 2


def test_version_via_entry_point():
    proc = subprocess.run([sys.executable, "-m", "molgnn.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.strip() == "molgnn 0.1.0 (MGRF v1, checkpoint v1)"
