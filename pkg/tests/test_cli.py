import json
import os

import pytest

from hinspec.cli import main, safe_name
from hinspec.synthetic import planted_hin

CONFIG = """
seed = 0
[paths]
nodes = "data/nodes.tsv"
edges = "data/edges.tsv"
labels = "data/labels.tsv"
metagraphs = "data/metagraphs.txt"
out = "out"
[spectral]
k = 12
[assess]
budget = 4
[combine]
Q = 4
epochs = 20
[eval]
repeats = 3
K = [5, 10]
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("ws")
    planted_hin(n_authors=120, n_papers=240, n_terms=120, n_keywords=90, seed=0).write(root / "data")
    (root / "run.toml").write_text(CONFIG)
    return root


def run(root, *args, out="out"):
    return main([*args, "--config", str(root / "run.toml"), "--out", str(root / out)])


def tree(path):
    out = {}
    for base, dirs, files in os.walk(path):
        dirs[:] = [d for d in dirs if not d.startswith(".staging")]
        for f in files:
            p = os.path.join(base, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, path)] = fh.read()
    return out


def test_safe_name():
    assert safe_name("A-(P|V)-A") == "A-_P_V_-A"


def test_pipeline_outputs_and_manifest(workspace):
    assert run(workspace, "pipeline", out="pipe") == 0
    out = workspace / "pipe"
    manifest = json.loads((out / "manifest.json").read_text())
    assert [s["stage"] for s in manifest["stages"]] == ["project", "spectrum", "assess", "combine", "eval"]
    assert set(manifest["inputs"]) == {"nodes", "edges", "labels", "metagraphs"}
    assert manifest["seeds"] == {"global": 0, "combine": 0, "eval": 0}
    for stage in manifest["stages"]:
        for rel in stage["outputs"]:
            assert (out / rel).exists()
    names = set(os.listdir(out))
    assert {"model.bin", "embedding.tsv", "embedding.json", "eval.json", "assess_report.json"} <= names
    assert not any(n.startswith(".staging") for n in names)
    report = json.loads((out / "assess_report.json").read_text())
    assert set(report["ranking"][:2]) == {"A-P-A", "A-P-V-P-A"}
    ev = json.loads((out / "eval.json").read_text())
    assert set(ev["single_metagraph"]) <= {"A-P-A", "A-P-V-P-A", "A-T-A", "A-K-A"}
    assert "precision@5" in ev["link_prediction"]["metrics"]


def test_pipeline_equals_separate_commands(workspace):
    assert run(workspace, "pipeline", out="a") == 0
    for cmd in ("project", "assess", "combine", "eval"):
        assert run(workspace, cmd, out="b") == 0
    a, b = tree(workspace / "a"), tree(workspace / "b")
    assert a.keys() == b.keys()
    assert all(a[k] == b[k] for k in a)


def test_rerun_is_byte_identical(workspace):
    assert run(workspace, "pipeline", out="r1") == 0
    assert run(workspace, "pipeline", out="r2") == 0
    assert tree(workspace / "r1") == tree(workspace / "r2")


def test_seed_flag_changes_embedding(workspace):
    assert run(workspace, "pipeline", out="s0") == 0
    assert main(["combine", "--config", str(workspace / "run.toml"), "--out", str(workspace / "s0"), "--seed", "5"]) == 0
    manifest = json.loads((workspace / "s0" / "manifest.json").read_text())
    assert manifest["seeds"]["combine"] == 5


def test_eval_before_combine_is_missing_artifact(workspace, capsys):
    assert run(workspace, "eval", out="fresh") == 3
    assert "run `hinspec combine` first" in capsys.readouterr().err
    assert os.listdir(workspace / "fresh") == []


def test_config_errors_exit_2(workspace, tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[combine]\nbogus = 1\n")
    assert main(["project", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["project", "--config", str(tmp_path / "missing.toml")]) == 2
    nopaths = tmp_path / "nopaths.toml"
    nopaths.write_text("seed = 1\n")
    assert main(["project", "--config", str(nopaths), "--out", str(tmp_path / "o")]) == 2


def test_data_errors_exit_3(workspace, tmp_path):
    cfg = (workspace / "run.toml").read_text().replace('"data/', f'"{workspace}/data/')
    (tmp_path / "c.toml").write_text(cfg)
    (tmp_path / "mg.txt").write_text("A-Z-A\n")
    (tmp_path / "c2.toml").write_text(cfg.replace(f'"{workspace}/data/metagraphs.txt"', f'"{tmp_path}/mg.txt"'))
    assert main(["project", "--config", str(tmp_path / "c2.toml"), "--out", str(tmp_path / "o")]) == 3
    assert [n for n in os.listdir(tmp_path / "o")] == []


def test_q_too_large_is_config_error(workspace, tmp_path):
    cfg = (workspace / "run.toml").read_text().replace('"data/', f'"{workspace}/data/').replace("Q = 4", "Q = 400")
    (tmp_path / "c.toml").write_text(cfg)
    assert main(["pipeline", "--config", str(tmp_path / "c.toml"), "--out", str(tmp_path / "o")]) == 2


def test_synth_command(tmp_path, capsys):
    assert main(["synth", "--authors", "40", "--out", str(tmp_path / "s")]) == 0
    assert sorted(os.listdir(tmp_path / "s")) == ["edges.tsv", "labels.tsv", "metagraphs.txt", "nodes.tsv"]
    assert "nodes" in capsys.readouterr().out


def test_bundled_config_is_valid():
    from importlib.resources import files

    from hinspec.config import load_config

    cfg = load_config(str(files("hinspec") / "data" / "synthetic" / "pipeline.toml"))
    for key in ("nodes", "edges", "labels", "metagraphs"):
        assert os.path.exists(cfg.path(key))
