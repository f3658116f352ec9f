import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from hierfuse import cli, pipeline
from hierfuse.hierarchy import read_instances
from hierfuse.raster import LabelMap, load_label_map, write_label_map

SMALL = {
    "paths": {"work_dir": "work"},
    "synth": {
        "coarse_size": [32, 24],
        "scale_factor": 4,
        "num_classes": 6,
        "noise_sigma": 0.02,
        "seed": 1,
        "class_specs": [
            {"name": "forest", "motif": "homogeneous", "motif_means": [[0.25, 0.15, 0.60, 0.30]]},
            {"name": "agriculture", "motif": "homogeneous", "motif_means": [[0.45, 0.45, 0.30, 0.50]]},
            {"name": "park", "motif": "striped", "motif_means": [[0.25, 0.20, 0.60, 0.30], [0.45, 0.40, 0.30, 0.50]], "placement": "inset", "partner": 1},
            {"name": "orchard", "motif": "striped", "motif_means": [[0.25, 0.20, 0.60, 0.30], [0.45, 0.40, 0.30, 0.50]], "placement": "inset", "partner": 2},
            {"name": "housing_a", "motif": "two-block", "motif_means": [[0.70, 0.70, 0.60, 0.60], [0.40, 0.30, 0.55, 0.35]], "placement": "tile", "partner": 6},
            {"name": "housing_b", "motif": "two-block", "motif_means": [[0.70, 0.30, 0.55, 0.35], [0.40, 0.70, 0.60, 0.60]], "placement": "tile", "partner": 5},
        ],
    },
    "hierarchy": {
        "coarse_thresholds": [0.02, 0.04, 0.08, 0.16, 0.32, 0.64, 1.28],
        "fine_thresholds": [0.8, 0.4, 0.2, 0.1],
    },
    "band_roles": {"coarse": {"red": 1, "nir": 2}, "fine": {"red": 1, "nir": 2}},
    "grid": {"gammas": [0.25, 1.0], "cs": [1.0, 16.0], "rhos": [0.0, 0.5, 1.0], "folds": 3},
    "per_class": 6,
    "repetitions": 2,
    "seed": 0,
}


def write_config(tmp_path, cfg=SMALL, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def built(tmp_path_factory):
    d = tmp_path_factory.mktemp("built")
    cfg = write_config(d)
    assert run("synth", "--config", cfg) == 0
    assert run("build", "--config", cfg) == 0
    return d, cfg


def tree_of(path):
    out = {}
    for root, _, files in os.walk(path):
        for f in files:
            p = os.path.join(root, f)
            out[os.path.relpath(p, path)] = open(p, "rb").read()
    return out


def test_synth_outputs_and_determinism(tmp_path):
    cfg = write_config(tmp_path)
    assert run("synth", "--config", cfg) == 0
    files = sorted(os.listdir(tmp_path / "work" / "synth"))
    assert files == ["coarse.bfloat", "fine.bfloat", "synth.json", "truth.pgm"]
    first = tree_of(tmp_path / "work")
    assert run("synth", "--config", cfg) == 0
    assert tree_of(tmp_path / "work") == first


def test_invalid_configs_exit_2(tmp_path, capsys):
    bad = dict(SMALL, synth=dict(SMALL["synth"], noise_sigma=-1))
    assert run("synth", "--config", write_config(tmp_path, bad)) == 2
    assert "noise_sigma" in capsys.readouterr().err
    assert run("build", "--config", write_config(tmp_path, dict(SMALL, color="red"))) == 2
    (tmp_path / "broken.json").write_text("{")
    assert run("build", "--config", tmp_path / "broken.json") == 2
    descending = dict(SMALL, hierarchy={"coarse_thresholds": [1.0, 0.5]})
    assert run("build", "--config", write_config(tmp_path, descending)) == 2
    assert run("build", "--config", write_config(tmp_path, dict(SMALL, repetitions=0))) == 2


def test_build_archives(built):
    d, cfg = built
    b = d / "work" / "build"
    seqs = read_instances(b / "sequences.inst")
    trees = read_instances(b / "trees.inst")
    truth = load_label_map(d / "work" / "synth" / "truth.pgm")
    assert len(seqs) == len(trees) == np.count_nonzero(truth.labels)
    assert {len(s) for s in seqs} == {8}
    assert all(s.features.shape[1] == 8 for s in seqs)
    manifest = json.loads((b / "manifest.json").read_text())
    assert manifest["ids"] == np.flatnonzero(truth.labels.ravel()).tolist()
    counts = manifest["coarse_region_counts"]
    assert len(counts) == 7 and counts == sorted(counts, reverse=True)
    assert "regions" in (b / "region_counts.txt").read_text()
    header = (b / "coarse_features.csv").read_text().splitlines()[0]
    assert header.startswith("region_id,level,")
    assert len(header.split(",")) == 10
    assert (b / "coarse_hierarchy.txt").read_text().count("\n") == 2 * 32 * 24 - 1


def test_build_is_deterministic(built, tmp_path):
    d, _ = built
    cfg = dict(SMALL, paths={"work_dir": str(tmp_path / "again")})
    path = write_config(tmp_path, cfg)
    assert run("synth", "--config", path) == 0 and run("build", "--config", path) == 0
    assert tree_of(tmp_path / "again" / "build") == tree_of(d / "work" / "build")


def test_homogeneous_input_gives_single_node_trees(tmp_path):
    specs = [
        {"name": n, "motif": "homogeneous", "motif_means": [m]}
        for n, m in (("a", [0.2, 0.2, 0.6, 0.3]), ("b", [0.5, 0.5, 0.3, 0.5]))
    ]
    cfg = dict(SMALL, synth={"coarse_size": [32, 16], "scale_factor": 4, "num_classes": 2, "noise_sigma": 0.0,
                             "class_specs": specs, "require_confusable_pairs": False})
    path = write_config(tmp_path, cfg)
    assert run("synth", "--config", path) == 0 and run("build", "--config", path) == 0
    trees = read_instances(tmp_path / "work" / "build" / "trees.inst")
    assert {len(t) for t in trees} == {1}


def test_mapping_mismatch_exit_3(built, tmp_path, capsys):
    d, _ = built
    synth_dir = d / "work" / "synth"
    cfg = {k: v for k, v in SMALL.items() if k != "synth"}
    # coarse and fine swapped: the fine grid is no longer a multiple of the coarse one
    cfg["paths"] = {"work_dir": str(tmp_path / "w"), "coarse": str(synth_dir / "fine.bfloat"),
                    "fine": str(synth_dir / "coarse.bfloat"), "truth": str(synth_dir / "truth.pgm")}
    assert run("build", "--config", write_config(tmp_path, cfg)) == 3
    assert "data error" in capsys.readouterr().err


def test_missing_inputs_exit_3(tmp_path):
    cfg = {k: v for k, v in SMALL.items() if k != "synth"}
    cfg["paths"] = {"work_dir": "w", "coarse": "nope.bfloat", "fine": "nope2.bfloat", "truth": "nope.pgm"}
    assert run("build", "--config", write_config(tmp_path, cfg)) == 3
    assert run("train", "--config", write_config(tmp_path), "--scenario", "tree") == 2
    assert run("train", "--config", write_config(tmp_path), "--scenario", "composite") == 3


def test_stage_chain(built, capsys):
    d, cfg = built
    for stage in ("gram", "train", "predict", "evaluate"):
        assert run(stage, "--config", cfg, "--scenario", "composite", "--seed", 5) == 0
    out = capsys.readouterr().out
    assert "OA" in out
    g = d / "work" / "gram" / "composite" / "seed5"
    assert (g / "gamma0.25.sequence.gram").read_bytes().startswith(b"GRAM 36 sequence 0.25\n")
    t = d / "work" / "train" / "composite" / "seed5"
    assert (t / "model.svm").read_bytes().startswith(b"SVMMODEL 6 15\n")
    best = json.loads((t / "best.json").read_text())
    assert (t / "final.gram").read_bytes().startswith(f"GRAM 36 composite {best['gamma']!r} {best['rho']!r}\n".encode())
    preds = list(csv.DictReader(open(d / "work" / "predict" / "composite" / "seed5" / "predictions.csv")))
    split = json.loads((g / "split.json").read_text())
    assert [int(r["pixel_id"]) for r in preds] == split["test_ids"]
    metrics = json.loads((d / "work" / "evaluate" / "composite" / "seed5" / "metrics.json").read_text())
    assert 0 <= float(metrics["oa"]) <= 1


def test_training_ignores_test_labels(built):
    d, cfg = built
    assert run("gram", "--config", cfg, "--scenario", "context_coarse", "--seed", 2) == 0
    assert run("train", "--config", cfg, "--scenario", "context_coarse", "--seed", 2) == 0
    tdir = d / "work" / "train" / "context_coarse" / "seed2"
    before = tree_of(tdir)
    truth_path = d / "work" / "synth" / "truth.pgm"
    original = truth_path.read_bytes()
    split = json.loads((d / "work" / "gram" / "context_coarse" / "seed2" / "split.json").read_text())
    lab = load_label_map(truth_path).labels.copy()
    flat = lab.reshape(-1)
    flat[split["test_ids"]] = flat[split["test_ids"]] % 6 + 1  # every test label now wrong
    try:
        write_label_map(LabelMap(lab), truth_path)
        assert run("train", "--config", cfg, "--scenario", "context_coarse", "--seed", 2) == 0
        assert tree_of(tdir) == before
    finally:
        truth_path.write_bytes(original)


def test_experiment_reports_and_reproducibility(built, tmp_path):
    d, cfg = built
    argv = ["experiment", "--config", cfg, "--scenario", "all"]
    for w in ("r1", "r2"):
        for stage in ("synth", "build"):
            assert run(stage, "--config", cfg, "--work-dir", tmp_path / w) == 0
        assert run(*argv, "--work-dir", tmp_path / w) == 0
    a, b = tree_of(tmp_path / "r1"), tree_of(tmp_path / "r2")
    assert a == b
    report = a[os.path.join("experiment", "composite", "report.txt")].decode()
    assert "OA" in report and "(" in report
    summary = a[os.path.join("experiment", "summary.txt")].decode()
    assert all(s in summary for s in pipeline.SCENARIOS)
    # composite with rho in {0, 1} can always reproduce either pure kernel's validation accuracy
    best = lambda s: json.loads(a[os.path.join("train", s, "seed0", "best.json")])["cv_accuracy"]
    assert best("composite") >= max(best("context_coarse"), best("subregions_fine"))


def test_experiment_without_build_exit_3(tmp_path):
    cfg = write_config(tmp_path)
    assert run("synth", "--config", cfg) == 0
    assert run("experiment", "--config", cfg, "--scenario", "single_coarse") == 3


def test_rho_endpoints_degenerate_to_pure_kernels(built, tmp_path):
    d, _ = built
    cfg = dict(SMALL, grid=dict(SMALL["grid"], rhos=[0.0, 1.0]), paths={"work_dir": str(d / "work")})
    path = write_config(tmp_path, cfg)
    acc = {}
    for s in ("context_coarse", "subregions_fine", "composite"):
        assert run("gram", "--config", path, "--scenario", s, "--seed", 9) == 0
        assert run("train", "--config", path, "--scenario", s, "--seed", 9) == 0
        acc[s] = json.loads((d / "work" / "train" / s / "seed9" / "best.json").read_text())["cv_accuracy"]
    assert acc["composite"] == max(acc["context_coarse"], acc["subregions_fine"])


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "hierfuse", "train", "--config", write_config(tmp_path),
                          "--scenario", "bogus"], capture_output=True, text=True)
    assert res.returncode == 2 and "unknown scenario" in res.stderr


def test_load_config_defaults(tmp_path):
    path = write_config(tmp_path, {"paths": {"coarse": "c.bfloat", "fine": "f.bfloat", "truth": "t.pgm"}})
    c = pipeline.load_config(path)
    assert c.coarse_thresholds == tuple(2.0**k for k in range(-2, 5))
    assert c.fine_thresholds == (16.0, 8.0, 4.0, 2.0)
    assert (c.per_class, c.repetitions) == (200, 10)
    assert c.coarse_path == str(tmp_path / "c.bfloat")
    assert c.work_dir == str(tmp_path / "work")
