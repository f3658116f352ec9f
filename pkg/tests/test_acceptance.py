"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 8 and 9 run the whole pipeline on the default synthetic dataset and
take a few minutes; deselect them with ``-m "not slow"``.
"""
import itertools
import json
import math
import os
import time

import numpy as np
import pytest

from hierfuse import cli, pipeline
from hierfuse.classify import smo, train_binary, train_ovo, predict
from hierfuse.evaluation import metrics, wilcoxon_compare
from hierfuse.hierarchy import (
    SequenceInstance,
    TreeInstance,
    build_merge_tree,
    check_parent_table,
    cut_levels,
    dump_hierarchy,
    extract_tree,
)
from hierfuse.kernels import brute_force_kernel, build_gram, sequence_kernel, tree_kernel
from hierfuse.raster import Raster

CONFIG = os.path.join(os.path.dirname(__file__), os.pardir, "configs", "synthetic.json")


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, f"criterion {number}: {detail}"


def random_tree(rng, n):
    parents, path = [0], [1]
    for i in range(2, n + 1):
        path = path[: int(rng.integers(1, len(path) + 1))]
        parents.append(path[-1])
        path.append(i)
    return TreeInstance(rng.normal(size=(n, 8)), np.array(parents))


def test_1_oracle_equivalence(capsys):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    for i in range(200):
        gamma = (0.1, 1.0, 10.0)[i % 3]
        a = SequenceInstance(rng.normal(size=(int(rng.integers(1, 11)), 8)))
        b = SequenceInstance(rng.normal(size=(int(rng.integers(1, 11)), 8)))
        dp, ref = sequence_kernel(a, b, gamma), brute_force_kernel(a, b, gamma)
        worst = max(worst, abs(dp - ref) / max(abs(ref), 1e-300))
    for i in range(200):
        gamma = (0.1, 1.0, 10.0)[i % 3]
        a, b = random_tree(rng, int(rng.integers(1, 13))), random_tree(rng, int(rng.integers(1, 13)))
        dp, ref = tree_kernel(a, b, gamma), brute_force_kernel(a, b, gamma)
        worst = max(worst, abs(dp - ref) / max(abs(ref), 1e-300))
    elapsed = time.perf_counter() - start
    report(capsys, 1, worst <= 1e-9 and elapsed < 10, f"max relative error {worst:.2e}, {elapsed:.2f} s")


def test_2_hand_values(capsys):
    a, b = np.zeros(8), np.full(8, 10 / math.sqrt(8))
    assert math.exp(-10 * float(np.sum((a - b) ** 2))) < 1e-12
    s = SequenceInstance(np.stack([a, b]))
    t = TreeInstance(np.stack([a, b, b]), np.array([0, 1, 1]))
    ks, kt = sequence_kernel(s, s, 10.0), tree_kernel(t, t, 10.0)
    ok = abs(ks - 3) <= 1e-9 and abs(kt - 9) <= 1e-9
    report(capsys, 2, ok, f"sequence {ks!r} (want 3), tree {kt!r} (want 9)")


def test_3_psd_and_normalization(capsys):
    rng = np.random.default_rng(3)
    instances = [
        (SequenceInstance(0.5 * rng.normal(size=(int(rng.integers(1, 9)), 8))), random_tree(rng, int(rng.integers(1, 10))))
        for _ in range(50)
    ]
    instances = [(s, TreeInstance(0.5 * t.features, t.parents)) for s, t in instances]
    lines, ok = [], True
    for kind, rho in (("sequence", None), ("tree", None), ("composite", 0.5)):
        g = build_gram(instances, kind, 0.1, rho).values
        eig = np.linalg.eigvalsh(g)
        off = g[~np.eye(50, dtype=bool)]
        good = (
            eig.min() >= -1e-8 * eig.max()
            and np.all(np.abs(np.diag(g) - 1) <= 1e-12)
            and np.all(off > 0) and np.all(off <= 1)
        )
        ok &= bool(good)
        lines.append(f"{kind} min eig {eig.min():.2e}")
    report(capsys, 3, ok, ", ".join(lines))


def _time_self_pair(n, rng):
    s = SequenceInstance(rng.normal(size=(n, 8)))
    sequence_kernel(s, s, 1.0)  # compile and warm up
    best = math.inf
    for _ in range(5):
        t0 = time.perf_counter()
        sequence_kernel(s, s, 1.0)
        best = min(best, time.perf_counter() - t0)
    return best


def test_4_quadratic_growth(capsys):
    rng = np.random.default_rng(4)
    start = time.perf_counter()
    t1, t2 = _time_self_pair(1000, rng), _time_self_pair(2000, rng)
    ratio = t2 / t1
    elapsed = time.perf_counter() - start
    report(capsys, 4, 3.2 <= ratio <= 5.5 and elapsed < 60, f"growth {ratio:.2f} ({t1 * 1e3:.1f} ms -> {t2 * 1e3:.1f} ms), {elapsed:.1f} s")


def test_5_hierarchy_invariants(capsys):
    rng = np.random.default_rng(5)
    failures = []
    for k in range(50):
        r = Raster(rng.random((3, 8, 8)))
        t = build_merge_tree(r)
        for node in range(t.num_leaves, t.num_nodes):
            a, b = t.children[node]
            if t.merge_cost[node] < max(t.merge_cost[a], t.merge_cost[b]):
                failures.append(f"raster {k}: cost decreases at node {node}")
        cut = cut_levels(t, [0.05, 0.1, 0.2, 0.4, 0.8])
        for lo, hi in zip(cut.labels, cut.labels[1:]):
            if any(len(np.unique(hi[lo == region])) != 1 for region in np.unique(lo)):
                failures.append(f"raster {k}: cuts not nested")
        feats = {i: np.full(8, float(i)) for i in range(t.num_nodes)}
        tree = extract_tree(t, [0.8, 0.4, 0.2, 0.1], feats)
        try:
            check_parent_table(tree.parents)
        except ValueError as exc:
            failures.append(f"raster {k}: {exc}")
        for i, p in enumerate(tree.parents[1:], start=1):
            # pre-order: the parent comes before the child and covers it
            child, parent = set(t.members(tree.region_ids[i]).tolist()), set(t.members(tree.region_ids[p - 1]).tolist())
            if not (p <= i and child < parent):
                failures.append(f"raster {k}: bad parent for node {i + 1}")
        if dump_hierarchy(build_merge_tree(r)) != dump_hierarchy(t):
            failures.append(f"raster {k}: not deterministic")
    report(capsys, 5, not failures, "; ".join(failures[:3]) or "50 rasters checked")


def test_6_svm(capsys):
    two = train_binary(np.eye(2), np.array([1.0, -1.0]), 10.0)
    alpha = np.abs(two.dual_coefs)
    analytic = len(alpha) == 2 and np.all(np.abs(alpha - 0.5) <= 1e-6) and abs(two.bias) <= 1e-6

    rng = np.random.default_rng(6)
    x = np.vstack([rng.normal(size=(10, 2)) + [3, 3], rng.normal(size=(10, 2)) - [3, 3]])
    y = np.repeat([1.0, -1.0], 10)
    K = x @ x.T
    labels = np.where(y > 0, 1, 2)
    train_acc = float(np.mean(predict(train_ovo(K, labels, 10.0), K) == labels))
    C = 10.0
    a, *_ = smo(K, y, C)
    dual_ok = abs(float(a @ y)) <= 1e-6 * C and np.all(a >= 0) and np.all(a <= C)
    ok = bool(analytic and train_acc == 1.0 and dual_ok)
    report(
        capsys, 6, ok,
        f"2-point alpha {alpha.tolist()} bias {two.bias:.1e} (want 0.5, 0); "
        f"20-point training accuracy {train_acc:.2f}; dual constraints {'hold' if dual_ok else 'violated'}",
    )


def test_7_metrics(capsys):
    m = metrics(np.array([[45, 5], [15, 35]]))
    w = wilcoxon_compare(np.arange(10) + 1.0, np.zeros(10), alternative="two-sided")
    ok = m.oa == 0.8 and m.kappa == 0.6 and abs(w.p_value - 2 / 1024) <= 1e-12
    report(capsys, 7, ok, f"OA {m.oa!r}, Kappa {m.kappa!r}, p {w.p_value!r}")


def _run_all(work_dir):
    for argv in (["synth"], ["build"], ["gram", "--scenario", "composite"], ["experiment", "--scenario", "all"]):
        code = cli.main([argv[0], "--config", CONFIG, "--work-dir", str(work_dir), *argv[1:]])
        assert code == 0, f"{argv[0]} exited with {code}"


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    work = tmp_path_factory.mktemp("acceptance") / "run1"
    start = time.perf_counter()
    _run_all(work)
    return work, time.perf_counter() - start


def _files(root):
    out = {}
    for d, _, names in os.walk(root):
        for n in names:
            p = os.path.join(d, n)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, root)] = fh.read()
    return out


@pytest.mark.slow
def test_8_end_to_end(capsys, full_run):
    work, elapsed = full_run
    config = pipeline.load_config(CONFIG, work_dir=str(work))
    runs = {}
    for s in pipeline.SCENARIOS:
        runs[s] = [
            float(json.loads((work / "evaluate" / s / f"seed{config.seed + r}" / "metrics.json").read_text())["oa"]) * 100
            for r in range(config.repetitions)
        ]
    mean = {s: float(np.mean(v)) for s, v in runs.items()}
    others = max(v for s, v in mean.items() if s != "composite")
    margins = (
        mean["context_coarse"] - mean["single_coarse"] >= 5
        and mean["subregions_fine"] - mean["single_fine"] >= 3
        and mean["composite"] - others >= 3
    )
    p = {b: wilcoxon_compare(runs["composite"], runs[b], alternative="greater").p_value for b in ("single_coarse", "single_fine")}
    ok = margins and all(v <= 0.05 for v in p.values()) and elapsed < 15 * 60
    detail = ", ".join(f"{s} {v:.2f}" for s, v in mean.items())
    report(capsys, 8, ok, f"mean OA {detail}; composite p {p['single_coarse']:.4f}/{p['single_fine']:.4f}; {elapsed:.0f} s")


@pytest.mark.slow
def test_9_reproducibility(capsys, full_run, tmp_path):
    first, _ = full_run
    _run_all(tmp_path / "run2")
    a, b = _files(first), _files(tmp_path / "run2")
    kinds = {k: sum(1 for f in a if f.endswith(k)) for k in (".gram", ".svm", "report.txt")}
    differ = sorted(f for f in a.keys() | b.keys() if a.get(f) != b.get(f))
    ok = not differ and all(kinds.values())
    report(capsys, 9, ok, f"{len(a)} files compared ({kinds}); differing: {differ[:3]}")
