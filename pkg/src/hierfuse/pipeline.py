"""End-to-end stages: dataset synthesis, hierarchy/instance building, Gram
matrices, training, prediction, evaluation and repeated experiments.

Every stage reads and writes files under a work directory, one subdirectory
per stage, so stages can be rerun and compared in isolation.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import classify, evaluation, features, hierarchy, kernels, raster, synth

log = logging.getLogger(__name__)

__all__ = [
    "SCENARIOS",
    "ConfigError",
    "DataError",
    "PipelineConfig",
    "load_config",
    "BuildResult",
    "build_instances",
    "run_synth",
    "run_build",
    "load_build",
    "run_gram",
    "run_train",
    "run_predict",
    "run_evaluate",
    "run_experiment",
]

SCENARIOS = ("single_coarse", "context_coarse", "single_fine", "subregions_fine", "composite")
SCENARIO_KIND = {
    "single_coarse": "gaussian",
    "context_coarse": "sequence",
    "single_fine": "gaussian",
    "subregions_fine": "tree",
    "composite": "composite",
}
BASELINE = {"context_coarse": "single_coarse", "subregions_fine": "single_fine"}


class ConfigError(ValueError):
    pass


class DataError(RuntimeError):
    pass


@dataclass
class PipelineConfig:
    work_dir: str = "work"
    coarse_path: str | None = None
    fine_path: str | None = None
    truth_path: str | None = None
    synth: dict | None = None
    coarse_thresholds: tuple[float, ...] = tuple(2.0**k for k in range(-2, 5))
    fine_thresholds: tuple[float, ...] = tuple(2.0**k for k in range(4, 0, -1))
    connectivity: int = 4
    band_roles_coarse: dict = field(default_factory=lambda: {"red": 1, "nir": 2})
    band_roles_fine: dict = field(default_factory=lambda: {"red": 0, "nir": 3})
    standardize: bool = True
    grid: classify.CvGrid = field(default_factory=classify.CvGrid)
    per_class: int = 200
    repetitions: int = 10
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        self.coarse_thresholds = tuple(float(t) for t in self.coarse_thresholds)
        self.fine_thresholds = tuple(float(t) for t in self.fine_thresholds)
        if any(b <= a for a, b in zip(self.coarse_thresholds, self.coarse_thresholds[1:])):
            raise ConfigError("coarse thresholds must be strictly ascending")
        if any(b >= a for a, b in zip(self.fine_thresholds, self.fine_thresholds[1:])):
            raise ConfigError("fine thresholds must be strictly descending")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.per_class < 1:
            raise ConfigError("per_class must be >= 1")
        if self.connectivity not in (4, 8):
            raise ConfigError("connectivity must be 4 or 8")

    def stage_dir(self, *parts: str) -> str:
        path = os.path.join(self.work_dir, *parts)
        os.makedirs(path, exist_ok=True)
        return path

    def dataset_paths(self) -> tuple[str, str, str]:
        if self.synth is not None and not all((self.coarse_path, self.fine_path, self.truth_path)):
            d = os.path.join(self.work_dir, "synth")
            return (os.path.join(d, "coarse.bfloat"), os.path.join(d, "fine.bfloat"), os.path.join(d, "truth.pgm"))
        if not all((self.coarse_path, self.fine_path, self.truth_path)):
            raise ConfigError("paths.coarse, paths.fine and paths.truth are required without a synth section")
        return self.coarse_path, self.fine_path, self.truth_path


def load_config(path: str | os.PathLike, **overrides) -> PipelineConfig:
    """Read the JSON pipeline configuration.

    Relative paths inside the file are resolved against the file's directory.
    """
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return None if p is None else os.path.normpath(os.path.join(base, p))

    known = {"paths", "synth", "hierarchy", "band_roles", "features", "grid", "per_class", "repetitions", "seed", "jobs"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    paths = raw.get("paths", {})
    hier = raw.get("hierarchy", {})
    roles = raw.get("band_roles", {})
    grid = raw.get("grid", {})
    kw = dict(
        work_dir=resolve(paths.get("work_dir", "work")),
        coarse_path=resolve(paths.get("coarse")),
        fine_path=resolve(paths.get("fine")),
        truth_path=resolve(paths.get("truth")),
        synth=raw.get("synth"),
        standardize=raw.get("features", {}).get("standardize", True),
    )
    if "coarse_thresholds" in hier:
        kw["coarse_thresholds"] = hier["coarse_thresholds"]
    if "fine_thresholds" in hier:
        kw["fine_thresholds"] = hier["fine_thresholds"]
    if "connectivity" in hier:
        kw["connectivity"] = hier["connectivity"]
    if "coarse" in roles:
        kw["band_roles_coarse"] = roles["coarse"]
    if "fine" in roles:
        kw["band_roles_fine"] = roles["fine"]
    for key in ("per_class", "repetitions", "seed", "jobs"):
        if key in raw:
            kw[key] = raw[key]
    try:
        if grid:
            kw["grid"] = classify.CvGrid(
                gammas=tuple(float(g) for g in grid.get("gammas", classify.CvGrid.gammas)),
                cs=tuple(float(c) for c in grid.get("cs", classify.CvGrid.cs)),
                rhos=tuple(float(r) for r in grid.get("rhos", classify.CvGrid.rhos)),
                folds=int(grid.get("folds", 5)),
            )
        kw.update(overrides)
        return PipelineConfig(**kw)
    except (classify.SvmError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# build


@dataclass
class BuildResult:
    ids: np.ndarray  # flat coarse pixel index of every instance
    sequences: list
    trees: list
    coarse_counts: list[int]
    fine_counts: list[float]  # mean region count per fine level (root level first)
    coarse_tree: hierarchy.MergeTree | None = None
    coarse_cut: hierarchy.LevelCut | None = None
    coarse_table: np.ndarray | None = None


def build_instances(
    coarse: raster.Raster,
    fine: raster.Raster,
    truth: raster.LabelMap,
    config: PipelineConfig,
) -> BuildResult:
    """One sequence and one tree per labeled coarse pixel, in flat pixel order."""
    mapping = raster.PatchMapping.from_rasters(coarse, fine)
    truth.check_matches(coarse)
    ids = np.flatnonzero(truth.labels.reshape(-1) > 0)
    if len(ids) == 0:
        raise DataError("ground truth has no labeled pixel")

    tree = hierarchy.build_merge_tree(coarse, config.connectivity)
    cut = hierarchy.cut_levels(tree, config.coarse_thresholds)
    nodes = set(ids.tolist()) | set(np.unique(cut.labels[:, ids]).tolist())
    table = features.feature_table(coarse, tree, nodes, config.band_roles_coarse)
    sequences = [hierarchy.extract_sequence(cut, (int(p % coarse.width), int(p // coarse.width)), table) for p in ids]

    trees = []
    level_counts = np.zeros(len(config.fine_thresholds) + 1)
    for p in ids:
        x0, y0, x1, y1 = raster.patch_of(mapping, int(p % coarse.width), int(p // coarse.width))
        patch = fine.window(x0, y0, x1, y1)
        ptree = hierarchy.build_merge_tree(patch, config.connectivity)
        labels = [np.full(ptree.num_leaves, ptree.root)] + [hierarchy._labels_at(ptree, a) for a in config.fine_thresholds]
        level_counts += [len(np.unique(l)) for l in labels]
        pnodes = set(np.unique(np.concatenate(labels)).tolist())
        ptable = features.feature_table(patch, ptree, pnodes, config.band_roles_fine)
        trees.append(hierarchy.extract_tree(ptree, config.fine_thresholds, ptable))
    return BuildResult(ids, sequences, trees, hierarchy.level_region_counts(cut), (level_counts / len(ids)).tolist(),
                       tree, cut, table)


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise DataError(f"missing stage output {path}") from None


def run_synth(config: PipelineConfig) -> dict[str, str]:
    if config.synth is None:
        raise ConfigError("config has no synth section")
    try:
        scfg = synth.SynthConfig.from_dict(config.synth) if config.synth else synth.default_config(config.seed)
    except (synth.SynthError, TypeError) as exc:
        raise ConfigError(f"invalid synth config: {exc}") from None
    return synth.write_dataset(scfg, config.stage_dir("synth"))


def _load_dataset(config: PipelineConfig):
    cpath, fpath, tpath = config.dataset_paths()
    try:
        coarse = raster.load_raster(cpath, _format_of(cpath))
        fine = raster.load_raster(fpath, _format_of(fpath))
        truth = raster.load_label_map(tpath)
    except FileNotFoundError as exc:
        raise DataError(f"missing input {exc.filename}") from None
    except raster.RasterError as exc:
        raise DataError(str(exc)) from None
    return coarse, fine, truth


def _format_of(path: str) -> str:
    ext = os.path.splitext(path)[1].lower()
    return {".pgm": "pgm", ".ppm": "ppm"}.get(ext, "band_float")


def run_build(config: PipelineConfig) -> BuildResult:
    coarse, fine, truth = _load_dataset(config)
    try:
        result = build_instances(coarse, fine, truth, config)
    except raster.RasterError as exc:
        raise DataError(str(exc)) from None
    out = config.stage_dir("build")
    hierarchy.write_instances(os.path.join(out, "sequences.inst"), result.sequences)
    hierarchy.write_instances(os.path.join(out, "trees.inst"), result.trees)
    _write_json(
        os.path.join(out, "manifest.json"),
        {
            "ids": result.ids.tolist(),
            "coarse_thresholds": list(config.coarse_thresholds),
            "fine_thresholds": list(config.fine_thresholds),
            "coarse_region_counts": result.coarse_counts,
            "fine_mean_region_counts": result.fine_counts,
            "tree_sizes": [len(t) for t in result.trees],
        },
    )
    with open(os.path.join(out, "coarse_hierarchy.txt"), "w") as fh:
        fh.write(hierarchy.dump_hierarchy(result.coarse_tree))
    rows = [(int(p), 0, result.coarse_table[p]) for p in result.ids]
    for level, labels in enumerate(result.coarse_cut.labels, start=1):
        rows += [(int(r), level, result.coarse_table[r]) for r in np.unique(labels[result.ids])]
    features.write_feature_csv(os.path.join(out, "coarse_features.csv"), rows, coarse.band_names)
    with open(os.path.join(out, "region_counts.txt"), "w") as fh:
        fh.write("coarse (ascending thresholds)\n")
        for a, c in zip(config.coarse_thresholds, result.coarse_counts):
            fh.write(f"  alpha={a!r}: {c} regions\n")
        fh.write("fine (root, then descending thresholds; mean per patch)\n")
        for a, c in zip(("root",) + config.fine_thresholds, result.fine_counts):
            fh.write(f"  alpha={a!r}: {c:.3f} regions\n")
    log.info("built %d instances; coarse region counts %s", len(result.ids), result.coarse_counts)
    return result


def load_build(config: PipelineConfig) -> BuildResult:
    d = os.path.join(config.work_dir, "build")
    manifest = _read_json(os.path.join(d, "manifest.json"))
    try:
        seqs = hierarchy.read_instances(os.path.join(d, "sequences.inst"))
        trees = hierarchy.read_instances(os.path.join(d, "trees.inst"))
    except FileNotFoundError as exc:
        raise DataError(f"missing stage output {exc.filename}") from None
    return BuildResult(np.asarray(manifest["ids"], dtype=np.int64), seqs, trees,
                       manifest["coarse_region_counts"], manifest["fine_mean_region_counts"])


# ---------------------------------------------------------------------------
# kernels per scenario


def _parts(build: BuildResult, scenario: str) -> list[kernels.PackedInstances]:
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}")
    seq = kernels.PackedInstances.pack(build.sequences)
    tree = kernels.PackedInstances.pack(build.trees)
    return {
        "single_coarse": [seq.first_nodes()],
        "context_coarse": [seq],
        "single_fine": [tree.first_nodes()],
        "subregions_fine": [tree],
        "composite": [seq, tree],
    }[scenario]


def _scaled(parts, train_pos, config):
    out = []
    for p in parts:
        tr = p.take(train_pos)
        if config.standardize:
            s = features.Standardizer.fit(tr.features)
            out.append((p.map(s.transform), s))
        else:
            out.append((p, None))
    return out


def _split(config: PipelineConfig, build: BuildResult, truth: raster.LabelMap, seed: int):
    train_ids, test_ids = classify.sample_training_set(truth, config.per_class, seed)
    pos = {int(v): i for i, v in enumerate(build.ids)}
    try:
        return np.array([pos[i] for i in train_ids]), np.array([pos[i] for i in test_ids])
    except KeyError as exc:
        raise DataError(f"labeled pixel {exc.args[0]} has no instance; rerun build") from None


def _normalized(packed, gamma):
    return kernels._normalized_sym(packed, gamma)


def _gram_file(scenario, values, gamma, rho=None, kind=None):
    kind = kind or SCENARIO_KIND[scenario]
    return kernels.GramMatrix(values, kind, gamma, rho)


def _rep_dir(config, stage, scenario, seed):
    return config.stage_dir(stage, scenario, f"seed{seed}")


def _set_threads(config):
    import numba

    numba.set_num_threads(max(1, min(int(config.jobs), numba.config.NUMBA_NUM_THREADS)))


def run_gram(config: PipelineConfig, scenario: str, seed: int, write_grid: bool = True):
    """Split, fit standardization on training nodes, and compute training Grams for every grid gamma.

    Returns ``(train_pos, test_pos, scaled parts, grams)``; ``grams`` maps each
    gamma to a matrix or, for the composite scenario, a (sequence, tree) pair.
    """
    _set_threads(config)
    build = load_build(config)
    truth = _load_truth(config)
    train_pos, test_pos = _split(config, build, truth, seed)
    scaled = _scaled(_parts(build, scenario), train_pos, config)
    grams = {}
    for gamma in config.grid.gammas:
        mats = [_normalized(p.take(train_pos), gamma) for p, _ in scaled]
        grams[gamma] = tuple(mats) if len(mats) == 2 else mats[0]
    out = _rep_dir(config, "gram", scenario, seed)
    _write_json(os.path.join(out, "split.json"), {
        "train_ids": build.ids[train_pos].tolist(), "test_ids": build.ids[test_pos].tolist()})
    _write_json(os.path.join(out, "scaler.json"), [
        {"mean": [repr(float(v)) for v in s.mean], "scale": [repr(float(v)) for v in s.scale]} if s else None
        for _, s in scaled
    ])
    if write_grid:
        for gamma, m in grams.items():
            if isinstance(m, tuple):
                kernels.write_gram(kernels.GramMatrix(m[0], "sequence", gamma), os.path.join(out, f"gamma{gamma!r}.sequence.gram"))
                kernels.write_gram(kernels.GramMatrix(m[1], "tree", gamma), os.path.join(out, f"gamma{gamma!r}.tree.gram"))
            else:
                kernels.write_gram(_gram_file(scenario, m, gamma), os.path.join(out, f"gamma{gamma!r}.gram"))
    return build, train_pos, test_pos, scaled, grams


def _load_truth(config):
    try:
        return raster.load_label_map(config.dataset_paths()[2])
    except FileNotFoundError as exc:
        raise DataError(f"missing input {exc.filename}") from None


def _load_grid_grams(config, scenario, seed):
    d = os.path.join(config.work_dir, "gram", scenario, f"seed{seed}")
    grams = {}
    try:
        for gamma in config.grid.gammas:
            if scenario == "composite":
                grams[gamma] = (kernels.read_gram(os.path.join(d, f"gamma{gamma!r}.sequence.gram")).values,
                                kernels.read_gram(os.path.join(d, f"gamma{gamma!r}.tree.gram")).values)
            else:
                grams[gamma] = kernels.read_gram(os.path.join(d, f"gamma{gamma!r}.gram")).values
    except FileNotFoundError as exc:
        raise DataError(f"missing stage output {exc.filename}; run the gram stage first") from None
    return grams


def run_train(config: PipelineConfig, scenario: str, seed: int, grams=None, train_ids=None, train_labels=None):
    """Cross-validate over the grid, then fit the final model on all training instances.

    Only training labels are read here.
    """
    gdir = os.path.join(config.work_dir, "gram", scenario, f"seed{seed}")
    if train_ids is None:
        train_ids = np.asarray(_read_json(os.path.join(gdir, "split.json"))["train_ids"], dtype=np.int64)
    if train_labels is None:
        flat = _load_truth(config).labels.reshape(-1)
        train_labels = flat[train_ids]
    if grams is None:
        grams = _load_grid_grams(config, scenario, seed)
    try:
        cv = classify.cross_validate(grams, train_labels, config.grid, seed)
    except classify.SvmError as exc:
        raise DataError(f"cross-validation infeasible: {exc}") from None
    entry = grams[cv.gamma]
    K = classify.grid_combine(entry, cv.rho) if isinstance(entry, tuple) else entry
    rho = cv.rho if scenario == "composite" else None
    desc = (SCENARIO_KIND[scenario], cv.gamma, rho)
    model = classify.train_ovo(K, train_labels, cv.c, desc, train_ids)
    out = _rep_dir(config, "train", scenario, seed)
    kernels.write_gram(_gram_file(scenario, K, cv.gamma, rho), os.path.join(out, "final.gram"))
    classify.write_model(model, os.path.join(out, "model.svm"))
    with open(os.path.join(out, "cv.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["gamma", "C", "rho", "mean_accuracy"])
        for g, c, r, a in cv.table:
            w.writerow([repr(g), repr(c), "" if r is None else repr(r), repr(a)])
    _write_json(os.path.join(out, "best.json"), {"gamma": cv.gamma, "C": cv.c, "rho": rho, "cv_accuracy": cv.accuracy})
    return model, cv


def _load_scaled(config, scenario, seed, build):
    gdir = os.path.join(config.work_dir, "gram", scenario, f"seed{seed}")
    scal = _read_json(os.path.join(gdir, "scaler.json"))
    out = []
    for p, s in zip(_parts(build, scenario), scal):
        if s is None:
            out.append((p, None))
        else:
            st = features.Standardizer(np.array([float(v) for v in s["mean"]]), np.array([float(v) for v in s["scale"]]))
            out.append((p.map(st.transform), st))
    return out


def run_predict(config: PipelineConfig, scenario: str, seed: int, model=None, scaled=None, build=None):
    """Predict every test instance; kernels are evaluated against support vectors only."""
    _set_threads(config)
    build = build or load_build(config)
    gdir = os.path.join(config.work_dir, "gram", scenario, f"seed{seed}")
    split = _read_json(os.path.join(gdir, "split.json"))
    pos = {int(v): i for i, v in enumerate(build.ids)}
    train_pos = np.array([pos[i] for i in split["train_ids"]])
    test_pos = np.array([pos[i] for i in split["test_ids"]])
    if model is None:
        try:
            model = classify.read_model(os.path.join(config.work_dir, "train", scenario, f"seed{seed}", "model.svm"), split["train_ids"])
        except FileNotFoundError as exc:
            raise DataError(f"missing stage output {exc.filename}; run the train stage first") from None
    if scaled is None:
        scaled = _load_scaled(config, scenario, seed, build)
    kind, gamma, rho = model.kernel_descriptor
    if kind != SCENARIO_KIND[scenario]:
        raise DataError(f"model kernel {kind!r} does not match scenario {scenario!r}")
    sv = np.unique(np.concatenate([m.support_indices for m in model.binary_models]))
    rows = []
    for p, _ in scaled:
        rows.append(kernels.normalized_cross(p.take(test_pos), p.take(train_pos[sv]), gamma))
    sub = kernels.composite_kernel(rows[0], rows[1], rho) if len(rows) == 2 else rows[0]
    full = np.zeros((len(test_pos), len(train_pos)))
    full[:, sv] = sub
    pred = classify.predict(model, full, (kind, gamma, rho))
    out = _rep_dir(config, "predict", scenario, seed)
    with open(os.path.join(out, "predictions.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pixel_id", "predicted"])
        w.writerows(zip(build.ids[test_pos].tolist(), pred.tolist()))
    return build.ids[test_pos], pred


def _class_names(config, k):
    if config.synth is not None:
        try:
            scfg = synth.SynthConfig.from_dict(config.synth) if config.synth else synth.default_config(config.seed)
            return [s.name for s in scfg.class_specs]
        except (synth.SynthError, TypeError):
            pass
    return [f"class_{c}" for c in range(1, k + 1)]


def run_evaluate(config: PipelineConfig, scenario: str, seed: int) -> evaluation.Metrics:
    pdir = os.path.join(config.work_dir, "predict", scenario, f"seed{seed}")
    try:
        with open(os.path.join(pdir, "predictions.csv")) as fh:
            rows = list(csv.DictReader(fh))
    except FileNotFoundError as exc:
        raise DataError(f"missing stage output {exc.filename}; run the predict stage first") from None
    truth = _load_truth(config)
    flat = truth.labels.reshape(-1)
    ids = np.array([int(r["pixel_id"]) for r in rows], dtype=np.int64)
    pred = np.array([int(r["predicted"]) for r in rows], dtype=np.int64)
    classes = list(range(1, truth.num_classes + 1))
    cm = evaluation.confusion_matrix(flat[ids], pred, classes)
    m = evaluation.metrics(cm)
    out = _rep_dir(config, "evaluate", scenario, seed)
    np.savetxt(os.path.join(out, "confusion.csv"), cm.counts, fmt="%d", delimiter=",")
    _write_json(os.path.join(out, "metrics.json"), {
        "per_class": [repr(float(v)) for v in m.per_class], "oa": repr(m.oa), "aa": repr(m.aa), "kappa": repr(m.kappa)})
    return m


def _read_metrics(config, scenario, seed) -> evaluation.Metrics:
    d = _read_json(os.path.join(config.work_dir, "evaluate", scenario, f"seed{seed}", "metrics.json"))
    return evaluation.Metrics(np.array([float(v) for v in d["per_class"]]), float(d["oa"]), float(d["aa"]), float(d["kappa"]))


def run_experiment(config: PipelineConfig, scenarios: Sequence[str]) -> dict[str, list[evaluation.Metrics]]:
    """Run gram -> train -> predict -> evaluate for ``repetitions`` consecutive seeds.

    Writes one Table-style report per scenario and, when several scenarios
    are run, a combined ``summary.txt`` with Wilcoxon signed-rank comparisons
    of every structured kernel against the single-level baselines.
    """
    for s in scenarios:
        if s not in SCENARIOS:
            raise ConfigError(f"unknown scenario {s!r}")
    truth = _load_truth(config)
    flat = truth.labels.reshape(-1)
    names = _class_names(config, truth.num_classes)
    seeds = [config.seed + r for r in range(config.repetitions)]
    results: dict[str, list[evaluation.Metrics]] = {}
    for scenario in scenarios:
        runs = []
        for seed in seeds:
            build, train_pos, test_pos, scaled, grams = run_gram(config, scenario, seed, write_grid=False)
            train_ids = build.ids[train_pos]
            model, cv = run_train(config, scenario, seed, grams, train_ids, flat[train_ids])
            run_predict(config, scenario, seed, model, scaled, build)
            runs.append(run_evaluate(config, scenario, seed))
            log.info("%s seed %d: OA %.4f (gamma=%r C=%r rho=%r)", scenario, seed, runs[-1].oa, cv.gamma, cv.c, cv.rho)
        results[scenario] = runs
        out = config.stage_dir("experiment", scenario)
        with open(os.path.join(out, "report.txt"), "w") as fh:
            fh.write(evaluation.format_table(names, {scenario: runs}))
        evaluation.write_table_csv(os.path.join(out, "report.csv"), names, {scenario: runs})
    if len(results) > 1:
        _write_summary(config, names, results)
    return results


def _baselines(method: str, results) -> list[str]:
    if method == "composite":
        return [b for b in ("single_coarse", "single_fine") if b in results]
    return [BASELINE[method]] if BASELINE.get(method) in results else []


def significance(results: dict[str, list[evaluation.Metrics]], alpha: float = 0.05) -> dict[str, dict[str, evaluation.WilcoxonResult]]:
    """One-sided signed-rank tests on OA of each structured method against its single-level baseline(s).

    Returns ``{method: {baseline: result}}``; methods with fewer than five
    runs are skipped.
    """
    out = {}
    for method in ("context_coarse", "subregions_fine", "composite"):
        if method not in results or len(results[method]) < 5:
            continue
        out[method] = {
            b: evaluation.wilcoxon_compare([m.oa for m in results[method]], [m.oa for m in results[b]], alpha, alternative="greater")
            for b in _baselines(method, results)
        }
    return out


def _marks(names, results, alpha=0.05) -> dict[str, set]:
    """Rows to underline: significant against every baseline of the method.

    Summary rows use the one-sided test (structured > single level), class
    rows the two-sided one.
    """
    marks = {}
    for method in ("context_coarse", "subregions_fine", "composite"):
        bases = _baselines(method, results)
        if method not in results or not bases or len(results[method]) < 5:
            continue
        rows = [(n, lambda m, i=i: m.per_class[i], "two-sided") for i, n in enumerate(names)]
        rows += [("OA", lambda m: m.oa, "greater"), ("AA", lambda m: m.aa, "greater"), ("Kappa", lambda m: m.kappa, "greater")]
        for row, get, alt in rows:
            if all(
                evaluation.wilcoxon_compare([get(m) for m in results[method]], [get(m) for m in results[b]], alpha, alt).significant
                for b in bases
            ):
                marks.setdefault(method, set()).add(row)
    return marks


def _write_summary(config, names, results):
    marks = _marks(names, results)
    sig = significance(results)
    out = config.stage_dir("experiment")
    ordered = {s: results[s] for s in SCENARIOS if s in results}
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write(evaluation.format_table(names, ordered, marks))
        fh.write("\nWilcoxon signed-rank on OA (one-sided, method > baseline):\n")
        if not sig:
            fh.write("  skipped: needs at least 5 repetitions\n")
        for method, comps in sig.items():
            for b, r in comps.items():
                fh.write(f"  {method} vs {b}: p={r.p_value:.6g} {'significant' if r.significant else 'n.s.'}\n")
    evaluation.write_table_csv(os.path.join(out, "summary.csv"), names, ordered)
