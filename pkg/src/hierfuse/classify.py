"""One-against-one kernel SVM on precomputed Gram matrices, with grid-search CV.

The binary solver is SMO on the C-SVC dual

    min_a  1/2 a^T Q a - e^T a,   0 <= a_i <= C,   y^T a = 0,   Q_ij = y_i y_j K_ij

choosing the maximal-violating pair at each step. The decision function is
``sum_i dual_coef_i K(x_i, x) + bias`` with ``dual_coef_i = a_i y_i``.
"""
from __future__ import annotations

import itertools
import math
import os
import struct
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numba
import numpy as np

from .raster import LabelMap

__all__ = [
    "SvmError",
    "ConvergenceError",
    "SvmBinaryModel",
    "SvmModel",
    "CvGrid",
    "CvResult",
    "smo",
    "dual_objective",
    "train_binary",
    "train_ovo",
    "predict",
    "decision_values",
    "stratified_folds",
    "cross_validate",
    "sample_training_set",
    "write_model",
    "read_model",
]

TAU = 1e-12
DEFAULT_TOL = 1e-3
DEFAULT_MAX_ITER = 10**7


class SvmError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


@numba.njit(cache=True)
def _smo(K, y, C, tol, max_iter):
    n = y.shape[0]
    alpha = np.zeros(n)
    grad = -np.ones(n)
    it = 0
    while True:
        gmax = -np.inf
        gmin = np.inf
        i = -1
        j = -1
        for t in range(n):
            v = -y[t] * grad[t]
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                if v > gmax:
                    gmax = v
                    i = t
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                if v < gmin:
                    gmin = v
                    j = t
        if i < 0 or j < 0 or gmax - gmin < tol:
            return alpha, grad, it, True
        if it >= max_iter:
            return alpha, grad, it, False
        it += 1
        old_i, old_j = alpha[i], alpha[j]
        qij = y[i] * y[j] * K[i, j]
        if y[i] != y[j]:
            quad = K[i, i] + K[j, j] + 2.0 * qij
            if quad <= 0:
                quad = TAU
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            quad = K[i, i] + K[j, j] - 2.0 * qij
            if quad <= 0:
                quad = TAU
            delta = (grad[i] - grad[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total
        di = alpha[i] - old_i
        dj = alpha[j] - old_j
        for t in range(n):
            grad[t] += y[t] * (y[i] * K[t, i] * di + y[j] * K[t, j] * dj)


def smo(K: np.ndarray, y: np.ndarray, C: float, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER):
    """Run the solver; returns ``(alpha, gradient, iterations, converged)``."""
    K = np.ascontiguousarray(K, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    return _smo(K, y, float(C), float(tol), int(max_iter))


def dual_objective(K: np.ndarray, y: np.ndarray, alpha: np.ndarray) -> float:
    """Dual objective to maximize: ``sum(a) - 1/2 a^T Q a``."""
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


def _bias(y, alpha, grad, C) -> float:
    yg = y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = yg[free].mean()
    else:
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        ub = yg[up].min() if up.any() else np.inf
        lb = yg[low].max() if low.any() else -np.inf
        # with every multiplier at a bound one of the two sets may be empty
        if not np.isfinite(ub):
            ub = lb
        if not np.isfinite(lb):
            lb = ub
        rho = 0.5 * (ub + lb)
    return float(-rho)


@dataclass(frozen=True)
class SvmBinaryModel:
    support_indices: np.ndarray
    dual_coefs: np.ndarray
    bias: float
    class_pair: tuple[int, int]
    box_c: float

    def decision(self, kernel_rows: np.ndarray) -> np.ndarray:
        """``kernel_rows`` is ``(n_query, n_train)``; only support columns are read."""
        return kernel_rows[:, self.support_indices] @ self.dual_coefs + self.bias


def train_binary(
    K: np.ndarray,
    y: np.ndarray,
    box_c: float,
    tol: float = DEFAULT_TOL,
    class_pair: tuple[int, int] = (1, -1),
    max_iter: int = DEFAULT_MAX_ITER,
) -> SvmBinaryModel:
    """Train a binary C-SVC on a precomputed kernel with labels in {+1, -1}."""
    y = np.asarray(y, dtype=np.float64)
    if K.shape != (len(y), len(y)):
        raise SvmError(f"kernel shape {K.shape} does not match {len(y)} labels")
    if not np.all(np.abs(y) == 1):
        raise SvmError("labels must be +1 or -1")
    if np.all(y == y[0]):
        raise SvmError("training labels contain a single class")
    if not box_c > 0:
        raise SvmError(f"C must be positive, got {box_c}")
    alpha, grad, it, ok = smo(K, y, box_c, tol, max_iter)
    if not ok:
        raise ConvergenceError(f"SMO did not converge within {max_iter} pair updates")
    sv = np.flatnonzero(alpha > 0)
    return SvmBinaryModel(sv, alpha[sv] * y[sv], _bias(y, alpha, grad, box_c), tuple(class_pair), float(box_c))


@dataclass(frozen=True)
class SvmModel:
    binary_models: tuple[SvmBinaryModel, ...]
    classes: tuple[int, ...]
    kernel_descriptor: tuple  # (kind, gamma, rho or None)
    training_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        k = len(self.classes)
        if len(self.binary_models) != k * (k - 1) // 2:
            raise SvmError(f"{len(self.binary_models)} binary models for {k} classes")


def train_ovo(
    K: np.ndarray,
    labels: Sequence[int],
    box_c: float,
    kernel_descriptor: tuple = ("precomputed", None, None),
    training_ids=None,
    tol: float = DEFAULT_TOL,
) -> SvmModel:
    """One binary model per unordered class pair; the smaller class id is the +1 side."""
    labels = np.asarray(labels)
    classes = tuple(int(c) for c in np.unique(labels))
    if len(classes) < 2:
        raise SvmError("need at least two classes")
    models = []
    for a, b in itertools.combinations(classes, 2):
        idx = np.flatnonzero((labels == a) | (labels == b))
        y = np.where(labels[idx] == a, 1.0, -1.0)
        m = train_binary(K[np.ix_(idx, idx)], y, box_c, tol, (a, b))
        models.append(SvmBinaryModel(idx[m.support_indices], m.dual_coefs, m.bias, (a, b), m.box_c))
    ids = np.arange(len(labels)) if training_ids is None else np.asarray(training_ids, dtype=np.int64)
    return SvmModel(tuple(models), classes, tuple(kernel_descriptor), ids)


def decision_values(model: SvmModel, kernel_rows: np.ndarray) -> np.ndarray:
    return np.stack([m.decision(kernel_rows) for m in model.binary_models], axis=1)


def predict(model: SvmModel, kernel_rows: np.ndarray, kernel_descriptor: tuple | None = None) -> np.ndarray:
    """Majority vote of the binary models; ties go to the smallest class id."""
    if kernel_descriptor is not None and tuple(kernel_descriptor) != tuple(model.kernel_descriptor):
        raise SvmError(f"kernel descriptor {kernel_descriptor} does not match model {model.kernel_descriptor}")
    kernel_rows = np.atleast_2d(kernel_rows)
    pos = {c: i for i, c in enumerate(model.classes)}
    votes = np.zeros((kernel_rows.shape[0], len(model.classes)), dtype=np.int64)
    rows = np.arange(kernel_rows.shape[0])
    for m in model.binary_models:
        win_a = m.decision(kernel_rows) > 0
        votes[rows, np.where(win_a, pos[m.class_pair[0]], pos[m.class_pair[1]])] += 1
    return np.asarray(model.classes)[np.argmax(votes, axis=1)]


# ---------------------------------------------------------------------------
# model selection


@dataclass(frozen=True)
class CvGrid:
    gammas: tuple[float, ...] = tuple(2.0**k for k in range(-4, 5))
    cs: tuple[float, ...] = tuple(2.0**k for k in range(-2, 7))
    rhos: tuple[float, ...] = tuple(round(0.1 * k, 1) for k in range(11))
    folds: int = 5

    def __post_init__(self):
        if not (self.gammas and self.cs and self.rhos):
            raise SvmError("grid lists must be non-empty")
        if self.folds < 2:
            raise SvmError("folds must be >= 2")
        if any(not 0 <= r <= 1 for r in self.rhos):
            raise SvmError("rho values must lie in [0, 1]")


@dataclass(frozen=True)
class CvResult:
    gamma: float
    c: float
    rho: float | None
    accuracy: float
    table: tuple[tuple[float, float, float | None, float], ...]  # (gamma, C, rho, mean accuracy)


def stratified_folds(labels: Sequence[int], folds: int, seed: int) -> np.ndarray:
    """Fold index of every sample; each class is spread round-robin over a seeded shuffle."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    out = np.empty(len(labels), dtype=np.int64)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) < folds:
            raise SvmError(f"class {int(c)} has {len(idx)} members, fewer than {folds} folds")
        out[rng.permutation(idx)] = np.arange(len(idx)) % folds
    return out


def _rank_key(row):
    gamma, c, rho, acc = row
    return (-acc, c, -gamma, abs(rho - 0.5) if rho is not None else 0.0, rho if rho is not None else 0.0)


def cross_validate(
    grams: Mapping[float, np.ndarray | tuple[np.ndarray, np.ndarray]],
    labels: Sequence[int],
    grid: CvGrid,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
) -> CvResult:
    """Grid search by stratified k-fold accuracy.

    ``grams`` maps each gamma to a normalized training Gram matrix, or to a
    ``(sequence, tree)`` pair of them, in which case every rho of the grid is
    evaluated on the convex combination. Ties prefer smaller C, then larger
    gamma, then rho closest to 0.5 (then smaller rho).
    """
    labels = np.asarray(labels)
    fold = stratified_folds(labels, grid.folds, seed)
    table = []
    for gamma in grid.gammas:
        entry = grams[gamma]
        combos = [(rho, grid_combine(entry, rho)) for rho in grid.rhos] if isinstance(entry, tuple) else [(None, entry)]
        for rho, K in combos:
            for c in grid.cs:
                accs = []
                for f in range(grid.folds):
                    tr, va = np.flatnonzero(fold != f), np.flatnonzero(fold == f)
                    model = train_ovo(K[np.ix_(tr, tr)], labels[tr], c, tol=tol)
                    pred = predict(model, K[np.ix_(va, tr)])
                    accs.append(float(np.mean(pred == labels[va])))
                table.append((float(gamma), float(c), rho, math.fsum(accs) / len(accs)))
    # accuracies within rounding of the best are ties
    best_acc = max(r[3] for r in table)
    tied = [(g, c, r, best_acc if abs(a - best_acc) <= 1e-12 else a) for g, c, r, a in table]
    g, c, r, _ = min(tied, key=_rank_key)
    acc = next(a for gg, cc, rr, a in table if (gg, cc, rr) == (g, c, r))
    return CvResult(g, c, r, acc, tuple(table))


def grid_combine(entry: tuple[np.ndarray, np.ndarray], rho: float) -> np.ndarray:
    k_seq, k_tree = entry
    return rho * k_seq + (1.0 - rho) * k_tree


def sample_training_set(labels: LabelMap | np.ndarray, per_class: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded stratified split of labeled pixels (flat indices) into train and test."""
    lab = labels.labels if isinstance(labels, LabelMap) else np.asarray(labels)
    flat = lab.reshape(-1)
    rng = np.random.default_rng(seed)
    train = []
    for c in np.unique(flat[flat > 0]):
        idx = np.flatnonzero(flat == c)
        if len(idx) < per_class:
            raise SvmError(f"class {int(c)} has {len(idx)} labeled pixels, fewer than {per_class}")
        train.append(rng.choice(idx, size=per_class, replace=False))
    train = np.sort(np.concatenate(train)) if train else np.zeros(0, dtype=np.int64)
    test = np.setdiff1d(np.flatnonzero(flat > 0), train)
    return train.astype(np.int64), test.astype(np.int64)


# ---------------------------------------------------------------------------
# model file


def write_model(model: SvmModel, path: str | os.PathLike) -> None:
    """Text header followed by one binary block per class pair.

    Header lines: ``SVMMODEL <k> <num_blocks>``, ``classes ...``,
    ``kernel <kind> <gamma> <rho|none>``, ``C <value>``. Each block is a line
    ``PAIR <a> <b> <nsv>`` then nsv int64 support ids (training instance ids),
    nsv float64 dual coefficients and one float64 bias, all little-endian.
    """
    kind, gamma, rho = model.kernel_descriptor
    c = model.binary_models[0].box_c
    with open(path, "wb") as fh:
        fh.write(f"SVMMODEL {len(model.classes)} {len(model.binary_models)}\n".encode())
        fh.write(("classes " + " ".join(str(c_) for c_ in model.classes) + "\n").encode())
        fh.write(f"kernel {kind} {gamma!r} {'none' if rho is None else repr(rho)}\n".encode())
        fh.write(f"C {c!r}\n".encode())
        for m in model.binary_models:
            a, b = m.class_pair
            fh.write(f"PAIR {a} {b} {len(m.support_indices)}\n".encode())
            fh.write(np.asarray(model.training_ids[m.support_indices], dtype="<i8").tobytes())
            fh.write(np.asarray(m.dual_coefs, dtype="<f8").tobytes())
            fh.write(struct.pack("<d", m.bias))


def read_model(path: str | os.PathLike, training_ids: Sequence[int]) -> SvmModel:
    """Read a model; support ids are mapped back to positions in ``training_ids``."""
    with open(path, "rb") as fh:
        buf = fh.read()
    pos = 0

    def line():
        nonlocal pos
        nl = buf.index(b"\n", pos)
        out = buf[pos:nl].decode("ascii").split()
        pos = nl + 1
        return out

    head = line()
    if head[0] != "SVMMODEL":
        raise SvmError("not a model file")
    nblocks = int(head[2])
    classes = tuple(int(v) for v in line()[1:])
    _, kind, gamma, rho = line()
    c = float(line()[1])
    ids = np.asarray(training_ids, dtype=np.int64)
    where = {int(v): i for i, v in enumerate(ids)}
    models = []
    for _ in range(nblocks):
        _, a, b, nsv = line()
        nsv = int(nsv)
        sv_ids = np.frombuffer(buf, "<i8", nsv, pos)
        pos += 8 * nsv
        coefs = np.frombuffer(buf, "<f8", nsv, pos).copy()
        pos += 8 * nsv
        (bias,) = struct.unpack_from("<d", buf, pos)
        pos += 8
        try:
            sv = np.array([where[int(v)] for v in sv_ids], dtype=np.int64)
        except KeyError as exc:
            raise SvmError(f"support id {exc.args[0]} not among training ids") from None
        models.append(SvmBinaryModel(sv, coefs, bias, (int(a), int(b)), c))
    desc = (kind, float(gamma), None if rho == "none" else float(rho))
    return SvmModel(tuple(models), classes, desc, ids)
