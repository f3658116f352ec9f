"""Accuracy metrics, repetition statistics and the paired Wilcoxon signed-rank test."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np

__all__ = [
    "EvalError",
    "ConfusionMatrix",
    "Metrics",
    "confusion_matrix",
    "metrics",
    "repetition_stats",
    "signed_rank_null",
    "WilcoxonResult",
    "wilcoxon_compare",
    "format_table",
    "write_table_csv",
]

EXACT_MAX_N = 12


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are reference classes, columns predictions, both in ``classes`` order."""

    counts: np.ndarray
    classes: tuple[int, ...]

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] != len(self.classes):
            raise EvalError(f"confusion counts of shape {c.shape} for {len(self.classes)} classes")
        if (c < 0).any():
            raise EvalError("negative count in confusion matrix")

    @property
    def k(self) -> int:
        return len(self.classes)

    @property
    def total(self) -> int:
        return int(np.asarray(self.counts).sum())


def confusion_matrix(reference: Sequence[int], predicted: Sequence[int], classes: Sequence[int]) -> ConfusionMatrix:
    classes = tuple(int(c) for c in classes)
    pos = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for r, p in zip(np.asarray(reference), np.asarray(predicted)):
        counts[pos[int(r)], pos[int(p)]] += 1
    return ConfusionMatrix(counts, classes)


class Metrics(NamedTuple):
    per_class: np.ndarray
    oa: float
    aa: float
    kappa: float


def metrics(cm: ConfusionMatrix | np.ndarray) -> Metrics:
    """Per-class accuracy, overall accuracy, average accuracy and Cohen's kappa.

    Kappa is evaluated in integer arithmetic,
    ``(N * trace - sum(r_c * c_c)) / (N^2 - sum(r_c * c_c))``.
    """
    counts = np.asarray(cm.counts if isinstance(cm, ConfusionMatrix) else cm, dtype=np.int64)
    total = int(counts.sum())
    if total <= 0:
        raise EvalError("confusion matrix is empty")
    rows = counts.sum(axis=1)
    cols = counts.sum(axis=0)
    diag = np.diag(counts)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(rows > 0, diag / np.where(rows > 0, rows, 1), np.nan)
    empty = np.flatnonzero(rows == 0)
    if len(empty):
        warnings.warn(f"reference classes at positions {empty.tolist()} are empty; excluded from AA", stacklevel=2)
    trace = int(diag.sum())
    chance = int(sum(int(r) * int(c) for r, c in zip(rows, cols)))
    oa = trace / total
    aa = float(np.nanmean(per_class))
    denom = total * total - chance
    kappa = 1.0 if denom == 0 else (total * trace - chance) / denom
    return Metrics(per_class, oa, aa, kappa)


def repetition_stats(values: Sequence[float] | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and sample standard deviation over runs (axis 0)."""
    v = np.asarray(values, dtype=np.float64)
    if v.shape[0] < 2:
        raise EvalError("standard deviation needs at least two runs")
    return v.mean(axis=0), v.std(axis=0, ddof=1)


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank


def _ranks(x: np.ndarray) -> np.ndarray:
    """Average ranks (1-based) of ``x``."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1
        i = j + 1
    return ranks


def signed_rank_null(ranks: Sequence[float]) -> dict[int, float]:
    """Exact null distribution of twice the positive rank sum.

    Each rank carries a + or - sign with probability 1/2 independently.
    Doubled ranks are integers even with midranks, so the support is exact.
    """
    r2 = [int(round(2 * r)) for r in ranks]
    dist = {0: 1}
    for r in r2:
        nxt: dict[int, int] = {}
        for s, cnt in dist.items():
            nxt[s] = nxt.get(s, 0) + cnt
            nxt[s + r] = nxt.get(s + r, 0) + cnt
        dist = nxt
    scale = 2.0 ** len(r2)
    return {s: cnt / scale for s, cnt in sorted(dist.items())}


class WilcoxonResult(NamedTuple):
    significant: bool
    p_value: float
    statistic: float  # W+ - W-, flips sign when the inputs are swapped


def wilcoxon_compare(
    runs_a: Sequence[float],
    runs_b: Sequence[float],
    alpha: float = 0.05,
    alternative: str = "two-sided",
    min_runs: int = 5,
) -> WilcoxonResult:
    """Paired signed-rank test on ``a - b``; zero differences are dropped.

    Exact null distribution for at most 12 non-zero differences, otherwise a
    normal approximation with tie and continuity corrections.
    ``alternative='greater'`` tests whether ``a`` tends to exceed ``b``.
    """
    a = np.asarray(runs_a, dtype=np.float64)
    b = np.asarray(runs_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise EvalError("paired runs must be 1-D and of equal length")
    if len(a) < min_runs:
        raise EvalError(f"need at least {min_runs} paired runs, got {len(a)}")
    if alternative not in ("two-sided", "greater", "less"):
        raise EvalError(f"unknown alternative {alternative!r}")
    d = a - b
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return WilcoxonResult(False, 1.0, 0.0)
    ranks = _ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    if n <= EXACT_MAX_N:
        null = signed_rank_null(ranks)
        w2 = int(round(2 * w_plus))
        upper = sum(p for s, p in null.items() if s >= w2)
        lower = sum(p for s, p in null.items() if s <= w2)
    else:
        mean = n * (n + 1) / 4.0
        _, tie_counts = np.unique(np.abs(d), return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_counts**3 - tie_counts)) / 48.0
        sd = math.sqrt(var)
        upper = 0.5 * math.erfc((w_plus - mean - 0.5) / sd / math.sqrt(2))
        lower = 0.5 * math.erfc((mean - w_plus - 0.5) / sd / math.sqrt(2))
    if alternative == "greater":
        p = upper
    elif alternative == "less":
        p = lower
    else:
        p = 2.0 * min(upper, lower)
    p = min(1.0, p)
    return WilcoxonResult(p <= alpha, p, w_plus - w_minus)


# ---------------------------------------------------------------------------
# reports


def format_table(
    class_names: Sequence[str],
    columns: Mapping[str, Sequence[Metrics]],
    significant: Mapping[str, set] | None = None,
) -> str:
    """Plain-text table: per-class accuracy rows and OA/AA/Kappa footer, std in parentheses.

    ``significant[column]`` names the rows (class names, ``"OA"``, ``"AA"``,
    ``"Kappa"``) to mark with ``_`` as significantly different from the
    column's baseline.
    """
    significant = significant or {}
    names = list(columns)
    cells: dict[str, list[str]] = {}
    for col, runs in columns.items():
        per = np.stack([m.per_class for m in runs]) * 100
        summary = np.array([[m.oa * 100, m.aa * 100, m.kappa] for m in runs])
        if len(runs) >= 2:
            pm, ps = repetition_stats(per)
            sm, ss = repetition_stats(summary)
        else:
            pm, ps = per[0], np.zeros(per.shape[1])
            sm, ss = summary[0], np.zeros(3)
        marks = significant.get(col, set())
        out = []
        for name, m, s in zip(class_names, pm, ps):
            v = f"{m:.2f}"
            out.append(f"{'_' + v + '_' if name in marks else v} ({s:.1f})")
        for label, m, s, fmt in zip(("OA", "AA", "Kappa"), sm, ss, ("{:.2f} ({:.1f})", "{:.2f} ({:.1f})", "{:.3f} ({:.3f})")):
            text = fmt.format(m, s)
            if label in marks:
                head, tail = text.split(" ", 1)
                text = f"_{head}_ {tail}"
            out.append(text)
        cells[col] = out
    row_names = list(class_names) + ["OA", "AA", "Kappa"]
    w0 = max(len(r) for r in row_names + ["Class"])
    widths = [max(len(n), *(len(c) for c in cells[n])) for n in names]
    sep = "-" * (w0 + sum(w + 3 for w in widths))
    lines = [" | ".join(["Class".ljust(w0)] + [n.rjust(w) for n, w in zip(names, widths)]), sep]
    for i, r in enumerate(row_names):
        if i == len(class_names):
            lines.append(sep)
        lines.append(" | ".join([r.ljust(w0)] + [cells[n][i].rjust(w) for n, w in zip(names, widths)]))
    return "\n".join(lines) + "\n"


def write_table_csv(path, class_names: Sequence[str], columns: Mapping[str, Sequence[Metrics]]) -> None:
    """Machine-readable twin of :func:`format_table`: one row per (column, metric)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "metric", "mean", "std", *(f"run{i}" for i in range(max(len(r) for r in columns.values())))])
        for col, runs in columns.items():
            series = [(name, [m.per_class[i] for m in runs]) for i, name in enumerate(class_names)]
            series += [("OA", [m.oa for m in runs]), ("AA", [m.aa for m in runs]), ("Kappa", [m.kappa for m in runs])]
            for name, vals in series:
                v = np.asarray(vals, dtype=np.float64)
                std = float(v.std(ddof=1)) if len(v) >= 2 else 0.0
                w.writerow([col, name, repr(float(v.mean())), repr(std), *(repr(float(x)) for x in v)])
