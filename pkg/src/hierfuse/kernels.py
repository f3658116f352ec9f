"""Subpath kernels on sequences and trees.

Both kernels sum, over every pair of equal-length subpaths, the product of
Gaussian atomic kernels between aligned nodes. They share one quadratic
dynamic program: with 1-based pre-order positions and ``parent(root) = 0``,

    M[i, j] = k(n_i, n'_j) * (1 + M[parent(i), parent(j)]),   M[0, .] = M[., 0] = 0

and the kernel is ``sum(M)``. A sequence is the special case ``parent(i) = i - 1``.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from .hierarchy import SequenceInstance, TreeInstance, check_parent_table

__all__ = [
    "KernelError",
    "GramMatrix",
    "atomic_kernel",
    "sequence_kernel",
    "tree_kernel",
    "subpaths",
    "brute_force_kernel",
    "normalize",
    "composite_kernel",
    "PackedInstances",
    "raw_gram",
    "raw_cross",
    "build_gram",
    "cross_gram",
    "write_gram",
    "read_gram",
]

KINDS = ("gaussian", "sequence", "tree", "composite")


class KernelError(ValueError):
    pass


def _check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not (math.isfinite(gamma) and gamma > 0):
        raise KernelError(f"gamma must be finite and positive, got {gamma}")
    return gamma


def _check_rho(rho: float) -> float:
    rho = float(rho)
    if not 0.0 <= rho <= 1.0:
        raise KernelError(f"rho must lie in [0, 1], got {rho}")
    return rho


def atomic_kernel(x, x2, gamma: float) -> float:
    """Gaussian kernel ``exp(-gamma * ||x - x2||^2)``."""
    x, x2 = np.asarray(x, dtype=np.float64), np.asarray(x2, dtype=np.float64)
    if x.shape != x2.shape:
        raise KernelError(f"dimension mismatch: {x.shape} vs {x2.shape}")
    d = x - x2
    return math.exp(-_check_gamma(gamma) * float(d @ d))


# ---------------------------------------------------------------------------
# dynamic program


@numba.njit(cache=True)
def _dp(xa, pa, xb, pb, gamma, buf):
    na, nb = xa.shape[0], xb.shape[0]
    dim = xa.shape[1]
    w = nb + 1
    # buf is reused across pairs of different sizes: clear the zero border
    for j in range(w):
        buf[j] = 0.0
    for i in range(1, na + 1):
        buf[i * w] = 0.0
    total = 0.0
    for i in range(na):
        for j in range(nb):
            d2 = 0.0
            for d in range(dim):
                t = xa[i, d] - xb[j, d]
                d2 += t * t
            m = math.exp(-gamma * d2) * (1.0 + buf[pa[i] * w + pb[j]])
            buf[(i + 1) * w + j + 1] = m
            total += m
    return total


@numba.njit(cache=True)
def _dp_single(xa, pa, xb, pb, gamma):
    buf = np.zeros((xa.shape[0] + 1) * (xb.shape[0] + 1))
    return _dp(xa, pa, xb, pb, gamma, buf)


@numba.njit(cache=True, parallel=True)
def _gram_sym(x, p, off, gamma, maxn):
    n = off.shape[0] - 1
    out = np.zeros((n, n))
    for i in numba.prange(n):
        buf = np.zeros((maxn + 1) * (maxn + 1))
        xa, pa = x[off[i]:off[i + 1]], p[off[i]:off[i + 1]]
        for j in range(i, n):
            out[i, j] = _dp(xa, pa, x[off[j]:off[j + 1]], p[off[j]:off[j + 1]], gamma, buf)
    for i in range(n):
        for j in range(i):
            out[i, j] = out[j, i]
    return out


@numba.njit(cache=True, parallel=True)
def _gram_cross(xa, pa, oa, xb, pb, ob, gamma, maxn):
    n, m = oa.shape[0] - 1, ob.shape[0] - 1
    out = np.zeros((n, m))
    for i in numba.prange(n):
        buf = np.zeros((maxn + 1) * (maxn + 1))
        ya, qa = xa[oa[i]:oa[i + 1]], pa[oa[i]:oa[i + 1]]
        for j in range(m):
            out[i, j] = _dp(ya, qa, xb[ob[j]:ob[j + 1]], pb[ob[j]:ob[j + 1]], gamma, buf)
    return out


@numba.njit(cache=True, parallel=True)
def _self_values(x, p, off, gamma, maxn):
    n = off.shape[0] - 1
    out = np.zeros(n)
    for i in numba.prange(n):
        buf = np.zeros((maxn + 1) * (maxn + 1))
        xa, pa = x[off[i]:off[i + 1]], p[off[i]:off[i + 1]]
        out[i] = _dp(xa, pa, xa, pa, gamma, buf)
    return out


def _as_arrays(g) -> tuple[np.ndarray, np.ndarray]:
    x = np.ascontiguousarray(g.features, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise KernelError("structure must have at least one node")
    return x, np.ascontiguousarray(g.parents, dtype=np.int64)


def sequence_kernel(s: SequenceInstance, s2: SequenceInstance, gamma: float) -> float:
    """Unnormalized subpath kernel between two sequences, ``O(|s| |s2|)``."""
    xa, pa = _as_arrays(s)
    xb, pb = _as_arrays(s2)
    if xa.shape[1] != xb.shape[1]:
        raise KernelError("feature dimension mismatch")
    return float(_dp_single(xa, pa, xb, pb, _check_gamma(gamma)))


def tree_kernel(t: TreeInstance, t2: TreeInstance, gamma: float) -> float:
    """Unnormalized subpath kernel between two pre-order serialized trees."""
    xa, pa = _as_arrays(t)
    xb, pb = _as_arrays(t2)
    check_parent_table(pa)
    check_parent_table(pb)
    if xa.shape[1] != xb.shape[1]:
        raise KernelError("feature dimension mismatch")
    return float(_dp_single(xa, pa, xb, pb, _check_gamma(gamma)))


# ---------------------------------------------------------------------------
# brute-force reference


def subpaths(g) -> list[tuple[int, ...]]:
    """All top-down chains of 0-based node positions (contiguous runs for sequences)."""
    if isinstance(g, TreeInstance):
        parents = [int(p) - 1 for p in g.parents]
    else:
        parents = list(range(-1, len(g) - 1))
    out = []
    for v in range(len(parents)):
        chain = [v]
        out.append((v,))
        while parents[chain[-1]] >= 0:
            chain.append(parents[chain[-1]])
            out.append(tuple(reversed(chain)))
    return out


def brute_force_kernel(g, g2, gamma: float, cap: int = 14) -> float:
    """Explicit sum over equal-length subpath pairs of products of atomic kernels."""
    if type(g) is not type(g2):
        raise KernelError("both structures must be of the same kind")
    if max(len(g), len(g2)) > cap:
        raise KernelError(f"structure size exceeds the oracle cap of {cap} nodes")
    gamma = _check_gamma(gamma)
    xa, xb = np.asarray(g.features), np.asarray(g2.features)
    atom = [[math.exp(-gamma * float(sum((u - v) ** 2 for u, v in zip(a, b)))) for b in xb] for a in xa]
    by_len: dict[int, list] = {}
    for s in subpaths(g2):
        by_len.setdefault(len(s), []).append(s)
    total = 0.0
    for s in subpaths(g):
        for s2 in by_len.get(len(s), ()):
            total += math.prod(atom[a][b] for a, b in zip(s, s2))
    return total


# ---------------------------------------------------------------------------
# normalization and combination


def normalize(raw: float, self_a: float, self_b: float) -> float:
    if self_a <= 0 or self_b <= 0:
        raise KernelError(f"self-kernel values must be positive, got {self_a} and {self_b}")
    return raw / math.sqrt(self_a * self_b)


def composite_kernel(k_seq, k_tree, rho: float):
    """Convex combination ``rho * k_seq + (1 - rho) * k_tree`` (scalars or arrays)."""
    rho = _check_rho(rho)
    return rho * k_seq + (1.0 - rho) * k_tree


@dataclass(frozen=True)
class PackedInstances:
    """Flat node table of many structures, as consumed by the batch kernels."""

    features: np.ndarray
    parents: np.ndarray
    offsets: np.ndarray

    @classmethod
    def pack(cls, instances: Sequence) -> "PackedInstances":
        if not instances:
            raise KernelError("empty instance list")
        feats, pars, sizes = [], [], []
        for g in instances:
            x, p = _as_arrays(g)
            feats.append(x)
            pars.append(p)
            sizes.append(len(x))
        offsets = np.zeros(len(sizes) + 1, dtype=np.int64)
        np.cumsum(sizes, out=offsets[1:])
        return cls(np.concatenate(feats), np.concatenate(pars), offsets)

    def __len__(self) -> int:
        return len(self.offsets) - 1

    @property
    def max_size(self) -> int:
        return int(np.diff(self.offsets).max())

    def map(self, fn) -> "PackedInstances":
        """Apply a row-wise transform (e.g. standardization) to every node."""
        return PackedInstances(np.ascontiguousarray(fn(self.features)), self.parents, self.offsets)

    def first_nodes(self) -> "PackedInstances":
        """Single-node structures made of each instance's first node."""
        return PackedInstances(
            np.ascontiguousarray(self.features[self.offsets[:-1]]),
            np.zeros(len(self), dtype=np.int64),
            np.arange(len(self) + 1, dtype=np.int64),
        )

    def take(self, idx) -> "PackedInstances":
        idx = np.asarray(idx, dtype=np.int64)
        rows = np.concatenate([np.arange(self.offsets[i], self.offsets[i + 1]) for i in idx])
        sizes = np.diff(self.offsets)[idx]
        offsets = np.zeros(len(idx) + 1, dtype=np.int64)
        np.cumsum(sizes, out=offsets[1:])
        return PackedInstances(self.features[rows], self.parents[rows], offsets)


def raw_gram(packed: PackedInstances, gamma: float) -> np.ndarray:
    """Symmetric matrix of unnormalized kernels; each unordered pair is computed once."""
    m = packed.max_size
    return _gram_sym(packed.features, packed.parents, packed.offsets, _check_gamma(gamma), m)


def raw_cross(a: PackedInstances, b: PackedInstances, gamma: float) -> np.ndarray:
    m = max(a.max_size, b.max_size)
    return _gram_cross(a.features, a.parents, a.offsets, b.features, b.parents, b.offsets, _check_gamma(gamma), m)


def raw_self(packed: PackedInstances, gamma: float) -> np.ndarray:
    return _self_values(packed.features, packed.parents, packed.offsets, _check_gamma(gamma), packed.max_size)


def _normalize_matrix(raw: np.ndarray, da: np.ndarray, db: np.ndarray) -> np.ndarray:
    if np.any(da <= 0) or np.any(db <= 0):
        raise KernelError("non-positive self-kernel value")
    # sqrt of the product keeps a symmetric matrix exactly symmetric
    return raw / np.sqrt(np.multiply.outer(da, db))


def _normalized_sym(packed: PackedInstances, gamma: float) -> np.ndarray:
    raw = raw_gram(packed, gamma)
    d = np.diag(raw).copy()
    k = _normalize_matrix(raw, d, d)
    np.fill_diagonal(k, 1.0)
    return np.minimum(k, 1.0)


@dataclass(frozen=True)
class GramMatrix:
    values: np.ndarray
    kind: str
    gamma: float
    rho: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise KernelError(f"unknown kernel kind {self.kind!r}")
        _check_gamma(self.gamma)
        if self.kind == "composite":
            _check_rho(self.rho)

    @property
    def n(self) -> int:
        return self.values.shape[0]


def _pack_parts(instances, kind):
    if kind in ("sequence", "composite"):
        seq = PackedInstances.pack([s for s, _ in instances])
    if kind in ("tree", "composite"):
        tree = PackedInstances.pack([t for _, t in instances])
    if kind == "sequence":
        return seq, None
    if kind == "tree":
        return None, tree
    if kind == "composite":
        return seq, tree
    # single-level Gaussian on the first node of the sequence
    return PackedInstances.pack([s for s, _ in instances]).first_nodes(), None


def build_gram(instances: Sequence[tuple], kind: str, gamma: float, rho: float | None = None) -> GramMatrix:
    """Normalized Gram matrix over ``(sequence, tree)`` instance pairs.

    ``kind='gaussian'`` evaluates the atomic kernel on each sequence's first
    (pixel-level) node.
    """
    if not instances:
        raise KernelError("empty instance list")
    if kind not in KINDS:
        raise KernelError(f"unknown kernel kind {kind!r}")
    seq, tree = _pack_parts(instances, kind)
    if kind == "composite":
        values = composite_kernel(_normalized_sym(seq, gamma), _normalized_sym(tree, gamma), rho)
        np.fill_diagonal(values, 1.0)
    else:
        values = _normalized_sym(seq if seq is not None else tree, gamma)
    return GramMatrix(values, kind, float(gamma), None if kind != "composite" else float(rho))


def normalized_cross(a: PackedInstances, b: PackedInstances, gamma: float) -> np.ndarray:
    """Normalized kernel rows between query structures ``a`` and training structures ``b``."""
    raw = raw_cross(a, b, gamma)
    return np.minimum(_normalize_matrix(raw, raw_self(a, gamma), raw_self(b, gamma)), 1.0)


def cross_gram(queries: Sequence[tuple], train: Sequence[tuple], kind: str, gamma: float, rho: float | None = None) -> np.ndarray:
    qs, qt = _pack_parts(queries, kind)
    ts, tt = _pack_parts(train, kind)
    if kind == "composite":
        return composite_kernel(normalized_cross(qs, ts, gamma), normalized_cross(qt, tt, gamma), rho)
    if qs is not None:
        return normalized_cross(qs, ts, gamma)
    return normalized_cross(qt, tt, gamma)


# ---------------------------------------------------------------------------
# Gram file


def write_gram(gram: GramMatrix, path: str | os.PathLike) -> None:
    """ASCII header ``GRAM <n> <kind> <gamma> [rho]`` then row-major float64 little-endian values."""
    header = f"GRAM {gram.n} {gram.kind} {gram.gamma!r}"
    if gram.kind == "composite":
        header += f" {gram.rho!r}"
    with open(path, "wb") as fh:
        fh.write((header + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(gram.values, dtype="<f8").tobytes())


def read_gram(path: str | os.PathLike) -> GramMatrix:
    with open(path, "rb") as fh:
        buf = fh.read()
    nl = buf.find(b"\n")
    parts = buf[:nl].decode("ascii", "replace").split()
    if len(parts) not in (4, 5) or parts[0] != "GRAM":
        raise KernelError(f"malformed Gram header {buf[:nl]!r}")
    n = int(parts[1])
    values = np.frombuffer(buf[nl + 1:], dtype="<f8")
    if values.size != n * n:
        raise KernelError(f"Gram payload holds {values.size} values, expected {n * n}")
    rho = float(parts[4]) if len(parts) == 5 else None
    return GramMatrix(values.reshape(n, n).copy(), parts[2], float(parts[3]), rho)
