"""Bottom-up region merging, threshold cuts, and per-instance structures.

A :class:`MergeTree` is a binary dendrogram over the pixels of a raster. Leaves
are pixels (ids ``0..n-1`` in row-major order); every merge creates a new node
whose id is the next integer, so parents always have larger ids than children.

Two structures are extracted from the hierarchies:

* an ascending :class:`SequenceInstance` (pixel, then the region containing it
  at each threshold of the coarse hierarchy), and
* a descending :class:`TreeInstance` (the patch, then its subregions at each
  decreasing threshold), serialized in pre-order with a 1-based parent table.
"""
from __future__ import annotations

import heapq
import math
import os
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .raster import Raster

__all__ = [
    "HierarchyError",
    "MergeTree",
    "LevelCut",
    "SequenceInstance",
    "TreeInstance",
    "build_merge_tree",
    "cut_levels",
    "level_region_counts",
    "extract_sequence",
    "extract_tree",
    "tree_from_parents",
    "dump_hierarchy",
    "write_instances",
    "read_instances",
]


class HierarchyError(ValueError):
    pass


@dataclass(frozen=True)
class MergeTree:
    """Binary merge tree over ``width * height`` pixels.

    ``merge_cost`` holds the node altitude: the dissimilarity of the merge that
    created the node, raised to the children's altitudes where centroid
    dissimilarity would otherwise decrease along a leaf-to-root path. The raw
    dissimilarity is kept in ``merge_dissimilarity``.
    """

    width: int
    height: int
    parent: np.ndarray  # (num_nodes,), -1 at the root
    children: np.ndarray  # (num_nodes, 2), -1 for leaves
    merge_cost: np.ndarray
    merge_dissimilarity: np.ndarray
    pixel_count: np.ndarray
    bbox: np.ndarray  # (num_nodes, 4): x0, y0, x1, y1 half-open
    leaf_order: np.ndarray  # pixels ordered so every node covers a contiguous range
    leaf_range: np.ndarray  # (num_nodes, 2)

    @property
    def num_leaves(self) -> int:
        return self.width * self.height

    @property
    def num_nodes(self) -> int:
        return len(self.parent)

    @property
    def root(self) -> int:
        return self.num_nodes - 1

    def members(self, node: int) -> np.ndarray:
        """Pixel indices covered by ``node``, sorted ascending."""
        a, b = self.leaf_range[node]
        return np.sort(self.leaf_order[a:b])

    def min_pixel(self, node: int) -> int:
        a, b = self.leaf_range[node]
        return int(self.leaf_order[a:b].min())


@dataclass(frozen=True)
class LevelCut:
    """Partitions of the pixel grid at ascending thresholds.

    ``labels[k, p]`` is the id of the merge-tree node that is the region of
    pixel ``p`` at ``thresholds[k]``.
    """

    thresholds: tuple[float, ...]
    labels: np.ndarray
    width: int
    height: int


@dataclass(frozen=True)
class SequenceInstance:
    features: np.ndarray  # (P, D), pixel level first
    region_ids: tuple[int, ...] = ()

    def __len__(self) -> int:
        return len(self.features)

    @property
    def parents(self) -> np.ndarray:
        return np.arange(len(self.features), dtype=np.int64)


@dataclass(frozen=True)
class TreeInstance:
    features: np.ndarray  # (n, D) in pre-order
    parents: np.ndarray  # 1-based parent positions, root has 0
    region_ids: tuple[int, ...] = ()

    def __post_init__(self):
        check_parent_table(self.parents)
        if len(self.parents) != len(self.features):
            raise HierarchyError("parent table and feature table differ in length")

    def __len__(self) -> int:
        return len(self.features)


def check_parent_table(parents: Sequence[int]) -> None:
    """Validate the pre-order property: root first with parent 0, then ``1 <= p[i] < i``."""
    parents = np.asarray(parents)
    if parents.ndim != 1 or len(parents) == 0:
        raise HierarchyError("parent table must be a non-empty 1-D array")
    if parents[0] != 0:
        raise HierarchyError("the first node must be the root with parent index 0")
    pos = np.arange(1, len(parents) + 1)
    bad = np.flatnonzero((parents[1:] < 1) | (parents[1:] >= pos[1:]))
    if len(bad):
        i = int(bad[0]) + 2
        raise HierarchyError(f"node {i} has parent index {int(parents[i - 1])}, violating pre-order")


# ---------------------------------------------------------------------------
# merge tree construction


def _grid_edges(width: int, height: int, connectivity: int) -> list[tuple[int, int]]:
    if connectivity == 4:
        offsets = [(1, 0), (0, 1)]
    elif connectivity == 8:
        offsets = [(1, 0), (0, 1), (1, 1), (-1, 1)]
    else:
        raise HierarchyError(f"connectivity must be 4 or 8, got {connectivity}")
    edges = []
    for y in range(height):
        for x in range(width):
            p = y * width + x
            for dx, dy in offsets:
                nx, ny = x + dx, y + dy
                if 0 <= nx < width and ny < height:
                    q = ny * width + nx
                    edges.append((min(p, q), max(p, q)))
    return edges


def build_merge_tree(
    raster: Raster, connectivity: int = 4, dissimilarity: str = "euclid_mean"
) -> MergeTree:
    """Greedy region merging until one region remains.

    At every step the adjacent pair with the smallest Euclidean distance
    between region mean spectra is merged; equal costs are resolved by the
    smallest ``(id_a, id_b)`` pair.
    """
    if dissimilarity != "euclid_mean":
        raise HierarchyError(f"unknown dissimilarity {dissimilarity!r}")
    width, height = raster.width, raster.height
    n = width * height
    pix = raster.pixels()
    total = 2 * n - 1

    sums = [None] * total
    counts = [0] * total
    means = [None] * total
    for p in range(n):
        sums[p] = pix[p].copy()
        counts[p] = 1
        means[p] = tuple(pix[p].tolist())
    neighbors: list[set | None] = [set() for _ in range(n)] + [None] * (n - 1)

    def dist(a, b):
        return math.sqrt(math.fsum((u - v) ** 2 for u, v in zip(means[a], means[b])))

    heap = []
    for a, b in _grid_edges(width, height, connectivity):
        neighbors[a].add(b)
        neighbors[b].add(a)
        heap.append((dist(a, b), a, b))
    heapq.heapify(heap)

    parent = np.full(total, -1, dtype=np.int64)
    children = np.full((total, 2), -1, dtype=np.int64)
    altitude = np.zeros(total)
    raw_cost = np.zeros(total)
    alive = [True] * n + [False] * (n - 1)

    nxt = n
    while nxt < total:
        if not heap:
            raise HierarchyError("pixel adjacency graph is disconnected")
        cost, a, b = heapq.heappop(heap)
        if not (alive[a] and alive[b]):
            continue
        k = nxt
        nxt += 1
        alive[a] = alive[b] = False
        alive[k] = True
        parent[a] = parent[b] = k
        children[k] = (a, b)
        raw_cost[k] = cost
        altitude[k] = max(cost, altitude[a], altitude[b])
        sums[k] = sums[a] + sums[b]
        counts[k] = counts[a] + counts[b]
        means[k] = tuple((sums[k] / counts[k]).tolist())
        nk = (neighbors[a] | neighbors[b]) - {a, b}
        neighbors[a] = neighbors[b] = None
        for c in nk:
            nc = neighbors[c]
            nc.discard(a)
            nc.discard(b)
            nc.add(k)
            heapq.heappush(heap, (dist(c, k), c, k))
        neighbors[k] = nk

    # leaf ordering so every node spans a contiguous range
    order = np.empty(n, dtype=np.int64)
    ranges = np.zeros((total, 2), dtype=np.int64)
    pos = 0
    stack = [(total - 1, False)]
    while stack:
        node, done = stack.pop()
        if node < n:
            order[pos] = node
            ranges[node] = (pos, pos + 1)
            pos += 1
        elif done:
            l, r = children[node]
            ranges[node] = (ranges[l, 0], ranges[r, 1])
        else:
            l, r = children[node]
            stack.append((node, True))
            stack.append((r, False))
            stack.append((l, False))

    pixel_count = np.array(counts, dtype=np.int64)
    bbox = np.zeros((total, 4), dtype=np.int64)
    ys, xs = np.divmod(np.arange(n), width)
    bbox[:n] = np.stack([xs, ys, xs + 1, ys + 1], axis=1)
    for k in range(n, total):
        l, r = children[k]
        bbox[k] = (min(bbox[l, 0], bbox[r, 0]), min(bbox[l, 1], bbox[r, 1]),
                   max(bbox[l, 2], bbox[r, 2]), max(bbox[l, 3], bbox[r, 3]))

    return MergeTree(width, height, parent, children, altitude, raw_cost, pixel_count, bbox, order, ranges)


def _labels_at(tree: MergeTree, alpha: float) -> np.ndarray:
    """Region id of every pixel after applying all merges with cost <= alpha."""
    rep = np.arange(tree.num_nodes, dtype=np.int64)
    parent, cost = tree.parent, tree.merge_cost
    for v in range(tree.num_nodes - 2, -1, -1):
        p = parent[v]
        if cost[p] <= alpha:
            rep[v] = rep[p]
    return rep[: tree.num_leaves]


def cut_levels(tree: MergeTree, thresholds: Iterable[float]) -> LevelCut:
    thresholds = tuple(float(t) for t in thresholds)
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise HierarchyError(f"thresholds must be strictly ascending, got {thresholds}")
    labels = np.stack([_labels_at(tree, t) for t in thresholds]) if thresholds else np.zeros((0, tree.num_leaves), np.int64)
    labels.setflags(write=False)
    return LevelCut(thresholds, labels, tree.width, tree.height)


def level_region_counts(cut: LevelCut) -> list[int]:
    return [len(np.unique(row)) for row in cut.labels]


def _feature_row(features, region: int) -> np.ndarray:
    try:
        row = features[region]
    except (KeyError, IndexError):
        raise HierarchyError(f"no feature row for region {region}") from None
    row = np.asarray(row, dtype=np.float64)
    if not np.all(np.isfinite(row)):
        raise HierarchyError(f"no feature row for region {region}")
    return row


def extract_sequence(cut: LevelCut, pixel: tuple[int, int], features) -> SequenceInstance:
    """Ascending chain for coarse pixel ``(x, y)``: the pixel, then its region at each threshold.

    ``features`` maps merge-tree node ids to feature vectors (a dict, or an
    array indexed by node id with NaN rows for absent regions).
    """
    x, y = pixel
    if not (0 <= x < cut.width and 0 <= y < cut.height):
        raise HierarchyError(f"pixel ({x}, {y}) outside {cut.width}x{cut.height} grid")
    p = y * cut.width + x
    ids = (p,) + tuple(int(r) for r in cut.labels[:, p])
    return SequenceInstance(np.stack([_feature_row(features, r) for r in ids]), ids)


def extract_tree(patch_tree: MergeTree, thresholds: Iterable[float], features) -> TreeInstance:
    """Descending tree over a patch: the whole patch, then subregions at decreasing thresholds.

    A region identical to its enclosing region at the previous level is not
    repeated. Children are ordered by their smallest pixel index.
    """
    thresholds = tuple(float(t) for t in thresholds)
    if any(b >= a for a, b in zip(thresholds, thresholds[1:])):
        raise HierarchyError(f"thresholds must be strictly descending, got {thresholds}")
    root = patch_tree.root
    node_of = {root: 0}
    region_ids = [root]
    parent_pos = [0]
    first_pixel = [0]
    prev = np.full(patch_tree.num_leaves, root, dtype=np.int64)
    for alpha in thresholds:
        labels = _labels_at(patch_tree, alpha)
        regions, first = np.unique(labels, return_index=True)
        for r, f in sorted(zip(regions.tolist(), first.tolist()), key=lambda t: t[1]):
            container = int(prev[f])
            if r == container:
                continue
            node_of[r] = len(region_ids)
            region_ids.append(r)
            parent_pos.append(node_of[container])
            first_pixel.append(f)
        prev = labels

    kids: list[list[int]] = [[] for _ in region_ids]
    for i in range(1, len(region_ids)):
        kids[parent_pos[i]].append(i)
    order = []
    stack = [0]
    while stack:
        v = stack.pop()
        order.append(v)
        stack.extend(sorted(kids[v], key=lambda c: first_pixel[c], reverse=True))
    new_pos = {v: i for i, v in enumerate(order)}
    parents = np.array([0] + [new_pos[parent_pos[v]] + 1 for v in order[1:]], dtype=np.int64)
    ids = tuple(region_ids[v] for v in order)
    feats = np.stack([_feature_row(features, r) for r in ids])
    return TreeInstance(feats, parents, ids)


def tree_from_parents(parents: Sequence[int]) -> list[list[int]]:
    """Child lists (0-based positions, in table order) from a 1-based parent table."""
    check_parent_table(parents)
    kids: list[list[int]] = [[] for _ in parents]
    for i, p in enumerate(parents[1:], start=1):
        kids[p - 1].append(i)
    return kids


def preorder_parents(kids: list[list[int]]) -> np.ndarray:
    """Serialize child lists rooted at position 0 back to a 1-based pre-order parent table."""
    order, parent_of = [], {0: -1}
    stack = [0]
    while stack:
        v = stack.pop()
        order.append(v)
        for c in reversed(kids[v]):
            parent_of[c] = v
            stack.append(c)
    pos = {v: i + 1 for i, v in enumerate(order)}
    return np.array([0] + [pos[parent_of[v]] for v in order[1:]], dtype=np.int64)


# ---------------------------------------------------------------------------
# serialization


def dump_hierarchy(tree: MergeTree) -> str:
    """One line per node: ``node_id parent_id merge_cost pixel_count``."""
    lines = [
        f"{v} {int(tree.parent[v])} {float(tree.merge_cost[v])!r} {int(tree.pixel_count[v])}"
        for v in range(tree.num_nodes)
    ]
    return "\n".join(lines) + "\n"


def write_instances(path: str | os.PathLike, instances: Sequence[SequenceInstance | TreeInstance]) -> None:
    """Binary archive: ASCII header ``INSTANCES <count> <kind> <D>`` then one block per instance.

    Each block is a little-endian uint32 length ``n``, for trees ``n`` int32
    parent indices, then ``n * D`` float64 features (row-major, node by node).
    """
    if not instances:
        raise HierarchyError("cannot archive an empty instance list")
    kind = "tree" if isinstance(instances[0], TreeInstance) else "sequence"
    dim = instances[0].features.shape[1]
    with open(path, "wb") as fh:
        fh.write(f"INSTANCES {len(instances)} {kind} {dim}\n".encode("ascii"))
        for inst in instances:
            if (kind == "tree") != isinstance(inst, TreeInstance):
                raise HierarchyError("mixed instance kinds in one archive")
            fh.write(struct.pack("<I", len(inst)))
            if kind == "tree":
                fh.write(np.asarray(inst.parents, dtype="<i4").tobytes())
            fh.write(np.asarray(inst.features, dtype="<f8").tobytes())


def read_instances(path: str | os.PathLike) -> list[SequenceInstance | TreeInstance]:
    with open(path, "rb") as fh:
        buf = fh.read()
    nl = buf.find(b"\n")
    parts = buf[:nl].split()
    if len(parts) != 4 or parts[0] != b"INSTANCES" or parts[2] not in (b"tree", b"sequence"):
        raise HierarchyError(f"malformed instance archive header {buf[:nl]!r}")
    count, dim = int(parts[1]), int(parts[3])
    is_tree = parts[2] == b"tree"
    pos = nl + 1
    out = []
    for _ in range(count):
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        if is_tree:
            parents = np.frombuffer(buf, dtype="<i4", count=n, offset=pos).astype(np.int64)
            pos += 4 * n
        feats = np.frombuffer(buf, dtype="<f8", count=n * dim, offset=pos).reshape(n, dim).copy()
        pos += 8 * n * dim
        out.append(TreeInstance(feats, parents) if is_tree else SequenceInstance(feats))
    if pos != len(buf):
        raise HierarchyError(f"instance archive has {len(buf) - pos} trailing bytes")
    return out
