"""Synthetic co-registered coarse/fine image pairs with ground truth.

Each class has a fine-scale motif (a spatial layout of one or two spectral
materials inside every fine patch) and a placement rule on the coarse grid:

``zone``
    rectangular blocks of the class itself;
``inset``
    rectangles (at least 4x4) strictly inside the blocks of a host class, so
    the class is only recognizable from its surroundings when another class
    shares its motif;
``tile``
    small alternating cells (at least 4x4) shared with a partner class inside
    common districts, so neither coarse context nor coarse spectra separate
    the pair when their coarse means coincide.

Coarse pixels are patch means plus independent Gaussian noise, clipped to
``[0, 1]``; fine pixels get the same noise level.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .raster import LabelMap, Raster, write_band_float, write_label_map

__all__ = [
    "MOTIFS",
    "SynthError",
    "ClassSpec",
    "SynthConfig",
    "default_config",
    "motif_layout",
    "generate",
    "write_dataset",
]

MOTIFS = ("homogeneous", "two-block", "checkered", "striped", "scattered-objects")
BAND_NAMES = ("green", "red", "nir", "mir")


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class ClassSpec:
    name: str
    motif: str
    motif_means: tuple[tuple[float, ...], ...]
    placement: str = "zone"
    partner: int = 0  # host class (inset) or tile partner (tile), 1-based

    def __post_init__(self):
        object.__setattr__(self, "motif_means", tuple(tuple(float(v) for v in m) for m in self.motif_means))
        if self.motif not in MOTIFS:
            raise SynthError(f"unknown motif {self.motif!r}")
        need = 1 if self.motif == "homogeneous" else 2
        if len(self.motif_means) != need:
            raise SynthError(f"motif {self.motif!r} needs {need} spectral means, got {len(self.motif_means)}")
        if self.placement not in ("zone", "inset", "tile"):
            raise SynthError(f"unknown placement {self.placement!r}")
        if self.placement != "zone" and self.partner < 1:
            raise SynthError(f"placement {self.placement!r} requires a partner class")
        if any(not 0 <= v <= 1 for m in self.motif_means for v in m):
            raise SynthError("motif means must lie in [0, 1]")

    def coarse_mean(self, scale_factor: int) -> np.ndarray:
        """Patch-average spectrum at zero noise."""
        frac = motif_layout(self.motif, scale_factor, np.random.default_rng(0)).mean()
        means = np.asarray(self.motif_means)
        if len(means) == 1:
            return means[0]
        return (1 - frac) * means[0] + frac * means[1]


@dataclass(frozen=True)
class SynthConfig:
    coarse_size: tuple[int, int] = (64, 48)
    scale_factor: int = 8
    num_classes: int = 6
    noise_sigma: float = 0.02
    seed: int = 0
    class_specs: tuple[ClassSpec, ...] = ()
    block_size: tuple[int, int] = (8, 16)  # min and max side of top-level blocks
    require_confusable_pairs: bool = True

    def __post_init__(self):
        specs = tuple(s if isinstance(s, ClassSpec) else ClassSpec(**s) for s in self.class_specs)
        object.__setattr__(self, "class_specs", specs)
        object.__setattr__(self, "coarse_size", tuple(self.coarse_size))
        object.__setattr__(self, "block_size", tuple(self.block_size))
        if self.num_classes < 2:
            raise SynthError("num_classes must be >= 2")
        if len(specs) != self.num_classes:
            raise SynthError(f"{len(specs)} class specs for num_classes={self.num_classes}")
        if self.noise_sigma < 0:
            raise SynthError("noise_sigma must be >= 0")
        if self.scale_factor < 1:
            raise SynthError("scale_factor must be >= 1")
        lo, hi = self.block_size
        if lo < 4 or hi < lo:
            raise SynthError("block_size must satisfy 4 <= min <= max")
        if min(self.coarse_size) < lo:
            raise SynthError(f"coarse grid {self.coarse_size} smaller than one block")
        bands = {len(m) for s in specs for m in s.motif_means}
        if len(bands) != 1:
            raise SynthError("all motif means must have the same number of bands")
        for i, s in enumerate(specs, start=1):
            if s.placement == "zone":
                continue
            if not 1 <= s.partner <= self.num_classes or s.partner == i:
                raise SynthError(f"class {i} has invalid partner {s.partner}")
            other = specs[s.partner - 1]
            if s.placement == "inset" and other.placement != "zone":
                raise SynthError(f"host of class {i} must have zone placement")
            if s.placement == "tile" and (other.placement != "tile" or other.partner != i):
                raise SynthError(f"tile partner of class {i} must point back to it")
        if any(sp.placement == "inset" for sp in specs) and lo < 6:
            raise SynthError("inset placement needs blocks of at least 6 pixels per side")
        if self.require_confusable_pairs:
            same_mean, same_motif = self.confusable_pairs()
            if not same_mean:
                raise SynthError("no two classes share a coarse mean while differing in motif")
            if not same_motif:
                raise SynthError("no two classes share a motif while differing in coarse context")

    @property
    def bands(self) -> int:
        return len(self.class_specs[0].motif_means[0])

    def confusable_pairs(self) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
        """Class pairs (1-based) with equal coarse means but different motifs, and
        pairs with identical motifs but different placement contexts."""
        same_mean, same_motif = [], []
        specs = self.class_specs
        for i in range(len(specs)):
            for j in range(i + 1, len(specs)):
                a, b = specs[i], specs[j]
                motif_equal = a.motif == b.motif and a.motif_means == b.motif_means
                if not motif_equal and np.allclose(a.coarse_mean(self.scale_factor), b.coarse_mean(self.scale_factor), atol=1e-12):
                    same_mean.append((i + 1, j + 1))
                if motif_equal and (a.placement, a.partner) != (b.placement, b.partner):
                    same_motif.append((i + 1, j + 1))
        return same_mean, same_motif

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        d["class_specs"] = tuple(ClassSpec(**s) for s in d.get("class_specs", ()))
        return cls(**d)


def default_config(seed: int = 0, **overrides) -> SynthConfig:
    """Six classes: two context-confusable (same motif, different hosts) and two
    motif-confusable (same coarse mean, different sub-patch arrangement)."""
    specs = (
        ClassSpec("forest", "homogeneous", ((0.25, 0.15, 0.60, 0.30),)),
        ClassSpec("agriculture", "homogeneous", ((0.45, 0.45, 0.30, 0.50),)),
        ClassSpec("park", "striped", ((0.25, 0.20, 0.60, 0.30), (0.45, 0.40, 0.30, 0.50)), "inset", 1),
        ClassSpec("orchard", "striped", ((0.25, 0.20, 0.60, 0.30), (0.45, 0.40, 0.30, 0.50)), "inset", 2),
        ClassSpec("individual_housing", "two-block", ((0.70, 0.70, 0.60, 0.60), (0.40, 0.30, 0.55, 0.35)), "tile", 6),
        ClassSpec("collective_housing", "two-block", ((0.70, 0.30, 0.55, 0.35), (0.40, 0.70, 0.60, 0.60)), "tile", 5),
    )
    kw = dict(seed=seed, class_specs=specs)
    kw.update(overrides)
    return SynthConfig(**kw)


def motif_layout(motif: str, s: int, rng: np.random.Generator) -> np.ndarray:
    """0/1 material map of one ``s x s`` fine patch."""
    yy, xx = np.mgrid[0:s, 0:s]
    if motif == "homogeneous":
        return np.zeros((s, s), dtype=np.int64)
    if motif == "two-block":
        return (xx >= s // 2).astype(np.int64) if s > 1 else np.zeros((s, s), dtype=np.int64)
    if motif == "checkered":
        return ((xx >= s // 2) ^ (yy >= s // 2)).astype(np.int64)
    if motif == "striped":
        w = max(1, s // 4)
        return ((yy // w) % 2).astype(np.int64)
    if motif == "scattered-objects":
        w = max(1, s // 4)
        slots = [(y, x) for y in range(0, s - w + 1, w) for x in range(0, s - w + 1, w)]
        out = np.zeros((s, s), dtype=np.int64)
        for k in rng.choice(len(slots), size=max(1, len(slots) // 4), replace=False):
            y, x = slots[k]
            out[y:y + w, x:x + w] = 1
        return out
    raise SynthError(f"unknown motif {motif!r}")


def _split_blocks(w: int, h: int, lo: int, hi: int, rng) -> list[tuple[int, int, int, int]]:
    """Guillotine partition into rectangles with sides in ``[lo, hi]`` where possible."""
    out = []
    stack = [(0, 0, w, h)]
    while stack:
        x, y, bw, bh = stack.pop()
        axis = 0 if bw >= bh else 1
        side = bw if axis == 0 else bh
        if side <= hi or side < 2 * lo:
            other = bh if axis == 0 else bw
            if other > hi and other >= 2 * lo:
                axis, side = 1 - axis, other
            else:
                out.append((x, y, bw, bh))
                continue
        cut = int(rng.integers(lo, side - lo + 1))
        if axis == 0:
            stack += [(x + cut, y, bw - cut, bh), (x, y, cut, bh)]
        else:
            stack += [(x, y + cut, bw, bh - cut), (x, y, bw, cut)]
    return sorted(out, key=lambda r: (r[1], r[0]))


def _cells(length: int, rng, lo: int = 4, hi: int = 6) -> list[tuple[int, int]]:
    if length < 2 * lo:
        return [(0, length)]
    edges = [0]
    while length - edges[-1] >= 2 * lo:
        edges.append(edges[-1] + int(rng.integers(lo, min(hi, length - edges[-1] - lo) + 1)))
    edges.append(length)
    return list(zip(edges[:-1], edges[1:]))


def _layout(config: SynthConfig, rng) -> np.ndarray:
    w, h = config.coarse_size
    truth = np.zeros((h, w), dtype=np.int64)
    specs = config.class_specs
    units = []  # ("zone", c) or ("tile", a, b)
    for i, s in enumerate(specs, start=1):
        if s.placement == "zone":
            units.append(("zone", i))
        elif s.placement == "tile" and i < s.partner:
            units.append(("tile", i, s.partner))
    insets = {}
    for i, s in enumerate(specs, start=1):
        if s.placement == "inset":
            insets.setdefault(s.partner, []).append(i)
    blocks = _split_blocks(w, h, *config.block_size, rng)
    order = rng.permutation(len(units))
    inset_turn = {host: 0 for host in insets}
    for b, (x, y, bw, bh) in enumerate(blocks):
        unit = units[order[b % len(units)]]
        if unit[0] == "zone":
            host = unit[1]
            truth[y:y + bh, x:x + bw] = host
            if host in insets and bw >= 6 and bh >= 6:
                cls = insets[host][inset_turn[host] % len(insets[host])]
                inset_turn[host] += 1
                iw, ih = max(4, bw // 2), max(4, bh // 2)
                ox = x + int(rng.integers(1, bw - iw))
                oy = y + int(rng.integers(1, bh - ih))
                truth[oy:oy + ih, ox:ox + iw] = cls
        else:
            _, a, c = unit
            flip = int(rng.integers(2))
            for cj, (y0, y1) in enumerate(_cells(bh, rng)):
                for ci, (x0, x1) in enumerate(_cells(bw, rng)):
                    truth[y + y0:y + y1, x + x0:x + x1] = a if (ci + cj + flip) % 2 == 0 else c
    return truth


def generate(config: SynthConfig) -> tuple[Raster, Raster, LabelMap]:
    """Return ``(coarse, fine, truth)``; deterministic under ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    truth = _layout(config, rng)
    missing = sorted(set(range(1, config.num_classes + 1)) - set(np.unique(truth).tolist()))
    if missing:
        raise SynthError(f"classes {missing} missing from the layout; enlarge coarse_size or shrink block_size")
    w, h = config.coarse_size
    s = config.scale_factor
    nb = config.bands
    fine = np.empty((nb, h * s, w * s))
    for y in range(h):
        for x in range(w):
            spec = config.class_specs[truth[y, x] - 1]
            layout = motif_layout(spec.motif, s, rng)
            means = np.asarray(spec.motif_means)
            fine[:, y * s:(y + 1) * s, x * s:(x + 1) * s] = means[layout].transpose(2, 0, 1)
    # float32 storage is canonical; keep in-memory rasters identical to what is written
    if config.noise_sigma > 0:
        fine = fine + rng.normal(0.0, config.noise_sigma, fine.shape)
    fine = np.clip(fine, 0.0, 1.0).astype(np.float32).astype(np.float64)
    coarse = fine.reshape(nb, h, s, w, s).mean(axis=(2, 4))
    if config.noise_sigma > 0:
        coarse = coarse + rng.normal(0.0, config.noise_sigma, coarse.shape)
    coarse = np.clip(coarse, 0.0, 1.0).astype(np.float32).astype(np.float64)
    names = BAND_NAMES if nb == 4 else tuple(f"b{i + 1}" for i in range(nb))
    return Raster(coarse, names), Raster(fine, names), LabelMap(truth, config.num_classes)


def write_dataset(config: SynthConfig, out_dir: str | os.PathLike) -> dict[str, str]:
    """Write ``coarse.bfloat``, ``fine.bfloat``, ``truth.pgm`` and the ``synth.json`` sidecar."""
    coarse, fine, truth = generate(config)
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "coarse": os.path.join(out_dir, "coarse.bfloat"),
        "fine": os.path.join(out_dir, "fine.bfloat"),
        "truth": os.path.join(out_dir, "truth.pgm"),
        "sidecar": os.path.join(out_dir, "synth.json"),
    }
    write_band_float(coarse, paths["coarse"])
    write_band_float(fine, paths["fine"])
    write_label_map(truth, paths["truth"])
    with open(paths["sidecar"], "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths
