"""Per-region feature vectors.

Layout of a feature vector for a raster with ``B`` bands (``D = B + 4``)::

    [mean band 1, ..., mean band B, brightness, ndvi, glcm_homogeneity, std_dev]

Brightness and NDVI come from the region's mean red and near-infrared
reflectances. Texture (GLCM homogeneity and standard deviation) uses the first
band only.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .raster import Raster

__all__ = [
    "GLCM_LEVELS",
    "FEATURE_NAMES",
    "FeatureError",
    "region_features",
    "feature_table",
    "glcm_homogeneity",
    "Standardizer",
    "standardize",
    "write_feature_csv",
]

GLCM_LEVELS = 32
FEATURE_NAMES = ("brightness", "ndvi", "glcm_homogeneity", "std_dev")


class FeatureError(ValueError):
    pass


def _quantize(values: np.ndarray) -> np.ndarray:
    return np.minimum((np.clip(values, 0.0, 1.0) * GLCM_LEVELS).astype(np.int64), GLCM_LEVELS - 1)


def glcm_homogeneity(band: np.ndarray, members: np.ndarray, width: int, mask: np.ndarray | None = None) -> float:
    """Homogeneity of the symmetric, normalized horizontal co-occurrence matrix of a region.

    ``band`` is the flat first band, ``members`` flat pixel indices. Only pairs
    ``(p, p + 1)`` on the same row with both pixels in the region are counted;
    a region without such a pair is treated as perfectly uniform.
    """
    if mask is None:
        mask = np.zeros(band.size, dtype=bool)
        mask[members] = True
    left = members[(members % width) != width - 1]
    left = left[mask[left + 1]]
    if left.size == 0:
        return 1.0
    # each unordered pair contributes equally to P(i, j) and P(j, i)
    diff = np.abs(_quantize(band[left]) - _quantize(band[left + 1]))
    return float(np.mean(1.0 / (1.0 + diff)))


def region_features(raster: Raster, region: Iterable[int], band_roles: Mapping[str, int]) -> np.ndarray:
    """Feature vector of one region given as flat pixel indices."""
    members = np.unique(np.fromiter(region, dtype=np.int64))
    if members.size == 0:
        raise FeatureError("empty region")
    pix = raster.data.reshape(raster.bands, -1)
    return _features(pix, members, raster.width, band_roles, None)


def _features(pix, members, width, band_roles, mask) -> np.ndarray:
    try:
        red_i, nir_i = band_roles["red"], band_roles["nir"]
    except KeyError as exc:
        raise FeatureError(f"band_roles lacks {exc.args[0]!r}") from None
    if not (0 <= red_i < len(pix) and 0 <= nir_i < len(pix)):
        raise FeatureError(f"band_roles {dict(band_roles)} out of range for {len(pix)} bands")
    vals = pix[:, members]
    means = vals.mean(axis=1)
    red, nir = means[red_i], means[nir_i]
    denom = nir + red
    ndvi = (nir - red) / denom if denom != 0 else 0.0
    bi = np.sqrt((red * red + nir * nir) / 2.0)
    homog = glcm_homogeneity(pix[0], members, width, mask)
    std = vals[0].std()
    return np.concatenate([means, [bi, ndvi, homog, std]])


def feature_table(
    raster: Raster, tree, nodes: Iterable[int], band_roles: Mapping[str, int]
) -> np.ndarray:
    """Features for selected merge-tree nodes; rows of unselected nodes are NaN."""
    pix = raster.data.reshape(raster.bands, -1)
    table = np.full((tree.num_nodes, raster.bands + 4), np.nan)
    mask = np.zeros(tree.num_leaves, dtype=bool)
    for v in sorted(set(int(v) for v in nodes)):
        members = tree.members(v)
        mask[members] = True
        table[v] = _features(pix, members, raster.width, band_roles, mask)
        mask[members] = False
    return table


@dataclass(frozen=True)
class Standardizer:
    """Per-component affine map fitted on a training set; zero-variance components map to 0."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, train: np.ndarray) -> "Standardizer":
        train = np.asarray(train, dtype=np.float64)
        if train.ndim != 2 or len(train) == 0:
            raise FeatureError("training set must be a non-empty (n, D) array")
        mean = train.mean(axis=0)
        std = train.std(axis=0)
        # relative guard: spread at rounding level counts as constant
        tiny = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
        scale = np.where(tiny, 0.0, 1.0 / np.where(tiny, 1.0, std))
        return cls(mean, scale)

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) * self.scale


def standardize(train: np.ndarray, *queries: np.ndarray) -> tuple[np.ndarray, ...]:
    """Standardize ``train`` and any ``queries`` with the training statistics."""
    s = Standardizer.fit(train)
    return (s.transform(train),) + tuple(s.transform(q) for q in queries)


def write_feature_csv(path, rows: Iterable[tuple[int, int, np.ndarray]], band_names: Iterable[str]) -> None:
    """CSV dump with header ``region_id, level, <feature columns>``."""
    cols = [f"mean_{b}" for b in band_names] + list(FEATURE_NAMES)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["region_id", "level", *cols])
        for region_id, level, vec in rows:
            w.writerow([region_id, level, *(repr(float(v)) for v in vec)])
