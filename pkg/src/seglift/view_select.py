"""Pivot-view selection from neighbor-weighted projection histograms.

For a superpoint, the per-view score is its projected-point count scaled by
the mean visible fraction of its nearest neighbor superpoints. The pivot is
the view with the highest score, ties to the lowest view index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PixelSet
from .superpoints import SuperpointPartition

__all__ = [
    "ViewHistogram",
    "NoPivotViewError",
    "superpoint_view_counts",
    "scale_factor",
    "view_histogram",
    "pivot_view",
]


class NoPivotViewError(ValueError):
    """The superpoint scores zero in every view; callers should skip it."""


@dataclass
class ViewHistogram:
    """Per-view pivot scores for one superpoint.

    values[t] = raw_counts[t] * scales[t]; raw_counts are projected-point
    counts, scales the neighbor visibility factors in [0, 1].
    """

    values: np.ndarray
    raw_counts: np.ndarray
    scales: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        self.raw_counts = np.asarray(self.raw_counts, dtype=np.int64)
        self.scales = np.asarray(self.scales, dtype=np.float64)
        if not (len(self.values) == len(self.raw_counts) == len(self.scales)):
            raise ValueError("histogram fields must have equal length")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("histogram values must be finite")


def superpoint_view_counts(
    partition: SuperpointPartition, projections: list[PixelSet]
) -> np.ndarray:
    """(T, L) matrix of visible projected-point counts per view and superpoint."""
    counts = np.zeros((len(projections), partition.count), dtype=np.int64)
    for t, ps in enumerate(projections):
        if not ps.is_empty:
            counts[t] = np.bincount(
                partition.assignment[ps.indices], minlength=partition.count
            )
    return counts


def scale_factor(
    superpoint: int,
    view: int,
    counts: np.ndarray,
    sizes: np.ndarray,
    neighbors: list[np.ndarray],
) -> float:
    """Mean visible fraction of the superpoint's neighbors in one view.

    Averages ``count / size`` over the neighbor list; always in [0, 1].
    A superpoint without neighbors (single-superpoint scene) gets the
    neutral factor 1.0.
    """
    nbr = neighbors[superpoint]
    if len(nbr) == 0:
        return 1.0
    fractions = counts[view, nbr] / sizes[nbr]
    return float(fractions.mean())


def view_histogram(
    superpoint: int,
    counts: np.ndarray,
    sizes: np.ndarray,
    neighbors: list[np.ndarray],
) -> ViewHistogram:
    views = counts.shape[0]
    raw = counts[:, superpoint]
    scales = np.array(
        [scale_factor(superpoint, t, counts, sizes, neighbors) for t in range(views)]
    )
    return ViewHistogram(raw * scales, raw, scales)


def pivot_view(
    superpoint: int,
    counts: np.ndarray,
    sizes: np.ndarray,
    neighbors: list[np.ndarray],
) -> tuple[int, ViewHistogram]:
    """Pick the view with the highest histogram value (ties: lowest index)."""
    hist = view_histogram(superpoint, counts, sizes, neighbors)
    if not np.any(hist.values > 0):
        raise NoPivotViewError("no pivot view")
    return int(np.argmax(hist.values)), hist
