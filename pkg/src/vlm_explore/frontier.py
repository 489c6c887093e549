"""Frontier detection, clustering, and candidate filtering."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy import ndimage

from .grid_map import Belief, BeliefMap, Pose

MIN_FRONTIER_SIZE = 20
PROXIMITY_RADIUS_M = 3.0
MAX_CANDIDATES = 5
BLACKLIST_RADIUS_M = 0.5

_EIGHT = np.ones((3, 3), dtype=bool)

Cellidx = tuple[int, int]


@dataclass(frozen=True)
class FrontierContour:
    cells: tuple[Cellidx, ...]
    midpoint: Cellidx

    @property
    def size(self) -> int:
        return len(self.cells)


@dataclass(frozen=True)
class FrontierCandidate:
    label: int
    contour: FrontierContour
    distance: float
    midpoint_world: tuple[float, float]


@dataclass
class Blacklist:
    radius: float = BLACKLIST_RADIUS_M
    points: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("blacklist radius must be positive")

    def add(self, point: tuple[float, float]) -> "Blacklist":
        self.points.append((float(point[0]), float(point[1])))
        return self

    def covers(self, point: tuple[float, float]) -> bool:
        px, py = point
        return any(math.hypot(px - bx, py - by) <= self.radius for bx, by in self.points)


def blacklist_add(blacklist: Blacklist, point: tuple[float, float]) -> Blacklist:
    return blacklist.add(point)


def frontier_mask(belief: BeliefMap) -> np.ndarray:
    """Boolean mask of Free cells with an Unknown 8-neighbor (off-grid counts as Unknown)."""
    unknown = np.pad(belief.cells == Belief.UNKNOWN, 1, constant_values=True)
    near_unknown = ndimage.binary_dilation(unknown, structure=_EIGHT)[1:-1, 1:-1]
    return (belief.cells == Belief.FREE) & near_unknown


def detect_frontier_cells(belief: BeliefMap) -> set[Cellidx]:
    xs, ys = np.nonzero(frontier_mask(belief))
    return set(zip(xs.tolist(), ys.tolist()))


def frontier_midpoint(cells: Iterable[Cellidx]) -> Cellidx:
    """Member cell closest to the centroid; ties go to the smallest index."""
    pts = np.asarray(sorted(cells), dtype=float)
    if len(pts) == 0:
        raise ValueError("empty contour has no midpoint")
    centroid = pts.mean(axis=0)
    d2 = ((pts - centroid) ** 2).sum(axis=1)
    # sorted input + argmin's first-occurrence rule gives the (ix, iy) tie-break
    best = int(np.argmin(d2))
    return (int(pts[best, 0]), int(pts[best, 1]))


def _contours_from_mask(mask: np.ndarray) -> list[FrontierContour]:
    labels, n = ndimage.label(mask, structure=_EIGHT)
    if n == 0:
        return []
    xs, ys = np.nonzero(labels)
    lab = labels[xs, ys]
    order = np.argsort(lab, kind="stable")
    xs, ys, lab = xs[order], ys[order], lab[order]
    splits = np.flatnonzero(np.diff(lab)) + 1
    contours = []
    for gx, gy in zip(np.split(xs, splits), np.split(ys, splits)):
        cells = tuple(sorted(zip(gx.tolist(), gy.tolist())))
        contours.append(FrontierContour(cells, frontier_midpoint(cells)))
    contours.sort(key=lambda c: (-c.size, c.cells[0]))
    return contours


def cluster_frontiers(cells: Iterable[Cellidx], shape: tuple[int, int] | None = None) -> list[FrontierContour]:
    """Split frontier cells into maximal 8-connected contours.

    Ordered by descending size, then by the smallest member cell.
    """
    cells = list(cells)
    if not cells:
        return []
    arr = np.asarray(cells)
    if shape is None:
        shape = (int(arr[:, 0].max()) + 1, int(arr[:, 1].max()) + 1)
    mask = np.zeros(shape, dtype=bool)
    mask[arr[:, 0], arr[:, 1]] = True
    return _contours_from_mask(mask)


def find_contours(belief: BeliefMap) -> list[FrontierContour]:
    return _contours_from_mask(frontier_mask(belief))


def filter_candidates(contours: Iterable[FrontierContour], robot: Pose, blacklist: Blacklist | None,
                      resolution: float, min_size: int = MIN_FRONTIER_SIZE,
                      radius: float = PROXIMITY_RADIUS_M, k: int = MAX_CANDIDATES) -> list[FrontierCandidate]:
    kept = []
    for contour in contours:
        if contour.size < min_size:
            continue
        mx, my = contour.midpoint
        mid = ((mx + 0.5) * resolution, (my + 0.5) * resolution)
        if blacklist is not None and blacklist.covers(mid):
            continue
        dist = math.hypot(mid[0] - robot.x, mid[1] - robot.y)
        if dist > radius:
            continue
        kept.append((dist, contour.midpoint, contour, mid))
    kept.sort(key=lambda item: (item[0], item[1]))
    return [
        FrontierCandidate(label, contour, dist, mid)
        for label, (dist, _, contour, mid) in enumerate(kept[:k])
    ]


def candidates_for(belief: BeliefMap, robot: Pose, blacklist: Blacklist | None, **filters) -> list[FrontierCandidate]:
    """Detect, cluster, and filter in one call."""
    return filter_candidates(find_contours(belief), robot, blacklist, belief.resolution, **filters)


__all__ = [
    "Blacklist",
    "FrontierCandidate",
    "FrontierContour",
    "blacklist_add",
    "candidates_for",
    "cluster_frontiers",
    "detect_frontier_cells",
    "filter_candidates",
    "find_contours",
    "frontier_mask",
    "frontier_midpoint",
]
