"""Privileged coverage, path-revisit statistics, and comparison reports.

Coverage here is an evaluation-only measure: every traversable cell within
``reveal_range`` of the ground-truth position (and inside the FOV wedge, for
narrow FOVs) counts as explored, with no occlusion.  The denominator is the
set of traversable cells 4-connected to the start.
"""

from __future__ import annotations

import csv
import math
import re
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegeneratePath, EmptyFile, MalformedRow, OutOfBounds
from .grid_map import GroundTruthMap, in_bounds, reachable_mask

REVEAL_RANGE_M = 5.0
RESAMPLE_SPACING_M = 0.10
REVISIT_RADIUS_M = 0.05
REVISIT_EXCLUSION_M = 0.5


@dataclass
class CoverageSeries:
    distances: list[float]
    fractions: list[float]
    fov: float = 2 * math.pi
    reveal_range: float = REVEAL_RANGE_M

    @property
    def samples(self) -> list[tuple[float, float]]:
        return list(zip(self.distances, self.fractions))

    @property
    def final_fraction(self) -> float:
        return self.fractions[-1] if self.fractions else 0.0

    @property
    def final_distance(self) -> float:
        return self.distances[-1] if self.distances else 0.0


@dataclass
class RevisitHistogram:
    counts: dict[int, int]
    spacing: float = RESAMPLE_SPACING_M
    radius: float = REVISIT_RADIUS_M
    exclusion: float = REVISIT_EXCLUSION_M

    @property
    def total(self) -> int:
        return sum(self.counts.values())


# ---------------------------------------------------------------------------
# coverage
# ---------------------------------------------------------------------------


def finite_difference_headings(points: Sequence[tuple[float, float]]) -> list[float]:
    """Direction of travel at each point; stationary points inherit the last direction."""
    n = len(points)
    headings = [0.0] * n
    last = None
    for i in range(n - 1):
        dx = points[i + 1][0] - points[i][0]
        dy = points[i + 1][1] - points[i][1]
        if dx or dy:
            last = math.atan2(dy, dx)
        headings[i] = last
    if n:
        headings[-1] = last
    # leading stationary points take the first real direction
    first = next((h for h in headings if h is not None), 0.0)
    out, cur = [], first
    for h in headings:
        cur = cur if h is None else h
        out.append(cur)
    return out


def _wrap_pi(a: np.ndarray) -> np.ndarray:
    return (a + np.pi) % (2 * np.pi) - np.pi


def reveal_coverage(gt: GroundTruthMap, trajectory: Sequence[tuple[float, float]], fov: float = 2 * math.pi,
                    reveal_range: float = REVEAL_RANGE_M, headings: Sequence[float] | None = None,
                    start: tuple[float, float] | None = None) -> CoverageSeries:
    if len(trajectory) == 0:
        raise ValueError("empty trajectory")
    for x, y in trajectory:
        if not in_bounds(gt, x, y):
            raise OutOfBounds(f"trajectory point ({x:.3f}, {y:.3f}) is outside the map")
    reach = reachable_mask(gt, start if start is not None else trajectory[0])
    total = int(reach.sum())
    if headings is None:
        headings = finite_difference_headings(trajectory)
    full_circle = fov >= 2 * math.pi - 1e-12

    res = gt.resolution
    w, h = gt.shape
    r_cells = reveal_range / res
    revealed = np.zeros(gt.shape, dtype=bool)
    count = 0
    series = CoverageSeries([], [], fov, reveal_range)
    dist = 0.0
    prev = None
    for (x, y), heading in zip(trajectory, headings):
        if prev is not None:
            dist += math.hypot(x - prev[0], y - prev[1])
        gx, gy = x / res - 0.5, y / res - 0.5
        x0, x1 = max(0, int(math.floor(gx - r_cells))), min(w - 1, int(math.ceil(gx + r_cells)))
        y0, y1 = max(0, int(math.floor(gy - r_cells))), min(h - 1, int(math.ceil(gy + r_cells)))
        ox = np.arange(x0, x1 + 1)[:, None] - gx
        oy = np.arange(y0, y1 + 1)[None, :] - gy
        window = ox ** 2 + oy ** 2 <= r_cells ** 2
        if not full_circle:
            rel = _wrap_pi(np.arctan2(oy, ox) - heading)
            own = (np.abs(ox) < 0.5) & (np.abs(oy) < 0.5)
            window &= (np.abs(rel) <= fov / 2) | own
        sub = revealed[x0:x1 + 1, y0:y1 + 1]
        new = window & reach[x0:x1 + 1, y0:y1 + 1] & ~sub
        count += int(new.sum())
        sub |= new
        frac = count / total
        if series.distances and dist <= series.distances[-1]:
            series.fractions[-1] = frac
        else:
            series.distances.append(dist)
            series.fractions.append(frac)
        prev = (x, y)
    return series


# ---------------------------------------------------------------------------
# revisits
# ---------------------------------------------------------------------------


def polyline_length(points) -> float:
    return sum(math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in zip(points, points[1:]))


def resample_path(trajectory: Sequence[tuple[float, float]], spacing: float = RESAMPLE_SPACING_M) -> np.ndarray:
    """Points along the polyline at arc lengths 0, spacing, 2*spacing, ...

    The final original point is appended when it lies more than half a
    spacing beyond the last uniform sample.
    """
    pts = np.asarray(trajectory, dtype=float)
    if len(pts) < 2:
        raise DegeneratePath("need at least two points to resample")
    seg = np.hypot(*np.diff(pts, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total <= 0:
        raise DegeneratePath("trajectory has zero length")
    n = int(math.floor(total / spacing + 1e-9)) + 1
    s = np.arange(n) * spacing
    s[-1] = min(s[-1], total)
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    # skip zero-length segments by pushing the index forward
    frac = np.divide(s - cum[idx], seg[idx], out=np.zeros_like(s), where=seg[idx] > 0)
    out = pts[idx] + (pts[idx + 1] - pts[idx]) * np.clip(frac, 0.0, 1.0)[:, None]
    if total - s[-1] > spacing / 2:
        out = np.vstack([out, pts[-1]])
    return out


def revisit_counts(points, radius: float = REVISIT_RADIUS_M, exclusion: float = REVISIT_EXCLUSION_M) -> list[int]:
    """Revisit count per point, left to right.

    A point's past neighbors are earlier points within ``radius`` whose
    arc-length separation (along the given points) exceeds ``exclusion``.
    The count is 0 without such neighbors, else one more than their maximum.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    if n == 0:
        return []
    arc = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))]) if n > 1 else np.zeros(1)
    tree = cKDTree(pts)
    neighbor_lists = tree.query_ball_point(pts, r=radius * (1 + 1e-9) + 1e-12)
    counts = [0] * n
    for i in range(n):
        best = -1
        xi, yi = pts[i]
        for j in neighbor_lists[i]:
            if j >= i or arc[i] - arc[j] <= exclusion:
                continue
            if math.hypot(pts[j, 0] - xi, pts[j, 1] - yi) > radius:
                continue
            if counts[j] > best:
                best = counts[j]
        counts[i] = 0 if best < 0 else best + 1
    return counts


def histogram(counts: Iterable[int], spacing: float = RESAMPLE_SPACING_M, radius: float = REVISIT_RADIUS_M,
              exclusion: float = REVISIT_EXCLUSION_M) -> RevisitHistogram:
    counts = list(counts)
    table: dict[int, int] = {}
    if counts:
        table = {k: 0 for k in range(max(counts) + 1)}
        for c in counts:
            table[c] += 1
    return RevisitHistogram(table, spacing, radius, exclusion)


# ---------------------------------------------------------------------------
# external trajectories
# ---------------------------------------------------------------------------

_HEADER_NAMES = {"t", "time", "stamp", "step", "x", "y", "x_m", "y_m", "cumulative_dist_m", "heading_rad"}


def _read_transform(meta: Path) -> tuple[float, float, float] | None:
    for raw in meta.read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line.startswith("transform:"):
            vals = line.split(":", 1)[1].split()
            if len(vals) != 3:
                raise MalformedRow(0, line)
            return tuple(float(v) for v in vals)
    return None


def ingest_external_trajectory(path: str | Path, apply_transform: bool = True) -> list[tuple[float, float]]:
    """Read ``x_m,y_m`` or ``t,x_m,y_m`` rows (header optional).

    A ``<file>.meta`` sidecar with ``transform: dx dy dtheta`` rotates by
    ``dtheta`` then shifts by ``(dx, dy)`` into the environment frame.
    """
    path = Path(path)
    xcol, ycol = None, None
    points = []
    with open(path, newline="") as fh:
        for line_no, row in enumerate(csv.reader(fh), 1):
            cells = [c.strip() for c in row]
            if not cells or all(c == "" for c in cells):
                continue
            if line_no == 1 and not points and all(c.lower() in _HEADER_NAMES for c in cells):
                names = [c.lower() for c in cells]
                try:
                    xcol = names.index("x_m") if "x_m" in names else names.index("x")
                    ycol = names.index("y_m") if "y_m" in names else names.index("y")
                except ValueError:
                    raise MalformedRow(line_no, ",".join(row)) from None
                continue
            try:
                values = [float(c) for c in cells]
            except ValueError:
                raise MalformedRow(line_no, ",".join(row)) from None
            if xcol is not None:
                if len(values) <= max(xcol, ycol):
                    raise MalformedRow(line_no, ",".join(row))
                points.append((values[xcol], values[ycol]))
            elif len(values) == 2:
                points.append((values[0], values[1]))
            elif len(values) == 3:
                points.append((values[1], values[2]))
            else:
                raise MalformedRow(line_no, ",".join(row))
    if not points:
        raise EmptyFile(f"{path} has no trajectory rows")
    meta = path.with_suffix(".meta")
    if apply_transform and meta.exists():
        tf = _read_transform(meta)
        if tf is not None:
            dx, dy, th = tf
            c, s = math.cos(th), math.sin(th)
            points = [(c * x - s * y + dx, s * x + c * y + dy) for x, y in points]
    return points


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class MethodEvaluation:
    environment: str
    method: str
    distance: float
    exploration_pct: float
    series: CoverageSeries | None = None
    histogram: RevisitHistogram | None = None


@dataclass(frozen=True)
class ReferenceRow:
    """A published (distance, exploration) pair reproduced as given."""

    environment: str
    method: str
    distance: str
    exploration: str


def evaluate_trajectory(gt: GroundTruthMap, trajectory, method: str, environment: str | None = None,
                        fov: float = 2 * math.pi, reveal_range: float = REVEAL_RANGE_M,
                        headings=None, start=None) -> MethodEvaluation:
    series = reveal_coverage(gt, trajectory, fov, reveal_range, headings, start)
    hist = None
    if polyline_length(trajectory) > 0:
        hist = histogram(revisit_counts(resample_path(trajectory)))
    return MethodEvaluation(environment or gt.name, method, series.final_distance,
                            100.0 * series.final_fraction, series, hist)


def load_reference_rows(path: str | Path) -> list[ReferenceRow]:
    """CSV with header ``environment,method,distance_m,exploration_pct``; values kept as text."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"environment", "method", "distance_m", "exploration_pct"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise MalformedRow(1, ",".join(reader.fieldnames or []))
        for r in reader:
            rows.append(ReferenceRow(r["environment"].strip(), r["method"].strip(),
                                     r["distance_m"].strip(), r["exploration_pct"].strip()))
    return rows


_UNSAFE = re.compile(r"[^A-Za-z0-9._-]+")


def _slug(text: str) -> str:
    return _UNSAFE.sub("-", text).strip("-") or "x"


def _table_text(rows: list[tuple[str, str, str, str]]) -> str:
    envs = list(OrderedDict.fromkeys(r[0] for r in rows))
    methods = list(OrderedDict.fromkeys(r[1] for r in rows))
    cell = {(r[0], r[1]): (r[2], r[3]) for r in rows}
    header1 = ["", *[f"{e}" for e in envs for _ in (0, 1)]]
    header2 = ["Method", *[h for _ in envs for h in ("Dist.", "Expl.")]]
    body = []
    for m in methods:
        line = [m]
        for e in envs:
            d, x = cell.get((e, m), ("------", "-----"))
            line += [d, x]
        body.append(line)
    table = [header1, header2, *body]
    widths = [max(len(r[i]) for r in table) for i in range(len(header2))]
    return "\n".join("  ".join(c.ljust(wd) for c, wd in zip(r, widths)).rstrip() for r in table) + "\n"


def compare_report(evaluations: Sequence[MethodEvaluation], out_dir: str | Path,
                   references: Sequence[ReferenceRow] = (), tag: str = "", plots: bool = False) -> list[Path]:
    """Write summary.csv/summary.txt, per-run curve and histogram CSVs, and optional plots."""
    if not evaluations and not references:
        raise ValueError("nothing to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    rows = [(e.environment, e.method, f"{e.distance:.2f}", f"{e.exploration_pct:.2f}") for e in evaluations]
    rows += [(r.environment, r.method, r.distance, r.exploration) for r in references]
    summary = out / "summary.csv"
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["environment", "method", "distance_m", "exploration_pct"])
        w.writerows(rows)
    written.append(summary)
    text = out / "summary.txt"
    text.write_text(_table_text(rows))
    written.append(text)

    for e in evaluations:
        stem = f"{_slug(e.environment)}_{_slug(e.method)}{tag}"
        if e.series is not None:
            p = out / f"curve_{stem}.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["distance_m", "pct"])
                for d, f in e.series.samples:
                    w.writerow([f"{d:.4f}", f"{100.0 * f:.4f}"])
            written.append(p)
        if e.histogram is not None:
            p = out / f"hist_{stem}.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["revisits", "frequency"])
                for k in sorted(e.histogram.counts):
                    w.writerow([k, e.histogram.counts[k]])
            written.append(p)

    if plots and evaluations:
        written += _plots(evaluations, out, tag)
    return written


def _plots(evaluations: Sequence[MethodEvaluation], out: Path, tag: str) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    fig, ax = plt.subplots(figsize=(5, 4))
    for e in evaluations:
        ax.scatter(e.distance, e.exploration_pct, label=f"{e.method} / {e.environment}")
    ax.set_xlabel("distance traveled (m)")
    ax.set_ylabel("exploration (%)")
    ax.legend(fontsize="small")
    p = out / f"final_scatter{tag}.png"
    fig.tight_layout()
    fig.savefig(p, dpi=100)
    plt.close(fig)
    paths.append(p)

    for env in OrderedDict.fromkeys(e.environment for e in evaluations):
        fig, ax = plt.subplots(figsize=(5, 4))
        for e in evaluations:
            if e.environment == env and e.series is not None:
                ax.plot(e.series.distances, [100 * f for f in e.series.fractions], label=e.method)
        ax.set_xlabel("distance traveled (m)")
        ax.set_ylabel("exploration (%)")
        ax.legend(fontsize="small")
        p = out / f"curve_{_slug(env)}{tag}.png"
        fig.tight_layout()
        fig.savefig(p, dpi=100)
        plt.close(fig)
        paths.append(p)
    return paths
