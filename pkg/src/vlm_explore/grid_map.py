"""Ground-truth environments, the robot's belief grid, and the simulated range sensor.

Grid arrays are stored with shape ``(width, height)`` and indexed ``[ix, iy]``:
``ix`` grows with world x, ``iy`` grows with world y, and cell ``(ix, iy)``
spans ``[ix*res, (ix+1)*res) x [iy*res, (iy+1)*res)``.  On disk (PGM) the top
image row holds the largest ``iy`` so images read like a map with y up.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import MalformedFile, NoTraversableCells, OriginBlocked, OutOfBounds

TWO_PI = 2.0 * math.pi

DEFAULT_RESOLUTION = 0.05
DEFAULT_FOV = math.pi / 2
DEFAULT_RAY_COUNT = 181
DEFAULT_MAX_RANGE = 2.5

# absolute tolerance (meters along the ray) for treating a crossing as a corner
_CORNER_EPS = 1e-9


class Cell(IntEnum):
    OBSTACLE = 0
    TRAVERSABLE = 1
    OUT_OF_BOUNDS = 2


class Belief(IntEnum):
    UNKNOWN = 0
    FREE = 1
    OCCUPIED = 2


# PGM pixel values
_GT_TO_PIXEL = {Cell.TRAVERSABLE: 255, Cell.OBSTACLE: 0, Cell.OUT_OF_BOUNDS: 128}
_BELIEF_TO_PIXEL = {Belief.FREE: 255, Belief.OCCUPIED: 0, Belief.UNKNOWN: 128}


def normalize_angle(theta: float) -> float:
    """Wrap an angle into ``[0, 2*pi)``."""
    theta = math.fmod(theta, TWO_PI)
    if theta < 0:
        theta += TWO_PI
    # fmod of a tiny negative can land exactly on 2*pi after the shift
    return 0.0 if theta >= TWO_PI else theta


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "heading", normalize_angle(self.heading))

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True, eq=False)
class GroundTruthMap:
    """Immutable traversability grid of an environment."""

    cells: np.ndarray
    resolution: float = DEFAULT_RESOLUTION
    start: Pose | None = None
    name: str = "env"

    def __post_init__(self):
        cells = np.array(self.cells, dtype=np.uint8, copy=True)
        if cells.ndim != 2 or cells.shape[0] == 0 or cells.shape[1] == 0:
            raise MalformedFile(f"grid must be a non-empty 2D array, got shape {cells.shape}")
        if not self.resolution > 0:
            raise MalformedFile(f"resolution must be positive, got {self.resolution}")
        if not np.isin(cells, [c.value for c in Cell]).all():
            raise MalformedFile("grid contains values outside the Cell enum")
        if not (cells == Cell.TRAVERSABLE).any():
            raise NoTraversableCells("environment has no traversable cells")
        cells.flags.writeable = False
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "_traversable", cells == Cell.TRAVERSABLE)
        self._traversable.flags.writeable = False
        if self.start is not None:
            ix, iy = world_to_grid(self, self.start.x, self.start.y)
            if not self._traversable[ix, iy]:
                raise MalformedFile(f"start pose {self.start} lies in a blocked cell")

    @property
    def width(self) -> int:
        return self.cells.shape[0]

    @property
    def height(self) -> int:
        return self.cells.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    @property
    def traversable(self) -> np.ndarray:
        return self._traversable

    def counts(self) -> dict[Cell, int]:
        return {c: int((self.cells == c).sum()) for c in Cell}


@dataclass(eq=False)
class BeliefMap:
    """The robot's tri-state occupancy grid."""

    cells: np.ndarray
    resolution: float = DEFAULT_RESOLUTION

    @classmethod
    def unknown(cls, width: int, height: int, resolution: float = DEFAULT_RESOLUTION) -> "BeliefMap":
        return cls(np.full((width, height), Belief.UNKNOWN, dtype=np.uint8), resolution)

    @classmethod
    def like(cls, gt: GroundTruthMap) -> "BeliefMap":
        return cls.unknown(gt.width, gt.height, gt.resolution)

    @property
    def width(self) -> int:
        return self.cells.shape[0]

    @property
    def height(self) -> int:
        return self.cells.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    def copy(self) -> "BeliefMap":
        return BeliefMap(self.cells.copy(), self.resolution)

    def count(self, state: Belief) -> int:
        return int((self.cells == state).sum())

    @property
    def free(self) -> np.ndarray:
        return self.cells == Belief.FREE

    @property
    def unknown_mask(self) -> np.ndarray:
        return self.cells == Belief.UNKNOWN

    @property
    def occupied(self) -> np.ndarray:
        return self.cells == Belief.OCCUPIED


@dataclass(frozen=True)
class RayResult:
    range: float
    hit: bool
    cells: tuple[tuple[int, int], ...]
    hit_cell: tuple[int, int] | None = None


@dataclass(frozen=True)
class Scan:
    pose: Pose
    angles: tuple[float, ...]
    ranges: tuple[float, ...]
    hits: tuple[bool, ...]
    rays: tuple[RayResult, ...] = field(repr=False, default=())
    max_range: float = DEFAULT_MAX_RANGE


# ---------------------------------------------------------------------------
# coordinates
# ---------------------------------------------------------------------------


def world_to_grid(grid, x: float, y: float) -> tuple[int, int]:
    """Cell index ``(ix, iy)`` containing the world point."""
    res = grid.resolution
    ix = math.floor(x / res)
    iy = math.floor(y / res)
    if not (0 <= ix < grid.shape[0] and 0 <= iy < grid.shape[1]):
        raise OutOfBounds(f"point ({x:.3f}, {y:.3f}) is outside the {grid.shape} grid")
    return ix, iy


def grid_to_world(grid, ix: int, iy: int) -> tuple[float, float]:
    """World coordinates of the center of cell ``(ix, iy)``."""
    if not (0 <= ix < grid.shape[0] and 0 <= iy < grid.shape[1]):
        raise OutOfBounds(f"cell ({ix}, {iy}) is outside the {grid.shape} grid")
    res = grid.resolution
    return ((ix + 0.5) * res, (iy + 0.5) * res)


def in_bounds(grid, x: float, y: float) -> bool:
    return 0.0 <= x < grid.shape[0] * grid.resolution and 0.0 <= y < grid.shape[1] * grid.resolution


# ---------------------------------------------------------------------------
# ray casting
# ---------------------------------------------------------------------------


def traverse(passable: np.ndarray, resolution: float, x0: float, y0: float,
             angle: float, max_range: float) -> RayResult:
    """Supercover walk from ``(x0, y0)`` along ``angle`` over a boolean passability grid.

    Every cell the ray geometrically touches is visited, including both side
    cells when the ray crosses a cell corner exactly, so a ray can never slip
    through a diagonal gap between two blocked cells.  The walk stops at the
    first blocked (or off-grid) cell, or once the next cell boundary lies at or
    beyond ``max_range``.
    """
    w, h = passable.shape
    ix = math.floor(x0 / resolution)
    iy = math.floor(y0 / resolution)
    if not (0 <= ix < w and 0 <= iy < h) or not passable[ix, iy]:
        raise OriginBlocked(f"ray origin ({x0:.3f}, {y0:.3f}) is not in a passable cell")

    dx = math.cos(angle)
    dy = math.sin(angle)
    # snap tiny components so axis-aligned rays don't wander across boundaries
    if abs(dx) < 1e-12:
        dx = 0.0
    if abs(dy) < 1e-12:
        dy = 0.0

    inf = math.inf
    if dx > 0:
        sx, t_x, dt_x = 1, ((ix + 1) * resolution - x0) / dx, resolution / dx
    elif dx < 0:
        sx, t_x, dt_x = -1, (ix * resolution - x0) / dx, -resolution / dx
    else:
        sx, t_x, dt_x = 0, inf, inf
    if dy > 0:
        sy, t_y, dt_y = 1, ((iy + 1) * resolution - y0) / dy, resolution / dy
    elif dy < 0:
        sy, t_y, dt_y = -1, (iy * resolution - y0) / dy, -resolution / dy
    else:
        sy, t_y, dt_y = 0, inf, inf

    def ok(cx, cy):
        return 0 <= cx < w and 0 <= cy < h and passable[cx, cy]

    def inside(cx, cy):
        return 0 <= cx < w and 0 <= cy < h

    cells = [(ix, iy)]
    while True:
        t = t_x if t_x < t_y else t_y
        if t >= max_range:
            return RayResult(float(max_range), False, tuple(cells), None)
        if abs(t_x - t_y) <= _CORNER_EPS:
            blocked = None
            for c in ((ix + sx, iy), (ix, iy + sy)):
                if ok(*c):
                    cells.append(c)
                elif blocked is None:
                    blocked = c
            nxt = (ix + sx, iy + sy)
            if blocked is None and not ok(*nxt):
                blocked = nxt
            if blocked is not None:
                return RayResult(t, True, tuple(cells), blocked if inside(*blocked) else None)
            ix, iy = nxt
            t_x += dt_x
            t_y += dt_y
        elif t_x < t_y:
            ix += sx
            t_x += dt_x
            if not ok(ix, iy):
                return RayResult(t, True, tuple(cells), (ix, iy) if inside(ix, iy) else None)
        else:
            iy += sy
            t_y += dt_y
            if not ok(ix, iy):
                return RayResult(t, True, tuple(cells), (ix, iy) if inside(ix, iy) else None)
        cells.append((ix, iy))


def cast_ray(gt: GroundTruthMap, origin: tuple[float, float], angle: float,
             max_range: float = DEFAULT_MAX_RANGE) -> RayResult:
    """Cast one ray against the ground truth.

    ``range`` is the distance to the boundary of the first non-traversable
    cell, or ``max_range`` with ``hit=False``.
    """
    return traverse(gt.traversable, gt.resolution, origin[0], origin[1], angle, max_range)


def fan_angles(heading: float, fov: float, ray_count: int) -> list[float]:
    if ray_count < 1:
        raise ValueError("ray_count must be >= 1")
    if ray_count == 1:
        return [heading]
    lo = heading - fov / 2
    step = fov / (ray_count - 1)
    return [lo + i * step for i in range(ray_count)]


def sense(gt: GroundTruthMap, pose: Pose, fov: float = DEFAULT_FOV,
          ray_count: int = DEFAULT_RAY_COUNT, max_range: float = DEFAULT_MAX_RANGE) -> Scan:
    angles = fan_angles(pose.heading, fov, ray_count)
    rays = tuple(cast_ray(gt, pose.xy, a, max_range) for a in angles)
    return Scan(
        pose=pose,
        angles=tuple(angles),
        ranges=tuple(r.range for r in rays),
        hits=tuple(r.hit for r in rays),
        rays=rays,
        max_range=max_range,
    )


def integrate_scan(belief: BeliefMap, scan: Scan) -> BeliefMap:
    """Mark traversed cells Free and hit cells Occupied, in place.

    Returns the same belief object for chaining.
    """
    free_x, free_y, occ_x, occ_y = [], [], [], []
    for ray in scan.rays:
        for cx, cy in ray.cells:
            free_x.append(cx)
            free_y.append(cy)
        if ray.hit_cell is not None:
            occ_x.append(ray.hit_cell[0])
            occ_y.append(ray.hit_cell[1])
    if free_x:
        belief.cells[free_x, free_y] = Belief.FREE
    if occ_x:
        belief.cells[occ_x, occ_y] = Belief.OCCUPIED
    return belief


# ---------------------------------------------------------------------------
# connectivity
# ---------------------------------------------------------------------------

_FOUR = ndimage.generate_binary_structure(2, 1)


def reachable_mask(gt: GroundTruthMap, start: tuple[float, float] | None = None) -> np.ndarray:
    """Traversable cells 4-connected to the start cell."""
    if start is None:
        if gt.start is None:
            raise ValueError("no start point given and the map has none")
        start = gt.start.xy
    ix, iy = world_to_grid(gt, *start)
    if not gt.traversable[ix, iy]:
        raise OriginBlocked(f"start ({start[0]:.3f}, {start[1]:.3f}) is not traversable")
    labels, _ = ndimage.label(gt.traversable, structure=_FOUR)
    return labels == labels[ix, iy]


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

_PGM_TOKEN = re.compile(rb"(#[^\n]*\n?)|(\S+)")


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a binary (P5) 8-bit PGM into an image array of shape ``(rows, cols)``."""
    data = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        m = _PGM_TOKEN.search(data, pos)
        if m is None:
            raise MalformedFile(f"{path}: truncated PGM header")
        pos = m.end()
        if m.group(2):
            tokens.append(m.group(2))
    if tokens[0] != b"P5":
        raise MalformedFile(f"{path}: expected P5 magic, got {tokens[0]!r}")
    try:
        cols, rows, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise MalformedFile(f"{path}: non-numeric header field") from exc
    if cols <= 0 or rows <= 0 or not 0 < maxval < 256:
        raise MalformedFile(f"{path}: bad dimensions {cols}x{rows} or maxval {maxval}")
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    raster = data[pos:pos + rows * cols]
    if len(raster) != rows * cols:
        raise MalformedFile(f"{path}: expected {rows * cols} pixels, found {len(raster)}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(rows, cols).copy()


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    rows, cols = image.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (cols, rows))
        fh.write(image.tobytes())


def _grid_to_image(cells: np.ndarray) -> np.ndarray:
    # [ix, iy] -> image rows top-down
    return np.flipud(cells.T)


def _image_to_grid(image: np.ndarray) -> np.ndarray:
    return np.flipud(image).T


def _parse_meta(path: Path) -> dict[str, list[str]]:
    meta = {}
    for line_no, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise MalformedFile(f"{path}:{line_no}: expected 'key: value'")
        key, value = line.split(":", 1)
        meta[key.strip()] = value.split()
    return meta


def meta_path_for(pgm_path: str | Path) -> Path:
    return Path(pgm_path).with_suffix(".meta")


def load_environment(path: str | Path) -> GroundTruthMap:
    """Load ``<name>.pgm`` plus its ``<name>.meta`` sidecar."""
    path = Path(path)
    image = read_pgm(path)
    lut = np.full(256, 255, dtype=np.uint8)
    for cell, px in _GT_TO_PIXEL.items():
        lut[px] = cell
    cells = lut[image]
    if (cells == 255).any():
        bad = sorted(set(np.unique(image[cells == 255]).tolist()))
        raise MalformedFile(f"{path}: pixel values {bad} are not one of 0/128/255")

    meta_file = meta_path_for(path)
    if not meta_file.exists():
        raise MalformedFile(f"{path}: missing sidecar {meta_file.name}")
    meta = _parse_meta(meta_file)
    try:
        resolution = float(meta["resolution"][0])
    except (KeyError, IndexError, ValueError) as exc:
        raise MalformedFile(f"{meta_file}: missing or bad 'resolution'") from exc
    start = None
    if "start" in meta:
        try:
            sx, sy, sh = (float(v) for v in meta["start"])
        except ValueError as exc:
            raise MalformedFile(f"{meta_file}: 'start' needs three numbers") from exc
        start = Pose(sx, sy, sh)
    return GroundTruthMap(_image_to_grid(cells), resolution, start=start, name=path.stem)


def save_environment(gt: GroundTruthMap, path: str | Path) -> Path:
    path = Path(path).with_suffix(".pgm")
    lut = np.zeros(len(Cell), dtype=np.uint8)
    for cell, px in _GT_TO_PIXEL.items():
        lut[cell] = px
    write_pgm(path, _grid_to_image(lut[gt.cells]))
    lines = [f"resolution: {gt.resolution!r}"]
    if gt.start is not None:
        lines.append(f"start: {gt.start.x!r} {gt.start.y!r} {gt.start.heading!r}")
    meta_path_for(path).write_text("\n".join(lines) + "\n")
    return path


def save_belief(belief: BeliefMap, path: str | Path) -> None:
    lut = np.zeros(len(Belief), dtype=np.uint8)
    for state, px in _BELIEF_TO_PIXEL.items():
        lut[state] = px
    write_pgm(path, _grid_to_image(lut[belief.cells]))


def load_belief(path: str | Path, resolution: float = DEFAULT_RESOLUTION) -> BeliefMap:
    image = read_pgm(path)
    lut = np.full(256, 255, dtype=np.uint8)
    for state, px in _BELIEF_TO_PIXEL.items():
        lut[px] = state
    cells = lut[image]
    if (cells == 255).any():
        raise MalformedFile(f"{path}: belief pixels must be 0/128/255")
    return BeliefMap(np.ascontiguousarray(_image_to_grid(cells)), resolution)


def from_ascii(rows: Sequence[str], resolution: float = DEFAULT_RESOLUTION,
               start: Pose | None = None, name: str = "ascii") -> GroundTruthMap:
    """Build a map from text rows (top row = largest y).

    ``.`` traversable, ``#`` obstacle, ``~`` out of bounds.
    """
    table = {".": Cell.TRAVERSABLE, "#": Cell.OBSTACLE, "~": Cell.OUT_OF_BOUNDS}
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise MalformedFile("ragged ascii map")
    image = np.array([[table[ch] for ch in row] for row in rows], dtype=np.uint8)
    return GroundTruthMap(_image_to_grid(image), resolution, start=start, name=name)
