"""Global grid planning and idealized path following."""

from __future__ import annotations

import heapq
import logging
import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import NavigationFailed, OutOfBounds, StartBlocked, Unreachable
from .grid_map import Belief, BeliefMap, GroundTruthMap, Pose, integrate_scan, sense, world_to_grid
from .state import ExplorationState, SensorConfig

log = logging.getLogger(__name__)

INFLATION_M = 0.15
GOAL_TOLERANCE_M = 0.3
STEP_M = 0.1
SENSE_EVERY_M = 0.25

SQRT2 = math.sqrt(2.0)
_MOVES = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)]


@dataclass(frozen=True)
class PlannedPath:
    waypoints: tuple[tuple[float, float], ...]
    cells: tuple[tuple[int, int], ...]
    length: float
    goal: tuple[float, float] | None = None


def plannable_mask(belief: BeliefMap, inflation: float = INFLATION_M) -> np.ndarray:
    """Free cells whose center is farther than ``inflation`` from every Occupied cell center."""
    free = belief.cells == Belief.FREE
    occupied = belief.cells == Belief.OCCUPIED
    if not occupied.any():
        return free
    clearance = ndimage.distance_transform_edt(~occupied) * belief.resolution
    return free & (clearance > inflation)


def step_cost(dx: int, dy: int) -> float:
    return SQRT2 if dx and dy else 1.0


def neighbors(mask: np.ndarray, ix: int, iy: int):
    """8-connected moves inside ``mask``; diagonals may not cut a blocked corner."""
    w, h = mask.shape
    for dx, dy in _MOVES:
        nx, ny = ix + dx, iy + dy
        if not (0 <= nx < w and 0 <= ny < h) or not mask[nx, ny]:
            continue
        if dx and dy and not (mask[ix + dx, iy] and mask[ix, iy + dy]):
            continue
        yield nx, ny, step_cost(dx, dy)


def _escape(free: np.ndarray, plannable: np.ndarray, start: tuple[int, int]) -> list[tuple[int, int]] | None:
    """Shortest hop path over Free cells from an inflated start to the nearest plannable cell."""
    parent = {start: None}
    queue = deque([start])
    while queue:
        cur = queue.popleft()
        if plannable[cur]:
            path = []
            while cur is not None:
                path.append(cur)
                cur = parent[cur]
            return path[::-1]
        for nx, ny, _ in neighbors(free, *cur):
            if (nx, ny) not in parent:
                parent[(nx, ny)] = cur
                queue.append((nx, ny))
    return None


def _astar(mask: np.ndarray, start: tuple[int, int], goals: set[tuple[int, int]],
           goal_xy: tuple[float, float], tol_cells: float) -> list[tuple[int, int]] | None:
    gx, gy = goal_xy

    def h(c):
        # distance to the goal disk; 1-Lipschitz so it stays consistent
        return max(0.0, math.hypot(c[0] - gx, c[1] - gy) - tol_cells)

    g = {start: 0.0}
    parent = {start: None}
    heap = [(h(start), 0.0, start)]
    closed = set()
    while heap:
        _, gc, cur = heapq.heappop(heap)
        if cur in closed:
            continue
        closed.add(cur)
        if cur in goals:
            path = []
            while cur is not None:
                path.append(cur)
                cur = parent[cur]
            return path[::-1]
        for nx, ny, c in neighbors(mask, *cur):
            nxt = (nx, ny)
            ng = gc + c
            if ng < g.get(nxt, math.inf):
                g[nxt] = ng
                parent[nxt] = cur
                heapq.heappush(heap, (ng + h(nxt), ng, nxt))
    return None


def path_cost(cells) -> float:
    """Length of a cell path in cell units."""
    return sum(
        math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in zip(cells, cells[1:])
    )


def plan_path(belief: BeliefMap, start: tuple[float, float], goal: tuple[float, float],
              inflation: float = INFLATION_M, goal_tolerance: float = GOAL_TOLERANCE_M,
              plannable: np.ndarray | None = None) -> PlannedPath:
    """A* over inflated free space.

    The start cell must be Free but may sit inside the inflation zone; the
    robot then first escapes to the nearest clear cell.  The goal cell must be
    Free, and any clear cell within ``goal_tolerance`` of the goal ends the
    search.
    """
    res = belief.resolution
    try:
        s = world_to_grid(belief, *start)
    except OutOfBounds as exc:
        raise StartBlocked(str(exc)) from exc
    if belief.cells[s] != Belief.FREE:
        raise StartBlocked(f"start cell {s} is not Free")
    try:
        gcell = world_to_grid(belief, *goal)
    except OutOfBounds as exc:
        raise Unreachable(str(exc)) from exc
    if belief.cells[gcell] != Belief.FREE:
        raise Unreachable(f"goal cell {gcell} is not Free")

    if plannable is None:
        plannable = plannable_mask(belief, inflation)
    # goal region: clear cells whose centers lie within tolerance of the goal point
    gx, gy = goal[0] / res - 0.5, goal[1] / res - 0.5
    tol = goal_tolerance / res
    r = int(math.ceil(tol)) + 1
    w, h = plannable.shape
    goals = set()
    for ix in range(max(0, gcell[0] - r), min(w, gcell[0] + r + 1)):
        for iy in range(max(0, gcell[1] - r), min(h, gcell[1] + r + 1)):
            if plannable[ix, iy] and math.hypot(ix - gx, iy - gy) <= tol + 1e-9:
                goals.add((ix, iy))
    if math.hypot(s[0] - gx, s[1] - gy) <= tol + 1e-9:
        center = ((s[0] + 0.5) * res, (s[1] + 0.5) * res)
        return PlannedPath((center,), (s,), 0.0, goal=tuple(goal))
    if not goals:
        raise Unreachable(f"no clear cell within {goal_tolerance} m of goal {goal}")

    prefix: list[tuple[int, int]] = []
    origin = s
    if not plannable[s]:
        esc = _escape(belief.cells == Belief.FREE, plannable, s)
        if esc is None:
            raise Unreachable(f"robot at {s} is boxed in by inflated space")
        prefix, origin = esc[:-1], esc[-1]

    cells = _astar(plannable, origin, goals, (gx, gy), tol)
    if cells is None:
        raise Unreachable(f"no path from {start} to {goal}")
    cells = prefix + cells
    waypoints = tuple(((cx + 0.5) * res, (cy + 0.5) * res) for cx, cy in cells)
    return PlannedPath(waypoints, tuple(cells), path_cost(cells) * res, goal=tuple(goal))


def _sense_and_integrate(gt, belief, state, sensor: SensorConfig, pose: Pose) -> None:
    scan = sense(gt, pose, sensor.fov, sensor.ray_count, sensor.max_range)
    integrate_scan(belief, scan)
    state.sense_count += 1


def _path_blocked(plannable: np.ndarray, cells) -> bool:
    return any(not plannable[c] for c in cells)


def follow_path(gt: GroundTruthMap, belief: BeliefMap, state: ExplorationState, path: PlannedPath,
                sensor: SensorConfig = SensorConfig(), sense_every: float = SENSE_EVERY_M,
                inflation: float = INFLATION_M, goal_tolerance: float = GOAL_TOLERANCE_M,
                step: float = STEP_M, max_replans: int = 1) -> ExplorationState:
    """Drive along ``path`` in fixed steps, sensing periodically.

    Raises NavigationFailed when newly sensed obstacles block the rest of the
    path and the replanning budget is spent or replanning fails.
    """
    if path.length == 0:
        _sense_and_integrate(gt, belief, state, sensor, state.pose)
        return state

    replans = 0
    traveled = 0.0
    next_sense = sense_every
    occupied_seen = belief.count(Belief.OCCUPIED)

    while True:
        pts = [state.pose.xy] + [p for p in path.waypoints]
        if pts[0] == pts[1]:
            pts.pop(0)
            offset = 0
        else:
            offset = -1  # pts index i corresponds to waypoint i + offset
        seg_lengths = [math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in zip(pts, pts[1:])]
        total = sum(seg_lengths)
        s = 0.0
        seg = 0
        seg_start = 0.0
        replanned = False
        while s < total - 1e-12:
            s = min(s + step, total)
            if total - s < 1e-9:
                s = total
            while seg < len(seg_lengths) - 1 and seg_start + seg_lengths[seg] < s - 1e-12:
                seg_start += seg_lengths[seg]
                seg += 1
            a, b = pts[seg], pts[seg + 1]
            frac = 0.0 if seg_lengths[seg] == 0 else (s - seg_start) / seg_lengths[seg]
            frac = min(max(frac, 0.0), 1.0)
            x = a[0] + (b[0] - a[0]) * frac
            y = a[1] + (b[1] - a[1]) * frac
            heading = math.atan2(b[1] - a[1], b[0] - a[0]) if seg_lengths[seg] > 0 else state.pose.heading
            prev = state.pose.xy
            state.move_to(Pose(x, y, heading))
            traveled += math.hypot(x - prev[0], y - prev[1])

            if traveled >= next_sense - 1e-9:
                _sense_and_integrate(gt, belief, state, sensor, state.pose)
                while next_sense <= traveled + 1e-9:
                    next_sense += sense_every
                occ = belief.count(Belief.OCCUPIED)
                if occ != occupied_seen:
                    occupied_seen = occ
                    plannable = plannable_mask(belief, inflation)
                    ahead = path.cells[max(0, seg + 1 + offset):]
                    if s < total and _path_blocked(plannable, ahead):
                        if replans >= max_replans:
                            raise NavigationFailed("path blocked by newly sensed obstacle")
                        replans += 1
                        try:
                            path = plan_path(belief, state.pose.xy, path.goal, inflation,
                                             goal_tolerance, plannable=plannable)
                        except (Unreachable, StartBlocked) as exc:
                            raise NavigationFailed(f"replanning failed: {exc}") from exc
                        log.debug("replanned after %.2f m", traveled)
                        replanned = True
                        break
        if not replanned:
            return state


def scan_headings(heading: float, fov: float) -> list[float]:
    n = math.ceil(2 * math.pi / fov - 1e-9) + 1
    return [heading + i * 2 * math.pi / n for i in range(n)]


def rotate_scan_360(gt: GroundTruthMap, belief: BeliefMap, state: ExplorationState,
                    sensor: SensorConfig = SensorConfig()) -> ExplorationState:
    """Spin in place, sensing at evenly spaced headings, and mark a scan location."""
    start = state.pose
    for h in scan_headings(start.heading, sensor.fov):
        _sense_and_integrate(gt, belief, state, sensor, Pose(start.x, start.y, h))
    state.pose = start
    state.scan_locations.append(start.xy)
    return state
