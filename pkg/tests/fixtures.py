"""Hand-built environments shared by several test modules."""

from __future__ import annotations

import numpy as np

from vlm_explore.grid_map import BeliefMap, Cell, GroundTruthMap, Pose

RES = 0.05


def blank(w_m, h_m):
    return np.full((round(w_m / RES), round(h_m / RES)), Cell.OBSTACLE, dtype=np.uint8)


def carve(cells, x0, y0, x1, y1):
    """Open the axis-aligned rectangle [x0, x1) x [y0, y1) given in meters."""
    cells[round(x0 / RES):round(x1 / RES), round(y0 / RES):round(y1 / RES)] = Cell.TRAVERSABLE
    return cells


def cross_map() -> GroundTruthMap:
    """Four 1.2 m wide, 4.4 m long corridors meeting at a 1.2 m square hub at (5, 5)."""
    c = blank(10, 10)
    carve(c, 0.2, 4.4, 9.8, 5.6)
    carve(c, 4.4, 0.2, 5.6, 9.8)
    return GroundTruthMap(c, RES, start=Pose(5.0, 5.0, 0.0), name="cross")


def t_junction_map() -> GroundTruthMap:
    """Start at the bottom of a stem; the stem meets a cross bar with a short
    dead end to the west and a long branch into a room to the east."""
    c = blank(16, 10)
    carve(c, 7.4, 0.2, 8.6, 5.0)       # stem going north from the start
    carve(c, 4.8, 3.8, 8.6, 5.0)       # west arm: 2.6 m dead end
    carve(c, 7.4, 3.8, 12.0, 5.0)      # east arm
    carve(c, 12.0, 2.0, 15.8, 8.0)     # room at the end of the east arm
    return GroundTruthMap(c, RES, start=Pose(8.0, 0.8, np.pi / 2), name="tjunction")


def known_belief(gt: GroundTruthMap) -> BeliefMap:
    from vlm_explore.grid_map import Belief

    return BeliefMap(np.where(gt.traversable, Belief.FREE, Belief.OCCUPIED).astype(np.uint8), RES)


def slit_trap_map() -> GroundTruthMap:
    """A closed room whose east wall has a one-cell slit onto a large hall.

    The robot sees into the hall through the slit, so the hall produces a
    frontier, but the slit is far narrower than the inflated robot: every plan
    to that frontier fails.
    """
    c = blank(8, 4)
    carve(c, 0.2, 0.2, 2.95, 3.8)      # the robot's room
    carve(c, 3.0, 0.2, 7.8, 3.8)       # the hall behind a 0.05 m wall
    c[round(2.95 / RES), round(2.0 / RES)] = Cell.TRAVERSABLE  # the slit
    return GroundTruthMap(c, RES, start=Pose(2.0, 2.0, 0.0), name="slit_trap")


def belief_coverage(gt: GroundTruthMap, belief: BeliefMap) -> float:
    """Fraction of cells reachable from the start that the belief has observed."""
    from vlm_explore.grid_map import Belief, reachable_mask

    reach = reachable_mask(gt)
    return float(((belief.cells != Belief.UNKNOWN) & reach).sum() / reach.sum())


def open_room_map(w_m=6.0, h_m=6.0) -> GroundTruthMap:
    c = carve(blank(w_m, h_m), 0.1, 0.1, w_m - 0.1, h_m - 0.1)
    return GroundTruthMap(c, RES, start=Pose(w_m / 2, h_m / 2, 0.0), name="room")
