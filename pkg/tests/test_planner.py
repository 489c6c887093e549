import math

import numpy as np
import pytest

import oracles
from vlm_explore.errors import NavigationFailed, StartBlocked, Unreachable
from vlm_explore.grid_map import Belief, BeliefMap, Cell, GroundTruthMap, Pose, from_ascii, world_to_grid
from vlm_explore.planner import follow_path, plan_path, plannable_mask, rotate_scan_360, scan_headings
from vlm_explore.state import ExplorationState, SensorConfig

RES = 0.05


def center(ix, iy):
    return ((ix + 0.5) * RES, (iy + 0.5) * RES)


def belief_rows(rows):
    """'.' Free, '#' Occupied, '?' Unknown; top row is the largest y."""
    table = {".": Belief.FREE, "#": Belief.OCCUPIED, "?": Belief.UNKNOWN}
    img = np.array([[table[c] for c in r] for r in rows], dtype=np.uint8)
    return BeliefMap(np.ascontiguousarray(img[::-1].T), RES)


def move_counts(cells):
    straight = sum(1 for a, b in zip(cells, cells[1:]) if (a[0] == b[0]) != (a[1] == b[1]))
    return straight, len(cells) - 1 - straight


# -- plan_path ------------------------------------------------------------------


def test_straight_corridor():
    b = belief_rows(["." * 10])
    path = plan_path(b, center(0, 0), center(9, 0), inflation=0.0, goal_tolerance=0.0)
    assert len(path.waypoints) == 10
    assert path.length == pytest.approx(9 * RES)


def test_goal_behind_wall():
    b = belief_rows(["....#...."] * 5)
    with pytest.raises(Unreachable):
        plan_path(b, center(0, 2), center(8, 2), inflation=0.0, goal_tolerance=0.0)


@pytest.mark.parametrize("goal_state", ["?", "#"])
def test_goal_cell_must_be_free(goal_state):
    b = belief_rows(["....." + goal_state])
    with pytest.raises(Unreachable):
        plan_path(b, center(0, 0), center(5, 0), inflation=0.0)


def test_start_must_be_free():
    b = belief_rows(["?...."])
    with pytest.raises(StartBlocked):
        plan_path(b, center(0, 0), center(4, 0), inflation=0.0)


def test_goal_tolerance_accepts_nearby_cell():
    # goal cell is Free but walled in; a clear cell 0.25 m away ends the search
    b = belief_rows(["........#."])
    path = plan_path(b, center(0, 0), center(9, 0), inflation=0.0, goal_tolerance=0.3)
    assert math.dist(path.waypoints[-1], center(9, 0)) <= 0.3 + 1e-9


def test_no_corner_cutting():
    b = belief_rows(["..#",
                     "#..",
                     "..."])
    path = plan_path(b, center(0, 2), center(2, 1), inflation=0.0, goal_tolerance=0.0)
    # the direct diagonal (0,2)->(1,1) would squeeze between two occupied cells
    assert path.cells[1] == (1, 2)


def test_inflation_keeps_path_off_walls():
    rows = ["#" * 20] + ["#" + "." * 18 + "#"] * 9 + ["#" * 20]
    b = belief_rows(rows)
    path = plan_path(b, center(10, 5), center(15, 5), inflation=0.15)
    mask = plannable_mask(b, 0.15)
    assert all(mask[c] for c in path.cells)


def test_path_invariants_on_random_grids():
    rng = np.random.default_rng(21)
    for _ in range(20):
        cells = np.where(rng.random((25, 25)) < 0.25, Belief.OCCUPIED, Belief.FREE).astype(np.uint8)
        b = BeliefMap(cells, RES)
        free = np.argwhere(cells == Belief.FREE)
        s, g = free[rng.choice(len(free), 2, replace=False)]
        try:
            p = plan_path(b, center(*s), center(*g), inflation=0.0, goal_tolerance=0.0)
        except Unreachable:
            assert oracles.dijkstra_cost((cells == Belief.FREE).tolist(), tuple(s), tuple(g)) is None
            continue
        assert all(max(abs(a[0] - c[0]), abs(a[1] - c[1])) == 1 for a, c in zip(p.cells, p.cells[1:]))
        seg = sum(math.dist(a, c) for a, c in zip(p.waypoints, p.waypoints[1:]))
        assert p.length == pytest.approx(seg)


def test_astar_matches_dijkstra():
    rng = np.random.default_rng(9)
    checked = 0
    while checked < 20:
        cells = np.where(rng.random((30, 30)) < 0.3, Belief.OCCUPIED, Belief.FREE).astype(np.uint8)
        passable = (cells == Belief.FREE).tolist()
        free = np.argwhere(cells == Belief.FREE)
        s, g = (tuple(map(int, c)) for c in free[rng.choice(len(free), 2, replace=False)])
        want = oracles.dijkstra_cost(passable, s, g)
        if want is None:
            continue
        p = plan_path(BeliefMap(cells, RES), center(*s), center(*g), inflation=0.0, goal_tolerance=0.0)
        assert move_counts(p.cells) == want
        checked += 1


# -- follow_path -------------------------------------------------------------------


def open_room(w=80, h=40):
    cells = np.full((w, h), Cell.TRAVERSABLE, dtype=np.uint8)
    cells[0, :] = cells[-1, :] = cells[:, 0] = cells[:, -1] = Cell.OBSTACLE
    return GroundTruthMap(cells, RES)


def known_belief(gt):
    return BeliefMap(np.where(gt.traversable, Belief.FREE, Belief.OCCUPIED).astype(np.uint8), RES)


def test_two_meter_path_senses_eight_times():
    gt = open_room()
    b = known_belief(gt)
    start, goal = center(10, 20), center(50, 20)
    state = ExplorationState.start(Pose(*start, 0.0))
    path = plan_path(b, start, goal, inflation=0.0, goal_tolerance=0.0)
    assert path.length == pytest.approx(2.0)
    follow_path(gt, b, state, path, sense_every=0.25)
    assert state.sense_count == 8
    assert math.dist(state.pose.xy, goal) <= 0.1
    steps = [math.dist(a, c) for a, c in zip(state.trajectory, state.trajectory[1:])]
    assert max(steps) <= 0.1 + 1e-9
    assert state.distance == pytest.approx(2.0)


def test_zero_length_path_senses_once():
    gt = open_room()
    b = known_belief(gt)
    start = center(10, 20)
    state = ExplorationState.start(Pose(*start, 0.0))
    path = plan_path(b, start, start, inflation=0.0)
    follow_path(gt, b, state, path)
    assert state.sense_count == 1 and state.trajectory == [start] and state.distance == 0


def test_unseen_wall_fails_after_replan():
    # the robot believes a straight corridor is open; a full-height wall hides at x = 2 m
    gt_cells = np.full((80, 12), Cell.TRAVERSABLE, dtype=np.uint8)
    gt_cells[40, :] = Cell.OBSTACLE
    gt = GroundTruthMap(gt_cells, RES)
    b = BeliefMap(np.full((80, 12), Belief.FREE, dtype=np.uint8), RES)
    state = ExplorationState.start(Pose(*center(2, 6), 0.0))
    path = plan_path(b, center(2, 6), center(70, 6), inflation=0.0, goal_tolerance=0.0)
    with pytest.raises(NavigationFailed):
        follow_path(gt, b, state, path, SensorConfig(max_range=2.5), inflation=0.0, goal_tolerance=0.0)
    # never entered an obstacle cell
    assert all(gt.traversable[world_to_grid(gt, *p)] for p in state.trajectory)


def test_replan_detours_around_partial_wall():
    gt_cells = np.full((80, 40), Cell.TRAVERSABLE, dtype=np.uint8)
    gt_cells[40, 0:25] = Cell.OBSTACLE
    gt = GroundTruthMap(gt_cells, RES)
    b = BeliefMap(np.full((80, 40), Belief.FREE, dtype=np.uint8), RES)
    state = ExplorationState.start(Pose(*center(2, 10), 0.0))
    path = plan_path(b, center(2, 10), center(70, 10), inflation=0.0, goal_tolerance=0.0)
    follow_path(gt, b, state, path, SensorConfig(fov=math.pi / 2, max_range=2.5), inflation=0.0,
                goal_tolerance=0.0)
    assert math.dist(state.pose.xy, center(70, 10)) <= 0.1
    assert all(gt.traversable[world_to_grid(gt, *p)] for p in state.trajectory)


# -- rotate_scan_360 --------------------------------------------------------------


def test_scan_headings_for_quarter_fov():
    hs = scan_headings(0.0, math.pi / 2)
    assert len(hs) == 5
    assert hs[1] - hs[0] == pytest.approx(2 * math.pi / 5)


def test_rotation_in_empty_room_reveals_disk():
    n = 160  # 8 m square room
    cells = np.full((n, n), Cell.TRAVERSABLE, dtype=np.uint8)
    cells[0, :] = cells[-1, :] = cells[:, 0] = cells[:, -1] = Cell.OBSTACLE
    gt = GroundTruthMap(cells, RES)
    b = BeliefMap.like(gt)
    state = ExplorationState.start(Pose(4.0, 4.0, 0.3))
    rotate_scan_360(gt, b, state, SensorConfig(max_range=5.0))
    xs, ys = np.meshgrid(np.arange(n) + 0.5, np.arange(n) + 0.5, indexing="ij")
    within = np.hypot(xs * RES - 4.0, ys * RES - 4.0) <= 4.0
    assert (b.cells[within] != Belief.UNKNOWN).all()
    assert state.pose == Pose(4.0, 4.0, 0.3)
    assert state.scan_locations == [(4.0, 4.0)] and state.sense_count == 5


def test_second_rotation_adds_nothing():
    gt = from_ascii(["#" * 40] + ["#" + "." * 38 + "#"] * 20 + ["#" * 40])
    b = BeliefMap.like(gt)
    state = ExplorationState.start(Pose(1.0, 0.5, 0.0))
    rotate_scan_360(gt, b, state)
    once = b.cells.copy()
    rotate_scan_360(gt, b, state)
    assert np.array_equal(once, b.cells)
