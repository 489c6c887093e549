"""Procedural room-and-corridor environments.

The map is divided into a coarse grid of blocks separated by thin walls.  A
randomized depth-first search carves a spanning tree of doorways between
blocks (so every block is reachable and dead ends exist), then ``room_count``
rectangular groups of blocks have their internal walls removed to form
larger rooms.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from .errors import InfeasibleParameters
from .grid_map import DEFAULT_RESOLUTION, Cell, GroundTruthMap, Pose

WALL_THICKNESS_M = 0.15
DOOR_WIDTH_M = 1.2
BLOCK_SIZE_M = 2.5

# room footprints in blocks, tried largest first
_ROOM_SHAPES = [(2, 2), (2, 1), (1, 2)]


def _boundaries(n_cells: int, n_blocks: int, wall: int) -> list[int]:
    return [round(k * (n_cells - wall) / n_blocks) for k in range(n_blocks + 1)]


def generate_maze(seed: int, width_m: float = 10.0, height_m: float = 10.0, room_count: int = 3,
                  resolution: float = DEFAULT_RESOLUTION) -> GroundTruthMap:
    if width_m < 4 or height_m < 4:
        raise InfeasibleParameters("maze must be at least 4 m on each side")
    if room_count < 1:
        raise InfeasibleParameters("room_count must be >= 1")
    rng = np.random.default_rng(seed)

    W = int(round(width_m / resolution))
    H = int(round(height_m / resolution))
    wall = max(1, int(round(WALL_THICKNESS_M / resolution)))
    door = max(3, int(round(DOOR_WIDTH_M / resolution)))
    nx = max(1, int(width_m // BLOCK_SIZE_M))
    ny = max(1, int(height_m // BLOCK_SIZE_M))
    bx = _boundaries(W, nx, wall)
    by = _boundaries(H, ny, wall)

    # rooms: groups of blocks merged into one open space
    room_of = -np.ones((nx, ny), dtype=int)
    rooms: list[tuple[int, int, int, int]] = []
    shapes = [s for s in _ROOM_SHAPES if s[0] <= nx and s[1] <= ny] or [(1, 1)]
    for r in range(room_count):
        spots = [
            (i, j, w, h)
            for (w, h) in shapes
            for i in range(nx - w + 1)
            for j in range(ny - h + 1)
            if (room_of[i:i + w, j:j + h] < 0).all()
        ]
        if not spots:
            raise InfeasibleParameters(
                f"cannot fit {room_count} rooms into a {nx}x{ny} block layout"
            )
        # prefer the largest footprint still available
        best = max(w * h for _, _, w, h in spots)
        spots = [s for s in spots if s[2] * s[3] == best]
        i, j, w, h = spots[rng.integers(len(spots))]
        room_of[i:i + w, j:j + h] = r
        rooms.append((i, j, w, h))

    cells = np.full((W, H), Cell.OBSTACLE, dtype=np.uint8)
    for i in range(nx):
        for j in range(ny):
            cells[bx[i] + wall:bx[i + 1], by[j] + wall:by[j + 1]] = Cell.TRAVERSABLE

    # merge room blocks: clear the walls strictly inside each room footprint
    for (i, j, w, h) in rooms:
        cells[bx[i] + wall:bx[i + w], by[j] + wall:by[j + h]] = Cell.TRAVERSABLE

    # spanning tree over super-nodes (a room counts as one node)
    def node(i, j):
        return ("r", room_of[i, j]) if room_of[i, j] >= 0 else ("b", i, j)

    start_block = (int(rng.integers(nx)), int(rng.integers(ny)))
    visited = {node(*start_block)}
    # blocks of a room are entered together
    members: dict[tuple, list[tuple[int, int]]] = {}
    for i in range(nx):
        for j in range(ny):
            members.setdefault(node(i, j), []).append((i, j))
    frontier_stack = [node(*start_block)]
    doors: list[tuple[tuple[int, int], tuple[int, int]]] = []
    while frontier_stack:
        current = frontier_stack[-1]
        options = []
        for (i, j) in members[current]:
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ni, nj = i + di, j + dj
                if 0 <= ni < nx and 0 <= nj < ny and node(ni, nj) not in visited:
                    options.append(((i, j), (ni, nj)))
        if not options:
            frontier_stack.pop()
            continue
        a, b = options[rng.integers(len(options))]
        doors.append((a, b))
        visited.add(node(*b))
        frontier_stack.append(node(*b))

    for (i, j), (ni, nj) in doors:
        if ni != i:  # door in a vertical wall line
            k = max(i, ni)
            lo, hi = by[j] + wall, by[j + 1]
            mid = (lo + hi) // 2
            d = min(door, hi - lo)
            cells[bx[k]:bx[k] + wall, mid - d // 2:mid - d // 2 + d] = Cell.TRAVERSABLE
        else:
            k = max(j, nj)
            lo, hi = bx[i] + wall, bx[i + 1]
            mid = (lo + hi) // 2
            d = min(door, hi - lo)
            cells[mid - d // 2:mid - d // 2 + d, by[k]:by[k] + wall] = Cell.TRAVERSABLE

    # keep only the component holding the start (always everything, by construction)
    si, sj = start_block
    cx = (bx[si] + wall + bx[si + 1]) // 2
    cy = (by[sj] + wall + by[sj + 1]) // 2
    labels, _ = ndimage.label(cells == Cell.TRAVERSABLE, structure=ndimage.generate_binary_structure(2, 1))
    cells[(cells == Cell.TRAVERSABLE) & (labels != labels[cx, cy])] = Cell.OBSTACLE

    heading = float(rng.integers(4)) * math.pi / 2
    start = Pose((cx + 0.5) * resolution, (cy + 0.5) * resolution, heading)
    return GroundTruthMap(cells, resolution, start=start, name=f"maze{seed}")
