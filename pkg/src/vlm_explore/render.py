"""Raster renders: the annotated decision map and per-frontier view panels."""

from __future__ import annotations

import io
import math
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .grid_map import Belief, BeliefMap, Cell, GroundTruthMap, Pose, traverse

FREE_RGB = (255, 255, 255)
UNKNOWN_RGB = (128, 128, 128)
OCCUPIED_RGB = (0, 0, 0)
TRAJECTORY_RGB = (0, 0, 255)
SCAN_RGB = (0, 170, 0)
ROBOT_RGB = (255, 0, 0)
HEADING_RGB = (255, 140, 0)
FRONTIER_RGB = (255, 215, 0)
LABEL_RGB = (128, 0, 160)

VIEW_COLUMNS = 90
VIEW_COL_PX = 2
VIEW_PROFILE_H = 64
VIEW_CROP_CELLS = 64
VIEW_RANGE_M = 5.0


def png_bytes(image: Image.Image) -> bytes:
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()


def _belief_rgb(cells: np.ndarray) -> np.ndarray:
    lut = np.zeros((len(Belief), 3), dtype=np.uint8)
    lut[Belief.FREE] = FREE_RGB
    lut[Belief.UNKNOWN] = UNKNOWN_RGB
    lut[Belief.OCCUPIED] = OCCUPIED_RGB
    return lut[np.flipud(cells.T)]


def _gt_as_belief(gt: GroundTruthMap) -> np.ndarray:
    out = np.full(gt.shape, Belief.OCCUPIED, dtype=np.uint8)
    out[gt.cells == Cell.TRAVERSABLE] = Belief.FREE
    out[gt.cells == Cell.OUT_OF_BOUNDS] = Belief.UNKNOWN
    return out


class _Canvas:
    """Maps world meters to pixel centers on a y-up image."""

    def __init__(self, height_cells: int, resolution: float, scale: int):
        self.h = height_cells
        self.res = resolution
        self.scale = scale

    def px(self, x: float, y: float) -> tuple[float, float]:
        s = self.scale
        return (x / self.res * s - 0.5, (self.h - y / self.res) * s - 0.5)


def render_annotated(belief: BeliefMap, state=None, candidates: Sequence = (),
                     path: str | Path | None = None, scale: int = 1) -> Image.Image:
    """Belief map with trajectory, scan spots, robot pose, and labeled candidates.

    White is free, grey unknown, black occupied; blue trajectory, green scan
    locations, red robot with an orange heading arrow, yellow candidate
    contours labeled ``(0)`` .. ``(k-1)`` at their midpoints.
    """
    rgb = _belief_rgb(belief.cells)
    for cand in candidates:
        for cx, cy in cand.contour.cells:
            rgb[belief.height - 1 - cy, cx] = FRONTIER_RGB
    img = Image.fromarray(rgb)
    if scale != 1:
        img = img.resize((img.width * scale, img.height * scale), Image.NEAREST)
    draw = ImageDraw.Draw(img)
    canvas = _Canvas(belief.height, belief.resolution, scale)
    dot = max(1.5, 1.5 * scale)

    if state is not None:
        traj = [canvas.px(x, y) for x, y in state.trajectory]
        if len(traj) >= 2:
            draw.line(traj, fill=TRAJECTORY_RGB, width=max(1, scale // 2))
        for x, y in state.scan_locations:
            u, v = canvas.px(x, y)
            draw.ellipse((u - dot, v - dot, u + dot, v + dot), fill=SCAN_RGB)
        pose = state.pose
        u, v = canvas.px(pose.x, pose.y)
        arrow = 0.4 / belief.resolution * scale
        tip = (u + arrow * math.cos(pose.heading), v - arrow * math.sin(pose.heading))
        draw.line([(u, v), tip], fill=HEADING_RGB, width=max(1, scale // 2))
        draw.ellipse((u - dot, v - dot, u + dot, v + dot), fill=ROBOT_RGB)

    if candidates:
        font = ImageFont.load_default()
        for cand in candidates:
            u, v = canvas.px(*cand.midpoint_world)
            draw.text((u + 2, v - 2), f"({cand.label})", fill=LABEL_RGB, font=font, anchor="ld")

    if path is not None:
        img.save(path, format="PNG")
    return img


def render_frontier_view(source: GroundTruthMap | BeliefMap, robot: Pose, candidate,
                         belief: BeliefMap | None = None, fov: float = math.pi / 2,
                         max_range: float = VIEW_RANGE_M) -> Image.Image:
    """Synthetic "camera" panel facing a frontier.

    Top strip: one column per ray across ``fov`` centered on the bearing to the
    candidate midpoint, shaded by range (near dark, far light).  Bottom: a crop
    of the map around the midpoint, candidate contour highlighted.
    """
    if isinstance(source, GroundTruthMap):
        passable, res = source.traversable, source.resolution
        crop_cells = belief.cells if belief is not None else _gt_as_belief(source)
    else:
        passable, res = source.cells == Belief.FREE, source.resolution
        crop_cells = (belief or source).cells

    mx, my = candidate.midpoint_world
    bearing = math.atan2(my - robot.y, mx - robot.x)
    width = VIEW_COLUMNS * VIEW_COL_PX
    profile = np.zeros((VIEW_PROFILE_H, width, 3), dtype=np.uint8)
    for i in range(VIEW_COLUMNS):
        # leftmost column looks furthest counter-clockwise
        a = bearing + fov / 2 - (i + 0.5) * fov / VIEW_COLUMNS
        r = traverse(passable, res, robot.x, robot.y, a, max_range).range
        shade = int(round(40 + 215 * min(r, max_range) / max_range))
        profile[:, i * VIEW_COL_PX:(i + 1) * VIEW_COL_PX] = shade

    half = VIEW_CROP_CELLS // 2
    cx, cy = candidate.contour.midpoint
    crop = np.full((VIEW_CROP_CELLS, VIEW_CROP_CELLS), Belief.UNKNOWN, dtype=np.uint8)
    x0, y0 = cx - half, cy - half
    sx0, sy0 = max(0, x0), max(0, y0)
    sx1 = min(crop_cells.shape[0], x0 + VIEW_CROP_CELLS)
    sy1 = min(crop_cells.shape[1], y0 + VIEW_CROP_CELLS)
    if sx1 > sx0 and sy1 > sy0:
        crop[sx0 - x0:sx1 - x0, sy0 - y0:sy1 - y0] = crop_cells[sx0:sx1, sy0:sy1]
    crop_rgb = _belief_rgb(crop)
    for fx, fy in candidate.contour.cells:
        u, v = fx - x0, fy - y0
        if 0 <= u < VIEW_CROP_CELLS and 0 <= v < VIEW_CROP_CELLS:
            crop_rgb[VIEW_CROP_CELLS - 1 - v, u] = FRONTIER_RGB
    crop_img = Image.fromarray(crop_rgb).resize((width, width), Image.NEAREST)

    panel = Image.new("RGB", (width, VIEW_PROFILE_H + width), UNKNOWN_RGB)
    panel.paste(Image.fromarray(profile), (0, 0))
    panel.paste(crop_img, (0, VIEW_PROFILE_H))
    return panel
