"""Frontier selection strategies.

Every strategy maps a :class:`DecisionContext` to a :class:`Decision` naming
one candidate label.  ``GreedyPolicy``, ``NBVPolicy`` and ``ScriptedPolicy``
are deterministic; ``VLMPolicy`` asks a chat model and falls back to the
nearest frontier whenever the exchange fails or the answer cannot be used.
"""

from __future__ import annotations

import logging
import math
import re
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Sequence

import numpy as np

from .errors import ParseFailure, ScriptExhausted, TransportError
from .frontier import FrontierCandidate
from .grid_map import Belief, BeliefMap, GroundTruthMap, Pose
from .render import png_bytes, render_annotated, render_frontier_view
from .vlm_client import ChatSession, ChatTurnRequest, ImagePart, TextPart

log = logging.getLogger(__name__)

PROMPT_VERSION = "v1"
NBV_GAIN_RADIUS_M = 5.0


def load_prompt(version: str = PROMPT_VERSION) -> str:
    return resources.files("vlm_explore.resources").joinpath(f"prompt_{version}.txt").read_text(encoding="utf-8")


@dataclass
class DecisionContext:
    belief: BeliefMap
    pose: Pose
    candidates: Sequence[FrontierCandidate]
    step: int = 0
    env_name: str = ""
    state: object | None = None
    gt: GroundTruthMap | None = None
    _map_image: object = field(default=None, init=False, repr=False)
    _views: list | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if not self.candidates:
            raise ValueError("a decision needs at least one candidate")

    @property
    def map_image(self):
        if self._map_image is None:
            self._map_image = render_annotated(self.belief, self.state, self.candidates)
        return self._map_image

    @property
    def frontier_views(self) -> list:
        if self._views is None:
            source = self.gt if self.gt is not None else self.belief
            self._views = [
                render_frontier_view(source, self.pose, c, belief=self.belief) for c in self.candidates
            ]
        return self._views


@dataclass(frozen=True)
class Decision:
    label: int
    rationale: str = ""
    policy: str = ""
    latency: float = 0.0
    fallback: bool = False
    attempts: int = 0


# ---------------------------------------------------------------------------
# greedy
# ---------------------------------------------------------------------------


def select_greedy(ctx: DecisionContext) -> Decision:
    return Decision(0, "nearest frontier", "greedy")


# ---------------------------------------------------------------------------
# NBV-lite
# ---------------------------------------------------------------------------


def line_of_sight(passable: np.ndarray, resolution: float, origin: tuple[float, float],
                  targets: np.ndarray) -> np.ndarray:
    """For each target cell, whether the segment from ``origin`` to its center is unobstructed.

    Uses the same supercover walk as the range sensor (corner crossings touch
    both side cells), run in lockstep for all targets.  ``targets`` is an
    ``(n, 2)`` integer array of cell indices; the target cell itself is not
    tested.
    """
    w, h = passable.shape
    x0, y0 = origin
    n = len(targets)
    if n == 0:
        return np.zeros(0, dtype=bool)
    tx = (targets[:, 0] + 0.5) * resolution
    ty = (targets[:, 1] + 0.5) * resolution
    dxw, dyw = tx - x0, ty - y0
    length = np.hypot(dxw, dyw)
    safe_len = np.where(length > 0, length, 1.0)
    dx, dy = dxw / safe_len, dyw / safe_len
    dx[np.abs(dx) < 1e-12] = 0.0
    dy[np.abs(dy) < 1e-12] = 0.0

    ix = np.full(n, math.floor(x0 / resolution), dtype=np.int64)
    iy = np.full(n, math.floor(y0 / resolution), dtype=np.int64)
    sx = np.sign(dx).astype(np.int64)
    sy = np.sign(dy).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        next_x = np.where(dx > 0, (ix + 1) * resolution, ix * resolution)
        next_y = np.where(dy > 0, (iy + 1) * resolution, iy * resolution)
        t_x = np.where(dx != 0, (next_x - x0) / dx, np.inf)
        t_y = np.where(dy != 0, (next_y - y0) / dy, np.inf)
        dt_x = np.where(dx != 0, resolution / np.abs(dx), np.inf)
        dt_y = np.where(dy != 0, resolution / np.abs(dy), np.inf)

    def blocked(cx, cy):
        inside = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h)
        out = ~inside
        out[inside] = ~passable[cx[inside], cy[inside]]
        return out

    clear = np.ones(n, dtype=bool)
    alive = length > 0
    while alive.any():
        idx = np.flatnonzero(alive)
        t = np.minimum(t_x[idx], t_y[idx])
        finished = t >= length[idx]
        alive[idx[finished]] = False
        idx, t = idx[~finished], t[~finished]
        if len(idx) == 0:
            break
        corner = np.abs(t_x[idx] - t_y[idx]) <= 1e-9
        cidx = idx[corner]
        if len(cidx):
            diag_x, diag_y = ix[cidx] + sx[cidx], iy[cidx] + sy[cidx]
            diag_is_target = (diag_x == targets[cidx, 0]) & (diag_y == targets[cidx, 1])
            bad = (blocked(ix[cidx] + sx[cidx], iy[cidx])
                   | blocked(ix[cidx], iy[cidx] + sy[cidx])
                   | (blocked(diag_x, diag_y) & ~diag_is_target))
            clear[cidx[bad]] = False
            alive[cidx[bad]] = False
            ok = cidx[~bad]
            ix[ok] += sx[ok]
            iy[ok] += sy[ok]
            t_x[ok] += dt_x[ok]
            t_y[ok] += dt_y[ok]
        rest = idx[~corner]
        xs = rest[t_x[rest] < t_y[rest]]
        ys = rest[t_x[rest] >= t_y[rest]]
        ix[xs] += sx[xs]
        t_x[xs] += dt_x[xs]
        iy[ys] += sy[ys]
        t_y[ys] += dt_y[ys]
        moved = np.concatenate([xs, ys])
        # reaching the target cell is never a block
        at_target = (ix[moved] == targets[moved, 0]) & (iy[moved] == targets[moved, 1])
        bad = blocked(ix[moved], iy[moved]) & ~at_target
        clear[moved[bad]] = False
        alive[moved[bad]] = False
    return clear


def disk_cells(shape: tuple[int, int], resolution: float, center: tuple[float, float], radius: float) -> np.ndarray:
    """Cells whose centers lie within ``radius`` of ``center``, as an ``(n, 2)`` array."""
    cx, cy = center
    r = radius / resolution
    gx, gy = cx / resolution - 0.5, cy / resolution - 0.5
    x0, x1 = max(0, int(math.floor(gx - r))), min(shape[0] - 1, int(math.ceil(gx + r)))
    y0, y1 = max(0, int(math.floor(gy - r))), min(shape[1] - 1, int(math.ceil(gy + r)))
    xs, ys = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1), indexing="ij")
    inside = (xs - gx) ** 2 + (ys - gy) ** 2 <= r * r + 1e-9
    return np.stack([xs[inside], ys[inside]], axis=1)


def information_gain(belief: BeliefMap, point: tuple[float, float], radius: float = NBV_GAIN_RADIUS_M) -> int:
    """Unknown cells within ``radius`` of ``point`` visible over non-Occupied cells."""
    cells = disk_cells(belief.shape, belief.resolution, point, radius)
    cells = cells[belief.cells[cells[:, 0], cells[:, 1]] == Belief.UNKNOWN]
    if len(cells) == 0:
        return 0
    passable = belief.cells != Belief.OCCUPIED
    return int(line_of_sight(passable, belief.resolution, point, cells).sum())


def select_nbv(ctx: DecisionContext, gain_radius: float = NBV_GAIN_RADIUS_M) -> Decision:
    res = ctx.belief.resolution
    gains = [information_gain(ctx.belief, c.midpoint_world, gain_radius) for c in ctx.candidates]
    scores = [g / max(c.distance, res) for g, c in zip(gains, ctx.candidates)]
    best = max(range(len(scores)), key=lambda i: (scores[i], -i))
    return Decision(best, f"gain {gains[best]} cells, score {scores[best]:.1f}", "nbv")


# ---------------------------------------------------------------------------
# scripted
# ---------------------------------------------------------------------------


def select_scripted(ctx: DecisionContext, script: Sequence[int]) -> Decision:
    if ctx.step >= len(script):
        raise ScriptExhausted(f"script has {len(script)} entries, decision {ctx.step} requested")
    want = int(script[ctx.step])
    label = min(max(want, 0), len(ctx.candidates) - 1)
    rationale = "scripted" if label == want else f"scripted {want} clamped to {label}"
    return Decision(label, rationale, "scripted")


# ---------------------------------------------------------------------------
# VLM
# ---------------------------------------------------------------------------

_BARE_INT = re.compile(r"\d+")


def parse_vlm_reply(text: str) -> tuple[int, str]:
    """Split a reply into (label, rationale).

    The first non-empty line must be a bare non-negative integer; everything
    after it is the rationale.
    """
    lines = (text or "").splitlines()
    for i, line in enumerate(lines):
        if line.strip():
            head = line.strip()
            if not _BARE_INT.fullmatch(head):
                raise ParseFailure(f"first line is not a frontier number: {head[:60]!r}")
            return int(head), "\n".join(lines[i + 1:]).strip()
    raise ParseFailure("empty reply")


def build_vlm_request(ctx: DecisionContext, prompt: str | None = None) -> ChatTurnRequest:
    parts = [ImagePart(png_bytes(ctx.map_image))]
    parts += [ImagePart(png_bytes(v)) for v in ctx.frontier_views]
    parts.append(TextPart(prompt if prompt is not None else load_prompt()))
    return ChatTurnRequest(tuple(parts))


def _fallback(reason: str, latency: float, attempts: int) -> Decision:
    log.warning("VLM decision fell back to greedy: %s", reason)
    return Decision(0, f"fallback to nearest frontier: {reason}", "vlm", latency, True, attempts)


def select_vlm(ctx: DecisionContext, session: ChatSession, prompt: str | None = None) -> Decision:
    t0 = time.monotonic()
    try:
        request = build_vlm_request(ctx, prompt)
        reply = session.send(request)
    except TransportError as exc:
        return _fallback(f"transport error: {exc}", time.monotonic() - t0, session.retry.max_retries + 1)
    try:
        label, rationale = parse_vlm_reply(reply.text)
        if label >= len(ctx.candidates):
            raise ParseFailure(f"frontier {label} does not exist ({len(ctx.candidates)} candidates)")
    except ParseFailure as exc:
        return _fallback(str(exc), reply.latency, reply.attempts)
    return Decision(label, rationale, "vlm", reply.latency, False, reply.attempts)


# ---------------------------------------------------------------------------
# policy objects
# ---------------------------------------------------------------------------


class GreedyPolicy:
    name = "greedy"

    def __call__(self, ctx: DecisionContext) -> Decision:
        return select_greedy(ctx)


class NBVPolicy:
    name = "nbv"

    def __init__(self, gain_radius: float = NBV_GAIN_RADIUS_M):
        self.gain_radius = gain_radius

    def __call__(self, ctx: DecisionContext) -> Decision:
        return select_nbv(ctx, self.gain_radius)


class ScriptedPolicy:
    name = "scripted"

    def __init__(self, script: Sequence[int]):
        self.script = list(script)

    def __call__(self, ctx: DecisionContext) -> Decision:
        return select_scripted(ctx, self.script)


class VLMPolicy:
    name = "vlm"
    needs_images = True

    def __init__(self, session: ChatSession, prompt: str | None = None):
        self.session = session
        self.prompt = prompt

    def __call__(self, ctx: DecisionContext) -> Decision:
        return select_vlm(ctx, self.session, self.prompt)
