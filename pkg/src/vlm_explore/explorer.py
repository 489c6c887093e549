"""Closed-loop frontier exploration.

One iteration: look for candidate frontiers around the robot; with two or
more, remember the spot as a decision point and let the policy choose; with
one, just go; with none, backtrack to the nearest remembered decision point.
Every frontier goal is blacklisted once reached or found unreachable, and the
robot spins for a full scan at each arrival.  The run ends when no candidates
remain and the decision-point list is empty, or when a budget runs out.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import NavigationFailed, ScriptExhausted, StartBlocked, Unreachable
from .frontier import (
    BLACKLIST_RADIUS_M,
    MAX_CANDIDATES,
    MIN_FRONTIER_SIZE,
    PROXIMITY_RADIUS_M,
    FrontierCandidate,
    candidates_for,
)
from .grid_map import Belief, BeliefMap, GroundTruthMap, Pose, save_belief, save_environment
from .planner import GOAL_TOLERANCE_M, INFLATION_M, SENSE_EVERY_M, follow_path, plan_path, rotate_scan_360
from .policy import Decision, DecisionContext
from .render import render_annotated
from .state import DecisionPoint, ExplorationState, SensorConfig

log = logging.getLogger(__name__)

DP_DEDUP_RADIUS_M = 0.5
MAX_STEPS = 500
MAX_DISTANCE_M = 2000.0

COMPLETE = "complete"
BUDGET_STEPS = "budget_steps"
BUDGET_DISTANCE = "budget_distance"
SCRIPT_EXHAUSTED = "script_exhausted"
BUDGET_REASONS = (BUDGET_STEPS, BUDGET_DISTANCE)


@dataclass(frozen=True)
class ExplorerConfig:
    sensor: SensorConfig = SensorConfig()
    sense_every: float = SENSE_EVERY_M
    inflation: float = INFLATION_M
    goal_tolerance: float = GOAL_TOLERANCE_M
    min_size: int = MIN_FRONTIER_SIZE
    radius: float = PROXIMITY_RADIUS_M
    k: int = MAX_CANDIDATES
    blacklist_radius: float = BLACKLIST_RADIUS_M
    dp_dedup_radius: float = DP_DEDUP_RADIUS_M
    max_steps: int = MAX_STEPS
    max_distance: float = MAX_DISTANCE_M
    max_replans: int = 1
    frames_dir: str | None = None

    def as_dict(self) -> dict:
        d = asdict(self)
        sensor = d.pop("sensor")
        return {**{f"sensor_{k}": v for k, v in sensor.items()}, **d}


@dataclass
class RunRecord:
    env_name: str
    policy: str
    seed: int
    config: dict
    events: list[dict] = field(default_factory=list)
    trajectory: list[tuple[float, float]] = field(default_factory=list)
    headings: list[float] = field(default_factory=list)
    distance: float = 0.0
    reason: str | None = None
    belief: BeliefMap | None = field(default=None, repr=False)
    state: ExplorationState | None = field(default=None, repr=False)

    def decisions(self) -> list[dict]:
        return [e for e in self.events if e["type"] == "decision"]

    def events_of(self, kind: str) -> list[dict]:
        return [e for e in self.events if e["type"] == kind]


def record_decision_point(state: ExplorationState, candidates, dedup_radius: float = DP_DEDUP_RADIUS_M) -> bool:
    """Remember the current pose if it offers a real choice; returns whether one was added."""
    if len(candidates) < 2:
        return False
    x, y = state.pose.xy
    for dp in state.dp_list:
        if math.hypot(dp.position[0] - x, dp.position[1] - y) <= dedup_radius:
            return False
    state.dp_list.append(DecisionPoint((x, y), state.step))
    return True


def nearest_decision_point(state: ExplorationState) -> DecisionPoint | None:
    if not state.dp_list:
        return None
    x, y = state.pose.xy
    return min(state.dp_list, key=lambda dp: math.hypot(dp.position[0] - x, dp.position[1] - y))


class Explorer:
    """Owns the mutable state of one exploration run."""

    def __init__(self, gt: GroundTruthMap, start: Pose, policy, config: ExplorerConfig = ExplorerConfig(),
                 seed: int = 0):
        self.gt = gt
        self.policy = policy
        self.config = config
        self.belief = BeliefMap.like(gt)
        self.state = ExplorationState.start(start, config.blacklist_radius)
        self.record = RunRecord(
            env_name=gt.name,
            policy=getattr(policy, "name", type(policy).__name__),
            seed=seed,
            config=config.as_dict(),
        )
        self.decision_count = 0
        self._t0 = time.monotonic()

    # -- bookkeeping -------------------------------------------------------

    def log(self, kind: str, **data) -> None:
        event = {"type": kind, "step": self.state.step, "t": round(time.monotonic() - self._t0, 4)}
        event.update(data)
        self.record.events.append(event)

    def _free_cells(self) -> int:
        return self.belief.count(Belief.FREE)

    def candidates(self) -> list[FrontierCandidate]:
        c = self.config
        return candidates_for(self.belief, self.state.pose, self.state.blacklist,
                              min_size=c.min_size, radius=c.radius, k=c.k)

    def scan(self) -> None:
        rotate_scan_360(self.gt, self.belief, self.state, self.config.sensor)
        self.log("scan", position=list(self.state.pose.xy), free_cells=self._free_cells())

    def navigate(self, goal: tuple[float, float]) -> str:
        """Plan and drive to ``goal``; returns ``reached``, ``unreachable`` or ``failed``."""
        c = self.config
        before = self.state.distance
        try:
            path = plan_path(self.belief, self.state.pose.xy, goal, c.inflation, c.goal_tolerance)
        except (Unreachable, StartBlocked) as exc:
            outcome, detail = "unreachable", str(exc)
        else:
            try:
                follow_path(self.gt, self.belief, self.state, path, c.sensor, c.sense_every,
                            c.inflation, c.goal_tolerance, max_replans=c.max_replans)
                outcome, detail = "reached", ""
            except NavigationFailed as exc:
                outcome, detail = "failed", str(exc)
        self.log("navigate", goal=list(goal), outcome=outcome, detail=detail,
                 travelled=self.state.distance - before, distance=self.state.distance,
                 free_cells=self._free_cells())
        return outcome

    def blacklist(self, point: tuple[float, float], reason: str) -> None:
        self.state.blacklist.add(point)
        self.log("blacklist", point=list(point), reason=reason)

    def over_budget(self) -> str | None:
        if self.state.step >= self.config.max_steps:
            return BUDGET_STEPS
        if self.state.distance >= self.config.max_distance:
            return BUDGET_DISTANCE
        return None

    def _save_frame(self, candidates) -> None:
        if not self.config.frames_dir:
            return
        out = Path(self.config.frames_dir)
        out.mkdir(parents=True, exist_ok=True)
        render_annotated(self.belief, self.state, candidates,
                         path=out / f"decision_{self.decision_count:04d}.png")

    # -- the loop ----------------------------------------------------------

    def decide(self, candidates) -> Decision:
        ctx = DecisionContext(self.belief, self.state.pose, candidates, step=self.decision_count,
                              env_name=self.gt.name, state=self.state, gt=self.gt)
        self._save_frame(candidates)
        decision = self.policy(ctx)
        if not 0 <= decision.label < len(candidates):
            decision = Decision(0, f"policy returned invalid label {decision.label}", decision.policy,
                                decision.latency, True, decision.attempts)
        self.decision_count += 1
        self.log(
            "decision",
            position=list(self.state.pose.xy),
            traj_index=len(self.state.trajectory) - 1,
            candidates=[
                {"label": c.label, "distance": c.distance, "midpoint": list(c.midpoint_world),
                 "size": c.contour.size}
                for c in candidates
            ],
            decision=asdict(decision),
        )
        return decision

    def backtrack_step(self) -> bool:
        """Walk the decision-point list nearest-first until one still offers frontiers.

        Returns True to resume the main loop, False when the list is exhausted.
        """
        while self.state.dp_list:
            if self.over_budget():
                return True  # main loop records the budget stop
            dp = nearest_decision_point(self.state)
            self.state.step += 1
            outcome = self.navigate(dp.position)
            if outcome != "reached":
                self.state.dp_list.remove(dp)
                self.log("backtrack", dp=list(dp.position), outcome=f"removed_{outcome}")
                continue
            if self.candidates():
                self.log("backtrack", dp=list(dp.position), outcome="resumed")
                return True
            self.state.dp_list.remove(dp)
            self.log("backtrack", dp=list(dp.position), outcome="removed_no_frontiers")
        return False

    def run(self) -> RunRecord:
        self.log("start", position=list(self.state.pose.xy), heading=self.state.pose.heading)
        self.scan()
        while True:
            reason = self.over_budget()
            if reason:
                break
            candidates = self.candidates()
            if not candidates:
                if self.backtrack_step():
                    continue
                reason = COMPLETE
                break

            if len(candidates) >= 2:
                if record_decision_point(self.state, candidates, self.config.dp_dedup_radius):
                    self.log("decision_point", position=list(self.state.pose.xy))
                try:
                    decision = self.decide(candidates)
                except ScriptExhausted as exc:
                    log.info("script exhausted: %s", exc)
                    reason = SCRIPT_EXHAUSTED
                    break
                target = candidates[decision.label]
            else:
                target = candidates[0]

            self.state.step += 1
            outcome = self.navigate(target.midpoint_world)
            if outcome == "reached":
                self.blacklist(target.midpoint_world, "reached")
                self.scan()
            else:
                self.blacklist(target.midpoint_world, outcome)

        self.state.terminate(reason)
        self.log("terminate", reason=reason, distance=self.state.distance,
                 decision_points=len(self.state.dp_list))
        rec = self.record
        rec.reason = reason
        rec.trajectory = list(self.state.trajectory)
        rec.headings = list(self.state.headings)
        rec.distance = self.state.distance
        rec.belief = self.belief
        rec.state = self.state
        return rec


def run_exploration(gt: GroundTruthMap, start: Pose | None, policy, config: ExplorerConfig = ExplorerConfig(),
                    seed: int = 0) -> RunRecord:
    if start is None:
        start = gt.start
    return Explorer(gt, start, policy, config, seed).run()


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def trajectory_length(points) -> float:
    return sum(math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in zip(points, points[1:]))


def write_trajectory_csv(path: str | Path, points, headings=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "x_m", "y_m", "cumulative_dist_m"] + (["heading_rad"] if headings else []))
        dist = 0.0
        prev = None
        for i, (x, y) in enumerate(points):
            if prev is not None:
                dist += math.hypot(x - prev[0], y - prev[1])
            row = [i, repr(float(x)), repr(float(y)), repr(dist)]
            if headings:
                row.append(repr(float(headings[i])))
            w.writerow(row)
            prev = (x, y)


def write_config(path: str | Path, values: dict) -> None:
    lines = [f"{k}: {'' if v is None else v}" for k, v in values.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_config(path: str | Path) -> dict[str, str]:
    out = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        sep = ":" if ":" in line else "="
        if sep not in line:
            continue
        key, value = line.split(sep, 1)
        out[key.strip()] = value.strip()
    return out


def write_run(record: RunRecord, gt: GroundTruthMap, out_dir: str | Path, extra_config: dict | None = None,
              png: bool = True) -> Path:
    """Write the event log, trajectory, final belief and config snapshot for a run."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "events.jsonl", "w") as fh:
        for event in record.events:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
    write_trajectory_csv(out / "trajectory.csv", record.trajectory, record.headings)
    if record.belief is not None:
        save_belief(record.belief, out / "belief.pgm")
    save_environment(gt, out / "env.pgm")
    snapshot = {
        "environment": record.env_name,
        "method": record.policy,
        "seed": record.seed,
        "termination": record.reason,
        "distance_m": repr(record.distance),
        **(extra_config or {}),
        **record.config,
    }
    write_config(out / "config.txt", snapshot)
    if png and record.belief is not None and record.state is not None:
        render_annotated(record.belief, record.state, (), path=out / "final.png", scale=2)
    return out
