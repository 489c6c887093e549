from __future__ import annotations

import math
from dataclasses import dataclass, field

from .frontier import Blacklist
from .grid_map import DEFAULT_FOV, DEFAULT_MAX_RANGE, DEFAULT_RAY_COUNT, Pose


@dataclass(frozen=True)
class SensorConfig:
    fov: float = DEFAULT_FOV
    ray_count: int = DEFAULT_RAY_COUNT
    max_range: float = DEFAULT_MAX_RANGE


@dataclass(frozen=True)
class DecisionPoint:
    position: tuple[float, float]
    created_step: int


@dataclass
class ExplorationState:
    pose: Pose
    trajectory: list[tuple[float, float]] = field(default_factory=list)
    headings: list[float] = field(default_factory=list)
    scan_locations: list[tuple[float, float]] = field(default_factory=list)
    dp_list: list[DecisionPoint] = field(default_factory=list)
    blacklist: Blacklist = field(default_factory=Blacklist)
    step: int = 0
    distance: float = 0.0
    sense_count: int = 0
    terminated: bool = False
    reason: str | None = None

    @classmethod
    def start(cls, pose: Pose, blacklist_radius: float | None = None) -> "ExplorationState":
        bl = Blacklist() if blacklist_radius is None else Blacklist(radius=blacklist_radius)
        return cls(pose=pose, trajectory=[pose.xy], headings=[pose.heading], blacklist=bl)

    def move_to(self, pose: Pose) -> None:
        """Advance the robot, extending the trajectory and odometer."""
        last = self.trajectory[-1] if self.trajectory else pose.xy
        step = math.hypot(pose.x - last[0], pose.y - last[1])
        self.pose = pose
        if step > 0 or not self.trajectory:
            self.trajectory.append(pose.xy)
            self.headings.append(pose.heading)
            self.distance += step

    def terminate(self, reason: str) -> None:
        self.terminated = True
        self.reason = reason
