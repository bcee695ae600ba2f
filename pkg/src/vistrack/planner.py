"""One planning cycle: predict, search, build the corridor and sectors,
optimize, and fall back gracefully when any stage fails."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .corridor import Corridor, Polytope, first_polytope, generate_corridor
from .minco import BoundaryState, Trajectory, construct
from .optimizer import NonFiniteCostError, PenaltyConfig, Problem, SolveResult, solve, yaw_plan
from .pathfinding import GuidePath, multi_goal_search
from .prediction import NoSafePrimitiveError, Prediction, TargetState, default_accel_candidates, predict
from .visibility import OccludedSeedError, VisibleSector, generate_sector
from .world import OccupancyGrid

__all__ = ["PlannerConfig", "PlanOutcome", "Planner", "PlanningFailure", "STAGES", "state_on"]

STAGES = ("path", "corridor", "optimize", "total")


@dataclass(frozen=True)
class PlannerConfig:
    horizon: float = 3.0
    samples: int = 15
    target_speed_bound: float = 2.0
    target_accel: float = 2.0
    max_polytopes: int = 10
    corridor_cap: float = 5.0
    sector_step: float = math.radians(2.0)
    theta_max: float = math.radians(60.0)
    yaw_rate: float = math.pi
    max_failures: int = 3
    max_iter: int = 300
    g_tol: float = 1e-4
    f_tol: float = 1e-5
    max_expansions: int = 200_000
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)

    @classmethod
    def from_dict(cls, data: dict) -> "PlannerConfig":
        data = dict(data)
        pen = PenaltyConfig.from_dict(data.pop("penalty", {}))
        for key in ("sector_step", "theta_max"):
            if key + "_deg" in data:
                data[key] = math.radians(data.pop(key + "_deg"))
        return cls(penalty=pen, **data)


@dataclass
class PlanOutcome:
    """Result of one cycle. ``status`` is ``"ok"``, ``"degraded"`` (solver
    flagged), ``"hold"`` (previous trajectory kept) or ``"brake"``."""

    status: str
    trajectory: Trajectory | None
    start_time: float
    timings: dict[str, float]
    yaw_times: NDArray[np.float64] = field(default_factory=lambda: np.zeros(0))
    yaw: NDArray[np.float64] = field(default_factory=lambda: np.zeros(0))
    prediction: Prediction | None = None
    guide: GuidePath | None = None
    corridor: Corridor | None = None
    sectors: list[VisibleSector] = field(default_factory=list)
    solve: SolveResult | None = None
    reason: str = ""


class PlanningFailure(RuntimeError):
    pass


class Planner:
    """Stateful replanner; keeps the last good trajectory for fallback."""

    def __init__(self, grid: OccupancyGrid, config: PlannerConfig | None = None) -> None:
        self.grid = grid
        self.config = config or PlannerConfig()
        self.candidates = default_accel_candidates(self.config.target_accel, 5)
        self.trajectory: Trajectory | None = None
        self.trajectory_start = 0.0
        self.yaw_times = np.zeros(0)
        self.yaw = np.zeros(0)
        self.failures = 0
        self.last_polytope: Polytope | None = None

    # -- pipeline -------------------------------------------------------------

    def plan(self, now: float, drone: BoundaryState, yaw: float, target: TargetState) -> PlanOutcome:
        cfg = self.config
        timings = dict.fromkeys(STAGES, 0.0)
        t_begin = time.perf_counter()
        pieces: dict = {}
        try:
            traj, result = self._pipeline(drone, yaw, target, timings, pieces)
        except (PlanningFailure, NoSafePrimitiveError, NonFiniteCostError, OccludedSeedError, ValueError) as exc:
            timings["total"] = time.perf_counter() - t_begin
            return self._fallback(now, drone, timings, str(exc) or type(exc).__name__, pieces)
        timings["total"] = time.perf_counter() - t_begin

        self.trajectory = traj
        self.trajectory_start = now
        self.yaw_times, self.yaw = pieces["yaw"]
        self.failures = 0
        self.last_polytope = pieces["corridor"].polytopes[0]
        status = "degraded" if result.degraded else "ok"
        return PlanOutcome(status, traj, now, timings, self.yaw_times, self.yaw, pieces.get("prediction"),
                           pieces.get("guide"), pieces.get("corridor"), pieces.get("sectors", []), result)

    def _pipeline(self, drone: BoundaryState, yaw: float, target: TargetState, timings: dict, out: dict):
        cfg, pen, grid = self.config, self.config.penalty, self.grid
        p0, v0 = drone.position, drone.velocity
        if not grid.in_bounds(p0) or grid.is_occupied(p0):
            raise PlanningFailure("drone position is not free in the inflated map")

        t0 = time.perf_counter()
        prediction = predict(target.clamped(cfg.target_speed_bound), grid, cfg.horizon, cfg.samples, self.candidates)
        out["prediction"] = prediction
        slow = float(np.linalg.norm(v0)) < 0.1
        first = None if slow else first_polytope(grid, p0, v0, None, cfg.corridor_cap)
        search_from = p0 if first is None else first[1]
        guide = multi_goal_search(
            grid, search_from, prediction, pen.d_lower, pen.d_upper, pen.vertical_tolerance,
            max_expansions=cfg.max_expansions,
        )
        out["guide"] = guide
        if len(guide.seeds) == 0:
            raise PlanningFailure("path search failed at the first waypoint")
        n_goals = len(guide.seeds)
        t1 = time.perf_counter()
        timings["path"] = t1 - t0

        corridor = generate_corridor(grid, p0, v0, guide, cfg.max_polytopes, cfg.corridor_cap, first=first)
        out["corridor"] = corridor
        if corridor.covered < 0:
            raise PlanningFailure("corridor does not reach the guide path")
        sectors = [
            generate_sector(grid, z, s, pen.d_upper, cfg.sector_step, cfg.theta_max)
            for z, s in zip(prediction.waypoints[:n_goals], guide.seeds)
        ]
        out["sectors"] = sectors
        t2 = time.perf_counter()
        timings["corridor"] = t2 - t1

        covered_all = corridor.covered >= len(guide.points) - 1
        if covered_all and n_goals == prediction.count:
            end_pos = guide.seeds[-1]
            v_end = prediction.velocity_at(prediction.horizon)
            speed = float(np.linalg.norm(v_end))
            if speed > pen.v_max:
                v_end = v_end * (pen.v_max / speed)
        else:
            end_pos = guide.points[max(corridor.covered, 0)]
            v_end = np.zeros(3)
        horizon = float(prediction.times[n_goals - 1])
        problem = Problem(
            corridor, prediction.times[:n_goals], prediction.waypoints[:n_goals], sectors,
            drone, BoundaryState(end_pos, v_end, np.zeros(3)), horizon, pen,
        )
        result = solve(problem, max_iter=cfg.max_iter, g_tol=cfg.g_tol, f_tol=cfg.f_tol)
        traj = result.trajectory
        if not self._trajectory_safe(traj):
            raise PlanningFailure("optimized trajectory leaves free space")
        out["yaw"] = yaw_plan(traj, prediction, yaw, cfg.yaw_rate)
        timings["optimize"] = time.perf_counter() - t2
        return traj, result

    def _trajectory_safe(self, traj: Trajectory, dt: float = 0.02) -> bool:
        n = max(int(math.ceil(traj.total_duration / dt)), 2)
        pts = traj.sample(n + 1)
        return not self.grid.occupied_many(pts, inflated=False).any()

    # -- fallback -------------------------------------------------------------

    def _fallback(self, now: float, drone: BoundaryState, timings: dict, reason: str, pieces: dict) -> PlanOutcome:
        self.failures += 1
        extra = {k: pieces.get(k) for k in ("prediction", "guide", "corridor")}
        if self.trajectory is not None and self.failures < self.config.max_failures:
            if now - self.trajectory_start <= self.trajectory.total_duration:
                return PlanOutcome("hold", self.trajectory, self.trajectory_start, timings, self.yaw_times,
                                   self.yaw, reason=reason, **extra)
        traj = self.brake(drone)
        self.trajectory = traj
        self.trajectory_start = now
        self.yaw_times = np.zeros(0)
        self.yaw = np.zeros(0)
        return PlanOutcome("brake", traj, now, timings, reason=reason, **extra)

    def brake(self, drone: BoundaryState) -> Trajectory:
        """Single-piece stop at rest, clipped into the last valid polytope."""
        pen = self.config.penalty
        v = drone.velocity
        speed = float(np.linalg.norm(v))
        duration = max(1.5 * speed / pen.a_max * 2.0, 0.5)
        stop = drone.position + 0.5 * v * duration * 0.5
        if self.last_polytope is not None:
            lo, hi = self.last_polytope.box_bounds()
            margin = np.minimum(pen.corridor_margin + 1e-3, 0.25 * (hi - lo))
            stop = np.clip(stop, lo + margin, hi - margin)
        if self.grid.is_occupied(stop) or not self.grid.in_bounds(stop):
            stop = drone.position
        return construct(np.zeros((0, 3)), [duration], drone, BoundaryState(stop))

    def reset(self) -> None:
        self.trajectory = None
        self.failures = 0
        self.last_polytope = None


def state_on(traj: Trajectory, t: float) -> BoundaryState:
    """Drone state at local time ``t``; past the end it rests at the end."""
    if t >= traj.total_duration:
        end = traj.end_state()
        return BoundaryState(end.position)
    return BoundaryState(*(traj.evaluate(max(t, 0.0), k) for k in range(3)))

