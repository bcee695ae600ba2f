"""Closed-loop simulation with a perfect-tracking chaser."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from ..minco import BoundaryState, Trajectory
from ..optimizer.yaw import rate_limited_yaw, wrap_angle
from ..planner import Planner, PlanOutcome, state_on
from ..prediction import FilterState, TargetState, filter_update
from ..world import OccupancyGrid, build_grid
from .metrics import Camera, FrameRecord, RunMetrics, failure_predicates
from .scenario import ConfigError, ScenarioConfig

__all__ = ["SimState", "initial_state", "step_sim", "run_scenario", "replay", "make_planner", "COLLISION_SUBSTEPS"]

COLLISION_SUBSTEPS = 10


@dataclass
class SimState:
    t: float
    index: int
    drone: BoundaryState
    yaw: float
    trajectory: Trajectory | None = None
    trajectory_start: float = 0.0
    yaw_times: NDArray[np.float64] = field(default_factory=lambda: np.zeros(0))
    yaw_values: NDArray[np.float64] = field(default_factory=lambda: np.zeros(0))
    estimate: FilterState | None = None
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))


def _chase_start(scenario: ScenarioConfig, grid: OccupancyGrid) -> NDArray[np.float64]:
    """Free point ``chase_distance`` behind the target, rotating around it
    when the natural spot is blocked."""
    p = scenario.target.position(0.0)
    v = scenario.target.velocity(0.0)
    heading = math.atan2(v[1], v[0]) if np.hypot(v[0], v[1]) > 1e-9 else 0.0
    for k in range(24):
        ang = heading + math.pi + (1 if k % 2 else -1) * math.radians(15.0) * ((k + 1) // 2)
        cand = p + scenario.chase_distance * np.array([math.cos(ang), math.sin(ang), 0.0])
        if grid.in_bounds(cand) and not grid.is_occupied(cand):
            return cand
    raise ConfigError("no free chaser start position around the target")


def initial_state(scenario: ScenarioConfig, grid: OccupancyGrid) -> SimState:
    p = _chase_start(scenario, grid)
    target = scenario.target.position(0.0)
    yaw = math.atan2(target[1] - p[1], target[0] - p[0])
    rng = np.random.default_rng(scenario.seed)
    est = None
    if scenario.measurement_noise > 0:
        est = FilterState.initial(target, scenario.target.velocity(0.0),
                                  position_std=scenario.measurement_noise,
                                  measurement_noise=scenario.measurement_noise)
    return SimState(0.0, 0, BoundaryState(p), yaw, estimate=est, rng=rng)


def make_planner(scenario: ScenarioConfig, grid: OccupancyGrid) -> Planner:
    return Planner(grid, scenario.resolved_planner())


def _observe(state: SimState, scenario: ScenarioConfig, dt: float) -> tuple[TargetState, FilterState | None]:
    truth_p = scenario.target.position(state.t)
    truth_v = scenario.target.velocity(state.t)
    if state.estimate is None:
        return TargetState(truth_p, truth_v, state.t), None
    z = truth_p + state.rng.normal(0.0, scenario.measurement_noise, 3)
    est = state.estimate if state.index == 0 else filter_update(state.estimate, z, dt)
    return est.target_state(), est


def _next_yaw(state: SimState, t_next: float, target: NDArray, drone_next: NDArray, omega: float, dt: float) -> float:
    if len(state.yaw_times):
        local = t_next - state.trajectory_start
        if state.yaw_times[0] - 1e-9 <= local <= state.yaw_times[-1] + 1e-9:
            yaws = np.unwrap(state.yaw_values)
            return float(wrap_angle(np.interp(local, state.yaw_times, yaws)))
    rel = target - drone_next
    if math.hypot(rel[0], rel[1]) < 1e-9:
        return state.yaw
    return float(rate_limited_yaw([math.atan2(rel[1], rel[0])], state.yaw, omega, dt)[0])


def step_sim(
    state: SimState,
    scenario: ScenarioConfig,
    planner: Planner,
    grid: OccupancyGrid,
    camera: Camera | None = None,
) -> tuple[SimState, FrameRecord]:
    """Replan at the current time, record the frame, then advance the target
    and the drone (which follows its trajectory exactly) by one period."""
    dt = 1.0 / scenario.rate
    camera = camera or Camera(scenario.fov_deg, scenario.image_size)
    observed, est = _observe(state, scenario, dt)

    outcome: PlanOutcome = planner.plan(state.t, state.drone, state.yaw, observed)
    traj, start = outcome.trajectory, outcome.start_time

    frame = FrameRecord(
        t=state.t,
        drone=state.drone.position.copy(),
        drone_velocity=state.drone.velocity.copy(),
        yaw=state.yaw,
        target=scenario.target.position(state.t),
        target_velocity=scenario.target.velocity(state.t),
        replanned=True,
        status=outcome.status,
        timings=dict(outcome.timings),
        trajectory=traj,
        trajectory_start=start,
    )
    flags = failure_predicates(frame, grid, camera)
    frame.out_of_fov, frame.too_near, frame.occluded = flags.out_of_fov, flags.too_near, flags.occluded

    t_next = (state.index + 1) / scenario.rate
    if traj is not None:
        local = np.linspace(state.t, t_next, COLLISION_SUBSTEPS + 1) - start
        local = np.clip(local, 0.0, traj.total_duration)
        frame.collision = bool(grid.occupied_many(traj.evaluate(local), inflated=False).any())
        drone_next = state_on(traj, t_next - start)
    else:
        frame.collision = grid.is_occupied(state.drone.position, inflated=False)
        drone_next = BoundaryState(state.drone.position)

    nxt = SimState(
        t=t_next,
        index=state.index + 1,
        drone=drone_next,
        yaw=state.yaw,
        trajectory=traj,
        trajectory_start=start,
        yaw_times=outcome.yaw_times,
        yaw_values=outcome.yaw,
        estimate=est,
        rng=state.rng,
    )
    nxt.yaw = _next_yaw(nxt, t_next, observed.position, drone_next.position, planner.config.yaw_rate, dt)
    return nxt, frame


def run_scenario(
    scenario: ScenarioConfig,
    grid: OccupancyGrid | None = None,
    warm_up: bool = True,
    progress: Callable[[FrameRecord], None] | None = None,
) -> RunMetrics:
    """Simulate ``scenario`` for its full duration.

    ``warm_up`` runs one discarded planning cycle first so that compiled
    kernels are loaded before any cycle is timed.
    """
    grid = grid if grid is not None else build_grid(scenario.resolved_world())
    camera = Camera(scenario.fov_deg, scenario.image_size)
    metrics = RunMetrics(scenario.name, camera=camera)
    state = initial_state(scenario, grid)
    if warm_up:
        probe = make_planner(scenario, grid)
        probe.plan(0.0, state.drone, state.yaw, TargetState(scenario.target.position(0.0),
                                                            scenario.target.velocity(0.0)))
    planner = make_planner(scenario, grid)
    for _ in range(scenario.frames):
        try:
            state, frame = step_sim(state, scenario, planner, grid, camera)
        except Exception as exc:  # noqa: BLE001 - recorded as a hard failure, not swallowed
            metrics.hard_failure = f"{type(exc).__name__}: {exc}"
            break
        metrics.add(frame)
        if progress is not None:
            progress(frame)
    return metrics


def replay(
    scenario: ScenarioConfig,
    plans: Trajectory | list[dict],
    grid: OccupancyGrid | None = None,
    start_time: float = 0.0,
) -> RunMetrics:
    """Frame records for a flown plan log (see ``read_plan_log``) or for a
    single trajectory starting at ``start_time``.

    Logged yaw is reused as is. For a bare trajectory the yaw turns towards
    the target at the planner's yaw-rate limit.
    """
    grid = grid if grid is not None else build_grid(scenario.resolved_world())
    camera = Camera(scenario.fov_deg, scenario.image_size)
    metrics = RunMetrics(scenario.name + "_replay", camera=camera)
    dt = 1.0 / scenario.rate
    omega = scenario.resolved_planner().yaw_rate
    if isinstance(plans, Trajectory):
        n = scenario.frames if scenario.duration > 0 else int(math.floor(plans.total_duration * scenario.rate)) + 1
        records = [{"t": k * dt, "trajectory": plans, "start_time": start_time, "yaw": None, "status": "replay"}
                   for k in range(n)]
    else:
        records = plans
    yaw = None
    for rec in records:
        t = float(rec["t"])
        traj = rec["trajectory"]
        start = float(rec.get("start_time", 0.0))
        if traj is None:
            continue
        drone = state_on(traj, t - start)
        target = scenario.target.position(t)
        if rec.get("yaw") is not None:
            yaw = float(rec["yaw"])
        else:
            rel = target - drone.position
            desired = math.atan2(rel[1], rel[0])
            yaw = desired if yaw is None else float(rate_limited_yaw([desired], yaw, omega, dt)[0])
        frame = FrameRecord(t, drone.position.copy(), drone.velocity.copy(), yaw, target,
                            scenario.target.velocity(t), status=str(rec.get("status", "")),
                            trajectory=traj, trajectory_start=start)
        flags = failure_predicates(frame, grid, camera)
        frame.out_of_fov, frame.too_near, frame.occluded = flags.out_of_fov, flags.too_near, flags.occluded
        local = np.clip(np.linspace(t, t + dt, COLLISION_SUBSTEPS + 1) - start, 0.0, traj.total_duration)
        frame.collision = bool(grid.occupied_many(traj.evaluate(local), inflated=False).any())
        metrics.add(frame)
    return metrics
