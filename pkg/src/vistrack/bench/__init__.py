"""Closed-loop benchmark harness: scenarios, simulation, metrics and CLI."""

from .metrics import (
    FRAME_FIELDS,
    Camera,
    FailureFlags,
    FrameRecord,
    RunMetrics,
    camera_coordinates,
    failure_predicates,
    heatmap,
    projected_speed,
    read_frames,
    read_plan_log,
    write_plan_log,
    relative_position,
    report,
)
from .scenario import (
    BUILTIN_SCENARIOS,
    ConfigError,
    ScenarioConfig,
    TargetScript,
    figure_eight_scenario,
    forest_loop_scenario,
    load_scenario,
    reversal_scenario,
    straight_dash_scenario,
)
from .sim import SimState, initial_state, make_planner, replay, run_scenario, step_sim

__all__ = [
    "FRAME_FIELDS", "Camera", "FailureFlags", "FrameRecord", "RunMetrics", "camera_coordinates",
    "failure_predicates", "heatmap", "projected_speed", "read_frames", "read_plan_log", "write_plan_log", "relative_position", "report",
    "BUILTIN_SCENARIOS", "ConfigError", "ScenarioConfig", "TargetScript", "figure_eight_scenario",
    "forest_loop_scenario", "load_scenario", "reversal_scenario", "straight_dash_scenario",
    "SimState", "initial_state", "make_planner", "replay", "run_scenario", "step_sim",
]
