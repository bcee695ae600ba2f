"""Scenario description: world, scripted target motion, chaser limits, camera
and simulation schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml
from numpy.typing import NDArray

from ..optimizer import PenaltyConfig
from ..planner import PlannerConfig
from ..world import Box, Cylinder, ForestSpec, WorldConfig

__all__ = [
    "ConfigError",
    "TargetScript",
    "ScenarioConfig",
    "load_scenario",
    "forest_loop_scenario",
    "figure_eight_scenario",
    "straight_dash_scenario",
    "reversal_scenario",
    "BUILTIN_SCENARIOS",
]

TARGET_KINDS = ("line", "reversal", "circle", "lemniscate", "polyline")


class ConfigError(ValueError):
    """Scenario file is malformed or violates an invariant."""


def _curve_points(kind: str, params: dict[str, Any], n: int = 4001) -> tuple[NDArray, bool]:
    """Dense xy samples of the script's geometric path and whether it closes."""
    if kind == "circle":
        cx, cy = params.get("center", (0.0, 0.0))
        r = float(params["radius"])
        t = np.linspace(0.0, 2 * math.pi, n)
        phase = float(params.get("phase", 0.0))
        return np.column_stack([cx + r * np.cos(t + phase), cy + r * np.sin(t + phase)]), True
    if kind == "lemniscate":
        a = float(params["a"])
        cx, cy = params.get("center", (0.0, 0.0))
        t = np.linspace(0.0, 2 * math.pi, n)
        den = 1.0 + np.sin(t) ** 2
        return np.column_stack([cx + a * np.cos(t) / den, cy + a * np.sin(t) * np.cos(t) / den]), True
    if kind in ("line", "reversal", "polyline"):
        if kind == "polyline":
            pts = np.asarray(params["points"], dtype=float).reshape(-1, 2)
            closed = bool(params.get("closed", False))
            if closed:
                pts = np.vstack([pts, pts[:1]])
        else:
            pts = np.asarray([params["start"], params["end"]], dtype=float)
            closed = False
        if len(pts) < 2:
            raise ConfigError("target path needs at least two points")
        return pts, closed
    raise ConfigError(f"unknown target kind {kind!r}; expected one of {TARGET_KINDS}")


@dataclass(frozen=True)
class TargetScript:
    """Target moving along a planar path at a constant speed and height.

    Closed paths repeat; ``line`` stops at its end and ``reversal`` turns back
    abruptly each time it reaches an end.
    """

    kind: str
    params: dict[str, Any]
    speed: float = 2.0
    height: float = 1.0

    def __post_init__(self) -> None:
        if not self.speed > 0:
            raise ConfigError("target speed cap must be positive")
        xy, closed = _curve_points(self.kind, self.params)
        seg = np.linalg.norm(np.diff(xy, axis=0), axis=1)
        arc = np.concatenate([[0.0], np.cumsum(seg)])
        if arc[-1] <= 0:
            raise ConfigError("target path has zero length")
        object.__setattr__(self, "_xy", xy)
        object.__setattr__(self, "_arc", arc)
        object.__setattr__(self, "_closed", closed)

    @property
    def length(self) -> float:
        return float(self._arc[-1])

    @property
    def closed(self) -> bool:
        return self._closed

    def lap_time(self) -> float:
        return self.length / self.speed

    def _arclength(self, t: NDArray) -> NDArray:
        s = self.speed * t
        L = self.length
        if self._closed:
            return np.mod(s, L)
        if self.kind == "reversal":
            phase = np.mod(s, 2 * L)
            return np.where(phase <= L, phase, 2 * L - phase)
        return np.minimum(s, L)

    def position(self, t: float | NDArray) -> NDArray[np.float64]:
        t = np.asarray(t, dtype=float)
        s = self._arclength(t)
        x = np.interp(s, self._arc, self._xy[:, 0])
        y = np.interp(s, self._arc, self._xy[:, 1])
        return np.stack([x, y, np.full_like(x, self.height)], axis=-1)

    def velocity(self, t: float | NDArray, h: float = 1e-3) -> NDArray[np.float64]:
        """One-sided difference in the direction of motion, so the reported
        velocity flips exactly at a reversal."""
        t = np.asarray(t, dtype=float)
        return (self.position(t + h) - self.position(t)) / h

    def route(self) -> tuple[tuple[float, float], ...]:
        """Coarse xy polyline used as forest keep-out."""
        step = max(len(self._xy) // 400, 1)
        pts = self._xy[::step]
        if not np.allclose(pts[-1], self._xy[-1]):
            pts = np.vstack([pts, self._xy[-1:]])
        return tuple((float(x), float(y)) for x, y in pts)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "params": self.params, "speed": self.speed, "height": self.height}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TargetScript":
        try:
            return cls(str(data["kind"]), dict(data.get("params", {})), float(data.get("speed", 2.0)),
                       float(data.get("height", 1.0)))
        except KeyError as exc:
            raise ConfigError(f"target script misses {exc}") from exc


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    world: WorldConfig
    target: TargetScript
    v_max: float = 3.0
    a_max: float = 6.0
    fov_deg: tuple[float, float] = (80.0, 65.0)
    image_size: tuple[int, int] = (640, 480)
    rate: float = 10.0
    duration: float = 60.0
    seed: int = 0
    chase_distance: float = 2.5
    measurement_noise: float = 0.0
    keepout_from_target: bool = True
    keepout_clearance: float = 1.2
    planner: PlannerConfig = field(default_factory=PlannerConfig)

    def __post_init__(self) -> None:
        if not self.rate > 0:
            raise ConfigError("replan rate must be positive")
        if not self.duration >= 0:
            raise ConfigError("duration must be non-negative")
        if not (0 < self.fov_deg[0] < 180 and 0 < self.fov_deg[1] < 180):
            raise ConfigError("field of view must lie in (0, 180) degrees")
        if self.v_max <= 0 or self.a_max <= 0:
            raise ConfigError("chaser limits must be positive")
        if self.measurement_noise < 0:
            raise ConfigError("measurement noise must be non-negative")

    @property
    def frames(self) -> int:
        return int(math.floor(self.duration * self.rate + 1e-9))

    def resolved_world(self) -> WorldConfig:
        """World with the forest seeded by the scenario and, if requested,
        kept clear of the target route."""
        w = self.world
        if w.forest is None:
            return w
        forest = replace(w.forest, seed=int(self.seed))
        if self.keepout_from_target and not forest.keepout:
            forest = replace(forest, keepout=self.target.route(), clearance=self.keepout_clearance)
        return replace(w, forest=forest)

    def resolved_planner(self) -> PlannerConfig:
        """Planner configuration carrying the scenario's chaser limits."""
        pen = replace(self.planner.penalty, v_max=self.v_max, a_max=self.a_max)
        return replace(self.planner, penalty=pen, target_speed_bound=self.target.speed)

    def with_overrides(self, seed: int | None = None, rate: float | None = None,
                       duration: float | None = None) -> "ScenarioConfig":
        kw: dict[str, Any] = {}
        if seed is not None:
            kw["seed"] = int(seed)
        if rate is not None:
            kw["rate"] = float(rate)
        if duration is not None:
            kw["duration"] = float(duration)
        return replace(self, **kw) if kw else self

    def to_dict(self) -> dict[str, Any]:
        pl = self.planner
        planner = {
            k: getattr(pl, k) for k in (
                "horizon", "samples", "target_accel", "max_polytopes", "corridor_cap", "yaw_rate",
                "max_failures", "max_iter", "g_tol", "f_tol", "max_expansions",
            )
        }
        planner["sector_step_deg"] = round(math.degrees(pl.sector_step), 9)
        planner["theta_max_deg"] = round(math.degrees(pl.theta_max), 9)
        planner["penalty"] = pl.penalty.to_dict()
        return {
            "name": self.name,
            "world": self.world.to_dict(),
            "target": self.target.to_dict(),
            "chaser": {"v_max": self.v_max, "a_max": self.a_max},
            "camera": {"fov_deg": list(self.fov_deg), "image_size": list(self.image_size)},
            "rate": self.rate,
            "duration": self.duration,
            "seed": self.seed,
            "chase_distance": self.chase_distance,
            "measurement_noise": self.measurement_noise,
            "keepout_from_target": self.keepout_from_target,
            "keepout_clearance": self.keepout_clearance,
            "planner": planner,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError("scenario must be a mapping")
        unknown = set(data) - _SCENARIO_KEYS
        if unknown:
            raise ConfigError(f"unknown scenario keys: {', '.join(sorted(unknown))}")
        try:
            chaser = data.get("chaser", {})
            camera = data.get("camera", {})
            return cls(
                name=str(data.get("name", "scenario")),
                world=WorldConfig.from_dict(data["world"]),
                target=TargetScript.from_dict(data["target"]),
                v_max=float(chaser.get("v_max", 3.0)),
                a_max=float(chaser.get("a_max", 6.0)),
                fov_deg=tuple(float(v) for v in camera.get("fov_deg", (80.0, 65.0))),
                image_size=tuple(int(v) for v in camera.get("image_size", (640, 480))),
                rate=float(data.get("rate", 10.0)),
                duration=float(data.get("duration", 60.0)),
                seed=int(data.get("seed", 0)),
                chase_distance=float(data.get("chase_distance", 2.5)),
                measurement_noise=float(data.get("measurement_noise", 0.0)),
                keepout_from_target=bool(data.get("keepout_from_target", True)),
                keepout_clearance=float(data.get("keepout_clearance", 1.2)),
                planner=PlannerConfig.from_dict(data.get("planner", {})),
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid scenario: {exc}") from exc


_SCENARIO_KEYS = {
    "name", "world", "target", "chaser", "camera", "rate", "duration", "seed", "chase_distance",
    "measurement_noise", "keepout_from_target", "keepout_clearance", "planner",
}


def load_scenario(path: str | Path) -> ScenarioConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    return ScenarioConfig.from_dict(data)


# -- built-in scenarios -------------------------------------------------------

def _base_planner() -> PlannerConfig:
    return PlannerConfig(penalty=PenaltyConfig())


def forest_loop_scenario(seed: int = 0, duration: float = 60.0) -> ScenarioConfig:
    """30 x 30 m forest of 30 trunks; the target laps a rounded loop at 2 m/s."""
    world = WorldConfig(
        bounds_min=(-15.0, -15.0, 0.0),
        bounds_max=(15.0, 15.0, 3.0),
        resolution=0.1,
        inflation_radius=0.2,
        forest=ForestSpec(count=30, radius_min=0.3, radius_max=0.5, height_min=3.0, height_max=3.0,
                          min_spacing=1.5),
    )
    target = TargetScript("circle", {"center": (0.0, 0.0), "radius": 9.0}, speed=2.0, height=1.0)
    return ScenarioConfig("forest_loop", world, target, seed=seed, duration=duration, planner=_base_planner())


def figure_eight_scenario(laps: float = 3.0) -> ScenarioConfig:
    """Figure-eight walk around two pillars sitting inside the lobes."""
    world = WorldConfig(
        bounds_min=(-10.0, -7.0, 0.0),
        bounds_max=(10.0, 7.0, 3.0),
        resolution=0.1,
        inflation_radius=0.2,
        cylinders=(Cylinder((-3.5, 0.0), 0.6, 0.0, 3.0), Cylinder((3.5, 0.0), 0.6, 0.0, 3.0)),
    )
    target = TargetScript("lemniscate", {"a": 6.0}, speed=2.0, height=1.0)
    duration = math.ceil(laps * target.lap_time() * 10) / 10
    return ScenarioConfig("figure_eight", world, target, duration=duration, planner=_base_planner())


def straight_dash_scenario(duration: float = 12.0) -> ScenarioConfig:
    world = WorldConfig(bounds_min=(-15.0, -5.0, 0.0), bounds_max=(15.0, 5.0, 3.0), resolution=0.1,
                        inflation_radius=0.2)
    target = TargetScript("line", {"start": (-10.0, 0.0), "end": (12.0, 0.0)}, speed=2.0)
    return ScenarioConfig("straight_dash", world, target, duration=duration, planner=_base_planner())


def reversal_scenario(duration: float = 20.0) -> ScenarioConfig:
    """Target dashes 8 m and turns back abruptly, next to a wall."""
    world = WorldConfig(
        bounds_min=(-10.0, -5.0, 0.0), bounds_max=(10.0, 5.0, 3.0), resolution=0.1, inflation_radius=0.2,
        boxes=(Box((-3.0, 1.5, 0.0), (3.0, 2.0, 3.0)),),
    )
    target = TargetScript("reversal", {"start": (-4.0, 0.0), "end": (4.0, 0.0)}, speed=2.0)
    return ScenarioConfig("reversal", world, target, duration=duration, planner=_base_planner())


BUILTIN_SCENARIOS = {
    "forest_loop": forest_loop_scenario,
    "figure_eight": figure_eight_scenario,
    "straight_dash": straight_dash_scenario,
    "reversal": reversal_scenario,
}
