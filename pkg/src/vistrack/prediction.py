"""Target motion prediction.

Targets are tracked with a linear constant-velocity Kalman filter and
extrapolated with constant-acceleration motion primitives; the safe
primitive with the smallest acceleration is kept.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .world import OccupancyGrid

__all__ = [
    "TargetState",
    "Prediction",
    "FilterState",
    "NoSafePrimitiveError",
    "filter_update",
    "default_accel_candidates",
    "predict",
]

_COV_FLOOR = 1e-12


class NoSafePrimitiveError(RuntimeError):
    """Every candidate primitive collides within the horizon."""


@dataclass(frozen=True)
class TargetState:
    position: NDArray[np.float64]
    velocity: NDArray[np.float64]
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float).reshape(3))
        if not (np.all(np.isfinite(self.position)) and np.all(np.isfinite(self.velocity))):
            raise ValueError("target state must be finite")

    def clamped(self, speed_bound: float) -> "TargetState":
        speed = float(np.linalg.norm(self.velocity))
        if speed <= speed_bound:
            return self
        return TargetState(self.position, self.velocity * (speed_bound / speed), self.timestamp)


@dataclass(frozen=True)
class Prediction:
    """Timestamped future target waypoints ``(t_k, z_k)``, ``t_k = k * T_p / M_T``."""

    horizon: float
    times: NDArray[np.float64]
    waypoints: NDArray[np.float64]
    acceleration: NDArray[np.float64]
    start: NDArray[np.float64]
    velocity: NDArray[np.float64]

    @property
    def count(self) -> int:
        return len(self.times)

    def position_at(self, t: ArrayLike) -> NDArray[np.float64]:
        t = np.asarray(t, dtype=float)[..., None]
        return self.start + self.velocity * t + 0.5 * self.acceleration * t**2

    def velocity_at(self, t: ArrayLike) -> NDArray[np.float64]:
        t = np.asarray(t, dtype=float)[..., None]
        return self.velocity + self.acceleration * t

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "times": self.times.tolist(),
            "waypoints": self.waypoints.tolist(),
            "acceleration": self.acceleration.tolist(),
        }


@dataclass(frozen=True)
class FilterState:
    """Constant-velocity Kalman filter state over ``(position, velocity)``.

    ``process_noise`` is the white-acceleration spectral density (m^2/s^3) and
    ``measurement_noise`` the position measurement standard deviation (m).
    """

    mean: NDArray[np.float64]
    cov: NDArray[np.float64]
    process_noise: float = 0.5
    measurement_noise: float = 0.05
    timestamp: float = 0.0

    @classmethod
    def initial(
        cls,
        position: ArrayLike,
        velocity: ArrayLike = (0.0, 0.0, 0.0),
        position_std: float = 0.1,
        velocity_std: float = 1.0,
        process_noise: float = 0.5,
        measurement_noise: float = 0.05,
        timestamp: float = 0.0,
    ) -> "FilterState":
        mean = np.concatenate([np.asarray(position, float), np.asarray(velocity, float)])
        cov = np.diag([position_std**2] * 3 + [velocity_std**2] * 3)
        return cls(mean, cov, process_noise, measurement_noise, timestamp)

    @property
    def position(self) -> NDArray[np.float64]:
        return self.mean[:3]

    @property
    def velocity(self) -> NDArray[np.float64]:
        return self.mean[3:]

    def target_state(self) -> TargetState:
        return TargetState(self.position.copy(), self.velocity.copy(), self.timestamp)


def _regularize(cov: NDArray[np.float64]) -> NDArray[np.float64]:
    cov = 0.5 * (cov + cov.T)
    lo = np.linalg.eigvalsh(cov)[0]
    if lo < _COV_FLOOR:
        cov = cov + (_COV_FLOOR - lo) * np.eye(len(cov))
    return cov


def filter_update(state: FilterState, measurement: ArrayLike, dt: float) -> FilterState:
    """One predict-then-correct step with a position measurement."""
    z = np.asarray(measurement, dtype=float).reshape(3)
    if not np.all(np.isfinite(z)):
        raise ValueError("measurement must be finite")
    if not dt > 0:
        raise ValueError("dt must be positive")

    eye = np.eye(3)
    F = np.block([[eye, dt * eye], [np.zeros((3, 3)), eye]])
    q = state.process_noise
    Q = q * np.block([[dt**3 / 3 * eye, dt**2 / 2 * eye], [dt**2 / 2 * eye, dt * eye]])
    H = np.hstack([eye, np.zeros((3, 3))])
    R = state.measurement_noise**2 * eye

    mean = F @ state.mean
    cov = _regularize(F @ state.cov @ F.T + Q)

    S = H @ cov @ H.T + R
    K = np.linalg.solve(S, H @ cov).T
    mean = mean + K @ (z - H @ mean)
    I_KH = np.eye(6) - K @ H
    # Joseph form keeps the update symmetric positive (semi)definite
    cov = _regularize(I_KH @ cov @ I_KH.T + K @ R @ K.T)
    return FilterState(mean, cov, state.process_noise, state.measurement_noise, state.timestamp + dt)


def default_accel_candidates(max_accel: float = 2.0, per_axis: int = 5) -> NDArray[np.float64]:
    """Horizontal accelerations on a ``per_axis x per_axis`` lattice over
    ``[-max_accel, max_accel]^2``, ordered by norm then ``(a_x, a_y)``."""
    ticks = np.linspace(-max_accel, max_accel, per_axis)
    ax, ay = np.meshgrid(ticks, ticks, indexing="ij")
    cand = np.column_stack([ax.ravel(), ay.ravel(), np.zeros(ax.size)])
    return _order_candidates(cand)


def _order_candidates(cand: NDArray[np.float64]) -> NDArray[np.float64]:
    norms = np.round(np.linalg.norm(cand, axis=1), 12)
    order = np.lexsort((cand[:, 1], cand[:, 0], norms))
    return cand[order]


def primitive_is_safe(
    grid: OccupancyGrid, start: NDArray, velocity: NDArray, accel: NDArray, horizon: float, samples: int
) -> bool:
    """Check the primitive at every waypoint time and the midpoints between."""
    ts = np.arange(1, 2 * samples + 1) * (horizon / (2 * samples))
    pts = start + velocity * ts[:, None] + 0.5 * accel * ts[:, None] ** 2
    return not grid.occupied_many(pts).any()


def predict(
    state: TargetState,
    grid: OccupancyGrid,
    horizon: float = 3.0,
    samples: int = 15,
    candidates: ArrayLike | None = None,
) -> Prediction:
    """Pick the minimum-norm safe constant-acceleration primitive.

    Raises:
        NoSafePrimitiveError: no candidate keeps the target collision free.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if samples < 1:
        raise ValueError("need at least one prediction sample")
    cand = default_accel_candidates() if candidates is None else np.asarray(candidates, dtype=float).reshape(-1, 3)
    if not np.any(np.all(cand == 0.0, axis=1)):
        raise ValueError("candidate set must contain the zero acceleration")
    cand = _order_candidates(cand)

    for accel in cand:
        if primitive_is_safe(grid, state.position, state.velocity, accel, horizon, samples):
            times = np.arange(1, samples + 1) * (horizon / samples)
            times[-1] = horizon
            waypoints = state.position + state.velocity * times[:, None] + 0.5 * accel * times[:, None] ** 2
            return Prediction(
                horizon=float(horizon),
                times=times,
                waypoints=waypoints,
                acceleration=accel.copy(),
                start=state.position.copy(),
                velocity=state.velocity.copy(),
            )
    raise NoSafePrimitiveError("no collision-free motion primitive for the target")
