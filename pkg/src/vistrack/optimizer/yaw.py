"""Rate-limited yaw that points the camera at the target."""

from __future__ import annotations

import math

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ..minco import Trajectory
from ..prediction import Prediction

__all__ = ["wrap_angle", "rate_limited_yaw", "yaw_plan"]


def wrap_angle(a: ArrayLike) -> NDArray[np.float64] | float:
    """Map angles to ``(-pi, pi]``."""
    out = np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2 * np.pi)
    return float(out) if np.ndim(out) == 0 else out


def rate_limited_yaw(desired: ArrayLike, yaw0: float, omega_max: float, dt: float) -> NDArray[np.float64]:
    """Follow ``desired`` along the shortest arc, at most ``omega_max * dt`` per
    step. Element ``n`` is the yaw after ``n + 1`` steps."""
    if not omega_max > 0:
        raise ValueError("omega_max must be positive")
    limit = omega_max * dt
    yaw = float(wrap_angle(yaw0))
    out = []
    for d in np.asarray(desired, dtype=float).reshape(-1):
        err = float(wrap_angle(d - yaw))
        yaw = float(wrap_angle(yaw + min(max(err, -limit), limit)))
        out.append(yaw)
    return np.array(out)


def yaw_plan(
    traj: Trajectory,
    prediction: Prediction,
    yaw0: float,
    omega_max: float = 1.5,
    dt: float = 0.1,
    duration: float | None = None,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Yaw samples at ``dt`` spacing heading towards the predicted target.

    Returns ``(times, yaw)``; the desired heading is the horizontal direction
    from ``p(t)`` to the target primitive at ``t``.
    """
    horizon = traj.total_duration if duration is None else min(duration, traj.total_duration)
    n = max(int(math.floor(horizon / dt + 1e-9)), 1)
    times = np.minimum(np.arange(1, n + 1) * dt, traj.total_duration)
    rel = prediction.position_at(times) - traj.evaluate(times)
    desired = np.arctan2(rel[:, 1], rel[:, 0])
    # keep the current heading wherever the direction is undefined
    flat = np.hypot(rel[:, 0], rel[:, 1]) < 1e-9
    desired[flat] = np.nan
    out = []
    yaw = yaw0
    for d in desired:
        yaw = yaw if math.isnan(d) else float(rate_limited_yaw([d], yaw, omega_max, dt)[0])
        out.append(yaw)
    return times, np.array(out)
