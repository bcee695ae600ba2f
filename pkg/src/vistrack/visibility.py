"""Sector-shaped visible regions around predicted target positions.

Starting from the direction of a visible seed point, rays of fixed length are
cast from the target at growing angular offsets on both sides until one is
blocked. The sector bisects the clear span.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from numpy.typing import ArrayLike, NDArray

from .world import OccupancyGrid, first_hit, line_of_sight

__all__ = ["VisibleSector", "OccludedSeedError", "sector_contains", "generate_sector"]

_BOUNDARY_TOL = 1e-12
_REFINEMENTS = 3


class OccludedSeedError(ValueError):
    """The seed point does not see the target."""


@dataclass(frozen=True)
class VisibleSector:
    """Cone with apex at the target, unit bisector ``axis`` and ``half_angle``.

    ``span`` holds the clear azimuth interval found by the sweep (radians) and
    ``radius`` the ray length used to test it.
    """

    apex: NDArray[np.float64]
    axis: NDArray[np.float64]
    half_angle: float
    radius: float
    span: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "apex", np.asarray(self.apex, dtype=float).reshape(3))
        axis = np.asarray(self.axis, dtype=float).reshape(3)
        n = float(np.linalg.norm(axis))
        if not n > 0:
            raise ValueError("sector axis must be nonzero")
        object.__setattr__(self, "axis", axis / n)
        if not 0 < self.half_angle <= math.pi:
            raise ValueError("half angle must lie in (0, pi]")

    def to_dict(self) -> dict:
        return {
            "apex": self.apex.tolist(),
            "axis": self.axis.tolist(),
            "half_angle": self.half_angle,
            "radius": self.radius,
        }


def sector_contains(sector: VisibleSector, x: ArrayLike) -> bool:
    """Closed membership test; the apex itself counts as inside."""
    d = np.asarray(x, dtype=float) - sector.apex
    n = float(np.linalg.norm(d))
    if n == 0.0:
        return True
    c = float(np.clip(d @ sector.axis / n, -1.0, 1.0))
    return math.acos(c) <= sector.half_angle + _BOUNDARY_TOL


@njit(cache=True)
def _clear_steps(occ, ox, oy, oz, res, zx, zy, zz, base, elev, length, step, max_steps, side):
    """Number of consecutive clear rays at ``base + side * n * step``."""
    ce = math.cos(elev) * length
    dz = math.sin(elev) * length
    n = 0
    while n < max_steps:
        ang = base + side * (n + 1) * step
        ex = zx + ce * math.cos(ang)
        ey = zy + ce * math.sin(ang)
        if first_hit(occ, ox, oy, oz, res, zx, zy, zz, ex, ey, zz + dz) >= 0:
            break
        n += 1
    return n


def _ray_clear(grid: OccupancyGrid, z: NDArray, azimuth: float, elev: float, length: float) -> bool:
    o = grid.origin
    end = z + length * np.array([math.cos(elev) * math.cos(azimuth), math.cos(elev) * math.sin(azimuth), math.sin(elev)])
    return first_hit(grid.occupied, o[0], o[1], o[2], grid.resolution, *z, *end) < 0


def generate_sector(
    grid: OccupancyGrid,
    z_k: ArrayLike,
    s_k: ArrayLike,
    d_u: float = 4.0,
    step: float = math.radians(2.0),
    theta_max: float = math.radians(60.0),
    min_half_angle: float = math.radians(15.0),
) -> VisibleSector:
    """Sweep rays of length ``d_u`` around the seed direction.

    Rays share the seed's elevation, so the bisector is ``normalize(s_k - z_k)``
    whenever the clear span is symmetric. If even the seed ray is blocked
    before ``d_u``, or the long rays leave a half-angle below
    ``min_half_angle``, the sweep is repeated with rays as long as the seed
    distance (the seed ray is clear by precondition). Each side sweeps at most
    ``2 * theta_max``.

    Raises:
        OccludedSeedError: ``s_k`` has no line of sight to ``z_k``.
    """
    z = np.asarray(z_k, dtype=float)
    s = np.asarray(s_k, dtype=float)
    if not line_of_sight(grid, s, z):
        raise OccludedSeedError("seed does not see the target")
    rel = s - z
    horiz = math.hypot(rel[0], rel[1])
    azimuth = math.atan2(rel[1], rel[0]) if horiz > 1e-12 else 0.0
    elev = math.atan2(rel[2], horiz) if np.linalg.norm(rel) > 1e-12 else 0.0

    seed_dist = max(float(np.linalg.norm(rel)), grid.resolution)
    lengths = [float(d_u)] if _ray_clear(grid, z, azimuth, elev, float(d_u)) else []
    lengths.append(seed_dist)

    o = grid.origin
    best = None
    for length in lengths:
        # halve the step while the span is at most a single ray wide
        h = 2.0 * step
        for _ in range(_REFINEMENTS + 1):
            h *= 0.5
            args = (grid.occupied, o[0], o[1], o[2], grid.resolution, z[0], z[1], z[2], azimuth, elev, length, h,
                    int(round(2 * theta_max / h)))
            n_ccw, n_cw = _clear_steps(*args, 1.0), _clear_steps(*args, -1.0)
            if n_ccw + n_cw >= 2:
                break
        if best is None or (n_ccw + n_cw) * h > (best[1] + best[2]) * best[3]:
            best = (length, n_ccw, n_cw, h)
        # a long ray with a usable span wins over a wider short one
        if (n_ccw + n_cw) * h >= 2 * min_half_angle:
            break
    length, n_ccw, n_cw, h = best

    lo = azimuth - n_cw * h
    hi = azimuth + n_ccw * h
    # a seed flanked by blocked rays still gets a thin sector
    half = min(max(0.5 * (hi - lo), 0.5 * h), theta_max)
    mid = 0.5 * (lo + hi)
    axis = np.array([math.cos(elev) * math.cos(mid), math.cos(elev) * math.sin(mid), math.sin(elev)])
    return VisibleSector(z, axis, half, length, (lo, hi))
