"""Occlusion-aware multi-goal A* over the occupancy grid.

Each predicted target waypoint ``z_k`` defines a goal region: free cells whose
horizontal distance to ``z_k`` is inside a band, whose height offset is within
a tolerance, and which see ``z_k``. Goals are searched greedily in order, each
arrival point seeding the next search. Cells inside the band that are occluded
from ``z_k`` are never expanded.
"""

from __future__ import annotations

import heapq
import math
import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit
from numpy.typing import ArrayLike, NDArray

from .prediction import Prediction
from .world import OccupancyGrid, first_hit, line_of_sight

__all__ = [
    "PhiRegion",
    "GuidePath",
    "GoalUnreachableError",
    "phi_contains",
    "heuristic",
    "band_distance",
    "search_one",
    "multi_goal_search",
]

HEURISTICS = {"band": 0, "ring": 1}


class GoalUnreachableError(RuntimeError):
    """The open set was exhausted (or the expansion budget hit) before any
    cell of the goal region was reached."""


@dataclass(frozen=True)
class PhiRegion:
    """Occlusion-free region around one predicted target position."""

    target: NDArray[np.float64]
    d_lower: float
    d_upper: float
    vertical: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "target", np.asarray(self.target, dtype=float).reshape(3))
        if not self.d_lower < self.d_upper:
            raise ValueError("distance band needs d_lower < d_upper")

    def in_band(self, x: ArrayLike) -> bool:
        x = np.asarray(x, dtype=float)
        dxy = math.hypot(x[0] - self.target[0], x[1] - self.target[1])
        return self.d_lower <= dxy <= self.d_upper and abs(x[2] - self.target[2]) <= self.vertical


@dataclass
class GuidePath:
    points: NDArray[np.float64]
    seeds: NDArray[np.float64]
    seed_indices: list[int] = field(default_factory=list)
    cost: float = 0.0
    failed_at: int | None = None

    @property
    def complete(self) -> bool:
        return self.failed_at is None

    def to_dict(self) -> dict:
        return {
            "points": self.points.tolist(),
            "seeds": self.seeds.tolist(),
            "seed_indices": list(self.seed_indices),
            "cost": self.cost,
            "failed_at": self.failed_at,
        }


def phi_contains(region: PhiRegion, grid: OccupancyGrid, x: ArrayLike) -> bool:
    x = np.asarray(x, dtype=float)
    if grid.is_occupied(x) or not region.in_band(x):
        return False
    if not grid.in_bounds(region.target):
        return False
    return line_of_sight(grid, x, region.target)


def heuristic(n: ArrayLike, z_k: ArrayLike, d_desired: float) -> float:
    """Distance from ``n`` to the horizontal ring of radius ``d_desired``
    around ``z_k``: ``sqrt((d_xy - d_desired)^2 + d_z^2)``."""
    n = np.asarray(n, dtype=float)
    z_k = np.asarray(z_k, dtype=float)
    dxy = math.hypot(n[0] - z_k[0], n[1] - z_k[1])
    return math.sqrt((dxy - d_desired) ** 2 + (n[2] - z_k[2]) ** 2)


def band_distance(n: ArrayLike, region: PhiRegion) -> float:
    """Euclidean distance from ``n`` to the solid distance band (ignoring
    occupancy and visibility); a consistent A* heuristic."""
    n = np.asarray(n, dtype=float)
    dxy = math.hypot(n[0] - region.target[0], n[1] - region.target[1])
    ex = max(0.0, region.d_lower - dxy, dxy - region.d_upper)
    ez = max(0.0, abs(n[2] - region.target[2]) - region.vertical)
    return math.hypot(ex, ez)


# -- search kernel -----------------------------------------------------------

_OFFSETS = np.array(
    [(di, dj, dk) for di in (-1, 0, 1) for dj in (-1, 0, 1) for dk in (-1, 0, 1) if (di, dj, dk) != (0, 0, 0)],
    dtype=np.int64,
)

_PLAIN, _GOAL, _BLOCKED = 1, 2, 3


@njit(cache=True)
def _h(cx, cy, cz, zx, zy, zz, d_lo, d_hi, dv, d_des, mode):
    dxy = math.sqrt((cx - zx) ** 2 + (cy - zy) ** 2)
    dz = abs(cz - zz)
    if mode == 1:
        return math.sqrt((dxy - d_des) ** 2 + dz * dz)
    ex = max(0.0, max(d_lo - dxy, dxy - d_hi))
    ez = max(0.0, dz - dv)
    return math.sqrt(ex * ex + ez * ez)


@njit(cache=True)
def _classify(occ, ox, oy, oz, res, i, j, k, zx, zy, zz, d_lo, d_hi, dv):
    nx, ny, nz = occ.shape
    if i < 0 or j < 0 or k < 0 or i >= nx or j >= ny or k >= nz or occ[i, j, k] != 0:
        return _BLOCKED
    cx = ox + (i + 0.5) * res
    cy = oy + (j + 0.5) * res
    cz = oz + (k + 0.5) * res
    dxy = math.sqrt((cx - zx) ** 2 + (cy - zy) ** 2)
    if d_lo <= dxy and dxy <= d_hi and abs(cz - zz) <= dv:
        if first_hit(occ, ox, oy, oz, res, cx, cy, cz, zx, zy, zz) < 0:
            return _GOAL
        return _BLOCKED
    return _PLAIN


@njit(cache=True)
def _move_clear(occ, i, j, k, di, dj, dk):
    # diagonal moves may not cut past occupied cells
    for a in range(2 if di != 0 else 1):
        for b in range(2 if dj != 0 else 1):
            for c in range(2 if dk != 0 else 1):
                if occ[i + a * di, j + b * dj, k + c * dk] != 0:
                    return False
    return True


@njit(cache=True)
def _astar(occ, ox, oy, oz, res, si, sj, sk, zx, zy, zz, d_lo, d_hi, dv, d_des, mode, max_expansions, offsets,
           g, parent, stamp, info, gen):
    # scratch arrays are valid only where stamp == gen; info holds the cell
    # status in its low bits and the closed flag in bit 2
    nx, ny, nz = occ.shape
    start = (si * ny + sj) * nz + sk
    stamp[start] = gen
    g[start] = 0.0
    parent[start] = -1
    info[start] = _classify(occ, ox, oy, oz, res, si, sj, sk, zx, zy, zz, d_lo, d_hi, dv)
    h0 = _h(ox + (si + 0.5) * res, oy + (sj + 0.5) * res, oz + (sk + 0.5) * res, zx, zy, zz, d_lo, d_hi, dv, d_des, mode)
    heap = [(h0, h0, start)]
    step_cost = np.empty(len(offsets))
    for n in range(len(offsets)):
        step_cost[n] = res * math.sqrt(abs(offsets[n, 0]) + abs(offsets[n, 1]) + abs(offsets[n, 2]))

    goal = -1
    expansions = 0
    while len(heap) > 0:
        f, hc, cur = heapq.heappop(heap)
        if info[cur] & 4:
            continue
        info[cur] |= 4
        if info[cur] & 3 == _GOAL:
            goal = cur
            break
        expansions += 1
        if expansions > max_expansions:
            break
        ci = cur // (ny * nz)
        cj = (cur // nz) % ny
        ck = cur % nz
        gc = g[cur]
        for n in range(len(offsets)):
            i = ci + offsets[n, 0]
            j = cj + offsets[n, 1]
            k = ck + offsets[n, 2]
            if i < 0 or j < 0 or k < 0 or i >= nx or j >= ny or k >= nz:
                continue
            nb = (i * ny + j) * nz + k
            if stamp[nb] != gen:
                stamp[nb] = gen
                g[nb] = np.inf
                parent[nb] = -1
                info[nb] = _classify(occ, ox, oy, oz, res, i, j, k, zx, zy, zz, d_lo, d_hi, dv)
            st = info[nb]
            if st & 4 or st == _BLOCKED:
                continue
            if not _move_clear(occ, ci, cj, ck, offsets[n, 0], offsets[n, 1], offsets[n, 2]):
                continue
            gn = gc + step_cost[n]
            if gn < g[nb]:
                g[nb] = gn
                parent[nb] = cur
                hn = _h(ox + (i + 0.5) * res, oy + (j + 0.5) * res, oz + (k + 0.5) * res,
                        zx, zy, zz, d_lo, d_hi, dv, d_des, mode)
                heapq.heappush(heap, (gn + hn, hn, nb))

    if goal < 0:
        return np.empty(0, dtype=np.int64), np.inf
    length = 0
    node = goal
    while node >= 0:
        length += 1
        node = parent[node]
    out = np.empty(length, dtype=np.int64)
    node = goal
    for n in range(length - 1, -1, -1):
        out[n] = node
        node = parent[node]
    return out, g[goal]


class _Scratch(threading.local):
    """Per-thread search buffers sized to the most recent grid."""

    def __init__(self) -> None:
        self.size = -1
        self.gen = 0

    def get(self, size: int):
        if size != self.size:
            self.g = np.empty(size)
            self.parent = np.empty(size, dtype=np.int64)
            self.stamp = np.zeros(size, dtype=np.int32)
            self.info = np.zeros(size, dtype=np.uint8)
            self.size = size
            self.gen = 0
        self.gen += 1
        if self.gen >= np.iinfo(np.int32).max:
            self.stamp[:] = 0
            self.gen = 1
        return self.g, self.parent, self.stamp, self.info, self.gen


_scratch = _Scratch()


def _flat_to_centers(grid: OccupancyGrid, flat: NDArray[np.int64]) -> NDArray[np.float64]:
    _, ny, nz = grid.dims
    idx = np.column_stack([flat // (ny * nz), (flat // nz) % ny, flat % nz])
    return grid.origin + (idx + 0.5) * grid.resolution


def search_one(
    grid: OccupancyGrid,
    start: ArrayLike,
    region: PhiRegion,
    desired: float | None = None,
    heuristic: str = "band",
    max_expansions: int = 200_000,
) -> tuple[NDArray[np.float64], NDArray[np.float64], float]:
    """A* from ``start`` to the first cell inside ``region``.

    Returns ``(path, s_k, cost)``; ``path`` begins at ``start`` itself and
    continues through cell centres, ``cost`` is the grid path length measured
    from the start cell's centre.

    Raises:
        GoalUnreachableError: no region cell is reachable.
    """
    start = np.asarray(start, dtype=float)
    if grid.is_occupied(start):
        raise ValueError("search start is not free")
    if phi_contains(region, grid, start):
        return start[None, :].copy(), start.copy(), 0.0
    z = region.target
    if not grid.in_bounds(z) or grid.is_occupied(z):
        raise GoalUnreachableError("target waypoint lies in an occupied cell")
    d_des = 0.5 * (region.d_lower + region.d_upper) if desired is None else float(desired)
    si, sj, sk = grid.index(start)
    flat, cost = _astar(
        grid.occupied, *grid.origin.tolist(), grid.resolution, si, sj, sk, z[0], z[1], z[2],
        region.d_lower, region.d_upper, region.vertical, d_des, HEURISTICS[heuristic], max_expansions, _OFFSETS,
        *_scratch.get(int(np.prod(grid.dims))),
    )
    if len(flat) == 0:
        raise GoalUnreachableError("goal region unreachable")
    centers = _flat_to_centers(grid, flat)
    path = np.vstack([start[None, :], centers[1:]]) if len(centers) > 1 else centers
    return path, centers[-1].copy(), float(cost)


def multi_goal_search(
    grid: OccupancyGrid,
    start: ArrayLike,
    prediction: Prediction | Sequence[ArrayLike],
    d_lower: float = 1.0,
    d_upper: float = 4.0,
    vertical: float = 0.5,
    desired: float | None = None,
    heuristic: str = "band",
    max_expansions: int = 200_000,
) -> GuidePath:
    """Chain :func:`search_one` over the predicted waypoints in order.

    A failed sub-search ends the chain; the successful prefix is returned with
    ``failed_at`` set to the failing waypoint index.
    """
    waypoints = prediction.waypoints if isinstance(prediction, Prediction) else np.asarray(prediction, float)
    cur = np.asarray(start, dtype=float)
    points = [cur[None, :]]
    seeds: list[NDArray] = []
    seed_indices: list[int] = []
    n_points = 1
    total = 0.0
    failed_at = None
    for k, z in enumerate(waypoints):
        region = PhiRegion(z, d_lower, d_upper, vertical)
        try:
            path, s_k, cost = search_one(grid, cur, region, desired, heuristic, max_expansions)
        except (GoalUnreachableError, ValueError):
            failed_at = k
            break
        if len(path) > 1:
            points.append(path[1:])
            n_points += len(path) - 1
        seeds.append(s_k)
        seed_indices.append(n_points - 1)
        total += cost
        cur = s_k
    return GuidePath(
        points=np.vstack(points),
        seeds=np.array(seeds).reshape(-1, 3),
        seed_indices=seed_indices,
        cost=total,
        failed_at=failed_at,
    )
