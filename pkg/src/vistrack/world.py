"""Occupancy-grid world model.

The grid stores two layers: the raw rasterized obstacles and the inflated
(Chebyshev-dilated) occupancy used by every planning query. Queries outside
the grid are reported as occupied.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml
from numba import njit
from numpy.typing import NDArray
from scipy import ndimage

__all__ = [
    "Box",
    "Cylinder",
    "ForestSpec",
    "WorldConfig",
    "OccupancyGrid",
    "OutOfBoundsError",
    "build_grid",
    "raycast",
    "line_of_sight",
    "load_world_config",
]

_GRID_MAGIC = b"VGRD"
_GRID_HEADER = struct.Struct("<4s3i5d")


class OutOfBoundsError(ValueError):
    """A query point lies outside the grid extents."""


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]


@dataclass(frozen=True)
class Cylinder:
    """Vertical cylinder standing on ``z_min``."""

    center: tuple[float, float]
    radius: float
    z_min: float
    z_max: float


@dataclass(frozen=True)
class ForestSpec:
    """Random vertical-cylinder forest.

    ``keepout`` is a polyline (sequence of xy points) no trunk may approach
    closer than ``clearance`` plus its own radius; scenario scripts use it to
    keep the target's route walkable.
    """

    count: int
    seed: int = 0
    radius_min: float = 0.3
    radius_max: float = 0.6
    height_min: float = 2.0
    height_max: float = 4.0
    keepout: tuple[tuple[float, float], ...] = ()
    clearance: float = 0.0
    min_spacing: float = 0.0


@dataclass(frozen=True)
class WorldConfig:
    bounds_min: tuple[float, float, float]
    bounds_max: tuple[float, float, float]
    resolution: float = 0.1
    inflation_radius: float = 0.0
    boxes: tuple[Box, ...] = ()
    cylinders: tuple[Cylinder, ...] = ()
    forest: ForestSpec | None = None

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "WorldConfig":
        bounds = data["bounds"]
        forest = data.get("forest")
        if forest is not None:
            forest = dict(forest)
            forest["keepout"] = tuple(tuple(map(float, p)) for p in forest.get("keepout", ()))
            forest = ForestSpec(**forest)
        return cls(
            bounds_min=tuple(map(float, bounds["min"])),
            bounds_max=tuple(map(float, bounds["max"])),
            resolution=float(data.get("resolution", 0.1)),
            inflation_radius=float(data.get("inflation", data.get("inflation_radius", 0.0))),
            boxes=tuple(
                Box(tuple(map(float, b["min"])), tuple(map(float, b["max"])))
                for b in data.get("boxes", ())
            ),
            cylinders=tuple(
                Cylinder(
                    tuple(map(float, c["center"])),
                    float(c["radius"]),
                    float(c.get("z_min", bounds["min"][2])),
                    float(c.get("z_max", bounds["max"][2])),
                )
                for c in data.get("cylinders", ())
            ),
            forest=forest,
        )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "bounds": {"min": list(self.bounds_min), "max": list(self.bounds_max)},
            "resolution": self.resolution,
            "inflation": self.inflation_radius,
            "boxes": [{"min": list(b.lo), "max": list(b.hi)} for b in self.boxes],
            "cylinders": [
                {"center": list(c.center), "radius": c.radius, "z_min": c.z_min, "z_max": c.z_max}
                for c in self.cylinders
            ],
        }
        if self.forest is not None:
            f = self.forest
            out["forest"] = {
                "count": f.count,
                "seed": f.seed,
                "radius_min": f.radius_min,
                "radius_max": f.radius_max,
                "height_min": f.height_min,
                "height_max": f.height_max,
                "keepout": [list(p) for p in f.keepout],
                "clearance": f.clearance,
                "min_spacing": f.min_spacing,
            }
        return out


def load_world_config(path: str | Path) -> WorldConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    return WorldConfig.from_dict(data.get("world", data))


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Immutable voxel grid; cell ``(i, j, k)`` spans
    ``origin + [i, i+1) * resolution`` on each axis."""

    origin: NDArray[np.float64]
    resolution: float
    dims: tuple[int, int, int]
    raw: NDArray[np.uint8]
    occupied: NDArray[np.uint8]
    inflation_radius: float = 0.0
    obstacles: tuple[Cylinder | Box, ...] = field(default=(), repr=False)

    def __post_init__(self) -> None:
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        if any(d < 1 for d in self.dims):
            raise ValueError("grid dims must all be >= 1")
        for arr in (self.origin, self.raw, self.occupied):
            arr.setflags(write=False)

    @property
    def extent(self) -> NDArray[np.float64]:
        return self.origin + np.asarray(self.dims) * self.resolution

    def layer(self, inflated: bool = True) -> NDArray[np.uint8]:
        return self.occupied if inflated else self.raw

    def in_bounds(self, pos: Sequence[float]) -> bool:
        p = np.asarray(pos, dtype=float)
        return bool(np.all(p >= self.origin) and np.all(p < self.extent))

    def index(self, pos: Sequence[float]) -> tuple[int, int, int]:
        """Cell index containing ``pos`` (may be out of range)."""
        u = np.floor((np.asarray(pos, dtype=float) - self.origin) / self.resolution)
        return int(u[0]), int(u[1]), int(u[2])

    def index_in_bounds(self, idx: Sequence[int]) -> bool:
        return all(0 <= int(i) < n for i, n in zip(idx, self.dims))

    def center(self, idx: Sequence[int]) -> NDArray[np.float64]:
        return self.origin + (np.asarray(idx, dtype=float) + 0.5) * self.resolution

    def cell_occupied(self, idx: Sequence[int], inflated: bool = True) -> bool:
        if not self.index_in_bounds(idx):
            return True
        return bool(self.layer(inflated)[tuple(int(i) for i in idx)])

    def is_occupied(self, pos: Sequence[float], inflated: bool = True) -> bool:
        """Occupancy at a world position; out-of-bounds counts as occupied."""
        return self.cell_occupied(self.index(pos), inflated)

    def occupied_many(self, points: NDArray[np.float64], inflated: bool = True) -> NDArray[np.bool_]:
        """Vectorized :meth:`is_occupied` over an ``(n, 3)`` array."""
        idx = np.floor((np.asarray(points, dtype=float).reshape(-1, 3) - self.origin) / self.resolution).astype(int)
        inside = np.all((idx >= 0) & (idx < np.asarray(self.dims)), axis=1)
        out = np.ones(len(idx), dtype=bool)
        ok = idx[inside]
        out[inside] = self.layer(inflated)[ok[:, 0], ok[:, 1], ok[:, 2]] != 0
        return out

    def is_free(self, pos: Sequence[float], inflated: bool = True) -> bool:
        return not self.is_occupied(pos, inflated)

    def occupied_centers(self, inflated: bool = True) -> NDArray[np.float64]:
        idx = np.argwhere(self.layer(inflated))
        return self.origin + (idx + 0.5) * self.resolution

    # -- flat binary export -------------------------------------------------
    def to_bytes(self) -> bytes:
        """Header ``magic, dims[3] (int32), resolution, origin[3], inflation``
        (float64, little endian) followed by one byte per cell in C order
        (x slowest). Bit 0 flags inflated occupancy, bit 1 raw occupancy."""
        header = _GRID_HEADER.pack(
            _GRID_MAGIC, *self.dims, self.resolution, *self.origin.tolist(), self.inflation_radius
        )
        payload = (self.occupied.astype(np.uint8) | (self.raw.astype(np.uint8) << 1)).tobytes(order="C")
        return header + payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "OccupancyGrid":
        magic, nx, ny, nz, res, ox, oy, oz, infl = _GRID_HEADER.unpack_from(data)
        if magic != _GRID_MAGIC:
            raise ValueError("not a grid file")
        cells = np.frombuffer(data, dtype=np.uint8, offset=_GRID_HEADER.size)
        if cells.size != nx * ny * nz:
            raise ValueError("grid payload size does not match header dims")
        cells = cells.reshape(nx, ny, nz)
        return cls(
            origin=np.array([ox, oy, oz]),
            resolution=res,
            dims=(nx, ny, nz),
            raw=((cells >> 1) & 1).astype(np.uint8),
            occupied=(cells & 1).astype(np.uint8),
            inflation_radius=infl,
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "OccupancyGrid":
        return cls.from_bytes(Path(path).read_bytes())


def _point_segment_distance(p: NDArray, a: NDArray, b: NDArray) -> float:
    ab = b - a
    denom = float(ab @ ab)
    s = 0.0 if denom == 0.0 else min(max(float((p - a) @ ab) / denom, 0.0), 1.0)
    return float(np.linalg.norm(p - (a + s * ab)))


def _sample_forest(spec: ForestSpec, lo: NDArray, hi: NDArray) -> list[Cylinder]:
    rng = np.random.default_rng(spec.seed)
    keep = np.asarray(spec.keepout, dtype=float).reshape(-1, 2)
    trees: list[Cylinder] = []
    attempts = 0
    while len(trees) < spec.count and attempts < 200 * max(spec.count, 1):
        attempts += 1
        radius = rng.uniform(spec.radius_min, spec.radius_max)
        xy = rng.uniform(lo[:2] + radius, hi[:2] - radius)
        height = rng.uniform(spec.height_min, spec.height_max)
        if len(keep) == 1 and np.linalg.norm(xy - keep[0]) < radius + spec.clearance:
            continue
        if len(keep) > 1 and min(
            _point_segment_distance(xy, keep[i], keep[i + 1]) for i in range(len(keep) - 1)
        ) < radius + spec.clearance:
            continue
        if any(
            np.hypot(*(xy - np.asarray(t.center))) < radius + t.radius + spec.min_spacing for t in trees
        ):
            continue
        trees.append(Cylinder((float(xy[0]), float(xy[1])), float(radius), float(lo[2]), float(lo[2] + height)))
    return trees


def _cell_ranges(lo: NDArray, hi: NDArray, origin: NDArray, res: float, dims: Sequence[int]):
    # Index window whose cell centres may fall inside [lo, hi].
    i0 = np.clip(np.floor((lo - origin) / res - 0.5).astype(int), 0, dims)
    i1 = np.clip(np.ceil((hi - origin) / res + 0.5).astype(int), 0, dims)
    return i0, i1


def build_grid(config: WorldConfig) -> OccupancyGrid:
    """Rasterize obstacles (a cell is occupied when its centre lies inside an
    obstacle) and dilate by the inflation radius."""
    res = float(config.resolution)
    if not res > 0:
        raise ValueError("resolution must be positive")
    lo = np.asarray(config.bounds_min, dtype=float)
    hi = np.asarray(config.bounds_max, dtype=float)
    if np.any(hi - lo <= 0):
        raise ValueError("world bounds have zero volume")
    dims = tuple(int(n) for n in np.maximum(np.round((hi - lo) / res), 1).astype(int))
    raw = np.zeros(dims, dtype=np.uint8)

    obstacles: list[Cylinder | Box] = list(config.boxes) + list(config.cylinders)
    if config.forest is not None:
        obstacles += _sample_forest(config.forest, lo, hi)

    for ob in obstacles:
        if isinstance(ob, Box):
            blo, bhi = np.asarray(ob.lo, float), np.asarray(ob.hi, float)
        else:
            c = np.asarray(ob.center, float)
            blo = np.array([c[0] - ob.radius, c[1] - ob.radius, ob.z_min])
            bhi = np.array([c[0] + ob.radius, c[1] + ob.radius, ob.z_max])
        i0, i1 = _cell_ranges(blo, bhi, lo, res, dims)
        if np.any(i1 <= i0):
            continue
        axes = [lo[a] + (np.arange(i0[a], i1[a]) + 0.5) * res for a in range(3)]
        x, y, z = np.meshgrid(*axes, indexing="ij")
        if isinstance(ob, Box):
            inside = (
                (x >= blo[0]) & (x <= bhi[0]) & (y >= blo[1]) & (y <= bhi[1]) & (z >= blo[2]) & (z <= bhi[2])
            )
        else:
            inside = ((x - c[0]) ** 2 + (y - c[1]) ** 2 <= ob.radius**2) & (z >= ob.z_min) & (z <= ob.z_max)
        raw[i0[0] : i1[0], i0[1] : i1[1], i0[2] : i1[2]] |= inside.astype(np.uint8)

    cells = int(math.ceil(config.inflation_radius / res - 1e-9)) if config.inflation_radius > 0 else 0
    if cells > 0:
        occupied = ndimage.maximum_filter(raw, size=2 * cells + 1, mode="constant", cval=0)
    else:
        occupied = raw.copy()

    return OccupancyGrid(
        origin=lo.copy(),
        resolution=res,
        dims=dims,
        raw=raw,
        occupied=occupied.astype(np.uint8),
        inflation_radius=float(config.inflation_radius),
        obstacles=tuple(obstacles),
    )


# -- supercover voxel traversal ----------------------------------------------

_TOUCH_EPS = 1e-9


@njit(cache=True)
def _occ_at(occ, i, j, k):
    nx, ny, nz = occ.shape
    if i < 0 or j < 0 or k < 0 or i >= nx or j >= ny or k >= nz:
        return False
    return occ[i, j, k] != 0


@njit(cache=True)
def first_hit(occ, ox, oy, oz, res, ax, ay, az, bx, by, bz):
    """Flat index of the first occupied cell whose closed cube the segment
    a->b touches, or -1. Cells outside the array are skipped."""
    nx, ny, nz = occ.shape
    u0 = np.empty(3)
    u1 = np.empty(3)
    d = np.empty(3)
    u0[0] = (ax - ox) / res
    u0[1] = (ay - oy) / res
    u0[2] = (az - oz) / res
    u1[0] = (bx - ox) / res
    u1[1] = (by - oy) / res
    u1[2] = (bz - oz) / res

    on_face = np.zeros(3, dtype=np.bool_)
    base = np.empty(3, dtype=np.int64)
    for a in range(3):
        r = np.floor(u0[a] + 0.5)
        if abs(u0[a] - r) < _TOUCH_EPS:
            u0[a] = r
            on_face[a] = True
        r = np.floor(u1[a] + 0.5)
        if abs(u1[a] - r) < _TOUCH_EPS:
            u1[a] = r
        base[a] = np.int64(np.floor(u0[a]))
        d[a] = u1[a] - u0[a]
        if abs(d[a]) < _TOUCH_EPS:
            d[a] = 0.0

    # cells touched at t = 0 through a face/edge/corner of the start point
    for mask in range(8):
        ok = True
        for a in range(3):
            if (mask >> a) & 1 and not on_face[a]:
                ok = False
        if not ok:
            continue
        i = base[0] - (mask & 1)
        j = base[1] - ((mask >> 1) & 1)
        k = base[2] - ((mask >> 2) & 1)
        if _occ_at(occ, i, j, k):
            return (i * ny + j) * nz + k

    # a segment lying in a cell-face plane touches both neighbouring layers
    flat = np.zeros(3, dtype=np.bool_)
    for a in range(3):
        flat[a] = on_face[a] and d[a] == 0.0

    step = np.zeros(3, dtype=np.int64)
    t_delta = np.full(3, np.inf)
    t_max0 = np.full(3, np.inf)
    for a in range(3):
        if d[a] > 0.0:
            step[a] = 1
            t_delta[a] = 1.0 / d[a]
            t_max0[a] = (base[a] + 1 - u0[a]) / d[a]
        elif d[a] < 0.0:
            step[a] = -1
            t_delta[a] = -1.0 / d[a]
            t_max0[a] = (base[a] - u0[a]) / d[a]

    cur = np.empty(3, dtype=np.int64)
    t_max = np.empty(3)
    tied = np.zeros(3, dtype=np.bool_)
    for variant in range(8):
        ok = True
        for a in range(3):
            if (variant >> a) & 1 and not flat[a]:
                ok = False
        if not ok:
            continue
        for a in range(3):
            cur[a] = base[a] - ((variant >> a) & 1)
            t_max[a] = t_max0[a]
        while True:
            if _occ_at(occ, cur[0], cur[1], cur[2]):
                return (cur[0] * ny + cur[1]) * nz + cur[2]
            t_min = min(t_max[0], min(t_max[1], t_max[2]))
            if t_min > 1.0 + _TOUCH_EPS:
                break
            n_tied = 0
            for a in range(3):
                tied[a] = t_max[a] <= t_min + _TOUCH_EPS
                if tied[a]:
                    n_tied += 1
            if n_tied > 1:
                # passing exactly through an edge or corner: visit the cells
                # sharing it
                for sub in range(1, 7):
                    ok = True
                    cnt = 0
                    for a in range(3):
                        if (sub >> a) & 1:
                            cnt += 1
                            if not tied[a]:
                                ok = False
                    if not ok or cnt == n_tied:
                        continue
                    i = cur[0] + (step[0] if sub & 1 else 0)
                    j = cur[1] + (step[1] if (sub >> 1) & 1 else 0)
                    k = cur[2] + (step[2] if (sub >> 2) & 1 else 0)
                    if _occ_at(occ, i, j, k):
                        return (i * ny + j) * nz + k
            for a in range(3):
                if tied[a]:
                    cur[a] += step[a]
                    t_max[a] += t_delta[a]
    return -1


def _check_bounds(grid: OccupancyGrid, p: NDArray) -> None:
    if not grid.in_bounds(p):
        raise OutOfBoundsError(f"point {p.tolist()} outside grid bounds")


def raycast(
    grid: OccupancyGrid, a: Sequence[float], b: Sequence[float], inflated: bool = True
) -> tuple[int, int, int] | None:
    """First occupied cell touched by segment a->b (supercover), or None."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_bounds(grid, a)
    _check_bounds(grid, b)
    o = grid.origin
    flat = first_hit(grid.layer(inflated), o[0], o[1], o[2], grid.resolution, a[0], a[1], a[2], b[0], b[1], b[2])
    if flat < 0:
        return None
    _, ny, nz = grid.dims
    return int(flat // (ny * nz)), int((flat // nz) % ny), int(flat % nz)


def line_of_sight(grid: OccupancyGrid, a: Sequence[float], b: Sequence[float], inflated: bool = True) -> bool:
    return raycast(grid, a, b, inflated) is None
