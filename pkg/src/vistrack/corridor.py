"""Safe flight corridors built from axis-aligned free boxes.

Each polytope is grown around a collision-free seed segment by pushing its six
faces outward one cell at a time until the next layer would touch an occupied
(inflated) cell, leave the map, or exceed a per-face size cap. The first
polytope is seeded by a short segment along the drone's initial velocity and
later ones follow the guiding path.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from numpy.typing import ArrayLike, NDArray

from .pathfinding import GuidePath
from .world import OccupancyGrid, line_of_sight

__all__ = [
    "Polytope",
    "Corridor",
    "SegmentCollisionError",
    "inflate_segment",
    "generate_corridor",
    "first_segment_length",
    "first_polytope",
]

_NORMALS = np.array(
    [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
    dtype=float,
)


class SegmentCollisionError(ValueError):
    """The seed segment (or the cell box around it) is not free."""


@dataclass(frozen=True)
class Polytope:
    """H-polytope ``{x | A x <= b}`` with unit-norm face normals."""

    A: NDArray[np.float64]
    b: NDArray[np.float64]

    def __post_init__(self) -> None:
        A = np.asarray(self.A, dtype=float).reshape(-1, 3)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if len(A) != len(b):
            raise ValueError("A and b row counts differ")
        if not np.allclose(np.linalg.norm(A, axis=1), 1.0):
            raise ValueError("face normals must be unit length")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_box(cls, lo: ArrayLike, hi: ArrayLike) -> "Polytope":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        return cls(_NORMALS.copy(), np.array([hi[0], -lo[0], hi[1], -lo[1], hi[2], -lo[2]]))

    def contains(self, x: ArrayLike, tol: float = 0.0) -> bool:
        return bool(np.all(self.A @ np.asarray(x, dtype=float) <= self.b + tol))

    def contains_many(self, pts: ArrayLike, tol: float = 0.0) -> NDArray[np.bool_]:
        pts = np.asarray(pts, dtype=float).reshape(-1, 3)
        return np.all(pts @ self.A.T <= self.b + tol, axis=1)

    def slack(self, x: ArrayLike) -> float:
        """Smallest distance from ``x`` to any face (negative outside)."""
        return float(np.min(self.b - self.A @ np.asarray(x, dtype=float)))

    def box_bounds(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Axis bounds, valid for the six-face boxes this module produces."""
        if len(self.A) != 6 or not np.array_equal(self.A, _NORMALS):
            raise ValueError("not an axis-aligned box")
        return np.array([-self.b[1], -self.b[3], -self.b[5]]), np.array([self.b[0], self.b[2], self.b[4]])

    def interior_point(self) -> NDArray[np.float64]:
        lo, hi = self.box_bounds()
        return 0.5 * (lo + hi)

    def to_text(self) -> str:
        rows = [f"{a[0]:.9g} {a[1]:.9g} {a[2]:.9g} {bi:.9g}" for a, bi in zip(self.A, self.b)]
        return "\n".join(rows)


@dataclass
class Corridor:
    """Ordered overlapping polytopes with one junction witness per overlap.

    ``segments[i]`` is the seed segment of ``polytopes[i]``. ``covered`` is the
    index of the last guide point covered by the corridor, ``failed_at`` the
    polytope index whose inflation was rejected (``None`` if none was).
    """

    polytopes: list[Polytope] = field(default_factory=list)
    segments: list[tuple[NDArray[np.float64], NDArray[np.float64]]] = field(default_factory=list)
    junctions: NDArray[np.float64] = field(default_factory=lambda: np.zeros((0, 3)))
    covered: int = -1
    failed_at: int | None = None

    def __len__(self) -> int:
        return len(self.polytopes)

    def locate(self, x: ArrayLike, tol: float = 0.0) -> int:
        """Index of the last polytope containing ``x``, or -1."""
        for i in range(len(self.polytopes) - 1, -1, -1):
            if self.polytopes[i].contains(x, tol):
                return i
        return -1

    def to_text(self) -> str:
        parts = [f"corridor {len(self.polytopes)}"]
        for i, poly in enumerate(self.polytopes):
            parts.append(f"polytope {i} {len(poly.b)}")
            parts.append(poly.to_text())
        for i, j in enumerate(self.junctions):
            parts.append(f"junction {i} {j[0]:.9g} {j[1]:.9g} {j[2]:.9g}")
        return "\n".join(parts) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Corridor":
        lines = [ln.split() for ln in text.strip().splitlines()]
        polys, junctions = [], []
        i = 1
        while i < len(lines):
            head = lines[i]
            if head[0] == "polytope":
                n = int(head[2])
                rows = np.array([[float(v) for v in ln] for ln in lines[i + 1 : i + 1 + n]])
                polys.append(Polytope(rows[:, :3], rows[:, 3]))
                i += n + 1
            else:
                junctions.append([float(v) for v in head[2:5]])
                i += 1
        return cls(polys, [], np.array(junctions).reshape(-1, 3))


# -- box growth ----------------------------------------------------------------

_volume_cache: "weakref.WeakKeyDictionary[OccupancyGrid, NDArray[np.int32]]" = weakref.WeakKeyDictionary()


def _summed_volume(grid: OccupancyGrid) -> NDArray[np.int32]:
    """Zero-padded 3D prefix sums of the inflated layer, cached per grid."""
    table = _volume_cache.get(grid)
    if table is None:
        nx, ny, nz = grid.dims
        table = np.zeros((nx + 1, ny + 1, nz + 1), dtype=np.int32)
        table[1:, 1:, 1:] = grid.occupied.astype(np.int32).cumsum(0).cumsum(1).cumsum(2)
        _volume_cache[grid] = table
    return table


@njit(cache=True)
def _box_count(S, i0, i1, j0, j1, k0, k1):
    # occupied cells in the inclusive index box
    i1 += 1
    j1 += 1
    k1 += 1
    return (
        S[i1, j1, k1] - S[i0, j1, k1] - S[i1, j0, k1] - S[i1, j1, k0]
        + S[i0, j0, k1] + S[i0, j1, k0] + S[i1, j0, k0] - S[i0, j0, k0]
    )


@njit(cache=True)
def _grow_box(S, lo, hi, dims, max_steps):
    """Round-robin face growth of the inclusive index box ``[lo, hi]``."""
    seed_lo = lo.copy()
    seed_hi = hi.copy()
    active = np.ones(6, dtype=np.bool_)
    n_active = 6
    while n_active > 0:
        for f in range(6):
            if not active[f]:
                continue
            axis = f // 2
            upward = f % 2 == 0
            a = lo.copy()
            b = hi.copy()
            if upward:
                layer = hi[axis] + 1
                ok = layer < dims[axis] and layer - seed_hi[axis] <= max_steps
            else:
                layer = lo[axis] - 1
                ok = layer >= 0 and seed_lo[axis] - layer <= max_steps
            if ok:
                a[axis] = layer
                b[axis] = layer
                ok = _box_count(S, a[0], b[0], a[1], b[1], a[2], b[2]) == 0
            if ok:
                if upward:
                    hi[axis] = layer
                else:
                    lo[axis] = layer
            else:
                active[f] = False
                n_active -= 1
    return lo, hi


def _cell_box(grid: OccupancyGrid, lo: NDArray[np.int64], hi: NDArray[np.int64]) -> Polytope:
    return Polytope.from_box(grid.origin + lo * grid.resolution, grid.origin + (hi + 1) * grid.resolution)


def inflate_segment(grid: OccupancyGrid, a: ArrayLike, b: ArrayLike, cap: float = 5.0) -> Polytope:
    """Grow a free axis-aligned box around segment ``a -> b``.

    The seed is the bounding box of the two endpoint cells; each face then
    moves outward at most ``cap`` metres.

    Raises:
        SegmentCollisionError: an endpoint is out of bounds, the segment is
            occluded in the inflated layer, or the seed box is not free.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if not (grid.in_bounds(a) and grid.in_bounds(b)):
        raise SegmentCollisionError("segment endpoint outside the map")
    if not line_of_sight(grid, a, b):
        raise SegmentCollisionError("segment crosses an occupied cell")
    ia = np.array(grid.index(a), dtype=np.int64)
    ib = np.array(grid.index(b), dtype=np.int64)
    lo = np.minimum(ia, ib)
    hi = np.maximum(ia, ib)
    S = _summed_volume(grid)
    if _box_count(S, lo[0], hi[0], lo[1], hi[1], lo[2], hi[2]) != 0:
        raise SegmentCollisionError("cell box around the segment is not free")
    max_steps = int(math.floor(cap / grid.resolution + 1e-9))
    lo, hi = _grow_box(S, lo, hi, np.array(grid.dims, dtype=np.int64), max_steps)
    return _cell_box(grid, lo, hi)


def first_segment_length(speed: float) -> float:
    return max(0.3, 0.2 * speed)


def _initial_direction(p0: NDArray, v0: NDArray, path: NDArray) -> NDArray | None:
    speed = float(np.linalg.norm(v0))
    if speed >= 0.1:
        return v0 / speed
    for g in path:
        d = g - p0
        n = float(np.linalg.norm(d))
        if n > 1e-9:
            return d / n
    return None


def _first_polytope(grid, p0, direction, length, cap):
    """Inflate the velocity-aligned seed, halving it while it collides."""
    if direction is not None:
        for _ in range(6):
            end = p0 + length * direction
            try:
                return inflate_segment(grid, p0, end, cap), end
            except SegmentCollisionError:
                length *= 0.5
    return inflate_segment(grid, p0, p0, cap), p0.copy()


def first_polytope(
    grid: OccupancyGrid,
    p0: ArrayLike,
    v0: ArrayLike,
    guide_points: ArrayLike | None = None,
    cap: float = 5.0,
    first_length: float | None = None,
) -> tuple[Polytope, NDArray[np.float64]]:
    """Polytope around the velocity-aligned first segment and that segment's
    end. Without a usable velocity the direction comes from ``guide_points``;
    without either the seed degenerates to ``p0`` itself."""
    p0 = np.asarray(p0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    pts = np.zeros((0, 3)) if guide_points is None else np.asarray(guide_points, dtype=float).reshape(-1, 3)
    length = first_segment_length(float(np.linalg.norm(v0))) if first_length is None else first_length
    return _first_polytope(grid, p0, _initial_direction(p0, v0, pts), length, cap)


def _last_inside(poly: Polytope, path: NDArray, start: int) -> int:
    """Walk forward from ``start`` while guide points stay inside ``poly``."""
    m = start
    while m + 1 < len(path) and poly.contains(path[m + 1]):
        m += 1
    return m


def generate_corridor(
    grid: OccupancyGrid,
    p0: ArrayLike,
    v0: ArrayLike,
    guide: GuidePath | ArrayLike,
    max_polytopes: int = 10,
    cap: float = 5.0,
    first_length: float | None = None,
    first: tuple[Polytope, NDArray[np.float64]] | None = None,
) -> Corridor:
    """Chain polytopes from the drone position along the guiding path.

    ``P_1`` is grown around ``[p0, p0 + l * v_hat]``. Every later seed runs from
    the previous seed's end to the last guide point still inside the previous
    polytope; if that box makes no progress along the guide, the next guide
    step itself is used as seed. A junction witness is the centre of the cell
    containing the shared seed point, so it lies in both neighbours with slack
    of at least half a cell.

    ``first`` may carry a precomputed :func:`first_polytope` result.
    """
    p0 = np.asarray(p0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    pts = guide.points if isinstance(guide, GuidePath) else np.asarray(guide, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("guide path is empty")
    if grid.is_occupied(p0):
        raise ValueError("corridor start position is not free")

    poly, end = first if first is not None else first_polytope(grid, p0, v0, pts, cap, first_length)
    path = pts if np.allclose(pts[0], end, atol=1e-9) else np.vstack([end[None, :], pts])
    offset = len(path) - len(pts)

    corridor = Corridor(polytopes=[poly], segments=[(p0.copy(), end.copy())])
    junctions: list[NDArray] = []
    m = _last_inside(poly, path, 0)
    seg_end = end
    while m < len(path) - 1 and len(corridor.polytopes) < max_polytopes:
        prev = corridor.polytopes[-1]
        candidates = [] if np.allclose(seg_end, path[m]) else [(seg_end, path[m])]
        candidates.append((path[m], path[m + 1]))
        new = None
        for a, b in candidates:
            try:
                cand = inflate_segment(grid, a, b, cap)
            except SegmentCollisionError:
                continue
            if not cand.contains(path[m + 1]):
                continue
            new, seg = cand, (a.copy(), b.copy())
            break
        if new is None:
            corridor.failed_at = len(corridor.polytopes)
            break
        witness = grid.center(grid.index(seg[0]))
        if not (prev.contains(witness) and new.contains(witness)):
            corridor.failed_at = len(corridor.polytopes)
            break
        corridor.polytopes.append(new)
        corridor.segments.append(seg)
        junctions.append(witness)
        m = _last_inside(new, path, m + 1)
        seg_end = seg[1]
    corridor.junctions = np.array(junctions).reshape(-1, 3)
    corridor.covered = m - offset
    return corridor
