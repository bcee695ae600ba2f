"""Minimum-jerk piecewise quintic trajectories parameterized by waypoints and
durations.

A trajectory with ``M`` pieces is fully determined by its intermediate
waypoints ``q`` (``M - 1`` points), the piece durations ``T`` and the
position/velocity/acceleration at both ends. The coefficients solve a banded
``6M x 6M`` linear system (bandwidth 6 on each side) that encodes the boundary
states, waypoint interpolation and continuity of derivatives up to order four.
Gradients of any cost written in terms of the coefficients are pulled back to
``(q, T)`` with one transposed solve against the same factorization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "BoundaryState",
    "Trajectory",
    "construct",
    "propagate_gradient",
    "basis",
    "MIN_DURATION",
]

MIN_DURATION = 1e-6
DEGREE = 5
_NCOEF = DEGREE + 1
_BAND = 6

# _DERIV[k, j] = j! / (j - k)!  (zero for j < k)
_DERIV = np.zeros((_NCOEF + 1, _NCOEF))
for _k in range(_NCOEF + 1):
    for _j in range(_k, _NCOEF):
        _DERIV[_k, _j] = np.prod(np.arange(_j - _k + 1, _j + 1)) if _k else 1.0


def basis(t: ArrayLike, order: int = 0) -> NDArray[np.float64]:
    """Derivative of the natural basis ``(1, t, ..., t^5)``; shape ``(..., 6)``."""
    t = np.asarray(t, dtype=float)
    if order > DEGREE:
        return np.zeros(t.shape + (_NCOEF,))
    powers = np.arange(_NCOEF) - order
    out = _DERIV[order] * np.where(powers >= 0, t[..., None] ** np.maximum(powers, 0), 0.0)
    return out


@dataclass(frozen=True)
class BoundaryState:
    position: NDArray[np.float64]
    velocity: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))
    acceleration: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        for name in ("position", "velocity", "acceleration"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(3)
            if not np.all(np.isfinite(v)):
                raise ValueError(f"boundary {name} must be finite")
            object.__setattr__(self, name, v)

    def as_array(self) -> NDArray[np.float64]:
        return np.vstack([self.position, self.velocity, self.acceleration])


# -- banded system ----------------------------------------------------------------


@njit(cache=True)
def _assemble(T):
    """Band storage: entry (i, j) lives at ``band[i, j - i + 6]``."""
    M = T.shape[0]
    n = 6 * M
    band = np.zeros((n, 2 * _BAND + 1))
    lo = _BAND

    band[0, 0 + lo] = 1.0
    band[1, 0 + lo] = 1.0
    band[2, 0 + lo] = 2.0
    for i in range(M - 1):
        t1 = T[i]
        t2 = t1 * t1
        t3 = t2 * t1
        t4 = t3 * t1
        t5 = t4 * t1
        c = 6 * i
        r = c + 3
        # jerk continuity
        band[r, c + 3 - r + lo] = 6.0
        band[r, c + 4 - r + lo] = 24.0 * t1
        band[r, c + 5 - r + lo] = 60.0 * t2
        band[r, c + 9 - r + lo] = -6.0
        r = c + 4
        # snap continuity
        band[r, c + 4 - r + lo] = 24.0
        band[r, c + 5 - r + lo] = 120.0 * t1
        band[r, c + 10 - r + lo] = -24.0
        r = c + 5
        # waypoint interpolation
        band[r, c - r + lo] = 1.0
        band[r, c + 1 - r + lo] = t1
        band[r, c + 2 - r + lo] = t2
        band[r, c + 3 - r + lo] = t3
        band[r, c + 4 - r + lo] = t4
        band[r, c + 5 - r + lo] = t5
        r = c + 6
        # position continuity
        band[r, c - r + lo] = 1.0
        band[r, c + 1 - r + lo] = t1
        band[r, c + 2 - r + lo] = t2
        band[r, c + 3 - r + lo] = t3
        band[r, c + 4 - r + lo] = t4
        band[r, c + 5 - r + lo] = t5
        band[r, c + 6 - r + lo] = -1.0
        r = c + 7
        # velocity continuity
        band[r, c + 1 - r + lo] = 1.0
        band[r, c + 2 - r + lo] = 2.0 * t1
        band[r, c + 3 - r + lo] = 3.0 * t2
        band[r, c + 4 - r + lo] = 4.0 * t3
        band[r, c + 5 - r + lo] = 5.0 * t4
        band[r, c + 7 - r + lo] = -1.0
        r = c + 8
        # acceleration continuity
        band[r, c + 2 - r + lo] = 2.0
        band[r, c + 3 - r + lo] = 6.0 * t1
        band[r, c + 4 - r + lo] = 12.0 * t2
        band[r, c + 5 - r + lo] = 20.0 * t3
        band[r, c + 8 - r + lo] = -2.0

    t1 = T[M - 1]
    t2 = t1 * t1
    t3 = t2 * t1
    t4 = t3 * t1
    t5 = t4 * t1
    c = 6 * (M - 1)
    r = n - 3
    band[r, c - r + lo] = 1.0
    band[r, c + 1 - r + lo] = t1
    band[r, c + 2 - r + lo] = t2
    band[r, c + 3 - r + lo] = t3
    band[r, c + 4 - r + lo] = t4
    band[r, c + 5 - r + lo] = t5
    r = n - 2
    band[r, c + 1 - r + lo] = 1.0
    band[r, c + 2 - r + lo] = 2.0 * t1
    band[r, c + 3 - r + lo] = 3.0 * t2
    band[r, c + 4 - r + lo] = 4.0 * t3
    band[r, c + 5 - r + lo] = 5.0 * t4
    r = n - 1
    band[r, c + 2 - r + lo] = 2.0
    band[r, c + 3 - r + lo] = 6.0 * t1
    band[r, c + 4 - r + lo] = 12.0 * t2
    band[r, c + 5 - r + lo] = 20.0 * t3
    return band


@njit(cache=True)
def _factorize(band):
    """In-place LU (unit lower) of a banded matrix, no pivoting."""
    n = band.shape[0]
    lo = _BAND
    for k in range(n):
        piv = band[k, lo]
        i_max = min(k + _BAND, n - 1)
        j_max = min(k + _BAND, n - 1)
        for i in range(k + 1, i_max + 1):
            if band[i, k - i + lo] != 0.0:
                band[i, k - i + lo] /= piv
        for j in range(k + 1, j_max + 1):
            u = band[k, j - k + lo]
            if u != 0.0:
                for i in range(k + 1, i_max + 1):
                    l_ik = band[i, k - i + lo]
                    if l_ik != 0.0:
                        band[i, j - i + lo] -= l_ik * u


@njit(cache=True)
def _solve(band, rhs):
    n = band.shape[0]
    w = rhs.shape[1]
    lo = _BAND
    for j in range(n):
        i_max = min(j + _BAND, n - 1)
        for i in range(j + 1, i_max + 1):
            l_ij = band[i, j - i + lo]
            if l_ij != 0.0:
                for c in range(w):
                    rhs[i, c] -= l_ij * rhs[j, c]
    for j in range(n - 1, -1, -1):
        piv = band[j, lo]
        for c in range(w):
            rhs[j, c] /= piv
        i_min = max(0, j - _BAND)
        for i in range(i_min, j):
            u_ij = band[i, j - i + lo]
            if u_ij != 0.0:
                for c in range(w):
                    rhs[i, c] -= u_ij * rhs[j, c]


@njit(cache=True)
def _solve_transposed(band, rhs):
    """Solve ``(LU)^T x = rhs`` in place."""
    n = band.shape[0]
    w = rhs.shape[1]
    lo = _BAND
    # U^T y = rhs (U^T is lower triangular)
    for j in range(n):
        i_min = max(0, j - _BAND)
        for i in range(i_min, j):
            u_ij = band[i, j - i + lo]
            if u_ij != 0.0:
                for c in range(w):
                    rhs[j, c] -= u_ij * rhs[i, c]
        piv = band[j, lo]
        for c in range(w):
            rhs[j, c] /= piv
    # L^T x = y (unit upper triangular)
    for j in range(n - 1, -1, -1):
        i_max = min(j + _BAND, n - 1)
        for i in range(j + 1, i_max + 1):
            l_ij = band[i, j - i + lo]
            if l_ij != 0.0:
                for c in range(w):
                    rhs[j, c] -= l_ij * rhs[i, c]


@njit(cache=True)
def _duration_adjoint(coeffs, T, lam, dF_dT):
    """``dJ/dT_i = dF/dT_i - sum_rows lam_row . (dA/dT_i c)_row``."""
    M = T.shape[0]
    out = dF_dT.copy()
    d = np.zeros((6, 3))
    tp = np.zeros(6)
    for i in range(M):
        t = T[i]
        tp[0] = 1.0
        for m in range(1, 6):
            tp[m] = tp[m - 1] * t
        # d[k] = k-th derivative of piece i at its end
        for k in range(6):
            for c in range(3):
                acc = 0.0
                for j in range(k, 6):
                    f = 1.0
                    for m in range(j - k + 1, j + 1):
                        f *= m
                    acc += f * tp[j - k] * coeffs[i, j, c]
                d[k, c] = acc
        r = 6 * i
        s = 0.0
        for c in range(3):
            if i < M - 1:
                s += lam[r + 3, c] * d[4, c] + lam[r + 4, c] * d[5, c] + lam[r + 5, c] * d[1, c]
                s += lam[r + 6, c] * d[1, c] + lam[r + 7, c] * d[2, c] + lam[r + 8, c] * d[3, c]
            else:
                s += lam[r + 3, c] * d[1, c] + lam[r + 4, c] * d[2, c] + lam[r + 5, c] * d[3, c]
        out[i] -= s
    return out


# -- trajectory ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Piecewise quintic; ``coeffs[i, j]`` multiplies ``t^j`` on piece ``i``."""

    coeffs: NDArray[np.float64]
    durations: NDArray[np.float64]
    lu: NDArray[np.float64] | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float).reshape(-1, _NCOEF, 3))
        object.__setattr__(self, "durations", np.asarray(self.durations, dtype=float).reshape(-1))
        if len(self.coeffs) != len(self.durations):
            raise ValueError("one duration per piece required")
        object.__setattr__(self, "_starts", np.concatenate([[0.0], np.cumsum(self.durations)]))

    @property
    def pieces(self) -> int:
        return len(self.durations)

    @property
    def total_duration(self) -> float:
        return float(self._starts[-1])

    @property
    def piece_starts(self) -> NDArray[np.float64]:
        return self._starts[:-1].copy()

    @property
    def waypoints(self) -> NDArray[np.float64]:
        return np.array([self.piece_eval(i, self.durations[i]) for i in range(self.pieces - 1)]).reshape(-1, 3)

    def piece_eval(self, i: int, t: ArrayLike, order: int = 0) -> NDArray[np.float64]:
        """Derivative ``order`` of piece ``i`` at local time(s) ``t``."""
        return basis(t, order) @ self.coeffs[i]

    def locate(self, t: ArrayLike) -> tuple[NDArray[np.int64], NDArray[np.float64]]:
        """Piece index and local time for absolute time(s) ``t``.

        A time exactly on a junction belongs to the later piece; the final
        instant belongs to the last piece.
        """
        t = np.asarray(t, dtype=float)
        total = self.total_duration
        if np.any(t < -1e-12) or np.any(t > total + 1e-9):
            raise ValueError("time outside the trajectory")
        idx = np.clip(np.searchsorted(self._starts, t, side="right") - 1, 0, self.pieces - 1)
        return idx, np.clip(t - self._starts[idx], 0.0, None)

    def evaluate(self, t: ArrayLike, order: int = 0) -> NDArray[np.float64]:
        """Derivative ``order`` (0..5, higher returns zeros) at absolute time."""
        if order < 0:
            raise ValueError("order must be nonnegative")
        t_arr = np.asarray(t, dtype=float)
        idx, local = self.locate(t_arr)
        b = basis(local, order)
        out = np.einsum("...j,...jd->...d", b, self.coeffs[idx])
        return out

    def start_state(self) -> BoundaryState:
        return BoundaryState(*(self.piece_eval(0, 0.0, k) for k in range(3)))

    def end_state(self) -> BoundaryState:
        return BoundaryState(*(self.piece_eval(self.pieces - 1, self.durations[-1], k) for k in range(3)))

    def sample(self, n: int, order: int = 0) -> NDArray[np.float64]:
        return self.evaluate(np.linspace(0.0, self.total_duration, n), order)

    def to_dict(self) -> dict:
        return {"pieces": self.pieces, "durations": self.durations.tolist(), "coefficients": self.coeffs.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Trajectory":
        return cls(np.array(data["coefficients"]), np.array(data["durations"]))

    def to_text(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_text(cls, text: str) -> "Trajectory":
        return cls.from_dict(json.loads(text))


def construct(
    q: ArrayLike, T: ArrayLike, start: BoundaryState, end: BoundaryState
) -> Trajectory:
    """Solve for the coefficients of the minimum-jerk trajectory through ``q``.

    Raises:
        ValueError: wrong shapes or a duration below ``MIN_DURATION``.
    """
    T = np.asarray(T, dtype=float).reshape(-1)
    M = len(T)
    if M < 1:
        raise ValueError("need at least one piece")
    q = np.asarray(q, dtype=float).reshape(-1, 3)
    if len(q) != M - 1:
        raise ValueError(f"expected {M - 1} intermediate waypoints, got {len(q)}")
    if not np.all(np.isfinite(T)) or np.any(T < MIN_DURATION):
        raise ValueError("piece durations must be finite and positive")
    if not np.all(np.isfinite(q)):
        raise ValueError("waypoints must be finite")

    band = _assemble(T)
    _factorize(band)
    if not np.all(np.isfinite(band)):
        raise np.linalg.LinAlgError("singular trajectory system")
    rhs = np.zeros((6 * M, 3))
    rhs[0:3] = start.as_array()
    if M > 1:
        rhs[6 * np.arange(M - 1) + 5] = q
    rhs[6 * M - 3 :] = end.as_array()
    _solve(band, rhs)
    return Trajectory(rhs.reshape(M, _NCOEF, 3), T.copy(), band)


def propagate_gradient(
    traj: Trajectory, dF_dc: ArrayLike, dF_dT: ArrayLike
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Pull ``(dF/dc, dF/dT)`` back to ``(dJ/dq, dJ/dT)`` with the adjoint."""
    M = traj.pieces
    g = np.array(dF_dc, dtype=float)
    if g.size != 6 * M * 3:
        raise ValueError("dF_dc must hold 6 x 3 entries per piece")
    dF_dT = np.asarray(dF_dT, dtype=float).reshape(-1)
    if len(dF_dT) != M:
        raise ValueError("dF_dT must hold one entry per piece")
    band = traj.lu
    if band is None:
        band = _assemble(traj.durations)
        _factorize(band)
    lam = g.reshape(6 * M, 3)
    _solve_transposed(band, lam)
    dq = lam[6 * np.arange(M - 1) + 5].copy()
    dT = _duration_adjoint(traj.coeffs, traj.durations, lam, dF_dT)
    return dq, dT
