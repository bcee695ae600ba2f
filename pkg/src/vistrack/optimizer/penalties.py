"""Cost terms of the tracking objective with analytic gradients.

Every term returns ``(cost, dF_dc, dF_dT)``: the weighted cost, its gradient
with respect to the coefficient blocks ``(M, 6, 3)`` and with respect to the
piece durations ``(M,)``. The kernels are compiled with numba because they
run once per objective evaluation inside the solver.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from numba import njit
from numpy.typing import ArrayLike, NDArray

from ..corridor import Corridor, Polytope
from ..minco import Trajectory
from ..prediction import Prediction
from ..visibility import VisibleSector
from .config import PenaltyConfig

__all__ = [
    "hinge3",
    "distance_shape",
    "quadrature_weights",
    "jerk_time_cost",
    "integral_penalty",
    "distance_penalty",
    "occlusion_penalty",
    "corridor_arrays",
    "sector_arrays",
]


@njit(cache=True)
def _hinge3(x):
    if x <= 0.0:
        return 0.0, 0.0
    return x * x * x, 3.0 * x * x


def hinge3(x: float) -> tuple[float, float]:
    """``max(x, 0)^3`` and its derivative."""
    return _hinge3(float(x))


@njit(cache=True)
def _distance_shape(x, d_l, d_u, eps):
    """Horizontal distance penalty: cubic below ``d_l``, flat, a quartic
    bridge around ``d_u`` and slope 16 beyond ``d_u + eps``."""
    if x <= d_l:
        r = d_l - x
        return r * r * r, -3.0 * r * r
    if x < d_u - eps:
        return 0.0, 0.0
    if x < d_u + eps:
        y = max(x - (d_u - eps), 0.0)
        e3 = eps * eps * eps
        return y * y * y * (4.0 * eps - y) / e3, (12.0 * eps * y * y - 4.0 * y * y * y) / e3
    return 16.0 * (x - d_u), 16.0


def distance_shape(x: float, d_lower: float, d_upper: float, bridge: float) -> tuple[float, float]:
    return _distance_shape(float(x), d_lower, d_upper, bridge)


def quadrature_weights(kappa: int) -> NDArray[np.float64]:
    w = np.ones(kappa + 1)
    w[0] = w[-1] = 0.5
    return w


# -- kernels ---------------------------------------------------------------------


@njit(cache=True)
def _jerk_kernel(coeffs, T, rho):
    M = T.shape[0]
    gc = np.zeros((M, 6, 3))
    gT = np.zeros(M)
    energy = 0.0
    for i in range(M):
        t1 = T[i]
        t2 = t1 * t1
        t3 = t2 * t1
        t4 = t3 * t1
        t5 = t4 * t1
        jj = 0.0
        for d in range(3):
            c3 = coeffs[i, 3, d]
            c4 = coeffs[i, 4, d]
            c5 = coeffs[i, 5, d]
            energy += (
                36.0 * c3 * c3 * t1 + 144.0 * c3 * c4 * t2 + 192.0 * c4 * c4 * t3
                + 240.0 * c3 * c5 * t3 + 720.0 * c4 * c5 * t4 + 720.0 * c5 * c5 * t5
            )
            gc[i, 3, d] = 72.0 * c3 * t1 + 144.0 * c4 * t2 + 240.0 * c5 * t3
            gc[i, 4, d] = 144.0 * c3 * t2 + 384.0 * c4 * t3 + 720.0 * c5 * t4
            gc[i, 5, d] = 240.0 * c3 * t3 + 720.0 * c4 * t4 + 1440.0 * c5 * t5
            jerk = 6.0 * c3 + 24.0 * c4 * t1 + 60.0 * c5 * t2
            jj += jerk * jerk
        gT[i] = jj + rho
    return energy, rho * T.sum(), gc, gT


@njit(cache=True)
def _integral_kernel(coeffs, T, A, b, kappa, margin, v2, a2, w_h, w_v, w_a):
    # scalar loops throughout: tiny vector products would allocate per sample
    M = T.shape[0]
    n_poly = A.shape[0]
    n_face = A.shape[1]
    gc = np.zeros((M, 6, 3))
    gT = np.zeros(M)
    terms = np.zeros(3)
    b0 = np.zeros(6)
    b1 = np.zeros(6)
    b2 = np.zeros(6)
    b3 = np.zeros(6)
    p = np.zeros(3)
    v = np.zeros(3)
    a = np.zeros(3)
    jr = np.zeros(3)
    dp = np.zeros(3)
    dv = np.zeros(3)
    da = np.zeros(3)
    for i in range(M):
        poly = min(i // 2, n_poly - 1)
        Ti = T[i]
        h = Ti / kappa
        for j in range(kappa + 1):
            s = j / kappa
            t = s * Ti
            omega = 0.5 if (j == 0 or j == kappa) else 1.0
            tp = 1.0
            for m in range(6):
                b0[m] = tp
                tp *= t
            for m in range(6):
                b1[m] = m * b0[m - 1] if m >= 1 else 0.0
                b2[m] = m * (m - 1) * b0[m - 2] if m >= 2 else 0.0
                b3[m] = m * (m - 1) * (m - 2) * b0[m - 3] if m >= 3 else 0.0
            for d in range(3):
                sp = 0.0
                sv = 0.0
                sa = 0.0
                sj = 0.0
                for m in range(6):
                    c = coeffs[i, m, d]
                    sp += b0[m] * c
                    sv += b1[m] * c
                    sa += b2[m] * c
                    sj += b3[m] * c
                p[d] = sp
                v[d] = sv
                a[d] = sa
                jr[d] = sj
                dp[d] = 0.0
                dv[d] = 0.0
                da[d] = 0.0

            lh = 0.0
            for r in range(n_face):
                g = A[poly, r, 0] * p[0] + A[poly, r, 1] * p[1] + A[poly, r, 2] * p[2] - b[poly, r] + margin
                if g > 0.0:
                    lh += g * g * g
                    f = 3.0 * w_h * g * g
                    for d in range(3):
                        dp[d] += f * A[poly, r, d]
            lv = 0.0
            g = v[0] * v[0] + v[1] * v[1] + v[2] * v[2] - v2
            if g > 0.0:
                lv = g * g * g
                f = 6.0 * w_v * g * g
                for d in range(3):
                    dv[d] = f * v[d]
            la = 0.0
            g = a[0] * a[0] + a[1] * a[1] + a[2] * a[2] - a2
            if g > 0.0:
                la = g * g * g
                f = 6.0 * w_a * g * g
                for d in range(3):
                    da[d] = f * a[d]
            if lh == 0.0 and lv == 0.0 and la == 0.0:
                continue
            fac = h * omega
            terms[0] += fac * w_h * lh
            terms[1] += fac * w_v * lv
            terms[2] += fac * w_a * la
            chain = 0.0
            for d in range(3):
                chain += dp[d] * v[d] + dv[d] * a[d] + da[d] * jr[d]
                for m in range(6):
                    gc[i, m, d] += fac * (b0[m] * dp[d] + b1[m] * dv[d] + b2[m] * da[d])
            gT[i] += omega * (w_h * lh + w_v * lv + w_a * la) / kappa + fac * s * chain
    return terms, gc, gT


@njit(cache=True)
def _locate(starts, M, t):
    j = 0
    while j + 1 < M and starts[j + 1] <= t:
        j += 1
    tau = t - starts[j]
    if tau < 0.0:
        tau = 0.0
    return j, tau


@njit(cache=True)
def _absolute_kernel(coeffs, T, times, targets, axes, cos_thr, d_l, d_u, eps, v_tol, w_d, w_o, use_dist, use_occ):
    M = T.shape[0]
    gc = np.zeros((M, 6, 3))
    gT = np.zeros(M)
    terms = np.zeros(2)
    starts = np.zeros(M + 1)
    for i in range(M):
        starts[i + 1] = starts[i] + T[i]
    b0 = np.zeros(6)
    p = np.zeros(3)
    v = np.zeros(3)
    r = np.zeros(3)
    g = np.zeros(3)
    for k in range(times.shape[0]):
        j, tau = _locate(starts, M, times[k])
        tp = 1.0
        for m in range(6):
            b0[m] = tp
            tp *= tau
        for d in range(3):
            sp = 0.0
            sv = 0.0
            for m in range(6):
                c = coeffs[j, m, d]
                sp += b0[m] * c
                if m >= 1:
                    sv += m * b0[m - 1] * c
            p[d] = sp
            v[d] = sv
            r[d] = sp - targets[k, d]
            g[d] = 0.0
        if use_dist:
            dh = math.sqrt(r[0] * r[0] + r[1] * r[1])
            val, d1 = _distance_shape(dh, d_l, d_u, eps)
            terms[0] += w_d * val
            if dh > 1e-9:
                g[0] += w_d * d1 * r[0] / dh
                g[1] += w_d * d1 * r[1] / dh
            val, d1 = _hinge3(abs(r[2]) - v_tol)
            terms[0] += w_d * val
            if val > 0.0:
                g[2] += w_d * d1 * (1.0 if r[2] > 0.0 else -1.0)
        if use_occ:
            n = math.sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2])
            rx = r[0] * axes[k, 0] + r[1] * axes[k, 1] + r[2] * axes[k, 2]
            if n > 1e-6:
                cosang = rx / n
                val, d1 = _hinge3(cos_thr[k] - cosang)
                terms[1] += w_o * val
                if val > 0.0:
                    f = -w_o * d1 / n
                    for d in range(3):
                        g[d] += f * (axes[k, d] - cosang * r[d] / n)
            else:
                val, d1 = _hinge3(cos_thr[k] - rx / 1e-6)
                terms[1] += w_o * val
        if g[0] == 0.0 and g[1] == 0.0 and g[2] == 0.0:
            continue
        gv = g[0] * v[0] + g[1] * v[1] + g[2] * v[2]
        for m in range(6):
            for d in range(3):
                gc[j, m, d] += b0[m] * g[d]
        for i in range(j):
            gT[i] -= gv
    return terms, gc, gT


# -- argument packing -------------------------------------------------------------


def corridor_arrays(corridor: Corridor | Sequence[Polytope]) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Stack polytope rows, padding with inactive faces."""
    polys = corridor.polytopes if isinstance(corridor, Corridor) else list(corridor)
    n_face = max(len(p.b) for p in polys)
    A = np.zeros((len(polys), n_face, 3))
    b = np.full((len(polys), n_face), 1e30)
    for i, p in enumerate(polys):
        A[i, : len(p.b)] = p.A
        b[i, : len(p.b)] = p.b
    return A, b


def sector_arrays(sectors: Sequence[VisibleSector], clearance: float) -> tuple[NDArray, NDArray]:
    axes = np.array([s.axis for s in sectors]).reshape(-1, 3)
    # a sector narrower than the clearance collapses onto its bisector
    cos_thr = np.array([math.cos(max(s.half_angle - clearance, 0.0)) for s in sectors])
    return axes, cos_thr


def _times_targets(prediction: Prediction | tuple[ArrayLike, ArrayLike]) -> tuple[NDArray, NDArray]:
    if isinstance(prediction, Prediction):
        return prediction.times, prediction.waypoints
    times, targets = prediction
    return np.asarray(times, dtype=float).reshape(-1), np.asarray(targets, dtype=float).reshape(-1, 3)


# -- public terms -------------------------------------------------------------------


def jerk_time_cost(traj: Trajectory, rho: float) -> tuple[float, NDArray, NDArray]:
    """Closed-form squared-jerk integral plus ``rho * sum(T)``."""
    energy, time_cost, gc, gT = _jerk_kernel(traj.coeffs, traj.durations, float(rho))
    return energy + time_cost, gc, gT


def integral_penalty(
    traj: Trajectory, corridor: Corridor | Sequence[Polytope], config: PenaltyConfig
) -> tuple[float, NDArray, NDArray]:
    """Trapezoid-sampled cubic hinge on corridor faces, speed and acceleration.

    Pieces ``2i`` and ``2i + 1`` are held in polytope ``i``.
    """
    A, b = corridor_arrays(corridor)
    terms, gc, gT = _integral_kernel(
        traj.coeffs, traj.durations, A, b, config.samples_per_piece, config.corridor_margin,
        config.v_max**2, config.a_max**2, config.w_corridor, config.w_velocity, config.w_acceleration,
    )
    return float(terms.sum()), gc, gT


def distance_penalty(
    traj: Trajectory, prediction: Prediction | tuple[ArrayLike, ArrayLike], config: PenaltyConfig
) -> tuple[float, NDArray, NDArray]:
    times, targets = _times_targets(prediction)
    terms, gc, gT = _absolute_kernel(
        traj.coeffs, traj.durations, times, targets, np.zeros((len(times), 3)), np.zeros(len(times)),
        config.d_lower, config.d_upper, config.bridge_width, config.vertical_tolerance,
        config.w_distance, config.w_occlusion, True, False,
    )
    return float(terms[0]), gc, gT


def occlusion_penalty(
    traj: Trajectory,
    prediction: Prediction | tuple[ArrayLike, ArrayLike],
    sectors: Sequence[VisibleSector],
    config: PenaltyConfig,
) -> tuple[float, NDArray, NDArray]:
    times, targets = _times_targets(prediction)
    if len(sectors) != len(times):
        raise ValueError("one sector per prediction timestamp required")
    axes, cos_thr = sector_arrays(sectors, config.angle_clearance)
    terms, gc, gT = _absolute_kernel(
        traj.coeffs, traj.durations, times, targets, axes, cos_thr,
        config.d_lower, config.d_upper, config.bridge_width, config.vertical_tolerance,
        config.w_distance, config.w_occlusion, False, True,
    )
    return float(terms[1]), gc, gT
