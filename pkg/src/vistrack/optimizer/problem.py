"""Assembly of the tracking problem over ``(q, tau)`` and its solver."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit
from numpy.typing import ArrayLike, NDArray

from ..corridor import Corridor
from ..minco import MIN_DURATION, BoundaryState, Trajectory, construct, propagate_gradient
from ..minco import _assemble, _duration_adjoint, _factorize, _solve, _solve_transposed
from ..prediction import Prediction
from ..visibility import VisibleSector
from .config import PenaltyConfig
from .lbfgs import LbfgsResult, NonFiniteCostError, minimize
from .penalties import _absolute_kernel, _integral_kernel, _jerk_kernel, corridor_arrays, sector_arrays
from .timemap import T_to_tau, tau_gradient, tau_to_T

__all__ = ["Problem", "Objective", "SolveResult", "solve", "warm_start", "trapezoid_durations", "TERMS"]

TERMS = ("jerk", "time", "corridor", "velocity", "acceleration", "distance", "occlusion")
_MIN_SLACK = 0.1
_MIN_PIECE = 0.05


@dataclass
class Problem:
    """Everything one optimization needs; pieces come two per polytope."""

    corridor: Corridor
    times: NDArray[np.float64]
    targets: NDArray[np.float64]
    sectors: Sequence[VisibleSector]
    start: BoundaryState
    end: BoundaryState
    horizon: float
    config: PenaltyConfig = field(default_factory=PenaltyConfig)

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        self.targets = np.asarray(self.targets, dtype=float).reshape(-1, 3)
        if len(self.corridor) == 0:
            raise ValueError("corridor is empty")
        if len(self.sectors) != len(self.times) or len(self.targets) != len(self.times):
            raise ValueError("need one target and one sector per timestamp")
        if np.any(self.times > self.horizon + 1e-12):
            raise ValueError("timestamps beyond the horizon")

    @classmethod
    def from_prediction(
        cls,
        corridor: Corridor,
        prediction: Prediction,
        sectors: Sequence[VisibleSector],
        start: BoundaryState,
        end: BoundaryState,
        config: PenaltyConfig | None = None,
    ) -> "Problem":
        return cls(corridor, prediction.times, prediction.waypoints, sectors, start, end, prediction.horizon,
                   config or PenaltyConfig())

    @property
    def pieces(self) -> int:
        return 2 * len(self.corridor)

    @property
    def n_vars(self) -> int:
        return 3 * (self.pieces - 1) + self.pieces


@njit(cache=True)
def _objective_kernel(x, M, horizon, start, end, A, b, times, targets, axes, cos_thr, params):
    """Whole objective in one compiled call; mirrors the modular path in
    :meth:`Objective.terms_and_gradients` term for term."""
    (rho, kappa, margin, v2, a2, w_h, w_v, w_a, d_l, d_u, eps, v_tol, w_d, w_o) = (
        params[0], int(params[1]), params[2], params[3], params[4], params[5], params[6], params[7],
        params[8], params[9], params[10], params[11], params[12], params[13],
    )
    nq = 3 * (M - 1)
    tau = x[nq:]
    terms = np.zeros(7)
    grad = np.zeros(x.shape[0])
    # durations from the softmax split
    shift = 0.0
    for i in range(M - 1):
        if tau[i] > shift:
            shift = tau[i]
    w = np.empty(M)
    tot = 0.0
    for i in range(M):
        w[i] = math.exp((tau[i] if i < M - 1 else 0.0) - shift)
        tot += w[i]
    total = horizon + tau[M - 1] * tau[M - 1]
    T = np.empty(M)
    for i in range(M):
        w[i] /= tot
        T[i] = w[i] * total
        if not (T[i] >= MIN_DURATION) or not math.isfinite(T[i]):
            terms[0] = math.inf
            return math.inf, grad, terms
    for k in range(nq):
        if not math.isfinite(x[k]):
            terms[0] = math.inf
            return math.inf, grad, terms

    band = _assemble(T)
    _factorize(band)
    rhs = np.zeros((6 * M, 3))
    for r in range(3):
        for d in range(3):
            rhs[r, d] = start[r, d]
            rhs[6 * M - 3 + r, d] = end[r, d]
    for i in range(M - 1):
        for d in range(3):
            rhs[6 * i + 5, d] = x[3 * i + d]
    _solve(band, rhs)
    coeffs = rhs.reshape(M, 6, 3)

    energy, time_cost, gc, gT = _jerk_kernel(coeffs, T, rho)
    integ, gc_i, gT_i = _integral_kernel(coeffs, T, A, b, kappa, margin, v2, a2, w_h, w_v, w_a)
    absol, gc_a, gT_a = _absolute_kernel(coeffs, T, times, targets, axes, cos_thr, d_l, d_u, eps, v_tol,
                                         w_d, w_o, True, True)
    terms[0] = energy
    terms[1] = time_cost
    terms[2] = integ[0]
    terms[3] = integ[1]
    terms[4] = integ[2]
    terms[5] = absol[0]
    terms[6] = absol[1]
    f = 0.0
    for k in range(7):
        f += terms[k]

    lam = (gc + gc_i + gc_a).reshape(6 * M, 3)
    _solve_transposed(band, lam)
    dT = _duration_adjoint(coeffs, T, lam, gT + gT_i + gT_a)
    for i in range(M - 1):
        for d in range(3):
            grad[3 * i + d] = lam[6 * i + 5, d]
    mean = 0.0
    for i in range(M):
        mean += w[i] * dT[i]
    for i in range(M - 1):
        grad[nq + i] = total * w[i] * (dT[i] - mean)
    grad[nq + M - 1] = 2.0 * tau[M - 1] * mean
    return f, grad, terms


class Objective:
    """Total cost and gradient as a function of the packed ``(q, tau)``."""

    def __init__(self, problem: Problem) -> None:
        self.problem = problem
        cfg = problem.config
        self.A, self.b = corridor_arrays(problem.corridor)
        self.axes, self.cos_thr = sector_arrays(problem.sectors, cfg.angle_clearance)
        self.M = problem.pieces
        self.last_terms: dict[str, float] = {}
        self.evaluations = 0
        self._start = problem.start.as_array()
        self._end = problem.end.as_array()
        self._params = np.array([
            cfg.time_weight, cfg.samples_per_piece, cfg.corridor_margin, cfg.v_max**2, cfg.a_max**2,
            cfg.w_corridor, cfg.w_velocity, cfg.w_acceleration, cfg.d_lower, cfg.d_upper, cfg.bridge_width,
            cfg.vertical_tolerance, cfg.w_distance, cfg.w_occlusion,
        ])

    def pack(self, q: ArrayLike, tau: ArrayLike) -> NDArray[np.float64]:
        return np.concatenate([np.asarray(q, dtype=float).ravel(), np.asarray(tau, dtype=float).ravel()])

    def unpack(self, x: NDArray[np.float64]) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        n = 3 * (self.M - 1)
        return x[:n].reshape(-1, 3), x[n:]

    def trajectory(self, x: NDArray[np.float64]) -> Trajectory:
        q, tau = self.unpack(x)
        pr = self.problem
        return construct(q, tau_to_T(tau, pr.horizon), pr.start, pr.end)

    def terms_and_gradients(self, traj: Trajectory):
        pr, cfg = self.problem, self.problem.config
        energy, time_cost, gc, gT = _jerk_kernel(traj.coeffs, traj.durations, cfg.time_weight)
        integ, gc_i, gT_i = _integral_kernel(
            traj.coeffs, traj.durations, self.A, self.b, cfg.samples_per_piece, cfg.corridor_margin,
            cfg.v_max**2, cfg.a_max**2, cfg.w_corridor, cfg.w_velocity, cfg.w_acceleration,
        )
        absol, gc_a, gT_a = _absolute_kernel(
            traj.coeffs, traj.durations, pr.times, pr.targets, self.axes, self.cos_thr,
            cfg.d_lower, cfg.d_upper, cfg.bridge_width, cfg.vertical_tolerance,
            cfg.w_distance, cfg.w_occlusion, True, True,
        )
        values = (energy, time_cost, integ[0], integ[1], integ[2], absol[0], absol[1])
        # fixed summation order keeps the total reproducible
        terms = dict(zip(TERMS, (float(v) for v in values)))
        return terms, gc + gc_i + gc_a, gT + gT_i + gT_a

    def __call__(self, x: NDArray[np.float64]) -> tuple[float, NDArray[np.float64]]:
        self.evaluations += 1
        pr = self.problem
        f, g, terms = _objective_kernel(
            np.asarray(x, dtype=float), self.M, float(pr.horizon), self._start, self._end, self.A, self.b,
            pr.times, pr.targets, self.axes, self.cos_thr, self._params,
        )
        if not math.isfinite(f):
            raise ValueError("durations or waypoints left the valid range")
        self.last_terms = dict(zip(TERMS, terms.tolist()))
        return f, g

    def modular(self, x: NDArray[np.float64]) -> tuple[float, NDArray[np.float64]]:
        """Same value and gradient assembled from the public building blocks."""
        q, tau = self.unpack(x)
        pr = self.problem
        T = tau_to_T(tau, pr.horizon)
        traj = construct(q, T, pr.start, pr.end)
        terms, gc, gT = self.terms_and_gradients(traj)
        dq, dT = propagate_gradient(traj, gc, gT)
        total = sum(terms[k] for k in TERMS)
        return total, self.pack(dq, tau_gradient(tau, pr.horizon, dT))


@dataclass
class SolveResult:
    trajectory: Trajectory
    cost: float
    terms: dict[str, float]
    iterations: int
    evaluations: int
    status: str
    degraded: bool
    q: NDArray[np.float64]
    tau: NDArray[np.float64]
    trace: list[dict] = field(default_factory=list)

    def trace_text(self) -> str:
        """One JSON object per iteration."""
        return "".join(json.dumps(rec) + "\n" for rec in self.trace)


def trapezoid_durations(
    knots: NDArray[np.float64], v_cruise: float, accel: float, v_start: float = 0.0, v_end: float = 0.0
) -> NDArray[np.float64]:
    """Piece durations from one accelerate-cruise-decelerate profile over the
    polyline ``knots``."""
    seg = np.linalg.norm(np.diff(knots, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    L = arc[-1]
    v_s = min(v_start, v_cruise)
    v_e = min(v_end, v_cruise)
    peak = min(v_cruise, math.sqrt(max((2 * accel * L + v_s**2 + v_e**2) / 2, 0.0)))
    peak = max(peak, v_s, v_e, 1e-3)
    s_acc = max(peak**2 - v_s**2, 0.0) / (2 * accel)
    s_dec = max(peak**2 - v_e**2, 0.0) / (2 * accel)
    if s_acc + s_dec > L:
        # endpoint speeds cannot be matched exactly; shrink both ramps
        scale = L / (s_acc + s_dec) if s_acc + s_dec > 0 else 0.0
        s_acc *= scale
        s_dec *= scale
    t_acc = 2 * s_acc / (v_s + peak) if s_acc > 0 else 0.0
    t_cruise = (L - s_acc - s_dec) / peak

    def time_at(s: float) -> float:
        if s <= s_acc:
            if s_acc == 0:
                return 0.0
            a = (peak**2 - v_s**2) / (2 * s_acc)
            return (math.sqrt(v_s**2 + 2 * a * s) - v_s) / a if a > 0 else s / max(v_s, 1e-3)
        if s <= L - s_dec:
            return t_acc + (s - s_acc) / peak
        r = s - (L - s_dec)
        a = (peak**2 - v_e**2) / (2 * s_dec) if s_dec > 0 else 0.0
        if a <= 0:
            return t_acc + t_cruise + r / peak
        return t_acc + t_cruise + (peak - math.sqrt(max(peak**2 - 2 * a * r, 0.0))) / a

    times = np.array([time_at(s) for s in arc])
    return np.diff(times)


def warm_start(problem: Problem) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Junction and midpoint waypoints with trapezoidal time allocation."""
    corr = problem.corridor
    n = len(corr)
    entries = [problem.start.position] + [j for j in corr.junctions]
    exits = [j for j in corr.junctions] + [problem.end.position]
    knots = [problem.start.position]
    for i in range(n):
        knots.append(0.5 * (entries[i] + exits[i]))
        knots.append(exits[i])
    knots = np.array(knots)
    cfg = problem.config
    T = trapezoid_durations(
        knots, 0.8 * cfg.v_max, cfg.a_max, float(np.linalg.norm(problem.start.velocity)),
        float(np.linalg.norm(problem.end.velocity)),
    )
    T = np.maximum(T, _MIN_PIECE)
    if T.sum() < problem.horizon + _MIN_SLACK:
        T *= (problem.horizon + _MIN_SLACK) / T.sum()
    return knots[1:-1].copy(), T


def solve(
    problem: Problem,
    initial: tuple[ArrayLike, ArrayLike] | None = None,
    max_iter: int = 300,
    g_tol: float = 1e-4,
    f_tol: float = 0.0,
    memory: int = 8,
    record_trace: bool = False,
) -> SolveResult:
    """Minimize the total tracking cost over waypoints and durations.

    ``initial`` is a ``(q, T)`` pair; by default :func:`warm_start` is used.
    Durations whose sum does not exceed the horizon are stretched first, since
    the time variables have a stationary point at zero slack.

    Raises:
        NonFiniteCostError: the cost is not finite at the initial point.
    """
    obj = Objective(problem)
    q0, T0 = warm_start(problem) if initial is None else (np.asarray(initial[0], float), np.asarray(initial[1], float))
    if len(T0) != problem.pieces:
        raise ValueError(f"initial guess has {len(T0)} pieces, problem has {problem.pieces}")
    T0 = np.maximum(T0, _MIN_PIECE)
    if T0.sum() < problem.horizon + 1e-3:
        T0 = T0 * (problem.horizon + _MIN_SLACK) / T0.sum()
    x0 = obj.pack(q0, T_to_tau(T0, problem.horizon))

    trace: list[dict] = []

    def record(it: int, x: NDArray, f: float, g: NDArray) -> None:
        trace.append({"iter": it, "cost": f, "grad_norm": float(np.linalg.norm(g)), **obj.last_terms})

    try:
        res: LbfgsResult = minimize(
            obj, x0, max_iter=max_iter, g_tol=g_tol, f_tol=f_tol, memory=memory,
            callback=record if record_trace else None,
        )
    except NonFiniteCostError as exc:
        raise NonFiniteCostError(f"tracking cost not finite at the warm start: {exc}") from exc
    traj = obj.trajectory(res.x)
    terms, _, _ = obj.terms_and_gradients(traj)
    q, tau = obj.unpack(res.x)
    return SolveResult(traj, res.f, terms, res.iterations, res.evaluations, res.status, res.degraded,
                       q.copy(), tau.copy(), trace)
