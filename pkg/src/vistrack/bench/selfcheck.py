"""Quick internal consistency checks run by ``vistrack check``."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..corridor import Corridor, Polytope
from ..minco import BoundaryState, construct
from ..optimizer import Objective, PenaltyConfig, Problem, warm_start
from ..optimizer.timemap import T_to_tau, tau_to_T
from ..visibility import VisibleSector

__all__ = ["CheckResult", "random_problem", "run_checks"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def random_problem(rng: np.random.Generator, n_poly: int | None = None, n_times: int | None = None,
                   config: PenaltyConfig | None = None) -> Problem:
    """Boxes chained along a random walk with targets and sectors nearby.

    Penalties are generally active at the warm start, so every term
    contributes to the gradient.
    """
    n_poly = int(rng.integers(1, 6)) if n_poly is None else n_poly
    centers = np.cumsum(rng.normal(0, 1.5, size=(n_poly, 3)) * [1, 1, 0.3], axis=0)
    polys, junctions = [], []
    for i, c in enumerate(centers):
        half = rng.uniform(0.8, 2.0, 3)
        lo, hi = c - half, c + half
        if i > 0:
            # grow to cover the previous centre so neighbours overlap
            lo = np.minimum(lo, centers[i - 1] - 0.3)
            hi = np.maximum(hi, centers[i - 1] + 0.3)
            junctions.append(centers[i - 1].copy())
        polys.append(Polytope.from_box(lo, hi))
    corridor = Corridor(polys, [], np.array(junctions).reshape(-1, 3))
    horizon = float(rng.uniform(1.5, 3.5))
    K = int(rng.integers(3, 9)) if n_times is None else n_times
    times = np.sort(rng.uniform(0.05, horizon, K))
    times[-1] = horizon
    path = np.vstack([centers[0], centers])
    s = np.linspace(0, 1, K)
    base = np.array([np.interp(s, np.linspace(0, 1, len(path)), path[:, d]) for d in range(3)]).T
    targets = base + rng.normal(0, 1.5, size=(K, 3)) * [1, 1, 0.4]
    sectors = []
    for z in targets:
        ang = rng.uniform(-math.pi, math.pi)
        axis = np.array([math.cos(ang), math.sin(ang), rng.uniform(-0.3, 0.3)])
        sectors.append(VisibleSector(z, axis, float(rng.uniform(0.2, 1.0)), 4.0))
    start = BoundaryState(centers[0] + rng.uniform(-0.3, 0.3, 3), rng.normal(0, 1, 3), rng.normal(0, 1, 3))
    end = BoundaryState(centers[-1] + rng.uniform(-0.3, 0.3, 3), rng.normal(0, 0.5, 3), np.zeros(3))
    return Problem(corridor, times, targets, sectors, start, end, horizon, config or PenaltyConfig())


def _gradient_check(n: int, seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    h = 1e-6
    for _ in range(n):
        pr = random_problem(rng)
        obj = Objective(pr)
        q, T = warm_start(pr)
        x = obj.pack(q + rng.normal(0, 0.3, q.shape), T_to_tau(T, pr.horizon))
        _, g = obj(x)
        fd = np.empty_like(x)
        for i in range(len(x)):
            e = np.zeros_like(x)
            e[i] = h
            fd[i] = (obj(x + e)[0] - obj(x - e)[0]) / (2 * h)
        scale = np.maximum(np.abs(fd), 1e-3 * np.max(np.abs(fd)) + 1e-8)
        worst = max(worst, float(np.max(np.abs(g - fd) / scale)))
    return CheckResult("objective gradient", worst < 1e-4, f"max relative error {worst:.2e} over {n} problems")


def _minco_check(n: int, seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        M = int(rng.integers(1, 10))
        q = rng.normal(0, 2, (M - 1, 3))
        T = rng.uniform(0.3, 2.0, M)
        start = BoundaryState(*rng.normal(size=(3, 3)))
        end = BoundaryState(*rng.normal(size=(3, 3)))
        traj = construct(q, T, start, end)
        worst = max(worst, float(np.max(np.abs(traj.start_state().as_array() - start.as_array()))),
                    float(np.max(np.abs(traj.end_state().as_array() - end.as_array()))))
        if M > 1:
            worst = max(worst, float(np.max(np.abs(traj.waypoints - q))))
    return CheckResult("trajectory boundary and waypoints", worst < 1e-9, f"max deviation {worst:.2e}")


def _timemap_check(n: int, seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    positive = True
    for _ in range(n):
        M = int(rng.integers(1, 12))
        tau = rng.normal(0, 2, M)
        horizon = float(rng.uniform(0.5, 5.0))
        T = tau_to_T(tau, horizon)
        positive &= bool(np.all(T > 0))
        worst = max(worst, abs(T.sum() - horizon - tau[-1] ** 2))
    return CheckResult("duration map", positive and worst < 1e-12, f"sum identity error {worst:.2e}")


def run_checks(problems: int = 10, seed: int = 0) -> list[CheckResult]:
    return [
        _minco_check(4 * problems, seed),
        _timemap_check(100 * problems, seed),
        _gradient_check(problems, seed),
    ]
