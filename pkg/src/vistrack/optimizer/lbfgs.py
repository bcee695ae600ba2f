"""Limited-memory BFGS with a weak-Wolfe bracketing line search.

SciPy's L-BFGS-B is not used because the solver must report line-search
failure as a degraded result, keep accepted iterates monotone and stop on the
relative gradient rule used here; all three are simple to guarantee in a small
dedicated loop.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit
from numpy.typing import NDArray

__all__ = ["NonFiniteCostError", "LbfgsResult", "minimize"]

Objective = Callable[[NDArray[np.float64]], tuple[float, NDArray[np.float64]]]


class NonFiniteCostError(FloatingPointError):
    """The objective is not finite at the initial point."""


@dataclass
class LbfgsResult:
    x: NDArray[np.float64]
    f: float
    g: NDArray[np.float64]
    iterations: int
    evaluations: int
    status: str
    degraded: bool = False
    history: list[tuple[int, float, float]] = field(default_factory=list)


def _safe_eval(fun: Objective, x: NDArray) -> tuple[float, NDArray | None]:
    try:
        f, g = fun(x)
    except (ValueError, FloatingPointError, np.linalg.LinAlgError):
        return math.inf, None
    if not math.isfinite(f) or not np.all(np.isfinite(g)):
        return math.inf, None
    return float(f), g


@njit(cache=True)
def _two_loop(g, S, Y, rho, head, count):
    """Search direction from the ring buffer of ``count`` stored pairs whose
    newest entry sits at ``head``."""
    mem = S.shape[0]
    q = -g.copy()
    alphas = np.zeros(mem)
    for k in range(count):
        i = (head - k) % mem
        a = rho[i] * (S[i] @ q)
        alphas[i] = a
        q -= a * Y[i]
    if count > 0:
        q *= (S[head] @ Y[head]) / (Y[head] @ Y[head])
    for k in range(count - 1, -1, -1):
        i = (head - k) % mem
        beta = rho[i] * (Y[i] @ q)
        q += (alphas[i] - beta) * S[i]
    return q


def _norm(v: NDArray) -> float:
    return math.sqrt(float(v @ v))


def minimize(
    fun: Objective,
    x0: NDArray[np.float64],
    max_iter: int = 300,
    g_tol: float = 1e-4,
    f_tol: float = 0.0,
    past: int = 3,
    memory: int = 8,
    c1: float = 1e-4,
    c2: float = 0.9,
    max_line_search: int = 40,
    callback: Callable[[int, NDArray, float, NDArray], None] | None = None,
) -> LbfgsResult:
    """Minimize ``fun`` (returning value and gradient) from ``x0``.

    Stops when ``|g| / max(1, |x|) < g_tol``, when the relative decrease over
    the last ``past`` iterations falls below ``f_tol`` (if positive), or after
    ``max_iter`` iterations. A failed line search returns the best point with
    ``degraded=True``.

    Raises:
        NonFiniteCostError: the objective is not finite at ``x0``.
    """
    x = np.array(x0, dtype=float)
    f, g = _safe_eval(fun, x)
    if g is None:
        raise NonFiniteCostError("objective is not finite at the initial point")
    evals = 1
    n = len(x)
    S = np.zeros((memory, n))
    Y = np.zeros((memory, n))
    rho = np.zeros(memory)
    head, count = -1, 0
    history = [(0, f, _norm(g))]
    f_hist = deque([f], maxlen=past + 1)

    for it in range(1, max_iter + 1):
        if _norm(g) / max(1.0, _norm(x)) < g_tol:
            return LbfgsResult(x, f, g, it - 1, evals, "converged", False, history)
        d = _two_loop(g, S, Y, rho, max(head, 0), count)
        slope = float(g @ d)
        if not slope < 0:
            count = 0
            d = -g
            slope = float(g @ d)
        step = 1.0 if count else min(1.0, 1.0 / _norm(d))

        lo, hi = 0.0, math.inf
        accepted = None
        best = None
        for _ in range(max_line_search):
            xt = x + step * d
            ft, gt = _safe_eval(fun, xt)
            evals += 1
            if gt is None or ft > f + c1 * step * slope:
                hi = step
            else:
                if best is None or ft < best[1]:
                    best = (xt, ft, gt)
                if gt @ d < c2 * slope:
                    lo = step
                else:
                    accepted = (xt, ft, gt)
                    break
            step = 0.5 * (lo + hi) if math.isfinite(hi) else 2.0 * step
            if math.isfinite(hi) and hi - lo < 1e-16 * max(1.0, hi):
                break
        if accepted is None:
            if best is None:
                return LbfgsResult(x, f, g, it, evals, "line search failed", True, history)
            # sufficient decrease without curvature: keep progress, still degraded
            x, f, g = best
            history.append((it, f, _norm(g)))
            return LbfgsResult(x, f, g, it, evals, "line search failed", True, history)

        xn, fn, gn = accepted
        s = xn - x
        y = gn - g
        sy = float(s @ y)
        if sy > 1e-12 * _norm(s) * _norm(y) and sy > 0:
            head = (head + 1) % memory
            S[head] = s
            Y[head] = y
            rho[head] = 1.0 / sy
            count = min(count + 1, memory)
        x, f, g = xn, fn, gn
        history.append((it, f, _norm(g)))
        if callback is not None:
            callback(it, x, f, g)
        f_hist.append(f)
        if f_tol > 0 and len(f_hist) == past + 1:
            if (f_hist[0] - f) / max(1.0, abs(f)) < f_tol:
                return LbfgsResult(x, f, g, it, evals, "stalled", False, history)

    status = "converged" if _norm(g) / max(1.0, _norm(x)) < g_tol else "iteration limit"
    return LbfgsResult(x, f, g, max_iter, evals, status, False, history)
