"""Unconstrained duration variables.

``tau`` maps to durations whose sum is ``T_p + tau[-1]**2``; the first
``M - 1`` entries act as softmax logits for the split, the last logit being
fixed at zero.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = ["tau_to_T", "tau_gradient", "T_to_tau"]


def _weights(tau: NDArray[np.float64]) -> NDArray[np.float64]:
    logits = np.append(tau[:-1], 0.0)
    shift = logits.max()
    e = np.exp(logits - shift)
    return e / e.sum()


def tau_to_T(tau: ArrayLike, horizon: float) -> NDArray[np.float64]:
    tau = np.asarray(tau, dtype=float).reshape(-1)
    total = horizon + tau[-1] ** 2
    return _weights(tau) * total


def tau_gradient(tau: ArrayLike, horizon: float, grad_T: ArrayLike) -> NDArray[np.float64]:
    """Chain ``dJ/dT`` through :func:`tau_to_T` to ``dJ/dtau``."""
    tau = np.asarray(tau, dtype=float).reshape(-1)
    g = np.asarray(grad_T, dtype=float).reshape(-1)
    w = _weights(tau)
    total = horizon + tau[-1] ** 2
    mean = float(w @ g)
    out = np.empty_like(tau)
    out[:-1] = total * w[:-1] * (g[:-1] - mean)
    out[-1] = 2.0 * tau[-1] * mean
    return out


def T_to_tau(T: ArrayLike, horizon: float) -> NDArray[np.float64]:
    """Inverse map; requires ``sum(T) >= horizon``."""
    T = np.asarray(T, dtype=float).reshape(-1)
    slack = float(T.sum()) - horizon
    if slack < -1e-12 or np.any(T <= 0):
        raise ValueError("durations must be positive and sum to at least the horizon")
    tau = np.empty_like(T)
    tau[:-1] = np.log(T[:-1] / T[-1])
    tau[-1] = math.sqrt(max(slack, 0.0))
    return tau
