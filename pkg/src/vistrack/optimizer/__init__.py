"""Spatio-temporal trajectory optimization for target tracking."""

from .config import PenaltyConfig
from .lbfgs import LbfgsResult, NonFiniteCostError, minimize
from .penalties import (
    distance_penalty,
    distance_shape,
    hinge3,
    integral_penalty,
    jerk_time_cost,
    occlusion_penalty,
    quadrature_weights,
)
from .problem import TERMS, Objective, Problem, SolveResult, solve, trapezoid_durations, warm_start
from .timemap import T_to_tau, tau_gradient, tau_to_T
from .yaw import rate_limited_yaw, wrap_angle, yaw_plan

__all__ = [
    "PenaltyConfig",
    "LbfgsResult",
    "NonFiniteCostError",
    "minimize",
    "distance_penalty",
    "distance_shape",
    "hinge3",
    "integral_penalty",
    "jerk_time_cost",
    "occlusion_penalty",
    "quadrature_weights",
    "TERMS",
    "Objective",
    "Problem",
    "SolveResult",
    "solve",
    "trapezoid_durations",
    "warm_start",
    "T_to_tau",
    "tau_gradient",
    "tau_to_T",
    "rate_limited_yaw",
    "wrap_angle",
    "yaw_plan",
]
