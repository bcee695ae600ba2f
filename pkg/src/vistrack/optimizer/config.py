"""Weights and bounds of the tracking objective."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields


@dataclass(frozen=True)
class PenaltyConfig:
    """Objective parameters.

    ``corridor_margin`` shrinks every polytope face inside the penalty so the
    residual violation left by the finite weight stays within the true
    polytope; ``time_weight`` trades total duration against jerk.
    """

    time_weight: float = 100.0
    v_max: float = 3.0
    a_max: float = 6.0
    d_lower: float = 1.0
    d_upper: float = 4.0
    vertical_tolerance: float = 0.5
    bridge_width: float = 0.2
    angle_clearance: float = math.radians(5.0)
    samples_per_piece: int = 16
    w_corridor: float = 1e4
    w_velocity: float = 1e4
    w_acceleration: float = 1e4
    w_distance: float = 1e2
    w_occlusion: float = 1e4
    corridor_margin: float = 0.02

    def __post_init__(self) -> None:
        positive = (
            "time_weight", "v_max", "a_max", "d_lower", "d_upper", "vertical_tolerance", "bridge_width",
            "angle_clearance", "w_corridor", "w_velocity", "w_acceleration", "w_distance", "w_occlusion",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.samples_per_piece < 1:
            raise ValueError("samples_per_piece must be at least 1")
        if not self.d_lower < self.d_upper:
            raise ValueError("need d_lower < d_upper")
        if not self.bridge_width < 0.5 * (self.d_upper - self.d_lower):
            raise ValueError("bridge_width must be below half the distance band")
        if self.corridor_margin < 0:
            raise ValueError("corridor_margin must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PenaltyConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown penalty keys: {sorted(unknown)}")
        return cls(**data)
