"""Per-frame records, failure predicates, image-plane speed and reports."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ..minco import Trajectory
from ..world import OccupancyGrid, line_of_sight

__all__ = [
    "Camera",
    "FrameRecord",
    "FailureFlags",
    "RunMetrics",
    "failure_predicates",
    "camera_coordinates",
    "projected_speed",
    "relative_position",
    "heatmap",
    "report",
    "read_frames",
    "write_plan_log",
    "read_plan_log",
    "FRAME_FIELDS",
    "HEATMAP_BIN",
    "HEATMAP_HALF_WIDTH",
]

HEATMAP_BIN = 0.25
HEATMAP_HALF_WIDTH = 6.0
TOO_NEAR = 1.0


@dataclass(frozen=True)
class Camera:
    """Forward-looking pinhole camera aligned with the drone's yaw."""

    fov_deg: tuple[float, float] = (80.0, 65.0)
    image_size: tuple[int, int] = (640, 480)

    @property
    def tan_half(self) -> tuple[float, float]:
        return (math.tan(math.radians(self.fov_deg[0]) / 2), math.tan(math.radians(self.fov_deg[1]) / 2))

    @property
    def focal(self) -> tuple[float, float]:
        th, tv = self.tan_half
        return (self.image_size[0] / 2 / th, self.image_size[1] / 2 / tv)


@dataclass
class FrameRecord:
    t: float
    drone: NDArray[np.float64]
    drone_velocity: NDArray[np.float64]
    yaw: float
    target: NDArray[np.float64]
    target_velocity: NDArray[np.float64]
    out_of_fov: bool = False
    too_near: bool = False
    occluded: bool = False
    collision: bool = False
    replanned: bool = False
    status: str = ""
    timings: dict[str, float] = field(default_factory=dict)
    trajectory: Trajectory | None = field(default=None, repr=False)
    trajectory_start: float = 0.0

    @property
    def distance(self) -> float:
        return float(np.linalg.norm(self.target - self.drone))

    def row(self) -> list:
        ms = [1e3 * self.timings.get(k, math.nan) if self.replanned else math.nan
              for k in ("path", "corridor", "optimize", "total")]
        return [
            f"{self.t:.6f}", *(f"{v:.6f}" for v in self.drone), *(f"{v:.6f}" for v in self.drone_velocity),
            f"{self.yaw:.6f}", *(f"{v:.6f}" for v in self.target), *(f"{v:.6f}" for v in self.target_velocity),
            f"{self.distance:.6f}", int(self.out_of_fov), int(self.too_near), int(self.occluded),
            int(self.collision), int(self.replanned), self.status, *(f"{v:.4f}" for v in ms),
        ]


FRAME_FIELDS = [
    "t", "drone_x", "drone_y", "drone_z", "drone_vx", "drone_vy", "drone_vz", "yaw",
    "target_x", "target_y", "target_z", "target_vx", "target_vy", "target_vz", "distance",
    "out_of_fov", "too_near", "occluded", "collision", "replanned", "status",
    "path_ms", "corridor_ms", "optimize_ms", "total_ms",
]


@dataclass(frozen=True)
class FailureFlags:
    out_of_fov: bool
    too_near: bool
    occluded: bool


def camera_coordinates(drone: ArrayLike, yaw: float, target: ArrayLike) -> NDArray[np.float64]:
    """Target in the camera frame: (forward, left, up)."""
    rel = np.asarray(target, dtype=float) - np.asarray(drone, dtype=float)
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([c * rel[0] + s * rel[1], -s * rel[0] + c * rel[1], rel[2]])


def failure_predicates(frame: FrameRecord, grid: OccupancyGrid | None, camera: Camera = Camera()) -> FailureFlags:
    """Out of view, too near and occluded flags for one frame.

    Occlusion is tested against the raw obstacles, not the inflated map.
    """
    fwd, left, up = camera_coordinates(frame.drone, frame.yaw, frame.target)
    th, tv = camera.tan_half
    out = not (fwd > 0 and abs(left) <= th * fwd and abs(up) <= tv * fwd)
    near = frame.distance < TOO_NEAR
    occluded = False
    if grid is not None:
        occluded = not line_of_sight(grid, frame.drone, frame.target, inflated=False)
    return FailureFlags(bool(out), bool(near), bool(occluded))


def _project(cam_xyz: NDArray, camera: Camera) -> NDArray | None:
    fwd, left, up = cam_xyz
    if fwd <= 0:
        return None
    fx, fy = camera.focal
    return np.array([camera.image_size[0] / 2 - fx * left / fwd, camera.image_size[1] / 2 - fy * up / fwd])


def projected_speed(a: FrameRecord, b: FrameRecord, camera: Camera = Camera()) -> float:
    """Pixel speed of the target centroid between two frames; NaN when it is
    outside the view in either frame or behind the camera."""
    dt = b.t - a.t
    if dt <= 0:
        return math.nan
    th, tv = camera.tan_half
    pix = []
    for f in (a, b):
        cam = camera_coordinates(f.drone, f.yaw, f.target)
        if not (cam[0] > 0 and abs(cam[1]) <= th * cam[0] and abs(cam[2]) <= tv * cam[0]):
            return math.nan
        pix.append(_project(cam, camera))
    return float(np.linalg.norm(pix[1] - pix[0]) / dt)


def relative_position(frame: FrameRecord) -> NDArray[np.float64]:
    """Horizontal target position in the drone's yaw-aligned frame."""
    return camera_coordinates(frame.drone, frame.yaw, frame.target)[:2]


def heatmap(frames: Iterable[FrameRecord]) -> NDArray[np.int64]:
    """Counts of relative target positions on 0.25 m bins over +-6 m.
    Row index is the forward bin, column index the leftward bin."""
    n = int(round(2 * HEATMAP_HALF_WIDTH / HEATMAP_BIN))
    grid = np.zeros((n, n), dtype=np.int64)
    for f in frames:
        fwd, left = relative_position(f)
        i = math.floor((fwd + HEATMAP_HALF_WIDTH) / HEATMAP_BIN)
        j = math.floor((left + HEATMAP_HALF_WIDTH) / HEATMAP_BIN)
        if 0 <= i < n and 0 <= j < n:
            grid[i, j] += 1
    return grid


@dataclass
class RunMetrics:
    scenario: str
    frames: list[FrameRecord] = field(default_factory=list)
    camera: Camera = Camera()
    speeds: list[float] = field(default_factory=list)
    hard_failure: str = ""

    def add(self, frame: FrameRecord) -> None:
        if self.frames:
            self.speeds.append(projected_speed(self.frames[-1], frame, self.camera))
        self.frames.append(frame)

    @property
    def counters(self) -> dict[str, int]:
        return {
            "out_of_fov": sum(f.out_of_fov for f in self.frames),
            "too_near": sum(f.too_near for f in self.frames),
            "occluded": sum(f.occluded for f in self.frames),
            "collision": sum(f.collision for f in self.frames),
        }

    def fractions(self) -> dict[str, float]:
        n = max(len(self.frames), 1)
        return {k: v / n for k, v in self.counters.items()}

    def stage_means(self) -> dict[str, float]:
        """Mean milliseconds per stage over replanning frames."""
        runs = [f.timings for f in self.frames if f.replanned]
        if not runs:
            return {k: math.nan for k in ("path", "corridor", "optimize", "total")}
        return {k: 1e3 * float(np.mean([r[k] for r in runs])) for k in ("path", "corridor", "optimize", "total")}

    def statuses(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for f in self.frames:
            if f.replanned:
                out[f.status] = out.get(f.status, 0) + 1
        return out

    def summary(self) -> dict:
        speeds = np.array([s for s in self.speeds if math.isfinite(s)])
        dist = np.array([f.distance for f in self.frames]) if self.frames else np.zeros(0)
        return {
            "scenario": self.scenario,
            "frames": len(self.frames),
            "counters": self.counters,
            "fractions": self.fractions(),
            "stage_ms": self.stage_means(),
            "replans": sum(f.replanned for f in self.frames),
            "statuses": self.statuses(),
            "distance": {
                "mean": float(dist.mean()) if len(dist) else math.nan,
                "min": float(dist.min()) if len(dist) else math.nan,
                "max": float(dist.max()) if len(dist) else math.nan,
            },
            "image_speed_px_s": {
                "mean": float(speeds.mean()) if len(speeds) else math.nan,
                "max": float(speeds.max()) if len(speeds) else math.nan,
                "samples": int(len(speeds)),
            },
            "hard_failure": self.hard_failure,
        }

    def timing_table(self) -> str:
        """Stage means laid out as one row of a timing table."""
        m = self.stage_means()
        head = "| Path searching | Corridor generation | Trajectory optimization | Total |"
        return head + "\n|---|---|---|---|\n" + "| " + " | ".join(f"{m[k]:.2f}" for k in
                                                                   ("path", "corridor", "optimize", "total")) + " |"


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def report(metrics: RunMetrics, out_dir: str | Path, formats: Sequence[str] = ("csv", "json")) -> dict[str, Path]:
    """Write ``frames.csv``, ``heatmap.csv``, ``image_speed.csv`` and
    ``summary.json`` under ``out_dir``; returns the written paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    paths: dict[str, Path] = {}
    if "csv" in formats:
        paths["frames"] = out / "frames.csv"
        with open(paths["frames"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(FRAME_FIELDS)
            for f in metrics.frames:
                w.writerow(f.row())
        paths["heatmap"] = out / "heatmap.csv"
        hm = heatmap(metrics.frames)
        edges = np.arange(-HEATMAP_HALF_WIDTH, HEATMAP_HALF_WIDTH, HEATMAP_BIN)
        with open(paths["heatmap"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["forward_bin_min", *(f"{e:.2f}" for e in edges)])
            if metrics.frames:
                for e, row in zip(edges, hm):
                    w.writerow([f"{e:.2f}", *row.tolist()])
        paths["image_speed"] = out / "image_speed.csv"
        with open(paths["image_speed"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "px_per_s"])
            for f, s in zip(metrics.frames[1:], metrics.speeds):
                if math.isfinite(s):
                    w.writerow([f"{f.t:.6f}", f"{s:.4f}"])
        paths["plans"] = out / "plans.jsonl"
        write_plan_log(metrics.frames, paths["plans"])
    if "json" in formats:
        paths["summary"] = out / "summary.json"
        summary = metrics.summary()
        summary["heatmap_mass"] = int(heatmap(metrics.frames).sum())
        with open(paths["summary"], "w") as fh:
            json.dump(_json_safe(summary), fh, indent=2, sort_keys=True)
    return paths


def read_frames(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))



def write_plan_log(frames: Sequence[FrameRecord], path: str | Path) -> None:
    """One JSON line per frame with the yaw and the trajectory being flown;
    the trajectory itself is written only when it changes."""
    last = None
    with open(path, "w") as fh:
        for f in frames:
            rec = {"t": f.t, "yaw": f.yaw, "status": f.status, "start_time": f.trajectory_start}
            if f.trajectory is not None and f.trajectory is not last:
                rec["trajectory"] = f.trajectory.to_dict()
                last = f.trajectory
            fh.write(json.dumps(rec) + "\n")


def read_plan_log(path: str | Path) -> list[dict]:
    """Inverse of :func:`write_plan_log`; every record carries its
    trajectory (``None`` before the first plan)."""
    out = []
    current = None
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if "trajectory" in rec:
                current = Trajectory.from_dict(rec["trajectory"])
            rec["trajectory"] = current
            out.append(rec)
    return out
