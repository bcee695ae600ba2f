"""Plan once around a pillar and print what each stage produced.

    python demos/single_plan.py
"""

import numpy as np

from vistrack.minco import BoundaryState
from vistrack.planner import Planner
from vistrack.prediction import TargetState
from vistrack.world import Cylinder, WorldConfig, build_grid

grid = build_grid(WorldConfig((0, 0, 0), (10, 10, 3), resolution=0.1, inflation_radius=0.2,
                              cylinders=(Cylinder((5.0, 5.0), 0.8, 0.0, 3.0),)))
planner = Planner(grid)
drone = BoundaryState((2.0, 5.0, 1.2), (0.5, 0.0, 0.0))
target = TargetState((4.5, 7.0, 1.2), (1.0, 0.0, 0.0))

# the first cycle also loads the compiled kernels, so time the second one
Planner(grid).plan(0.0, drone, 0.0, target)
out = planner.plan(0.0, drone, 0.0, target)
print(f"status: {out.status}")
print(f"predicted waypoints: {len(out.prediction.waypoints)} over {out.prediction.horizon:.1f} s")
print(f"guide path: {len(out.guide.points)} cells, {len(out.guide.seeds)} tracking seeds")
print(f"corridor: {len(out.corridor)} polytopes; sectors: {len(out.sectors)}")
traj = out.trajectory
print(f"trajectory: {traj.pieces} pieces, {traj.total_duration:.2f} s, {out.solve.iterations} solver iterations")
for name, value in out.solve.terms.items():
    print(f"  {name:>12}: {value:.3e}")
print("stage times (ms): " + ", ".join(f"{k} {1e3 * v:.2f}" for k, v in out.timings.items()))

# keep distance to the predicted target along the plan
for t, z in zip(out.prediction.times[::3], out.prediction.waypoints[::3]):
    p = traj.evaluate(min(t, traj.total_duration))
    print(f"t={t:4.2f}s  drone {np.round(p, 2)}  horizontal distance {np.hypot(*(p - z)[:2]):.2f} m")
