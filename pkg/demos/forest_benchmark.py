"""Closed-loop run in the 30 x 30 m forest with failure counts and stage timings.

    python demos/forest_benchmark.py [seed] [out_dir]
"""

import json
import sys

from vistrack.bench import forest_loop_scenario, report, run_scenario

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
out_dir = sys.argv[2] if len(sys.argv) > 2 else f"runs/forest_seed{seed}"

scenario = forest_loop_scenario(seed=seed)
metrics = run_scenario(scenario)
paths = report(metrics, out_dir)

summary = metrics.summary()
print(json.dumps({k: summary[k] for k in ("frames", "counters", "fractions", "statuses", "distance")}, indent=2))
print(metrics.timing_table())
print(f"records written under {out_dir} ({', '.join(p.name for p in paths.values())})")
