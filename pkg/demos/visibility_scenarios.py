"""Figure-eight around two pillars and an abrupt reversal beside a wall.

Prints the failure fractions of each run and the distance statistics, which
show how close the chaser has to come when the target doubles back.

    python demos/visibility_scenarios.py
"""

from vistrack.bench import figure_eight_scenario, reversal_scenario, run_scenario

for scenario in (figure_eight_scenario(laps=3), reversal_scenario()):
    m = run_scenario(scenario)
    s = m.summary()
    frac = ", ".join(f"{k} {v:.1%}" for k, v in s["fractions"].items())
    d = s["distance"]
    print(f"{scenario.name}: {s['frames']} frames; {frac}")
    print(f"  distance mean {d['mean']:.2f} m, min {d['min']:.2f} m, max {d['max']:.2f} m; statuses {s['statuses']}")
    print(f"  image-plane speed mean {s['image_speed_px_s']['mean']:.1f} px/s")
