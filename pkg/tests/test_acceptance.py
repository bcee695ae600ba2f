"""End-to-end acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line; the lines are repeated in the
pytest terminal summary. The closed-loop runs are marked ``slow``.
"""

import math
import time

import numpy as np
import pytest

from problem_factory import central_difference, random_problem, relative_errors
from test_corridor import check_chain, occupied_centers_inside, sample_inside
from test_minco import dense_coefficients, jerk_energy_and_grad, random_instance
from test_pathfinding import dijkstra_to_region, random_free_point, random_maze
from vistrack.bench import BUILTIN_SCENARIOS, run_scenario
from vistrack.corridor import generate_corridor
from vistrack.minco import BoundaryState, construct
from vistrack.optimizer import Objective, Problem, T_to_tau, distance_shape, tau_to_T, warm_start
from vistrack.pathfinding import GoalUnreachableError, PhiRegion, multi_goal_search, phi_contains, search_one
from vistrack.world import ForestSpec, WorldConfig, build_grid

from test_optimizer import _tracking_scenario


def test_criterion_01_gradient_suite(verdict):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst, sizes = 0.0, []
    for _ in range(50):
        pr = random_problem(rng)
        sizes.append(pr.pieces)
        obj = Objective(pr)
        q, T = warm_start(pr)
        x = obj.pack(q + rng.normal(0, 0.3, q.shape), T_to_tau(T, pr.horizon))
        _, g = obj(x)
        worst = max(worst, float(np.max(relative_errors(g, central_difference(obj, x)))))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 30 and max(sizes) <= 10
    verdict(1, ok, f"max relative gradient error {worst:.2e} on 50 problems (M <= {max(sizes)}) in {elapsed:.1f} s")


def test_criterion_02_minco(verdict):
    rng = np.random.default_rng(7)
    bc = wp = cont = dense = 0.0
    for _ in range(40):
        q, T, start, end = random_instance(rng, int(rng.integers(1, 11)))
        traj = construct(q, T, start, end)
        bc = max(bc, float(np.max(np.abs(traj.start_state().as_array() - start.as_array()))),
                 float(np.max(np.abs(traj.end_state().as_array() - end.as_array()))))
        if len(q):
            wp = max(wp, float(np.max(np.abs(traj.waypoints - q))))
        for i in range(len(T) - 1):
            for k in range(5):
                cont = max(cont, float(np.max(np.abs(traj.piece_eval(i, T[i], k) - traj.piece_eval(i + 1, 0.0, k)))))
        dense = max(dense, float(np.max(np.abs(traj.coeffs - dense_coefficients(q, T, start, end)))))
    unit = construct(np.zeros((0, 3)), [1.0], BoundaryState((0, 0, 0)), BoundaryState((1, 0, 0)))
    quintic = float(np.max(np.abs(unit.coeffs[0, :, 0] - [0, 0, 0, 10, -15, 6])))
    energy = jerk_energy_and_grad(unit)[0]
    ok = bc < 1e-9 and wp < 1e-9 and cont < 1e-6 and quintic < 1e-9 and abs(energy - 720) < 1e-9
    verdict(2, ok, f"boundary {bc:.1e}, waypoints {wp:.1e}, junction orders 0-4 {cont:.1e}, "
                   f"quintic {quintic:.1e}, jerk energy {energy:.9f} (dense solve agrees to {dense:.1e})")


def test_criterion_03_time_map(verdict):
    rng = np.random.default_rng(3)
    worst, positive = 0.0, True
    for _ in range(10_000):
        tau = rng.normal(0, 3, int(rng.integers(1, 12)))
        horizon = float(rng.uniform(0.1, 10.0))
        T = tau_to_T(tau, horizon)
        positive &= bool(np.all(T > 0))
        worst = max(worst, abs(T.sum() - horizon - tau[-1] ** 2))
    verdict(3, positive and worst < 1e-12, f"all durations positive: {positive}; sum identity error {worst:.1e}")


def test_criterion_04_piece_crossing(verdict):
    jumps, grads = [], []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        base = _tracking_scenario(rng)
        q, T = warm_start(base)
        tk = T[0] + min(0.05, 0.5 * T[1])
        times = base.times.copy()
        times[np.argmin(np.abs(times - tk))] = tk
        times.sort()
        pr = Problem(base.corridor, times, base.targets, base.sectors, base.start, base.end, base.horizon)
        obj = Objective(pr)
        x = obj.pack(q, T_to_tau(T, pr.horizon))
        j = 3 * (pr.pieces - 1)
        lo, hi = x[j], x[j] + 3.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            xm = x.copy()
            xm[j] = mid
            if tau_to_T(xm[j:], pr.horizon)[0] < tk:
                lo = mid
            else:
                hi = mid
        xc = x.copy()
        xc[j] = 0.5 * (lo + hi)
        slope = obj(xc)[1][j]
        for d in (1e-10, 1e-8, 1e-6):
            a, b = xc.copy(), xc.copy()
            a[j] -= d
            b[j] += d
            jumps.append(abs(obj(b)[0] - obj(a)[0] - 2 * d * slope))
        for side in (-1e-3, 1e-3):
            xs = xc.copy()
            xs[j] += side
            grads.append(float(np.max(relative_errors(obj(xs)[1], central_difference(obj, xs, h=1e-7)))))
    ok = max(jumps) < 1e-6 and max(grads) < 1e-4
    verdict(4, ok, f"max cost jump {max(jumps):.1e}; gradient error either side {max(grads):.1e} (5 sweeps)")


def test_criterion_05_distance_shape(verdict):
    d_l, d_u, eps = 1.0, 4.0, 0.2

    def value(x):
        return distance_shape(x, d_l, d_u, eps)[0]

    def slope(x):
        return distance_shape(x, d_l, d_u, eps)[1]

    flat = max(abs(value(x)) for x in np.linspace(d_l, d_u - eps, 1001))
    val, end_slope = distance_shape(d_u + eps, d_l, d_u, eps)
    k = 1e-9
    jumps = [0.0, 0.0, 0.0]
    for x0 in (d_l, d_u - eps, d_u + eps):
        jumps[0] = max(jumps[0], abs(value(x0 + k) - value(x0 - k)))
        jumps[1] = max(jumps[1], abs(slope(x0 + k) - slope(x0 - k)))
        # one-sided difference quotients of the slope approximate the curvature
        right = (slope(x0 + 2 * k) - slope(x0 + k)) / k
        left = (slope(x0 - k) - slope(x0 - 2 * k)) / k
        jumps[2] = max(jumps[2], abs(right - left))
    ok = flat == 0.0 and abs(val - 16 * eps) < 1e-12 and abs(end_slope - 16) < 1e-12 and max(jumps) < 1e-5
    verdict(5, ok, f"flat band max {flat:.1e}; value at d_u+eps {val:.6f} (16 eps = {16 * eps:.6f}); "
                   f"slope {end_slope}; jumps at breakpoints in value/slope/curvature "
                   f"{jumps[0]:.1e}/{jumps[1]:.1e}/{jumps[2]:.1e}")


def test_criterion_06_corridor_safety(verdict):
    worst_cells = worst_samples = 0
    chains_ok = True
    polys = used = 0
    rng = np.random.default_rng(11)
    for seed in range(20):
        grid = build_grid(WorldConfig((0, 0, 0), (15, 15, 3), 0.1, 0.2, forest=ForestSpec(count=18, seed=seed)))
        guide = None
        for _ in range(10):
            # endpoints at flight height on opposite sides of the world
            start = np.r_[rng.uniform(0.5, 4.0, 2), 1.0]
            goal = np.r_[rng.uniform(11.0, 14.5, 2), 1.0]
            if grid.is_occupied(start) or grid.is_occupied(goal):
                continue
            try:
                guide = multi_goal_search(grid, start, [goal], 0.5, 1.5, 0.5)
            except ValueError:
                continue
            if len(guide.seeds):
                break
            guide = None
        if guide is None:
            continue
        corr = generate_corridor(grid, start, (0, 0, 0), guide, max_polytopes=30)
        polys += len(corr)
        used += 1
        for poly in corr.polytopes:
            worst_cells = max(worst_cells, occupied_centers_inside(grid, poly))
            worst_samples = max(worst_samples, int(grid.occupied_many(sample_inside(poly, 10_000, rng)).sum()))
        try:
            check_chain(grid, corr)
        except AssertionError:
            chains_ok = False
    ok = worst_cells == 0 and worst_samples == 0 and chains_ok and used == 20
    verdict(6, ok, f"{polys} polytopes on {used}/20 forests: occupied centres inside {worst_cells}, "
                   f"occupied samples {worst_samples}, junction witnesses shared: {chains_ok}")


def test_criterion_07_search_optimality(verdict):
    worst, compared, unreachable_ok = 0.0, 0, True
    for seed in range(30):
        grid = random_maze(seed)
        rng = np.random.default_rng(500 + seed)
        start = random_free_point(grid, rng)
        region = PhiRegion(random_free_point(grid, rng), 2.0, 4.0, 1.0)
        oracle = dijkstra_to_region(grid, start, region)
        if math.isinf(oracle):
            try:
                search_one(grid, start, region)
                unreachable_ok = False
            except GoalUnreachableError:
                pass
            continue
        _, seed_cell, cost = search_one(grid, start, region)
        if phi_contains(region, grid, start):
            worst = max(worst, cost)
        else:
            worst = max(worst, abs(cost - oracle))
            unreachable_ok &= phi_contains(region, grid, seed_cell)
        compared += 1
    ok = worst <= 1e-9 and unreachable_ok and compared >= 20
    verdict(7, ok, f"max |A* - Dijkstra| {worst:.1e} over {compared} reachable goals on 30 grids")


@pytest.fixture(scope="module")
def forest_run():
    sc = BUILTIN_SCENARIOS["forest_loop"](seed=0)
    return sc, run_scenario(sc)


@pytest.mark.slow
def test_criterion_08_forest_benchmark(verdict, forest_run):
    sc, m = forest_run
    fr, c = m.fractions(), m.counters
    ok = (not m.hard_failure and len(m.frames) == 600 and c["collision"] == 0 and fr["occluded"] < 0.05
          and fr["too_near"] < 0.02 and fr["out_of_fov"] < 0.05)
    verdict(8, ok, f"{len(m.frames)} frames: collisions {c['collision']}, occluded {fr['occluded']:.1%}, "
                   f"too near {fr['too_near']:.1%}, out of view {fr['out_of_fov']:.1%}; statuses {m.statuses()}"
                   + (f"; hard failure {m.hard_failure}" if m.hard_failure else ""))


@pytest.mark.slow
def test_criterion_09_timing(verdict, forest_run):
    _, m = forest_run
    means = m.stage_means()
    cycle = means["path"] + means["corridor"] + means["optimize"]
    print(m.timing_table())
    verdict(9, cycle < 15.0, f"mean cycle {cycle:.2f} ms (path {means['path']:.2f}, corridor {means['corridor']:.2f}, "
                             f"optimize {means['optimize']:.2f}, wall total {means['total']:.2f})")


@pytest.mark.slow
def test_criterion_10_figure_eight(verdict):
    sc = BUILTIN_SCENARIOS["figure_eight"](laps=3)
    m = run_scenario(sc)
    laps = sc.duration / sc.target.lap_time()
    fr = m.fractions()
    ok = not m.hard_failure and laps >= 3 and fr["occluded"] < 0.08
    verdict(10, ok, f"{laps:.2f} laps, {len(m.frames)} frames: occluded {fr['occluded']:.1%} "
                    f"(collisions {m.counters['collision']}, too near {fr['too_near']:.1%}, "
                    f"out of view {fr['out_of_fov']:.1%})")
