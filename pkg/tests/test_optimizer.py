import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from problem_factory import central_difference, random_problem, relative_errors
from vistrack.corridor import Corridor, Polytope
from vistrack.minco import BoundaryState, construct
from vistrack.optimizer import (
    TERMS,
    NonFiniteCostError,
    Objective,
    PenaltyConfig,
    Problem,
    T_to_tau,
    distance_penalty,
    distance_shape,
    hinge3,
    integral_penalty,
    jerk_time_cost,
    minimize,
    occlusion_penalty,
    quadrature_weights,
    rate_limited_yaw,
    solve,
    tau_gradient,
    tau_to_T,
    trapezoid_durations,
    warm_start,
    wrap_angle,
    yaw_plan,
)
from vistrack.prediction import Prediction
from vistrack.visibility import VisibleSector

CFG = PenaltyConfig()


def line(p0, p1, T=1.0):
    """Single-piece rest-free straight segment with constant velocity."""
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    v = (p1 - p0) / T
    return construct(np.zeros((0, 3)), [T], BoundaryState(p0, v), BoundaryState(p1, v))


# -- duration map --------------------------------------------------------------


class TestTimeMap:
    def test_zero_logits_split_evenly(self):
        T = tau_to_T(np.zeros(4), 3.0)
        assert np.allclose(T, 0.75, rtol=0, atol=1e-15)
        assert T.sum() == pytest.approx(3.0, abs=1e-15)

    def test_sum_identity(self, rng):
        for _ in range(200):
            tau = rng.normal(0, 3, int(rng.integers(1, 10)))
            T = tau_to_T(tau, 2.0)
            assert np.all(T > 0)
            assert abs(T.sum() - 2.0 - tau[-1] ** 2) < 1e-12

    def test_large_logits_do_not_overflow(self):
        T = tau_to_T(np.array([800.0, -800.0, 0.5]), 1.0)
        assert np.all(np.isfinite(T)) and np.all(T >= 0)
        assert T.sum() == pytest.approx(1.25)

    def test_inverse(self, rng):
        T = rng.uniform(0.2, 1.5, 5)
        horizon = T.sum() - 0.3
        assert np.allclose(tau_to_T(T_to_tau(T, horizon), horizon), T, rtol=1e-12)

    def test_inverse_rejects_short_durations(self):
        with pytest.raises(ValueError):
            T_to_tau(np.array([0.5, 0.5]), 2.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_jacobian_vs_finite_difference(self, seed):
        rng = np.random.default_rng(seed)
        M = 6
        tau = rng.normal(0, 1, M)
        w = rng.normal(size=M)
        h = 1e-6
        analytic = tau_gradient(tau, 2.5, w)
        for j in range(M):
            e = np.zeros(M)
            e[j] = h
            fd = (w @ tau_to_T(tau + e, 2.5) - w @ tau_to_T(tau - e, 2.5)) / (2 * h)
            assert abs(fd - analytic[j]) <= 1e-6 * max(1.0, abs(fd))


# -- scalar shapes ---------------------------------------------------------------


class TestShapes:
    def test_hinge_is_c2_at_zero(self):
        h = 1e-4
        vals = [hinge3(x)[0] for x in (-h, 0.0, h)]
        assert vals[1] == 0.0
        assert abs((vals[2] - vals[0]) / (2 * h)) < 1e-7
        assert abs((vals[2] - 2 * vals[1] + vals[0]) / h**2) < 1e-3

    def test_distance_zero_on_band(self):
        for x in np.linspace(1.0, 4.0 - 0.2, 50):
            assert distance_shape(x, 1.0, 4.0, 0.2)[0] == 0.0

    def test_distance_bridge_end(self):
        eps = 0.2
        val, slope = distance_shape(4.0 + eps, 1.0, 4.0, eps)
        assert val == pytest.approx(16 * eps, rel=1e-12)
        assert slope == pytest.approx(16.0, rel=1e-12)
        assert distance_shape(7.0, 1.0, 4.0, eps) == (pytest.approx(48.0), 16.0)

    def test_distance_rises_below_band(self):
        assert distance_shape(0.5, 1.0, 4.0, 0.2)[0] == pytest.approx(0.125)
        assert distance_shape(0.5, 1.0, 4.0, 0.2)[1] < 0

    @pytest.mark.parametrize("x0", [1.0, 3.8, 4.2])
    def test_distance_c2_across_breakpoints(self, x0):
        f = lambda x: distance_shape(x, 1.0, 4.0, 0.2)[0]  # noqa: E731
        h = 1e-4
        left = [f(x0 - k * h) for k in (2, 1, 0)]
        right = [f(x0 + k * h) for k in (0, 1, 2)]
        # one-sided first and second differences must agree on both sides
        d1l, d1r = (left[2] - left[1]) / h, (right[1] - right[0]) / h
        d2l = (left[2] - 2 * left[1] + left[0]) / h**2
        d2r = (right[2] - 2 * right[1] + right[0]) / h**2
        assert abs(d1l - d1r) < 1e-5 * 100 + 1e-2 * h
        assert abs(d2l - d2r) < 3 * 24 * h / 0.2**3 + 1e-5
        # analytic slope matches the centred difference
        assert distance_shape(x0, 1.0, 4.0, 0.2)[1] == pytest.approx((f(x0 + h) - f(x0 - h)) / (2 * h), abs=1e-5)

    def test_quadrature_weights(self):
        w = quadrature_weights(16)
        assert len(w) == 17
        assert w[0] == w[-1] == 0.5
        assert np.all(w[1:-1] == 1.0)


# -- individual terms --------------------------------------------------------------


class TestTerms:
    def test_jerk_of_unit_quintic(self):
        traj = construct(np.zeros((0, 3)), [1.0], BoundaryState((0, 0, 0)), BoundaryState((1, 0, 0)))
        cost, _, _ = jerk_time_cost(traj, 0.0)
        assert cost == pytest.approx(720.0, rel=1e-9)

    def test_constant_trajectory(self):
        p = BoundaryState((1.0, 2.0, 3.0))
        traj = construct([(1.0, 2.0, 3.0)], [0.7, 1.1], p, p)
        cost, gc, _ = jerk_time_cost(traj, 100.0)
        assert cost == pytest.approx(100.0 * 1.8, rel=1e-12)
        assert np.max(np.abs(gc)) < 1e-12

    def test_jerk_gradient_fd(self, rng):
        q = rng.normal(size=(2, 3))
        T = rng.uniform(0.5, 1.5, 3)
        s, e = BoundaryState(rng.normal(size=3)), BoundaryState(rng.normal(size=3))
        traj = construct(q, T, s, e)
        _, gc, gT = jerk_time_cost(traj, 3.0)
        h = 1e-6
        for i in range(3):
            c = traj.coeffs.copy()
            for m in range(6):
                c[i, m, 0] += h
                up = jerk_time_cost(type(traj)(c, T), 3.0)[0]
                c[i, m, 0] -= 2 * h
                dn = jerk_time_cost(type(traj)(c, T), 3.0)[0]
                c[i, m, 0] += h
                assert (up - dn) / (2 * h) == pytest.approx(gc[i, m, 0], rel=1e-5, abs=1e-5)
            dT = np.zeros(3)
            dT[i] = h
            fd = (jerk_time_cost(type(traj)(traj.coeffs, T + dT), 3.0)[0]
                  - jerk_time_cost(type(traj)(traj.coeffs, T - dT), 3.0)[0]) / (2 * h)
            assert fd == pytest.approx(gT[i], rel=1e-5)

    def test_integral_inactive_inside(self):
        box = Polytope.from_box((-5, -5, -5), (5, 5, 5))
        traj = line((0, 0, 0), (1, 0, 0))
        cost, gc, gT = integral_penalty(traj, [box], CFG)
        assert cost == 0.0 and not gc.any() and not gT.any()

    def test_constant_overspeed(self):
        vm = CFG.v_max
        box = Polytope.from_box((-50, -50, -50), (50, 50, 50))
        traj = line((0, 0, 0), (vm + 1, 0, 0), T=1.0)
        cost, _, _ = integral_penalty(traj, [box], CFG)
        expected = CFG.w_velocity * 1.0 * ((vm + 1) ** 2 - vm**2) ** 3
        assert cost == pytest.approx(expected, rel=1e-12)

    def test_corridor_penalty_oracle(self, rng):
        """Direct trapezoid sum over face violations with the margin."""
        box = Polytope.from_box((0, 0, 0), (1, 1, 1))
        traj = line((0.5, 0.5, 0.5), (1.8, 0.5, 0.5), T=2.0)
        cost, _, _ = integral_penalty(traj, [box], CFG)
        kappa = CFG.samples_per_piece
        ts = np.linspace(0, 2.0, kappa + 1)
        w = quadrature_weights(kappa)
        viol = np.maximum((traj.evaluate(ts) @ box.A.T) - box.b + CFG.corridor_margin, 0.0) ** 3
        assert cost == pytest.approx(CFG.w_corridor * 2.0 / kappa * float(w @ viol.sum(axis=1)), rel=1e-12)

    def test_distance_zero_in_band(self):
        traj = line((0, 0, 1), (2, 0, 1), T=2.0)
        times = np.array([0.0, 1.0, 2.0])
        targets = traj.evaluate(times) + [2.5, 0.0, 0.3]
        cost, gc, gT = distance_penalty(traj, (times, targets), CFG)
        assert cost == 0.0 and not gc.any() and not gT.any()

    def test_distance_oracle(self, rng):
        traj = line((0, 0, 1), (3, 1, 1), T=2.0)
        times = np.array([0.3, 1.1, 1.9])
        targets = rng.normal(0, 3, (3, 3))
        cost, _, _ = distance_penalty(traj, (times, targets), CFG)
        p = traj.evaluate(times)
        ref = 0.0
        for pk, zk in zip(p, targets):
            dh = math.hypot(*(pk - zk)[:2])
            ref += distance_shape(dh, CFG.d_lower, CFG.d_upper, CFG.bridge_width)[0]
            ref += max(abs(pk[2] - zk[2]) - CFG.vertical_tolerance, 0.0) ** 3
        assert cost == pytest.approx(CFG.w_distance * ref, rel=1e-12)

    def test_occlusion_on_bisector(self):
        traj = line((3, 0, 0), (3, 0, 0))
        z = np.zeros(3)
        sector = VisibleSector(z, (1, 0, 0), math.radians(30), 4.0)
        cost, _, _ = occlusion_penalty(traj, (np.array([0.5]), z[None]), [sector], CFG)
        assert cost == 0.0

    def test_occlusion_at_half_angle(self):
        theta = math.radians(30)
        pos = 3 * np.array([math.cos(theta), math.sin(theta), 0.0])
        traj = line(pos, pos)
        sector = VisibleSector(np.zeros(3), (1, 0, 0), theta, 4.0)
        cost, _, _ = occlusion_penalty(traj, (np.array([0.5]), np.zeros((1, 3))), [sector], CFG)
        expected = (math.cos(theta - CFG.angle_clearance) - math.cos(theta)) ** 3
        assert cost / CFG.w_occlusion == pytest.approx(expected, rel=1e-9)
        assert expected > 0

    def test_occlusion_at_apex_is_finite(self):
        traj = line((0, 0, 0), (0, 0, 0))
        sector = VisibleSector(np.zeros(3), (1, 0, 0), 0.5, 4.0)
        cost, gc, gT = occlusion_penalty(traj, (np.array([0.5]), np.zeros((1, 3))), [sector], CFG)
        assert math.isfinite(cost) and np.all(np.isfinite(gc)) and np.all(np.isfinite(gT))


# -- full objective ------------------------------------------------------------------


def _perturbed_point(problem, rng):
    obj = Objective(problem)
    q, T = warm_start(problem)
    return obj, obj.pack(q + rng.normal(0, 0.3, q.shape), T_to_tau(T, problem.horizon))


class TestObjective:
    @pytest.mark.parametrize("seed", range(25))
    def test_gradient_vs_finite_difference(self, seed):
        rng = np.random.default_rng(seed)
        obj, x = _perturbed_point(random_problem(rng), rng)
        _, g = obj(x)
        fd = central_difference(obj, x)
        assert np.max(relative_errors(g, fd)) < 1e-4

    @pytest.mark.parametrize("seed", range(10))
    def test_compiled_matches_modular(self, seed):
        rng = np.random.default_rng(100 + seed)
        obj, x = _perturbed_point(random_problem(rng), rng)
        f1, g1 = obj(x)
        f2, g2 = obj.modular(x)
        assert f1 == pytest.approx(f2, rel=1e-12)
        assert np.allclose(g1, g2, rtol=1e-10, atol=1e-10 * np.max(np.abs(g2)))

    def test_terms_sum_to_total(self, rng):
        obj, x = _perturbed_point(random_problem(rng), rng)
        f, _ = obj(x)
        assert set(obj.last_terms) == set(TERMS)
        assert sum(obj.last_terms.values()) == pytest.approx(f, rel=1e-12)

    def test_every_term_can_be_active(self):
        seen = set()
        for seed in range(40):
            rng = np.random.default_rng(seed)
            obj, x = _perturbed_point(random_problem(rng), rng)
            obj(x)
            seen |= {k for k, v in obj.last_terms.items() if v > 0}
        assert seen == set(TERMS)

    def test_piece_crossing_continuity(self):
        """Sweep one logit so the first junction passes a sampling time."""
        rng = np.random.default_rng(7)
        base = _tracking_scenario(rng)
        q, T = warm_start(base)
        tk = T[0] + min(0.05, 0.5 * T[1])
        times = base.times.copy()
        times[np.argmin(np.abs(times - tk))] = tk
        times.sort()
        pr = Problem(base.corridor, times, base.targets, base.sectors, base.start, base.end, base.horizon)
        obj = Objective(pr)
        x = obj.pack(q, T_to_tau(T, pr.horizon))
        j = 3 * (pr.pieces - 1)  # first logit moves the first junction

        def junction(xv):
            return tau_to_T(xv[j:], pr.horizon)[0]

        lo, hi = x[j], x[j] + 3.0
        assert junction(np.r_[x[:j], hi, x[j + 1:]]) > tk
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if junction(np.r_[x[:j], mid, x[j + 1:]]) < tk:
                lo = mid
            else:
                hi = mid
        xc = x.copy()
        xc[j] = 0.5 * (lo + hi)
        assert junction(xc) == pytest.approx(tk, abs=1e-9)
        f0 = obj(xc)[0]
        assert 0 < f0 < 1e6
        slope = obj(xc)[1][j]
        for d in (1e-10, 1e-8, 1e-6):
            a, b = xc.copy(), xc.copy()
            a[j] -= d
            b[j] += d
            # change left after removing the smooth first-order part
            assert abs(obj(b)[0] - obj(a)[0] - 2 * d * slope) < 1e-6
        for side in (-1e-3, 1e-3):
            xs = xc.copy()
            xs[j] += side
            _, g = obj(xs)
            fd = central_difference(obj, xs, h=1e-7)
            assert np.max(relative_errors(g, fd)) < 1e-4

    def test_problem_rejects_late_timestamp(self):
        rng = np.random.default_rng(0)
        pr = random_problem(rng)
        with pytest.raises(ValueError):
            Problem(pr.corridor, pr.times + 10.0, pr.targets, pr.sectors, pr.start, pr.end, pr.horizon)


# -- solver -----------------------------------------------------------------------


class TestMinimize:
    def test_rosenbrock(self):
        def rosen(x):
            f = 100 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2
            g = np.array([-400 * x[0] * (x[1] - x[0] ** 2) - 2 * (1 - x[0]), 200 * (x[1] - x[0] ** 2)])
            return f, g

        res = minimize(rosen, np.array([-1.2, 1.0]), g_tol=1e-8, max_iter=500)
        assert res.status == "converged"
        assert np.allclose(res.x, [1, 1], atol=1e-5)

    def test_monotone_iterates(self):
        rng = np.random.default_rng(3)
        obj, x = _perturbed_point(random_problem(rng), rng)
        res = minimize(obj, x, max_iter=100)
        costs = [h[1] for h in res.history]
        assert all(b <= a for a, b in zip(costs, costs[1:]))

    def test_non_finite_start(self):
        with pytest.raises(NonFiniteCostError):
            minimize(lambda x: (math.nan, x), np.zeros(2))

    def test_failed_line_search_is_degraded(self):
        # gradient points the wrong way, so no step decreases the cost
        res = minimize(lambda x: (float(x @ x), -2 * x), np.ones(3))
        assert res.degraded
        assert res.f == 3.0


def _tracking_scenario(rng):
    """Target moving in a straight line; a trailing pose at 2.5 m behind it is
    inside the corridor and inside every sector, so zero penalty is reachable."""
    speed = rng.uniform(0.5, 2.0)
    heading = rng.uniform(-math.pi, math.pi)
    u = np.array([math.cos(heading), math.sin(heading), 0.0])
    z0 = np.array([0.0, 0.0, 1.0])
    horizon = 3.0
    times = np.linspace(0.2, horizon, 15)
    targets = z0 + speed * times[:, None] * u
    offset = -2.5 * u
    start = BoundaryState(z0 + offset, speed * u)
    end = BoundaryState(targets[-1] + offset, speed * u)
    n_poly = int(rng.integers(1, 4))
    pts = np.linspace(start.position, end.position, n_poly + 1)
    polys = []
    junctions = []
    for i in range(n_poly):
        lo = np.minimum(pts[i], pts[i + 1]) - [1.5, 1.5, 0.8]
        hi = np.maximum(pts[i], pts[i + 1]) + [1.5, 1.5, 0.8]
        polys.append(Polytope.from_box(lo, hi))
        if i:
            junctions.append(pts[i])
    sectors = [VisibleSector(z, -u, math.radians(rng.uniform(25, 50)), 4.0) for z in targets]
    corridor = Corridor(polys, [], np.array(junctions).reshape(-1, 3))
    return Problem(corridor, times, targets, sectors, start, end, horizon)


class TestSolve:
    def test_stationary_target(self):
        z = np.array([0.0, 0.0, 1.0])
        pose = np.array([-2.5, 0.0, 1.0])
        times = np.linspace(0.2, 3.0, 15)
        targets = np.repeat(z[None], 15, axis=0)
        sectors = [VisibleSector(z, (-1, 0, 0), math.radians(40), 4.0)] * 15
        corridor = Corridor([Polytope.from_box(pose - 1, pose + 1)], [], np.zeros((0, 3)))
        pr = Problem(corridor, times, targets, sectors, BoundaryState(pose), BoundaryState(pose), 3.0)
        # warm start at rest on the pose itself
        res = solve(pr, initial=(np.array([pose]), np.array([1.6, 1.6])))
        samples = res.trajectory.sample(200)
        assert np.max(np.linalg.norm(samples - pose, axis=1)) < 1e-3
        for k in ("corridor", "velocity", "acceleration", "distance", "occlusion"):
            assert res.terms[k] < 1e-8

    @pytest.mark.parametrize("seed", range(20))
    def test_feasible_scenarios(self, seed):
        rng = np.random.default_rng(seed)
        pr = _tracking_scenario(rng)
        res = solve(pr)
        traj = res.trajectory
        assert traj.total_duration >= pr.horizon
        worst = 0.0
        for i in range(traj.pieces):
            poly = pr.corridor.polytopes[i // 2]
            ts = traj.piece_starts[i] + np.linspace(0, traj.durations[i], 100)
            pts = traj.evaluate(np.minimum(ts, traj.total_duration))
            worst = max(worst, float(np.max(pts @ poly.A.T - poly.b)))
        assert worst < 1e-3
        assert res.terms["distance"] / CFG.w_distance < 1e-6
        assert res.terms["occlusion"] / CFG.w_occlusion < 1e-6

    def test_trace(self):
        rng = np.random.default_rng(1)
        res = solve(_tracking_scenario(rng), record_trace=True)
        lines = res.trace_text().splitlines()
        assert len(lines) == res.iterations
        assert '"grad_norm"' in lines[0] and '"occlusion"' in lines[0]

    def test_wrong_initial_size(self):
        rng = np.random.default_rng(2)
        pr = _tracking_scenario(rng)
        with pytest.raises(ValueError):
            solve(pr, initial=(np.zeros((0, 3)), np.ones(1)))

    def test_trapezoid_profile(self):
        knots = np.array([[0, 0, 0], [5, 0, 0], [10, 0, 0]], float)
        T = trapezoid_durations(knots, 2.0, 1.0)
        # 2 s ramp (2 m), 3 m cruise, then mirror: 2 + 1.5 per half
        assert T == pytest.approx([3.5, 3.5], rel=1e-9)


# -- yaw ---------------------------------------------------------------------------


class TestYaw:
    def test_quarter_turn_at_unit_rate(self):
        out = rate_limited_yaw([math.pi / 2] * 20, 0.0, 1.0, 0.1)
        assert np.allclose(np.diff(np.concatenate([[0.0], out[:15]])), 0.1)
        assert out[15] == pytest.approx(math.pi / 2, abs=1e-15)
        assert np.all(out[15:] == out[15])

    def test_wrap_through_pi(self):
        out = rate_limited_yaw([math.radians(-179)], math.radians(179), 1.0, 0.1)
        # the short way is +2 degrees across pi, not -358 degrees
        assert out[0] == pytest.approx(math.radians(-179), abs=1e-12)
        out = rate_limited_yaw([math.radians(-170)], math.radians(179), 1.0, 0.1)
        assert wrap_angle(out[0] - math.radians(179)) == pytest.approx(0.1, abs=1e-12)

    def test_wrap_range(self):
        a = wrap_angle(np.array([math.pi, -math.pi, 3 * math.pi, 0.0]))
        assert np.allclose(a, [math.pi, math.pi, math.pi, 0.0])

    def test_target_straight_ahead(self):
        traj = line((0, 0, 1), (2, 0, 1), T=2.0)
        pred = Prediction(2.0, np.linspace(0.2, 2, 10), np.zeros((10, 3)), np.zeros(3),
                          np.array([3.0, 0, 1]), np.array([1.0, 0, 0]))
        _, yaw = yaw_plan(traj, pred, 0.0, 1.0)
        assert np.all(np.abs(yaw) < 1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0.1, 5))
    def test_rate_never_exceeded(self, yaw0, desired, omega):
        out = rate_limited_yaw([desired] * 5, yaw0, omega, 0.1)
        steps = wrap_angle(np.diff(np.concatenate([[wrap_angle(yaw0)], out])))
        assert np.all(np.abs(steps) <= omega * 0.1 + 1e-12)
