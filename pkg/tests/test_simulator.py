import math

import numpy as np
import pytest

from roundabout_cav import (
    Arrival,
    InvalidArgumentError,
    PathGeometry,
    ScenarioSpec,
    TrajectoryPlan,
    VehicleParams,
    build_primitive,
    bundled_scenario,
    compute_metrics,
    exit_time_window,
    node_crossing_time,
    parse_scenario,
    run,
)
from roundabout_cav.scheduler import ScheduleOutcome
from roundabout_cav.simulator import SimResult, VehicleTrace, audit_schedule

from oracles import crossing_time_bisect, solve_coefficients


@pytest.fixture(scope="module")
def replica():
    spec = parse_scenario(bundled_scenario("replica"))
    return spec, run(spec)


def single_spec(params, v0=0.1, S=1.0, **kw):
    geom = PathGeometry("p", S, (("n", 0.5 * S),))
    return ScenarioSpec((geom,), params, (Arrival("solo", "p", 0.0, v0),), **kw)


class TestRun:
    def test_single_vehicle_takes_lower_bound(self, lab_params):
        res = run(single_spec(lab_params))
        (o,) = res.schedule
        assert o.chosen_horizon == o.window.t_lo
        assert res.violations == []
        tr = res.samples["solo"]
        assert tr.t[0] == 0.0 and tr.p[0] == 0.0
        assert np.allclose(np.diff(tr.t), 1.0 / 20.0)

    def test_replica_is_safe_and_in_bounds(self, replica, lab_params):
        spec, res = replica
        assert len(res.schedule) == 9
        assert res.violations == []
        for tr in res.samples.values():
            assert tr.v.min() >= spec.params.v_min - 1e-9
            assert tr.v.max() <= spec.params.v_max + 1e-9
            assert tr.u.min() >= spec.params.u_min - 1e-9
            assert tr.u.max() <= spec.params.u_max + 1e-9
        m = compute_metrics(res)
        assert m.violation_count == 0
        assert m.v_min_overall >= spec.params.v_min
        assert m.exit_time_rmse_pct == 0.0
        for h in m.node_min_headway.values():
            assert h is None or h >= spec.params.t_h - 1e-9

    def test_schedule_is_conserved(self, replica):
        _, res = replica
        for o in res.schedule:
            p = o.plan
            assert abs(res.achieved_exit[p.vehicle_id] - (p.entry_time + o.chosen_horizon)) <= 1e-12
            assert p.coefficients.horizon == o.chosen_horizon

    def test_sampled_positions_match_plans(self, replica):
        _, res = replica
        for o in res.schedule:
            co = o.plan.coefficients
            a, b, c, d = solve_coefficients(co.zone_length, co.entry_speed, co.horizon)
            tr = res.samples[o.plan.vehicle_id]
            tau = tr.t - o.plan.entry_time
            ref = ((a * tau + b) * tau + c) * tau + d
            assert np.max(np.abs(tr.p - ref)) <= 1e-12

    def test_crossing_log_consistency(self, replica):
        spec, res = replica
        geoms = spec.geom_map
        plans = {o.plan.vehicle_id: o.plan for o in res.schedule}
        expected = sum(len(geoms[p.path_id].nodes) for p in plans.values())
        assert len(res.crossings) == expected
        for vid, node, t in res.crossings:
            plan = plans[vid]
            co = plan.coefficients
            ref = plan.entry_time + crossing_time_bisect(
                co.a, co.b, co.c, co.horizon, geoms[plan.path_id].station(node))
            assert t == pytest.approx(ref, abs=1e-9)
            assert plan.entry_time < t < plan.exit_time

    def test_audit_agrees_with_planner(self, replica, lab_params):
        spec, res = replica
        plans = [o.plan for o in res.schedule]
        assert audit_schedule(plans, spec.geom_map, spec.params) == []

    def test_duration_truncates_samples(self, lab_params):
        res = run(single_spec(lab_params, duration=2.0))
        assert res.samples["solo"].t[-1] <= 2.0
        # crossings and exit stay exact regardless of the sampled window
        assert res.achieved_exit["solo"] == res.schedule[0].plan.exit_time

    def test_disturbance_reproducible_and_nonzero_error(self, replica):
        spec, _ = replica
        noisy = ScenarioSpec(spec.geoms, spec.params, spec.arrivals,
                             disturbance_std=0.01, seed=7)
        r1, r2 = run(noisy), run(noisy)
        for vid in r1.samples:
            assert np.array_equal(r1.samples[vid].p, r2.samples[vid].p)
        assert r1.crossings == r2.crossings
        m = compute_metrics(r1)
        assert m.exit_time_rmse_pct > 0.0
        other = run(ScenarioSpec(spec.geoms, spec.params, spec.arrivals,
                                 disturbance_std=0.01, seed=8))
        assert other.achieved_exit != r1.achieved_exit

    def test_spec_validation(self, lab_params):
        geom = PathGeometry("p", 1.0)
        with pytest.raises(InvalidArgumentError):
            ScenarioSpec((geom,), lab_params, (Arrival("x", "q", 0.0, 0.1),))
        with pytest.raises(InvalidArgumentError):
            ScenarioSpec((geom,), lab_params,
                         (Arrival("x", "p", 1.0, 0.1), Arrival("y", "p", 0.0, 0.1)))
        with pytest.raises(InvalidArgumentError):
            ScenarioSpec((geom,), lab_params, (), sample_rate=0.0)


class TestMetrics:
    def test_constant_speed_vehicle(self):
        # v_max equal to the entry speed pins the lower bound at S / v0
        params = VehicleParams(v_max=0.1)
        res = run(single_spec(params, v0=0.1, S=1.0))
        assert res.schedule[0].chosen_horizon == pytest.approx(10.0, abs=1e-12)
        m = compute_metrics(res)
        assert m.v_min_overall == pytest.approx(0.1, abs=1e-12)
        assert m.v_avg_overall == pytest.approx(0.1, abs=1e-12)
        assert m.travel_times == {"solo": pytest.approx(10.0, abs=1e-12)}
        assert m.node_min_headway == {"n": None}

    def test_two_crossings_headway(self, lab_params):
        geom = PathGeometry("p", 1.0, (("n", 0.5),))
        outcomes, samples, crossings, achieved = [], {}, [], {}
        for vid, t0 in (("a", 0.0), ("b", 1.2)):
            plan = TrajectoryPlan(vid, "p", t0, build_primitive(1.0, 0.1, 10.0))
            w = exit_time_window(1.0, 0.1, lab_params)
            outcomes.append(ScheduleOutcome(plan, w, 10.0, 1, t0))
            samples[vid] = VehicleTrace(np.array([t0]), np.zeros(1), np.full(1, 0.1), np.zeros(1))
            crossings.append((vid, "n", node_crossing_time(plan, geom, "n")))
            achieved[vid] = plan.exit_time
        spec = ScenarioSpec((geom,), lab_params, ())
        m = compute_metrics(SimResult(spec, outcomes, samples, crossings, achieved))
        assert m.node_min_headway["n"] == pytest.approx(1.2, abs=1e-12)
        assert m.violation_count == 0

    def test_empty_result_raises(self, lab_params):
        spec = ScenarioSpec((PathGeometry("p", 1.0),), lab_params, ())
        res = run(spec)
        assert res.schedule == [] and res.samples == {}
        with pytest.raises(InvalidArgumentError):
            compute_metrics(res)

    def test_as_dict_is_plain(self, replica):
        _, res = replica
        d = compute_metrics(res).as_dict()
        assert set(d) == {"v_min_overall", "v_avg_overall", "travel_times", "node_min_headway",
                          "violation_count", "exit_time_rmse_pct"}
        assert all(isinstance(k, str) for k in d["node_min_headway"])
        assert math.isfinite(d["v_avg_overall"])
