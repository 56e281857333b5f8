"""Deterministic scenario execution and summary metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidArgumentError
from .primitive import VehicleParams
from .safety import (
    PathGeometry,
    SafetyViolation,
    TrajectoryPlan,
    check_plan,
    node_crossing_time,
)
from .scheduler import Arrival, CoordinatorDb, ScheduleOutcome

# integration cap for the disturbed model, as a multiple of the planned horizon
_MAX_STRETCH = 10.0


@dataclass(frozen=True)
class ScenarioSpec:
    geoms: tuple
    params: VehicleParams
    arrivals: tuple
    sample_rate: float = 20.0
    duration: Optional[float] = None
    seed: int = 0
    disturbance_std: float = 0.0
    grid_step: float = 0.01
    infeasibility_policy: str = "error"
    delay_step: float = 0.1
    max_delay: float = 60.0

    def __post_init__(self):
        object.__setattr__(self, "geoms", tuple(self.geoms))
        object.__setattr__(self, "arrivals", tuple(self.arrivals))
        ids = {g.path_id for g in self.geoms}
        if len(ids) != len(self.geoms):
            raise InvalidArgumentError("duplicate path ids")
        for a, b in zip(self.arrivals, self.arrivals[1:]):
            if b.entry_time < a.entry_time:
                raise InvalidArgumentError("arrivals must be sorted by entry time")
        for a in self.arrivals:
            if a.path_id not in ids:
                raise InvalidArgumentError(f"arrival {a.vehicle_id!r} references unknown path {a.path_id!r}")
        if not self.sample_rate > 0:
            raise InvalidArgumentError("sample_rate must be positive")
        if self.disturbance_std < 0:
            raise InvalidArgumentError("disturbance_std must be non-negative")

    @property
    def geom_map(self) -> dict:
        return {g.path_id: g for g in self.geoms}


@dataclass
class VehicleTrace:
    t: np.ndarray
    p: np.ndarray
    v: np.ndarray
    u: np.ndarray


@dataclass
class SimResult:
    spec: ScenarioSpec
    schedule: list
    samples: dict  # vehicle_id -> VehicleTrace
    crossings: list  # (vehicle_id, node, time)
    achieved_exit: dict  # vehicle_id -> absolute time
    violations: list = field(default_factory=list)


@dataclass
class Metrics:
    v_min_overall: float
    v_avg_overall: float
    travel_times: dict
    node_min_headway: dict
    violation_count: int
    exit_time_rmse_pct: float

    def as_dict(self) -> dict:
        return {
            "v_min_overall": self.v_min_overall,
            "v_avg_overall": self.v_avg_overall,
            "travel_times": self.travel_times,
            "node_min_headway": {str(k): v for k, v in self.node_min_headway.items()},
            "violation_count": self.violation_count,
            "exit_time_rmse_pct": self.exit_time_rmse_pct,
        }


def _exact_trace(plan: TrajectoryPlan, dt: float, t_end: float) -> VehicleTrace:
    coef = plan.coefficients
    n = int(math.floor(coef.horizon / dt + 1e-9)) + 1
    tau = np.arange(n) * dt
    tau = tau[tau <= coef.horizon]
    t = plan.entry_time + tau
    keep = t <= t_end
    tau, t = tau[keep], t[keep]
    p = ((coef.a * tau + coef.b) * tau + coef.c) * tau + coef.d
    v = (3.0 * coef.a * tau + 2.0 * coef.b) * tau + coef.c
    u = 6.0 * coef.a * tau + 2.0 * coef.b
    return VehicleTrace(t, p, v, u)


def _disturbed_trace(plan: TrajectoryPlan, dt: float, std: float, rng: np.random.Generator):
    """Euler-integrated track of a plan under zero-mean speed noise.

    Returns the trace (clipped at the zone exit) and the interpolated exit time.
    """
    coef = plan.coefficients
    S = coef.zone_length
    n_max = int(math.ceil(_MAX_STRETCH * coef.horizon / dt)) + 2
    tau = np.arange(n_max) * dt
    tc = np.minimum(tau, coef.horizon)
    v_cmd = np.where(
        tau <= coef.horizon,
        (3.0 * coef.a * tc + 2.0 * coef.b) * tc + coef.c,
        coef.exit_speed,
    )
    u_cmd = np.where(tau <= coef.horizon, 6.0 * coef.a * tc + 2.0 * coef.b, 0.0)
    v = v_cmd + rng.normal(0.0, std, size=n_max)
    p = np.concatenate(([0.0], np.cumsum(v[:-1] * dt)))
    over = np.nonzero(p >= S)[0]
    if over.size == 0:
        raise InvalidArgumentError(
            f"{plan.vehicle_id}: disturbed vehicle did not reach the exit; noise too large"
        )
    k = int(over[0])
    frac = (S - p[k - 1]) / (p[k] - p[k - 1])
    exit_tau = tau[k - 1] + frac * dt
    trace = VehicleTrace(plan.entry_time + tau[:k], p[:k], v[:k], u_cmd[:k])
    return trace, plan.entry_time + exit_tau


def _interp_crossing(trace: VehicleTrace, station: float) -> float:
    k = int(np.searchsorted(trace.p, station, side="left"))
    if k == 0:
        return float(trace.t[0])
    if k >= len(trace.p):
        return float(trace.t[-1])
    p0, p1 = trace.p[k - 1], trace.p[k]
    return float(trace.t[k - 1] + (station - p0) / (p1 - p0) * (trace.t[k] - trace.t[k - 1]))


def audit_schedule(plans, geoms, params: VehicleParams) -> list:
    """Exact safety audit of a committed schedule.

    Each plan is checked against every earlier plan still inside the zone at
    its entry, i.e. the same constraint set it was planned against.
    """
    ordered = sorted(plans, key=lambda p: p.entry_time)
    out = []
    for idx, plan in enumerate(ordered):
        present = [q for q in ordered[:idx] if q.exit_time > plan.entry_time]
        out.extend(check_plan(plan, present, geoms, params))
    return out


def _audit_disturbed(result_plans, traces, crossings, achieved, geoms, params) -> list:
    out = []
    ordered = sorted(result_plans, key=lambda p: p.entry_time)
    cross = {(v, n): t for v, n, t in crossings}
    for idx, plan in enumerate(ordered):
        present = [q for q in ordered[:idx] if achieved[q.vehicle_id] > plan.entry_time]
        gi = geoms[plan.path_id]
        for other in present:
            gj = geoms[other.path_id]
            for node in sorted(gi.node_ids & gj.node_ids, key=str):
                gap = abs(cross[(plan.vehicle_id, node)] - cross[(other.vehicle_id, node)])
                if gap < params.t_h:
                    out.append(SafetyViolation("lateral", plan.vehicle_id, other.vehicle_id,
                                               gap - params.t_h, cross[(plan.vehicle_id, node)], node))
        same = [q for q in present if q.path_id == plan.path_id]
        if same:
            leader = max(same, key=lambda q: q.entry_time)
            tf, tk = traces[plan.vehicle_id], traces[leader.vehicle_id]
            mask = tf.t <= min(achieved[leader.vehicle_id], tk.t[-1])
            if mask.any():
                pk = np.interp(tf.t[mask], tk.t, tk.p)
                g = pk - tf.p[mask] - params.length - params.gamma - params.phi * tf.v[mask]
                j = int(np.argmin(g))
                if g[j] < 0:
                    out.append(SafetyViolation("rear_end", plan.vehicle_id, leader.vehicle_id,
                                               float(g[j]), float(tf.t[mask][j])))
    return out


def run(spec: ScenarioSpec) -> SimResult:
    geoms = spec.geom_map
    db = CoordinatorDb(
        geoms, spec.params, grid_step=spec.grid_step,
        infeasibility_policy=spec.infeasibility_policy,
        delay_step=spec.delay_step, max_delay=spec.max_delay,
    )
    schedule = [db.register_arrival(a) for a in spec.arrivals]
    plans = [o.plan for o in schedule]

    dt = 1.0 / spec.sample_rate
    t_end = math.inf if spec.duration is None else spec.duration
    samples, crossings, achieved = {}, [], {}
    if spec.disturbance_std == 0.0:
        for plan in plans:
            samples[plan.vehicle_id] = _exact_trace(plan, dt, t_end)
            achieved[plan.vehicle_id] = plan.exit_time
            geom = geoms[plan.path_id]
            for node, _ in geom.nodes:
                crossings.append((plan.vehicle_id, node, node_crossing_time(plan, geom, node)))
        violations = audit_schedule(plans, geoms, spec.params)
    else:
        rng = np.random.default_rng(spec.seed)
        for plan in plans:
            trace, exit_t = _disturbed_trace(plan, dt, spec.disturbance_std, rng)
            achieved[plan.vehicle_id] = exit_t
            geom = geoms[plan.path_id]
            for node, station in geom.nodes:
                crossings.append((plan.vehicle_id, node, _interp_crossing(trace, station)))
            keep = trace.t <= t_end
            samples[plan.vehicle_id] = VehicleTrace(trace.t[keep], trace.p[keep],
                                                    trace.v[keep], trace.u[keep])
        violations = _audit_disturbed(plans, samples, crossings, achieved, geoms, spec.params)
    return SimResult(spec, schedule, samples, crossings, achieved, violations)


def compute_metrics(result: SimResult) -> Metrics:
    if not result.schedule:
        raise InvalidArgumentError("no vehicles were scheduled; metrics are undefined")
    speeds = [tr.v for tr in result.samples.values() if len(tr.v)]
    v_min = float(min(s.min() for s in speeds)) if speeds else math.nan

    travel, avg, sq = {}, [], []
    for outcome in result.schedule:
        plan = outcome.plan
        achieved = result.achieved_exit[plan.vehicle_id] - plan.entry_time
        travel[plan.vehicle_id] = achieved
        avg.append(plan.coefficients.zone_length / achieved)
        sq.append(((achieved - outcome.chosen_horizon) / outcome.chosen_horizon) ** 2)

    by_node = {}
    for _, node, t in result.crossings:
        by_node.setdefault(node, []).append(t)
    headway = {}
    for node in sorted(by_node, key=str):
        times = sorted(by_node[node])
        headway[node] = float(np.min(np.diff(times))) if len(times) > 1 else None

    return Metrics(
        v_min_overall=v_min,
        v_avg_overall=float(np.mean(avg)),
        travel_times=travel,
        node_min_headway=headway,
        violation_count=len(result.violations),
        exit_time_rmse_pct=100.0 * math.sqrt(float(np.mean(sq))),
    )
