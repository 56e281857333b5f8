"""Conflict sets, node time-headway and rear-end spacing on cubic plans."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

from .errors import InvalidArgumentError
from .primitive import PrimitiveCoefficients, VehicleParams, inverse_position, position, speed


@dataclass(frozen=True)
class PathGeometry:
    """Control-zone length of a path and its lateral nodes as (node_id, station) pairs."""

    path_id: str
    zone_length: float
    nodes: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple((n, float(l)) for n, l in self.nodes))
        if not (math.isfinite(self.zone_length) and self.zone_length > 0):
            raise InvalidArgumentError(f"path {self.path_id!r}: zone_length must be positive")
        seen = set()
        prev = 0.0
        for node_id, station in self.nodes:
            if node_id in seen:
                raise InvalidArgumentError(f"path {self.path_id!r}: duplicate node {node_id!r}")
            seen.add(node_id)
            if not (0.0 < station < self.zone_length):
                raise InvalidArgumentError(
                    f"path {self.path_id!r}: node {node_id!r} station {station!r} "
                    f"not inside (0, {self.zone_length!r})"
                )
            if station <= prev:
                raise InvalidArgumentError(
                    f"path {self.path_id!r}: node stations must be strictly increasing"
                )
            prev = station

    @property
    def node_ids(self) -> frozenset:
        return frozenset(n for n, _ in self.nodes)

    def station(self, node_id) -> float:
        for n, l in self.nodes:
            if n == node_id:
                return l
        raise InvalidArgumentError(f"node {node_id!r} is not on path {self.path_id!r}")


@dataclass(frozen=True)
class TrajectoryPlan:
    vehicle_id: str
    path_id: str
    entry_time: float
    coefficients: PrimitiveCoefficients

    @property
    def exit_time(self) -> float:
        return self.entry_time + self.coefficients.horizon

    def position_at(self, t: float) -> float:
        return position(self.coefficients, t - self.entry_time)

    def speed_at(self, t: float) -> float:
        return speed(self.coefficients, t - self.entry_time)


@dataclass(frozen=True)
class SafetyViolation:
    kind: str  # "rear_end" | "lateral"
    vehicle_id: str
    other_id: str
    margin: float
    time: Optional[float] = None
    node: Optional[object] = None

    def describe(self) -> str:
        if self.kind == "lateral":
            return (f"lateral: {self.vehicle_id} vs {self.other_id} at node {self.node}, "
                    f"headway short by {-self.margin:.6g} s")
        return (f"rear_end: {self.vehicle_id} behind {self.other_id} at t={self.time:.6g}, "
                f"gap short by {-self.margin:.6g} m")


def conflict_set(geom_i: PathGeometry, geom_j: PathGeometry) -> frozenset:
    return geom_i.node_ids & geom_j.node_ids


def node_crossing_time(plan: TrajectoryPlan, geom: PathGeometry, node) -> float:
    if geom.path_id != plan.path_id:
        raise InvalidArgumentError(
            f"geometry {geom.path_id!r} does not belong to plan path {plan.path_id!r}"
        )
    return plan.entry_time + inverse_position(plan.coefficients, geom.station(node))


def check_lateral(
    plan_i: TrajectoryPlan,
    committed: Iterable[TrajectoryPlan],
    geoms: Mapping[str, PathGeometry],
    t_h: float,
) -> list:
    geom_i = geoms[plan_i.path_id]
    crossing_i = {}
    out = []
    for plan_j in committed:
        if plan_j.vehicle_id == plan_i.vehicle_id:
            continue
        geom_j = geoms[plan_j.path_id]
        for node in sorted(conflict_set(geom_i, geom_j), key=str):
            if node not in crossing_i:
                crossing_i[node] = node_crossing_time(plan_i, geom_i, node)
            gap = abs(crossing_i[node] - node_crossing_time(plan_j, geom_j, node))
            if gap < t_h:
                out.append(SafetyViolation(
                    kind="lateral", vehicle_id=plan_i.vehicle_id, other_id=plan_j.vehicle_id,
                    margin=gap - t_h, time=crossing_i[node], node=node,
                ))
    return out


def _quadratic_roots(qa: float, qb: float, qc: float) -> list:
    """Real roots of qa x^2 + qb x + qc, tolerant of a vanishing leading term."""
    scale = max(abs(qa), abs(qb), abs(qc))
    if scale == 0.0:
        return []
    if abs(qa) <= 1e-14 * scale:
        return [] if qb == 0.0 else [-qc / qb]
    disc = qb * qb - 4.0 * qa * qc
    if disc < 0.0:
        return []
    q = -0.5 * (qb + math.copysign(math.sqrt(disc), qb))
    roots = [q / qa]
    if q != 0.0:
        roots.append(qc / q)
    return roots


def rear_end_minimum(
    follower: TrajectoryPlan, leader: TrajectoryPlan, params: VehicleParams
) -> tuple:
    """Minimum of gap - (L + gamma + phi * v_follower) over the shared residence.

    Returns ``(margin, time_of_minimum)``; the margin is ``inf`` (and the time
    ``None``) when the leader has already left the zone at the follower's entry.
    """
    if follower.path_id != leader.path_id:
        raise InvalidArgumentError("rear-end margin needs plans on the same path")
    if leader.entry_time > follower.entry_time:
        raise InvalidArgumentError("leader must enter no later than its follower")
    end = min(follower.exit_time, leader.exit_time)
    if end <= follower.entry_time:
        return math.inf, None

    ci, ck = follower.coefficients, leader.coefficients
    shift = follower.entry_time - leader.entry_time
    span = min(ci.horizon, ck.horizon - shift)
    reserve = params.length + params.gamma

    def g(tau: float) -> float:
        return (position(ck, tau + shift) - position(ci, tau)
                - reserve - params.phi * speed(ci, tau))

    # g is a cubic in follower-local time; its derivative's coefficients
    A = ck.a - ci.a
    B = 3.0 * ck.a * shift + ck.b - ci.b - 3.0 * params.phi * ci.a
    C = 3.0 * ck.a * shift * shift + 2.0 * ck.b * shift + ck.c - ci.c - 2.0 * params.phi * ci.b
    candidates = [0.0, span]
    candidates += [r for r in _quadratic_roots(3.0 * A, 2.0 * B, C) if 0.0 < r < span]
    best_tau = min(candidates, key=g)
    return g(best_tau), follower.entry_time + best_tau


def rear_end_margin(follower: TrajectoryPlan, leader: TrajectoryPlan, params: VehicleParams) -> float:
    """Signed worst-case spacing slack; non-negative iff the follower is safe throughout."""
    return rear_end_minimum(follower, leader, params)[0]


def find_leader(plan_i: TrajectoryPlan, committed: Sequence[TrajectoryPlan]) -> Optional[TrajectoryPlan]:
    """Most recently committed plan on the same path that entered no later than ``plan_i``."""
    leader = None
    for plan in committed:
        if plan.path_id != plan_i.path_id or plan.vehicle_id == plan_i.vehicle_id:
            continue
        if plan.entry_time > plan_i.entry_time:
            continue
        if leader is None or plan.entry_time >= leader.entry_time:
            leader = plan
    return leader


def check_plan(
    plan_i: TrajectoryPlan,
    committed: Sequence[TrajectoryPlan],
    geoms: Mapping[str, PathGeometry],
    params: VehicleParams,
) -> list:
    """All safety violations of ``plan_i`` against a snapshot of committed plans."""
    out = check_lateral(plan_i, committed, geoms, params.t_h)
    leader = find_leader(plan_i, committed)
    if leader is not None:
        margin, t_min = rear_end_minimum(plan_i, leader, params)
        if margin < 0.0:
            out.append(SafetyViolation(
                kind="rear_end", vehicle_id=plan_i.vehicle_id, other_id=leader.vehicle_id,
                margin=margin, time=t_min,
            ))
    return out
