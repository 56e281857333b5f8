"""Coordinator database and the single-variable exit-time solver.

The coordinator makes no decisions: it stores committed plans.  Each arriving
vehicle reads the plans still inside the control zone, searches its feasible
exit-time window for the smallest horizon whose primitive is safe against all
of them, and commits the result.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .errors import InfeasibleScheduleError, InvalidArgumentError, ProtocolError
from .primitive import ExitTimeWindow, VehicleParams, build_primitive, exit_time_window
from .safety import PathGeometry, TrajectoryPlan, check_plan

log = logging.getLogger(__name__)

GRID_STEP = 0.01
REFINE_TOL = 1e-4
POLICIES = ("error", "delay")


@dataclass(frozen=True)
class Arrival:
    vehicle_id: str
    path_id: str
    entry_time: float
    entry_speed: float


@dataclass(frozen=True)
class ScheduleOutcome:
    plan: TrajectoryPlan
    window: ExitTimeWindow
    chosen_horizon: float
    search_evaluations: int
    requested_entry_time: float

    @property
    def delay(self) -> float:
        return self.plan.entry_time - self.requested_entry_time


def _candidate_plan(arrival: Arrival, geom: PathGeometry, horizon: float) -> TrajectoryPlan:
    coef = build_primitive(geom.zone_length, arrival.entry_speed, horizon)
    return TrajectoryPlan(arrival.vehicle_id, arrival.path_id, arrival.entry_time, coef)


def solve_exit_time(
    arrival: Arrival,
    committed: Sequence[TrajectoryPlan],
    geoms: Mapping[str, PathGeometry],
    params: VehicleParams,
    grid_step: float = GRID_STEP,
    refine_tol: float = REFINE_TOL,
    window: Optional[ExitTimeWindow] = None,
) -> tuple:
    """Smallest admissible horizon in the feasible window.

    Scans ``t_lo, t_lo + grid_step, ...`` up to ``t_hi`` and, at the first
    admissible grid point, bisects back towards the preceding inadmissible
    one until the bracket is below ``refine_tol``.  Returns
    ``(horizon, evaluations)``.  Feasible bands narrower than ``grid_step``
    can be stepped over, which only ever makes the answer conservative.
    """
    geom = geoms[arrival.path_id]
    if window is None:
        window = exit_time_window(geom.zone_length, arrival.entry_speed, params)
    if not window.feasible:
        raise InfeasibleScheduleError(
            f"{arrival.vehicle_id}: empty exit-time window", arrival.vehicle_id)

    evaluations = 0

    def violations(h: float) -> list:
        nonlocal evaluations
        evaluations += 1
        return check_plan(_candidate_plan(arrival, geom, h), committed, geoms, params)

    if not violations(window.t_lo):
        return window.t_lo, evaluations

    n_steps = int(math.ceil((window.t_hi - window.t_lo) / grid_step))
    prev = window.t_lo
    last = []
    for k in range(1, n_steps + 1):
        h = min(window.t_lo + k * grid_step, window.t_hi)
        last = violations(h)
        if not last:
            lo, hi = prev, h
            while hi - lo > refine_tol:
                mid = 0.5 * (lo + hi)
                if violations(mid):
                    lo = mid
                else:
                    hi = mid
            return hi, evaluations
        prev = h
    if n_steps == 0:
        last = violations(window.t_hi)
    raise InfeasibleScheduleError(
        f"{arrival.vehicle_id}: no safe horizon in [{window.t_lo:.6g}, {window.t_hi:.6g}] s",
        arrival.vehicle_id, last,
    )


class CoordinatorDb:
    """Time-ordered store of committed plans (single writer).

    ``active`` are plans still inside the control zone at the latest query
    time; exited plans move to ``archive`` and no longer constrain anyone.
    """

    def __init__(
        self,
        geoms: Mapping[str, PathGeometry],
        params: VehicleParams,
        grid_step: float = GRID_STEP,
        refine_tol: float = REFINE_TOL,
        infeasibility_policy: str = "error",
        delay_step: float = 0.1,
        max_delay: float = 60.0,
    ):
        if infeasibility_policy not in POLICIES:
            raise InvalidArgumentError(f"unknown infeasibility policy {infeasibility_policy!r}")
        if not grid_step > 0 or not refine_tol > 0:
            raise InvalidArgumentError("grid_step and refine_tol must be positive")
        if infeasibility_policy == "delay" and not (delay_step > 0 and max_delay >= 0):
            raise InvalidArgumentError("delay policy needs delay_step > 0 and max_delay >= 0")
        self.geoms = dict(geoms)
        self.params = params
        self.grid_step = grid_step
        self.refine_tol = refine_tol
        self.infeasibility_policy = infeasibility_policy
        self.delay_step = delay_step
        self.max_delay = max_delay
        self.active = []
        self.archive = []
        self.clock = -math.inf

    def snapshot(self) -> tuple:
        return tuple(self.active)

    @property
    def committed(self) -> list:
        """Every plan ever committed, in commit order."""
        return sorted(self.archive + self.active, key=lambda p: p.entry_time)

    def release_exited(self, now: float) -> int:
        keep, gone = [], []
        for plan in self.active:
            (gone if plan.exit_time <= now else keep).append(plan)
        self.active = keep
        self.archive.extend(gone)
        return len(gone)

    def register_arrival(self, arrival: Arrival) -> ScheduleOutcome:
        if arrival.path_id not in self.geoms:
            raise InvalidArgumentError(f"unknown path {arrival.path_id!r}")
        if not (math.isfinite(arrival.entry_time) and arrival.entry_time >= 0):
            raise InvalidArgumentError(f"{arrival.vehicle_id}: entry time must be finite and >= 0")
        requested = arrival.entry_time
        if requested < self.clock:
            if self.infeasibility_policy != "delay":
                raise ProtocolError(
                    f"{arrival.vehicle_id}: arrival at {requested!r} precedes coordinator "
                    f"clock {self.clock!r}"
                )
            # held behind a vehicle that was itself delayed at the boundary
            arrival = Arrival(arrival.vehicle_id, arrival.path_id, self.clock, arrival.entry_speed)
        self.release_exited(arrival.entry_time)
        if any(p.vehicle_id == arrival.vehicle_id for p in self.active):
            raise ProtocolError(f"{arrival.vehicle_id} already has a plan in the control zone")

        geom = self.geoms[arrival.path_id]
        window = exit_time_window(geom.zone_length, arrival.entry_speed, self.params)
        total_evals = 0
        start = arrival.entry_time
        while True:
            try:
                horizon, evals = solve_exit_time(
                    arrival, self.snapshot(), self.geoms, self.params,
                    self.grid_step, self.refine_tol, window,
                )
                total_evals += evals
                break
            except InfeasibleScheduleError:
                if self.infeasibility_policy != "delay":
                    raise
                held = arrival.entry_time - start + self.delay_step
                if held > self.max_delay + 1e-12:
                    raise
                arrival = Arrival(arrival.vehicle_id, arrival.path_id,
                                  start + held, arrival.entry_speed)
                self.release_exited(arrival.entry_time)
                log.debug("holding %s at boundary until %.3f s", arrival.vehicle_id,
                          arrival.entry_time)

        plan = _candidate_plan(arrival, geom, horizon)
        self.active.append(plan)
        self.clock = arrival.entry_time
        return ScheduleOutcome(plan, window, horizon, total_evals, requested)


def register_arrival(db: CoordinatorDb, arrival: Arrival) -> ScheduleOutcome:
    return db.register_arrival(arrival)


def release_exited(db: CoordinatorDb, now: float) -> int:
    return db.release_exited(now)
