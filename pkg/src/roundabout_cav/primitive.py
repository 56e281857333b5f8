"""Energy-optimal cubic motion primitive and its feasible exit-time window.

A vehicle entering a control zone of length ``S`` at speed ``v0`` follows

    p(t) = a t^3 + b t^2 + c t + d,    0 <= t <= t_f

with p(0) = 0, v(0) = v0, p(t_f) = S and u(t_f) = 0.  Those four boundary
conditions pin every coefficient once the horizon ``t_f`` is chosen, so the
whole plan is a one-parameter family in ``t_f``.

Control is linear and vanishes at the horizon, u(t) = 2b (1 - t/t_f), so the
extreme control is always at entry and the extreme speed always at exit.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .errors import (
    ContractViolationError,
    DomainError,
    InfeasibleEntryError,
    InvalidArgumentError,
)

# relative slack when clamping evaluation times that overshoot by rounding
_TIME_SLACK = 1e-12
INVERSE_TOL = 1e-12


@dataclass(frozen=True)
class VehicleParams:
    u_min: float = -0.45
    u_max: float = 0.45
    v_min: float = 0.05
    v_max: float = 0.15
    gamma: float = 0.1
    phi: float = 1.0
    length: float = 0.2
    t_h: float = 1.0

    def __post_init__(self):
        checks = [
            (self.u_min < 0, "u_min must be negative"),
            (self.u_max > 0, "u_max must be positive"),
            (self.v_min > 0, "v_min must be positive"),
            (self.v_min <= self.v_max, "v_min must not exceed v_max"),
            (self.gamma >= 0, "gamma must be non-negative"),
            (self.phi >= 0, "phi must be non-negative"),
            (self.length > 0, "length must be positive"),
            (self.t_h > 0, "t_h must be positive"),
        ]
        for name in ("u_min", "u_max", "v_min", "v_max", "gamma", "phi", "length", "t_h"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidArgumentError(f"{name} must be finite")
        for ok, msg in checks:
            if not ok:
                raise InvalidArgumentError(msg)


@dataclass(frozen=True)
class PrimitiveCoefficients:
    a: float
    b: float
    c: float
    d: float
    horizon: float
    zone_length: float
    entry_speed: float

    def _clamp(self, t: float) -> float:
        slack = _TIME_SLACK * self.horizon
        if not (-slack <= t <= self.horizon + slack) or math.isnan(t):
            raise DomainError(f"t={t!r} outside [0, {self.horizon!r}]")
        return min(max(t, 0.0), self.horizon)

    @property
    def exit_speed(self) -> float:
        return self.c + self.b * self.horizon

    @property
    def entry_control(self) -> float:
        return 2.0 * self.b


class Binding(str, enum.Enum):
    CONTROL_BOUND = "control_bound"
    SPEED_BOUND = "speed_bound"
    NO_REAL_ROOT = "no_real_root"


@dataclass(frozen=True)
class ExitTimeWindow:
    t_lo: float
    t_hi: float
    binding_lo: Binding
    binding_hi: Binding

    @property
    def feasible(self) -> bool:
        return self.t_lo <= self.t_hi

    def __contains__(self, t: float) -> bool:
        return self.t_lo <= t <= self.t_hi


def _require_positive(**values: float) -> None:
    for name, value in values.items():
        if not (math.isfinite(value) and value > 0):
            raise InvalidArgumentError(f"{name} must be positive and finite, got {value!r}")


def build_primitive(zone_length: float, entry_speed: float, horizon: float) -> PrimitiveCoefficients:
    """Coefficients of the unconstrained optimal cubic reaching ``zone_length`` at ``horizon``."""
    _require_positive(zone_length=zone_length, entry_speed=entry_speed, horizon=horizon)
    b = 3.0 * (zone_length - entry_speed * horizon) / (2.0 * horizon * horizon)
    a = -b / (3.0 * horizon)
    return PrimitiveCoefficients(
        a=a, b=b, c=entry_speed, d=0.0,
        horizon=horizon, zone_length=zone_length, entry_speed=entry_speed,
    )


def position(coef: PrimitiveCoefficients, t: float) -> float:
    t = coef._clamp(t)
    return ((coef.a * t + coef.b) * t + coef.c) * t + coef.d


def speed(coef: PrimitiveCoefficients, t: float) -> float:
    t = coef._clamp(t)
    return (3.0 * coef.a * t + 2.0 * coef.b) * t + coef.c


def accel(coef: PrimitiveCoefficients, t: float) -> float:
    t = coef._clamp(t)
    return 6.0 * coef.a * t + 2.0 * coef.b


def inverse_position(coef: PrimitiveCoefficients, station: float) -> float:
    """Time at which the plan reaches ``station``.

    Safeguarded Newton on the bracket [0, horizon]: a Newton step is taken
    when it stays inside the current bracket, otherwise the bracket is
    bisected.  Speed is monotone along the primitive, so the plan is
    strictly increasing iff both endpoint speeds are non-negative.
    """
    S = coef.zone_length
    if not (0.0 <= station <= S) or math.isnan(station):
        raise DomainError(f"station {station!r} outside [0, {S!r}]")
    if min(coef.c, coef.exit_speed) < 0.0:
        raise ContractViolationError("plan is not monotone: speed changes sign on its horizon")
    if station == 0.0:
        return 0.0
    if station == S:
        return coef.horizon

    a, b, c = coef.a, coef.b, coef.c
    lo, hi = 0.0, coef.horizon
    # constant-speed guess is within the bracket and usually close
    t = min(max(station / max(c, 1e-300), lo), hi) if c > 0 else 0.5 * (lo + hi)
    for _ in range(200):
        f = ((a * t + b) * t + c) * t - station
        if f > 0.0:
            hi = t
        elif f < 0.0:
            lo = t
        else:
            return t
        df = (3.0 * a * t + 2.0 * b) * t + c
        step_ok = False
        if df > 0.0:
            t_new = t - f / df
            if lo < t_new < hi:
                step_ok = True
        if not step_ok:
            t_new = 0.5 * (lo + hi)
        if abs(t_new - t) <= INVERSE_TOL or hi - lo <= INVERSE_TOL:
            return t_new
        t = t_new
    return t


def constant_speed_time(zone_length: float, entry_speed: float) -> float:
    """Horizon at which the primitive degenerates to cruising at ``entry_speed``."""
    _require_positive(zone_length=zone_length, entry_speed=entry_speed)
    return zone_length / entry_speed


def _positive_root_upward(q: float, v0: float, S: float) -> float:
    # positive root of q t^2 + 3 v0 t - 3 S = 0 for q > 0, cancellation-free form
    return 6.0 * S / (math.sqrt(9.0 * v0 * v0 + 12.0 * S * q) + 3.0 * v0)


def exit_time_window(zone_length: float, entry_speed: float, params: VehicleParams) -> ExitTimeWindow:
    """Closed interval of horizons whose primitive respects speed and control limits.

    The lower end is the larger of the horizon where entry control hits
    ``u_max`` and the horizon where exit speed hits ``v_max``; the upper end
    is the smaller of the first horizon where entry control hits ``u_min``
    (absent when that quadratic has no real root) and the horizon where exit
    speed falls to ``v_min``.
    """
    S, v0 = zone_length, entry_speed
    _require_positive(zone_length=S, entry_speed=v0)
    if not (params.v_min <= v0 <= params.v_max):
        raise InfeasibleEntryError(
            f"entry speed {v0!r} outside [{params.v_min!r}, {params.v_max!r}]"
        )

    t_umax = _positive_root_upward(params.u_max, v0, S)
    t_vmax = 3.0 * S / (v0 + 2.0 * params.v_max)
    if t_umax >= t_vmax:
        t_lo, binding_lo = t_umax, Binding.CONTROL_BOUND
    else:
        t_lo, binding_lo = t_vmax, Binding.SPEED_BOUND

    t_vmin = 3.0 * S / (v0 + 2.0 * params.v_min)
    disc = 9.0 * v0 * v0 + 12.0 * S * params.u_min
    if disc < 0.0:
        t_hi, binding_hi = t_vmin, Binding.NO_REAL_ROOT
    else:
        # smaller of the two positive roots of u_min t^2 + 3 v0 t - 3 S = 0
        t_umin = 6.0 * S / (3.0 * v0 + math.sqrt(disc))
        if t_umin <= t_vmin:
            t_hi, binding_hi = t_umin, Binding.CONTROL_BOUND
        else:
            t_hi, binding_hi = t_vmin, Binding.SPEED_BOUND
    return ExitTimeWindow(t_lo=t_lo, t_hi=t_hi, binding_lo=binding_lo, binding_hi=binding_hi)


def is_within_limits(coef: PrimitiveCoefficients, params: VehicleParams, tol: float = 0.0) -> bool:
    """Closed-form bound check using the monotone control envelope."""
    u0, vf = coef.entry_control, coef.exit_speed
    return (
        params.u_min - tol <= u0 <= params.u_max + tol
        and params.v_min - tol <= min(coef.c, vf)
        and max(coef.c, vf) <= params.v_max + tol
    )
