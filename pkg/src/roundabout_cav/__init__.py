"""Energy-optimal, safety-constrained scheduling of connected automated
vehicles through a multi-lane roundabout."""

from importlib import resources

from .errors import (
    ContractViolationError,
    DomainError,
    InfeasibleEntryError,
    InfeasibleScheduleError,
    InvalidArgumentError,
    ProtocolError,
    RoundaboutError,
)
from .primitive import (
    Binding,
    ExitTimeWindow,
    PrimitiveCoefficients,
    VehicleParams,
    accel,
    build_primitive,
    constant_speed_time,
    exit_time_window,
    inverse_position,
    position,
    speed,
)
from .safety import (
    PathGeometry,
    SafetyViolation,
    TrajectoryPlan,
    check_lateral,
    check_plan,
    conflict_set,
    node_crossing_time,
    rear_end_margin,
)
from .scheduler import Arrival, CoordinatorDb, ScheduleOutcome, register_arrival, release_exited, solve_exit_time
from .simulator import Metrics, ScenarioSpec, SimResult, compute_metrics, run
from .scenario_io import ScenarioError, export_results, load_scenario, parse_scenario, serialize_scenario

__version__ = "0.1.0"


def bundled_scenario(name: str) -> str:
    """Text of a scenario shipped with the package, e.g. ``"replica"``."""
    return resources.files(__package__).joinpath("scenarios", f"{name}.yaml").read_text()
