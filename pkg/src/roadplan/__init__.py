"""Reference-line smoothing, Frenet lateral planning, LQG cruise control and
front-axle steering for structured roads, with a closed-loop simulator."""

from .errors import NoFeasibleTrajectory, ParseError, RoadplanError
from .geometry import FrenetState, PathPoint, Point2, ReferenceLine
from .lateral_planner import CostWeights, SamplingGrid, plan
from .scenario import load_scenario, load_shipped, parse_scenario
from .sim import Scenario, metrics, run

__version__ = "0.1.0"

__all__ = [
    "CostWeights",
    "FrenetState",
    "NoFeasibleTrajectory",
    "ParseError",
    "PathPoint",
    "Point2",
    "ReferenceLine",
    "RoadplanError",
    "SamplingGrid",
    "Scenario",
    "load_scenario",
    "load_shipped",
    "metrics",
    "parse_scenario",
    "plan",
    "run",
]
