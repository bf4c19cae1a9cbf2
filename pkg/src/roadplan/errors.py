"""Exception hierarchy shared by every stage of the pipeline."""


class RoadplanError(Exception):
    """Base class for all errors raised by this package."""


# geometry
class EmptyPath(RoadplanError, ValueError):
    pass


class PointOutOfRange(RoadplanError, ValueError):
    pass


class StationOutOfRange(RoadplanError, ValueError):
    pass


class CurvatureSingularity(RoadplanError, ValueError):
    pass


class TooFewPoints(RoadplanError, ValueError):
    pass


class DegenerateSpacing(RoadplanError, ValueError):
    pass


# spline / bezier
class DuplicateWaypoint(RoadplanError, ValueError):
    pass


class ParameterOutOfRange(RoadplanError, ValueError):
    pass


class StepTooLarge(RoadplanError, ValueError):
    pass


class DegenerateLeg(RoadplanError, ValueError):
    pass


class DistanceExceedsLeg(RoadplanError, ValueError):
    pass


class CornerOffLine(RoadplanError, ValueError):
    pass


class OverlappingCorners(RoadplanError, ValueError):
    pass


# lateral planner
class ZeroLength(RoadplanError, ValueError):
    pass


class EmptyGrid(RoadplanError, ValueError):
    pass


class TooFewSamples(RoadplanError, ValueError):
    pass


class NonpositiveSpeed(RoadplanError, ValueError):
    pass


class IndexNotBuilt(RoadplanError, RuntimeError):
    pass


class NoFeasibleTrajectory(RoadplanError):
    """Every candidate in the sampling grid collides with an obstacle."""


# acc / stanley
class NegativeSpeed(RoadplanError, ValueError):
    pass


class RiccatiDivergence(RoadplanError, ArithmeticError):
    pass


class UnstabilizablePair(RoadplanError, ValueError):
    pass


class SingularInnovationCovariance(RoadplanError, ArithmeticError):
    pass


# sim / cli
class InvalidStep(RoadplanError, ValueError):
    pass


class EmptyTrace(RoadplanError, ValueError):
    pass


class ParseError(RoadplanError, ValueError):
    """Scenario file could not be parsed; carries the 1-based line/column."""

    def __init__(self, message, line=None, column=None, section=None):
        self.line = line
        self.column = column
        self.section = section
        where = ""
        if line is not None:
            where = f" (line {line}, column {column})"
        super().__init__(f"{message}{where}")
