"""Exception types raised across the package."""


class VesselEmpcError(Exception):
    """Base class for package errors."""


class DomainError(VesselEmpcError, ValueError):
    """A curve parameter or argument is outside its valid domain."""


class DegenerateTangent(VesselEmpcError, ValueError):
    """A Bezier hodograph vanishes where a tangent is required."""


class DegenerateInput(VesselEmpcError, ValueError):
    """Coincident points make a geometric construction undefined."""


class NonpositiveDuration(VesselEmpcError, ValueError):
    """A segment duration is zero or negative."""


class EmptyEnvironment(VesselEmpcError, ValueError):
    """The environment bounds have zero area."""


class Disconnected(VesselEmpcError):
    """Start and goal are not connected in the roadmap."""


class NoFeasiblePoint(VesselEmpcError):
    """Every candidate control point produces a colliding hull."""


class DimensionMismatch(VesselEmpcError, ValueError):
    """Horizon length and reference/sample counts disagree."""


class ReferenceExpired(VesselEmpcError):
    """A reference is evaluated outside the time span it covers."""


class SpliceMismatch(VesselEmpcError):
    """Two planned motions do not join continuously."""


class SolveFailure(VesselEmpcError):
    """The NLP solver failed to produce a feasible iterate.

    Attributes
    ----------
    reason : str
        One of ``"MaxIterations"``, ``"Infeasible"``, ``"NumericError"``.
    best : object
        Best iterate found (solver-specific), may be None.
    residuals : dict
        Residual norms at ``best``.
    """

    def __init__(self, reason, best=None, residuals=None):
        super().__init__(f"{reason}: {residuals}")
        self.reason = reason
        self.best = best
        self.residuals = residuals or {}


class ParseError(VesselEmpcError):
    """A scenario file is not well-formed structured text."""


class ScenarioValidationError(VesselEmpcError, ValueError):
    """A scenario violates the schema; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
