"""Exception hierarchy shared by every pipeline stage.

Each error carries the process exit code the CLI reports when it escapes.
"""

from src.utils.constants import (
    EXIT_CONFIG,
    EXIT_EMPTY_EVALUATION,
    EXIT_INFEASIBLE,
    EXIT_INSUFFICIENT_DATA,
)


class AutocalibError(Exception):
    """Base class for all recoverable pipeline failures."""

    exit_code: int = 1


class ConfigInvalid(AutocalibError):
    exit_code = EXIT_CONFIG


class SchemaError(ConfigInvalid):
    """An interchange file failed validation or carries the wrong version."""


class NonPositiveRadicand(AutocalibError):
    """The vanishing point pair implies an imaginary focal length."""


class DegenerateVPs(AutocalibError):
    """The two vanishing points coincide."""


class HorizonPoint(AutocalibError):
    """An image point lies on the horizon and has no road-plane projection."""


class BehindCamera(AutocalibError):
    """A 3D point projects from behind the camera."""


class MissingScale(AutocalibError):
    """A metric quantity was requested from a calibration without scale."""


class EmptyAccumulator(AutocalibError):
    exit_code = EXIT_INSUFFICIENT_DATA


class AllMasked(AutocalibError):
    """Every accumulator cell was rejected by the search mask."""

    exit_code = EXIT_INFEASIBLE


class DegeneratePatch(AutocalibError):
    """An edgelet patch carries no gradient energy."""


class InsufficientData(AutocalibError):
    exit_code = EXIT_INSUFFICIENT_DATA


class DegenerateHull(AutocalibError):
    """A foreground hull is collinear or has fewer than three vertices."""


class TangentFailure(AutocalibError):
    """A vanishing point lies inside the hull so no tangent lines exist."""


class NoModelsMatched(AutocalibError):
    exit_code = EXIT_INSUFFICIENT_DATA


class EmptySamples(AutocalibError):
    exit_code = EXIT_INSUFFICIENT_DATA


class DegenerateFit(AutocalibError):
    """Scale regression input has no spread in the estimates."""


class TooShortTrack(AutocalibError):
    """A track has fewer than tau + 1 reference points."""


class ParallelLines(AutocalibError):
    """Least-squares intersection of a rank-deficient line set."""


class EmptyFeasibleGrid(AutocalibError):
    exit_code = EXIT_INFEASIBLE


class EmptyMatches(AutocalibError):
    exit_code = EXIT_EMPTY_EVALUATION


class EmptyMarkings(AutocalibError):
    exit_code = EXIT_EMPTY_EVALUATION
