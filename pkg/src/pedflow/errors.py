"""Exception hierarchy.

Anything raised on bad *input data* (files, scenarios, trajectories,
checkpoints) derives from DataError so the CLI can map it to exit code 2.
Programming errors stay ValueError/TypeError and map to exit code 3.
"""


class PedflowError(Exception):
    """Base class for package errors."""


class DataError(PedflowError):
    """Invalid input data or file content."""


class ScenarioError(DataError):
    """Scenario file fails schema or invariant checks."""


class RasterMissing(ScenarioError):
    """Operation needs an environment raster and none was given."""


class CalibrationError(DataError):
    """Camera calibration cannot proceed."""


class TooFewPoints(CalibrationError):
    pass


class DegenerateConfiguration(CalibrationError):
    pass


class PointAtInfinity(PedflowError):
    """Projection denominator vanished."""


class SingularA(PedflowError):
    """Pixel-to-plane system is singular for this matrix/height."""


class TrajectoryError(DataError):
    """Trajectory data violates its invariants."""


class RouteMismatch(TrajectoryError):
    """Trajectory cannot be labeled against the given route."""


class RateTooLow(TrajectoryError):
    """Recording rate below the 5 FPS target."""


class InsufficientHistory(TrajectoryError):
    """Not enough records to build a sample."""


class NoTransitions(TrajectoryError):
    """Dataset has no edge-transition samples to balance against."""


class CoincidentAgents(PedflowError):
    """Two agents share a position and no rng was supplied to break the tie."""


class CheckpointError(DataError):
    """Model checkpoint unreadable or from an incompatible version."""


class EmptyDataset(DataError):
    """No samples to train or evaluate on."""


class ShapeMismatch(PedflowError, ValueError):
    """Batch tensors disagree with the model configuration."""


class ModelScenarioMismatch(DataError):
    """Checkpoint was trained against a different scenario geometry."""


class NonFiniteLoss(PedflowError):
    """Training loss became NaN or infinite."""


class EmptyRegion(DataError):
    """Measurement region is degenerate."""


class LengthMismatch(PedflowError):
    """Series passed to a pairwise metric have different lengths."""


class ParseError(DataError):
    """Series or artifact file does not parse."""


class UsageError(PedflowError):
    """Bad command-line usage; maps to exit code 1."""
