"""Exception hierarchy shared by every module of the package."""


class ManifoldMLSError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(ManifoldMLSError, ValueError):
    pass


class RankDeficient(ManifoldMLSError, ValueError):
    pass


class EmptyInput(ManifoldMLSError, ValueError):
    pass


class NonFiniteInput(ManifoldMLSError, ValueError):
    pass


# -- synthetic manifolds ---------------------------------------------------

class OutsideReach(ManifoldMLSError, ValueError):
    """The point has no unique nearest point on the manifold."""


class SigmaExceedsReach(ManifoldMLSError, ValueError):
    pass


class BoundingBoxFailure(ManifoldMLSError, RuntimeError):
    pass


# -- estimation --------------------------------------------------------------

class EstimatorError(ManifoldMLSError):
    """Raised when an estimation step cannot produce a result.

    ``cause`` is a short machine-readable code used in traces and reports.
    """

    cause = "estimator_error"


class EmptyROI(EstimatorError):
    cause = "empty_roi"


class DegenerateROI(EstimatorError):
    cause = "degenerate_roi"


class InsufficientSamples(EstimatorError):
    cause = "insufficient_samples"


class IllConditioned(EstimatorError):
    cause = "ill_conditioned"


class NoConvergence(EstimatorError):
    cause = "no_convergence"


class InvalidDomain(ManifoldMLSError, ValueError):
    pass


class ZeroDirection(EstimatorError):
    cause = "zero_direction"


class ProjectionFailed(EstimatorError):
    cause = "projection_failed"

    def __init__(self, step, reason=""):
        self.step = step
        self.reason = reason
        super().__init__(f"projection failed at step {step}: {reason}")


# -- file I/O ----------------------------------------------------------------

class DataError(ManifoldMLSError):
    """Malformed input data (maps to CLI exit code 2)."""


class ParseError(DataError, ValueError):
    def __init__(self, line, message=""):
        self.line = line
        super().__init__(f"line {line}: {message}" if message else f"line {line}: parse error")


class InconsistentWidth(DataError, ValueError):
    def __init__(self, line, expected, got):
        self.line = line
        self.expected = expected
        self.got = got
        super().__init__(f"line {line}: expected {expected} values, got {got}")


class IoError(DataError, OSError):
    pass
