"""Exception hierarchy shared across the toolkit."""


class OutageKitError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatch(OutageKitError, ValueError):
    """Vector/matrix dimensions are inconsistent."""


class NotPositiveDefinite(OutageKitError, ValueError):
    """A covariance matrix is not usable even after regularization."""


class DegenerateVariance(OutageKitError, ValueError):
    """A variance entry is too close to zero to normalize by."""


class InsufficientSamples(OutageKitError, ValueError):
    """Too few samples for the requested estimate."""


class InvalidParameter(OutageKitError, ValueError):
    """A scalar parameter is outside its documented range."""


class InvalidRange(OutageKitError, ValueError):
    """An (lower, upper) range with upper <= lower."""


class MissingMechanism(OutageKitError, ValueError):
    """A noise-aware detector was built without a privacy mechanism."""


class EmptyStream(OutageKitError, ValueError):
    """A detector was run on a zero-length stream."""


class ParseError(OutageKitError, ValueError):
    """A topology or profile file failed validation."""


class DisconnectedGraph(OutageKitError, ValueError):
    """A grid topology is not connected."""


class DuplicateBranch(OutageKitError, ValueError):
    """A grid topology lists the same branch twice."""


class UnknownBranch(OutageKitError, ValueError):
    """An outage names a branch that does not exist."""


class DeadIsland(OutageKitError, ValueError):
    """An outage islands a bus that has no DER backing."""


class SingularSystem(OutageKitError, ValueError):
    """The reduced grid Laplacian is numerically singular."""


class InfeasibleMoments(OutageKitError, ValueError):
    """Requested load moments cannot be met by the log-normal family."""


class ConfigError(OutageKitError, ValueError):
    """An experiment configuration is invalid."""
