"""Exception hierarchy shared by every module of the package."""


class VecBernError(Exception):
    """Base class for all package errors."""


class DomainError(VecBernError, ValueError):
    """A ball (or its bounding cube) does not fit strictly inside the grid box."""


class ResolutionError(VecBernError, ValueError):
    """A radius is too small relative to the grid spacing."""


class NoBoundaryError(VecBernError, ValueError):
    """No free-boundary point lies in the requested ball."""


class NotFlatError(VecBernError, ValueError):
    """The free boundary is not flat enough for a one-sided slope reading."""


class NotLinearError(VecBernError, ValueError):
    """A blow-up limit is too far from an affine map to have a rank."""


class ConvergenceError(VecBernError, RuntimeError):
    """An iterative solve hit its iteration cap before reaching tolerance."""


class ConfigError(VecBernError, ValueError):
    """A configuration file or mapping is malformed."""
