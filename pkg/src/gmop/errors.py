"""Exception types shared across the package."""


class GmopError(Exception):
    """Base class for package-specific failures."""


class InvalidParameterError(GmopError, ValueError):
    """A scalar or structural parameter is outside its documented domain."""


class GridError(GmopError):
    """A quadrature grid is too narrow or too coarse for a reliable answer."""


class InstabilityError(GmopError):
    """A requested prediction requires a spectral radius below one."""


class NumericalError(GmopError):
    """A linear solve or similar kernel produced an unusable result."""


class ConfigError(GmopError, ValueError):
    """A configuration document failed validation.

    The message names the offending field by its dotted path.
    """
