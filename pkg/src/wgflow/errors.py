"""Exception types shared across the package."""


class WgflowError(Exception):
    """Base class for package-specific failures."""


class ConfigError(WgflowError):
    """Invalid experiment configuration."""


class NumericsError(WgflowError):
    """Numerical failure (NaN/Inf state, unstable step, ...)."""


class ConvergenceError(NumericsError):
    """Iterative solver failed to reach its tolerance."""


class GridMismatchError(WgflowError):
    """Two grid densities do not share domain and resolution."""
