"""Exception taxonomy shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or incompatible artifact combination."""


class FormatError(ValueError):
    """Malformed or incompatible binary file."""


class DivergenceError(RuntimeError):
    """Numerical blow-up (NaN/Inf) during time stepping or training."""
