"""Exception types shared across the package, mapped to CLI exit codes."""


class ConfigError(ValueError):
    """Bad or inconsistent configuration (CLI exit code 2)."""


class DataError(ValueError):
    """Missing, malformed, or invalid input data (CLI exit code 3)."""


class NumericalError(ArithmeticError):
    """Numerical failure such as a non-finite state variable (CLI exit code 4)."""
