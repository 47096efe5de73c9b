"""Exception types shared across the package.

Plain ValueError/TypeError are used for malformed call arguments; the classes
here mark domain-level failures so callers (and the CLI) can map them to exit
codes without string matching.
"""


class SwitchSdeError(Exception):
    """Base class for all package-specific errors."""


class SpecError(SwitchSdeError):
    """A measure, rate matrix, or model specification violates its contract."""


class DataError(SwitchSdeError):
    """Input data is structurally invalid (negative increments, misaligned grids, ...)."""


class NumericError(SwitchSdeError):
    """A computation left the trusted numeric range (overflow, non-finite state)."""


class UnsupportedConfigError(SwitchSdeError):
    """The requested combination of options is outside what this engine supports."""


class ConfigError(SwitchSdeError):
    """A run configuration file is malformed or inconsistent."""
